//! Forward kernels shared by the tape ops and the plain-value API.

use std::ops::Range;

use super::Tensor2;
use crate::error::{KomeiError, Result};

pub(crate) use super::tensor::dot;

#[inline]
pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn relu(x: &Tensor2) -> Tensor2 {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub(crate) fn add_row(x: &Tensor2, r: &Tensor2) -> Result<Tensor2> {
    let broadcast_scalar = r.shape() == (1, 1);
    if r.rows() != 1 || !(broadcast_scalar || r.cols() == x.cols()) {
        return Err(KomeiError::dim("add_row", x.shape(), r.shape()));
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        if broadcast_scalar {
            let b = r.get(0, 0);
            row.iter_mut().for_each(|v| *v += b);
        } else {
            for (v, b) in row.iter_mut().zip(r.data()) {
                *v += b;
            }
        }
    }
    Ok(out)
}

/// Numerically stable softmax of one row (max subtracted first).
pub(crate) fn softmax_slice(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(KomeiError::Domain("softmax of an empty row".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub(crate) fn log_softmax_slice(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(KomeiError::Domain("log-softmax of an empty row".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(v.iter().map(|x| x - lse).collect())
}

pub(crate) fn softmax_rows(x: &Tensor2) -> Result<Tensor2> {
    let mut data = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        data.extend(softmax_slice(x.row(i))?);
    }
    if x.cols() == 0 {
        return Err(KomeiError::Domain("softmax of an empty row".into()));
    }
    Ok(Tensor2::from_raw(x.rows(), x.cols(), data))
}

pub(crate) fn log_softmax_rows(x: &Tensor2) -> Result<Tensor2> {
    if x.cols() == 0 {
        return Err(KomeiError::Domain("log-softmax of an empty row".into()));
    }
    let mut data = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        data.extend(log_softmax_slice(x.row(i))?);
    }
    Ok(Tensor2::from_raw(x.rows(), x.cols(), data))
}

/// Standardised row and `1/sqrt(var + eps)`.
pub(crate) fn standardize(row: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + eps).sqrt();
    (row.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

pub(crate) fn layer_norm(x: &Tensor2, gain: &Tensor2, bias: &Tensor2, eps: f64) -> Result<Tensor2> {
    let d = x.cols();
    if d == 0 {
        return Err(KomeiError::Domain("layer_norm over zero columns".into()));
    }
    if gain.shape() != (1, d) {
        return Err(KomeiError::dim("layer_norm gain", x.shape(), gain.shape()));
    }
    if bias.shape() != (1, d) {
        return Err(KomeiError::dim("layer_norm bias", x.shape(), bias.shape()));
    }
    let mut out = Tensor2::zeros(x.rows(), d);
    for i in 0..x.rows() {
        let (xhat, _) = standardize(x.row(i), eps);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = gain.data()[j] * xhat[j] + bias.data()[j];
        }
    }
    Ok(out)
}

fn check_segments(op: &str, rows: usize, segments: &[Range<usize>]) -> Result<()> {
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(KomeiError::EmptyEvidence(format!("{op}: segment {i} has no rows")));
        }
        if seg.end > rows {
            return Err(KomeiError::Domain(format!(
                "{op}: segment {i} ({seg:?}) exceeds {rows} rows"
            )));
        }
    }
    Ok(())
}

pub(crate) fn segment_mean(x: &Tensor2, segments: &[Range<usize>]) -> Result<Tensor2> {
    check_segments("segment_mean", x.rows(), segments)?;
    let mut out = Tensor2::zeros(segments.len(), x.cols());
    for (s, seg) in segments.iter().enumerate() {
        let inv = 1.0 / seg.len() as f64;
        let o = out.row_mut(s);
        for r in seg.clone() {
            for (a, v) in o.iter_mut().zip(x.row(r)) {
                *a += v;
            }
        }
        o.iter_mut().for_each(|a| *a *= inv);
    }
    Ok(out)
}

/// Returns the attended rows and, per query, the attention weights.
pub(crate) fn segment_attention(
    q: &Tensor2,
    k: &Tensor2,
    v: &Tensor2,
    segments: &[Range<usize>],
) -> Result<(Tensor2, Vec<Vec<f64>>)> {
    if q.cols() != k.cols() || q.cols() == 0 {
        return Err(KomeiError::dim("attention q/k", q.shape(), k.shape()));
    }
    if k.rows() != v.rows() {
        return Err(KomeiError::dim("attention k/v", k.shape(), v.shape()));
    }
    if segments.len() != q.rows() {
        return Err(KomeiError::dim("attention segments", q.shape(), (segments.len(), 1)));
    }
    check_segments("attention", k.rows(), segments)?;
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut out = Tensor2::zeros(q.rows(), v.cols());
    let mut all_weights = Vec::with_capacity(q.rows());
    for (i, seg) in segments.iter().enumerate() {
        let scores: Vec<f64> = seg.clone().map(|r| dot(q.row(i), k.row(r)) * scale).collect();
        let p = softmax_slice(&scores)?;
        let o = out.row_mut(i);
        for (w, r) in p.iter().zip(seg.clone()) {
            for (a, x) in o.iter_mut().zip(v.row(r)) {
                *a += w * x;
            }
        }
        all_weights.push(p);
    }
    Ok((out, all_weights))
}
