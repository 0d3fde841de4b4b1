//! Reverse-mode differentiation over [`Tensor2`] values.
//!
//! Every op evaluates eagerly and, when any input needs a gradient, records a
//! backward closure. [`Tape::backward`] walks the records in reverse from a
//! `1 × 1` loss. A tape is built for one forward pass and then dropped.

use std::ops::Range;

use super::kernels;
use super::param::{ParamId, ParamStore};
use super::Tensor2;
use crate::error::{KomeiError, Result};

/// Node handle on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Inputs handed to a backward closure.
pub struct BackwardCtx<'a> {
    pub grad: &'a Tensor2,
    pub output: &'a Tensor2,
    pub inputs: Vec<&'a Tensor2>,
}

type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor2>>>;

struct Node {
    value: Tensor2,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients of one scalar with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor2> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).get(0, 0)
    }

    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Vec::new(), false, None)
    }

    /// Leaf holding a copy of a stored parameter. Gradients flow back to the
    /// store only for trainable parameters.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.value.clone(), Vec::new(), p.trainable, None);
        self.params.push((id, v));
        v
    }

    fn push(&mut self, value: Tensor2, parents: Vec<usize>, requires_grad: bool, backward: Option<BackwardFn>) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor2, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, parents.iter().map(|p| p.0).collect(), requires_grad, Some(backward))
    }

    /// Reverse sweep from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(KomeiError::dim("backward", (r, c), (1, 1)));
        }
        if !self.scalar(loss).is_finite() {
            return Err(KomeiError::NonFinite(format!("loss = {}", self.scalar(loss))));
        }
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                grad: &g,
                output: &node.value,
                inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds the gradient of every parameter leaf into the store. Frozen
    /// parameters are skipped and keep a zero gradient.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for &(id, v) in &self.params {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            if let Some(g) = grads.wrt(v) {
                p.grad.add_assign(g);
            }
        }
    }

    // ---- ops ---------------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.record(
            out,
            &[a, b],
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
                vec![
                    Some(ctx.grad.matmul_t(b).expect("matmul grad a")),
                    Some(a.t_matmul(ctx.grad).expect("matmul grad b")),
                ]
            }),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.record(out, &[a], Box::new(|ctx| vec![Some(ctx.grad.transpose())]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), "add", |x, y| x + y)?;
        Ok(self.record(
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_with(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.record(
            out,
            &[a, b],
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
                vec![
                    Some(ctx.grad.zip_with(b, "mul", |g, y| g * y).expect("same shape")),
                    Some(ctx.grad.zip_with(a, "mul", |g, x| g * x).expect("same shape")),
                ]
            }),
        ))
    }

    /// Adds a `1 × cols` row (or a `1 × 1` scalar) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        let out = kernels::add_row(x, r)?;
        Ok(self.record(
            out,
            &[a, row],
            Box::new(|ctx| {
                let r = ctx.inputs[1];
                let row_grad = if r.cols() == 1 {
                    Tensor2::from_raw(1, 1, vec![ctx.grad.sum()])
                } else {
                    ctx.grad.sum_rows()
                };
                vec![Some(ctx.grad.clone()), Some(row_grad)]
            }),
        ))
    }

    /// Multiplies every row of `a` elementwise by a `1 × cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(KomeiError::dim("mul_row", x.shape(), r.shape()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, w) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o *= w;
            }
        }
        Ok(self.record(
            out,
            &[a, row],
            Box::new(|ctx| {
                let (x, r) = (ctx.inputs[0], ctx.inputs[1]);
                let mut gx = ctx.grad.clone();
                let mut gr = vec![0.0; r.cols()];
                for i in 0..gx.rows() {
                    let xr = x.row(i);
                    for (j, g) in gx.row_mut(i).iter_mut().enumerate() {
                        gr[j] += *g * xr[j];
                        *g *= r.data()[j];
                    }
                }
                vec![Some(gx), Some(Tensor2::from_raw(1, r.cols(), gr))]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.record(out, &[a], Box::new(move |ctx| vec![Some(ctx.grad.scale(c))]))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.1 != ws.0 {
            return Err(KomeiError::dim("linear", xs, ws));
        }
        if bs != (1, ws.1) {
            return Err(KomeiError::dim("linear bias", ws, bs));
        }
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = kernels::relu(self.value(a));
        self.record(
            out,
            &[a],
            Box::new(|ctx| {
                let x = ctx.inputs[0];
                vec![Some(
                    ctx.grad
                        .zip_with(x, "relu", |g, v| if v > 0.0 { g } else { 0.0 })
                        .expect("same shape"),
                )]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(kernels::sigmoid);
        self.record(
            out,
            &[a],
            Box::new(|ctx| {
                vec![Some(
                    ctx.grad
                        .zip_with(ctx.output, "sigmoid", |g, s| g * s * (1.0 - s))
                        .expect("same shape"),
                )]
            }),
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(a))?;
        Ok(self.record(
            out,
            &[a],
            Box::new(|ctx| {
                let p = ctx.output;
                let mut gx = Tensor2::zeros(p.rows(), p.cols());
                for i in 0..p.rows() {
                    let (pr, gr) = (p.row(i), ctx.grad.row(i));
                    let inner: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                        *o = pr[j] * (gr[j] - inner);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let out = kernels::log_softmax_rows(self.value(a))?;
        Ok(self.record(
            out,
            &[a],
            Box::new(|ctx| {
                let ls = ctx.output;
                let mut gx = Tensor2::zeros(ls.rows(), ls.cols());
                for i in 0..ls.rows() {
                    let gr = ctx.grad.row(i);
                    let total: f64 = gr.iter().sum();
                    for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                        *o = gr[j] - ls.get(i, j).exp() * total;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Row-wise layer normalisation with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(KomeiError::Domain(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let out = kernels::layer_norm(xv, gv, bv, eps)?;
        Ok(self.record(
            out,
            &[x, gain, bias],
            Box::new(move |ctx| {
                let (x, gain) = (ctx.inputs[0], ctx.inputs[1]);
                let (n, d) = x.shape();
                let mut gx = Tensor2::zeros(n, d);
                let mut g_gain = vec![0.0; d];
                let mut g_bias = vec![0.0; d];
                for i in 0..n {
                    let (xhat, inv_std) = kernels::standardize(x.row(i), eps);
                    let gr = ctx.grad.row(i);
                    let mut dxhat = vec![0.0; d];
                    for j in 0..d {
                        g_gain[j] += gr[j] * xhat[j];
                        g_bias[j] += gr[j];
                        dxhat[j] = gr[j] * gain.data()[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dx = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                        *o = inv_std * (dxhat[j] - mean_d - xhat[j] * mean_dx);
                    }
                }
                vec![
                    Some(gx),
                    Some(Tensor2::from_raw(1, d, g_gain)),
                    Some(Tensor2::from_raw(1, d, g_bias)),
                ]
            }),
        ))
    }

    /// Scales each row to unit L2 norm. Zero rows stay zero (and pass no
    /// gradient); the second return value counts them.
    pub fn l2_normalize_rows(&mut self, a: Var) -> (Var, usize) {
        let x = self.value(a);
        let mut out = x.clone();
        let mut zero_rows = 0;
        for i in 0..out.rows() {
            let norm = kernels::norm(out.row(i));
            if norm == 0.0 {
                zero_rows += 1;
                continue;
            }
            out.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        }
        let v = self.record(
            out,
            &[a],
            Box::new(|ctx| {
                let (x, y) = (ctx.inputs[0], ctx.output);
                let mut gx = Tensor2::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let norm = kernels::norm(x.row(i));
                    if norm == 0.0 {
                        continue;
                    }
                    let (yr, gr) = (y.row(i), ctx.grad.row(i));
                    let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (j, o) in gx.row_mut(i).iter_mut().enumerate() {
                        *o = (gr[j] - yr[j] * proj) / norm;
                    }
                }
                vec![Some(gx)]
            }),
        );
        (v, zero_rows)
    }

    /// `Σ weights ⊙ a` as a `1 × 1` node; `weights` is a constant.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor2) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != weights.shape() {
            return Err(KomeiError::dim("weighted_sum", x.shape(), weights.shape()));
        }
        let s: f64 = x.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok(self.record(
            Tensor2::from_raw(1, 1, vec![s]),
            &[a],
            Box::new(move |ctx| vec![Some(weights.scale(ctx.grad.get(0, 0)))]),
        ))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(KomeiError::dim("concat_cols", x.shape(), y.shape()));
        }
        let (ca, cb) = (x.cols(), y.cols());
        let mut data = Vec::with_capacity(x.rows() * (ca + cb));
        for i in 0..x.rows() {
            data.extend_from_slice(x.row(i));
            data.extend_from_slice(y.row(i));
        }
        let out = Tensor2::from_raw(x.rows(), ca + cb, data);
        Ok(self.record(
            out,
            &[a, b],
            Box::new(move |ctx| {
                let n = ctx.grad.rows();
                let mut ga = Vec::with_capacity(n * ca);
                let mut gb = Vec::with_capacity(n * cb);
                for i in 0..n {
                    let r = ctx.grad.row(i);
                    ga.extend_from_slice(&r[..ca]);
                    gb.extend_from_slice(&r[ca..]);
                }
                vec![Some(Tensor2::from_raw(n, ca, ga)), Some(Tensor2::from_raw(n, cb, gb))]
            }),
        ))
    }

    /// Rows of `table` selected by `ids` (with repetition).
    pub fn gather_rows(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(KomeiError::Domain(format!(
                "row index {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let out = t.select_rows(&ids);
        Ok(self.record(
            out,
            &[table],
            Box::new(move |ctx| {
                let t = ctx.inputs[0];
                let mut g = Tensor2::zeros(t.rows(), t.cols());
                for (k, &i) in ids.iter().enumerate() {
                    for (o, v) in g.row_mut(i).iter_mut().zip(ctx.grad.row(k)) {
                        *o += v;
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Mean of each row segment; one output row per segment.
    pub fn segment_mean(&mut self, x: Var, segments: Vec<Range<usize>>) -> Result<Var> {
        let out = kernels::segment_mean(self.value(x), &segments)?;
        Ok(self.record(
            out,
            &[x],
            Box::new(move |ctx| {
                let x = ctx.inputs[0];
                let mut g = Tensor2::zeros(x.rows(), x.cols());
                for (s, seg) in segments.iter().enumerate() {
                    let inv = 1.0 / seg.len() as f64;
                    for r in seg.clone() {
                        for (o, v) in g.row_mut(r).iter_mut().zip(ctx.grad.row(s)) {
                            *o += v * inv;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Scaled dot-product attention where query row `i` attends only to the
    /// key/value rows in `segments[i]`.
    pub fn segment_attention(&mut self, q: Var, k: Var, v: Var, segments: Vec<Range<usize>>) -> Result<Var> {
        let (out, weights) = kernels::segment_attention(self.value(q), self.value(k), self.value(v), &segments)?;
        Ok(self.record(
            out,
            &[q, k, v],
            Box::new(move |ctx| {
                let (q, k, v) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
                let d = q.cols();
                let scale = 1.0 / (d as f64).sqrt();
                let mut gq = Tensor2::zeros(q.rows(), d);
                let mut gk = Tensor2::zeros(k.rows(), k.cols());
                let mut gv = Tensor2::zeros(v.rows(), v.cols());
                for (i, seg) in segments.iter().enumerate() {
                    let p = &weights[i];
                    let go = ctx.grad.row(i);
                    let dp: Vec<f64> = seg.clone().map(|r| kernels::dot(go, v.row(r))).collect();
                    let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    for (j, r) in seg.clone().enumerate() {
                        let ds = p[j] * (dp[j] - inner) * scale;
                        for (o, g) in gv.row_mut(r).iter_mut().zip(go) {
                            *o += p[j] * g;
                        }
                        for (o, kv) in gq.row_mut(i).iter_mut().zip(k.row(r)) {
                            *o += ds * kv;
                        }
                        for (o, qv) in gk.row_mut(r).iter_mut().zip(q.row(i)) {
                            *o += ds * qv;
                        }
                    }
                }
                vec![Some(gq), Some(gk), Some(gv)]
            }),
        ))
    }

    /// Full attention: every query row attends to every key row.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let n_keys = self.shape(k).0;
        let segments = vec![0..n_keys; self.shape(q).0];
        self.segment_attention(q, k, v, segments)
    }
}
