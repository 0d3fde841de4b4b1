//! Dense `f64` matrices, reverse-mode gradients, AdamW and a
//! finite-difference gradient checker.

mod gradcheck;
pub(crate) mod kernels;
mod optim;
pub mod param;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{AdamW, AdamWConfig, Schedule};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{BackwardCtx, Gradients, Tape, Var};
pub use tensor::Tensor2;

use crate::error::{KomeiError, Result};

/// `x·W + b` for every row of `x`.
pub fn linear(x: &Tensor2, w: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if x.cols() != w.rows() {
        return Err(KomeiError::dim("linear", x.shape(), w.shape()));
    }
    if b.shape() != (1, w.cols()) {
        return Err(KomeiError::dim("linear bias", w.shape(), b.shape()));
    }
    kernels::add_row(&x.matmul(w)?, b)
}

pub fn relu(x: &Tensor2) -> Tensor2 {
    kernels::relu(x)
}

pub fn sigmoid(x: &Tensor2) -> Tensor2 {
    x.map(kernels::sigmoid)
}

pub fn softmax_row(v: &[f64]) -> Result<Vec<f64>> {
    kernels::softmax_slice(v)
}

pub fn softmax_rows(x: &Tensor2) -> Result<Tensor2> {
    kernels::softmax_rows(x)
}

pub fn layer_norm(x: &Tensor2, gain: &Tensor2, bias: &Tensor2, eps: f64) -> Result<Tensor2> {
    if eps <= 0.0 {
        return Err(KomeiError::Domain(format!("layer_norm eps must be > 0, got {eps}")));
    }
    kernels::layer_norm(x, gain, bias, eps)
}

/// `softmax(QKᵀ/√d)·V`.
pub fn attention(q: &Tensor2, k: &Tensor2, v: &Tensor2) -> Result<Tensor2> {
    if k.rows() == 0 {
        return Err(KomeiError::EmptyEvidence("attention over zero keys".into()));
    }
    let segments = vec![0..k.rows(); q.rows()];
    kernels::segment_attention(q, k, v, &segments).map(|(out, _)| out)
}
