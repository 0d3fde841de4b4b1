//! Dynamic feature fusion.
//!
//! Text is the anchor: a contrastive loss aligns text with each evidence
//! modality, text queries attend over the evidence rows, a sigmoid gate
//! attenuates the attended features before a residual add-norm, a
//! self-attention step refines them, and the two branches are concatenated
//! and projected into the fused feature `H`.

use std::ops::Range;

use log::warn;
use rand::Rng;

use crate::error::{KomeiError, Result};
use crate::numerics::param::init;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor2, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentConfig {
    pub tau: f64,
    pub reduction: Reduction,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            reduction: Reduction::Mean,
        }
    }
}

/// `match[i][j] = 1` iff sample `i` and evidence `j` carry the same keyword.
pub fn match_matrix<S: AsRef<str>>(keys: &[S]) -> Tensor2 {
    let b = keys.len();
    let mut m = Tensor2::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            if keys[i].as_ref() == keys[j].as_ref() {
                m.data_mut()[i * b + j] = 1.0;
            }
        }
    }
    m
}

/// In-batch cross-modal contrastive loss over cosine similarities:
/// `−Σ_{i,j matched} log softmax_k(sim(T_i, E_k)/τ)_j`, divided by the number
/// of matched pairs under [`Reduction::Mean`].
pub fn contrastive_align_loss(
    tape: &mut Tape,
    text: Var,
    evidence: Var,
    matches: &Tensor2,
    cfg: AlignmentConfig,
) -> Result<Var> {
    if !(cfg.tau > 0.0) {
        return Err(KomeiError::Config(format!("temperature must be > 0, got {}", cfg.tau)));
    }
    let (ts, es) = (tape.shape(text), tape.shape(evidence));
    if ts != es {
        return Err(KomeiError::dim("contrastive_align_loss", ts, es));
    }
    if matches.shape() != (ts.0, ts.0) {
        return Err(KomeiError::dim("contrastive_align_loss match", (ts.0, ts.0), matches.shape()));
    }
    for i in 0..matches.rows() {
        if !matches.row(i).iter().any(|&m| m != 0.0) {
            return Err(KomeiError::Domain(format!("row {i} of the match matrix has no positive")));
        }
    }
    let (tn, zt) = tape.l2_normalize_rows(text);
    let (en, ze) = tape.l2_normalize_rows(evidence);
    if zt + ze > 0 {
        warn!("{} zero-norm rows in contrastive loss; their similarities are 0", zt + ze);
    }
    let en_t = tape.transpose(en);
    let sim = tape.matmul(tn, en_t)?;
    let logits = tape.scale(sim, 1.0 / cfg.tau);
    let log_p = tape.log_softmax_rows(logits)?;
    let denom = match cfg.reduction {
        Reduction::Mean => matches.sum(),
        Reduction::Sum => 1.0,
    };
    tape.weighted_sum(log_p, matches.scale(-1.0 / denom))
}

/// Plain-value form of [`contrastive_align_loss`].
pub fn contrastive_align_loss_value(
    text: &Tensor2,
    evidence: &Tensor2,
    matches: &Tensor2,
    cfg: AlignmentConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (t, e) = (tape.constant(text.clone()), tape.constant(evidence.clone()));
    let loss = contrastive_align_loss(&mut tape, t, e, matches, cfg)?;
    Ok(tape.scalar(loss))
}

/// Query/key/value maps of one attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl AttentionIds {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, prefix: &str, d_g: usize) -> Result<Self> {
        Ok(Self {
            wq: store.add(format!("{prefix}.wq"), init::glorot(rng, d_g, d_g), true)?,
            wk: store.add(format!("{prefix}.wk"), init::glorot(rng, d_g, d_g), true)?,
            wv: store.add(format!("{prefix}.wv"), init::glorot(rng, d_g, d_g), true)?,
        })
    }
}

/// Gain and bias of an add-norm layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddNormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl AddNormIds {
    pub fn register(store: &mut ParamStore, prefix: &str, d_g: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{prefix}.gain"), Tensor2::filled(1, d_g, 1.0), true)?,
            bias: store.add(format!("{prefix}.bias"), Tensor2::zeros(1, d_g), true)?,
        })
    }
}

/// `layer_norm(x + residual)`.
pub fn add_norm(tape: &mut Tape, store: &ParamStore, an: AddNormIds, x: Var, residual: Var, eps: f64) -> Result<Var> {
    let sum = tape.add(x, residual)?;
    let (g, b) = (tape.param(store, an.gain), tape.param(store, an.bias));
    tape.layer_norm(sum, g, b, eps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateIds {
    pub w_r: ParamId,
    pub b_r: ParamId,
    pub w_g: ParamId,
    pub b_g: ParamId,
}

impl GateIds {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, prefix: &str, d_g: usize) -> Result<Self> {
        Ok(Self {
            w_r: store.add(format!("{prefix}.w_r"), init::glorot(rng, d_g, d_g), true)?,
            b_r: store.add(format!("{prefix}.b_r"), Tensor2::zeros(1, d_g), true)?,
            w_g: store.add(format!("{prefix}.w_g"), init::glorot(rng, d_g, d_g), true)?,
            b_g: store.add(format!("{prefix}.b_g"), Tensor2::zeros(1, d_g), true)?,
        })
    }
}

/// Text-queried attention over each sample's evidence rows.
///
/// `evidence` stacks every sample's rows; `segments[i]` are sample `i`'s.
pub fn cross_modal_attention(
    tape: &mut Tape,
    store: &ParamStore,
    ids: AttentionIds,
    text: Var,
    evidence: Var,
    segments: Vec<Range<usize>>,
) -> Result<Var> {
    let (wq, wk, wv) = (tape.param(store, ids.wq), tape.param(store, ids.wk), tape.param(store, ids.wv));
    let q = tape.matmul(text, wq)?;
    let k = tape.matmul(evidence, wk)?;
    let v = tape.matmul(evidence, wv)?;
    tape.segment_attention(q, k, v, segments)
}

/// `R = ReLU(M·W_R + b_R)`, `g = σ(R·W_G + b_G)`, output `AN(g ⊙ M + M)`.
pub fn gated_unit(
    tape: &mut Tape,
    store: &ParamStore,
    gate: GateIds,
    an: AddNormIds,
    m: Var,
    eps: f64,
) -> Result<Var> {
    let gated = gate_filter(tape, store, gate, m)?;
    add_norm(tape, store, an, gated, m, eps)
}

/// The gate alone: `σ(ReLU(M·W_R + b_R)·W_G + b_G) ⊙ M`.
pub fn gate_filter(tape: &mut Tape, store: &ParamStore, gate: GateIds, m: Var) -> Result<Var> {
    let (w_r, b_r) = (tape.param(store, gate.w_r), tape.param(store, gate.b_r));
    let (w_g, b_g) = (tape.param(store, gate.w_g), tape.param(store, gate.b_g));
    let r = tape.linear(m, w_r, b_r)?;
    let r = tape.relu(r);
    let g = tape.linear(r, w_g, b_g)?;
    let g = tape.sigmoid(g);
    tape.mul(g, m)
}

/// Self-attention over each sample's own (length-1) sequence followed by
/// add-norm. Rows never attend across samples.
pub fn self_attend_refine(
    tape: &mut Tape,
    store: &ParamStore,
    ids: AttentionIds,
    an: AddNormIds,
    m_hat: Var,
    eps: f64,
) -> Result<Var> {
    let n = tape.shape(m_hat).0;
    let (wq, wk, wv) = (tape.param(store, ids.wq), tape.param(store, ids.wk), tape.param(store, ids.wv));
    let q = tape.matmul(m_hat, wq)?;
    let k = tape.matmul(m_hat, wk)?;
    let v = tape.matmul(m_hat, wv)?;
    let attended = tape.segment_attention(q, k, v, (0..n).map(|i| i..i + 1).collect())?;
    add_norm(tape, store, an, attended, m_hat, eps)
}

/// `(M̄_TI ; M̄_TS)·W_H + b_H`. An absent branch contributes a zero block.
pub fn fuse(
    tape: &mut Tape,
    store: &ParamStore,
    ti: Option<Var>,
    ts: Option<Var>,
    w_h: ParamId,
    b_h: ParamId,
) -> Result<Var> {
    let d_g = store.value(b_h).cols();
    let present = ti.or(ts).ok_or_else(|| {
        KomeiError::Config("fusion needs at least one evidence branch; text-only models bypass it".into())
    })?;
    let rows = tape.shape(present).0;
    let ti = ti.unwrap_or_else(|| tape.constant(Tensor2::zeros(rows, d_g)));
    let ts = ts.unwrap_or_else(|| tape.constant(Tensor2::zeros(rows, d_g)));
    let cat = tape.concat_cols(ti, ts)?;
    let (w, b) = (tape.param(store, w_h), tape.param(store, b_h));
    tape.linear(cat, w, b)
}

/// Which stages of the stack are active. Each later stage requires the
/// earlier ones: `sa ⇒ gu ⇒ ca`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackFlags {
    pub gu: bool,
    pub sa: bool,
}

/// Parameters of one evidence branch (text-image or text-speech).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchIds {
    pub ca: AttentionIds,
    pub an_gu: Option<AddNormIds>,
    pub sa: Option<AttentionIds>,
    pub an_sa: Option<AddNormIds>,
}

/// Every trainable weight of the stack. With `share_an` both branches hold
/// the same add-norm ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionParams {
    pub ti: Option<BranchIds>,
    pub ts: Option<BranchIds>,
    pub gate: Option<GateIds>,
    pub w_h: ParamId,
    pub b_h: ParamId,
    pub share_an: bool,
}

/// Evidence for one branch of a batch.
pub struct BranchInput {
    /// Projected evidence rows of every sample, stacked.
    pub evidence: Var,
    pub segments: Vec<Range<usize>>,
}

impl FusionParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        d_g: usize,
        image: bool,
        speech: bool,
        flags: StackFlags,
        share_an: bool,
    ) -> Result<Self> {
        if !image && !speech {
            return Err(KomeiError::Config("fusion stack needs an image or speech branch".into()));
        }
        if flags.sa && !flags.gu {
            return Err(KomeiError::Config("self-attention requires the gated unit".into()));
        }
        let shared_gu = if flags.gu && share_an {
            Some(AddNormIds::register(store, "fusion.an_gu", d_g)?)
        } else {
            None
        };
        let shared_sa = if flags.sa && share_an {
            Some(AddNormIds::register(store, "fusion.an_sa", d_g)?)
        } else {
            None
        };
        let branch = |store: &mut ParamStore, rng: &mut R, name: &str| -> Result<BranchIds> {
            let ca = AttentionIds::register(store, rng, &format!("fusion.{name}.ca"), d_g)?;
            let an_gu = match (flags.gu, shared_gu) {
                (false, _) => None,
                (true, Some(shared)) => Some(shared),
                (true, None) => Some(AddNormIds::register(store, &format!("fusion.{name}.an_gu"), d_g)?),
            };
            let sa = if flags.sa {
                Some(AttentionIds::register(store, rng, &format!("fusion.{name}.sa"), d_g)?)
            } else {
                None
            };
            let an_sa = match (flags.sa, shared_sa) {
                (false, _) => None,
                (true, Some(shared)) => Some(shared),
                (true, None) => Some(AddNormIds::register(store, &format!("fusion.{name}.an_sa"), d_g)?),
            };
            Ok(BranchIds { ca, an_gu, sa, an_sa })
        };
        let ti = if image { Some(branch(store, rng, "ti")?) } else { None };
        let ts = if speech { Some(branch(store, rng, "ts")?) } else { None };
        let gate = if flags.gu {
            Some(GateIds::register(store, rng, "fusion.gu", d_g)?)
        } else {
            None
        };
        Ok(Self {
            ti,
            ts,
            gate,
            w_h: store.add("fusion.w_h", init::glorot(rng, 2 * d_g, d_g), true)?,
            b_h: store.add("fusion.b_h", Tensor2::zeros(1, d_g), true)?,
            share_an,
        })
    }

    fn branch_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ids: BranchIds,
        text: Var,
        input: BranchInput,
        eps: f64,
    ) -> Result<Var> {
        let m = cross_modal_attention(tape, store, ids.ca, text, input.evidence, input.segments)?;
        let m_hat = match (self.gate, ids.an_gu) {
            (Some(gate), Some(an)) => gated_unit(tape, store, gate, an, m, eps)?,
            _ => m,
        };
        match (ids.sa, ids.an_sa) {
            (Some(sa), Some(an)) => self_attend_refine(tape, store, sa, an, m_hat, eps),
            _ => Ok(m_hat),
        }
    }

    /// Fused feature `H` (`B × d_g`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        text: Var,
        image: Option<BranchInput>,
        speech: Option<BranchInput>,
        eps: f64,
    ) -> Result<Var> {
        let ti = match (self.ti, image) {
            (Some(ids), Some(input)) => Some(self.branch_forward(tape, store, ids, text, input, eps)?),
            (Some(_), None) => return Err(KomeiError::Config("image branch configured but no evidence given".into())),
            (None, _) => None,
        };
        let ts = match (self.ts, speech) {
            (Some(ids), Some(input)) => Some(self.branch_forward(tape, store, ids, text, input, eps)?),
            (Some(_), None) => return Err(KomeiError::Config("speech branch configured but no evidence given".into())),
            (None, _) => None,
        };
        fuse(tape, store, ti, ts, self.w_h, self.b_h)
    }
}

/// Closed-form trainable scalar count of a fusion stack.
pub fn fusion_param_count(d_g: usize, branches: usize, flags: StackFlags, share_an: bool) -> usize {
    let d = d_g;
    let an = |on: bool| -> usize {
        match (on, share_an) {
            (false, _) => 0,
            (true, true) => 2 * d,
            (true, false) => 2 * d * branches,
        }
    };
    let ca = branches * 3 * d * d;
    let gu = if flags.gu { 2 * d * d + 2 * d } else { 0 } + an(flags.gu);
    let sa = if flags.sa { branches * 3 * d * d } else { 0 } + an(flags.sa);
    ca + gu + sa + 2 * d * d + d
}
