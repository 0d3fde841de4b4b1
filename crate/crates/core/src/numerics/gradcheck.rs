use super::{ParamStore, Tape, Var};
use crate::error::{KomeiError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares the tape gradient of `loss_fn` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` for every trainable coordinate.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
/// Parameter values are restored before returning.
pub fn grad_check<F>(store: &mut ParamStore, h: f64, mut loss_fn: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(KomeiError::Domain(format!("finite-difference step must be > 0, got {h}")));
    }
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    let grads = tape.backward(loss)?;
    tape.accumulate_param_grads(&grads, store);
    drop(tape);

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(store, &mut tape)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(KomeiError::NonFinite(format!("loss = {v}")));
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.len();
        for j in 0..n {
            let original = store.get(id).value.data()[j];
            store.get_mut(id).value.data_mut()[j] = original + h;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[j] = original - h;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[j] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let analytic = store.get(id).grad.data()[j];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel >= report.max_rel_err {
                    report.worst = Some((store.get(id).name.clone(), j));
                }
            }
        }
    }
    Ok(report)
}
