//! Keyword classifier, losses, and Acc@k scoring.
//!
//! Category `j` scores `W·(h_j ⊙ H) + b`; probabilities are a softmax over
//! categories. Rankings break exact ties by ascending category index.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::error::{KomeiError, Result};
use crate::numerics::param::init;
use crate::numerics::{self, ParamId, ParamStore, Tape, Tensor2, Var};

/// Class-label embeddings `h` (`n × d_g`), scoring row `W` (`1 × d_g`) and
/// scalar bias `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierIds {
    pub h: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

impl ClassifierIds {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, n: usize, d_g: usize) -> Result<Self> {
        if n == 0 {
            return Err(KomeiError::Config("classifier needs at least one category".into()));
        }
        Ok(Self {
            h: store.add("classifier.h", init::normal(rng, n, d_g, 1.0 / (d_g as f64).sqrt()), true)?,
            w: store.add("classifier.w", Tensor2::filled(1, d_g, 1.0), true)?,
            // a uniform logit shift cancels in the softmax, so b is frozen
            b: store.add("classifier.b", Tensor2::zeros(1, 1), false)?,
        })
    }

    /// `B × n` logits for fused features `h_feat` (`B × d_g`).
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, h_feat: Var) -> Result<Var> {
        let (h, w, b) = (tape.param(store, self.h), tape.param(store, self.w), tape.param(store, self.b));
        let weighted = tape.mul_row(h_feat, w)?;
        let h_t = tape.transpose(h);
        let scores = tape.matmul(weighted, h_t)?;
        tape.add_row(scores, b)
    }
}

/// Class probabilities for fused features.
pub fn predict_scores(h_feat: &Tensor2, h: &Tensor2, w: &Tensor2, b: f64) -> Result<Tensor2> {
    if h.rows() == 0 {
        return Err(KomeiError::Config("classifier needs at least one category".into()));
    }
    if h.cols() != h_feat.cols() || w.shape() != (1, h_feat.cols()) {
        return Err(KomeiError::dim("predict_scores", h_feat.shape(), h.shape()));
    }
    let mut weighted = h_feat.clone();
    for i in 0..weighted.rows() {
        for (x, wj) in weighted.row_mut(i).iter_mut().zip(w.data()) {
            *x *= wj;
        }
    }
    let logits = weighted.matmul_t(h)?.map(|x| x + b);
    numerics::softmax_rows(&logits)
}

fn check_gold(gold: &[usize], rows: usize, n: usize) -> Result<()> {
    if gold.len() != rows {
        return Err(KomeiError::Data(format!("{} gold labels for {rows} rows", gold.len())));
    }
    if let Some(&g) = gold.iter().find(|&&g| g >= n) {
        return Err(KomeiError::Data(format!("gold label {g} out of range for {n} categories")));
    }
    Ok(())
}

/// Mean one-hot cross-entropy of `logits` against `gold`.
pub fn prediction_loss(tape: &mut Tape, logits: Var, gold: &[usize]) -> Result<Var> {
    let (rows, n) = tape.shape(logits);
    check_gold(gold, rows, n)?;
    if rows == 0 {
        return Err(KomeiError::Data("empty batch".into()));
    }
    let log_p = tape.log_softmax_rows(logits)?;
    let mut weights = Tensor2::zeros(rows, n);
    for (i, &g) in gold.iter().enumerate() {
        weights.set(i, g, -1.0 / rows as f64)?;
    }
    tape.weighted_sum(log_p, weights)
}

/// Mean `−log probs[b][gold_b]` over the batch.
pub fn prediction_loss_value(probs: &Tensor2, gold: &[usize]) -> Result<f64> {
    check_gold(gold, probs.rows(), probs.cols())?;
    if gold.is_empty() {
        return Err(KomeiError::Data("empty batch".into()));
    }
    let total: f64 = gold.iter().enumerate().map(|(i, &g)| -probs.get(i, g).ln()).sum();
    Ok(total / gold.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.beta >= 0.0) || !(self.gamma >= 0.0) {
            return Err(KomeiError::Config(format!(
                "loss weights need alpha > 0 and beta, gamma >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `αL_P + βL_TI + γL_TS`; absent terms contribute nothing.
pub fn total_loss(l_p: f64, l_ti: Option<f64>, l_ts: Option<f64>, w: LossWeights) -> f64 {
    w.alpha * l_p + l_ti.map_or(0.0, |l| w.beta * l) + l_ts.map_or(0.0, |l| w.gamma * l)
}

/// Tape form of [`total_loss`].
pub fn total_loss_var(tape: &mut Tape, l_p: Var, l_ti: Option<Var>, l_ts: Option<Var>, w: LossWeights) -> Result<Var> {
    let mut j = tape.scale(l_p, w.alpha);
    for (term, weight) in [(l_ti, w.beta), (l_ts, w.gamma)] {
        if let Some(l) = term {
            let scaled = tape.scale(l, weight);
            j = tape.add(j, scaled)?;
        }
    }
    Ok(j)
}

/// Category indices ordered by descending probability, ties by index.
pub fn ranking(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

/// Whether `gold` is among the `k` best-ranked categories.
pub fn top_k_hit(probs: &[f64], gold: usize, k: usize) -> bool {
    let pg = probs[gold];
    let ahead = probs
        .iter()
        .enumerate()
        .filter(|&(j, &p)| p > pg || (p == pg && j < gold))
        .count();
    ahead < k
}

/// Ranks evaluated in reports.
pub const REPORT_KS: [usize; 3] = [1, 2, 3];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryHits {
    pub category: String,
    pub n: usize,
    pub hits: [usize; 3],
}

/// Acc@1/2/3 over a scored test set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub hits: [usize; 3],
    pub acc: [f64; 3],
    pub per_category: Vec<CategoryHits>,
    pub config_hash: String,
}

impl EvalReport {
    pub fn from_scores(probs: &Tensor2, gold: &[usize], categories: &[String], config_hash: &str) -> Result<Self> {
        if probs.rows() == 0 {
            return Err(KomeiError::Data("cannot evaluate an empty test set".into()));
        }
        if probs.cols() != categories.len() {
            return Err(KomeiError::dim("evaluate", probs.shape(), (1, categories.len())));
        }
        check_gold(gold, probs.rows(), probs.cols())?;
        let mut per_category: Vec<CategoryHits> = categories
            .iter()
            .map(|c| CategoryHits {
                category: c.clone(),
                n: 0,
                hits: [0; 3],
            })
            .collect();
        let mut hits = [0; 3];
        for (i, &g) in gold.iter().enumerate() {
            per_category[g].n += 1;
            for (slot, &k) in REPORT_KS.iter().enumerate() {
                if top_k_hit(probs.row(i), g, k) {
                    hits[slot] += 1;
                    per_category[g].hits[slot] += 1;
                }
            }
        }
        let n = gold.len();
        Ok(Self {
            n,
            hits,
            acc: hits.map(|h| h as f64 / n as f64),
            per_category,
            config_hash: config_hash.to_string(),
        })
    }

    pub fn acc_at(&self, k: usize) -> Option<f64> {
        REPORT_KS.iter().position(|&x| x == k).map(|i| self.acc[i])
    }

    /// Compact machine-readable summary.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "acc1": self.acc[0],
            "acc2": self.acc[1],
            "acc3": self.acc[2],
            "n": self.n,
            "config_hash": self.config_hash,
        })
    }
}

/// Writes `id, gold, top1, p1, top2, p2, top3, p3`. Fewer than three
/// categories leave the trailing columns empty.
pub fn write_predictions_csv<W: Write>(
    out: W,
    ids: &[String],
    probs: &Tensor2,
    gold: &[Option<usize>],
    categories: &[String],
) -> Result<()> {
    if ids.len() != probs.rows() || gold.len() != probs.rows() {
        return Err(KomeiError::Data("prediction dump inputs disagree in length".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| KomeiError::Format(format!("prediction CSV: {e}"));
    w.write_record(["id", "gold", "top1", "p1", "top2", "p2", "top3", "p3"])
        .map_err(csv_err)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone(), gold[i].map(|g| categories[g].clone()).unwrap_or_default()];
        let order = ranking(probs.row(i));
        for slot in 0..3 {
            match order.get(slot) {
                Some(&j) => {
                    rec.push(categories[j].clone());
                    rec.push(probs.get(i, j).to_string());
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| KomeiError::Format(format!("prediction CSV: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn two_category_golden() {
        let h_feat = Tensor2::from_rows(&[[1.0, 0.0]]).unwrap();
        let h = Tensor2::identity(2);
        let p = predict_scores(&h_feat, &h, &Tensor2::filled(1, 2, 1.0), 0.0).unwrap();
        let e = 1f64.exp();
        assert!((p.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.get(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_scoring_row_is_uniform() {
        let h_feat = Tensor2::from_rows(&[[3.0, -1.0, 2.0], [0.1, 0.2, 0.3]]).unwrap();
        let h = Tensor2::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0], [0.0, 1.0, 0.0]]).unwrap();
        let p = predict_scores(&h_feat, &h, &Tensor2::zeros(1, 3), 0.4).unwrap();
        assert!(p.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!(matches!(
            predict_scores(&h_feat, &Tensor2::zeros(0, 3), &Tensor2::zeros(1, 3), 0.0),
            Err(KomeiError::Config(_))
        ));
    }

    #[test]
    fn loss_golden_values() {
        let half = Tensor2::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!((prediction_loss_value(&half, &[0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let uni = Tensor2::filled(2, 5, 0.2);
        assert!((prediction_loss_value(&uni, &[4, 1]).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!(prediction_loss_value(&half, &[2]).is_err());
    }

    #[test]
    fn tape_loss_matches_value_loss() {
        let logits = Tensor2::from_rows(&[[0.3, -1.0, 2.0], [1.0, 1.0, 0.0]]).unwrap();
        let mut tape = Tape::new();
        let l = tape.constant(logits.clone());
        let loss = prediction_loss(&mut tape, l, &[2, 0]).unwrap();
        let probs = numerics::softmax_rows(&logits).unwrap();
        assert!((tape.scalar(loss) - prediction_loss_value(&probs, &[2, 0]).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn total_loss_drop_rule() {
        let w = LossWeights {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
        };
        assert_eq!(total_loss(0.7, Some(3.0), Some(4.0), w), 0.7);
        let ones = LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        };
        assert!((total_loss(0.5, Some(0.2), Some(0.3), ones) - 1.0).abs() < 1e-15);
        let d = LossWeights::default();
        assert_eq!(total_loss(0.5, None, Some(0.3), d), d.alpha * 0.5 + d.gamma * 0.3);
        let mut tape = Tape::new();
        let (a, b, c) = (
            tape.constant(Tensor2::scalar(0.5).unwrap()),
            tape.constant(Tensor2::scalar(0.2).unwrap()),
            tape.constant(Tensor2::scalar(0.3).unwrap()),
        );
        let j = total_loss_var(&mut tape, a, Some(b), Some(c), ones).unwrap();
        assert!((tape.scalar(j) - 1.0).abs() < 1e-15);
        assert!(LossWeights { alpha: 0.0, ..d }.validate().is_err());
    }

    #[test]
    fn top_k_examples_and_ties() {
        let p = [0.5, 0.3, 0.2];
        assert!(top_k_hit(&p, 0, 1));
        assert!(!top_k_hit(&p, 1, 1));
        assert!(top_k_hit(&p, 1, 2));
        let tie = [0.4, 0.4, 0.2];
        assert!(!top_k_hit(&tie, 1, 1));
        assert!(top_k_hit(&tie, 0, 1));
        assert_eq!(ranking(&tie), vec![0, 1, 2]);
    }

    #[test]
    fn report_counts_and_csv_layout() {
        let probs = Tensor2::from_rows(&[[0.7, 0.2, 0.1], [0.2, 0.3, 0.5], [0.4, 0.4, 0.2]]).unwrap();
        let cats: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = EvalReport::from_scores(&probs, &[0, 1, 1], &cats, "h").unwrap();
        assert_eq!(r.hits, [1, 3, 3]);
        assert_eq!(r.per_category[1].n, 2);
        assert_eq!(r.per_category[1].hits, [0, 2, 2]);
        assert_eq!(r.acc_at(2), Some(1.0));
        let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
        let mut buf = Vec::new();
        write_predictions_csv(&mut buf, &ids, &probs, &[Some(0), Some(1), None], &cats).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "id,gold,top1,p1,top2,p2,top3,p3");
        assert_eq!(lines[2], "s1,b,c,0.5,b,0.3,a,0.2");
        assert_eq!(lines[3], "s2,,a,0.4,b,0.4,c,0.2");
        assert!(EvalReport::from_scores(&Tensor2::zeros(0, 3), &[], &cats, "h").is_err());
    }

    fn probs_strategy() -> impl Strategy<Value = (Vec<f64>, usize)> {
        (2usize..6).prop_flat_map(|n| (prop::collection::vec(0u8..4, n), 0..n)).prop_map(|(raw, g)| {
            let total: f64 = raw.iter().map(|&x| x as f64 + 1.0).sum();
            (raw.iter().map(|&x| (x as f64 + 1.0) / total).collect(), g)
        })
    }

    proptest! {
        #[test]
        fn hits_are_monotone_in_k((p, g) in probs_strategy()) {
            let mut prev = false;
            for k in 1..=p.len() {
                let hit = top_k_hit(&p, g, k);
                prop_assert!(hit || !prev);
                prop_assert_eq!(hit, ranking(&p)[..k].contains(&g));
                prev = hit;
            }
            prop_assert!(prev);
        }

        #[test]
        fn raising_gold_logit_never_loses_a_hit(logits in prop::collection::vec(-3.0f64..3.0, 4), g in 0usize..4, bump in 0.0f64..2.0) {
            let p0 = numerics::softmax_row(&logits).unwrap();
            let mut raised = logits.clone();
            raised[g] += bump;
            let p1 = numerics::softmax_row(&raised).unwrap();
            prop_assert!(p1[g] >= p0[g]);
            for k in 1..=4 {
                prop_assert!(!top_k_hit(&p0, g, k) || top_k_hit(&p1, g, k));
            }
        }

        #[test]
        fn scores_equivariant_to_category_permutation(vals in prop::collection::vec(-2.0f64..2.0, 14)) {
            let h_feat = Tensor2::new(2, 2, vals[..4].to_vec()).unwrap();
            let h = Tensor2::new(3, 2, vals[4..10].to_vec()).unwrap();
            let w = Tensor2::new(1, 2, vals[10..12].to_vec()).unwrap();
            let perm = [2, 0, 1];
            let p = predict_scores(&h_feat, &h, &w, vals[12]).unwrap();
            let pp = predict_scores(&h_feat, &h.select_rows(&perm), &w, vals[12]).unwrap();
            for i in 0..2 {
                for (slot, &j) in perm.iter().enumerate() {
                    prop_assert!((pp.get(i, slot) - p.get(i, j)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn loss_is_nonnegative(logits in prop::collection::vec(-5.0f64..5.0, 6), g in 0usize..3) {
            let probs = numerics::softmax_rows(&Tensor2::new(2, 3, logits).unwrap()).unwrap();
            prop_assert!(prediction_loss_value(&probs, &[g, (g + 1) % 3]).unwrap() >= 0.0);
        }
    }
}
