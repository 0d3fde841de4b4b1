use std::io::Write;

use super::model::{gold_labels, Model};
use super::media::MediaBank;
use crate::corpus::MaskedSample;
use crate::error::{KomeiError, Result};
use crate::numerics::Tensor2;
use crate::prediction::{write_predictions_csv, EvalReport};

/// Scores `samples` and returns the report with the probability matrix.
pub fn evaluate_scores(
    model: &Model,
    samples: &[MaskedSample],
    media: &MediaBank,
    expected_hash: Option<&str>,
) -> Result<(EvalReport, Tensor2)> {
    let hash = model.config.hash();
    if let Some(expected) = expected_hash {
        if expected != hash {
            return Err(KomeiError::Config(format!(
                "checkpoint config hash {hash} does not match runtime config hash {expected}"
            )));
        }
    }
    if samples.is_empty() {
        return Err(KomeiError::Data("cannot evaluate an empty test set".into()));
    }
    let refs: Vec<&MaskedSample> = samples.iter().collect();
    let gold = gold_labels(&refs)?;
    let probs = model.predict(samples, media)?;
    let report = EvalReport::from_scores(&probs, &gold, &model.categories, &hash)?;
    Ok((report, probs))
}

/// Acc@1/2/3 of `model` on labeled `samples`.
pub fn evaluate(
    model: &Model,
    samples: &[MaskedSample],
    media: &MediaBank,
    expected_hash: Option<&str>,
) -> Result<EvalReport> {
    evaluate_scores(model, samples, media, expected_hash).map(|(r, _)| r)
}

/// Prediction dump for scored samples.
pub fn write_sample_predictions<W: Write>(
    out: W,
    samples: &[MaskedSample],
    probs: &Tensor2,
    categories: &[String],
) -> Result<()> {
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let gold: Vec<Option<usize>> = samples.iter().map(|s| s.label).collect();
    write_predictions_csv(out, &ids, probs, &gold, categories)
}

/// Writes `id, label, h0 … h{d_g−1}` rows of fused features.
pub fn write_features<W: Write>(out: W, samples: &[MaskedSample], features: &Tensor2, categories: &[String]) -> Result<()> {
    if samples.len() != features.rows() {
        return Err(KomeiError::Data("feature rows disagree with sample count".into()));
    }
    let err = |e: csv::Error| KomeiError::Format(format!("feature CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..features.cols()).map(|j| format!("h{j}")));
    w.write_record(&header).map_err(err)?;
    for (i, s) in samples.iter().enumerate() {
        let mut rec = vec![s.id.clone(), s.label.map(|l| categories[l].clone()).unwrap_or_default()];
        rec.extend(features.row(i).iter().map(f64::to_string));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| KomeiError::Format(format!("feature CSV: {e}")))
}
