//! Modality and component ablation grids.

use std::io::Write;

use log::info;
use serde::Serialize;

use super::config::TrainConfig;
use super::eval::evaluate;
use super::media::MediaBank;
use super::model::Model;
use super::train::train;
use crate::corpus::MaskedSample;
use crate::error::{KomeiError, Result};
use crate::prediction::EvalReport;

/// Trainable scalars per architectural group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamAudit {
    pub total: usize,
    pub text: usize,
    pub projection: usize,
    pub ca: usize,
    pub gu: usize,
    pub sa: usize,
    pub an: usize,
    pub fuse: usize,
    pub classifier: usize,
}

impl ParamAudit {
    pub fn of(model: &Model) -> Self {
        Self {
            total: model.store.trainable_count(),
            text: model.count_params(|n| n.starts_with("text.")),
            projection: model.count_params(|n| n.ends_with(".proj.w") || n.ends_with(".proj.b")),
            ca: model.count_params(|n| n.contains(".ca.")),
            gu: model.count_params(|n| n.starts_with("fusion.gu.")),
            sa: model.count_params(|n| n.contains(".sa.")),
            an: model.count_params(|n| n.contains("an_gu.") || n.contains("an_sa.")),
            fuse: model.count_params(|n| n == "fusion.w_h" || n == "fusion.b_h"),
            classifier: model.count_params(|n| n.starts_with("classifier.")),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub head: String,
    pub config_hash: String,
    pub params: ParamAudit,
    pub report: EvalReport,
    pub best_epoch: usize,
}

/// Training and evaluation data shared by every row of a grid.
pub struct AblationData<'a> {
    pub categories: &'a [String],
    pub train: &'a [MaskedSample],
    pub val: &'a [MaskedSample],
    pub test: &'a [MaskedSample],
    pub media: &'a MediaBank,
}

fn run_row(label: &str, config: TrainConfig, data: &AblationData) -> Result<AblationRow> {
    info!("ablation row {label}");
    let outcome = train(&config, data.categories, data.train, data.val, data.media)?;
    let report = evaluate(&outcome.model, data.test, data.media, None)?;
    Ok(AblationRow {
        label: label.to_string(),
        head: outcome.model.head.name().to_string(),
        config_hash: config.hash(),
        params: ParamAudit::of(&outcome.model),
        report,
        best_epoch: outcome.best_epoch,
    })
}

/// Modality rows in grid order with their configs. `V` rows are dropped when
/// images are unavailable and `A` rows when speech is.
pub fn modality_grid(base: &TrainConfig, has_images: bool, has_speech: bool) -> Vec<(String, TrainConfig)> {
    let mut rows = Vec::new();
    let only = |text: bool, image: bool, speech: bool| {
        let mut c = base.clone();
        c.text = text;
        c.image = image;
        c.speech = speech;
        if !(text && (image || speech)) {
            c = c.without_components();
        }
        c
    };
    let mut push = |label: &str, text, image, speech| {
        if (image && !has_images) || (speech && !has_speech) {
            info!("skipping modality row {label}: evidence unavailable");
            return;
        }
        rows.push((label.to_string(), only(text, image, speech)));
    };
    push("T", true, false, false);
    push("V", false, true, false);
    push("A", false, false, true);
    push("T+V", true, true, false);
    push("T+A", true, false, true);
    let mut full = base.clone();
    full.text = true;
    full.image = has_images;
    full.speech = has_speech;
    if has_images && has_speech {
        rows.push(("T+V+A".to_string(), full));
    }
    rows
}

/// Component rows: text-only, the concatenation base `Δ`, then CFA, CA, GU
/// and SA added in order, then the full stack without and with AN sharing.
pub fn component_grid(base: &TrainConfig) -> Result<Vec<(String, TrainConfig)>> {
    if !(base.image || base.speech) {
        return Err(KomeiError::Config("component ablation needs an evidence modality".into()));
    }
    let mut t = base.clone().without_components();
    t.image = false;
    t.speech = false;
    let delta = base.clone().without_components();
    let c1 = TrainConfig { cfa: true, ..delta.clone() };
    let c2 = TrainConfig { ca: true, ..c1.clone() };
    let g = TrainConfig { gu: true, ..c2.clone() };
    let s = TrainConfig { sa: true, ..g.clone() };
    let not_share = TrainConfig { share_an: false, ..s.clone() };
    let share = TrainConfig { share_an: true, ..s.clone() };
    Ok(vec![
        ("T".into(), t),
        ("Δ".into(), delta),
        ("Δ+C1".into(), c1),
        ("Δ+C1+C2".into(), c2),
        ("Δ+C1+C2+G".into(), g),
        ("Δ+C1+C2+G+S".into(), s),
        ("AN_NotShare".into(), not_share),
        ("AN_Share".into(), share),
    ])
}

pub fn ablate_modalities(
    base: &TrainConfig,
    has_images: bool,
    has_speech: bool,
    data: &AblationData,
) -> Result<Vec<AblationRow>> {
    modality_grid(base, has_images, has_speech)
        .into_iter()
        .map(|(label, c)| run_row(&label, c, data))
        .collect()
}

pub fn ablate_components(base: &TrainConfig, data: &AblationData) -> Result<Vec<AblationRow>> {
    component_grid(base)?
        .into_iter()
        .map(|(label, c)| run_row(&label, c, data))
        .collect()
}

/// CSV with one row per configuration.
pub fn write_ablation_csv<W: Write>(out: W, rows: &[AblationRow]) -> Result<()> {
    let err = |e: csv::Error| KomeiError::Format(format!("ablation CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "row", "head", "acc1", "acc2", "acc3", "n", "params", "ca", "gu", "sa", "an", "config_hash",
    ])
    .map_err(err)?;
    for r in rows {
        let p = r.params;
        w.write_record([
            r.label.clone(),
            r.head.clone(),
            r.report.acc[0].to_string(),
            r.report.acc[1].to_string(),
            r.report.acc[2].to_string(),
            r.report.n.to_string(),
            p.total.to_string(),
            p.ca.to_string(),
            p.gu.to_string(),
            p.sa.to_string(),
            p.an.to_string(),
            r.config_hash.clone(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| KomeiError::Format(format!("ablation CSV: {e}")))
}

/// Fixed-width table for terminals.
pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!(
        "{:<14} {:>7} {:>7} {:>7} {:>6} {:>8}\n",
        "row", "acc@1", "acc@2", "acc@3", "n", "params"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<14} {:>7.4} {:>7.4} {:>7.4} {:>6} {:>8}\n",
            r.label, r.report.acc[0], r.report.acc[1], r.report.acc[2], r.report.n, r.params.total
        ));
    }
    s
}
