use std::io::Write;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::eval::evaluate;
use super::media::MediaBank;
use super::model::Model;
use crate::corpus::MaskedSample;
use crate::encoders::{Modality, TextVocab};
use crate::error::{KomeiError, Result};
use crate::numerics::{AdamW, ParamStore};

/// One optimizer step of the loss curve.
#[derive(Clone, Debug, PartialEq)]
pub struct LossPoint {
    pub step: u64,
    pub l_p: f64,
    pub l_ti: Option<f64>,
    pub l_ts: Option<f64>,
    pub j: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<LossPoint>,
    /// Validation Acc@1 after each completed epoch.
    pub val_acc1: Vec<f64>,
    pub epochs_run: usize,
    /// Epoch (1-based) whose parameters were kept; 0 means initialization.
    pub best_epoch: usize,
}

/// Checks that every sample is labeled, has one mask, and has evidence.
pub fn check_inputs(config: &TrainConfig, samples: &[MaskedSample], media: &MediaBank, n: usize) -> Result<()> {
    for s in samples {
        s.validate()?;
        match s.label {
            Some(l) if l < n => {}
            Some(l) => return Err(KomeiError::Data(format!("sample {} label {l} out of range", s.id))),
            None => return Err(KomeiError::Data(format!("sample {} has no label", s.id))),
        }
    }
    if config.image {
        media.check_keys(Modality::Image, samples)?;
    }
    if config.speech {
        media.check_keys(Modality::Speech, samples)?;
    }
    Ok(())
}

/// Trains from seeded initialization with AdamW and a linear warmup/decay
/// schedule. With a non-empty validation set the epoch with the best
/// validation Acc@1 is kept and training stops after `patience` epochs
/// without improvement (`patience = 0` never stops early).
pub fn train(
    config: &TrainConfig,
    categories: &[String],
    train_set: &[MaskedSample],
    val_set: &[MaskedSample],
    media: &MediaBank,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(KomeiError::Data("training set is empty".into()));
    }
    check_inputs(config, train_set, media, categories.len())?;
    check_inputs(config, val_set, media, categories.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = TextVocab::build(train_set);
    let mut model = Model::init(config.clone(), categories.to_vec(), vocab, &mut rng)?;
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size) as u64;
    let mut opt = AdamW::new(config.adamw(steps_per_epoch * config.epochs as u64), &model.store);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut curve = Vec::new();
    let mut val_acc1 = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stale = 0;
    let mut epochs_run = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&MaskedSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut tape = crate::numerics::Tape::new();
            let loss = model.loss_with(&model.store, &mut tape, &batch, media)?;
            let grads = tape.backward(loss.j)?;
            model.store.zero_grad();
            tape.accumulate_param_grads(&grads, &mut model.store);
            opt.step(&mut model.store);
            curve.push(LossPoint {
                step: opt.step_count(),
                l_p: tape.scalar(loss.l_p),
                l_ti: loss.l_ti.map(|v| tape.scalar(v)),
                l_ts: loss.l_ts.map(|v| tape.scalar(v)),
                j: tape.scalar(loss.j),
            });
        }
        epochs_run = epoch;
        if val_set.is_empty() {
            continue;
        }
        let acc = evaluate(&model, val_set, media, None)?.acc[0];
        val_acc1.push(acc);
        info!(
            "epoch {epoch}: J = {:.5}, val acc@1 = {acc:.4}",
            curve.last().map_or(f64::NAN, |p| p.j)
        );
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, epoch, model.store.clone()));
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, store)) => {
            model.store = store;
            epoch
        }
        None => {
            if val_set.is_empty() && config.epochs > 0 {
                warn!("no validation set; keeping the final parameters");
            }
            epochs_run
        }
    };
    Ok(TrainOutcome {
        model,
        curve,
        val_acc1,
        epochs_run,
        best_epoch,
    })
}

/// Writes `step, L_P, L_TI, L_TS, J`; absent terms are empty cells.
pub fn write_loss_curve<W: Write>(out: W, curve: &[LossPoint]) -> Result<()> {
    let err = |e: csv::Error| KomeiError::Format(format!("loss curve CSV: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "L_P", "L_TI", "L_TS", "J"]).map_err(err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in curve {
        w.write_record([p.step.to_string(), p.l_p.to_string(), opt(p.l_ti), opt(p.l_ts), p.j.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| KomeiError::Format(format!("loss curve CSV: {e}")))
}
