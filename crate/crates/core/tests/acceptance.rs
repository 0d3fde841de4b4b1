//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use komei_core::corpus::{corpus_from_jsonl, corpus_to_jsonl, MaskedSample, MASK};
use komei_core::encoders::EmbeddingTable;
use komei_core::fusion::{
    contrastive_align_loss_value, cross_modal_attention, gated_unit, match_matrix, AddNormIds, AlignmentConfig,
    AttentionIds, GateIds, Reduction,
};
use komei_core::numerics::param::init;
use komei_core::numerics::{self, AdamW, AdamWConfig, ParamStore, Tape, Tensor2};
use komei_core::prediction::{predict_scores, prediction_loss_value, write_predictions_csv, EvalReport};
use komei_core::synthetic::{generate, Scenario, SyntheticCorpus, SyntheticSpec};
use komei_core::trainer::{
    ablate_components, evaluate, format_ablation_table, gradcheck_full_objective, modality_grid, train, AblationData,
    Model, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;
const GRAD_TIME: Duration = Duration::from_secs(10);
const GOLDEN_TOL: f64 = 1e-9;
const GU_IDENTITY_TOL: f64 = 1e-9;
const OVERFIT_TARGET: f64 = 0.95;
const OVERFIT_EPOCHS: usize = 500;
const OVERFIT_TIME: Duration = Duration::from_secs(60);
const GAIN_TARGET: f64 = 0.2;
const GAIN_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const ORACLE_MATRICES: usize = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut coords = 0;
    for seed in 0..5 {
        match gradcheck_full_objective(8, 4, seed, 1e-5) {
            Ok(r) => {
                worst = worst.max(r.max_rel_err);
                coords += r.coords_checked;
            }
            Err(e) => return outcome(false, format!("gradcheck error: {e}")),
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < GRAD_TOL && elapsed < GRAD_TIME,
        format!("max rel err {worst:.2e} over {coords} coords, {elapsed:.2?}"),
    )
}

fn golden_values() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if !close(got, want, GOLDEN_TOL) {
            failures.push(format!("{name}: {got} != {want}"));
        }
    };
    let mean = |tau| AlignmentConfig {
        tau,
        reduction: Reduction::Mean,
    };
    let eye = Tensor2::identity(2);
    let e = 1f64.exp();
    check(
        "contrastive B=2",
        contrastive_align_loss_value(&eye, &eye, &match_matrix(&["a", "b"]), mean(1.0)).unwrap(),
        -(e / (e + 1.0)).ln(),
    );
    let same = Tensor2::from_rows(&[[0.6, 0.8]; 4]).unwrap();
    check(
        "contrastive uniform",
        contrastive_align_loss_value(&same, &same, &match_matrix(&["a", "b", "c", "d"]), mean(0.07)).unwrap(),
        4f64.ln(),
    );
    check(
        "L_P half",
        prediction_loss_value(&Tensor2::from_rows(&[[0.5, 0.5]]).unwrap(), &[0]).unwrap(),
        2f64.ln(),
    );
    check(
        "L_P uniform n=7",
        prediction_loss_value(&Tensor2::filled(3, 7, 1.0 / 7.0), &[0, 3, 6]).unwrap(),
        7f64.ln(),
    );
    let sm = numerics::softmax_row(&[1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap();
    for (i, want) in [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0].iter().enumerate() {
        check("softmax", sm[i], *want);
    }
    let lin = numerics::linear(
        &Tensor2::from_rows(&[[1.0, 0.0]]).unwrap(),
        &Tensor2::from_rows(&[[2.0, 3.0], [4.0, 5.0]]).unwrap(),
        &Tensor2::filled(1, 2, 1.0),
    )
    .unwrap();
    check("linear 0", lin.get(0, 0), 3.0);
    check("linear 1", lin.get(0, 1), 4.0);
    let ln = numerics::layer_norm(
        &Tensor2::from_rows(&[[1.0, -1.0]]).unwrap(),
        &Tensor2::filled(1, 2, 1.0),
        &Tensor2::zeros(1, 2),
        1e-15,
    )
    .unwrap();
    check("layer_norm 0", ln.get(0, 0), 1.0);
    check("layer_norm 1", ln.get(0, 1), -1.0);
    let att = numerics::attention(
        &Tensor2::from_rows(&[[0.0, 0.0, 1.0]]).unwrap(),
        &Tensor2::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap(),
        &Tensor2::from_rows(&[[2.0, 0.0, 4.0], [0.0, 2.0, 3.0]]).unwrap(),
    )
    .unwrap();
    for (j, want) in [1.0, 1.0, 3.5].iter().enumerate() {
        check("attention", att.get(0, j), *want);
    }
    let probs = predict_scores(
        &Tensor2::from_rows(&[[1.0, 0.0]]).unwrap(),
        &Tensor2::identity(2),
        &Tensor2::filled(1, 2, 1.0),
        0.0,
    )
    .unwrap();
    check("predict 0", probs.get(0, 0), e / (e + 1.0));
    check("predict 1", probs.get(0, 1), 1.0 / (e + 1.0));

    let adamw = |grad: f64, decay: f64, start: f64| -> f64 {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor2::scalar(start).unwrap(), true).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let loss = tape.scale(w, grad);
        let grads = tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&grads, &mut store);
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.1,
                weight_decay: decay,
                ..AdamWConfig::default()
            },
            &store,
        );
        opt.step(&mut store);
        store.value(id).get(0, 0)
    };
    check("adamw first step", adamw(2.0, 0.0, 0.0), -0.1 * 2.0 / (2.0 + 1e-8));
    check("adamw decay only", adamw(0.0, 0.01, 1.0), 0.999);

    let detail = if failures.is_empty() {
        "all golden values within 1e-9".to_string()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn degeneracy_once() -> (bool, bool, Tensor2, Tensor2) {
    let d = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let ca = AttentionIds::register(&mut store, &mut rng, "ca", d).unwrap();
    let text = init::normal(&mut rng, 3, d, 1.0);
    let evidence = init::normal(&mut rng, 3, d, 1.0);
    let mut tape = Tape::new();
    let (t, ev) = (tape.constant(text), tape.constant(evidence.clone()));
    let m = cross_modal_attention(&mut tape, &store, ca, t, ev, vec![0..1, 1..2, 2..3]).unwrap();
    let ca_out = tape.value(m).clone();
    let projected = evidence.matmul(store.value(ca.wv)).unwrap();
    let ca_exact = ca_out == projected;

    let gate = GateIds::register(&mut store, &mut rng, "gu", d).unwrap();
    let an = AddNormIds::register(&mut store, "an", d).unwrap();
    store.set_value(gate.w_g, Tensor2::zeros(d, d)).unwrap();
    let m_in = init::normal(&mut rng, 4, d, 2.0);
    let eps = 1e-12;
    let mut tape = Tape::new();
    let mv = tape.constant(m_in.clone());
    let out = gated_unit(&mut tape, &store, gate, an, mv, eps).unwrap();
    let gu_out = tape.value(out).clone();
    let reference = numerics::layer_norm(&m_in, &Tensor2::filled(1, d, 1.0), &Tensor2::zeros(1, d), eps).unwrap();
    let gu_ok = gu_out.max_abs_diff(&reference) <= GU_IDENTITY_TOL;
    (ca_exact, gu_ok, ca_out, gu_out)
}

fn degeneracy() -> Outcome {
    let a = degeneracy_once();
    let b = degeneracy_once();
    let stable = a.2 == b.2 && a.3 == b.3;
    outcome(
        a.0 && a.1 && stable,
        format!("ca single-key exact: {}, gu zero-gate identity: {}, bitwise stable: {stable}", a.0, a.1),
    )
}

fn synthetic_config(corpus: &SyntheticCorpus, d_g: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        d_g,
        d_t: d_g,
        d_v: corpus.image.dim(),
        d_s: corpus.speech.dim(),
        batch_size: 32,
        lr: 5e-3,
        warmup_steps: 20,
        epochs: 60,
        patience: 10,
        seed,
        tau: 0.1,
        ..TrainConfig::default()
    }
}

fn overfit() -> Outcome {
    let corpus = generate(&SyntheticSpec::new(Scenario::Overfit, 42)).unwrap();
    let cfg = TrainConfig {
        epochs: OVERFIT_EPOCHS,
        patience: 0,
        ..synthetic_config(&corpus, 32, 42)
    };
    let start = Instant::now();
    let run = train(&cfg, corpus.categories(), &corpus.train, &corpus.val, &corpus.media());
    let elapsed = start.elapsed();
    match run {
        Ok(out) => {
            let reached = out.val_acc1.iter().position(|&a| a >= OVERFIT_TARGET);
            let best = out.val_acc1.iter().cloned().fold(0.0, f64::max);
            outcome(
                reached.is_some() && elapsed < OVERFIT_TIME,
                format!(
                    "val acc@1 >= {OVERFIT_TARGET} at epoch {}, best {best:.3}, {} samples, {elapsed:.2?}",
                    reached.map_or("never".to_string(), |e| (e + 1).to_string()),
                    corpus.train.len() + corpus.val.len()
                ),
            )
        }
        Err(e) => outcome(false, format!("training failed: {e}")),
    }
}

fn gain_for(scenario: Scenario, row: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut out = Vec::new();
    for seed in GAIN_SEEDS {
        let corpus = generate(&SyntheticSpec::new(scenario, seed)).map_err(|e| e.to_string())?;
        let media = corpus.media();
        let base = synthetic_config(&corpus, 32, seed);
        let grid = modality_grid(&base, true, true);
        let acc = |label: &str| -> Result<f64, String> {
            let cfg = &grid.iter().find(|(l, _)| l == label).expect("grid row").1;
            let model = train(cfg, corpus.categories(), &corpus.train, &corpus.val, &media)
                .map_err(|e| e.to_string())?
                .model;
            Ok(evaluate(&model, &corpus.test, &media, None).map_err(|e| e.to_string())?.acc[0])
        };
        out.push((acc("T")?, acc(row)?));
    }
    Ok(out)
}

fn multimodal_gain() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (scenario, row) in [(Scenario::ImagePlanted, "T+V"), (Scenario::AudioPlanted, "T+A")] {
        match gain_for(scenario, row) {
            Ok(accs) => {
                let gains: Vec<f64> = accs.iter().map(|(t, m)| m - t).collect();
                let mean = gains.iter().sum::<f64>() / gains.len() as f64;
                let min = gains.iter().cloned().fold(f64::INFINITY, f64::min);
                let t_mean = accs.iter().map(|a| a.0).sum::<f64>() / accs.len() as f64;
                pass &= min >= GAIN_TARGET;
                parts.push(format!("{row}: T {t_mean:.3}, mean gain {mean:.3} (min {min:.3})"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{row}: error {e}"));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn ablation_harness() -> Outcome {
    let spec = SyntheticSpec {
        samples: 120,
        test_samples: 60,
        ..SyntheticSpec::new(Scenario::ImagePlanted, 9)
    };
    let corpus = generate(&spec).unwrap();
    let media = corpus.media();
    let base = TrainConfig {
        epochs: 8,
        ..synthetic_config(&corpus, 8, 9)
    };
    let data = AblationData {
        categories: corpus.categories(),
        train: &corpus.train,
        val: &corpus.val,
        test: &corpus.test,
        media: &media,
    };
    let rows = match ablate_components(&base, &data) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("ablation failed: {e}")),
    };
    let delta = rows.iter().find(|r| r.label == "Δ");
    let not_share = rows.iter().find(|r| r.label == "AN_NotShare");
    let share = rows.iter().find(|r| r.label == "AN_Share");
    let (Some(delta), Some(not_share), Some(share)) = (delta, not_share, share) else {
        return outcome(false, "missing rows");
    };
    let delta_clean = delta.params.ca + delta.params.gu + delta.params.sa + delta.params.an == 0;
    let diff = not_share.params.total as i64 - share.params.total as i64;
    let pass = rows.len() == 8 && delta_clean && diff == 4 * base.d_g as i64;
    print!("{}", format_ablation_table(&rows));
    outcome(
        pass,
        format!(
            "{} rows, Δ fusion-group params {}, share toggle diff {diff} (4·d_g = {})",
            rows.len(),
            delta.params.ca + delta.params.gu + delta.params.sa + delta.params.an,
            4 * base.d_g
        ),
    )
}

/// Acc@k recomputed from the prediction dump alone.
fn brute_force_from_csv(csv_text: &str) -> [usize; 3] {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let mut hits = [0; 3];
    for rec in reader.records() {
        let rec = rec.unwrap();
        let gold = &rec[1];
        for k in 1..=3 {
            if (0..k).any(|slot| &rec[2 + 2 * slot] == gold) {
                hits[k - 1] += 1;
            }
        }
    }
    hits
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut order_violations = 0;
    let mut ties = 0;
    for m in 0..ORACLE_MATRICES {
        let rows = rng.random_range(1..40);
        let n = rng.random_range(3..9);
        let cats: Vec<String> = (0..n).map(|j| format!("c{j}")).collect();
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            // coarse integer weights make exact ties common
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(1..6) as f64).collect();
            let total: f64 = raw.iter().sum();
            data.extend(raw.iter().map(|x| x / total));
        }
        let probs = Tensor2::new(rows, n, data).unwrap();
        for i in 0..rows {
            let r = probs.row(i);
            let mut sorted = r.to_vec();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                ties += 1;
            }
        }
        let gold: Vec<usize> = (0..rows).map(|_| rng.random_range(0..n)).collect();
        let report = EvalReport::from_scores(&probs, &gold, &cats, "oracle").unwrap();
        let ids: Vec<String> = (0..rows).map(|i| format!("m{m}r{i}")).collect();
        let gold_opt: Vec<Option<usize>> = gold.iter().map(|&g| Some(g)).collect();
        let mut buf = Vec::new();
        write_predictions_csv(&mut buf, &ids, &probs, &gold_opt, &cats).unwrap();
        let hits = brute_force_from_csv(&String::from_utf8(buf).unwrap());
        let accs = hits.map(|h| h as f64 / rows as f64);
        if hits != report.hits || accs != report.acc {
            mismatches += 1;
        }
        if !(report.acc[0] <= report.acc[1] && report.acc[1] <= report.acc[2]) {
            order_violations += 1;
        }
    }
    outcome(
        mismatches == 0 && order_violations == 0,
        format!(
            "{ORACLE_MATRICES} matrices ({ties} rows with ties): {mismatches} mismatches, {order_violations} ordering violations"
        ),
    )
}

fn pipeline_hygiene() -> Outcome {
    let corpus = generate(&SyntheticSpec::new(Scenario::ImagePlanted, 5)).unwrap();
    let all: Vec<&MaskedSample> = corpus.train.iter().chain(&corpus.val).chain(&corpus.test).collect();
    let one_mask = all.iter().all(|s| s.tokens.iter().filter(|t| *t == MASK).count() == 1);

    let n = corpus.train.len() + corpus.val.len();
    let train_ids: BTreeSet<&str> = corpus.train.iter().map(|s| s.id.as_str()).collect();
    let val_ids: BTreeSet<&str> = corpus.val.iter().map(|s| s.id.as_str()).collect();
    let partition = corpus.train.len() * 5 == n * 4
        && train_ids.is_disjoint(&val_ids)
        && train_ids.len() + val_ids.len() == n;

    let jsonl = corpus_to_jsonl(&corpus.train);
    let corpus_rt = corpus_from_jsonl(&jsonl).is_ok_and(|back| corpus_to_jsonl(&back) == jsonl);
    let bytes = corpus.image.to_bytes();
    let table_rt = EmbeddingTable::from_bytes(&bytes).is_ok_and(|t| t.to_bytes() == bytes);

    let media = corpus.media();
    let cfg = TrainConfig {
        epochs: 2,
        ..synthetic_config(&corpus, 8, 3)
    };
    let a = train(&cfg, corpus.categories(), &corpus.train, &corpus.val, &media).unwrap().model;
    let b = train(&cfg, corpus.categories(), &corpus.train, &corpus.val, &media).unwrap().model;
    let ckpt = a.to_bytes();
    let same_seed = ckpt == b.to_bytes();
    let ckpt_rt = Model::from_bytes(&ckpt).is_ok_and(|m| m.to_bytes() == ckpt);

    let pass = one_mask && partition && corpus_rt && table_rt && ckpt_rt && same_seed;
    outcome(
        pass,
        format!(
            "one mask: {one_mask}, 8:2 partition ({}/{}): {partition}, corpus rt: {corpus_rt}, table rt: {table_rt}, checkpoint rt: {ckpt_rt}, same-seed identical: {same_seed}",
            corpus.train.len(),
            corpus.val.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient fidelity", gradient_fidelity),
        ("golden values", golden_values),
        ("degeneracy", degeneracy),
        ("overfit", overfit),
        ("multimodal gain", multimodal_gain),
        ("component ablation harness", ablation_harness),
        ("metric oracle", metric_oracle),
        ("pipeline hygiene", pipeline_hygiene),
    ];
    let filter: Option<usize> = std::env::var("KOMEI_ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if filter.is_some_and(|f| f != i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {} [{status}] {name}: {} ({:.1?})", i + 1, o.detail, start.elapsed());
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
