//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 failed numerical check. Errors go to stderr prefixed with
//! `error[usage]`, `error[data]` or `error[check]`.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::corpus::{
    build_test_set, build_training_set, load_ground_truth, load_vocabulary, read_corpus, split, write_corpus,
    CategoryRef, GroundTruthFile, KeywordVocabulary, MaskedSample, VocabularyFile,
};
use crate::encoders::load_embedding_table;
use crate::error::KomeiError;
use crate::synthetic::{generate, Scenario, SyntheticSpec};
use crate::trainer::{
    ablate_components, ablate_modalities, evaluate_scores, format_ablation_table, gradcheck_full_objective, train,
    write_ablation_csv, write_features, write_loss_curve, write_sample_predictions, AblationData, MediaBank, Model,
    TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "komei", version, about = "Keyword-oriented multimodal euphemism identification")]
pub struct Cli {
    /// Random seed; overrides the config file.
    #[arg(long, global = true, env = "KOMEI_SEED")]
    pub seed: Option<u64>,
    /// Flat `key = value` config file. Command flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print a JSON summary on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mask keyword occurrences in raw sentences and write JSONL splits.
    BuildCorpus(BuildCorpusArgs),
    /// Write a synthetic corpus with evidence tables and a ready config.
    GenSynthetic(GenSyntheticArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint with Acc@1..3.
    Eval(EvalArgs),
    /// Train and evaluate an ablation grid.
    Ablate(AblateArgs),
    /// Finite-difference check of the full objective on a toy batch.
    Gradcheck(GradcheckArgs),
    /// Write fused features and labels as CSV.
    DumpFeatures(DumpFeaturesArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Training corpus (JSONL).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation corpus (JSONL).
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Test corpus (JSONL).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Keyword vocabulary (JSON).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Image embedding table (KOME).
    #[arg(long)]
    pub image_table: Option<PathBuf>,
    /// Speech embedding table (KOME).
    #[arg(long)]
    pub speech_table: Option<PathBuf>,
    /// Config override `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BuildCorpusArgs {
    /// Keyword vocabulary (JSON).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Raw training sentences, one per line.
    #[arg(long)]
    pub sentences: PathBuf,
    /// Euphemism ground truth (JSON), for the test split.
    #[arg(long, requires = "test_sentences")]
    pub ground_truth: Option<PathBuf>,
    /// Raw test sentences, one per line.
    #[arg(long, requires = "ground_truth")]
    pub test_sentences: Option<PathBuf>,
    /// Output directory for train.jsonl, val.jsonl and test.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScenarioArg {
    Overfit,
    ImagePlanted,
    AudioPlanted,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Overfit => Scenario::Overfit,
            ScenarioArg::ImagePlanted => Scenario::ImagePlanted,
            ScenarioArg::AudioPlanted => Scenario::AudioPlanted,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenSyntheticArgs {
    #[arg(long, value_enum, default_value = "overfit")]
    pub scenario: ScenarioArg,
    /// Training sentences.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss CSV.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled samples (JSONL); defaults to the config's test path.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub image_table: Option<PathBuf>,
    #[arg(long)]
    pub speech_table: Option<PathBuf>,
    /// Fail unless the checkpoint config hash equals this value.
    #[arg(long)]
    pub expect_hash: Option<String>,
    /// Per-sample top-3 CSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AblationKind {
    Modalities,
    Components,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "components")]
    pub kind: AblationKind,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// CSV with one row per configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub dg: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    /// Maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct DumpFeaturesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Samples (JSONL).
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub image_table: Option<PathBuf>,
    #[arg(long)]
    pub speech_table: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of one command.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Check(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Check(_) => EXIT_CHECK,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error[usage]: {m}"),
            CliError::Data(m) => write!(f, "error[data]: {m}"),
            CliError::Check(m) => write!(f, "error[check]: {m}"),
        }
    }
}

impl From<KomeiError> for CliError {
    fn from(e: KomeiError) -> Self {
        match e {
            KomeiError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn missing(command: &str, what: &str) -> CliError {
    let mut cmd = Cli::command();
    cmd.build();
    let usage = cmd
        .find_subcommand_mut(command)
        .map(|c| c.render_usage().to_string())
        .unwrap_or_default();
    CliError::Usage(format!("missing {what}\n{usage}"))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::from(KomeiError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    create(path)?.write_all(bytes).map_err(|e| io_err(path, e))
}

fn base_config(cli: &Cli) -> CliResult<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut TrainConfig, data: &DataArgs) -> CliResult<()> {
    let p = &mut cfg.paths;
    for (slot, flag) in [
        (&mut p.train, &data.train),
        (&mut p.val, &data.val),
        (&mut p.test, &data.test),
        (&mut p.vocab, &data.vocab),
        (&mut p.image_table, &data.image_table),
        (&mut p.speech_table, &data.speech_table),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    for kv in &data.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    Ok(())
}

fn media_bank(cfg: &TrainConfig, image: Option<&Path>, speech: Option<&Path>) -> CliResult<MediaBank> {
    let image = image.or(cfg.paths.image_table.as_deref());
    let speech = speech.or(cfg.paths.speech_table.as_deref());
    Ok(MediaBank {
        image: image.map(load_embedding_table).transpose()?,
        speech: speech.map(load_embedding_table).transpose()?,
        toy_fallback: cfg.toy_fallback,
        toy_seed: cfg.seed,
        image_count: cfg.image_count,
    })
}

fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn required<'a>(path: &'a Option<PathBuf>, command: &str, what: &str) -> CliResult<&'a Path> {
    path.as_deref().ok_or_else(|| missing(command, what))
}

fn emit(cli: &Cli, value: serde_json::Value, text: impl FnOnce() -> String) {
    if cli.json {
        println!("{value}");
    } else {
        print!("{}", text());
    }
}

fn build_corpus(cli: &Cli, args: &BuildCorpusArgs) -> CliResult<()> {
    let cfg = base_config(cli)?;
    let vocab_path = args.vocab.as_ref().or(cfg.paths.vocab.as_ref());
    let vocab = load_vocabulary(vocab_path.ok_or_else(|| missing("build-corpus", "--vocab"))?)?;
    let all = build_training_set(&read_lines(&args.sentences)?, &vocab)?;
    let (train_set, val_set) = split(all, cfg.split_ratio, cfg.seed)?;
    let out = &args.out_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_corpus(&train_set, out.join("train.jsonl"))?;
    write_corpus(&val_set, out.join("val.jsonl"))?;
    let mut test_len = 0;
    if let (Some(gt), Some(sentences)) = (&args.ground_truth, &args.test_sentences) {
        let truth = load_ground_truth(gt, vocab.categories())?;
        let test_set = build_test_set(&read_lines(sentences)?, &truth, Some(&vocab))?;
        test_len = test_set.len();
        write_corpus(&test_set, out.join("test.jsonl"))?;
    }
    emit(
        cli,
        json!({"train": train_set.len(), "val": val_set.len(), "test": test_len}),
        || format!("train {} val {} test {}\n", train_set.len(), val_set.len(), test_len),
    );
    Ok(())
}

fn gen_synthetic(cli: &Cli, args: &GenSyntheticArgs) -> CliResult<()> {
    let seed = cli.seed.unwrap_or(0);
    let mut spec = SyntheticSpec::new(args.scenario.into(), seed);
    if let Some(n) = args.samples {
        spec.samples = n;
    }
    let corpus = generate(&spec)?;
    let out = &args.out_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_corpus(&corpus.train, out.join("train.jsonl"))?;
    write_corpus(&corpus.val, out.join("val.jsonl"))?;
    write_corpus(&corpus.test, out.join("test.jsonl"))?;
    let vocab_json = serde_json::to_string_pretty(&VocabularyFile::from_vocabulary(&corpus.vocab))
        .map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&out.join("vocab.json"), vocab_json.as_bytes())?;
    let truth: GroundTruthFile = corpus
        .ground_truth
        .entries()
        .iter()
        .map(|(k, &c)| (k.clone(), CategoryRef::Name(corpus.categories()[c].clone())))
        .collect();
    let truth_json = serde_json::to_string_pretty(&truth).map_err(|e| CliError::Data(e.to_string()))?;
    write_file(&out.join("ground_truth.json"), truth_json.as_bytes())?;
    write_file(&out.join("image.kome"), &corpus.image.to_bytes())?;
    write_file(&out.join("speech.kome"), &corpus.speech.to_bytes())?;

    let mut cfg = TrainConfig {
        d_g: 32,
        d_t: 32,
        d_v: spec.d_v,
        d_s: spec.d_s,
        batch_size: 32,
        lr: 5e-3,
        warmup_steps: 20,
        epochs: 60,
        patience: 10,
        seed,
        tau: 0.1,
        image_count: spec.image_count,
        ..TrainConfig::default()
    };
    let p = &mut cfg.paths;
    p.train = Some(out.join("train.jsonl"));
    p.val = Some(out.join("val.jsonl"));
    p.test = Some(out.join("test.jsonl"));
    p.vocab = Some(out.join("vocab.json"));
    p.image_table = Some(out.join("image.kome"));
    p.speech_table = Some(out.join("speech.kome"));
    write_file(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    emit(
        cli,
        json!({
            "scenario": spec.scenario.as_str(),
            "train": corpus.train.len(),
            "val": corpus.val.len(),
            "test": corpus.test.len(),
        }),
        || {
            format!(
                "{}: train {} val {} test {} in {}\n",
                spec.scenario.as_str(),
                corpus.train.len(),
                corpus.val.len(),
                corpus.test.len(),
                out.display()
            )
        },
    );
    Ok(())
}

fn load_split(path: &Option<PathBuf>) -> CliResult<Vec<MaskedSample>> {
    Ok(match path {
        Some(p) => read_corpus(p)?,
        None => Vec::new(),
    })
}

fn run_train(cli: &Cli, args: &TrainArgs) -> CliResult<()> {
    let mut cfg = base_config(cli)?;
    apply_data(&mut cfg, &args.data)?;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.lr = lr;
    }
    let train_path = required(&cfg.paths.train, "train", "training corpus (--train)")?;
    let vocab_path = required(&cfg.paths.vocab, "train", "keyword vocabulary (--vocab)")?;
    let vocab = load_vocabulary(vocab_path)?;
    let train_set = read_corpus(train_path)?;
    let val_set = load_split(&cfg.paths.val)?;
    let media = media_bank(&cfg, None, None)?;
    let out = train(&cfg, vocab.categories(), &train_set, &val_set, &media)?;
    write_file(&args.out, &out.model.to_bytes())?;
    if let Some(path) = &args.loss_curve {
        let mut w = create(path)?;
        write_loss_curve(&mut w, &out.curve)?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    let best = out.best_epoch.checked_sub(1).and_then(|e| out.val_acc1.get(e).copied());
    emit(
        cli,
        json!({
            "epochs": out.epochs_run,
            "best_epoch": out.best_epoch,
            "val_acc1": best,
            "steps": out.curve.len(),
            "config_hash": cfg.hash(),
        }),
        || {
            let acc = best.map_or("n/a".to_string(), |a| format!("{a:.4}"));
            format!(
                "trained {} epochs ({} steps), best val acc@1 {acc}, config {}\n",
                out.epochs_run,
                out.curve.len(),
                cfg.hash()
            )
        },
    );
    Ok(())
}

fn checkpoint_media(cli: &Cli, model: &Model, image: &Option<PathBuf>, speech: &Option<PathBuf>) -> CliResult<MediaBank> {
    let mut cfg = model.config.clone();
    if let Some(path) = &cli.config {
        cfg.paths = TrainConfig::load(path)?.paths;
    }
    media_bank(&cfg, image.as_deref(), speech.as_deref())
}

fn run_eval(cli: &Cli, args: &EvalArgs) -> CliResult<()> {
    let model = Model::load(&args.checkpoint)?;
    let config_test = match &cli.config {
        Some(p) => TrainConfig::load(p)?.paths.test,
        None => None,
    };
    let test_path = args.test.clone().or(config_test);
    let test_path = required(&test_path, "eval", "test corpus (--test)")?;
    let samples = read_corpus(test_path)?;
    let media = checkpoint_media(cli, &model, &args.image_table, &args.speech_table)?;
    let (report, probs) = evaluate_scores(&model, &samples, &media, args.expect_hash.as_deref())?;
    if let Some(path) = &args.predictions {
        let mut w = create(path)?;
        write_sample_predictions(&mut w, &samples, &probs, &model.categories)?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    emit(cli, report.summary_json(), || {
        let mut s = format!(
            "n {}  acc@1 {:.4}  acc@2 {:.4}  acc@3 {:.4}\n",
            report.n, report.acc[0], report.acc[1], report.acc[2]
        );
        for c in &report.per_category {
            s.push_str(&format!("  {:<16} {}/{}\n", c.category, c.hits[0], c.n));
        }
        s
    });
    Ok(())
}

fn run_ablate(cli: &Cli, args: &AblateArgs) -> CliResult<()> {
    let mut cfg = base_config(cli)?;
    apply_data(&mut cfg, &args.data)?;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let vocab: KeywordVocabulary = load_vocabulary(required(&cfg.paths.vocab, "ablate", "--vocab")?)?;
    let train_set = read_corpus(required(&cfg.paths.train, "ablate", "training corpus (--train)")?)?;
    let test_set = read_corpus(required(&cfg.paths.test, "ablate", "test corpus (--test)")?)?;
    let val_set = load_split(&cfg.paths.val)?;
    let media = media_bank(&cfg, None, None)?;
    let data = AblationData {
        categories: vocab.categories(),
        train: &train_set,
        val: &val_set,
        test: &test_set,
        media: &media,
    };
    let rows = match args.kind {
        AblationKind::Components => ablate_components(&cfg, &data)?,
        AblationKind::Modalities => ablate_modalities(&cfg, vocab.has_images, vocab.has_speech, &data)?,
    };
    if let Some(path) = &args.out {
        let mut w = create(path)?;
        write_ablation_csv(&mut w, &rows)?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    let summary: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            json!({
                "row": r.label,
                "acc1": r.report.acc[0],
                "acc2": r.report.acc[1],
                "acc3": r.report.acc[2],
                "n": r.report.n,
                "params": r.params.total,
            })
        })
        .collect();
    emit(cli, json!({ "rows": summary }), || format_ablation_table(&rows));
    Ok(())
}

fn run_gradcheck(cli: &Cli, args: &GradcheckArgs) -> CliResult<()> {
    let seed = base_config(cli)?.seed;
    let report = gradcheck_full_objective(args.dg, args.batch, seed, args.h)?;
    let pass = report.max_rel_err < args.tol;
    let worst = report.worst.as_ref().map(|(n, i)| format!("{n}[{i}]"));
    emit(
        cli,
        json!({
            "max_rel_err": report.max_rel_err,
            "coords": report.coords_checked,
            "worst": worst,
            "tol": args.tol,
            "pass": pass,
        }),
        || {
            format!(
                "max rel err {:.3e} over {} coords (worst {}), tol {:e}\n",
                report.max_rel_err,
                report.coords_checked,
                worst.as_deref().unwrap_or("-"),
                args.tol
            )
        },
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "gradient check max rel err {:.3e} exceeds {:e}",
            report.max_rel_err, args.tol
        )))
    }
}

fn dump_features(cli: &Cli, args: &DumpFeaturesArgs) -> CliResult<()> {
    let model = Model::load(&args.checkpoint)?;
    let samples = read_corpus(&args.samples)?;
    let media = checkpoint_media(cli, &model, &args.image_table, &args.speech_table)?;
    let features = model.features(&samples, &media)?;
    let mut w = create(&args.out)?;
    write_features(&mut w, &samples, &features, &model.categories)?;
    w.flush().map_err(|e| io_err(&args.out, e))?;
    emit(
        cli,
        json!({"rows": samples.len(), "cols": features.cols() + 2}),
        || format!("wrote {} rows to {}\n", samples.len(), args.out.display()),
    );
    Ok(())
}

/// Dispatches a parsed command line.
pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::BuildCorpus(a) => build_corpus(cli, a),
        Command::GenSynthetic(a) => gen_synthetic(cli, a),
        Command::Train(a) => run_train(cli, a),
        Command::Eval(a) => run_eval(cli, a),
        Command::Ablate(a) => run_ablate(cli, a),
        Command::Gradcheck(a) => run_gradcheck(cli, a),
        Command::DumpFeatures(a) => dump_features(cli, a),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parse_errors_are_usage() {
        assert_eq!(run(["komei", "train", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["komei"]), EXIT_USAGE);
        assert_eq!(run(["komei", "--help"]), EXIT_OK);
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(CliError::from(KomeiError::Config("x".into())).code(), EXIT_USAGE);
        assert_eq!(CliError::from(KomeiError::Format("x".into())).code(), EXIT_DATA);
        assert_eq!(CliError::Check("x".into()).code(), EXIT_CHECK);
        assert!(CliError::Data("bad".into()).to_string().starts_with("error[data]: "));
    }

    #[test]
    fn set_overrides_apply_after_file() {
        let mut cfg = TrainConfig::default();
        let data = DataArgs {
            overrides: vec!["epochs=7".into(), "share_an = false".into()],
            train: Some("t.jsonl".into()),
            ..DataArgs::default()
        };
        apply_data(&mut cfg, &data).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert!(!cfg.share_an);
        assert_eq!(cfg.paths.train.as_deref(), Some(Path::new("t.jsonl")));
        let bad = DataArgs {
            overrides: vec!["epochs".into()],
            ..DataArgs::default()
        };
        assert!(matches!(apply_data(&mut cfg, &bad), Err(CliError::Usage(_))));
    }
}
