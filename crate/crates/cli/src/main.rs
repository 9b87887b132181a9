//! `vdr`: vocabulary building, synthetic data, training, prediction,
//! ensembling, evaluation and gradient checks.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use vdr_core::checks::{run_suite, ToyShape, DEFAULT_STEP, DEFAULT_TOL};
use vdr_core::data::{gen_synthetic, load_dialogs, load_features, RawDataset, RegionBounds, SyntheticConfig};
use vdr_core::ensemble::{combine, CombineMode};
use vdr_core::metrics::{evaluate, render_table, RankingReport};
use vdr_core::predictions::{PredictionSet, RoundPrediction};
use vdr_core::trainer::{pretrained_embedding, train, Checkpoint, TrainConfig, TrainData};
use vdr_core::vocab::{build_vocab, PretrainedVectors, RemapTable, Tokenizer, Vocabulary};
use vdr_core::{Error, Result};

use config::{resolve, Override};

#[derive(Parser)]
#[command(name = "vdr", version, about = "Discriminative visual dialog ranking pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from a dataset.
    BuildVocab(BuildVocabArgs),
    /// Write a synthetic corpus with a planted oracle.
    GenSynthetic(GenSyntheticArgs),
    /// Train a model, writing one checkpoint per epoch.
    Train(TrainArgs),
    /// Score every round of a dataset with a checkpoint.
    Predict(PredictArgs),
    /// Combine prediction files.
    Ensemble(EnsembleArgs),
    /// Rank metrics of prediction files against a dataset.
    Evaluate(EvaluateArgs),
    /// Finite-difference gradient checks on toy shapes.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct BuildVocabArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
}

#[derive(Args)]
struct GenSyntheticArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_dialogs: Option<usize>,
    #[arg(long)]
    n_rounds: Option<usize>,
    #[arg(long)]
    n_cand: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    d_img: Option<usize>,
    #[arg(long)]
    n_clusters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the planted cluster centers; share it across splits.
    #[arg(long)]
    world_seed: Option<u64>,
    #[arg(long)]
    first_id: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Text vector file (`token v1 .. vd` per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// `missing<TAB>target` remap table; the built-in "yes" table otherwise.
    #[arg(long)]
    remap: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    grad_clip_norm: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    embed_trainable: Option<bool>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long, default_value = "mean")]
    mode: CombineMode,
    #[arg(long = "in", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Prediction file; repeat for one table row per file.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Row names, in `--pred` order. Defaults to the file stems.
    #[arg(long)]
    name: Vec<String>,
    /// Report JSON; one report per input when several are given.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GradCheckConfig {
    seed: u64,
    step: f64,
    tol: f64,
    shape: ToyShape,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 0,
            step: DEFAULT_STEP,
            tol: DEFAULT_TOL,
            shape: ToyShape::default(),
        }
    }
}

fn echo_config(command: &str, config: &impl Serialize) {
    let text = serde_json::to_string(config).expect("config serializes");
    println!("{command} config: {text}");
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Config(format!("missing --{flag}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn build_vocab_cmd(a: BuildVocabArgs) -> Result<()> {
    echo_config("build-vocab", &json!({"data": a.data, "out": a.out, "min_count": a.min_count}));
    let raw = RawDataset::load(&a.data)?;
    let tokenizer = Tokenizer::new(&RemapTable::default_table());
    let vocab = build_vocab(&raw.token_sequences(&tokenizer), a.min_count)?;
    vocab.save(&a.out)?;
    println!("vocabulary: {} entries", vocab.len());
    Ok(())
}

fn gen_synthetic_cmd(a: GenSyntheticArgs) -> Result<()> {
    let cfg: SyntheticConfig = resolve(
        a.config.as_deref(),
        true,
        &[
            Override::new("n_dialogs", a.n_dialogs),
            Override::new("n_rounds", a.n_rounds),
            Override::new("n_cand", a.n_cand),
            Override::new("vocab_size", a.vocab_size),
            Override::new("d_img", a.d_img),
            Override::new("n_clusters", a.n_clusters),
            Override::new("seed", a.seed),
            Override::new("world_seed", a.world_seed),
            Override::new("first_id", a.first_id),
        ],
    )?;
    echo_config("gen-synthetic", &cfg);
    let corpus = gen_synthetic(&cfg)?;
    create_dir(&a.out_dir)?;
    corpus.dataset.to_raw(&corpus.vocab).save(&a.out_dir.join("dialogs.json"))?;
    corpus.features.save(&a.out_dir.join("features.vdf"))?;
    corpus.vocab.save(&a.out_dir.join("vocab.txt"))?;
    std::fs::write(a.out_dir.join("oracle.json"), serde_json::to_vec(&corpus.oracle)?)?;
    let mut rounds = Vec::with_capacity(corpus.dataset.num_rounds());
    for d in &corpus.dataset.dialogs {
        for (t, r) in d.rounds.iter().enumerate() {
            let scores = corpus.oracle.scores(d.dialog_id, r)?;
            rounds.push(RoundPrediction {
                dialog_id: d.dialog_id,
                round: t as u32 + 1,
                log_probs: vdr_core::diffcore::log_softmax(&scores)?,
            });
        }
    }
    PredictionSet::from_rounds(rounds)?.save(&a.out_dir.join("oracle_predictions.jsonl"))?;
    println!(
        "wrote {} dialogs x {} rounds to {}",
        cfg.n_dialogs,
        cfg.n_rounds,
        a.out_dir.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned()));
    let mut overrides = vec![
        Override::new("model", a.model.clone()),
        Override::new("epochs", a.epochs),
        Override::new("batch_size", a.batch_size),
        Override::new("learning_rate", a.lr),
        Override::new("grad_clip_norm", a.grad_clip_norm),
        Override::new("seed", a.seed),
        Override::new("eval_every", a.eval_every),
        Override::new("hidden", a.hidden),
        Override::new("embed_dim", a.embed_dim),
        Override::new("embed_trainable", a.embed_trainable),
    ];
    for (key, p) in [
        ("paths.data", &a.data),
        ("paths.features", &a.features),
        ("paths.vocab", &a.vocab),
        ("paths.embeddings", &a.embeddings),
        ("paths.remap", &a.remap),
        ("paths.output_dir", &a.output_dir),
    ] {
        overrides.push(Override::value(key, path(p)));
    }
    let mut cfg: TrainConfig = resolve(a.config.as_deref(), true, &overrides)?;
    let vectors = match &cfg.paths.embeddings {
        Some(p) => {
            let v = PretrainedVectors::load(p)?;
            if a.embed_dim.is_some_and(|d| d != v.dim()) {
                return Err(Error::Config(format!("--embed-dim conflicts with vector width {}", v.dim())));
            }
            cfg.embed_dim = v.dim();
            Some(v)
        }
        None => None,
    };
    cfg.validate()?;
    echo_config("train", &cfg);

    let out_dir = required(&cfg.paths.output_dir, "output-dir")?.to_path_buf();
    let vocab = Vocabulary::load(required(&cfg.paths.vocab, "vocab")?)?;
    let dataset = load_dialogs(required(&cfg.paths.data, "data")?, &vocab)?;
    let features = load_features(required(&cfg.paths.features, "features")?, RegionBounds::default())?;
    let embedding = match &vectors {
        Some(v) => {
            let table = match &cfg.paths.remap {
                Some(p) => RemapTable::load(p)?,
                None if RemapTable::default_table().iter().all(|(_, t)| v.get(t).is_some()) => {
                    RemapTable::default_table()
                }
                None => {
                    eprintln!("note: vector file lacks the built-in remap targets; no remapping");
                    RemapTable::empty()
                }
            };
            let (init, missing) = pretrained_embedding(&cfg, &vocab, v, &table)?;
            let (p, r, n) = init.provenance_counts();
            eprintln!("embedding rows: {p} pretrained, {r} remapped, {n} random ({} regular tokens)", missing.len());
            Some(init)
        }
        None => None,
    };
    create_dir(&out_dir)?;
    let data = TrainData {
        dataset: &dataset,
        features: &features,
        vocab: &vocab,
        embedding,
    };
    let last = train(&cfg, data, |ckpt| {
        let s = ckpt.history.last().expect("one entry per epoch");
        match (s.train_r1, s.train_mrr) {
            (Some(r1), Some(mrr)) => eprintln!(
                "epoch {} step {} loss {:.6} train R@1 {r1:.4} MRR {mrr:.4}",
                s.epoch, ckpt.step, s.mean_loss
            ),
            _ => eprintln!("epoch {} step {} loss {:.6}", s.epoch, ckpt.step, s.mean_loss),
        }
        ckpt.save(&out_dir.join(format!("epoch_{:03}.ckpt", ckpt.epoch)))
    })?;
    last.save(&out_dir.join("final.ckpt"))?;
    println!("final checkpoint: {}", out_dir.join("final.ckpt").display());
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    echo_config(
        "predict",
        &json!({
            "checkpoint": a.checkpoint, "data": a.data, "features": a.features, "out": a.out,
            "model": ckpt.train.model, "epoch": ckpt.epoch, "seed": ckpt.train.seed,
        }),
    );
    let dataset = load_dialogs(&a.data, &ckpt.vocab)?;
    let features = load_features(&a.features, RegionBounds::default())?;
    let preds = vdr_core::trainer::predict(&ckpt.model, &dataset, &features)?;
    preds.save(&a.out)?;
    println!("{} rounds written to {}", preds.len(), a.out.display());
    Ok(())
}

fn ensemble_cmd(a: EnsembleArgs) -> Result<()> {
    echo_config("ensemble", &json!({"mode": a.mode, "inputs": a.inputs, "out": a.out}));
    let inputs = a
        .inputs
        .iter()
        .map(|p| PredictionSet::load(p))
        .collect::<Result<Vec<_>>>()?;
    let out = combine(&inputs, a.mode)?;
    out.save(&a.out)?;
    println!("{} rounds written to {}", out.len(), a.out.display());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    if !a.name.is_empty() && a.name.len() != a.pred.len() {
        return Err(Error::Config(format!("{} --name values for {} --pred files", a.name.len(), a.pred.len())));
    }
    let names: Vec<String> = if a.name.is_empty() {
        a.pred
            .iter()
            .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
            .collect()
    } else {
        a.name.clone()
    };
    echo_config("evaluate", &json!({"pred": a.pred, "name": names, "data": a.data, "out": a.out}));
    // Ranking needs only ground-truth indices and relevance, not token ids.
    let dataset = load_dialogs(&a.data, &Vocabulary::from_tokens(Vec::<String>::new()))?;
    let mut rows: Vec<(String, RankingReport)> = Vec::new();
    for (name, path) in names.into_iter().zip(&a.pred) {
        rows.push((name, evaluate(&PredictionSet::load(path)?, &dataset)?));
    }
    print!("{}", render_table(&rows));
    if let Some(out) = &a.out {
        let text = if rows.len() == 1 {
            serde_json::to_string_pretty(&rows[0].1)?
        } else {
            let named: Vec<Value> = rows.iter().map(|(n, r)| json!({"name": n, "report": r})).collect();
            serde_json::to_string_pretty(&named)?
        };
        std::fs::write(out, text)?;
    }
    Ok(())
}

/// Returns whether every component passed.
fn grad_check_cmd(a: GradCheckArgs) -> Result<bool> {
    let cfg: GradCheckConfig = resolve(
        a.config.as_deref(),
        true,
        &[
            Override::new("seed", a.seed),
            Override::new("step", a.step),
            Override::new("tol", a.tol),
        ],
    )?;
    echo_config("grad-check", &cfg);
    let start = std::time::Instant::now();
    let reports = run_suite(cfg.seed, cfg.shape, cfg.step, cfg.tol)?;
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(0);
    println!("{:<width$}  {:>12}  {:>12}  result", "component", "max_rel_err", "max_abs_diff");
    let max_abs = |r: &vdr_core::checks::NamedReport| r.report.params.iter().map(|p| p.max_abs_diff).fold(0.0, f64::max);
    let mut all = true;
    for r in &reports {
        let pass = r.report.passed;
        all &= pass;
        println!(
            "{:<width$}  {:>12.3e}  {:>12.3e}  {}",
            r.name,
            r.report.max_rel_error,
            max_abs(r),
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("{} components in {:.2}s", reports.len(), start.elapsed().as_secs_f64());
    Ok(all)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::BuildVocab(a) => build_vocab_cmd(a)?,
        Command::GenSynthetic(a) => gen_synthetic_cmd(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Predict(a) => predict_cmd(a)?,
        Command::Ensemble(a) => ensemble_cmd(a)?,
        Command::Evaluate(a) => evaluate_cmd(a)?,
        Command::GradCheck(a) => {
            if !grad_check_cmd(a)? {
                eprintln!("error: grad-check-failed");
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
