//! `longner`: train, apply, evaluate and benchmark the long-document span
//! NER model.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data
//! error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use longner::config::RunConfig;
use longner::data::{gen_synthetic, load_jsonl, save_jsonl, Document, LabelSet, SynthSpec, Vocab};
use longner::decode::{evaluate, read_predictions, write_predictions, SpanPrediction};
use longner::model::{predict_all, train, Model};
use longner::oracles::alloc::CountingAlloc;
use longner::oracles::dense::DEFAULT_DENSE_CAP;
use longner::oracles::{bench, format_table};
use longner::Error;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(name = "longner", version, about = "Long-document span NER")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint.
    Train(TrainArgs),
    /// Predict entity spans for a dataset.
    Predict(PredictArgs),
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
    /// Write a synthetic corpus.
    GenSynth(GenSynthArgs),
    /// Measure memory and work of banded versus dense forward passes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training documents (JSONL).
    #[arg(long)]
    train: PathBuf,
    /// Development documents (JSONL) for model selection.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Output directory for the checkpoint and metrics.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Random seed; overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    /// Run configuration (TOML); its `data` and `decode` sections are used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Documents to annotate (JSONL; entities are ignored).
    #[arg(long)]
    input: PathBuf,
    /// Output prediction file (JSONL).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions: a prediction JSONL file or a document JSONL file.
    #[arg(long)]
    pred: PathBuf,
    /// Gold documents (JSONL).
    #[arg(long)]
    gold: PathBuf,
}

#[derive(Args)]
struct GenSynthArgs {
    /// Entity type specification (TOML). The built-in short/long spec is
    /// used when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output corpus (JSONL).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of documents.
    #[arg(long, default_value_t = 200)]
    n_docs: usize,
    /// Tokens per document.
    #[arg(long, default_value_t = 512)]
    doc_len: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Run configuration (TOML) describing the model.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated sequence lengths.
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256")]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Longest sequence given to the dense references.
    #[arg(long, default_value_t = DEFAULT_DENSE_CAP)]
    dense_cap: usize,
    /// Random seed; overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

struct Failure {
    code: u8,
    error: Error,
}

type CliResult<T> = std::result::Result<T, Failure>;

fn classify(error: Error, default: u8) -> Failure {
    let code = match error {
        Error::Config(_) => 2,
        Error::Data { .. } => 3,
        _ => default,
    };
    Failure { code, error }
}

fn config_stage<T>(r: longner::Result<T>) -> CliResult<T> {
    r.map_err(|e| classify(e, 2))
}

fn data_stage<T>(r: longner::Result<T>) -> CliResult<T> {
    r.map_err(|e| classify(e, 3))
}

fn run_stage<T>(r: longner::Result<T>) -> CliResult<T> {
    r.map_err(|e| classify(e, 1))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = config_stage(RunConfig::load(path))?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let mut cfg = load_config(args.config.as_deref(), args.seed)?;
    let (train_docs, labels) = data_stage(load_jsonl(&args.train, None))?;
    let dev_docs = match &args.dev {
        Some(p) => data_stage(load_jsonl(p, Some(&labels)))?.0,
        None => Vec::new(),
    };
    if labels.is_empty() {
        return Err(classify(
            Error::Data {
                doc: args.train.display().to_string(),
                msg: "no entity types in the training set".into(),
            },
            3,
        ));
    }
    run_stage(std::fs::create_dir_all(&args.out).map_err(Error::from))?;
    cfg.train.checkpoint = Some(args.out.clone());
    cfg.train.metrics = Some(args.out.join("metrics.jsonl"));
    let vocab = Vocab::build(&train_docs);
    let (mut model, mut store) = config_stage(Model::init(cfg.model(), vocab, labels, cfg.train.seed))?;
    let report = run_stage(train(
        &mut model,
        &mut store,
        &train_docs,
        &dev_docs,
        &cfg.train,
        &cfg.data,
        &cfg.decode,
    ))?;
    run_stage(model.save(&store, &args.out))?;
    println!(
        "trained {} steps; best dev F1 {:.4} at step {}; {} entities longer than the band were skipped",
        report.steps, report.best_f1, report.best_step, report.dropped_entities
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> CliResult<()> {
    let cfg = load_config(args.config.as_deref(), None)?;
    let (model, store) = run_stage(Model::load(&args.checkpoint))?;
    let (mut docs, _) = data_stage(load_jsonl(&args.input, None))?;
    docs.iter_mut().for_each(|d| d.entities.clear());
    let preds = data_stage(predict_all(&model, &store, &docs, &cfg.data, &cfg.decode))?;
    let named: Vec<(String, Vec<SpanPrediction>)> = docs.iter().map(|d| d.id.clone()).zip(preds).collect();
    run_stage(write_predictions(&args.out, &named, &model.labels))?;
    println!(
        "wrote {} predictions for {} documents",
        named.iter().map(|n| n.1.len()).sum::<usize>(),
        named.len()
    );
    Ok(())
}

/// Predictions from a prediction file, or from the entities of a document
/// file when the input is not a prediction file.
fn load_predictions(path: &Path, labels: &LabelSet) -> CliResult<BTreeMap<String, Vec<SpanPrediction>>> {
    match read_predictions(path, labels) {
        Ok(p) => Ok(p),
        Err(pred_err) => {
            let (docs, _) = load_jsonl(path, Some(labels)).map_err(|_| classify(pred_err, 3))?;
            Ok(docs.into_iter().map(|d| (d.id.clone(), entity_predictions(&d))).collect())
        }
    }
}

fn entity_predictions(doc: &Document) -> Vec<SpanPrediction> {
    doc.entities
        .iter()
        .map(|e| SpanPrediction {
            start: e.start,
            end: e.end,
            type_id: e.type_id,
            score: 1.0,
        })
        .collect()
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let (gold, labels) = data_stage(load_jsonl(&args.gold, None))?;
    let mut preds = load_predictions(&args.pred, &labels)?;
    if let Some(id) = preds.keys().find(|id| !gold.iter().any(|d| &d.id == *id)) {
        return Err(classify(
            Error::Data {
                doc: id.clone(),
                msg: "prediction for a document missing from the gold file".into(),
            },
            3,
        ));
    }
    let aligned: Vec<(Vec<SpanPrediction>, &Document)> = gold.iter().map(|d| (preds.remove(&d.id).unwrap_or_default(), d)).collect();
    let pairs: Vec<(&[SpanPrediction], &[longner::data::Entity])> =
        aligned.iter().map(|(p, d)| (p.as_slice(), d.entities.as_slice())).collect();
    print!("{}", evaluate(&pairs, &labels).to_table());
    Ok(())
}

fn cmd_gen_synth(args: GenSynthArgs) -> CliResult<()> {
    let spec = match &args.spec {
        Some(p) => config_stage(SynthSpec::load(p))?,
        None => SynthSpec::default(),
    };
    let docs = data_stage(gen_synthetic(args.n_docs, args.doc_len, args.seed, &spec))?;
    run_stage(save_jsonl(&docs, &spec.labels(), &args.out))?;
    println!("wrote {} documents to {}", docs.len(), args.out.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> CliResult<()> {
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    if let Some(&len) = args.lengths.iter().find(|&&l| l + 1 > cfg.encoder.max_len) {
        return Err(classify(
            Error::Config(format!("length {len} plus [CLS] exceeds encoder.max_len {}", cfg.encoder.max_len)),
            2,
        ));
    }
    let records = run_stage(bench(&cfg.model(), &args.lengths, args.repeats, args.dense_cap, cfg.train.seed))?;
    print!("{}", format_table(&records));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
