//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::data::{generate_synthetic, load_dataset, load_with_vocab, sidecar_path, Dataset, Schema, Split, SyntheticConfig};
use crate::embedding::{load_embeddings, ArgumentTable, Modality, SentimentLexicon};
use crate::error::{Error, Result};
use crate::fusion::softmax;
use crate::interpret::{entanglement_report, predict_fragment, subset_contexts, subset_metrics, ModalitySubset};
use crate::trainer::{
    evaluate, grid_search, pretrain_nontextual, train, unix_timestamp, write_run_log, FinalRecord, Grid, Resources,
    RunConfig, SavedModel,
};
use crate::verify;

#[derive(Parser, Debug)]
#[command(name = "qmf", version, about = "Quantum-inspired multimodal sentiment fusion")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write the run log and parameters.
    Train(TrainArgs),
    /// Score a trained model on one split.
    Eval(EvalArgs),
    /// Learn visual or acoustic argument tables on unimodal data.
    Pretrain(PretrainArgs),
    /// Sample configurations from the hyperparameter grid and train each.
    Gridsearch(GridArgs),
    /// Unimodal/bimodal decisions, fragment scores and eigenstate entanglement.
    Interpret(InterpretArgs),
    /// Write a synthetic dataset with embedding, lexicon and schema sidecars.
    Synth(SynthArgs),
    /// Run the algebra, separability and gradient-check suites.
    Check(CheckArgs),
    /// Dump the observable and, optionally, one sentence's context states.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct DataFlags {
    /// Dataset in JSON lines.
    #[arg(long)]
    data: PathBuf,
    /// Schema file [default: <data>.cfg if present, else L=50, 35/74/300 widths].
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Embedding file [default: <data>.emb if present, else random rows].
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Sentiment lexicon [default: <data>.lex; all-neutral when missing].
    #[arg(long)]
    lexicon: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct RunFlags {
    /// Flat `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Textual state dimension [default: 5].
    #[arg(long)]
    tdim: Option<usize>,
    /// Visual state dimension [default: 5].
    #[arg(long)]
    vdim: Option<usize>,
    /// Acoustic state dimension [default: 5].
    #[arg(long)]
    adim: Option<usize>,
    /// Context window lengths [default: 1,2].
    #[arg(long, value_delimiter = ',')]
    window_lengths: Option<Vec<usize>>,
    /// Number of measurement eigenstates [default: 10].
    #[arg(long)]
    k: Option<usize>,
    /// Output-net hidden width [default: 16].
    #[arg(long)]
    hidden: Option<usize>,
    /// Mini-batch size [default: 32].
    #[arg(long)]
    batch: Option<usize>,
    /// RMSprop learning rate [default: 0.005].
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs [default: 100].
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed for every random draw [default: 42].
    #[arg(long)]
    seed: Option<u64>,
    /// qmf, real, rand-init, global-mixture or average-pool [default: qmf].
    #[arg(long)]
    variant: Option<String>,
    /// Global gradient-norm clip [default: 5.0].
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Disable gradient clipping.
    #[arg(long)]
    no_clip: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    run: RunFlags,
    /// Epochs of visual and acoustic pretraining before the main run [default: 0].
    #[arg(long, default_value_t = 0)]
    pretrain_epochs: usize,
    /// Pretrained visual argument table (from `pretrain`).
    #[arg(long)]
    visual_args: Option<PathBuf>,
    /// Pretrained acoustic argument table (from `pretrain`).
    #[arg(long)]
    acoustic_args: Option<PathBuf>,
    /// Run log [default: <data>.run.jsonl].
    #[arg(long)]
    log: Option<PathBuf>,
    /// Trained model [default: <data>.model.json].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Trained model.
    #[arg(long)]
    model: PathBuf,
    /// Dataset in JSON lines.
    #[arg(long)]
    data: PathBuf,
    /// train, valid or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    run: RunFlags,
    /// `v` (visual) or `a` (acoustic).
    #[arg(long)]
    modality: char,
    /// Output argument table [default: <data>.<modality>.args.json].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    run: RunFlags,
    /// Number of sampled configurations.
    #[arg(long, default_value_t = 50)]
    budget: usize,
    /// Parallel training runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Results log [default: <data>.grid.jsonl].
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InterpretArgs {
    /// Trained model.
    #[arg(long)]
    model: PathBuf,
    /// Dataset in JSON lines.
    #[arg(long)]
    data: PathBuf,
    /// train, valid or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Fragments as `sentence:start:len`, repeatable.
    #[arg(long = "fragment")]
    fragments: Vec<String>,
    /// Separability tolerance on reduced purity.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of sentences.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output dataset path; sidecars are written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Padded sentence length.
    #[arg(long, default_value_t = 20)]
    max_len: usize,
    /// Vocabulary size.
    #[arg(long, default_value_t = 80)]
    vocab: usize,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Seed for the randomized suites.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Trained model.
    #[arg(long)]
    model: PathBuf,
    /// Dataset holding the sentence to expand.
    #[arg(long)]
    data: Option<PathBuf>,
    /// train, valid or test.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Index of the sentence within the split.
    #[arg(long)]
    sentence: Option<usize>,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split `{other}`")),
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::InvalidArgument(_)) {
        1
    } else {
        2
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Gridsearch(a) => cmd_grid(a),
        Command::Interpret(a) => cmd_interpret(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Check(a) => cmd_check(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn run_config(flags: &RunFlags) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &flags.config {
        cfg = cfg.apply_text(&std::fs::read_to_string(path)?)?;
    }
    macro_rules! set {
        ($field:ident, $flag:ident) => {
            if let Some(v) = flags.$flag.clone() {
                cfg.$field = v;
            }
        };
    }
    set!(t_dim, tdim);
    set!(v_dim, vdim);
    set!(a_dim, adim);
    set!(window_lengths, window_lengths);
    set!(k, k);
    set!(hidden, hidden);
    set!(batch, batch);
    set!(lr, lr);
    set!(epochs, epochs);
    set!(seed, seed);
    if let Some(v) = &flags.variant {
        cfg.variant = v.parse()?;
    }
    if let Some(c) = flags.clip_norm {
        cfg.clip_norm = Some(c);
    }
    if flags.no_clip {
        cfg.clip_norm = None;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn existing(explicit: &Option<PathBuf>, data: &Path, ext: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| Some(sidecar_path(data, ext)).filter(|p| p.exists()))
}

fn load_data(flags: &DataFlags) -> Result<Dataset> {
    let schema = match existing(&flags.schema, &flags.data, "cfg") {
        Some(p) => Schema::load(&p)?,
        None => Schema::default(),
    };
    load_dataset(&flags.data, &schema)
}

fn load_resources(flags: &DataFlags, ds: &Dataset, seed: u64) -> Result<Resources> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embeddings = match existing(&flags.embeddings, &flags.data, "emb") {
        Some(p) => Some(load_embeddings(&p, &ds.vocab, ds.schema.embedding_dim, &mut rng)?),
        None => None,
    };
    let lexicon_path = flags.lexicon.clone().unwrap_or_else(|| sidecar_path(&flags.data, "lex"));
    let lexicon = SentimentLexicon::load(&lexicon_path)?;
    Ok(Resources { embeddings, lexicon, pretrained: Vec::new() })
}

fn load_argument_table(path: &Path, expected: Modality, ds: &Dataset) -> Result<ArgumentTable> {
    let table: ArgumentTable = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
    if table.modality != expected || table.table.rows != ds.vocab.len() {
        return Err(Error::Data(format!(
            "{} holds a {:?} table with {} rows; expected {:?} with {} rows",
            path.display(),
            table.modality,
            table.table.rows,
            expected,
            ds.vocab.len()
        )));
    }
    Ok(table)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = run_config(&a.run)?;
    let ds = load_data(&a.data)?;
    let mut resources = load_resources(&a.data, &ds, cfg.seed)?;
    if a.pretrain_epochs > 0 {
        let pre = RunConfig { epochs: a.pretrain_epochs, ..cfg.clone() };
        for m in [Modality::Visual, Modality::Acoustic] {
            resources.pretrained.push(pretrain_nontextual(m, &ds, &pre)?);
        }
    }
    for (path, m) in [(&a.visual_args, Modality::Visual), (&a.acoustic_args, Modality::Acoustic)] {
        if let Some(p) = path {
            resources.pretrained.retain(|t| t.modality != m);
            resources.pretrained.push(load_argument_table(p, m, &ds)?);
        }
    }
    let outcome = train(&ds, &resources, &cfg)?;
    let metrics = if ds.splits.test.is_empty() { None } else { Some(evaluate(&outcome.model, &ds.splits.test)?) };
    let fin = FinalRecord {
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        metrics,
        config: cfg.clone(),
        timestamp: unix_timestamp(),
    };
    let log_path = a.log.unwrap_or_else(|| sidecar_path(&a.data.data, "run.jsonl"));
    write_run_log(&log_path, &outcome.log, &fin)?;
    let out = a.out.unwrap_or_else(|| sidecar_path(&a.data.data, "model.json"));
    SavedModel { params: outcome.model, vocab: ds.vocab, schema: ds.schema, config: cfg }.save(&out)?;
    println!(
        "{}",
        json!({
            "best_epoch": fin.best_epoch,
            "best_val_loss": fin.best_val_loss,
            "initial_train_loss": outcome.log[0].train_loss,
            "final_train_loss": outcome.log.last().map(|r| r.train_loss),
            "test": fin.metrics,
            "log": log_path,
            "model": out,
        })
    );
    Ok(())
}

fn load_model_data(model: &Path, data: &Path, split: Split) -> Result<(SavedModel, Vec<crate::data::MultimodalSentence>)> {
    let saved = SavedModel::load(model)?;
    let mut splits = load_with_vocab(data, &saved.schema, &saved.vocab)?;
    let sentences = std::mem::take(splits.get_mut(split));
    Ok((saved, sentences))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (saved, sentences) = load_model_data(&a.model, &a.data, a.split)?;
    let metrics = evaluate(&saved.params, &sentences)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = run_config(&a.run)?;
    let modality = Modality::from_tag(a.modality)
        .filter(|&m| m != Modality::Textual)
        .ok_or_else(|| Error::InvalidArgument("--modality must be `v` or `a`".into()))?;
    let ds = load_data(&a.data)?;
    let table = pretrain_nontextual(modality, &ds, &cfg)?;
    let out = a
        .out
        .unwrap_or_else(|| sidecar_path(&a.data.data, &format!("{}.args.json", modality.tag())));
    serde_json::to_writer(std::io::BufWriter::new(std::fs::File::create(&out)?), &table)?;
    println!("{}", json!({ "modality": modality, "rows": table.table.rows, "cols": table.table.cols, "out": out }));
    Ok(())
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    let base = run_config(&a.run)?;
    let ds = load_data(&a.data)?;
    let resources = load_resources(&a.data, &ds, base.seed)?;
    let result = grid_search(&ds, &resources, &Grid::default(), &base, a.budget, a.jobs)?;
    let log = a.log.unwrap_or_else(|| sidecar_path(&a.data.data, "grid.jsonl"));
    let mut lines = Vec::with_capacity(result.runs.len() + 1);
    for run in &result.runs {
        lines.push(serde_json::to_string(run)?);
    }
    lines.push(serde_json::to_string(&json!({ "best": result.best, "timestamp": unix_timestamp() }))?);
    std::fs::write(&log, lines.join("\n") + "\n")?;
    println!("{}", serde_json::to_string(&result.runs[result.best])?);
    Ok(())
}

fn parse_fragment(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(':')
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("fragment `{s}` must be sentence:start:len")))?;
    match parts[..] {
        [i, start, len] => Ok((i, start, len)),
        _ => Err(Error::InvalidArgument(format!("fragment `{s}` must be sentence:start:len"))),
    }
}

fn cmd_interpret(a: InterpretArgs) -> Result<()> {
    let (saved, sentences) = load_model_data(&a.model, &a.data, a.split)?;
    let model = &saved.params;
    let mut subsets = Vec::new();
    if !sentences.is_empty() {
        for subset in ModalitySubset::enumerate() {
            let metrics = subset_metrics(model, &sentences, &subset)?;
            subsets.push(json!({ "subset": subset.to_string(), "metrics": metrics }));
        }
    }
    let mut fragments = Vec::new();
    for f in &a.fragments {
        let (i, start, len) = parse_fragment(f)?;
        let s = sentences
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("sentence {i} not in the split")))?;
        let words: Vec<&str> = s.words[start.min(s.len())..(start + len).min(s.len())]
            .iter()
            .map(|&w| saved.vocab.word(w))
            .collect();
        let score = predict_fragment(model, s, start, len)?;
        fragments.push(json!({ "sentence": i, "start": start, "len": len, "words": words, "score": score }));
    }
    let report = json!({
        "subsets": subsets,
        "fragments": fragments,
        "entanglement": entanglement_report(&model.observable(), a.tol)?,
    });
    let text = serde_json::to_string_pretty(&report)?;
    match a.out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if a.max_len < 4 || a.vocab < 2 {
        return Err(Error::InvalidArgument("--max-len must be at least 4 and --vocab at least 2".into()));
    }
    let cfg = SyntheticConfig { max_len: a.max_len, vocab_words: a.vocab, ..SyntheticConfig::default() };
    let corpus = generate_synthetic(a.n, a.seed, &cfg);
    corpus.write(&a.out)?;
    println!("{}", json!({ "sentences": corpus.records.len(), "out": a.out }));
    Ok(())
}

fn cmd_check(a: CheckArgs) -> Result<()> {
    let reports = verify::run_all(a.seed)?;
    for r in &reports {
        println!("{}", r.line());
    }
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Error::InvalidState("self-check failed".into()))
    }
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let saved = SavedModel::load(&a.model)?;
    let model = &saved.params;
    let obs = model.observable();
    let beta = softmax(&model.store.value(model.beta).data);
    let mut report = json!({
        "spec": model.spec,
        "modality_weights": beta,
        "observable": { "dims": obs.dims, "eigenstates": obs.eigenstates()? },
    });
    if let (Some(data), Some(i)) = (&a.data, a.sentence) {
        let mut splits = load_with_vocab(data, &saved.schema, &saved.vocab)?;
        let sentences = std::mem::take(splits.get_mut(a.split));
        let s = sentences
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("sentence {i} not in the split")))?;
        let contexts = subset_contexts(model, s, &ModalitySubset::all())?;
        let ctx: Vec<_> = contexts
            .contexts
            .iter()
            .map(|c| json!({ "start": c.start, "len": c.len, "weights": c.weights, "rho": c.rho }))
            .collect();
        report["sentence"] = json!({ "index": i, "prediction": model.predict(s)?, "label": s.label, "contexts": ctx });
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
