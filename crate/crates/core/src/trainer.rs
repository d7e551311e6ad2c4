//! Training, evaluation, pretraining of the non-textual arguments, grid
//! search and the ablation variants.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{RmsProp, Tensor};
use crate::data::{parse_key_value, pearson, Dataset, MultimodalSentence, Schema, LABEL_RANGE};
use crate::embedding::{init_textual_arguments, random_arguments, ArgumentTable, Modality, SentimentLexicon, Vocabulary};
use crate::error::{Error, Result};
use crate::measurement::Pooling;
use crate::model::{Initialization, Mixture, ModelParams, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Qmf,
    Real,
    RandInit,
    GlobalMixture,
    AveragePool,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Qmf, Variant::Real, Variant::RandInit, Variant::GlobalMixture, Variant::AveragePool];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Qmf => "qmf",
            Variant::Real => "real",
            Variant::RandInit => "rand-init",
            Variant::GlobalMixture => "global-mixture",
            Variant::AveragePool => "average-pool",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub t_dim: usize,
    pub v_dim: usize,
    pub a_dim: usize,
    pub window_lengths: Vec<usize>,
    pub k: usize,
    pub hidden: usize,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Global gradient-norm clip; `None` disables it.
    pub clip_norm: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t_dim: 5,
            v_dim: 5,
            a_dim: 5,
            window_lengths: vec![1, 2],
            k: 10,
            hidden: 16,
            batch: 32,
            lr: 0.005,
            epochs: 100,
            seed: 42,
            variant: Variant::Qmf,
            clip_norm: Some(5.0),
        }
    }
}

/// The searched hyperparameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: Vec<usize>,
    pub window_lengths: Vec<usize>,
    pub k: Vec<usize>,
    pub hidden: Vec<usize>,
    pub batch: Vec<usize>,
    pub lr: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            dims: vec![5, 10, 20],
            window_lengths: vec![1, 2, 3, 4],
            k: vec![10, 20, 30, 50, 80],
            hidden: vec![16, 32, 48, 64, 80],
            batch: vec![32, 64, 96],
            lr: vec![0.001, 0.002, 0.005, 0.008, 0.01],
        }
    }
}

impl Grid {
    /// Radices of the mixed-radix configuration index. Window sets are
    /// the non-empty subsets of `window_lengths`.
    fn radices(&self) -> [usize; 8] {
        let subsets = (1usize << self.window_lengths.len()).saturating_sub(1);
        [
            self.dims.len(),
            self.dims.len(),
            self.dims.len(),
            subsets,
            self.k.len(),
            self.hidden.len(),
            self.batch.len(),
            self.lr.len(),
        ]
    }

    pub fn size(&self) -> usize {
        self.radices().iter().product()
    }

    /// Decodes configuration number `index` on top of `base`.
    pub fn config(&self, mut index: usize, base: &RunConfig) -> RunConfig {
        let mut digits = [0usize; 8];
        for (d, r) in digits.iter_mut().zip(self.radices()) {
            *d = index % r;
            index /= r;
        }
        let mask = digits[3] + 1;
        RunConfig {
            t_dim: self.dims[digits[0]],
            v_dim: self.dims[digits[1]],
            a_dim: self.dims[digits[2]],
            window_lengths: (0..self.window_lengths.len())
                .filter(|b| mask & (1 << b) != 0)
                .map(|b| self.window_lengths[b])
                .collect(),
            k: self.k[digits[4]],
            hidden: self.hidden[digits[5]],
            batch: self.batch[digits[6]],
            lr: self.lr[digits[7]],
            ..base.clone()
        }
    }
}

fn parse_list<T: FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|p| p.trim().parse::<T>())
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|_| Error::InvalidArgument(format!("`{key}` needs a comma-separated list")))
}

fn parse_value<T: FromStr>(value: &str, key: &str) -> Result<T> {
    value.parse().map_err(|_| Error::InvalidArgument(format!("bad value `{value}` for `{key}`")))
}

impl RunConfig {
    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(mut self, text: &str) -> Result<RunConfig> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = parse_key_value(line)
                .ok_or_else(|| Error::InvalidArgument(format!("expected `key = value`, got `{line}`")))?;
            match key.replace('-', "_").as_str() {
                "tdim" | "t_dim" => self.t_dim = parse_value(value, key)?,
                "vdim" | "v_dim" => self.v_dim = parse_value(value, key)?,
                "adim" | "a_dim" => self.a_dim = parse_value(value, key)?,
                "window_lengths" => self.window_lengths = parse_list(value, key)?,
                "k" => self.k = parse_value(value, key)?,
                "hidden" => self.hidden = parse_value(value, key)?,
                "batch" => self.batch = parse_value(value, key)?,
                "lr" => self.lr = parse_value(value, key)?,
                "epochs" => self.epochs = parse_value(value, key)?,
                "seed" => self.seed = parse_value(value, key)?,
                "variant" => self.variant = value.parse()?,
                "clip_norm" => {
                    self.clip_norm = match value {
                        "none" | "off" => None,
                        v => Some(parse_value(v, key)?),
                    }
                }
                other => return Err(Error::InvalidArgument(format!("unknown config key `{other}`"))),
            }
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_dim == 0 || self.v_dim == 0 || self.a_dim == 0 || self.k == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument("dimensions, K and hidden width must be positive".into()));
        }
        if self.batch == 0 || self.window_lengths.is_empty() || self.window_lengths.contains(&0) {
            return Err(Error::InvalidArgument("batch and window lengths must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// Values outside the searched grid are allowed but reported.
    pub fn off_grid(&self) -> Vec<String> {
        let g = Grid::default();
        let mut out = Vec::new();
        for (name, v) in [("tdim", self.t_dim), ("vdim", self.v_dim), ("adim", self.a_dim)] {
            if !g.dims.contains(&v) {
                out.push(format!("{name} = {v}"));
            }
        }
        if let Some(w) = self.window_lengths.iter().find(|w| !g.window_lengths.contains(w)) {
            out.push(format!("window length {w}"));
        }
        if !g.k.contains(&self.k) {
            out.push(format!("k = {}", self.k));
        }
        if !g.hidden.contains(&self.hidden) {
            out.push(format!("hidden = {}", self.hidden));
        }
        if !g.batch.contains(&self.batch) {
            out.push(format!("batch = {}", self.batch));
        }
        if !g.lr.contains(&self.lr) {
            out.push(format!("lr = {}", self.lr));
        }
        out
    }

    /// Model layout for this configuration, including the variant's
    /// structural changes.
    pub fn model_spec(&self, vocab_size: usize, schema: &Schema) -> ModelSpec {
        let scale = if self.variant == Variant::Real { 2 } else { 1 };
        ModelSpec {
            vocab_size,
            embed_dim: schema.embedding_dim,
            visual_in: schema.visual_dim,
            acoustic_in: schema.acoustic_dim,
            state_dims: [self.t_dim * scale, self.v_dim * scale, self.a_dim * scale],
            modalities: Modality::ALL.to_vec(),
            aspects: self.k * scale,
            hidden: self.hidden,
            window_lengths: self.window_lengths.clone(),
            mixture: if self.variant == Variant::GlobalMixture { Mixture::Global } else { Mixture::Local },
            pooling: if self.variant == Variant::AveragePool { Pooling::Average } else { Pooling::Max },
            real: self.variant == Variant::Real,
        }
    }
}

/// External starting points for a run.
#[derive(Clone, Debug, Default)]
pub struct Resources {
    pub embeddings: Option<Tensor>,
    pub lexicon: SentimentLexicon,
    /// Pretrained visual and acoustic argument tables.
    pub pretrained: Vec<ArgumentTable>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc7: f64,
    pub acc2: f64,
    pub f1: f64,
    pub mae: f64,
    pub corr: f64,
    /// False when predictions or labels are constant and `corr` is a
    /// placeholder zero.
    pub corr_defined: bool,
}

fn seven_class(x: f64) -> i64 {
    x.clamp(-LABEL_RANGE, LABEL_RANGE).round() as i64
}

/// Metrics of a prediction vector. Binary accuracy and F1 skip zero
/// labels; a prediction of exactly zero counts as positive.
pub fn compute_metrics(preds: &[f64], labels: &[f64]) -> Result<Metrics> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "metrics need matching non-empty vectors, got {} and {}",
            preds.len(),
            labels.len()
        )));
    }
    let n = preds.len() as f64;
    let acc7 = preds.iter().zip(labels).filter(|(p, y)| seven_class(**p) == seven_class(**y)).count() as f64 / n;
    let mae = preds.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / n;
    let (mut agree, mut total, mut tp, mut pred_pos, mut true_pos) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in preds.iter().zip(labels) {
        if y == 0.0 {
            continue;
        }
        total += 1;
        let (pp, yp) = (p >= 0.0, y > 0.0);
        agree += usize::from(pp == yp);
        pred_pos += usize::from(pp);
        true_pos += usize::from(yp);
        tp += usize::from(pp && yp);
    }
    let acc2 = if total > 0 { agree as f64 / total as f64 } else { 0.0 };
    let precision = if pred_pos > 0 { tp as f64 / pred_pos as f64 } else { 0.0 };
    let recall = if true_pos > 0 { tp as f64 / true_pos as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let corr = pearson(preds, labels);
    Ok(Metrics { acc7, acc2, f1, mae, corr: corr.unwrap_or(0.0), corr_defined: corr.is_some() })
}

pub fn evaluate(model: &ModelParams, split: &[MultimodalSentence]) -> Result<Metrics> {
    if split.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let preds = model.predict_all(split)?;
    let labels: Vec<f64> = split.iter().map(|s| s.label).collect();
    compute_metrics(&preds, &labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Test-split metrics of the selected parameters, when a test split exists.
    pub metrics: Option<Metrics>,
    pub config: RunConfig,
    pub timestamp: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelParams,
    /// Epoch 0 holds the losses of the initial parameters.
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainOutcome {
    pub fn initial_train_loss(&self) -> f64 {
        self.log[0].train_loss
    }

    pub fn final_train_loss(&self) -> f64 {
        self.log.last().expect("log has the initial record").train_loss
    }
}

fn divergence(epoch: usize, what: &str, cfg: &RunConfig) -> Error {
    let echo = serde_json::to_string(cfg).unwrap_or_default();
    Error::Divergence(format!("non-finite {what} at epoch {epoch}; config {echo}"))
}

/// Mini-batch RMSprop over the training split, keeping the parameters with
/// the lowest validation loss (training loss when there is no validation
/// split).
pub fn train_model(
    mut model: ModelParams,
    train: &[MultimodalSentence],
    valid: &[MultimodalSentence],
    cfg: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let selection = if valid.is_empty() {
        log::warn!("no validation split; selecting on training loss");
        train
    } else {
        valid
    };
    let mut opt = RmsProp::new(&model.store, cfg.lr);
    let losses = |m: &ModelParams, epoch: usize| -> Result<EpochRecord> {
        let train_loss = m.loss(train)?;
        let val_loss = m.loss(selection)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(divergence(epoch, "loss", cfg));
        }
        Ok(EpochRecord { epoch, train_loss, val_loss })
    };
    let first = losses(&model, 0)?;
    let mut log = vec![first];
    let (mut best, mut best_epoch, mut best_val) = (model.clone(), 0, first.val_loss);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&MultimodalSentence> = chunk.iter().map(|&i| &train[i]).collect();
            let graph = model.forward_loss(&batch).map_err(|e| match e {
                Error::NonFinite { .. } => divergence(epoch, &e.to_string(), cfg),
                other => other,
            })?;
            let mut grads = model.backward(&graph);
            if !grads.global_norm().is_finite() {
                return Err(divergence(epoch, "gradient", cfg));
            }
            if let Some(c) = cfg.clip_norm {
                grads.clip_global_norm(c);
            }
            opt.step(&mut model.store, &grads);
        }
        let rec = losses(&model, epoch)?;
        log::info!("epoch {epoch}: train {:.4} val {:.4}", rec.train_loss, rec.val_loss);
        log.push(rec);
        if rec.val_loss < best_val {
            best = model.clone();
            best_epoch = epoch;
            best_val = rec.val_loss;
        }
    }
    Ok(TrainOutcome { model: best, log, best_epoch, best_val_loss: best_val })
}

/// Builds the initial trimodal model for `cfg`. Textual arguments come from
/// the lexicon (uniform in `[-pi, pi]` for the random-init variant);
/// visual and acoustic ones from `resources.pretrained` when present.
pub fn initial_model(dataset: &Dataset, resources: &Resources, cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<ModelParams> {
    cfg.validate()?;
    for w in cfg.off_grid() {
        log::warn!("config value off the search grid: {w}");
    }
    let spec = cfg.model_spec(dataset.vocab.len(), &dataset.schema);
    let mut init = Initialization { embeddings: resources.embeddings.clone(), ..Default::default() };
    if !spec.real {
        let t = spec.state_dims[Modality::Textual.index()];
        init.arguments[Modality::Textual.index()] = Some(if cfg.variant == Variant::RandInit {
            random_arguments(Modality::Textual, dataset.vocab.len(), t, rng).table
        } else {
            init_textual_arguments(&dataset.vocab, &resources.lexicon, t).table
        });
        for table in &resources.pretrained {
            init.arguments[table.modality.index()] = Some(table.table.clone());
        }
    }
    ModelParams::init(spec, init, rng)
}

/// Trains the trimodal model described by `cfg`.
pub fn train(dataset: &Dataset, resources: &Resources, cfg: &RunConfig) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = initial_model(dataset, resources, cfg, &mut rng)?;
    train_model(model, &dataset.splits.train, &dataset.splits.valid, cfg, &mut rng)
}

/// Trains a unimodal pipeline (reducer, global mixture, measurement, output
/// net) on one non-textual modality from random arguments and returns the
/// learned argument table.
pub fn pretrain_nontextual(modality: Modality, dataset: &Dataset, cfg: &RunConfig) -> Result<ArgumentTable> {
    if modality == Modality::Textual {
        return Err(Error::InvalidArgument("pretraining applies to the visual or acoustic modality".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = RunConfig { variant: Variant::Qmf, ..cfg.clone() };
    let mut spec = base.model_spec(dataset.vocab.len(), &dataset.schema);
    spec.modalities = vec![modality];
    spec.mixture = Mixture::Global;
    let model = ModelParams::init(spec, Initialization::default(), &mut rng)?;
    let outcome = train_model(model, &dataset.splits.train, &dataset.splits.valid, &base, &mut rng)?;
    let table = outcome.model.argument_table(modality).expect("active modality").clone();
    Ok(ArgumentTable { modality, table })
}

/// Trains `variant` with otherwise identical settings and reports test
/// metrics.
pub fn run_variant(variant: Variant, dataset: &Dataset, resources: &Resources, cfg: &RunConfig) -> Result<(TrainOutcome, Metrics)> {
    let cfg = RunConfig { variant, ..cfg.clone() };
    let outcome = train(dataset, resources, &cfg)?;
    let metrics = evaluate(&outcome.model, &dataset.splits.test)?;
    Ok((outcome, metrics))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub config: RunConfig,
    pub best_val_loss: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub runs: Vec<GridRun>,
    pub best: usize,
}

/// Configuration indices sampled without replacement; exhaustive when the
/// budget covers the grid.
pub fn grid_indices(grid: &Grid, budget: usize, seed: u64) -> Vec<usize> {
    let size = grid.size();
    if budget >= size {
        return (0..size).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, size, budget).into_vec()
}

/// Trains `budget` sampled configurations, selects by validation loss and
/// reports test metrics of every run. Runs are spread over `jobs` threads;
/// the result order follows the sampled sequence.
pub fn grid_search(
    dataset: &Dataset,
    resources: &Resources,
    grid: &Grid,
    base: &RunConfig,
    budget: usize,
    jobs: usize,
) -> Result<GridResult> {
    if budget == 0 {
        return Err(Error::InvalidArgument("grid search budget must be positive".into()));
    }
    let configs: Vec<RunConfig> =
        grid_indices(grid, budget, base.seed).into_iter().map(|i| grid.config(i, base)).collect();
    let run_one = |cfg: &RunConfig| -> Result<GridRun> {
        let outcome = train(dataset, resources, cfg)?;
        let metrics = evaluate(&outcome.model, &dataset.splits.test)?;
        Ok(GridRun { config: cfg.clone(), best_val_loss: outcome.best_val_loss, metrics })
    };
    let jobs = jobs.clamp(1, configs.len());
    let results: Vec<Result<GridRun>> = if jobs == 1 {
        configs.iter().map(run_one).collect()
    } else {
        let mut slots: Vec<Option<Result<GridRun>>> = (0..configs.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|j| {
                    let configs = &configs;
                    let run_one = &run_one;
                    scope.spawn(move || {
                        (j..configs.len()).step_by(jobs).map(|i| (i, run_one(&configs[i]))).collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("grid worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every slot filled")).collect()
    };
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.best_val_loss.total_cmp(&b.1.best_val_loss))
        .map(|(i, _)| i)
        .expect("at least one run");
    Ok(GridResult { runs, best })
}

/// A trained model with everything needed to score new data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedModel {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub schema: Schema,
    pub config: RunConfig,
}

impl SavedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let out = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SavedModel> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut model: SavedModel = serde_json::from_reader(file)?;
        model.vocab.reindex();
        model.params.spec.validate()?;
        Ok(model)
    }
}

/// Epoch records followed by one final record, as JSON lines.
pub fn run_log_lines(log: &[EpochRecord], fin: &FinalRecord) -> Result<Vec<String>> {
    let mut lines = Vec::with_capacity(log.len() + 1);
    for rec in log {
        lines.push(serde_json::to_string(rec)?);
    }
    lines.push(serde_json::to_string(fin)?);
    Ok(lines)
}

pub fn write_run_log(path: &Path, log: &[EpochRecord], fin: &FinalRecord) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in run_log_lines(log, fin)? {
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn unix_timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn perfect_predictions() {
        let y = [1.2, -0.4, 2.9, -3.0, 0.3];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.acc7, m.acc2, m.f1, m.mae), (1.0, 1.0, 1.0, 0.0));
        assert!(close(m.corr, 1.0) && m.corr_defined);
    }

    #[test]
    fn negated_predictions() {
        let y = [1.2, -0.4, 2.9, -3.0, 0.3];
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let m = compute_metrics(&neg, &y).unwrap();
        assert_eq!(m.acc2, 0.0);
        assert!(close(m.corr, -1.0));
    }

    #[test]
    fn hand_computed_case() {
        let preds = [2.6, -0.2, 0.4, -1.6, 1.0];
        let labels = [3.0, 0.0, -0.6, -2.0, 1.4];
        let m = compute_metrics(&preds, &labels).unwrap();
        // bins: (3,3) (0,0) (0,-1) (-2,-2) (1,1)
        assert!(close(m.acc7, 0.8));
        // nonzero labels: signs agree on 3 of 4
        assert!(close(m.acc2, 0.75));
        // predicted positive {2.6, 0.4, 1.0}, truly positive {3.0, 1.4}
        let (p, r) = (2.0 / 3.0, 1.0);
        assert!(close(m.f1, 2.0 * p * r / (p + r)));
        assert!(close(m.mae, (0.4 + 0.2 + 1.0 + 0.4 + 0.4) / 5.0));
        let oracle = {
            let mx = preds.iter().sum::<f64>() / 5.0;
            let my = labels.iter().sum::<f64>() / 5.0;
            let sxy: f64 = preds.iter().zip(&labels).map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = preds.iter().map(|x| (x - mx).powi(2)).sum();
            let syy: f64 = labels.iter().map(|y| (y - my).powi(2)).sum();
            sxy / (sxx * syy).sqrt()
        };
        assert!(close(m.corr, oracle));
    }

    #[test]
    fn constant_labels_flag_correlation() {
        let m = compute_metrics(&[0.1, 0.5, 0.9], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.corr, 0.0);
        assert!(!m.corr_defined);
        assert!(compute_metrics(&[], &[]).is_err());
    }

    #[test]
    fn config_text_overrides() {
        let cfg = RunConfig::default().apply_text("tdim = 10\nwindow_lengths = 1,3\nvariant = real\nlr: 0.01\n").unwrap();
        assert_eq!(cfg.t_dim, 10);
        assert_eq!(cfg.window_lengths, vec![1, 3]);
        assert_eq!(cfg.variant, Variant::Real);
        assert_eq!(cfg.lr, 0.01);
        assert!(RunConfig::default().apply_text("nope = 1").is_err());
        assert!(cfg.off_grid().is_empty());
        assert_eq!(RunConfig { k: 7, ..cfg }.off_grid(), vec!["k = 7".to_string()]);
    }

    #[test]
    fn grid_decoding_and_sampling() {
        let grid = Grid::default();
        assert_eq!(grid.size(), 27 * 15 * 5 * 5 * 3 * 5);
        let base = RunConfig::default();
        let first = grid.config(0, &base);
        assert_eq!((first.t_dim, first.window_lengths.clone(), first.k, first.lr), (5, vec![1], 10, 0.001));
        let a = grid_indices(&grid, 50, 3);
        assert_eq!(a, grid_indices(&grid, 50, 3));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 50);
        let small = Grid { dims: vec![5], window_lengths: vec![1], k: vec![2, 3], hidden: vec![4], batch: vec![8], lr: vec![0.01] };
        assert_eq!(grid_indices(&small, 10, 3), vec![0, 1]);
        assert_eq!(grid_indices(&small, 1, 3).len(), 1);
    }

    fn small_cfg() -> RunConfig {
        RunConfig { t_dim: 2, v_dim: 2, a_dim: 2, k: 3, hidden: 4, batch: 8, epochs: 2, ..RunConfig::default() }
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let ds = generate_synthetic(30, 1, &SyntheticConfig::default()).dataset().unwrap();
        let cfg = RunConfig { epochs: 0, ..small_cfg() };
        let out = train(&ds, &Resources::default(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = initial_model(&ds, &Resources::default(), &cfg, &mut rng).unwrap();
        for (id, p) in init.store.iter() {
            assert_eq!(p.value, *out.model.store.value(id));
        }
        assert_eq!(out.log.len(), 1);
        let table = pretrain_nontextual(Modality::Visual, &ds, &cfg).unwrap();
        assert_eq!(table.table.shape(), (ds.vocab.len(), 2));
        assert!(pretrain_nontextual(Modality::Textual, &ds, &cfg).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = generate_synthetic(30, 1, &SyntheticConfig::default()).dataset().unwrap();
        let a = train(&ds, &Resources::default(), &small_cfg()).unwrap();
        let b = train(&ds, &Resources::default(), &small_cfg()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.best_val_loss, b.best_val_loss);
    }

    #[test]
    fn test_labels_do_not_influence_training() {
        let mut ds = generate_synthetic(40, 2, &SyntheticConfig::default()).dataset().unwrap();
        let a = train(&ds, &Resources::default(), &small_cfg()).unwrap();
        for s in &mut ds.splits.test {
            s.label = -s.label;
        }
        let b = train(&ds, &Resources::default(), &small_cfg()).unwrap();
        for (id, p) in a.model.store.iter() {
            assert_eq!(p.value, *b.model.store.value(id));
        }
    }

    #[test]
    fn variant_layouts() {
        let schema = Schema::default();
        let real = RunConfig { variant: Variant::Real, ..RunConfig::default() }.model_spec(10, &schema);
        assert_eq!((real.state_dims, real.aspects, real.real), ([10, 10, 10], 20, true));
        let glob = RunConfig { variant: Variant::GlobalMixture, ..RunConfig::default() }.model_spec(10, &schema);
        assert_eq!(glob.mixture, Mixture::Global);
        let avg = RunConfig { variant: Variant::AveragePool, ..RunConfig::default() }.model_spec(10, &schema);
        assert_eq!(avg.pooling, Pooling::Average);
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
    }
}
