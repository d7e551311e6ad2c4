//! Dataset ingestion and synthetic data.
//!
//! The on-disk format is JSON lines, one sentence per line:
//!
//! ```text
//! {"split": "train", "words": ["so", "good"], "visual": [[...], [...]], "acoustic": [[...], [...]], "label": 1.4}
//! ```
//!
//! Feature widths and the padded length are declared in a sidecar file of
//! `key = value` lines (`L`, `visual_dim`, `acoustic_dim`, `embedding_dim`).

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::embedding::{Polarity, SentimentLexicon, Vocabulary};
use crate::error::{Error, Result};

pub const LABEL_RANGE: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    /// Padded sentence length.
    pub max_len: usize,
    pub visual_dim: usize,
    pub acoustic_dim: usize,
    pub embedding_dim: usize,
}

impl Default for Schema {
    fn default() -> Self {
        Schema { max_len: 50, visual_dim: 35, acoustic_dim: 74, embedding_dim: 300 }
    }
}

impl Schema {
    pub fn parse(text: &str) -> Result<Schema> {
        let mut schema = Schema::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = parse_key_value(line).ok_or_else(|| Error::DataLine {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let n: usize = value
                .parse()
                .map_err(|_| Error::DataLine { line: i + 1, msg: format!("`{key}` needs a positive integer") })?;
            if n == 0 {
                return Err(Error::DataLine { line: i + 1, msg: format!("`{key}` must be positive") });
            }
            match key {
                "L" => schema.max_len = n,
                "visual_dim" => schema.visual_dim = n,
                "acoustic_dim" => schema.acoustic_dim = n,
                "embedding_dim" => schema.embedding_dim = n,
                other => log::warn!("schema: ignoring unknown key `{other}`"),
            }
        }
        Ok(schema)
    }

    pub fn to_text(&self) -> String {
        format!(
            "L = {}\nvisual_dim = {}\nacoustic_dim = {}\nembedding_dim = {}\n",
            self.max_len, self.visual_dim, self.acoustic_dim, self.embedding_dim
        )
    }

    pub fn load(path: &Path) -> Result<Schema> {
        Schema::parse(&std::fs::read_to_string(path)?)
    }
}

/// Splits `key = value`, `key: value` or `key value`.
pub fn parse_key_value(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line
        .split_once('=')
        .or_else(|| line.split_once(':'))
        .or_else(|| line.split_once(char::is_whitespace))?;
    let (k, v) = (k.trim(), v.trim());
    (!k.is_empty() && !v.is_empty()).then_some((k, v))
}

/// Sidecar file next to a dataset: `data.jsonl` -> `data.<ext>`.
pub fn sidecar_path(data: &Path, ext: &str) -> PathBuf {
    data.with_extension(ext)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One line of the dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub split: Split,
    pub words: Vec<String>,
    pub visual: Vec<Vec<f64>>,
    pub acoustic: Vec<Vec<f64>>,
    pub label: f64,
}

/// A word-aligned sentence padded to the schema length.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSentence {
    pub words: Vec<usize>,
    /// `L x visual_dim`.
    pub visual: Tensor,
    /// `L x acoustic_dim`.
    pub acoustic: Tensor,
    pub mask: Vec<bool>,
    pub label: f64,
}

impl MultimodalSentence {
    pub fn padded_len(&self) -> usize {
        self.words.len()
    }

    /// Number of real (unmasked) words; they form a prefix.
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self) -> Result<()> {
        let l = self.words.len();
        if self.mask.len() != l || self.visual.rows != l || self.acoustic.rows != l {
            return Err(Error::Data("sentence fields disagree on padded length".into()));
        }
        if self.is_empty() {
            return Err(Error::Data("sentence has no real words".into()));
        }
        for i in 0..l {
            if !self.mask[i]
                && (self.words[i] != Vocabulary::PAD
                    || self.visual.row(i).iter().any(|&x| x != 0.0)
                    || self.acoustic.row(i).iter().any(|&x| x != 0.0))
            {
                return Err(Error::Data(format!("padded position {i} carries data")));
            }
        }
        if !(-LABEL_RANGE..=LABEL_RANGE).contains(&self.label) {
            return Err(Error::Data(format!("label {} outside [-3, 3]", self.label)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<MultimodalSentence>,
    pub valid: Vec<MultimodalSentence>,
    pub test: Vec<MultimodalSentence>,
}

impl DatasetSplits {
    pub fn get(&self, split: Split) -> &[MultimodalSentence] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, split: Split) -> &mut Vec<MultimodalSentence> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub splits: DatasetSplits,
    pub vocab: Vocabulary,
    pub schema: Schema,
}

/// Parses JSON lines; blank lines are skipped and errors carry the line
/// number. An input without records is an error.
pub fn parse_records(reader: impl BufRead) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::DataLine { line: i + 1, msg: format!("malformed record: {e}") })?;
        records.push((i + 1, rec));
    }
    if records.is_empty() {
        return Err(Error::Data("dataset contains no records".into()));
    }
    Ok(records.into_iter().map(|(_, r)| r).collect())
}

fn padded_features(rows: &[Vec<f64>], width: usize, max_len: usize, line: usize, what: &str) -> Result<Tensor> {
    let mut t = Tensor::zeros(max_len, width);
    for (i, row) in rows.iter().take(max_len).enumerate() {
        if row.len() != width {
            return Err(Error::DataLine {
                line,
                msg: format!("{what} row {i} has {} values, expected {width}", row.len()),
            });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::DataLine { line, msg: format!("non-finite {what} feature") });
        }
        t.row_mut(i).copy_from_slice(row);
    }
    Ok(t)
}

fn sentence_from_record(rec: &RawRecord, vocab: &Vocabulary, schema: &Schema, line: usize) -> Result<MultimodalSentence> {
    if rec.words.is_empty() {
        return Err(Error::DataLine { line, msg: "record has no words".into() });
    }
    if rec.visual.len() != rec.words.len() || rec.acoustic.len() != rec.words.len() {
        return Err(Error::DataLine {
            line,
            msg: format!(
                "{} words but {} visual and {} acoustic rows",
                rec.words.len(),
                rec.visual.len(),
                rec.acoustic.len()
            ),
        });
    }
    if !rec.label.is_finite() || !(-LABEL_RANGE..=LABEL_RANGE).contains(&rec.label) {
        return Err(Error::DataLine { line, msg: format!("label {} outside [-3, 3]", rec.label) });
    }
    let n = rec.words.len().min(schema.max_len);
    let mut words = vec![Vocabulary::PAD; schema.max_len];
    for (slot, w) in words.iter_mut().zip(&rec.words[..n]) {
        *slot = vocab.id(w);
    }
    let mask = (0..schema.max_len).map(|i| i < n).collect();
    Ok(MultimodalSentence {
        words,
        visual: padded_features(&rec.visual, schema.visual_dim, schema.max_len, line, "visual")?,
        acoustic: padded_features(&rec.acoustic, schema.acoustic_dim, schema.max_len, line, "acoustic")?,
        mask,
        label: rec.label,
    })
}

/// Builds the vocabulary from training sentences (the head kept after
/// truncation), then pads every record. Words outside the training split
/// map to the unknown-word id.
pub fn build_dataset(records: &[RawRecord], schema: &Schema) -> Result<Dataset> {
    let mut vocab = Vocabulary::new();
    for rec in records.iter().filter(|r| r.split == Split::Train) {
        for w in rec.words.iter().take(schema.max_len) {
            if w != Vocabulary::PAD_TOKEN && w != Vocabulary::UNK_TOKEN {
                vocab.insert(w);
            }
        }
    }
    let mut splits = DatasetSplits::default();
    for (i, rec) in records.iter().enumerate() {
        let sentence = sentence_from_record(rec, &vocab, schema, i + 1)?;
        splits.get_mut(rec.split).push(sentence);
    }
    Ok(Dataset { splits, vocab, schema: schema.clone() })
}

pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let records = parse_records(BufReader::new(file))?;
    build_dataset(&records, schema)
}

/// Re-pads records against an existing vocabulary (e.g. the one a model
/// was trained with).
pub fn load_with_vocab(path: &Path, schema: &Schema, vocab: &Vocabulary) -> Result<DatasetSplits> {
    let file = std::fs::File::open(path)?;
    let records = parse_records(BufReader::new(file))?;
    let mut splits = DatasetSplits::default();
    for (i, rec) in records.iter().enumerate() {
        splits.get_mut(rec.split).push(sentence_from_record(rec, vocab, schema, i + 1)?);
    }
    Ok(splits)
}

pub fn record_from_sentence(s: &MultimodalSentence, split: Split, vocab: &Vocabulary) -> RawRecord {
    let n = s.len();
    RawRecord {
        split,
        words: s.words[..n].iter().map(|&id| vocab.word(id).to_string()).collect(),
        visual: (0..n).map(|i| s.visual.row(i).to_vec()).collect(),
        acoustic: (0..n).map(|i| s.acoustic.row(i).to_vec()).collect(),
        label: s.label,
    }
}

pub fn write_records(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn dataset_records(ds: &Dataset) -> Vec<RawRecord> {
    let mut out = Vec::with_capacity(ds.splits.total());
    for split in [Split::Train, Split::Valid, Split::Test] {
        out.extend(ds.splits.get(split).iter().map(|s| record_from_sentence(s, split, &ds.vocab)));
    }
    out
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_records(path, &dataset_records(ds))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub max_len: usize,
    pub min_len: usize,
    pub vocab_words: usize,
    pub embedding_dim: usize,
    pub visual_dim: usize,
    pub acoustic_dim: usize,
    /// Standard deviation of the label noise.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            max_len: 20,
            min_len: 4,
            vocab_words: 80,
            embedding_dim: 16,
            visual_dim: 35,
            acoustic_dim: 74,
            noise: 0.1,
        }
    }
}

impl SyntheticConfig {
    pub fn schema(&self) -> Schema {
        Schema {
            max_len: self.max_len,
            visual_dim: self.visual_dim,
            acoustic_dim: self.acoustic_dim,
            embedding_dim: self.embedding_dim,
        }
    }
}

/// Planted per-sentence signals: mean word sentiment for text, and one
/// scalar each for the visual and acoustic channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    pub textual: f64,
    pub visual: f64,
    pub acoustic: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub config: SyntheticConfig,
    pub records: Vec<RawRecord>,
    pub latents: Vec<Latents>,
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub lexicon: SentimentLexicon,
}

/// Smooth label map; the textual signal dominates.
pub fn synthetic_label(z: &Latents) -> f64 {
    LABEL_RANGE * (3.0 * z.textual + 0.4 * z.visual + 0.2 * z.acoustic).tanh()
}

fn unit_direction(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Generates `n` labelled sentences split 70/15/15.
///
/// Each word has a hidden sentiment score in `[-1, 1]`; its embedding is
/// that score along a fixed direction plus noise, and the lexicon marks
/// words with `|score| > 0.4`. A sentence draws a polarity tendency and
/// samples positive words with probability `0.5 + 0.4 * tendency`. Visual
/// and acoustic rows are a per-sentence scalar along a fixed direction plus
/// per-word noise.
pub fn generate_synthetic(n: usize, seed: u64, cfg: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();

    let words: Vec<String> = (0..cfg.vocab_words).map(|i| format!("w{i:03}")).collect();
    let scores: Vec<f64> = (0..cfg.vocab_words).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let text_dir = unit_direction(cfg.embedding_dim, &mut rng);
    let embeddings = words
        .iter()
        .zip(&scores)
        .map(|(w, &s)| {
            let row = text_dir.iter().map(|d| 2.0 * s * d + 0.3 * noise.sample(&mut rng)).collect();
            (w.clone(), row)
        })
        .collect();
    let mut lexicon = SentimentLexicon::new();
    for (w, &s) in words.iter().zip(&scores) {
        if s > 0.4 {
            lexicon.insert(w, Polarity::Positive);
        } else if s < -0.4 {
            lexicon.insert(w, Polarity::Negative);
        }
    }
    let positive: Vec<usize> = (0..words.len()).filter(|&i| scores[i] > 0.0).collect();
    let negative: Vec<usize> = (0..words.len()).filter(|&i| scores[i] <= 0.0).collect();
    let vis_dir = unit_direction(cfg.visual_dim, &mut rng);
    let ac_dir = unit_direction(cfg.acoustic_dim, &mut rng);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = n * 70 / 100;
    let n_valid = n * 15 / 100;
    let mut split_of = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        split_of[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }

    let mut records = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for &split in split_of.iter().take(n) {
        let tendency: f64 = rng.random_range(-1.0..=1.0);
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut ids = Vec::with_capacity(len);
        for _ in 0..len {
            let pool = if rng.random_bool(0.5 + 0.4 * tendency) { &positive } else { &negative };
            ids.push(pool[rng.random_range(0..pool.len())]);
        }
        let z = Latents {
            textual: ids.iter().map(|&i| scores[i]).sum::<f64>() / len as f64,
            visual: rng.random_range(-1.0..=1.0),
            acoustic: rng.random_range(-1.0..=1.0),
        };
        let feature_rows = |dir: &[f64], latent: f64, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..len)
                .map(|_| dir.iter().map(|d| 3.0 * latent * d + 0.2 * noise.sample(rng)).collect())
                .collect()
        };
        let visual = feature_rows(&vis_dir, z.visual, &mut rng);
        let acoustic = feature_rows(&ac_dir, z.acoustic, &mut rng);
        let label = (synthetic_label(&z) + cfg.noise * noise.sample(&mut rng)).clamp(-LABEL_RANGE, LABEL_RANGE);
        records.push(RawRecord {
            split,
            words: ids.iter().map(|&i| words[i].clone()).collect(),
            visual,
            acoustic,
            label,
        });
        latents.push(z);
    }
    SyntheticCorpus { config: cfg.clone(), records, latents, embeddings, lexicon }
}

impl SyntheticCorpus {
    pub fn dataset(&self) -> Result<Dataset> {
        build_dataset(&self.records, &self.config.schema())
    }

    pub fn embeddings_text(&self) -> String {
        let mut out = String::new();
        for (w, row) in &self.embeddings {
            out.push_str(w);
            for x in row {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes the dataset plus `.cfg`, `.emb` and `.lex` sidecars.
    pub fn write(&self, data_path: &Path) -> Result<()> {
        write_records(data_path, &self.records)?;
        std::fs::write(sidecar_path(data_path, "cfg"), self.config.schema().to_text())?;
        std::fs::write(sidecar_path(data_path, "emb"), self.embeddings_text())?;
        std::fs::write(sidecar_path(data_path, "lex"), self.lexicon.to_text())?;
        Ok(())
    }
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.len() != ys.len() || xs.is_empty() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
