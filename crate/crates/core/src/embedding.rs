//! Unimodal word states.
//!
//! Each modality's features pass through a small dimension-reduction
//! network. The L2-normalized output gives the moduli of the word's
//! unimodal ket, and the pre-normalization L2 norm is kept as the word's
//! importance weight for that modality. Arguments come from per-word
//! trainable tables.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Constraint, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::qcore::{tensor_kets, Ket};

/// Guard added to norms before dividing.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Textual,
    Visual,
    Acoustic,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Textual, Modality::Visual, Modality::Acoustic];

    pub fn index(self) -> usize {
        match self {
            Modality::Textual => 0,
            Modality::Visual => 1,
            Modality::Acoustic => 2,
        }
    }

    pub fn tag(self) -> char {
        match self {
            Modality::Textual => 't',
            Modality::Visual => 'v',
            Modality::Acoustic => 'a',
        }
    }

    pub fn from_tag(c: char) -> Option<Modality> {
        match c {
            't' => Some(Modality::Textual),
            'v' => Some(Modality::Visual),
            'a' => Some(Modality::Acoustic),
            _ => None,
        }
    }
}

/// Word/id mapping. Id 0 is padding and id 1 stands in for words never
/// seen while building the vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::new()
    }
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const PAD_TOKEN: &'static str = "<pad>";
    pub const UNK_TOKEN: &'static str = "<unk>";

    pub fn new() -> Vocabulary {
        let words = vec![Self::PAD_TOKEN.to_string(), Self::UNK_TOKEN.to_string()];
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }

    pub fn from_words(words: Vec<String>) -> Result<Vocabulary> {
        if words.len() < 2 || words[0] != Self::PAD_TOKEN || words[1] != Self::UNK_TOKEN {
            return Err(Error::Data("vocabulary must start with <pad>, <unk>".into()));
        }
        let index: HashMap<String, usize> = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != words.len() {
            return Err(Error::Data("duplicate vocabulary entry".into()));
        }
        Ok(Vocabulary { words, index })
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    pub fn insert(&mut self, word: &str) -> usize {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), self.words.len() - 1);
        self.words.len() - 1
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

/// Rough word polarities. Lookups of absent words return `Neutral`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SentimentLexicon {
    entries: HashMap<String, Polarity>,
}

impl SentimentLexicon {
    pub fn new() -> SentimentLexicon {
        SentimentLexicon::default()
    }

    pub fn insert(&mut self, word: &str, polarity: Polarity) {
        self.entries.insert(word.to_string(), polarity);
    }

    pub fn polarity(&self, word: &str) -> Polarity {
        self.entries.get(word).copied().unwrap_or(Polarity::Neutral)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `token<TAB>+1|-1` lines.
    pub fn parse(text: &str) -> Result<SentimentLexicon> {
        let mut lex = SentimentLexicon::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (word, pol) = line.split_once('\t').ok_or_else(|| Error::DataLine {
                line: i + 1,
                msg: "expected `token<TAB>+1|-1`".into(),
            })?;
            let polarity = match pol.trim() {
                "+1" | "1" => Polarity::Positive,
                "-1" => Polarity::Negative,
                other => {
                    return Err(Error::DataLine { line: i + 1, msg: format!("bad polarity `{other}`") })
                }
            };
            lex.insert(word, polarity);
        }
        Ok(lex)
    }

    pub fn to_text(&self) -> String {
        let mut rows: Vec<_> = self
            .entries
            .iter()
            .filter(|(_, p)| **p != Polarity::Neutral)
            .collect();
        rows.sort();
        rows.iter()
            .map(|(w, p)| format!("{w}\t{}\n", if **p == Polarity::Positive { "+1" } else { "-1" }))
            .collect()
    }

    /// Loads a lexicon file. A missing file yields an all-neutral lexicon.
    pub fn load(path: &Path) -> Result<SentimentLexicon> {
        if !path.exists() {
            log::warn!("lexicon {} not found; all words treated as neutral", path.display());
            return Ok(SentimentLexicon::new());
        }
        SentimentLexicon::parse(&std::fs::read_to_string(path)?)
    }
}

/// Per-word argument (phase) table for one modality, `|V| x dim` radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgumentTable {
    pub modality: Modality,
    pub table: Tensor,
}

/// Sentiment-aware phases: 0 for positive words, pi for negative words and
/// pi/2 for everything else, so that `cos` maps them to +1, -1 and 0.
pub fn init_textual_arguments(vocab: &Vocabulary, lex: &SentimentLexicon, t_dim: usize) -> ArgumentTable {
    let mut table = Tensor::zeros(vocab.len(), t_dim);
    for (id, word) in vocab.words().iter().enumerate() {
        let phase = if id == Vocabulary::PAD || id == Vocabulary::UNK {
            FRAC_PI_2
        } else {
            match lex.polarity(word) {
                Polarity::Positive => 0.0,
                Polarity::Negative => PI,
                Polarity::Neutral => FRAC_PI_2,
            }
        };
        table.row_mut(id).fill(phase);
    }
    ArgumentTable { modality: Modality::Textual, table }
}

/// Uniform phases in `[-pi, pi]`, with the PAD and UNK rows neutral.
pub fn random_arguments(modality: Modality, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> ArgumentTable {
    let mut table = Tensor::zeros(vocab_size, dim);
    for (i, x) in table.data.iter_mut().enumerate() {
        *x = if i / dim <= Vocabulary::UNK { FRAC_PI_2 } else { rng.random_range(-PI..=PI) };
    }
    ArgumentTable { modality, table }
}

/// Layer layout of a dimension-reduction network.
///
/// The textual network is one LSTM layer followed by two affine layers, the
/// visual and acoustic ones are three affine layers. ReLU follows every
/// affine layer except the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducerSpec {
    pub modality: Modality,
    pub input_dim: usize,
    /// LSTM hidden size, if the network starts with a recurrent layer.
    pub recurrent_hidden: Option<usize>,
    /// Output widths of the affine layers; the last one is the state dim.
    pub affine_widths: Vec<usize>,
}

impl ReducerSpec {
    pub fn textual(embed_dim: usize, out_dim: usize) -> ReducerSpec {
        ReducerSpec {
            modality: Modality::Textual,
            input_dim: embed_dim,
            recurrent_hidden: Some(embed_dim),
            affine_widths: vec![2 * out_dim, out_dim],
        }
    }

    pub fn feedforward(modality: Modality, input_dim: usize, out_dim: usize) -> ReducerSpec {
        ReducerSpec {
            modality,
            input_dim,
            recurrent_hidden: None,
            affine_widths: vec![input_dim, 2 * out_dim, out_dim],
        }
    }

    pub fn output_dim(&self) -> usize {
        *self.affine_widths.last().expect("reducer without layers")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmParams {
    /// `input x 4H`, gate order input, forget, cell, output.
    pub w_ih: ParamId,
    /// `H x 4H`.
    pub w_hh: ParamId,
    /// `1 x 4H`.
    pub bias: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducerParams {
    pub spec: ReducerSpec,
    pub lstm: Option<LstmParams>,
    /// `(weight in x out, bias 1 x out)` per affine layer.
    pub layers: Vec<(ParamId, ParamId)>,
}

pub(crate) fn uniform_tensor(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data)
}

impl ReducerParams {
    pub fn register(spec: ReducerSpec, store: &mut ParamStore, rng: &mut impl Rng) -> ReducerParams {
        let tag = spec.modality.tag();
        let mut width = spec.input_dim;
        let lstm = spec.recurrent_hidden.map(|h| {
            let bound = 1.0 / (h as f64).sqrt();
            let w_ih = store.add(format!("d{tag}.lstm.w_ih"), uniform_tensor(width, 4 * h, bound, rng), Constraint::Free);
            let w_hh = store.add(format!("d{tag}.lstm.w_hh"), uniform_tensor(h, 4 * h, bound, rng), Constraint::Free);
            let bias = store.add(format!("d{tag}.lstm.b"), uniform_tensor(1, 4 * h, bound, rng), Constraint::Free);
            width = h;
            LstmParams { w_ih, w_hh, bias, hidden: h }
        });
        let mut layers = Vec::new();
        for (i, &out) in spec.affine_widths.iter().enumerate() {
            let bound = 1.0 / (width as f64).sqrt();
            let w = store.add(format!("d{tag}.fc{}.w", i + 1), uniform_tensor(width, out, bound, rng), Constraint::Free);
            let b = store.add(format!("d{tag}.fc{}.b", i + 1), uniform_tensor(1, out, bound, rng), Constraint::Free);
            layers.push((w, b));
            width = out;
        }
        ReducerParams { spec, lstm, layers }
    }

    /// Records the network on `tape`; `input` is `L x input_dim` and the
    /// result is the raw `L x out_dim` output before normalization.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Var {
        let mut x = input;
        if let Some(lstm) = &self.lstm {
            x = lstm_forward(tape, store, lstm, x);
        }
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let xw = tape.matmul(x, wv);
            x = tape.add_bias(xw, bv);
            if i != last {
                x = tape.relu(x);
            }
        }
        x
    }
}

/// Left-to-right LSTM, one output row per time step.
fn lstm_forward(tape: &mut Tape, store: &ParamStore, p: &LstmParams, input: Var) -> Var {
    let steps = tape.value(input).rows;
    let h_dim = p.hidden;
    let w_ih = tape.param(store, p.w_ih);
    let w_hh = tape.param(store, p.w_hh);
    let bias = tape.param(store, p.bias);
    // Input projections for all steps at once.
    let xw = tape.matmul(input, w_ih);
    let xw = tape.add_bias(xw, bias);
    let mut h = tape.constant(Tensor::zeros(1, h_dim));
    let mut c = tape.constant(Tensor::zeros(1, h_dim));
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let x_t = tape.slice_rows(xw, t, 1);
        let hw = tape.matmul(h, w_hh);
        let gates = tape.add(x_t, hw);
        let i_pre = tape.slice_cols(gates, 0, h_dim);
        let f_pre = tape.slice_cols(gates, h_dim, h_dim);
        let g_pre = tape.slice_cols(gates, 2 * h_dim, h_dim);
        let o_pre = tape.slice_cols(gates, 3 * h_dim, h_dim);
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);
        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        h = tape.mul(o, tc);
        outputs.push(h);
    }
    tape.concat_rows(&outputs)
}

/// Unit rows and row norms of a raw reducer output.
///
/// With `signed == false` the unit rows are taken in absolute value so they
/// can serve as ket moduli; the real-valued model variant keeps the signs.
pub fn normalize_rows(tape: &mut Tape, raw: Var, signed: bool) -> (Var, Var) {
    let norms = tape.row_norm(raw);
    let magnitudes = if signed { raw } else { tape.abs(raw) };
    let unit = tape.div_rows(magnitudes, norms, NORM_EPS);
    (unit, norms)
}

/// Output of a reducer on one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Reduced {
    /// `L x m_dim`, unit rows (non-negative entries).
    pub unit_vectors: Tensor,
    /// Pre-normalization L2 norm per word.
    pub norms: Vec<f64>,
}

fn reduce(params: &ReducerParams, store: &ParamStore, features: &Tensor) -> Result<Reduced> {
    if features.cols != params.spec.input_dim {
        return Err(Error::Dimension(format!(
            "{:?} reducer expects {} input features, got {}",
            params.spec.modality, params.spec.input_dim, features.cols
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let raw = params.forward(&mut tape, store, x);
    let (unit, norms) = normalize_rows(&mut tape, raw, false);
    tape.check_finite()?;
    let norms = tape.value(norms).data.clone();
    if norms.iter().any(|&n| n == 0.0) {
        log::debug!("{:?} reducer produced a zero-norm row; epsilon guard used", params.spec.modality);
    }
    Ok(Reduced { unit_vectors: tape.value(unit).clone(), norms })
}

/// Textual reduction over an embedded sentence (`L x e_dim`). The LSTM runs
/// left to right, so row `i` depends on words `0..=i`.
pub fn reduce_textual(params: &ReducerParams, store: &ParamStore, embedded: &Tensor) -> Result<Reduced> {
    reduce(params, store, embedded)
}

pub fn reduce_visual(params: &ReducerParams, store: &ParamStore, features: &Tensor) -> Result<Reduced> {
    reduce(params, store, features)
}

pub fn reduce_acoustic(params: &ReducerParams, store: &ParamStore, features: &Tensor) -> Result<Reduced> {
    reduce(params, store, features)
}

/// `|w> = |w_t> (x) |w_v> (x) |w_a>`, in that order.
pub fn assemble_word_state(
    r_t: &[f64],
    theta_t: &[f64],
    r_v: &[f64],
    theta_v: &[f64],
    r_a: &[f64],
    theta_a: &[f64],
) -> Result<Ket> {
    let t = Ket::from_polar(r_t.to_vec(), theta_t.to_vec())?;
    let v = Ket::from_polar(r_v.to_vec(), theta_v.to_vec())?;
    let a = Ket::from_polar(r_a.to_vec(), theta_a.to_vec())?;
    tensor_kets(&[&t, &v, &a])
}

/// Records the rectangular form of product word states over the given
/// modalities. `unit[m]` holds the moduli (`L x dim_m`) and `args[m]` the
/// phases. Returns `(re, im)`, each `L x prod(dim_m)`.
///
/// With `real == true` the phases are ignored and the imaginary plane is
/// an exact zero constant.
pub fn record_word_states(tape: &mut Tape, unit: &[Var], args: &[Var], real: bool) -> (Var, Var) {
    let mut moduli = unit[0];
    for &u in &unit[1..] {
        moduli = tape.row_kron(moduli, u);
    }
    if real {
        let (rows, cols) = tape.value(moduli).shape();
        let zeros = tape.constant(Tensor::zeros(rows, cols));
        return (moduli, zeros);
    }
    let mut phase = args[0];
    for &a in &args[1..] {
        phase = tape.row_outer_sum(phase, a);
    }
    let cos = tape.cos(phase);
    let sin = tape.sin(phase);
    let re = tape.mul(moduli, cos);
    let im = tape.mul(moduli, sin);
    (re, im)
}

/// Reads `token v1 v2 ...` lines. Words not in the file get uniform rows in
/// `[-0.05, 0.05]`; the PAD row is zero.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, e_dim: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let text = std::fs::read_to_string(path)?;
    let mut table = uniform_tensor(vocab.len(), e_dim, 0.05, rng);
    table.row_mut(Vocabulary::PAD).fill(0.0);
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::DataLine { line: i + 1, msg: format!("bad embedding value: {e}") })?;
        if values.len() != e_dim {
            return Err(Error::DataLine {
                line: i + 1,
                msg: format!("embedding has {} values, expected {e_dim}", values.len()),
            });
        }
        if vocab.contains(word) {
            let id = vocab.id(word);
            if id != Vocabulary::PAD {
                table.row_mut(id).copy_from_slice(&values);
            }
        }
    }
    Ok(table)
}
