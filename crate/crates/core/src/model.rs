//! The trainable model: parameter tables plus the differentiable sentence
//! graph (reduce, build word states, weight, mix, measure, pool, score).
//!
//! Density matrices are never formed on the tape. For a window mixture
//! `rho_c = sum_i w_ic |w_i><w_i|` the Born probability is
//! `<v_k|rho_c|v_k> = sum_i w_ic |<v_k|w_i>|^2`, so the `K x C` probability
//! matrix is the `K x L` overlap matrix times the `L x C` window weights.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Constraint, Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::MultimodalSentence;
use crate::embedding::{
    normalize_rows, record_word_states, uniform_tensor, Modality, ReducerParams, ReducerSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::fusion::{context_windows, record_global_weights};
use crate::measurement::{
    record_overlap_probabilities, Observable, ObservableParams, OutputNetParams, Pooling,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mixture {
    /// Sliding windows of the configured lengths.
    Local,
    /// One mixture over every real word.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub visual_in: usize,
    pub acoustic_in: usize,
    /// Unimodal state dimensions, indexed by `Modality::index`.
    pub state_dims: [usize; 3],
    /// Modalities in the product space, canonical order.
    pub modalities: Vec<Modality>,
    pub aspects: usize,
    pub hidden: usize,
    pub window_lengths: Vec<usize>,
    pub mixture: Mixture,
    pub pooling: Pooling,
    /// Real-valued states: signed moduli, no phases.
    pub real: bool,
}

impl ModelSpec {
    pub fn trimodal(vocab_size: usize, embed_dim: usize, visual_in: usize, acoustic_in: usize) -> ModelSpec {
        ModelSpec {
            vocab_size,
            embed_dim,
            visual_in,
            acoustic_in,
            state_dims: [5, 5, 5],
            modalities: Modality::ALL.to_vec(),
            aspects: 10,
            hidden: 16,
            window_lengths: vec![1, 2],
            mixture: Mixture::Local,
            pooling: Pooling::Max,
            real: false,
        }
    }

    pub fn active_dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| self.state_dims[m.index()]).collect()
    }

    pub fn state_dim(&self) -> usize {
        self.active_dims().iter().product()
    }

    pub fn has(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    pub fn input_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Textual => self.embed_dim,
            Modality::Visual => self.visual_in,
            Modality::Acoustic => self.acoustic_in,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.modalities.is_empty() {
            return bad("at least one modality is required");
        }
        if self.modalities.windows(2).any(|w| w[0] >= w[1]) {
            return bad("modalities must be distinct and in canonical order");
        }
        if self.modalities.iter().any(|&m| self.state_dims[m.index()] == 0 || self.input_dim(m) == 0) {
            return bad("state and input dimensions must be positive");
        }
        if self.aspects == 0 || self.hidden == 0 {
            return bad("aspect count and hidden width must be positive");
        }
        if self.mixture == Mixture::Local && (self.window_lengths.is_empty() || self.window_lengths.contains(&0)) {
            return bad("window lengths must be positive and non-empty");
        }
        if self.vocab_size < 2 {
            return bad("vocabulary must hold at least the padding and unknown tokens");
        }
        Ok(())
    }
}

/// Optional starting values; anything left `None` is drawn at random.
#[derive(Clone, Debug, Default)]
pub struct Initialization {
    /// `|V| x embed_dim`.
    pub embeddings: Option<Tensor>,
    /// `|V| x state_dim` per modality.
    pub arguments: [Option<Tensor>; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub embedding: Option<ParamId>,
    pub arguments: [Option<ParamId>; 3],
    /// `1 x 3` pre-softmax modality weights.
    pub beta: ParamId,
    pub reducers: [Option<ReducerParams>; 3],
    pub observable: ObservableParams,
    pub output: OutputNetParams,
}

/// Handles into one recorded sentence.
#[derive(Clone, Debug)]
pub struct SentenceGraph {
    pub prediction: Var,
    pub word_re: Var,
    pub word_im: Var,
    /// `L x 1` global word weights.
    pub lambda: Var,
    /// `K x C` probabilities.
    pub probs: Var,
    pub windows: Vec<(usize, usize)>,
}

/// A recorded batch loss.
pub struct LossGraph {
    pub tape: Tape,
    pub loss: Var,
    pub predictions: Vec<Var>,
}

impl LossGraph {
    pub fn value(&self) -> f64 {
        self.tape.value(self.loss).scalar()
    }
}

fn check_table(t: &Tensor, rows: usize, cols: usize, what: &str) -> Result<()> {
    if t.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{what} table is {}x{}, expected {rows}x{cols}",
            t.rows, t.cols
        )));
    }
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("{what} table has non-finite entries")));
    }
    Ok(())
}

impl ModelParams {
    pub fn init(spec: ModelSpec, init: Initialization, rng: &mut impl Rng) -> Result<ModelParams> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let v = spec.vocab_size;

        let embedding = if spec.has(Modality::Textual) {
            let table = match init.embeddings {
                Some(t) => {
                    check_table(&t, v, spec.embed_dim, "embedding")?;
                    t
                }
                None => uniform_tensor(v, spec.embed_dim, 0.5, rng),
            };
            let mut table = table;
            table.row_mut(Vocabulary::PAD).fill(0.0);
            let id = store.add("embedding", table, Constraint::Free);
            store.get_mut(id).frozen_rows = vec![Vocabulary::PAD];
            Some(id)
        } else {
            None
        };

        let mut arguments = [None; 3];
        let [init_t, init_v, init_a] = init.arguments;
        for (m, given) in Modality::ALL.into_iter().zip([init_t, init_v, init_a]) {
            if !spec.has(m) {
                continue;
            }
            let d = spec.state_dims[m.index()];
            let (table, constraint) = if spec.real {
                (Tensor::zeros(v, d), Constraint::Frozen)
            } else {
                let table = match given {
                    Some(t) => {
                        check_table(&t, v, d, "argument")?;
                        t
                    }
                    None if m == Modality::Textual => Tensor::filled(v, d, FRAC_PI_2),
                    None => Tensor::from_vec(v, d, (0..v * d).map(|_| rng.random_range(-PI..=PI)).collect()),
                };
                (table, Constraint::Free)
            };
            let id = store.add(format!("theta.{}", m.tag()), table, constraint);
            store.get_mut(id).frozen_rows = vec![Vocabulary::PAD, Vocabulary::UNK];
            arguments[m.index()] = Some(id);
        }

        let beta = store.add("beta", Tensor::zeros(1, 3), Constraint::Free);

        let mut reducers: [Option<ReducerParams>; 3] = [None, None, None];
        for &m in &spec.modalities {
            let out = spec.state_dims[m.index()];
            let rspec = match m {
                Modality::Textual => ReducerSpec::textual(spec.embed_dim, out),
                _ => ReducerSpec::feedforward(m, spec.input_dim(m), out),
            };
            reducers[m.index()] = Some(ReducerParams::register(rspec, &mut store, rng));
        }

        let mut obs = Observable::random(spec.aspects, &spec.active_dims(), rng);
        if spec.real {
            obs.arguments = Tensor::zeros(obs.arguments.rows, obs.arguments.cols);
        }
        let observable = ObservableParams::register(obs, &mut store, spec.real);
        let output = OutputNetParams::register(spec.aspects, spec.hidden, &mut store, rng);

        Ok(ModelParams { spec, store, embedding, arguments, beta, reducers, observable, output })
    }

    pub fn observable(&self) -> Observable {
        self.observable.snapshot(&self.store)
    }

    pub fn reducer(&self, m: Modality) -> Result<&ReducerParams> {
        self.reducers[m.index()]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("model has no {m:?} reducer")))
    }

    pub fn argument_table(&self, m: Modality) -> Option<&Tensor> {
        self.arguments[m.index()].map(|id| self.store.value(id))
    }

    /// Softmax-normalized `beta` over `subset` (canonical order).
    pub fn modality_weights(&self, subset: &[Modality]) -> Vec<f64> {
        let beta = self.store.value(self.beta);
        crate::fusion::softmax(&subset.iter().map(|m| beta.data[m.index()]).collect::<Vec<_>>())
    }

    fn windows_for(&self, sentence: &MultimodalSentence, n: usize) -> Vec<(usize, usize)> {
        match self.spec.mixture {
            Mixture::Local => context_windows(&sentence.mask[..n], &self.spec.window_lengths),
            Mixture::Global => vec![(0, n)],
        }
    }

    fn check_sentence(&self, s: &MultimodalSentence) -> Result<usize> {
        let n = s.len();
        if n == 0 || !s.mask[..n].iter().all(|&m| m) {
            return Err(Error::InvalidArgument("sentence needs a non-empty prefix of real words".into()));
        }
        if s.visual.cols != self.spec.visual_in || s.acoustic.cols != self.spec.acoustic_in {
            return Err(Error::Dimension(format!(
                "sentence features are {}/{} wide, model expects {}/{}",
                s.visual.cols, s.acoustic.cols, self.spec.visual_in, self.spec.acoustic_in
            )));
        }
        if let Some(&id) = s.words[..n].iter().find(|&&id| id >= self.spec.vocab_size) {
            return Err(Error::InvalidArgument(format!("word id {id} outside the vocabulary")));
        }
        Ok(n)
    }

    /// Records the reducer input for modality `m` over the first `n` words.
    fn record_input(&self, tape: &mut Tape, m: Modality, s: &MultimodalSentence, n: usize) -> Var {
        match m {
            Modality::Textual => tape.gather(&self.store, self.embedding.expect("textual model"), &s.words[..n]),
            Modality::Visual => {
                tape.constant(Tensor::from_vec(n, s.visual.cols, s.visual.data[..n * s.visual.cols].to_vec()))
            }
            Modality::Acoustic => tape.constant(Tensor::from_vec(
                n,
                s.acoustic.cols,
                s.acoustic.data[..n * s.acoustic.cols].to_vec(),
            )),
        }
    }

    /// Records one sentence. `eig` holds the eigenstate planes from
    /// `ObservableParams::record` so a batch shares them.
    pub fn record_sentence(&self, tape: &mut Tape, eig: (Var, Var), s: &MultimodalSentence) -> Result<SentenceGraph> {
        let n = self.check_sentence(s)?;
        let ids = &s.words[..n];
        let mut units = Vec::new();
        let mut args = Vec::new();
        let mut norms = Vec::new();
        for &m in &self.spec.modalities {
            let input = self.record_input(tape, m, s, n);
            let raw = self.reducer(m)?.forward(tape, &self.store, input);
            let (unit, norm) = normalize_rows(tape, raw, self.spec.real);
            units.push(unit);
            norms.push(norm);
            if !self.spec.real {
                let table = self.arguments[m.index()].expect("argument table for active modality");
                args.push(tape.gather(&self.store, table, ids));
            }
        }
        let (word_re, word_im) = record_word_states(tape, &units, &args, self.spec.real);

        let beta = tape.param(&self.store, self.beta);
        let beta = if self.spec.modalities.len() == 3 {
            beta
        } else {
            let parts: Vec<Var> = self.spec.modalities.iter().map(|m| tape.slice_cols(beta, m.index(), 1)).collect();
            if parts.len() == 1 {
                parts[0]
            } else {
                tape.concat_cols(&parts)
            }
        };
        let lambda = record_global_weights(tape, &norms, beta);

        let windows = self.windows_for(s, n);
        let overlaps = record_overlap_probabilities(tape, eig, (word_re, word_im));
        let weights = tape.window_softmax(lambda, &windows);
        let probs = tape.matmul(overlaps, weights);
        let pooled = match self.spec.pooling {
            Pooling::Max => tape.max_pool(probs),
            Pooling::Average => tape.mean_pool(probs),
        };
        let prediction = self.output.record(tape, &self.store, pooled);
        Ok(SentenceGraph { prediction, word_re, word_im, lambda, probs, windows })
    }

    /// Mean absolute error over the batch, recorded on a fresh tape.
    pub fn forward_loss(&self, batch: &[&MultimodalSentence]) -> Result<LossGraph> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut tape = Tape::new();
        let eig = self.observable.record(&mut tape, &self.store);
        let mut residuals = Vec::with_capacity(batch.len());
        let mut predictions = Vec::with_capacity(batch.len());
        for s in batch {
            let g = self.record_sentence(&mut tape, eig, s)?;
            let label = tape.constant(Tensor::from_vec(1, 1, vec![s.label]));
            let diff = tape.sub(g.prediction, label);
            residuals.push(tape.abs(diff));
            predictions.push(g.prediction);
        }
        let stacked = if residuals.len() == 1 { residuals[0] } else { tape.concat_cols(&residuals) };
        let total = tape.sum(stacked);
        let loss = tape.scale(total, 1.0 / batch.len() as f64);
        tape.check_finite()?;
        Ok(LossGraph { tape, loss, predictions })
    }

    /// Gradients of the recorded loss; frozen parameters and rows get zero.
    pub fn backward(&self, graph: &LossGraph) -> Gradients {
        let mut grads = graph.tape.backward(graph.loss, &self.store);
        grads.apply_constraints(&self.store);
        grads
    }

    pub fn predict(&self, s: &MultimodalSentence) -> Result<f64> {
        let mut tape = Tape::new();
        let eig = self.observable.record(&mut tape, &self.store);
        let g = self.record_sentence(&mut tape, eig, s)?;
        tape.check_finite()?;
        Ok(tape.value(g.prediction).scalar())
    }

    pub fn predict_all(&self, sentences: &[MultimodalSentence]) -> Result<Vec<f64>> {
        sentences.iter().map(|s| self.predict(s)).collect()
    }

    pub fn loss(&self, sentences: &[MultimodalSentence]) -> Result<f64> {
        if sentences.is_empty() {
            return Err(Error::InvalidArgument("empty split".into()));
        }
        let preds = self.predict_all(sentences)?;
        Ok(preds.iter().zip(sentences).map(|(p, s)| (p - s.label).abs()).sum::<f64>() / sentences.len() as f64)
    }

    /// Per-word unimodal encodings for an active modality.
    pub fn encode(&self, s: &MultimodalSentence, m: Modality) -> Result<WordEncoding> {
        let n = self.check_sentence(s)?;
        let mut tape = Tape::new();
        let input = self.record_input(&mut tape, m, s, n);
        let raw = self.reducer(m)?.forward(&mut tape, &self.store, input);
        let (unit, norms) = normalize_rows(&mut tape, raw, self.spec.real);
        tape.check_finite()?;
        let d = self.spec.state_dims[m.index()];
        let arguments = match (self.spec.real, self.arguments[m.index()]) {
            (false, Some(id)) => {
                let table = self.store.value(id);
                let mut t = Tensor::zeros(n, d);
                for (i, &w) in s.words[..n].iter().enumerate() {
                    t.row_mut(i).copy_from_slice(table.row(w));
                }
                t
            }
            _ => Tensor::zeros(n, d),
        };
        Ok(WordEncoding { moduli: tape.value(unit).clone(), arguments, norms: tape.value(norms).data.clone() })
    }
}

/// Unimodal word states of one sentence in polar form.
#[derive(Clone, Debug, PartialEq)]
pub struct WordEncoding {
    /// `n x d`, unit rows (signed in the real-valued model).
    pub moduli: Tensor,
    pub arguments: Tensor,
    pub norms: Vec<f64>,
}
