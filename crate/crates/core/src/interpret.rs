//! Reading unimodal and bimodal decisions out of a trained trimodal model.
//!
//! Everything here works on dense density matrices through `qcore`: the
//! learned eigenstates are partial-traced onto a modality subset and the
//! subset's sentence mixtures are measured against them. No parameter is
//! re-fitted.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::MultimodalSentence;
use crate::embedding::Modality;
use crate::error::{Error, Result};
use crate::fusion::{local_contexts, softmax, Context, ContextSet};
use crate::measurement::{pool, predict, trace_product, Observable};
use crate::model::{Mixture, ModelParams};
use crate::qcore::{mix, partial_trace, purity, tensor_kets, DensityMatrix, Ket, SubsystemCut};
use crate::trainer::{compute_metrics, Metrics};

/// A non-empty set of modalities in canonical order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalitySubset(Vec<Modality>);

impl ModalitySubset {
    pub fn new(modalities: &[Modality]) -> Result<ModalitySubset> {
        let mut v = modalities.to_vec();
        v.sort_unstable();
        v.dedup();
        if v.is_empty() {
            return Err(Error::InvalidArgument("modality subset is empty".into()));
        }
        Ok(ModalitySubset(v))
    }

    pub fn all() -> ModalitySubset {
        ModalitySubset(Modality::ALL.to_vec())
    }

    /// Every non-empty subset, singletons first.
    pub fn enumerate() -> Vec<ModalitySubset> {
        let mut out: Vec<ModalitySubset> = (1u8..8)
            .map(|mask| {
                ModalitySubset(Modality::ALL.into_iter().filter(|m| mask & (1 << m.index()) != 0).collect())
            })
            .collect();
        out.sort_by_key(|s| s.0.len());
        out
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.0
    }

    pub fn is_full(&self) -> bool {
        self.0.len() == 3
    }
}

impl fmt::Display for ModalitySubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.0 {
            write!(f, "{}", m.tag())?;
        }
        Ok(())
    }
}

impl FromStr for ModalitySubset {
    type Err = Error;

    /// Tags such as `t`, `va` or `tva`.
    fn from_str(s: &str) -> Result<ModalitySubset> {
        let ms = s
            .chars()
            .map(|c| Modality::from_tag(c).ok_or_else(|| Error::InvalidArgument(format!("unknown modality tag `{c}`"))))
            .collect::<Result<Vec<_>>>()?;
        ModalitySubset::new(&ms)
    }
}

fn require_trimodal(model: &ModelParams) -> Result<()> {
    if model.spec.modalities.len() != 3 {
        return Err(Error::InvalidArgument("interpretation needs a trimodal model".into()));
    }
    Ok(())
}

/// `M_k = Tr_rest |v_k><v_k|` for every eigenstate of a trimodal observable.
pub fn reduce_observable(obs: &Observable, subset: &ModalitySubset) -> Result<Vec<DensityMatrix>> {
    if obs.dims.len() != 3 {
        return Err(Error::Dimension(format!("observable has {} subsystems, expected 3", obs.dims.len())));
    }
    let keep: Vec<usize> = subset.modalities().iter().map(|m| m.index()).collect();
    (0..obs.num_aspects())
        .map(|k| {
            let p = obs.projector(k)?;
            if subset.is_full() {
                Ok(p)
            } else {
                partial_trace(&p, &SubsystemCut::keep(&keep, 3)?)
            }
        })
        .collect()
}

/// Polar ket from possibly signed moduli; a negative entry becomes a phase of pi.
fn signed_polar_ket(moduli: &[f64], args: &[f64]) -> Result<Ket> {
    let r = moduli.iter().map(|m| m.abs()).collect();
    let t = moduli.iter().zip(args).map(|(&m, &a)| if m < 0.0 { a + PI } else { a }).collect();
    Ket::from_polar(r, t)
}

/// Word states over `subset` and their subset-restricted global weights.
fn subset_word_states(model: &ModelParams, s: &MultimodalSentence, subset: &ModalitySubset) -> Result<(Vec<Ket>, Vec<f64>)> {
    let encodings = subset
        .modalities()
        .iter()
        .map(|&m| model.encode(s, m))
        .collect::<Result<Vec<_>>>()?;
    let beta = model.modality_weights(subset.modalities());
    let n = encodings[0].norms.len();
    let mut kets = Vec::with_capacity(n);
    let mut lambda = vec![0.0; n];
    for i in 0..n {
        let parts = encodings
            .iter()
            .map(|e| signed_polar_ket(e.moduli.row(i), e.arguments.row(i)))
            .collect::<Result<Vec<_>>>()?;
        kets.push(tensor_kets(&parts.iter().collect::<Vec<_>>())?);
        for (e, b) in encodings.iter().zip(&beta) {
            lambda[i] += b * e.norms[i];
        }
    }
    Ok((kets, lambda))
}

fn subset_dims(model: &ModelParams, subset: &ModalitySubset) -> Vec<usize> {
    subset.modalities().iter().map(|m| model.spec.state_dims[m.index()]).collect()
}

/// Context mixtures of `s` restricted to `subset`, following the model's
/// mixture setting.
pub fn subset_contexts(model: &ModelParams, s: &MultimodalSentence, subset: &ModalitySubset) -> Result<ContextSet> {
    let (kets, lambda) = subset_word_states(model, s, subset)?;
    let n = kets.len();
    let dims = subset_dims(model, subset);
    let mask = vec![true; n];
    match model.spec.mixture {
        Mixture::Local => local_contexts(&kets, &lambda, &mask, &model.spec.window_lengths, &dims),
        Mixture::Global => {
            let weights = softmax(&lambda);
            let rho = mix(&kets, &weights)?.with_dims(dims)?;
            Ok(ContextSet { contexts: vec![Context { start: 0, len: n, weights, rho }] })
        }
    }
}

/// `K x C` matrix of `tr(M_k rho_c)`.
pub fn measure_reduced(reduced: &[DensityMatrix], contexts: &ContextSet) -> Result<Tensor> {
    let mut out = Tensor::zeros(reduced.len(), contexts.len());
    for (c, ctx) in contexts.contexts.iter().enumerate() {
        for (k, m) in reduced.iter().enumerate() {
            out.set(k, c, trace_product(m, &ctx.rho)?);
        }
    }
    Ok(out)
}

/// Score of `s` when only `subset` is observed: subset word states,
/// weights with `beta` renormalized over the subset, reduced eigenstates,
/// and the trained pooling and output net.
pub fn predict_subset(model: &ModelParams, s: &MultimodalSentence, subset: &ModalitySubset) -> Result<f64> {
    require_trimodal(model)?;
    let reduced = reduce_observable(&model.observable(), subset)?;
    predict_subset_with(model, s, subset, &reduced)
}

/// As `predict_subset`, with the reduced eigenstates computed once.
pub fn predict_subset_with(
    model: &ModelParams,
    s: &MultimodalSentence,
    subset: &ModalitySubset,
    reduced: &[DensityMatrix],
) -> Result<f64> {
    let contexts = subset_contexts(model, s, subset)?;
    let probs = measure_reduced(reduced, &contexts)?;
    predict(&pool(&probs, model.spec.pooling), &model.output.snapshot(&model.store))
}

/// Metrics of subset predictions over labelled sentences.
pub fn subset_metrics(model: &ModelParams, sentences: &[MultimodalSentence], subset: &ModalitySubset) -> Result<Metrics> {
    require_trimodal(model)?;
    let reduced = reduce_observable(&model.observable(), subset)?;
    let preds = sentences
        .iter()
        .map(|s| predict_subset_with(model, s, subset, &reduced))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<f64> = sentences.iter().map(|s| s.label).collect();
    compute_metrics(&preds, &labels)
}

/// Score of the words `start..start + len` of `s`: their trimodal states
/// mixed with softmax-normalized global weights and measured with the full
/// observable.
pub fn predict_fragment(model: &ModelParams, s: &MultimodalSentence, start: usize, len: usize) -> Result<f64> {
    require_trimodal(model)?;
    if len == 0 {
        return Err(Error::InvalidArgument("fragment is empty".into()));
    }
    if start + len > s.len() {
        return Err(Error::InvalidArgument(format!(
            "fragment {start}..{} exceeds the {} real words",
            start + len,
            s.len()
        )));
    }
    let full = ModalitySubset::all();
    let (kets, lambda) = subset_word_states(model, s, &full)?;
    let weights = softmax(&lambda[start..start + len]);
    let rho = mix(&kets[start..start + len], &weights)?.with_dims(subset_dims(model, &full))?;
    let obs = model.observable();
    let pooled = (0..obs.num_aspects())
        .map(|k| crate::qcore::born_probability(&rho, &obs.eigenstate(k)?))
        .collect::<Result<Vec<_>>>()?;
    predict(&pooled, &model.output.snapshot(&model.store))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntanglementRow {
    pub aspect: usize,
    /// Reduced purity for the cuts `t|va`, `v|ta`, `a|tv`.
    pub purities: [f64; 3],
    pub separable: [bool; 3],
}

/// Reduced purities of every eigenstate on each single-modality cut.
pub fn entanglement_report(obs: &Observable, tol: f64) -> Result<Vec<EntanglementRow>> {
    if obs.dims.len() != 3 {
        return Err(Error::Dimension(format!("observable has {} subsystems, expected 3", obs.dims.len())));
    }
    (0..obs.num_aspects())
        .map(|k| {
            let p = obs.projector(k)?;
            let mut purities = [0.0; 3];
            for (m, slot) in purities.iter_mut().enumerate() {
                *slot = purity(&partial_trace(&p, &SubsystemCut::keep(&[m], 3)?)?);
            }
            Ok(EntanglementRow { aspect: obs.aspect_id(k), purities, separable: purities.map(|q| q >= 1.0 - tol) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Initialization, ModelSpec};
    use crate::qcore::{born_probability, pure_density, Tolerances};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_model(seed: u64, mixture: Mixture) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ModelSpec {
            state_dims: [2, 3, 2],
            aspects: 3,
            hidden: 4,
            mixture,
            ..ModelSpec::trimodal(8, 3, 2, 2)
        };
        let mut model = ModelParams::init(spec, Initialization::default(), &mut rng).unwrap();
        model.store.value_mut(model.beta).data = vec![0.3, -0.2, 0.1];
        model
    }

    fn sentence(n: usize, seed: u64) -> MultimodalSentence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = n + 2;
        let mut s = MultimodalSentence {
            words: vec![0; l],
            visual: Tensor::zeros(l, 2),
            acoustic: Tensor::zeros(l, 2),
            mask: (0..l).map(|i| i < n).collect(),
            label: 1.0,
        };
        for i in 0..n {
            s.words[i] = rng.random_range(2..8);
            for j in 0..2 {
                s.visual.set(i, j, rng.random_range(-1.0..1.0));
                s.acoustic.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        s
    }

    #[test]
    fn subset_parsing() {
        let s: ModalitySubset = "at".parse().unwrap();
        assert_eq!(s.modalities(), &[Modality::Textual, Modality::Acoustic]);
        assert_eq!(s.to_string(), "ta");
        assert!("".parse::<ModalitySubset>().is_err());
        assert!("x".parse::<ModalitySubset>().is_err());
        assert_eq!(ModalitySubset::enumerate().len(), 7);
    }

    #[test]
    fn full_subset_matches_forward_pass() {
        for mixture in [Mixture::Local, Mixture::Global] {
            let model = tiny_model(1, mixture);
            for seed in 0..5 {
                let s = sentence(1 + seed as usize, seed);
                let a = predict_subset(&model, &s, &ModalitySubset::all()).unwrap();
                let b = model.predict(&s).unwrap();
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn reduced_observable_properties() {
        let model = tiny_model(2, Mixture::Local);
        let obs = model.observable();
        let full = reduce_observable(&obs, &ModalitySubset::all()).unwrap();
        for (k, m) in full.iter().enumerate() {
            assert_eq!(m.entries(), obs.projector(k).unwrap().entries());
        }
        let tol = Tolerances::default();
        for sub in ModalitySubset::enumerate() {
            for m in reduce_observable(&obs, &sub).unwrap() {
                m.check(&tol).unwrap();
            }
        }
    }

    #[test]
    fn product_eigenstate_reduces_to_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kt = Ket::from_polar(vec![0.3, 0.7], vec![0.2, -1.0]).unwrap();
        let kv = Ket::from_polar(vec![1.0, 2.0, 0.5], vec![0.0, 0.4, 2.0]).unwrap();
        let ka = Ket::from_polar(vec![0.9, 0.1], vec![1.0, 0.0]).unwrap();
        let v = tensor_kets(&[&kt, &kv, &ka]).unwrap();
        let mut obs = Observable::random(1, &[2, 3, 2], &mut rng);
        obs.moduli.row_mut(0).copy_from_slice(v.moduli());
        obs.arguments.row_mut(0).copy_from_slice(v.arguments());
        let m = &reduce_observable(&obs, &"t".parse().unwrap()).unwrap()[0];
        let expected = pure_density(&kt);
        for (a, b) in m.entries().iter().zip(expected.entries().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        let report = entanglement_report(&obs, 1e-9).unwrap();
        assert!(report[0].separable.iter().all(|&s| s));
        assert!(report[0].purities.iter().all(|&p| (p - 1.0).abs() < 1e-9));
    }

    #[test]
    fn bell_like_eigenstate_has_half_purity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut obs = Observable::random(1, &[2, 2, 1], &mut rng);
        // (|00> + |11>)/sqrt 2 on the textual-visual pair
        obs.moduli.row_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        obs.arguments.row_mut(0).fill(0.0);
        let obs = crate::measurement::project_eigenstates(&obs);
        let row = &entanglement_report(&obs, 1e-9).unwrap()[0];
        assert!((row.purities[0] - 0.5).abs() < 1e-12);
        assert!((row.purities[1] - 0.5).abs() < 1e-12);
        assert!((row.purities[2] - 1.0).abs() < 1e-12);
        assert_eq!(row.separable, [false, false, true]);
    }

    #[test]
    fn fragment_equals_window_column() {
        let model = tiny_model(5, Mixture::Local);
        let s = sentence(4, 9);
        let obs = model.observable();
        let contexts = subset_contexts(&model, &s, &ModalitySubset::all()).unwrap();
        let net = model.output.snapshot(&model.store);
        for ctx in &contexts.contexts {
            let probs: Vec<f64> = (0..obs.num_aspects())
                .map(|k| born_probability(&ctx.rho, &obs.eigenstate(k).unwrap()).unwrap())
                .collect();
            let expected = predict(&probs, &net).unwrap();
            let got = predict_fragment(&model, &s, ctx.start, ctx.len).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
        assert!(predict_fragment(&model, &s, 0, 0).is_err());
        assert!(predict_fragment(&model, &s, 3, 2).is_err());
    }

    #[test]
    fn whole_sentence_fragment_equals_global_mixture() {
        let local = tiny_model(6, Mixture::Local);
        let mut global = local.clone();
        global.spec.mixture = Mixture::Global;
        let s = sentence(5, 11);
        let a = predict_fragment(&local, &s, 0, 5).unwrap();
        let b = global.predict(&s).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn single_word_fragment_is_pure_state_measurement() {
        let model = tiny_model(7, Mixture::Local);
        let s = sentence(3, 12);
        let (kets, _) = subset_word_states(&model, &s, &ModalitySubset::all()).unwrap();
        let obs = model.observable();
        let probs: Vec<f64> = (0..obs.num_aspects())
            .map(|k| obs.eigenstate(k).unwrap().amplitudes().dotc(&kets[1].amplitudes()).norm_sqr())
            .collect();
        let expected = predict(&probs, &model.output.snapshot(&model.store)).unwrap();
        assert!((predict_fragment(&model, &s, 1, 1).unwrap() - expected).abs() < 1e-12);
    }
}
