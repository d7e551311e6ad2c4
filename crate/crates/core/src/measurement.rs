//! Learned multimodal observable and the sentiment read-out.
//!
//! The observable is a set of `K` unit eigenstates (sentiment-related
//! aspects). They are not required to be orthogonal, so the per-aspect
//! probabilities are not normalized across aspects.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Constraint, ParamId, ParamStore, Tape, Tensor, Var};
use crate::embedding::uniform_tensor;
use crate::error::{Error, Result};
use crate::fusion::ContextSet;
use crate::qcore::{born_probability, pure_density, DensityMatrix, Ket};

/// `K` eigenstates in polar form over a space with the given subsystem dims.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    /// `K x D`.
    pub moduli: Tensor,
    /// `K x D`.
    pub arguments: Tensor,
    pub dims: Vec<usize>,
}

impl Observable {
    /// Phases uniform in `[-pi, pi]`; moduli are `|N(0, 1)|` draws rescaled
    /// to unit norm.
    pub fn random(k: usize, dims: &[usize], rng: &mut impl Rng) -> Observable {
        let d: usize = dims.iter().product();
        let mut moduli = Tensor::zeros(k, d);
        for x in moduli.data.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x = z.abs();
        }
        let arguments = uniform_tensor(k, d, PI, rng);
        project_eigenstates(&Observable { moduli, arguments, dims: dims.to_vec() })
    }

    pub fn num_aspects(&self) -> usize {
        self.moduli.rows
    }

    pub fn dim(&self) -> usize {
        self.moduli.cols
    }

    /// Aspect index (1-based) of eigenstate `k`. Carries no other meaning.
    pub fn aspect_id(&self, k: usize) -> usize {
        k + 1
    }

    pub fn eigenstate(&self, k: usize) -> Result<Ket> {
        let moduli = self.moduli.row(k).iter().map(|m| m.abs()).collect();
        let args = self
            .moduli
            .row(k)
            .iter()
            .zip(self.arguments.row(k))
            .map(|(&m, &t)| if m < 0.0 { t + PI } else { t })
            .collect();
        Ket::from_polar(moduli, args)
    }

    pub fn eigenstates(&self) -> Result<Vec<Ket>> {
        (0..self.num_aspects()).map(|k| self.eigenstate(k)).collect()
    }

    /// `|v_k><v_k|` with the observable's subsystem dims.
    pub fn projector(&self, k: usize) -> Result<DensityMatrix> {
        pure_density(&self.eigenstate(k)?).with_dims(self.dims.clone())
    }
}

/// Rescales each eigenstate's moduli to unit L2 norm, leaving arguments
/// untouched (negative moduli are folded into the phase first).
pub fn project_eigenstates(obs: &Observable) -> Observable {
    let mut out = obs.clone();
    for k in 0..out.num_aspects() {
        for j in 0..out.dim() {
            if out.moduli.get(k, j) < 0.0 {
                out.moduli.set(k, j, -out.moduli.get(k, j));
                out.arguments.set(k, j, out.arguments.get(k, j) + PI);
            }
        }
        let row = out.moduli.row_mut(k);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        } else {
            row[0] = 1.0;
        }
    }
    out
}

/// Entry `(k, c)` is the probability that context `c` collapses onto
/// eigenstate `k`.
pub fn measure_contexts(contexts: &ContextSet, obs: &Observable) -> Result<Tensor> {
    if contexts.is_empty() {
        return Err(Error::InvalidArgument("no contexts to measure".into()));
    }
    let eig = obs.eigenstates()?;
    let mut out = Tensor::zeros(eig.len(), contexts.len());
    for (c, ctx) in contexts.contexts.iter().enumerate() {
        for (k, v) in eig.iter().enumerate() {
            out.set(k, c, born_probability(&ctx.rho, v)?);
        }
    }
    Ok(out)
}

/// `tr(M rho)` for Hermitian `M`, real part.
pub fn trace_product(m: &DensityMatrix, rho: &DensityMatrix) -> Result<f64> {
    if m.side() != rho.side() {
        return Err(Error::Dimension(format!("operator side {} vs state side {}", m.side(), rho.side())));
    }
    let (a, b) = (m.entries(), rho.entries());
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    Ok(acc.re)
}

/// Row-wise max and the column it came from (first column on ties).
pub fn pool_max(probs: &Tensor) -> (Vec<f64>, Vec<usize>) {
    let mut values = Vec::with_capacity(probs.rows);
    let mut argmax = Vec::with_capacity(probs.rows);
    for r in 0..probs.rows {
        let row = probs.row(r);
        let mut best = 0;
        for (c, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = c;
            }
        }
        values.push(row[best]);
        argmax.push(best);
    }
    (values, argmax)
}

pub fn pool_avg(probs: &Tensor) -> Vec<f64> {
    (0..probs.rows)
        .map(|r| probs.row(r).iter().sum::<f64>() / probs.cols as f64)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Average,
}

pub fn pool(probs: &Tensor, pooling: Pooling) -> Vec<f64> {
    match pooling {
        Pooling::Max => pool_max(probs).0,
        Pooling::Average => pool_avg(probs),
    }
}

/// Two affine layers with a ReLU in between, `K -> h -> 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputNet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

pub fn predict(pooled: &[f64], net: &OutputNet) -> Result<f64> {
    if pooled.len() != net.w1.rows {
        return Err(Error::Dimension(format!("{} pooled values for a {}-input net", pooled.len(), net.w1.rows)));
    }
    let x = Tensor::row_vector(pooled.to_vec());
    let mut h = x.matmul(&net.w1);
    for (z, b) in h.data.iter_mut().zip(&net.b1.data) {
        *z = (*z + b).max(0.0);
    }
    Ok(h.matmul(&net.w2).scalar() + net.b2.scalar())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservableParams {
    pub moduli: ParamId,
    pub arguments: ParamId,
    pub dims: Vec<usize>,
}

impl ObservableParams {
    pub fn register(obs: Observable, store: &mut ParamStore, freeze_arguments: bool) -> ObservableParams {
        let moduli = store.add("obs.moduli", obs.moduli, Constraint::UnitNormModuli);
        let arg_constraint = if freeze_arguments { Constraint::Frozen } else { Constraint::Free };
        let arguments = store.add("obs.args", obs.arguments, arg_constraint);
        store.get_mut(moduli).paired_arguments = Some(arguments);
        ObservableParams { moduli, arguments, dims: obs.dims }
    }

    pub fn snapshot(&self, store: &ParamStore) -> Observable {
        Observable {
            moduli: store.value(self.moduli).clone(),
            arguments: store.value(self.arguments).clone(),
            dims: self.dims.clone(),
        }
    }

    /// Rectangular planes `(re, im)` of the eigenstates, each `K x D`.
    pub fn record(&self, tape: &mut Tape, store: &ParamStore) -> (Var, Var) {
        let m = tape.param(store, self.moduli);
        let t = tape.param(store, self.arguments);
        let cos = tape.cos(t);
        let sin = tape.sin(t);
        let re = tape.mul(m, cos);
        let im = tape.mul(m, sin);
        (re, im)
    }
}

/// `|<v_k|w_i>|^2` for eigenstates `v` and word states `w`, as `K x L`.
///
/// With `<v|w> = sum conj(v) w`, the real part is `v_re w_re + v_im w_im`
/// and the imaginary part is `v_re w_im - v_im w_re`.
pub fn record_overlap_probabilities(tape: &mut Tape, eig: (Var, Var), words: (Var, Var)) -> Var {
    let (v_re, v_im) = eig;
    let (w_re, w_im) = words;
    let rr = tape.matmul_nt(v_re, w_re);
    let ii = tape.matmul_nt(v_im, w_im);
    let ri = tape.matmul_nt(v_re, w_im);
    let ir = tape.matmul_nt(v_im, w_re);
    let re = tape.add(rr, ii);
    let im = tape.sub(ri, ir);
    let re2 = tape.mul(re, re);
    let im2 = tape.mul(im, im);
    tape.add(re2, im2)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputNetParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl OutputNetParams {
    pub fn register(k: usize, hidden: usize, store: &mut ParamStore, rng: &mut impl Rng) -> OutputNetParams {
        let b_in = 1.0 / (k as f64).sqrt();
        let b_h = 1.0 / (hidden as f64).sqrt();
        OutputNetParams {
            w1: store.add("out.fc1.w", uniform_tensor(k, hidden, b_in, rng), Constraint::Free),
            b1: store.add("out.fc1.b", uniform_tensor(1, hidden, b_in, rng), Constraint::Free),
            w2: store.add("out.fc2.w", uniform_tensor(hidden, 1, b_h, rng), Constraint::Free),
            b2: store.add("out.fc2.b", uniform_tensor(1, 1, b_h, rng), Constraint::Free),
        }
    }

    pub fn snapshot(&self, store: &ParamStore) -> OutputNet {
        OutputNet {
            w1: store.value(self.w1).clone(),
            b1: store.value(self.b1).clone(),
            w2: store.value(self.w2).clone(),
            b2: store.value(self.b2).clone(),
        }
    }

    /// `pooled` is `1 x K`; returns a `1 x 1` score.
    pub fn record(&self, tape: &mut Tape, store: &ParamStore, pooled: Var) -> Var {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let h = tape.matmul(pooled, w1);
        let h = tape.add_bias(h, b1);
        let h = tape.relu(h);
        let out = tape.matmul(h, w2);
        tape.add_bias(out, b2)
    }
}
