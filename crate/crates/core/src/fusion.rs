//! Global word weighting and local mixture of word states into context
//! density matrices.

use crate::autodiff::{softmax_in_place, Tape, Var};
use crate::error::{Error, Result};
use crate::qcore::{mix, DensityMatrix, Ket};

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Per-word weights `lambda_i = sum_m beta_m * lambda_i^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalWeights {
    pub lambda: Vec<f64>,
    /// Modality weights in `(t, v, a)` order; non-negative, summing to 1.
    pub beta: Vec<f64>,
}

/// Combines unimodal norms with `beta = softmax(beta_params)`.
pub fn global_weights(norms: &[&[f64]], beta_params: &[f64]) -> Result<GlobalWeights> {
    if norms.len() != beta_params.len() || norms.is_empty() {
        return Err(Error::Dimension(format!(
            "{} norm vectors for {} modality weights",
            norms.len(),
            beta_params.len()
        )));
    }
    let len = norms[0].len();
    if norms.iter().any(|n| n.len() != len) {
        return Err(Error::Dimension("unimodal norm vectors differ in length".into()));
    }
    let beta = softmax(beta_params);
    let lambda = (0..len)
        .map(|i| norms.iter().zip(&beta).map(|(n, b)| b * n[i]).sum())
        .collect();
    Ok(GlobalWeights { lambda, beta })
}

/// Records `lambda = [norms...] * softmax(beta_params)^T` as an `L x 1` column.
pub fn record_global_weights(tape: &mut Tape, norms: &[Var], beta_params: Var) -> Var {
    let stacked = if norms.len() == 1 { norms[0] } else { tape.concat_cols(norms) };
    let beta = tape.softmax(beta_params);
    tape.matmul_nt(stacked, beta)
}

/// Sliding windows `(start, len)` in `(length, start)` order.
///
/// Windows touching a masked position are dropped. For a configured length
/// longer than the run of real words, a single window spanning all real
/// words is used instead (added once).
pub fn context_windows(mask: &[bool], lengths: &[usize]) -> Vec<(usize, usize)> {
    let mut lengths = lengths.to_vec();
    lengths.sort_unstable();
    lengths.dedup();
    let n_real = mask.iter().filter(|&&m| m).count();
    let first = mask.iter().position(|&m| m);
    let contiguous = first.is_some_and(|f| mask[f..f + n_real].iter().all(|&m| m));
    let mut windows = Vec::new();
    for &l in &lengths {
        if l == 0 {
            continue;
        }
        if l <= n_real {
            for s in 0..=mask.len() - l {
                if mask[s..s + l].iter().all(|&m| m) {
                    windows.push((s, l));
                }
            }
        } else if contiguous {
            let w = (first.unwrap(), n_real);
            if !windows.contains(&w) {
                windows.push(w);
            }
        }
    }
    windows
}

/// The window covering every real word, if they are contiguous.
pub fn global_window(mask: &[bool]) -> Option<(usize, usize)> {
    let n_real = mask.iter().filter(|&&m| m).count();
    let first = mask.iter().position(|&m| m)?;
    mask[first..first + n_real].iter().all(|&m| m).then_some((first, n_real))
}

#[derive(Clone, Debug)]
pub struct Context {
    pub start: usize,
    pub len: usize,
    pub weights: Vec<f64>,
    pub rho: DensityMatrix,
}

#[derive(Clone, Debug, Default)]
pub struct ContextSet {
    pub contexts: Vec<Context>,
}

impl ContextSet {
    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }
}

fn window_mixture(word_states: &[Ket], lambda: &[f64], start: usize, len: usize, dims: &[usize]) -> Result<Context> {
    let weights = softmax(&lambda[start..start + len]);
    let rho = mix(&word_states[start..start + len], &weights)?.with_dims(dims.to_vec())?;
    Ok(Context { start, len, weights, rho })
}

fn check_lengths(word_states: &[Ket], lambda: &[f64], mask: &[bool]) -> Result<()> {
    if word_states.len() != lambda.len() || word_states.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "{} word states, {} weights, {} mask entries",
            word_states.len(),
            lambda.len(),
            mask.len()
        )));
    }
    Ok(())
}

/// One density matrix per sliding window. `dims` is the subsystem
/// factorization attached to each output (e.g. `[t_dim, v_dim, a_dim]`).
/// A fully masked sentence yields an empty set.
pub fn local_contexts(
    word_states: &[Ket],
    lambda: &[f64],
    mask: &[bool],
    window_lengths: &[usize],
    dims: &[usize],
) -> Result<ContextSet> {
    check_lengths(word_states, lambda, mask)?;
    if window_lengths.is_empty() {
        return Err(Error::InvalidArgument("no context window lengths configured".into()));
    }
    let contexts = context_windows(mask, window_lengths)
        .into_iter()
        .map(|(s, l)| window_mixture(word_states, lambda, s, l, dims))
        .collect::<Result<_>>()?;
    Ok(ContextSet { contexts })
}

/// Mixture of every unmasked word with softmax-normalized weights.
pub fn global_mixture(word_states: &[Ket], lambda: &[f64], mask: &[bool], dims: &[usize]) -> Result<DensityMatrix> {
    check_lengths(word_states, lambda, mask)?;
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Err(Error::InvalidArgument("sentence is fully masked".into()));
    }
    let states: Vec<Ket> = idx.iter().map(|&i| word_states[i].clone()).collect();
    let lam: Vec<f64> = idx.iter().map(|&i| lambda[i]).collect();
    mix(&states, &softmax(&lam))?.with_dims(dims.to_vec())
}
