//! Self-verification suites: randomized quantum-algebra invariants,
//! separability of sentence states, and finite-difference gradient checks
//! of the full model.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Constraint, Tensor};
use crate::data::MultimodalSentence;
use crate::embedding::assemble_word_state;
use crate::error::Result;
use crate::fusion::{local_contexts, softmax};
use crate::model::{Initialization, ModelParams, ModelSpec};
use crate::qcore::{
    born_probability, is_separable_pure, mix, partial_trace, pure_density, tensor_kets, CMatrix, DensityMatrix, Ket,
    SubsystemCut, Tolerances,
};

/// Outcome of one suite.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub trials: usize,
    pub failures: usize,
    /// Largest deviation seen, in the suite's own units.
    pub max_error: f64,
    pub seconds: f64,
    pub detail: String,
}

impl SuiteReport {
    pub fn line(&self) -> String {
        format!(
            "{:<22} {}  trials={} failures={} max_err={:.3e} time={:.2}s {}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.trials,
            self.failures,
            self.max_error,
            self.seconds,
            self.detail
        )
    }
}

fn random_ket(dim: usize, rng: &mut impl Rng) -> Ket {
    loop {
        let moduli: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
        let args = (0..dim).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
        if let Ok(k) = Ket::from_polar(moduli, args) {
            return k;
        }
    }
}

fn random_weights(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    softmax(&raw)
}

fn random_complex(rows: usize, cols: usize, rng: &mut impl Rng) -> CMatrix {
    DMatrix::from_fn(rows, cols, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_dims(rng: &mut impl Rng) -> Vec<usize> {
    let n = rng.random_range(2..=3);
    (0..n).map(|_| rng.random_range(1..=4)).collect()
}

fn random_cut(n: usize, rng: &mut impl Rng) -> SubsystemCut {
    loop {
        let keep: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        if !keep.is_empty() && keep.len() < n {
            return SubsystemCut::keep(&keep, n).expect("valid cut");
        }
    }
}

fn multi_index(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for s in (0..dims.len()).rev() {
        idx[s] = flat % dims[s];
        flat /= dims[s];
    }
    idx
}

fn flatten(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

/// Partial trace by explicit summation over full multi-indices.
pub fn partial_trace_oracle(rho: &CMatrix, dims: &[usize], keep: &[usize]) -> CMatrix {
    let kept_dims: Vec<usize> = keep.iter().map(|&s| dims[s]).collect();
    let side: usize = kept_dims.iter().product();
    let n: usize = dims.iter().product();
    let traced: Vec<usize> = (0..dims.len()).filter(|s| !keep.contains(s)).collect();
    let mut out = CMatrix::zeros(side, side);
    for i in 0..n {
        let ii = multi_index(i, dims);
        for j in 0..n {
            let jj = multi_index(j, dims);
            if traced.iter().any(|&s| ii[s] != jj[s]) {
                continue;
            }
            let a = flatten(&keep.iter().map(|&s| ii[s]).collect::<Vec<_>>(), &kept_dims);
            let b = flatten(&keep.iter().map(|&s| jj[s]).collect::<Vec<_>>(), &kept_dims);
            out[(a, b)] += rho[(i, j)];
        }
    }
    out
}

/// `M (x) I` laid out in the full index order, for `M` acting on `keep`.
fn embed_operator(m: &CMatrix, dims: &[usize], keep: &[usize]) -> CMatrix {
    let kept_dims: Vec<usize> = keep.iter().map(|&s| dims[s]).collect();
    let traced: Vec<usize> = (0..dims.len()).filter(|s| !keep.contains(s)).collect();
    let n: usize = dims.iter().product();
    CMatrix::from_fn(n, n, |i, j| {
        let (ii, jj) = (multi_index(i, dims), multi_index(j, dims));
        if traced.iter().any(|&s| ii[s] != jj[s]) {
            return Complex64::new(0.0, 0.0);
        }
        let a = flatten(&keep.iter().map(|&s| ii[s]).collect::<Vec<_>>(), &kept_dims);
        let b = flatten(&keep.iter().map(|&s| jj[s]).collect::<Vec<_>>(), &kept_dims);
        m[(a, b)]
    })
}

fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Randomized checks of density-matrix validity, Born-rule completeness over
/// orthonormal bases, the partial trace against an index-summation oracle,
/// and `tr(M rho_A) = tr((M (x) I) rho)`.
pub fn quantum_algebra_suite(trials: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = Tolerances::default();
    let (mut failures, mut max_born, mut max_pt, mut max_eq) = (0, 0.0f64, 0.0f64, 0.0f64);
    let mut first_failure = String::new();
    for trial in 0..trials {
        let dims = random_dims(&mut rng);
        let d: usize = dims.iter().product();
        let r = rng.random_range(1..=4);
        let kets: Vec<Ket> = (0..r).map(|_| random_ket(d, &mut rng)).collect();
        let weights = random_weights(r, &mut rng);
        let outcome: Result<()> = (|| {
            let rho = mix(&kets, &weights)?.with_dims(dims.clone())?;
            rho.check(&tol)?;

            let q = random_complex(d, d, &mut rng).qr().q();
            let mut total = 0.0;
            for c in 0..d {
                let col: Vec<Complex64> = q.column(c).iter().copied().collect();
                total += born_probability(&rho, &Ket::from_amplitudes(&col)?)?;
            }
            max_born = max_born.max((total - 1.0).abs());

            let cut = random_cut(dims.len(), &mut rng);
            let reduced = partial_trace(&rho, &cut)?;
            reduced.check(&tol)?;
            let oracle = partial_trace_oracle(rho.entries(), &dims, cut.kept());
            max_pt = max_pt.max(max_abs_diff(reduced.entries(), &oracle));

            let side = reduced.side();
            let a = random_complex(side, side, &mut rng);
            let m = &a + a.adjoint();
            let lhs = (&m * reduced.entries()).trace();
            let rhs = (embed_operator(&m, &dims, cut.kept()) * rho.entries()).trace();
            max_eq = max_eq.max((lhs - rhs).norm());
            Ok(())
        })();
        if let Err(e) = outcome {
            failures += 1;
            if first_failure.is_empty() {
                first_failure = format!("trial {trial}: {e}");
            }
        }
    }
    let passed = failures == 0 && max_born <= 1e-8 && max_pt <= 1e-10 && max_eq <= 1e-9;
    SuiteReport {
        name: "quantum-algebra".into(),
        passed,
        trials,
        failures,
        max_error: max_born.max(max_pt).max(max_eq),
        seconds: start.elapsed().as_secs_f64(),
        detail: format!("born={max_born:.1e} ptrace={max_pt:.1e} equiv={max_eq:.1e} {first_failure}"),
    }
}

/// Sentence states mixed from product word states: every single-modality
/// reduction equals the weighted mixture of that modality's pure states, and
/// every word state is separable on every cut.
pub fn separability_suite(trials: usize, seed: u64) -> SuiteReport {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut max_err) = (0, 0.0f64);
    let mut first_failure = String::new();
    let cuts: Vec<Vec<usize>> = vec![vec![0], vec![1], vec![2], vec![1, 2], vec![0, 2], vec![0, 1]];
    for trial in 0..trials {
        let dims: Vec<usize> = (0..3).map(|_| rng.random_range(1..=4)).collect();
        let n = rng.random_range(1..=5);
        let outcome: Result<bool> = (|| {
            let mut parts: Vec<[Ket; 3]> = Vec::with_capacity(n);
            let mut words = Vec::with_capacity(n);
            for _ in 0..n {
                let p = [random_ket(dims[0], &mut rng), random_ket(dims[1], &mut rng), random_ket(dims[2], &mut rng)];
                words.push(assemble_word_state(
                    p[0].moduli(),
                    p[0].arguments(),
                    p[1].moduli(),
                    p[1].arguments(),
                    p[2].moduli(),
                    p[2].arguments(),
                )?);
                parts.push(p);
            }
            let lambda: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..3.0)).collect();
            let mask = vec![true; n];
            let lengths: Vec<usize> = (1..=rng.random_range(1..=3)).collect();
            let contexts = local_contexts(&words, &lambda, &mask, &lengths, &dims)?;
            let mut ok = true;
            for ctx in &contexts.contexts {
                for m in 0..3 {
                    let reduced = partial_trace(&ctx.rho, &SubsystemCut::keep(&[m], 3)?)?;
                    let unimodal: Vec<Ket> = parts[ctx.start..ctx.start + ctx.len].iter().map(|p| p[m].clone()).collect();
                    let expected = mix(&unimodal, &ctx.weights)?;
                    let err = max_abs_diff(reduced.entries(), expected.entries());
                    max_err = max_err.max(err);
                    ok &= err <= 1e-9;
                }
            }
            for w in &words {
                for keep in &cuts {
                    ok &= is_separable_pure(w, &dims, &SubsystemCut::keep(keep, 3)?, 1e-9)?;
                }
            }
            Ok(ok)
        })();
        match outcome {
            Ok(true) => {}
            Ok(false) => {
                failures += 1;
                if first_failure.is_empty() {
                    first_failure = format!("trial {trial}: tolerance exceeded");
                }
            }
            Err(e) => {
                failures += 1;
                if first_failure.is_empty() {
                    first_failure = format!("trial {trial}: {e}");
                }
            }
        }
    }
    SuiteReport {
        name: "separability".into(),
        passed: failures == 0,
        trials,
        failures,
        max_error: max_err,
        seconds: start.elapsed().as_secs_f64(),
        detail: first_failure,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub instances: usize,
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Below this gradient magnitude the absolute tolerance applies.
    pub small_grad: f64,
    /// Instances whose nearest ReLU/abs kink or max-pool tie is closer
    /// than this are skipped.
    pub kink_margin: f64,
    pub real: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            instances: 20,
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
            small_grad: 1e-6,
            kink_margin: 1e-6,
            real: false,
        }
    }
}

/// Random tiny model (`L = 3`, dims 2/2/2, `K = 2`, `h = 4`) with a batch
/// of two sentences.
pub fn tiny_instance(rng: &mut ChaCha8Rng, real: bool) -> Result<(ModelParams, Vec<MultimodalSentence>)> {
    let spec = ModelSpec {
        state_dims: [2, 2, 2],
        aspects: 2,
        hidden: 4,
        real,
        ..ModelSpec::trimodal(6, 3, 2, 2)
    };
    let mut model = ModelParams::init(spec, Initialization::default(), rng)?;
    // move every parameter off its default so all paths carry gradient
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let p = model.store.get_mut(id);
        if p.constraint == Constraint::Frozen {
            continue;
        }
        let frozen = p.frozen_rows.clone();
        let cols = p.value.cols;
        for (i, x) in p.value.data.iter_mut().enumerate() {
            if !frozen.contains(&(i / cols)) {
                *x += rng.random_range(-0.3..0.3);
            }
        }
    }
    crate::autodiff::project_unit_moduli(&mut model.store);
    let sentences = (0..2)
        .map(|_| {
            let n = rng.random_range(1..=3);
            let mut s = MultimodalSentence {
                words: vec![0; 3],
                visual: Tensor::zeros(3, 2),
                acoustic: Tensor::zeros(3, 2),
                mask: (0..3).map(|i| i < n).collect(),
                label: rng.random_range(-3.0..3.0),
            };
            for i in 0..n {
                s.words[i] = rng.random_range(2..6);
                for j in 0..2 {
                    s.visual.set(i, j, rng.random_range(-1.0..1.0));
                    s.acoustic.set(i, j, rng.random_range(-1.0..1.0));
                }
            }
            s
        })
        .collect();
    Ok((model, sentences))
}

/// Compares analytic gradients of every trainable scalar with central
/// differences on `cfg.instances` accepted random instances.
pub fn gradient_check(cfg: &GradCheckConfig, seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut accepted, mut skipped, mut failures, mut scalars) = (0, 0, 0, 0usize);
    let mut worst = 0.0f64;
    let mut first_failure = String::new();
    while accepted < cfg.instances {
        if skipped > 10 * cfg.instances {
            break;
        }
        let (mut model, batch) = tiny_instance(&mut rng, cfg.real)?;
        let refs: Vec<&MultimodalSentence> = batch.iter().collect();
        let graph = model.forward_loss(&refs)?;
        if graph.tape.kink_margin() < cfg.kink_margin {
            skipped += 1;
            continue;
        }
        accepted += 1;
        let grads = model.backward(&graph);
        let mut instance_ok = true;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let p = model.store.get(id);
            if p.constraint == Constraint::Frozen {
                continue;
            }
            let (name, frozen, cols, len) = (p.name.clone(), p.frozen_rows.clone(), p.value.cols, p.value.len());
            for i in 0..len {
                if frozen.contains(&(i / cols)) {
                    continue;
                }
                let orig = model.store.value(id).data[i];
                model.store.value_mut(id).data[i] = orig + cfg.step;
                let up = model.forward_loss(&refs)?.value();
                model.store.value_mut(id).data[i] = orig - cfg.step;
                let down = model.forward_loss(&refs)?.value();
                model.store.value_mut(id).data[i] = orig;
                let fd = (up - down) / (2.0 * cfg.step);
                let an = grads.get(id).data[i];
                let abs = (an - fd).abs();
                let scale = an.abs().max(fd.abs());
                let ok = if scale < cfg.small_grad { abs < cfg.abs_tol } else { abs / scale < cfg.rel_tol };
                if scale >= cfg.small_grad {
                    worst = worst.max(abs / scale);
                }
                scalars += 1;
                if !ok {
                    instance_ok = false;
                    if first_failure.is_empty() {
                        first_failure = format!("{name}[{i}]: analytic {an:.6e} vs numeric {fd:.6e}");
                    }
                }
            }
        }
        if !instance_ok {
            failures += 1;
        }
    }
    Ok(SuiteReport {
        name: if cfg.real { "gradient-check-real".into() } else { "gradient-check".into() },
        passed: failures == 0 && accepted >= cfg.instances,
        trials: accepted,
        failures,
        max_error: worst,
        seconds: start.elapsed().as_secs_f64(),
        detail: format!("scalars={scalars} skipped={skipped} {first_failure}"),
    })
}

/// Pure density of a product of basis kets, used by the `check` smoke line.
pub fn basis_product_density(dims: &[usize]) -> Result<DensityMatrix> {
    let kets = dims.iter().map(|&d| Ket::basis(d, 0)).collect::<Result<Vec<_>>>()?;
    Ok(pure_density(&tensor_kets(&kets.iter().collect::<Vec<_>>())?).with_dims(dims.to_vec())?)
}

/// All suites at the sizes used by the `check` command.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        quantum_algebra_suite(1000, seed),
        separability_suite(200, seed),
        gradient_check(&GradCheckConfig::default(), seed)?,
        gradient_check(&GradCheckConfig { real: true, instances: 5, ..Default::default() }, seed)?,
    ])
}
