//! Complex linear algebra for pure and mixed quantum states.
//!
//! A [`Ket`] is stored in modulus/argument (polar) form so that each
//! amplitude is `r_j * exp(i * theta_j)`. A [`DensityMatrix`] is a dense
//! Hermitian, positive semi-definite, unit-trace complex matrix that also
//! records the dimensions of the subsystems it is composed of, which is what
//! [`partial_trace`] needs to address individual factors.
//!
//! Basis ordering follows the Kronecker convention: for subsystem dims
//! `[d0, d1, d2]` the flat index of `(i, j, k)` is `(i * d1 + j) * d2 + k`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Numerical tolerances used when validating states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub unit_norm: f64,
    pub hermitian: f64,
    pub trace: f64,
    /// Smallest eigenvalue accepted as "non-negative".
    pub psd_floor: f64,
    pub weight_sum: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            unit_norm: 1e-9,
            hermitian: 1e-9,
            trace: 1e-9,
            psd_floor: -1e-8,
            weight_sum: 1e-9,
        }
    }
}

/// Unit vector in a complex Hilbert space, kept in polar form.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ket {
    moduli: Vec<f64>,
    #[serde(rename = "args")]
    arguments: Vec<f64>,
}

#[derive(Deserialize)]
struct KetRepr {
    moduli: Vec<f64>,
    args: Vec<f64>,
}

impl<'de> Deserialize<'de> for Ket {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = KetRepr::deserialize(deserializer)?;
        let ket = Ket::from_polar(repr.moduli, repr.args).map_err(serde::de::Error::custom)?;
        ket.check(&Tolerances::default()).map_err(serde::de::Error::custom)?;
        Ok(ket)
    }
}

impl Ket {
    /// Builds a ket from moduli and arguments, rescaling the moduli to unit
    /// L2 norm. Arguments are copied verbatim; they are not wrapped.
    pub fn from_polar(moduli: Vec<f64>, arguments: Vec<f64>) -> Result<Ket> {
        if moduli.len() != arguments.len() {
            return Err(Error::Dimension(format!(
                "{} moduli but {} arguments",
                moduli.len(),
                arguments.len()
            )));
        }
        if moduli.is_empty() {
            return Err(Error::InvalidState("ket must have dimension >= 1".into()));
        }
        if moduli.iter().chain(arguments.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidState("non-finite ket component".into()));
        }
        if moduli.iter().any(|&r| r < 0.0) {
            return Err(Error::InvalidState("ket moduli must be non-negative".into()));
        }
        let norm = moduli.iter().map(|r| r * r).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidState("all-zero moduli".into()));
        }
        let moduli = moduli.into_iter().map(|r| r / norm).collect();
        Ok(Ket { moduli, arguments })
    }

    /// Computational basis ket `|index>` in a space of dimension `dim`.
    pub fn basis(dim: usize, index: usize) -> Result<Ket> {
        if index >= dim {
            return Err(Error::Dimension(format!("basis index {index} >= dim {dim}")));
        }
        let mut moduli = vec![0.0; dim];
        moduli[index] = 1.0;
        Ket::from_polar(moduli, vec![0.0; dim])
    }

    /// Converts rectangular amplitudes to a (renormalized) polar ket.
    pub fn from_amplitudes(amplitudes: &[Complex64]) -> Result<Ket> {
        let moduli = amplitudes.iter().map(|z| z.norm()).collect();
        let arguments = amplitudes.iter().map(|z| z.arg()).collect();
        Ket::from_polar(moduli, arguments)
    }

    pub fn dim(&self) -> usize {
        self.moduli.len()
    }

    pub fn moduli(&self) -> &[f64] {
        &self.moduli
    }

    pub fn arguments(&self) -> &[f64] {
        &self.arguments
    }

    pub fn amplitudes(&self) -> CVector {
        CVector::from_iterator(
            self.dim(),
            self.moduli
                .iter()
                .zip(&self.arguments)
                .map(|(&r, &t)| Complex64::from_polar(r, t)),
        )
    }

    pub fn check(&self, tol: &Tolerances) -> Result<()> {
        let norm = self.moduli.iter().map(|r| r * r).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > tol.unit_norm {
            return Err(Error::InvalidState(format!("ket norm {norm} != 1")));
        }
        if self.moduli.iter().any(|&r| r < 0.0) {
            return Err(Error::InvalidState("negative modulus".into()));
        }
        Ok(())
    }
}

/// Tensor product of two kets. In polar form the moduli multiply and the
/// arguments add.
pub fn tensor_ket(a: &Ket, b: &Ket) -> Ket {
    let n = a.dim() * b.dim();
    let mut moduli = Vec::with_capacity(n);
    let mut arguments = Vec::with_capacity(n);
    for (ra, ta) in a.moduli.iter().zip(&a.arguments) {
        for (rb, tb) in b.moduli.iter().zip(&b.arguments) {
            moduli.push(ra * rb);
            arguments.push(ta + tb);
        }
    }
    Ket { moduli, arguments }
}

/// Tensor product of a sequence of kets, left to right.
pub fn tensor_kets(kets: &[&Ket]) -> Result<Ket> {
    let (first, rest) = kets
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty ket list".into()))?;
    Ok(rest.iter().fold((*first).clone(), |acc, k| tensor_ket(&acc, k)))
}

/// Hermitian PSD unit-trace matrix with subsystem structure.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    entries: CMatrix,
    dims: Vec<usize>,
}

impl DensityMatrix {
    /// Wraps a matrix after validating the density-matrix invariants.
    pub fn new(entries: CMatrix, dims: Vec<usize>, tol: &Tolerances) -> Result<DensityMatrix> {
        let rho = DensityMatrix::unchecked(entries, dims)?;
        rho.check(tol)?;
        Ok(rho)
    }

    /// Only checks the shape. Callers are responsible for the physics.
    pub(crate) fn unchecked(entries: CMatrix, dims: Vec<usize>) -> Result<DensityMatrix> {
        if !entries.is_square() {
            return Err(Error::Dimension("density matrix must be square".into()));
        }
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Dimension("subsystem dims must be positive".into()));
        }
        let side: usize = dims.iter().product();
        if side != entries.nrows() {
            return Err(Error::Dimension(format!(
                "subsystem dims {dims:?} do not multiply to side length {}",
                entries.nrows()
            )));
        }
        Ok(DensityMatrix { entries, dims })
    }

    /// Maximally mixed state `I / d`.
    pub fn maximally_mixed(dims: Vec<usize>) -> Result<DensityMatrix> {
        let side: usize = dims.iter().product();
        let entries = CMatrix::identity(side, side) / Complex64::new(side as f64, 0.0);
        DensityMatrix::unchecked(entries, dims)
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn side(&self) -> usize {
        self.entries.nrows()
    }

    /// Reinterprets the same matrix under a different subsystem factorization.
    pub fn with_dims(self, dims: Vec<usize>) -> Result<DensityMatrix> {
        DensityMatrix::unchecked(self.entries, dims)
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.entries + self.entries.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().min()
    }

    pub fn check(&self, tol: &Tolerances) -> Result<()> {
        let n = self.side();
        for i in 0..n {
            for j in i..n {
                let d = self.entries[(i, j)] - self.entries[(j, i)].conj();
                if d.norm() > tol.hermitian {
                    return Err(Error::InvalidState(format!(
                        "not Hermitian at ({i},{j}): deviation {}",
                        d.norm()
                    )));
                }
            }
            if self.entries[(i, i)].re < -tol.trace {
                return Err(Error::InvalidState(format!("negative diagonal at {i}")));
            }
        }
        let tr = self.trace();
        if (tr - Complex64::new(1.0, 0.0)).norm() > tol.trace {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let min_eig = self.min_eigenvalue();
        if min_eig < tol.psd_floor {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig}")));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct DensityRepr {
    dims: Vec<usize>,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.side();
        let plane = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| (0..n).map(|j| f(&self.entries[(i, j)])).collect())
                .collect()
        };
        DensityRepr {
            dims: self.dims.clone(),
            re: plane(|z| z.re),
            im: plane(|z| z.im),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = DensityRepr::deserialize(deserializer)?;
        let n = repr.re.len();
        if repr.im.len() != n
            || repr.re.iter().chain(repr.im.iter()).any(|row| row.len() != n)
        {
            return Err(D::Error::custom("re/im planes must be square and equal-sized"));
        }
        let entries = CMatrix::from_fn(n, n, |i, j| Complex64::new(repr.re[i][j], repr.im[i][j]));
        DensityMatrix::new(entries, repr.dims, &Tolerances::default()).map_err(D::Error::custom)
    }
}

/// `|k><k|`.
pub fn pure_density(k: &Ket) -> DensityMatrix {
    let v = k.amplitudes();
    let entries = &v * v.adjoint();
    DensityMatrix { entries, dims: vec![k.dim()] }
}

/// Tensor product of two density matrices; subsystem lists concatenate.
pub fn tensor_density(a: &DensityMatrix, b: &DensityMatrix) -> DensityMatrix {
    let entries = a.entries.kronecker(&b.entries);
    let mut dims = a.dims.clone();
    dims.extend_from_slice(&b.dims);
    DensityMatrix { entries, dims }
}

fn check_weights(weights: &[f64], count: usize, tol: &Tolerances) -> Result<()> {
    if weights.len() != count {
        return Err(Error::Dimension(format!("{} weights for {count} states", weights.len())));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("mixture of zero states".into()));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument("mixture weights must be non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > tol.weight_sum {
        return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Mixed state `sum_i p_i |phi_i><phi_i|` over pure states.
pub fn mix(states: &[Ket], weights: &[f64]) -> Result<DensityMatrix> {
    check_weights(weights, states.len(), &Tolerances::default())?;
    let dim = states[0].dim();
    if states.iter().any(|s| s.dim() != dim) {
        return Err(Error::Dimension("mixed kets have different dimensions".into()));
    }
    let mut entries = CMatrix::zeros(dim, dim);
    for (state, &p) in states.iter().zip(weights) {
        if p == 0.0 {
            continue;
        }
        let v = state.amplitudes();
        entries.gerc(Complex64::new(p, 0.0), &v, &v, Complex64::new(1.0, 0.0));
    }
    Ok(DensityMatrix { entries, dims: vec![dim] })
}

/// Mixture of density matrices. All inputs must share subsystem dims, which
/// the output inherits.
pub fn mix_densities(states: &[DensityMatrix], weights: &[f64]) -> Result<DensityMatrix> {
    check_weights(weights, states.len(), &Tolerances::default())?;
    let dims = states[0].dims.clone();
    if states.iter().any(|s| s.dims != dims) {
        return Err(Error::Dimension("mixed density matrices have different dims".into()));
    }
    let side = states[0].side();
    let mut entries = CMatrix::zeros(side, side);
    for (state, &p) in states.iter().zip(weights) {
        entries += &state.entries * Complex64::new(p, 0.0);
    }
    Ok(DensityMatrix { entries, dims })
}

/// Born rule: `<lambda| rho |lambda>`, clamped to `[0, 1]`.
pub fn born_probability(rho: &DensityMatrix, eigenstate: &Ket) -> Result<f64> {
    if rho.side() != eigenstate.dim() {
        return Err(Error::Dimension(format!(
            "eigenstate dim {} vs density side {}",
            eigenstate.dim(),
            rho.side()
        )));
    }
    let v = eigenstate.amplitudes();
    let p = (v.adjoint() * &rho.entries * &v)[(0, 0)];
    Ok(p.re.clamp(0.0, 1.0))
}

/// Probability of collapsing onto each eigenstate. No normalization is
/// applied across outcomes, since the eigenstates need not be orthogonal.
pub fn measure_all(rho: &DensityMatrix, eigenstates: &[Ket]) -> Result<Vec<f64>> {
    eigenstates.iter().map(|v| born_probability(rho, v)).collect()
}

/// Ensemble of post-measurement states `sum_i p_i |lambda_i><lambda_i|`.
///
/// Probabilities are renormalized to sum to one. For an orthonormal
/// eigenbasis this is a no-op; for non-orthogonal eigenstates it is what
/// keeps the result a valid density matrix.
pub fn post_measurement_ensemble(probs: &[f64], eigenstates: &[Ket]) -> Result<DensityMatrix> {
    if probs.is_empty() || eigenstates.is_empty() {
        return Err(Error::InvalidArgument("empty measurement outcome list".into()));
    }
    if probs.len() != eigenstates.len() {
        return Err(Error::Dimension(format!(
            "{} probabilities for {} eigenstates",
            probs.len(),
            eigenstates.len()
        )));
    }
    if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidArgument("probabilities must be non-negative".into()));
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("probabilities sum to zero".into()));
    }
    let weights: Vec<f64> = probs.iter().map(|p| p / total).collect();
    mix(eigenstates, &weights)
}

/// Which subsystems of a composite state to keep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsystemCut {
    keep: Vec<usize>,
    trace_out: Vec<usize>,
}

impl SubsystemCut {
    pub fn keep(keep: &[usize], num_subsystems: usize) -> Result<SubsystemCut> {
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        if keep.is_empty() {
            return Err(Error::InvalidArgument("cut must keep at least one subsystem".into()));
        }
        if let Some(&bad) = keep.iter().find(|&&k| k >= num_subsystems) {
            return Err(Error::InvalidArgument(format!(
                "subsystem {bad} out of range for {num_subsystems} subsystems"
            )));
        }
        let trace_out = (0..num_subsystems).filter(|i| !keep.contains(i)).collect();
        Ok(SubsystemCut { keep, trace_out })
    }

    pub fn trace_out(trace_out: &[usize], num_subsystems: usize) -> Result<SubsystemCut> {
        if let Some(&bad) = trace_out.iter().find(|&&k| k >= num_subsystems) {
            return Err(Error::InvalidArgument(format!(
                "subsystem {bad} out of range for {num_subsystems} subsystems"
            )));
        }
        let keep: Vec<usize> = (0..num_subsystems).filter(|i| !trace_out.contains(i)).collect();
        SubsystemCut::keep(&keep, num_subsystems)
    }

    pub fn kept(&self) -> &[usize] {
        &self.keep
    }

    pub fn traced(&self) -> &[usize] {
        &self.trace_out
    }

    pub fn num_subsystems(&self) -> usize {
        self.keep.len() + self.trace_out.len()
    }
}

/// Flat-index offsets for every multi-index over `subsystems`.
fn offsets(dims: &[usize], subsystems: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let mut out = vec![0usize];
    for &s in subsystems {
        out = out
            .iter()
            .flat_map(|&base| {
                let stride = strides[s];
                (0..dims[s]).map(move |i| base + i * stride)
            })
            .collect();
    }
    out
}

/// Reduced density matrix over the kept subsystems.
pub fn partial_trace(rho: &DensityMatrix, cut: &SubsystemCut) -> Result<DensityMatrix> {
    if rho.dims.len() < 2 {
        return Err(Error::InvalidArgument(
            "partial trace needs at least two subsystems".into(),
        ));
    }
    if cut.num_subsystems() != rho.dims.len() {
        return Err(Error::InvalidArgument(format!(
            "cut addresses {} subsystems, state has {}",
            cut.num_subsystems(),
            rho.dims.len()
        )));
    }
    let kept = offsets(&rho.dims, &cut.keep);
    let traced = offsets(&rho.dims, &cut.trace_out);
    let n = kept.len();
    let entries = CMatrix::from_fn(n, n, |r, c| {
        traced
            .iter()
            .map(|&t| rho.entries[(kept[r] + t, kept[c] + t)])
            .sum()
    });
    let dims = cut.keep.iter().map(|&k| rho.dims[k]).collect();
    Ok(DensityMatrix { entries, dims })
}

/// `tr(rho^2)`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    // tr(rho^2) = sum_ij |rho_ij|^2 for Hermitian rho.
    rho.entries.iter().map(|z| z.norm_sqr()).sum()
}

/// Pure-state separability across `cut`: the reduced state is pure iff the
/// ket factorizes.
pub fn is_separable_pure(k: &Ket, dims: &[usize], cut: &SubsystemCut, tol: f64) -> Result<bool> {
    let rho = pure_density(k).with_dims(dims.to_vec())?;
    Ok(purity(&partial_trace(&rho, cut)?) >= 1.0 - tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_mat(m: &CMatrix, expected: &[&[Complex64]], tol: f64) {
        for (i, row) in expected.iter().enumerate() {
            for (j, &z) in row.iter().enumerate() {
                assert!((m[(i, j)] - z).norm() < tol, "({i},{j}): {} vs {z}", m[(i, j)]);
            }
        }
    }

    fn bell() -> Ket {
        Ket::from_polar(vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 4]).unwrap()
    }

    #[test]
    fn polar_construction() {
        let k = Ket::from_polar(vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(k, Ket::basis(2, 0).unwrap());

        let k = Ket::from_polar(vec![3.0, 4.0], vec![0.0, PI]).unwrap();
        assert!((k.moduli()[0] - 0.6).abs() < 1e-15);
        assert!((k.moduli()[1] - 0.8).abs() < 1e-15);
        assert_eq!(k.arguments(), &[0.0, PI]);

        let k = Ket::from_polar(vec![1.0, 1.0], vec![0.0, FRAC_PI_2]).unwrap();
        let v = k.amplitudes();
        assert!((v[0] - c(FRAC_1_SQRT_2, 0.0)).norm() < 1e-12);
        assert!((v[1] - c(0.0, FRAC_1_SQRT_2)).norm() < 1e-12);
    }

    #[test]
    fn polar_construction_errors() {
        assert!(Ket::from_polar(vec![1.0, 0.0], vec![0.0]).is_err());
        assert!(Ket::from_polar(vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(Ket::from_polar(vec![], vec![]).is_err());
    }

    #[test]
    fn arguments_are_not_wrapped() {
        let k = Ket::from_polar(vec![1.0], vec![7.5]).unwrap();
        assert_eq!(k.arguments(), &[7.5]);
    }

    #[test]
    fn pure_density_examples() {
        let rho = pure_density(&Ket::basis(2, 0).unwrap());
        assert_mat(rho.entries(), &[&[c(1., 0.), c(0., 0.)], &[c(0., 0.), c(0., 0.)]], 1e-15);

        let rho = pure_density(&Ket::from_polar(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap());
        assert_mat(rho.entries(), &[&[c(0.5, 0.), c(0.5, 0.)], &[c(0.5, 0.), c(0.5, 0.)]], 1e-15);

        let rho = pure_density(&Ket::from_polar(vec![1.0, 1.0], vec![0.0, FRAC_PI_2]).unwrap());
        assert_mat(
            rho.entries(),
            &[&[c(0.5, 0.), c(0., -0.5)], &[c(0., 0.5), c(0.5, 0.)]],
            1e-15,
        );
        assert_eq!(rho.dims(), &[2]);
        rho.check(&Tolerances::default()).unwrap();
    }

    #[test]
    fn tensor_examples() {
        let zero = Ket::basis(2, 0).unwrap();
        let plus = Ket::from_polar(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let zz = tensor_ket(&zero, &zero);
        assert_eq!(zz.moduli(), &[1.0, 0.0, 0.0, 0.0]);
        let zp = tensor_ket(&zero, &plus).amplitudes();
        let expected = [FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0, 0.0];
        for (z, e) in zp.iter().zip(expected) {
            assert!((z - c(e, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn mixture_is_basis_independent() {
        let a = mix(&[Ket::basis(2, 0).unwrap(), Ket::basis(2, 1).unwrap()], &[0.5, 0.5]).unwrap();
        let h = 2f64.sqrt() / 2.0;
        let minus = Ket::from_polar(vec![h, h], vec![0.0, PI]).unwrap();
        let plus = Ket::from_polar(vec![h, h], vec![0.0, 0.0]).unwrap();
        let b = mix(&[minus, plus], &[0.5, 0.5]).unwrap();
        let half = &[&[c(0.5, 0.), c(0., 0.)][..], &[c(0., 0.), c(0.5, 0.)][..]];
        assert_mat(a.entries(), half, 1e-15);
        assert_mat(b.entries(), half, 1e-15);
    }

    #[test]
    fn single_state_mixture_is_pure() {
        let k = Ket::from_polar(vec![0.3, 0.4, 0.5], vec![0.1, -2.0, 1.0]).unwrap();
        let rho = mix(std::slice::from_ref(&k), &[1.0]).unwrap();
        assert!((rho.entries() - pure_density(&k).entries()).norm() < 1e-15);
    }

    #[test]
    fn mix_rejects_bad_weights() {
        let k = Ket::basis(2, 0).unwrap();
        let j = Ket::basis(2, 1).unwrap();
        assert!(mix(&[k.clone(), j.clone()], &[0.6, 0.6]).is_err());
        assert!(mix(&[k.clone(), j.clone()], &[1.5, -0.5]).is_err());
        assert!(mix(&[k, Ket::basis(3, 0).unwrap()], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn born_examples() {
        let mixed = DensityMatrix::maximally_mixed(vec![2]).unwrap();
        let any = Ket::from_polar(vec![0.2, 0.9], vec![1.0, -0.3]).unwrap();
        assert!((born_probability(&mixed, &any).unwrap() - 0.5).abs() < 1e-15);

        let zero = pure_density(&Ket::basis(2, 0).unwrap());
        assert_eq!(born_probability(&zero, &Ket::basis(2, 0).unwrap()).unwrap(), 1.0);
        let iplus = Ket::from_polar(vec![1.0, 1.0], vec![0.0, FRAC_PI_2]).unwrap();
        assert!((born_probability(&zero, &iplus).unwrap() - 0.5).abs() < 1e-15);

        assert!(born_probability(&zero, &Ket::basis(3, 0).unwrap()).is_err());
    }

    #[test]
    fn measure_all_duplicate_eigenstates() {
        let rho = pure_density(&Ket::from_polar(vec![0.6, 0.8], vec![0.0, 1.0]).unwrap());
        let v = Ket::from_polar(vec![0.5, 0.5], vec![0.2, 0.0]).unwrap();
        let probs = measure_all(&rho, &[v.clone(), v.clone(), v]).unwrap();
        assert!(probs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn post_measurement_examples() {
        let basis = [Ket::basis(2, 0).unwrap(), Ket::basis(2, 1).unwrap()];
        let rho = post_measurement_ensemble(&[1.0, 0.0], &basis).unwrap();
        assert_mat(rho.entries(), &[&[c(1., 0.), c(0., 0.)], &[c(0., 0.), c(0., 0.)]], 1e-15);

        let mixed = DensityMatrix::maximally_mixed(vec![2]).unwrap();
        let probs = measure_all(&mixed, &basis).unwrap();
        let back = post_measurement_ensemble(&probs, &basis).unwrap();
        assert!((back.entries() - mixed.entries()).norm() < 1e-15);

        assert!(post_measurement_ensemble(&[], &[]).is_err());
    }

    #[test]
    fn post_measurement_renormalizes_non_orthogonal() {
        let a = Ket::basis(2, 0).unwrap();
        let b = Ket::from_polar(vec![1.0, 1.0], vec![0.0, 0.0]).unwrap();
        let rho = pure_density(&a);
        let probs = measure_all(&rho, &[a.clone(), b.clone()]).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.5).abs() < 1e-12);
        let post = post_measurement_ensemble(&probs, &[a, b]).unwrap();
        post.check(&Tolerances::default()).unwrap();
    }

    #[test]
    fn partial_trace_of_product_and_bell() {
        let ra = pure_density(&Ket::from_polar(vec![0.6, 0.8], vec![0.0, 0.4]).unwrap());
        let rb = DensityMatrix::maximally_mixed(vec![3]).unwrap();
        let prod = tensor_density(&ra, &rb);
        let reduced = partial_trace(&prod, &SubsystemCut::keep(&[0], 2).unwrap()).unwrap();
        assert!((reduced.entries() - ra.entries()).norm() < 1e-15);

        let b = pure_density(&bell()).with_dims(vec![2, 2]).unwrap();
        for keep in [0, 1] {
            let r = partial_trace(&b, &SubsystemCut::keep(&[keep], 2).unwrap()).unwrap();
            let half = DensityMatrix::maximally_mixed(vec![2]).unwrap();
            assert!((r.entries() - half.entries()).norm() < 1e-15);
        }
    }

    #[test]
    fn partial_trace_errors() {
        let rho = DensityMatrix::maximally_mixed(vec![4]).unwrap();
        assert!(partial_trace(&rho, &SubsystemCut::keep(&[0], 1).unwrap()).is_err());
        let rho = rho.with_dims(vec![2, 2]).unwrap();
        assert!(partial_trace(&rho, &SubsystemCut::keep(&[0], 3).unwrap()).is_err());
        assert!(SubsystemCut::keep(&[], 2).is_err());
        assert!(SubsystemCut::keep(&[2], 2).is_err());
        assert!(SubsystemCut::trace_out(&[0, 1], 2).is_err());
    }

    #[test]
    fn purity_examples() {
        let k = Ket::from_polar(vec![0.3, 0.2, 0.1], vec![1.0, 2.0, 3.0]).unwrap();
        assert!((purity(&pure_density(&k)) - 1.0).abs() < 1e-12);
        assert!((purity(&DensityMatrix::maximally_mixed(vec![2]).unwrap()) - 0.5).abs() < 1e-15);
        let m = mix(&[Ket::basis(2, 0).unwrap(), Ket::basis(2, 1).unwrap()], &[0.7, 0.3]).unwrap();
        assert!((purity(&m) - 0.58).abs() < 1e-12);
    }

    #[test]
    fn separability_examples() {
        let k = tensor_ket(&Ket::basis(2, 0).unwrap(), &Ket::basis(2, 1).unwrap());
        let cut = SubsystemCut::keep(&[0], 2).unwrap();
        assert!(is_separable_pure(&k, &[2, 2], &cut, 1e-8).unwrap());
        assert!(!is_separable_pure(&bell(), &[2, 2], &cut, 1e-8).unwrap());
    }

    #[test]
    fn density_json_layout() {
        let rho = pure_density(&Ket::from_polar(vec![1.0, 1.0], vec![0.0, FRAC_PI_2]).unwrap());
        let v: serde_json::Value = serde_json::to_value(&rho).unwrap();
        assert_eq!(v["dims"], serde_json::json!([2]));
        assert!((v["im"][0][1].as_f64().unwrap() + 0.5).abs() < 1e-15);
        let back: DensityMatrix = serde_json::from_value(v).unwrap();
        assert!((back.entries() - rho.entries()).norm() < 1e-15);

        let k = Ket::from_polar(vec![3.0, 4.0], vec![0.0, 1.0]).unwrap();
        let v = serde_json::to_value(&k).unwrap();
        assert!(v.get("args").is_some());
        let back: Ket = serde_json::from_value(v).unwrap();
        assert_eq!(back, k);
    }

    #[test]
    fn density_json_rejects_invalid() {
        let bad = serde_json::json!({"dims": [2], "re": [[1.0, 0.0], [0.0, 1.0]], "im": [[0.0, 0.0], [0.0, 0.0]]});
        assert!(serde_json::from_value::<DensityMatrix>(bad).is_err());
    }
}
