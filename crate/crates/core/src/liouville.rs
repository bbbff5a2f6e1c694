//! Liouville-space algebra for a d-level system.
//!
//! Density matrices are column-stacked: vector index `i + d*j` holds the
//! matrix element `(i, j)`. Under this convention `vec(A X B) = (Bᵀ ⊗ A) vec(X)`,
//! so the commutator generator of `H` is `-i (I ⊗ H - Hᵀ ⊗ I)`.
//!
//! Units: ħ = 1, energies in ps⁻¹ and times in ps.

use ndarray::{s, Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64, ONE, ZERO};

const STATE_TOL: f64 = 1e-12;

/// A vectorized d×d density matrix (or, for linear workspaces, any d×d operator).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityVector {
    entries: Array1<C64>,
    dim: usize,
}

impl DensityVector {
    /// Wraps raw Liouville components without checking positivity or trace.
    pub fn from_entries(dim: usize, entries: Array1<C64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "{} Liouville entries for system dimension {dim}",
                entries.len()
            )));
        }
        Ok(DensityVector { entries, dim })
    }

    /// Pure state `(I + r·σ)/2` for d = 2; `r` may have norm below one for mixed states.
    pub fn from_bloch(r: BlochVector) -> Self {
        let half = 0.5;
        let rho = ndarray::array![
            [C64::new(half * (1.0 + r.z), 0.0), C64::new(half * r.x, -half * r.y)],
            [C64::new(half * r.x, half * r.y), C64::new(half * (1.0 - r.z), 0.0)],
        ];
        DensityVector {
            entries: column_stack(&rho),
            dim: 2,
        }
    }

    /// Maximally mixed state `I/d`.
    pub fn maximally_mixed(dim: usize) -> Self {
        let rho = linalg::identity(dim).mapv(|z| z / dim as f64);
        DensityVector {
            entries: column_stack(&rho),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &Array1<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array1<C64> {
        self.entries
    }

    pub fn to_matrix(&self) -> Array2<C64> {
        unvectorize(self)
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.entries[i + self.dim * i]).sum()
    }

    /// Purity `Tr ρ²`, valid for Hermitian input.
    pub fn purity(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Largest deviation from Hermiticity, `max |ρ_ij - conj(ρ_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let a = self.entries[i + d * j];
                let b = self.entries[j + d * i];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }

    /// Checks the state invariants: Hermitian, unit trace, spectrum in [0, 1] up to `tol`.
    pub fn check_valid(&self, tol: f64) -> Result<()> {
        let herm = self.hermiticity_error();
        if herm > tol {
            return Err(Error::Precondition(format!(
                "density matrix is not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > tol {
            return Err(Error::Precondition(format!(
                "density matrix trace is {tr} instead of 1"
            )));
        }
        let spectrum = linalg::hermitian_eigenvalues(&hermitian_part(&self.to_matrix()).view())?;
        let floor = -tol.max(1e-10);
        if spectrum.iter().any(|&l| l < floor || l > 1.0 - floor) {
            return Err(Error::Precondition(format!(
                "density matrix spectrum {spectrum:?} outside [0, 1]"
            )));
        }
        Ok(())
    }
}

/// A d²×d² Liouville-space matrix: a propagator, a generator, or a derivative of either.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperOperator {
    matrix: Array2<C64>,
    dim: usize,
}

impl SuperOperator {
    pub fn from_matrix(dim: usize, matrix: Array2<C64>) -> Result<Self> {
        let n = dim * dim;
        if matrix.dim() != (n, n) {
            return Err(Error::Dimension(format!(
                "superoperator of shape {:?} for system dimension {dim}",
                matrix.dim()
            )));
        }
        Ok(SuperOperator { matrix, dim })
    }

    pub fn identity(dim: usize) -> Self {
        SuperOperator {
            matrix: linalg::identity(dim * dim),
            dim,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        SuperOperator {
            matrix: Array2::zeros((dim * dim, dim * dim)),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn apply(&self, rho: &DensityVector) -> DensityVector {
        assert_eq!(self.dim, rho.dim, "superoperator/state dimension mismatch");
        DensityVector {
            entries: self.matrix.dot(&rho.entries),
            dim: self.dim,
        }
    }

    /// `self ∘ other` (other acts first).
    pub fn compose(&self, other: &SuperOperator) -> SuperOperator {
        SuperOperator {
            matrix: self.matrix.dot(&other.matrix),
            dim: self.dim,
        }
    }

    pub fn scaled(&self, factor: f64) -> SuperOperator {
        SuperOperator {
            matrix: self.matrix.mapv(|z| z * factor),
            dim: self.dim,
        }
    }

    /// Frobenius pairing `Σ_jk a_jk b_jk` (no conjugation).
    pub fn pairing(&self, other: &SuperOperator) -> C64 {
        self.matrix
            .iter()
            .zip(other.matrix.iter())
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Bloch vector `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)` of a two-level state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { x, y, z }
    }

    /// Unit vector with polar angle `theta` and azimuth `phi`.
    pub fn from_angles(theta: f64, phi: f64) -> Self {
        BlochVector {
            x: theta.sin() * phi.cos(),
            y: theta.sin() * phi.sin(),
            z: theta.cos(),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn neg(&self) -> Self {
        BlochVector::new(-self.x, -self.y, -self.z)
    }
}

fn column_stack(rho: &Array2<C64>) -> Array1<C64> {
    let d = rho.nrows();
    Array1::from_shape_fn(d * d, |k| rho[(k % d, k / d)])
}

fn hermitian_part(a: &Array2<C64>) -> Array2<C64> {
    let adj = a.t().mapv(|z| z.conj());
    (a + &adj).mapv(|z| z * 0.5)
}

fn require_square(m: &Array2<C64>, what: &str) -> Result<usize> {
    let (r, c) = m.dim();
    if r != c || r == 0 {
        return Err(Error::Dimension(format!("{what} has shape {r}x{c}, expected square")));
    }
    Ok(r)
}

fn require_hermitian(m: &Array2<C64>, what: &str) -> Result<()> {
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let dev = m
        .indexed_iter()
        .map(|((i, j), z)| (z - m[(j, i)].conj()).norm())
        .fold(0.0, f64::max);
    if dev > 1e-12 * scale {
        return Err(Error::Precondition(format!("{what} is not Hermitian (deviation {dev:e})")));
    }
    Ok(())
}

/// Column-stacks a Hermitian, unit-trace matrix into a [`DensityVector`].
pub fn vectorize(rho: &Array2<C64>) -> Result<DensityVector> {
    let d = require_square(rho, "density matrix")?;
    require_hermitian(rho, "density matrix")?;
    let tr: C64 = (0..d).map(|i| rho[(i, i)]).sum();
    if (tr - ONE).norm() > STATE_TOL {
        return Err(Error::Precondition(format!("density matrix trace {tr} is not 1")));
    }
    Ok(DensityVector {
        entries: column_stack(rho),
        dim: d,
    })
}

/// Inverse of [`vectorize`].
pub fn unvectorize(rho: &DensityVector) -> Array2<C64> {
    let d = rho.dim;
    Array2::from_shape_fn((d, d), |(i, j)| rho.entries[i + d * j])
}

/// Generator `L ρ = -i[H, ρ]` as a superoperator.
pub fn commutator_superop(h: &Array2<C64>) -> Result<SuperOperator> {
    require_square(h, "Hamiltonian")?;
    require_hermitian(h, "Hamiltonian")?;
    Ok(commutator_unchecked(h))
}

fn commutator_unchecked(h: &Array2<C64>) -> SuperOperator {
    let d = h.nrows();
    let eye = linalg::identity(d);
    let left = linalg::kron(&eye.view(), &h.view());
    let right = linalg::kron(&h.t(), &eye.view());
    let minus_i = C64::new(0.0, -1.0);
    SuperOperator {
        matrix: (left - right).mapv(|z| z * minus_i),
        dim: d,
    }
}

fn require_positive_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Precondition(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// Unitary-channel propagator `exp(dt · L(H))`.
pub fn propagator(h: &Array2<C64>, dt: f64) -> Result<SuperOperator> {
    require_positive_dt(dt)?;
    let gen = commutator_superop(h)?;
    Ok(SuperOperator {
        matrix: linalg::expm(&gen.matrix.mapv(|z| z * dt)),
        dim: gen.dim,
    })
}

/// Fréchet derivative of `exp(dt · L(H))` in the direction `dt · L(dH)`.
///
/// Read off the upper-right block of `exp(dt [[L(H), L(dH)], [0, L(H)]])`.
pub fn propagator_derivative(h: &Array2<C64>, dh: &Array2<C64>, dt: f64) -> Result<SuperOperator> {
    require_positive_dt(dt)?;
    let gen = commutator_superop(h)?;
    let dgen = commutator_superop(dh)?;
    if gen.dim != dgen.dim {
        return Err(Error::Dimension(format!(
            "Hamiltonian dimension {} vs direction dimension {}",
            gen.dim, dgen.dim
        )));
    }
    Ok(frechet_block(&gen, &dgen, dt))
}

/// Propagator and its directional derivatives for several directions, sharing one
/// generator. Directions are given as commutator generators.
pub(crate) fn propagator_with_derivatives(
    gen: &SuperOperator,
    directions: &[SuperOperator],
    dt: f64,
) -> (SuperOperator, Vec<SuperOperator>) {
    let n = gen.matrix.nrows();
    let k = directions.len();
    // one block-upper-triangular exponential carries all derivatives at once
    let size = n * (k + 1);
    let mut big = Array2::<C64>::zeros((size, size));
    for b in 0..=k {
        big.slice_mut(s![b * n..(b + 1) * n, b * n..(b + 1) * n])
            .assign(&gen.matrix.mapv(|z| z * dt));
    }
    for (j, dir) in directions.iter().enumerate() {
        let col = (j + 1) * n;
        big.slice_mut(s![0..n, col..col + n])
            .assign(&dir.matrix.mapv(|z| z * dt));
        // keep the remaining blocks zero so that the first block row is exactly
        // [e^A, L(A, E_1), ..., L(A, E_k)]
    }
    let e = linalg::expm(&big);
    let prop = SuperOperator {
        matrix: e.slice(s![0..n, 0..n]).to_owned(),
        dim: gen.dim,
    };
    let derivs = (0..k)
        .map(|j| {
            let col = (j + 1) * n;
            SuperOperator {
                matrix: e.slice(s![0..n, col..col + n]).to_owned(),
                dim: gen.dim,
            }
        })
        .collect();
    (prop, derivs)
}

fn frechet_block(gen: &SuperOperator, dgen: &SuperOperator, dt: f64) -> SuperOperator {
    let (_, mut d) = propagator_with_derivatives(gen, std::slice::from_ref(dgen), dt);
    d.pop().expect("one direction")
}


/// `Σ_i vec(σᵀ)_i ρ_i = Tr(σρ)` without clipping.
pub fn overlap_with_transposed(rho: &DensityVector, target: &DensityVector) -> Result<C64> {
    if rho.dim != target.dim {
        return Err(Error::Dimension(format!(
            "state dimension {} vs target dimension {}",
            rho.dim, target.dim
        )));
    }
    let covector = transposed_target(target);
    Ok(covector.dot(&rho.entries))
}

/// `vec(σᵀ)`, the Liouville covector whose pairing with `vec(ρ)` is `Tr(σρ)`.
pub fn transposed_target(target: &DensityVector) -> Array1<C64> {
    let d = target.dim;
    Array1::from_shape_fn(d * d, |k| target.entries[(k / d) + d * (k % d)])
}

pub(crate) fn require_pure(target: &DensityVector) -> Result<()> {
    let p = target.purity();
    if (p - 1.0).abs() > 1e-10 {
        return Err(Error::Precondition(format!(
            "target state must be pure (purity {p})"
        )));
    }
    Ok(())
}

/// Fidelity `⟨σ|ρ|σ⟩` with a pure target, clipped to [0, 1].
pub fn fidelity_pure(rho: &DensityVector, target: &DensityVector) -> Result<f64> {
    require_pure(target)?;
    Ok(overlap_with_transposed(rho, target)?.re.clamp(0.0, 1.0))
}

/// Trace distance `Tr|ρ₁ - ρ₂| / 2`.
pub fn trace_distance(rho1: &DensityVector, rho2: &DensityVector) -> Result<f64> {
    if rho1.dim != rho2.dim {
        return Err(Error::Dimension(format!(
            "trace distance between dimensions {} and {}",
            rho1.dim, rho2.dim
        )));
    }
    let diff = DensityVector {
        entries: &rho1.entries - &rho2.entries,
        dim: rho1.dim,
    };
    half_trace_norm(&diff.entries.view(), rho1.dim)
}

/// `Tr|A|/2` for the Hermitian part of the operator with Liouville components `v`.
pub fn half_trace_norm(v: &ArrayView1<C64>, dim: usize) -> Result<f64> {
    let m = Array2::from_shape_fn((dim, dim), |(i, j)| v[i + dim * j]);
    let eig = linalg::hermitian_eigenvalues(&hermitian_part(&m).view())?;
    Ok(0.5 * eig.iter().map(|l| l.abs()).sum::<f64>())
}

/// Bloch vector of a two-level state.
pub fn bloch_from_state(rho: &DensityVector) -> Result<BlochVector> {
    if rho.dim != 2 {
        return Err(Error::UnsupportedDimension(rho.dim));
    }
    let e = &rho.entries;
    // e[2] = ρ01, e[1] = ρ10
    Ok(BlochVector {
        x: (e[2] + e[1]).re,
        y: (C64::new(0.0, 1.0) * (e[2] - e[1])).re,
        z: (e[0] - e[3]).re,
    })
}

pub fn pauli_x() -> Array2<C64> {
    ndarray::array![[ZERO, ONE], [ONE, ZERO]]
}

pub fn pauli_y() -> Array2<C64> {
    let i = C64::new(0.0, 1.0);
    ndarray::array![[ZERO, -i], [i, ZERO]]
}

pub fn pauli_z() -> Array2<C64> {
    ndarray::array![[ONE, ZERO], [ZERO, -ONE]]
}

/// Spin operators `s_i = σ_i / 2`.
pub fn spin_x() -> Array2<C64> {
    pauli_x().mapv(|z| z * 0.5)
}

pub fn spin_y() -> Array2<C64> {
    pauli_y().mapv(|z| z * 0.5)
}

pub fn spin_z() -> Array2<C64> {
    pauli_z().mapv(|z| z * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn close(a: &Array2<C64>, b: &Array2<C64>, tol: f64) -> bool {
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).norm() <= tol)
    }

    /// Independent closed form for spin-1/2: `exp(-i dt h·σ/2)` lifted to `conj(U) ⊗ U`.
    fn spin_half_channel(hx: f64, hy: f64, hz: f64, dt: f64) -> Array2<C64> {
        let norm = (hx * hx + hy * hy + hz * hz).sqrt();
        let angle = 0.5 * norm * dt;
        let (cos, sin) = (angle.cos(), angle.sin());
        let (nx, ny, nz) = if norm > 0.0 {
            (hx / norm, hy / norm, hz / norm)
        } else {
            (0.0, 0.0, 0.0)
        };
        let i = C64::new(0.0, 1.0);
        let u = array![
            [c(cos) - i * sin * nz, (-i * nx - ny) * sin],
            [(-i * nx + ny) * sin, c(cos) + i * sin * nz],
        ];
        let ubar = u.mapv(|z| z.conj());
        linalg::kron(&ubar.view(), &u.view())
    }

    fn taylor_oracle(a: &Array2<C64>) -> Array2<C64> {
        // plain scaling and squaring with a fixed 30-term Taylor series, scaled by 2^-10
        let scaled = a.mapv(|z| z / 1024.0);
        let n = a.nrows();
        let mut sum = linalg::identity(n);
        let mut term = linalg::identity(n);
        for k in 1..30 {
            term = term.dot(&scaled).mapv(|z| z / k as f64);
            sum += &term;
        }
        for _ in 0..10 {
            sum = sum.dot(&sum);
        }
        sum
    }

    #[test]
    fn vectorize_examples() {
        let half = 0.5;
        let plus_x = (linalg::identity(2) + pauli_x()).mapv(|z| z * half);
        let v = vectorize(&plus_x).unwrap();
        assert_eq!(v.entries().to_vec(), vec![c(0.5); 4]);

        let mixed = linalg::identity(2).mapv(|z| z * half);
        let v = vectorize(&mixed).unwrap();
        assert_eq!(v.entries().to_vec(), vec![c(0.5), ZERO, ZERO, c(0.5)]);

        let up = (linalg::identity(2) + pauli_z()).mapv(|z| z * half);
        let v = vectorize(&up).unwrap();
        assert_eq!(v.entries().to_vec(), vec![c(1.0), ZERO, ZERO, ZERO]);
    }

    #[test]
    fn vectorize_rejects_non_square_and_non_hermitian() {
        let rect = Array2::<C64>::zeros((2, 3));
        assert!(matches!(vectorize(&rect), Err(Error::Dimension(_))));
        let bad = array![[c(0.5), c(0.3)], [c(0.0), c(0.5)]];
        assert!(matches!(vectorize(&bad), Err(Error::Precondition(_))));
    }

    #[test]
    fn column_stacking_places_element_ij_at_i_plus_dj() {
        let rho = array![[c(0.7), C64::new(0.1, -0.2)], [C64::new(0.1, 0.2), c(0.3)]];
        let v = vectorize(&rho).unwrap();
        assert_eq!(v.entries()[2], rho[(0, 1)]);
        assert_eq!(v.entries()[1], rho[(1, 0)]);
    }

    #[test]
    fn commutator_examples() {
        let zero = Array2::<C64>::zeros((2, 2));
        assert!(commutator_superop(&zero).unwrap().matrix().iter().all(|z| *z == ZERO));

        // L for h σz/2 is diagonal with entries -i h (s_i - s_j)
        let h = 1.7;
        let l = commutator_superop(&pauli_z().mapv(|z| z * (h / 2.0))).unwrap();
        let mut diag: Vec<f64> = (0..4).map(|k| l.matrix()[(k, k)].im).collect();
        diag.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((diag[0] + h).abs() < 1e-15 && diag[1].abs() < 1e-15);
        assert!(diag[2].abs() < 1e-15 && (diag[3] - h).abs() < 1e-15);
        assert!(l.matrix().indexed_iter().all(|((i, j), z)| i == j || *z == ZERO));

        // L vec(ρ) against direct -i[H, ρ]
        let hx = spin_x();
        let rho = (linalg::identity(2) + pauli_z()).mapv(|z| z * 0.5);
        let lhs = commutator_superop(&hx).unwrap().apply(&vectorize(&rho).unwrap());
        let comm = hx.dot(&rho) - rho.dot(&hx);
        let direct = comm.mapv(|z| z * C64::new(0.0, -1.0));
        for i in 0..2 {
            for j in 0..2 {
                assert!((lhs.entries()[i + 2 * j] - direct[(i, j)]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn propagator_examples() {
        let zero = Array2::<C64>::zeros((2, 2));
        let id = propagator(&zero, 0.3).unwrap();
        assert!(close(id.matrix(), &linalg::identity(4), 0.0));

        // area π about z flips -x to +x
        let hz = 0.8;
        let u = propagator(&spin_z().mapv(|z| z * hz), std::f64::consts::PI / hz).unwrap();
        let out = u.apply(&DensityVector::from_bloch(BlochVector::new(-1.0, 0.0, 0.0)));
        let b = bloch_from_state(&out).unwrap();
        assert!((b.x - 1.0).abs() < 1e-12 && b.y.abs() < 1e-12 && b.z.abs() < 1e-12);

        let h = spin_x().mapv(|z| z * 1.3) + spin_z().mapv(|z| z * 0.7);
        let u = propagator(&h, 0.05).unwrap();
        let oracle = taylor_oracle(&commutator_superop(&h).unwrap().matrix().mapv(|z| z * 0.05));
        assert!(close(u.matrix(), &oracle, 1e-12));
        assert!(close(u.matrix(), &spin_half_channel(1.3, 0.0, 0.7, 0.05), 1e-12));
    }

    #[test]
    fn propagator_rejects_non_positive_dt() {
        assert!(propagator(&spin_x(), 0.0).is_err());
        assert!(propagator(&spin_x(), -0.1).is_err());
    }

    #[test]
    fn derivative_examples() {
        let zero = Array2::<C64>::zeros((2, 2));
        let d = propagator_derivative(&spin_x(), &zero, 0.05).unwrap();
        assert!(d.matrix().iter().all(|z| z.norm() < 1e-16));

        // commuting family: d/dε exp(dt L(sz + ε sz)) = dt L(sz) exp(dt L(sz))
        let dt = 0.37;
        let sz = spin_z();
        let d = propagator_derivative(&sz, &sz, dt).unwrap();
        let l = commutator_superop(&sz).unwrap();
        let expected = l.compose(&propagator(&sz, dt).unwrap()).scaled(dt);
        assert!(close(d.matrix(), expected.matrix(), 1e-12));

        let h = spin_x().mapv(|z| z * 2.0) + spin_z().mapv(|z| z * 0.5);
        let d = propagator_derivative(&h, &spin_x(), 0.05).unwrap();
        let step = 1e-6;
        let plus = propagator(&(&h + &spin_x().mapv(|z| z * step)), 0.05).unwrap();
        let minus = propagator(&(&h - &spin_x().mapv(|z| z * step)), 0.05).unwrap();
        let fd = (plus.matrix() - minus.matrix()).mapv(|z| z / (2.0 * step));
        let scale = fd.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let err = (d.matrix() - &fd).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err / scale < 1e-7, "relative error {}", err / scale);
    }

    #[test]
    fn fidelity_examples() {
        let plus = DensityVector::from_bloch(BlochVector::new(1.0, 0.0, 0.0));
        let minus = DensityVector::from_bloch(BlochVector::new(-1.0, 0.0, 0.0));
        assert!((fidelity_pure(&plus, &plus).unwrap() - 1.0).abs() < 1e-15);
        assert!(fidelity_pure(&minus, &plus).unwrap().abs() < 1e-15);
        let mixed = DensityVector::maximally_mixed(2);
        let target = DensityVector::from_bloch(BlochVector::from_angles(0.4, 2.1));
        assert!((fidelity_pure(&mixed, &target).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(fidelity_pure(&plus, &mixed), Err(Error::Precondition(_))));
    }

    #[test]
    fn trace_distance_examples() {
        let up = DensityVector::from_bloch(BlochVector::new(0.0, 0.0, 1.0));
        let down = DensityVector::from_bloch(BlochVector::new(0.0, 0.0, -1.0));
        let mixed = DensityVector::maximally_mixed(2);
        assert!(trace_distance(&up, &up).unwrap().abs() < 1e-15);
        assert!((trace_distance(&up, &down).unwrap() - 1.0).abs() < 1e-15);
        assert!((trace_distance(&up, &mixed).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bloch_examples() {
        let minus_x = (linalg::identity(2) - pauli_x()).mapv(|z| z * 0.5);
        let b = bloch_from_state(&vectorize(&minus_x).unwrap()).unwrap();
        assert_eq!((b.x, b.y, b.z), (-1.0, 0.0, 0.0));
        let b = bloch_from_state(&DensityVector::maximally_mixed(2)).unwrap();
        assert_eq!((b.x, b.y, b.z), (0.0, 0.0, 0.0));
        let up = (linalg::identity(2) + pauli_z()).mapv(|z| z * 0.5);
        let b = bloch_from_state(&vectorize(&up).unwrap()).unwrap();
        assert_eq!((b.x, b.y, b.z), (0.0, 0.0, 1.0));
        assert!(matches!(
            bloch_from_state(&DensityVector::maximally_mixed(3)),
            Err(Error::UnsupportedDimension(3))
        ));
    }

    #[test]
    fn bloch_round_trips_through_state() {
        let r = BlochVector::new(0.3, -0.5, 0.6);
        let b = bloch_from_state(&DensityVector::from_bloch(r)).unwrap();
        assert!((b.x - r.x).abs() < 1e-15 && (b.y - r.y).abs() < 1e-15 && (b.z - r.z).abs() < 1e-15);
    }

    fn hermitian_strategy(bound: f64) -> impl Strategy<Value = Array2<C64>> {
        prop::array::uniform4(-bound..bound).prop_map(|[a, b, c_, d]| {
            array![[c(a), C64::new(c_, d)], [C64::new(c_, -d), c(b)]]
        })
    }

    fn state_strategy() -> impl Strategy<Value = DensityVector> {
        (0.0..1.0f64, 0.0..std::f64::consts::PI, 0.0..std::f64::consts::TAU).prop_map(
            |(r, theta, phi)| {
                let b = BlochVector::from_angles(theta, phi);
                DensityVector::from_bloch(BlochVector::new(r * b.x, r * b.y, r * b.z))
            },
        )
    }

    proptest! {
        #[test]
        fn unvectorize_inverts_vectorize(entries in prop::collection::vec(-1.0..1.0f64, 18)) {
            let m = Array2::from_shape_fn((3, 3), |(i, j)| C64::new(entries[i * 3 + j], entries[9 + i * 3 + j]));
            let d = 3;
            let v = DensityVector { entries: column_stack(&m), dim: d };
            prop_assert_eq!(unvectorize(&v), m);
        }

        #[test]
        fn commutator_is_linear(h1 in hermitian_strategy(5.0), h2 in hermitian_strategy(5.0), a in -3.0..3.0f64, b in -3.0..3.0f64) {
            let combo = h1.mapv(|z| z * a) + h2.mapv(|z| z * b);
            let lhs = commutator_superop(&combo).unwrap();
            let rhs = commutator_superop(&h1).unwrap().matrix().mapv(|z| z * a)
                + commutator_superop(&h2).unwrap().matrix().mapv(|z| z * b);
            prop_assert!(close(lhs.matrix(), &rhs, 1e-13));
        }

        #[test]
        fn propagators_compose_over_time(h in hermitian_strategy(5.0), t1 in 0.01..0.5f64, t2 in 0.01..0.5f64) {
            let lhs = propagator(&h, t1).unwrap().compose(&propagator(&h, t2).unwrap());
            let rhs = propagator(&h, t1 + t2).unwrap();
            prop_assert!(close(lhs.matrix(), rhs.matrix(), 1e-12));
        }

        #[test]
        fn propagators_preserve_trace_and_purity(h in hermitian_strategy(5.0), rho in state_strategy()) {
            let out = propagator(&h, 0.05).unwrap().apply(&rho);
            prop_assert!((out.trace() - ONE).norm() < 1e-12);
            prop_assert!((out.purity() - rho.purity()).abs() < 1e-12);
            prop_assert!(out.hermiticity_error() < 1e-12);
        }

        #[test]
        fn fidelity_matches_matrix_trace(rho in state_strategy(), theta in 0.0..3.1f64, phi in 0.0..6.2f64) {
            let target = DensityVector::from_bloch(BlochVector::from_angles(theta, phi));
            let f = overlap_with_transposed(&rho, &target).unwrap();
            let direct: C64 = target.to_matrix().dot(&rho.to_matrix()).diag().sum();
            prop_assert!((f - direct).norm() < 1e-12);
        }

        #[test]
        fn trace_distance_is_a_unitarily_invariant_metric(a in state_strategy(), b in state_strategy(), c_ in state_strategy(), h in hermitian_strategy(5.0)) {
            let ab = trace_distance(&a, &b).unwrap();
            let bc = trace_distance(&b, &c_).unwrap();
            let ac = trace_distance(&a, &c_).unwrap();
            prop_assert!(ac <= ab + bc + 1e-14);
            let u = propagator(&h, 0.3).unwrap();
            let moved = trace_distance(&u.apply(&a), &u.apply(&b)).unwrap();
            prop_assert!((moved - ab).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_differences_on_random_draws() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let (a, b, x, y): (f64, f64, f64, f64) = (
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            array![[c(a), C64::new(x, y)], [C64::new(x, -y), c(b)]]
        };
        let dt = 0.05;
        let step = 1e-5;
        for _ in 0..100 {
            let h = draw(&mut rng);
            let dh = draw(&mut rng);
            let exact = propagator_derivative(&h, &dh, dt).unwrap();
            let plus = propagator(&(&h + &dh.mapv(|z| z * step)), dt).unwrap();
            let minus = propagator(&(&h - &dh.mapv(|z| z * step)), dt).unwrap();
            let fd = (plus.matrix() - minus.matrix()).mapv(|z| z / (2.0 * step));
            let scale = fd.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let err = (exact.matrix() - &fd).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(err / scale < 1e-6, "relative error {}", err / scale);
        }
    }
}
