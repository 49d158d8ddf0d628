// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

//! Dense complex operator algebra on small Hilbert spaces.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`. Superoperators act on
//! `d x d` matrices and are stored as `d^2 x d^2` matrices with respect to
//! the row-major vectorisation `vec(B)[i*d + j] = B[(i, j)]`, under which left
//! multiplication by `A` is `A (x) 1` and right multiplication is `1 (x) A^T`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

/// Builds a complex matrix from a real row-major slice.
pub fn real_matrix(n: usize, rows: &[f64]) -> CMatrix {
    CMatrix::from_iterator(n, n, (0..n * n).map(|k| c64(rows[(k % n) * n + k / n], 0.0)))
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Largest entry of `|M - M^*|`.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && hermiticity_defect(m) <= tol
}

pub fn ensure_square(m: &CMatrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::arg(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral (operator) norm.
pub fn op_norm(m: &CMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.is_square() && hermiticity_defect(m) <= 1e-14 * (1.0 + frobenius(m)) {
        let h = hermitian_part(m);
        return SymmetricEigen::new(h)
            .eigenvalues
            .iter()
            .fold(0.0f64, |acc, e| acc.max(e.abs()));
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |acc, s| acc.max(*s))
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c64(0.5, 0.0)
}

/// Hilbert-Schmidt scalar product `Tr(A^* B)`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> Result<Complex64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum())
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Trace distance `||A - B||_1 / 2` of two Hermitian matrices.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = hermitian_part(&(a - b));
    0.5 * SymmetricEigen::new(diff)
        .eigenvalues
        .iter()
        .map(|e| e.abs())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuperOpKind {
    /// `B -> A B`
    Left,
    /// `B -> B A`
    Right,
    /// `B -> [A, B]`
    Commutator,
}

/// Linear map on `d x d` matrices in its `d^2 x d^2` matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperOp {
    dim: usize,
    matrix: CMatrix,
}

impl SuperOp {
    pub fn from_matrix(dim: usize, matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != dim * dim || matrix.ncols() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: matrix.nrows(),
            });
        }
        Ok(SuperOp { dim, matrix })
    }

    pub fn zero(dim: usize) -> Self {
        SuperOp {
            dim,
            matrix: CMatrix::zeros(dim * dim, dim * dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        SuperOp {
            dim,
            matrix: identity(dim * dim),
        }
    }

    pub fn left(a: &CMatrix) -> Self {
        let d = a.nrows();
        SuperOp {
            dim: d,
            matrix: kron(a, &identity(d)),
        }
    }

    pub fn right(a: &CMatrix) -> Self {
        let d = a.nrows();
        SuperOp {
            dim: d,
            matrix: kron(&identity(d), &a.transpose()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn apply(&self, b: &CMatrix) -> CMatrix {
        let d = self.dim;
        assert_eq!(b.shape(), (d, d), "superoperator applied to wrong shape");
        let v = nalgebra::DVector::from_iterator(d * d, (0..d * d).map(|k| b[(k / d, k % d)]));
        let w = &self.matrix * v;
        CMatrix::from_fn(d, d, |i, j| w[i * d + j])
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &SuperOp) -> SuperOp {
        SuperOp {
            dim: self.dim,
            matrix: &self.matrix * &other.matrix,
        }
    }

    pub fn scale(&self, s: Complex64) -> SuperOp {
        SuperOp {
            dim: self.dim,
            matrix: &self.matrix * s,
        }
    }

    pub fn add(&self, other: &SuperOp) -> SuperOp {
        SuperOp {
            dim: self.dim,
            matrix: &self.matrix + &other.matrix,
        }
    }

    pub fn sub(&self, other: &SuperOp) -> SuperOp {
        SuperOp {
            dim: self.dim,
            matrix: &self.matrix - &other.matrix,
        }
    }

    /// Commutator `[self, other]` of the matrix forms.
    pub fn bracket(&self, other: &SuperOp) -> SuperOp {
        SuperOp {
            dim: self.dim,
            matrix: commutator(&self.matrix, &other.matrix),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }
}

pub fn build_superop(kind: SuperOpKind, a: &CMatrix) -> Result<SuperOp> {
    ensure_square(a, "superoperator symbol")?;
    Ok(match kind {
        SuperOpKind::Left => SuperOp::left(a),
        SuperOpKind::Right => SuperOp::right(a),
        SuperOpKind::Commutator => SuperOp::left(a).sub(&SuperOp::right(a)),
    })
}

/// Matrix exponential by scaling and squaring with Padé approximation.
pub fn matrix_exp(a: &CMatrix) -> Result<CMatrix> {
    ensure_square(a, "exponent")?;
    if !is_finite(a) {
        return Err(Error::arg("matrix_exp: non-finite entries"));
    }
    Ok(a.clone().exp())
}

/// `exp(-i t H)` for Hermitian `H`, via its eigendecomposition.
pub fn unitary_exp(h: &CMatrix, t: f64) -> CMatrix {
    let eig = SymmetricEigen::new(hermitian_part(h));
    let phases = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        h.nrows(),
        eig.eigenvalues.iter().map(|e| Complex64::from_polar(1.0, -e * t)),
    ));
    &eig.eigenvectors * phases * eig.eigenvectors.adjoint()
}

/// Eigenvalues of a Hermitian matrix grouped into spectral projectors.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Distinct eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub projectors: Vec<CMatrix>,
    /// Multiplicity of each distinct eigenvalue.
    pub multiplicities: Vec<usize>,
    /// Orthonormal eigenvectors (columns), ordered by ascending eigenvalue.
    pub eigenvectors: CMatrix,
    /// Eigenvalue of each column of `eigenvectors`.
    pub vector_eigenvalues: Vec<f64>,
}

impl SpectralDecomposition {
    /// Eigenvalues closer than `tol` are treated as degenerate.
    pub fn new(h: &CMatrix, tol: f64) -> Result<Self> {
        ensure_square(h, "Hamiltonian")?;
        if !is_hermitian(h, 1e-10 * (1.0 + frobenius(h))) {
            return Err(Error::arg("spectral decomposition needs a Hermitian matrix"));
        }
        let d = h.nrows();
        let eig = SymmetricEigen::new(hermitian_part(h));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let eigenvectors = CMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
        let vector_eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

        let mut eigenvalues: Vec<f64> = Vec::new();
        let mut projectors: Vec<CMatrix> = Vec::new();
        let mut multiplicities: Vec<usize> = Vec::new();
        let mut group_sum = 0.0;
        for (c, &e) in vector_eigenvalues.iter().enumerate() {
            let v = eigenvectors.column(c).into_owned();
            let p = &v * v.adjoint();
            match eigenvalues.last() {
                Some(&last) if (e - last).abs() <= tol => {
                    let n = multiplicities.last_mut().unwrap();
                    *n += 1;
                    group_sum += e;
                    *eigenvalues.last_mut().unwrap() = group_sum / *n as f64;
                    *projectors.last_mut().unwrap() += p;
                }
                _ => {
                    eigenvalues.push(e);
                    projectors.push(p);
                    multiplicities.push(1);
                    group_sum = e;
                }
            }
        }
        Ok(SpectralDecomposition {
            eigenvalues,
            projectors,
            multiplicities,
            eigenvectors,
            vector_eigenvalues,
        })
    }

    pub fn is_simple(&self) -> bool {
        self.multiplicities.iter().all(|&m| m == 1)
    }

    pub fn reconstruct(&self) -> CMatrix {
        let d = self.eigenvectors.nrows();
        self.eigenvalues
            .iter()
            .zip(&self.projectors)
            .fold(CMatrix::zeros(d, d), |acc, (e, p)| acc + p * c64(*e, 0.0))
    }

    /// Basis change into the eigenbasis: `V^* M V`.
    pub fn to_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        self.eigenvectors.adjoint() * m * &self.eigenvectors
    }

    pub fn from_eigenbasis(&self, m: &CMatrix) -> CMatrix {
        &self.eigenvectors * m * self.eigenvectors.adjoint()
    }
}

/// Polar projection onto the unitary group (Newton-Schulz iteration).
///
/// Valid for matrices within distance one of a unitary, which covers the
/// per-step drift of every propagator in this crate.
pub fn polar_unitarize(u: &CMatrix) -> CMatrix {
    let d = u.nrows();
    let eye = identity(d);
    let mut x = u.clone();
    for _ in 0..8 {
        let gram = x.adjoint() * &x;
        let defect = frobenius(&(&gram - &eye));
        if defect < 1e-15 * (d as f64).sqrt() {
            break;
        }
        x = &x * ((&eye * c64(3.0, 0.0) - gram) * c64(0.5, 0.0));
    }
    x
}

pub fn unitarity_defect(u: &CMatrix) -> f64 {
    op_norm(&(u.adjoint() * u - identity(u.nrows())))
}

// Fourth-order commutator-free Magnus scheme: two exponentials per step at
// the Gauss-Legendre nodes.
const SQRT3: f64 = 1.732_050_807_568_877_2;
pub(crate) const CF4_NODES: [f64; 2] = [0.5 - SQRT3 / 6.0, 0.5 + SQRT3 / 6.0];
pub(crate) const CF4_WEIGHTS: [f64; 2] = [0.25 + SQRT3 / 6.0, 0.25 - SQRT3 / 6.0];

/// Default integrator step `min(T/200, 0.01 / max ||H||)`.
pub fn default_step(period: f64, max_norm: f64) -> f64 {
    let by_period = period / 200.0;
    if max_norm > 0.0 {
        by_period.min(0.01 / max_norm)
    } else {
        by_period
    }
}

/// Propagator `U(t1, t0)` of `U' = -i H(t) U`, `U(t0) = 1`.
///
/// Uses a fourth-order commutator-free Magnus step with polar
/// re-unitarisation after every step. The interval is split into
/// `ceil((t1 - t0) / step)` equal steps.
pub fn ordered_propagator<F>(h: F, t0: f64, t1: f64, step: f64) -> Result<CMatrix>
where
    F: Fn(f64) -> CMatrix,
{
    if !(t1 >= t0) {
        return Err(Error::arg(format!("ordered_propagator: t1={t1} < t0={t0}")));
    }
    if !(step > 0.0) {
        return Err(Error::arg("ordered_propagator: step must be positive"));
    }
    let h0 = h(t0);
    ensure_square(&h0, "Hamiltonian sample")?;
    let d = h0.nrows();
    let mut u = identity(d);
    if t1 == t0 {
        return Ok(u);
    }
    let n = ((t1 - t0) / step).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / n as f64;
    let check = |m: &CMatrix, t: f64| -> Result<()> {
        if !is_finite(m) || !is_hermitian(m, 1e-10 * (1.0 + frobenius(m))) {
            return Err(Error::arg(format!("Hamiltonian sample at t={t} is not Hermitian")));
        }
        Ok(())
    };
    for s in 0..n {
        let t = t0 + s as f64 * dt;
        let ta = t + CF4_NODES[0] * dt;
        let tb = t + CF4_NODES[1] * dt;
        let ha = h(ta);
        let hb = h(tb);
        check(&ha, ta)?;
        check(&hb, tb)?;
        let first = &ha * c64(CF4_WEIGHTS[0], 0.0) + &hb * c64(CF4_WEIGHTS[1], 0.0);
        let second = &ha * c64(CF4_WEIGHTS[1], 0.0) + &hb * c64(CF4_WEIGHTS[0], 0.0);
        let step_u = unitary_exp(&second, dt) * unitary_exp(&first, dt);
        u = polar_unitarize(&(step_u * u));
    }
    Ok(u)
}

fn digits(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = index % d;
        index /= d;
    }
    out
}

fn compose_index(digits: &[usize], dims: &[usize]) -> usize {
    digits.iter().zip(dims).fold(0, |acc, (&x, &d)| acc * d + x)
}

/// Partial trace keeping the tensor factors listed in `keep`.
pub fn partial_trace(rho: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix> {
    ensure_square(rho, "density matrix")?;
    if dims.is_empty() || dims.iter().any(|&d| d == 0) {
        return Err(Error::arg("partial_trace: factor dimensions must be positive"));
    }
    let total: usize = dims.iter().product();
    if total != rho.nrows() {
        return Err(Error::DimensionMismatch {
            expected: total,
            got: rho.nrows(),
        });
    }
    let mut kept: Vec<usize> = keep.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if kept.iter().any(|&k| k >= dims.len()) {
        return Err(Error::arg("partial_trace: keep index out of range"));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|k| !kept.contains(k)).collect();
    let kept_dims: Vec<usize> = kept.iter().map(|&k| dims[k]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let n_keep: usize = kept_dims.iter().product();
    let n_trace: usize = traced_dims.iter().product();

    let full_index = |kd: &[usize], td: &[usize]| {
        let mut all = vec![0; dims.len()];
        for (&slot, &x) in kept.iter().zip(kd) {
            all[slot] = x;
        }
        for (&slot, &x) in traced.iter().zip(td) {
            all[slot] = x;
        }
        compose_index(&all, dims)
    };

    let mut out = CMatrix::zeros(n_keep, n_keep);
    for i in 0..n_keep {
        let di = digits(i, &kept_dims);
        for j in 0..n_keep {
            let dj = digits(j, &kept_dims);
            let mut acc = ZERO;
            for r in 0..n_trace {
                let dr = digits(r, &traced_dims);
                acc += rho[(full_index(&di, &dr), full_index(&dj, &dr))];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}
