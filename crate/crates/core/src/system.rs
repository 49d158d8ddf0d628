// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

use nalgebra::SymmetricEigen;

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_square, frobenius, hermitian_part, is_finite, is_hermitian, op_norm, pauli_x,
    pauli_z, trace, CMatrix, SpectralDecomposition,
};

/// Degeneracy threshold used when grouping eigenvalues of `H_s`.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// The small system: Hamiltonian `H_s` and the reservoir coupling operator `Q`.
#[derive(Debug, Clone)]
pub struct SystemModel {
    h_s: CMatrix,
    q: CMatrix,
    spectrum: SpectralDecomposition,
}

impl SystemModel {
    pub fn new(h_s: CMatrix, q: CMatrix) -> Result<Self> {
        ensure_square(&h_s, "H_s")?;
        ensure_square(&q, "Q")?;
        if h_s.nrows() != q.nrows() {
            return Err(Error::DimensionMismatch {
                expected: h_s.nrows(),
                got: q.nrows(),
            });
        }
        if !is_finite(&h_s) || !is_finite(&q) {
            return Err(Error::arg("system operators must have finite entries"));
        }
        for (name, m) in [("H_s", &h_s), ("Q", &q)] {
            if !is_hermitian(m, 1e-12 * (1.0 + frobenius(m))) {
                return Err(Error::arg(format!("{name} must be Hermitian")));
            }
        }
        let spectrum = SpectralDecomposition::new(&h_s, DEGENERACY_TOL)?;
        Ok(SystemModel { h_s, q, spectrum })
    }

    /// The qubit of the spin-fermion model: `H_s = sigma_z`, `Q = sigma_x`.
    pub fn spin_fermion() -> Self {
        SystemModel::new(pauli_z(), pauli_x()).expect("Pauli matrices are valid")
    }

    pub fn dim(&self) -> usize {
        self.h_s.nrows()
    }

    pub fn h_s(&self) -> &CMatrix {
        &self.h_s
    }

    pub fn q(&self) -> &CMatrix {
        &self.q
    }

    pub fn spectrum(&self) -> &SpectralDecomposition {
        &self.spectrum
    }

    pub fn h_norm(&self) -> f64 {
        op_norm(&self.h_s)
    }

    pub fn q_norm(&self) -> f64 {
        op_norm(&self.q)
    }
}

/// Checks that `rho` is a density matrix (Hermitian, unit trace, PSD) to `tol`.
pub fn validate_state(rho: &CMatrix, dim: usize, tol: f64) -> Result<()> {
    if rho.shape() != (dim, dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: rho.nrows(),
        });
    }
    if !is_finite(rho) || !is_hermitian(rho, tol) {
        return Err(Error::arg("state is not Hermitian"));
    }
    let tr = trace(rho);
    if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
        return Err(Error::arg(format!("state trace {tr} differs from 1")));
    }
    let min_eig = SymmetricEigen::new(hermitian_part(rho))
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &e| a.min(e));
    if min_eig < -tol {
        return Err(Error::arg(format!(
            "state has negative eigenvalue {min_eig:.3e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, identity, pauli_y};

    #[test]
    fn rejects_mismatched_or_non_hermitian_operators() {
        assert!(SystemModel::new(pauli_z(), identity(3)).is_err());
        let bad = CMatrix::from_row_slice(2, 2, &[c64(0.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)]);
        assert!(SystemModel::new(pauli_z(), bad).is_err());
        assert!(SystemModel::new(pauli_z(), pauli_y()).is_ok());
    }

    #[test]
    fn state_validation() {
        let rho = identity(2) * c64(0.5, 0.0);
        assert!(validate_state(&rho, 2, 1e-10).is_ok());
        assert!(validate_state(&identity(2), 2, 1e-10).is_err());
        let neg = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c64(1.5, 0.0), c64(-0.5, 0.0)]));
        assert!(validate_state(&neg, 2, 1e-10).is_err());
    }
}
