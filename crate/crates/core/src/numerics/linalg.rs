//! Dense linear algebra on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FimError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Square matrix kept exactly symmetric by averaging with its transpose on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMat(Matrix);

impl SymMat {
    /// Builds a symmetric matrix from `m`, replacing it by `(m + mᵀ)/2`.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(FimError::InvalidInput(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(FimError::NonFiniteEvaluation("matrix entry".into()));
        }
        Ok(Self::symmetrize_unchecked(m))
    }

    /// Symmetrizes without validation. Callers guarantee square, finite input.
    pub(crate) fn symmetrize_unchecked(mut m: Matrix) -> Self {
        let p = m.nrows();
        for r in 0..p {
            for s in (r + 1)..p {
                let v = 0.5 * (m[(r, s)] + m[(s, r)]);
                m[(r, s)] = v;
                m[(s, r)] = v;
            }
        }
        SymMat(m)
    }

    pub fn zeros(p: usize) -> Self {
        SymMat(Matrix::zeros(p, p))
    }

    pub fn identity(p: usize) -> Self {
        SymMat(Matrix::identity(p, p))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMat(Matrix::from_diagonal(&Vector::from_column_slice(d)))
    }

    /// Row-major constructor, mainly for tests and configs.
    pub fn from_row_slice(p: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != p * p {
            return Err(FimError::DimensionMismatch {
                expected: p * p,
                found: entries.len(),
            });
        }
        Self::new(Matrix::from_row_slice(p, p, entries))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn get(&self, r: usize, s: usize) -> f64 {
        self.0[(r, s)]
    }

    pub fn scale(&self, c: f64) -> SymMat {
        SymMat(&self.0 * c)
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        SymMat(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        SymMat(&self.0 - &other.0)
    }

    /// Frobenius norm of `self − other`.
    pub fn frobenius_distance(&self, other: &SymMat) -> f64 {
        (&self.0 - &other.0).norm()
    }

    pub fn eigenvalues(&self) -> Vector {
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().min()
    }

    pub fn is_positive_definite(&self) -> bool {
        Cholesky::new(self.0.clone()).is_some()
    }

    /// Symmetric square root of a positive semidefinite matrix (negative eigenvalues clipped to 0).
    pub fn psd_sqrt(&self) -> Matrix {
        let eig = SymmetricEigen::new(self.0.clone());
        let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        &eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose()
    }

    /// Solves `self · x = b` by Cholesky factorization.
    pub fn solve(&self, b: &Vector) -> Result<Vector> {
        let chol = Cholesky::new(self.0.clone())
            .ok_or_else(|| FimError::NotPositiveDefinite("solve".into()))?;
        Ok(chol.solve(b))
    }

    /// Log-determinant via Cholesky; fails for matrices that are not positive definite.
    pub fn log_det(&self) -> Result<f64> {
        let chol = Cholesky::new(self.0.clone())
            .ok_or_else(|| FimError::NotPositiveDefinite("log-determinant".into()))?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    }
}

impl Serialize for SymMat {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..self.dim())
            .map(|r| (0..self.dim()).map(|s| self.0[(r, s)]).collect())
            .collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SymMat {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(deserializer)?;
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(serde::de::Error::custom("matrix rows must all have length equal to the row count"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        SymMat::from_row_slice(p, &flat).map_err(serde::de::Error::custom)
    }
}

/// Inverse of a symmetric positive definite matrix by Cholesky factorization.
pub fn sym_inverse(m: &SymMat) -> Result<SymMat> {
    let chol = Cholesky::new(m.0.clone())
        .ok_or_else(|| FimError::NotPositiveDefinite("inverse".into()))?;
    let inv = chol.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(FimError::NotPositiveDefinite("inverse is not finite".into()));
    }
    Ok(SymMat::symmetrize_unchecked(inv))
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;
    use proptest::prelude::*;

    fn random_spd(p: usize, rng: &mut RngStream) -> SymMat {
        let a = Matrix::from_fn(p, p, |_, _| rng.draw_normal());
        SymMat::new(&a * a.transpose() + Matrix::identity(p, p) * p as f64).unwrap()
    }

    fn power_iteration_norm(m: &Matrix) -> f64 {
        let mtm = m.transpose() * m;
        let mut v = Vector::from_element(m.ncols(), 1.0);
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let w = &mtm * &v;
            let next = w.norm();
            v = w / next;
            if (next - lambda).abs() <= 1e-15 * next {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda.sqrt()
    }

    #[test]
    fn inverse_of_identity_and_diagonal() {
        let i3 = SymMat::identity(3);
        assert_eq!(sym_inverse(&i3).unwrap(), i3);
        let d = sym_inverse(&SymMat::from_diagonal(&[2.0, 4.0])).unwrap();
        assert!((d.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((d.get(1, 1) - 0.25).abs() < 1e-15);
        assert_eq!(d.get(0, 1), 0.0);
    }

    #[test]
    fn inverse_residual_of_random_spd() {
        let mut rng = RngStream::new(11, 0);
        for _ in 0..20 {
            let m = random_spd(5, &mut rng);
            let inv = sym_inverse(&m).unwrap();
            let resid = m.as_matrix() * inv.as_matrix() - Matrix::identity(5, 5);
            assert!(resid.amax() < 1e-8);
        }
    }

    #[test]
    fn inverse_rejects_indefinite() {
        let m = SymMat::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(sym_inverse(&m), Err(FimError::NotPositiveDefinite(_))));
        let z = SymMat::zeros(2);
        assert!(sym_inverse(&z).is_err());
    }

    #[test]
    fn spectral_norm_simple_cases() {
        assert!((spectral_norm(&Matrix::identity(4, 4)) - 1.0).abs() < 1e-14);
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, -5.0]));
        assert!((spectral_norm(&d) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        let mut rng = RngStream::new(5, 1);
        for _ in 0..10 {
            let m = Matrix::from_fn(6, 6, |_, _| rng.draw_normal());
            let a = spectral_norm(&m);
            let b = power_iteration_norm(&m);
            assert!((a - b).abs() <= 1e-9 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn construction_symmetrizes_and_validates() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        let s = SymMat::new(m).unwrap();
        assert_eq!(s.get(0, 1), 3.0);
        assert_eq!(s.get(1, 0), 3.0);
        assert!(SymMat::new(Matrix::zeros(2, 3)).is_err());
        assert!(SymMat::new(Matrix::from_element(2, 2, f64::NAN)).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let s = SymMat::from_row_slice(2, &[1.0, 0.5, 0.5, 2.0]).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: SymMat = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }

    proptest! {
        #[test]
        fn double_inverse_recovers_matrix(seed in 0u64..10_000, p in 1usize..7) {
            let mut rng = RngStream::new(seed, 3);
            let m = random_spd(p, &mut rng);
            let back = sym_inverse(&sym_inverse(&m).unwrap()).unwrap();
            let rel = (back.as_matrix() - m.as_matrix()).amax() / m.as_matrix().amax();
            prop_assert!(rel < 1e-6);
        }

        #[test]
        fn spectral_norm_is_absolutely_homogeneous(seed in 0u64..10_000, c in -50.0f64..50.0) {
            let mut rng = RngStream::new(seed, 4);
            let m = Matrix::from_fn(4, 3, |_, _| rng.draw_normal());
            let lhs = spectral_norm(&(&m * c));
            let rhs = c.abs() * spectral_norm(&m);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }
}
