//! Signal-plus-noise model: `x_i ~ N(μ, Σ + Q_i)` with known noise
//! covariances `Q_i = √i · UᵀU` (observations indexed from 1).
//!
//! `Σ` is either diagonal, with `θ = [μ_1..μ_q, Σ_11..Σ_qq]`, or full, with
//! `θ = [μ_1..μ_q, Σ_11, Σ_12, .., Σ_1q, Σ_22, .., Σ_qq]` (upper triangle by rows).

use nalgebra::Cholesky;

use crate::error::{FimError, Result};
use crate::models::{check_dim, Bounds, DataSet, FimSource, Model};
use crate::numerics::linalg::{Matrix, SymMat, Vector};
use crate::numerics::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const VARIANCE_MIN: f64 = 1e-8;

/// The 4×4 `UᵀU` matrix used for the four-dimensional study.
pub const DEFAULT_UTU: [f64; 16] = [
    0.0289, 0.0219, 0.0120, 0.0216, //
    0.0219, 0.0200, 0.0068, 0.0189, //
    0.0120, 0.0068, 0.0076, 0.0053, //
    0.0216, 0.0189, 0.0053, 0.0210,
];

/// Nearest positive semidefinite matrix in Frobenius norm (eigenvalues clipped at zero).
pub fn nearest_psd(m: &SymMat) -> SymMat {
    let eig = nalgebra::SymmetricEigen::new(m.as_matrix().clone());
    let d = eig.eigenvalues.map(|v| v.max(0.0));
    SymMat::new(&eig.eigenvectors * Matrix::from_diagonal(&d) * eig.eigenvectors.transpose())
        .expect("finite reconstruction")
}

/// Which entries of `Σ` are parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceForm {
    Diagonal,
    Full,
}

#[derive(Clone, Debug)]
pub struct SignalPlusNoiseModel {
    q: usize,
    form: CovarianceForm,
    /// `(j, k)` with `j ≤ k` for each covariance parameter.
    cov_index: Vec<(usize, usize)>,
    utu: SymMat,
    utu_sqrt: Matrix,
}

/// Per-observation inverse covariance and whitened residual.
struct ObsTerms {
    w: Matrix,
    wr: Vector,
    log_det: f64,
    quad: f64,
}

/// Index pairs `(u, v)` with `E_A = Σ e_u e_vᵀ = ∂V/∂Σ_jk`.
fn pattern(j: usize, k: usize) -> impl Iterator<Item = (usize, usize)> {
    let second = if j == k { None } else { Some((k, j)) };
    std::iter::once((j, k)).chain(second)
}

impl SignalPlusNoiseModel {
    /// Diagonal-`Σ` model.
    pub fn new(utu: SymMat) -> Result<Self> {
        Self::with_form(utu, CovarianceForm::Diagonal)
    }

    pub fn with_form(utu: SymMat, form: CovarianceForm) -> Result<Self> {
        if utu.min_eigenvalue() < -1e-12 * utu.as_matrix().amax().max(1.0) {
            return Err(FimError::InvalidInput("UᵀU must be positive semidefinite".into()));
        }
        let q = utu.dim();
        let cov_index = match form {
            CovarianceForm::Diagonal => (0..q).map(|j| (j, j)).collect(),
            CovarianceForm::Full => (0..q).flat_map(|j| (j..q).map(move |k| (j, k))).collect(),
        };
        Ok(SignalPlusNoiseModel {
            q,
            form,
            cov_index,
            utu_sqrt: utu.psd_sqrt(),
            utu,
        })
    }

    /// Four-dimensional model with the built-in `UᵀU`.
    ///
    /// The four-decimal constant is slightly indefinite (smallest eigenvalue
    /// about −9e−5), so it is replaced by its nearest positive semidefinite
    /// matrix: negative eigenvalues are set to zero.
    pub fn default_four() -> Self {
        let printed = SymMat::from_row_slice(4, &DEFAULT_UTU).expect("constant matrix is valid");
        Self::new(nearest_psd(&printed)).expect("projection is PSD")
    }

    /// `UᵀU` from a `q × q` matrix `U` of independent uniform(0, `scale`) entries.
    pub fn random_utu(q: usize, scale: f64, rng: &mut RngStream) -> SymMat {
        let u = Matrix::from_fn(q, q, |_, _| scale * rng.draw_uniform());
        SymMat::new(u.transpose() * u).expect("finite product")
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn form(&self) -> CovarianceForm {
        self.form
    }

    pub fn utu(&self) -> &SymMat {
        &self.utu
    }

    /// Packs `μ` and `Σ` into a parameter vector for this model's form.
    pub fn pack(&self, mu: &[f64], sigma: &SymMat) -> Result<Vector> {
        if mu.len() != self.q || sigma.dim() != self.q {
            return Err(FimError::DimensionMismatch {
                expected: self.q,
                found: mu.len(),
            });
        }
        let mut t: Vec<f64> = mu.to_vec();
        t.extend(self.cov_index.iter().map(|&(j, k)| sigma.get(j, k)));
        Ok(Vector::from_vec(t))
    }

    /// `Σ` as a matrix.
    pub fn signal_cov(&self, theta: &Vector) -> Matrix {
        let mut s = Matrix::zeros(self.q, self.q);
        for (a, &(j, k)) in self.cov_index.iter().enumerate() {
            s[(j, k)] = theta[self.q + a];
            s[(k, j)] = theta[self.q + a];
        }
        s
    }

    /// `Q_i` for the zero-based observation index `i`.
    pub fn noise_cov(&self, i: usize) -> Matrix {
        self.utu.as_matrix() * ((i + 1) as f64).sqrt()
    }

    fn p(&self) -> usize {
        self.q + self.cov_index.len()
    }

    fn check(&self, theta: &Vector) -> Result<()> {
        check_dim(theta, self.p())?;
        for (a, &(j, k)) in self.cov_index.iter().enumerate() {
            if j == k && theta[self.q + a] < 0.0 {
                return Err(FimError::InvalidInput("signal variances must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn inverse_cov(&self, theta: &Vector, i: usize) -> Result<(Matrix, f64)> {
        let chol = Cholesky::new(self.signal_cov(theta) + self.noise_cov(i))
            .ok_or_else(|| FimError::NotPositiveDefinite(format!("Σ + Q_{}", i + 1)))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok((chol.inverse(), log_det))
    }

    fn terms(&self, theta: &Vector, x: &[f64], i: usize) -> Result<ObsTerms> {
        let (w, log_det) = self.inverse_cov(theta, i)?;
        let r = Vector::from_iterator(self.q, (0..self.q).map(|j| x[j] - theta[j]));
        let wr = &w * &r;
        let quad = r.dot(&wr);
        Ok(ObsTerms { w, wr, log_det, quad })
    }

    /// Closed-form `F_n(θ)`: mean block `Σ_i W_i`, covariance block
    /// `½ Σ_i tr(W_i E_A W_i E_B)`, zero cross block.
    pub fn spn_expected_fim(&self, theta: &Vector, n: usize) -> Result<SymMat> {
        self.check(theta)?;
        let q = self.q;
        let p = self.p();
        let mut f = Matrix::zeros(p, p);
        for i in 0..n {
            let (w, _) = self.inverse_cov(theta, i)?;
            for a in 0..q {
                for b in 0..q {
                    f[(a, b)] += w[(a, b)];
                }
            }
            for (a, &(j, k)) in self.cov_index.iter().enumerate() {
                for (b, &(s, t)) in self.cov_index.iter().enumerate() {
                    let mut tr = 0.0;
                    for (u, v) in pattern(j, k) {
                        for (x, y) in pattern(s, t) {
                            tr += w[(y, u)] * w[(v, x)];
                        }
                    }
                    f[(q + a, q + b)] += 0.5 * tr;
                }
            }
        }
        SymMat::new(f)
    }
}

impl Model for SignalPlusNoiseModel {
    fn name(&self) -> &str {
        "signal_plus_noise"
    }

    fn dim(&self) -> usize {
        self.p()
    }

    fn obs_dim(&self) -> usize {
        self.q
    }

    fn sample(&self, theta: &Vector, n: usize, rng: &mut RngStream) -> Result<DataSet> {
        self.check(theta)?;
        let q = self.q;
        let sigma_sqrt = match self.form {
            CovarianceForm::Diagonal => Matrix::from_diagonal(&Vector::from_fn(q, |j, _| theta[q + j].sqrt())),
            CovarianceForm::Full => {
                let s = SymMat::new(self.signal_cov(theta))?;
                if s.min_eigenvalue() < -1e-12 * s.as_matrix().amax().max(1.0) {
                    return Err(FimError::NotPositiveDefinite("signal covariance Σ".into()));
                }
                s.psd_sqrt()
            }
        };
        let mut values = Vec::with_capacity(n * q);
        let mut z = Vector::zeros(q);
        let mut e = Vector::zeros(q);
        for i in 0..n {
            for j in 0..q {
                z[j] = rng.draw_normal();
                e[j] = rng.draw_normal();
            }
            let noise = &self.utu_sqrt * &z * ((i + 1) as f64).powf(0.25);
            let signal = &sigma_sqrt * &e;
            for j in 0..q {
                values.push(theta[j] + signal[j] + noise[j]);
            }
        }
        DataSet::new(q, values)
    }

    fn obs_neg_log_lik(&self, theta: &Vector, data: &DataSet, i: usize) -> Result<f64> {
        self.check(theta)?;
        let t = self.terms(theta, data.obs(i), i)?;
        Ok(0.5 * (t.log_det + t.quad + self.q as f64 * LN_2PI))
    }

    fn obs_grad(&self, theta: &Vector, data: &DataSet, i: usize) -> Result<Vector> {
        self.check(theta)?;
        let q = self.q;
        let t = self.terms(theta, data.obs(i), i)?;
        let mut g = Vector::zeros(self.p());
        for j in 0..q {
            g[j] = -t.wr[j];
        }
        for (a, &(j, k)) in self.cov_index.iter().enumerate() {
            g[q + a] = pattern(j, k).map(|(u, v)| 0.5 * t.w[(v, u)] - 0.5 * t.wr[u] * t.wr[v]).sum();
        }
        Ok(g)
    }

    fn obs_hessian(&self, theta: &Vector, data: &DataSet, i: usize) -> Result<SymMat> {
        self.check(theta)?;
        let q = self.q;
        let t = self.terms(theta, data.obs(i), i)?;
        let (w, wr) = (&t.w, &t.wr);
        let mut h = Matrix::zeros(self.p(), self.p());
        for a in 0..q {
            for b in 0..q {
                h[(a, b)] = w[(a, b)];
            }
        }
        for (ai, &(j, k)) in self.cov_index.iter().enumerate() {
            // μ–Σ block: (W E_A w)_a.
            for a in 0..q {
                let v: f64 = pattern(j, k).map(|(u, v)| w[(a, u)] * wr[v]).sum();
                h[(a, q + ai)] = v;
                h[(q + ai, a)] = v;
            }
            for (bi, &(s, tt)) in self.cov_index.iter().enumerate() {
                let mut v = 0.0;
                for (u, vv) in pattern(j, k) {
                    for (x, y) in pattern(s, tt) {
                        v += -0.5 * w[(y, u)] * w[(vv, x)] + wr[u] * w[(vv, x)] * wr[y];
                    }
                }
                h[(q + ai, q + bi)] = v;
            }
        }
        SymMat::new(h)
    }

    fn expected_fim(&self, theta: &Vector, n: usize) -> Result<Option<(SymMat, FimSource)>> {
        Ok(Some((self.spn_expected_fim(theta, n)?, FimSource::Analytic)))
    }

    fn bounds(&self) -> Bounds {
        let mut b = Bounds::unbounded(self.p());
        for (a, &(j, k)) in self.cov_index.iter().enumerate() {
            if j == k {
                b.lower[self.q + a] = VARIANCE_MIN;
            }
        }
        b
    }

    fn initial_guess(&self, data: &DataSet) -> Vector {
        let q = self.q;
        let n = data.n();
        let nf = n as f64;
        let mean: Vec<f64> = (0..q).map(|j| (0..n).map(|i| data.obs(i)[j]).sum::<f64>() / nf).collect();
        let mean_scale = (0..n).map(|i| ((i + 1) as f64).sqrt()).sum::<f64>() / nf;
        let cov = |j: usize, k: usize| {
            (0..n).map(|i| (data.obs(i)[j] - mean[j]) * (data.obs(i)[k] - mean[k])).sum::<f64>() / n.max(2).saturating_sub(1) as f64
        };
        let mut theta = Vector::zeros(self.p());
        for j in 0..q {
            theta[j] = mean[j];
        }
        for (a, &(j, k)) in self.cov_index.iter().enumerate() {
            let c = cov(j, k);
            let noise = mean_scale * self.utu.get(j, k);
            theta[q + a] = if j == k { (c - noise).max(0.1 * c).max(1e-3) } else { 0.0 };
        }
        theta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd::{fd_gradient, fd_hessian, FdStep};

    #[test]
    fn expected_fim_standard_gaussian() {
        let m = SignalPlusNoiseModel::new(SymMat::zeros(2)).unwrap();
        let f = m.spn_expected_fim(&Vector::from_vec(vec![0.0, 0.0, 1.0, 1.0]), 1).unwrap();
        let expect = SymMat::from_diagonal(&[1.0, 1.0, 0.5, 0.5]);
        assert!((f.as_matrix() - expect.as_matrix()).amax() < 1e-14);
    }

    #[test]
    fn mean_gradient_vanishes_at_the_data() {
        let m = SignalPlusNoiseModel::default_four();
        let theta = Vector::from_vec(vec![0.3, -0.2, 0.1, 0.5, 1.0, 1.0, 1.0, 1.0]);
        let data = DataSet::new(4, vec![0.3, -0.2, 0.1, 0.5]).unwrap();
        let g = m.grad(&theta, &data).unwrap();
        for j in 0..4 {
            assert!(g[j].abs() < 1e-15);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = SignalPlusNoiseModel::default_four();
        let mut rng = RngStream::new(23, 0);
        for _ in 0..10 {
            let theta = Vector::from_fn(8, |j, _| {
                if j < 4 {
                    rng.draw_normal()
                } else {
                    rng.draw_uniform_range(0.5, 2.0)
                }
            });
            let data = m.sample(&theta, 5, &mut rng).unwrap();
            let g = m.grad(&theta, &data).unwrap();
            let gf = fd_gradient(|t| m.neg_log_lik(t, &data), &theta, FdStep::Default).unwrap();
            assert!((&g - &gf).amax() <= 1e-5 * g.amax().max(1.0));
            let h = m.hessian(&theta, &data).unwrap();
            let hf = fd_hessian(|t| m.neg_log_lik(t, &data), &theta, FdStep::Default).unwrap();
            assert!((h.as_matrix() - hf.as_matrix()).amax() <= 1e-4 * h.as_matrix().amax().max(1.0));
        }
    }

    #[test]
    fn sample_covariance_of_standard_case() {
        let m = SignalPlusNoiseModel::new(SymMat::zeros(2)).unwrap();
        let data = m.sample(&Vector::from_vec(vec![0.0, 0.0, 1.0, 1.0]), 100_000, &mut RngStream::new(5, 5)).unwrap();
        let n = data.n() as f64;
        let mut c = [[0.0; 2]; 2];
        for i in 0..data.n() {
            let x = data.obs(i);
            for a in 0..2 {
                for b in 0..2 {
                    c[a][b] += x[a] * x[b] / n;
                }
            }
        }
        assert!((c[0][0] - 1.0).abs() < 0.02 && (c[1][1] - 1.0).abs() < 0.02);
        assert!(c[0][1].abs() < 0.02);
    }

    #[test]
    fn noise_covariance_grows_with_index() {
        let m = SignalPlusNoiseModel::default_four();
        let base = m.utu().get(0, 0);
        assert!((m.noise_cov(3)[(0, 0)] - 2.0 * base).abs() < 1e-15);
    }

    #[test]
    fn built_in_matrix_is_close_to_printed_constant() {
        let m = SignalPlusNoiseModel::default_four();
        assert!(m.utu().min_eigenvalue() >= -1e-12);
        for r in 0..4 {
            for s in 0..4 {
                assert!((m.utu().get(r, s) - DEFAULT_UTU[4 * r + s]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn full_form_derivatives_match_finite_differences() {
        let mut rng = RngStream::new(31, 0);
        let utu = SignalPlusNoiseModel::random_utu(3, 0.5, &mut rng);
        let m = SignalPlusNoiseModel::with_form(utu, CovarianceForm::Full).unwrap();
        assert_eq!(m.dim(), 9);
        let sigma = SymMat::from_row_slice(3, &[1.0, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 1.0]).unwrap();
        let theta = m.pack(&[0.1, -0.3, 0.2], &sigma).unwrap();
        let data = m.sample(&theta, 6, &mut rng).unwrap();
        let g = m.grad(&theta, &data).unwrap();
        let gf = fd_gradient(|t| m.neg_log_lik(t, &data), &theta, FdStep::Default).unwrap();
        assert!((&g - &gf).amax() <= 1e-5 * g.amax().max(1.0));
        let h = m.hessian(&theta, &data).unwrap();
        let hf = fd_hessian(|t| m.neg_log_lik(t, &data), &theta, FdStep::Default).unwrap();
        assert!((h.as_matrix() - hf.as_matrix()).amax() <= 1e-4 * h.as_matrix().amax().max(1.0));
    }

    #[test]
    fn full_form_fim_is_mean_hessian() {
        let mut rng = RngStream::new(32, 0);
        let utu = SignalPlusNoiseModel::random_utu(2, 1.0, &mut rng);
        let m = SignalPlusNoiseModel::with_form(utu, CovarianceForm::Full).unwrap();
        let sigma = SymMat::from_row_slice(2, &[1.0, 0.5, 0.5, 1.0]).unwrap();
        let theta = m.pack(&[0.0, 0.0], &sigma).unwrap();
        let f = m.spn_expected_fim(&theta, 3).unwrap();
        let reps = 20_000;
        let mut avg = Matrix::zeros(5, 5);
        for _ in 0..reps {
            let d = m.sample(&theta, 3, &mut rng).unwrap();
            avg += m.hessian(&theta, &d).unwrap().into_matrix() / reps as f64;
        }
        assert!((avg - f.as_matrix()).amax() < 0.05 * f.as_matrix().amax());
    }

    #[test]
    fn diagonal_form_agrees_with_full_form_block() {
        let utu = SymMat::from_row_slice(2, &[0.3, 0.1, 0.1, 0.2]).unwrap();
        let d = SignalPlusNoiseModel::new(utu.clone()).unwrap();
        let f = SignalPlusNoiseModel::with_form(utu, CovarianceForm::Full).unwrap();
        let sigma = SymMat::from_diagonal(&[1.2, 0.7]);
        let fd = d.spn_expected_fim(&d.pack(&[0.0, 0.0], &sigma).unwrap(), 4).unwrap();
        let ff = f.spn_expected_fim(&f.pack(&[0.0, 0.0], &sigma).unwrap(), 4).unwrap();
        // Full ordering [μ1, μ2, Σ11, Σ12, Σ22]; diagonal ordering [μ1, μ2, Σ11, Σ22].
        let map = [0, 1, 2, 4];
        for a in 0..4 {
            for b in 0..4 {
                assert!((fd.get(a, b) - ff.get(map[a], map[b])).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn non_positive_covariance_is_rejected() {
        let m = SignalPlusNoiseModel::new(SymMat::zeros(1)).unwrap();
        let data = DataSet::scalar(vec![1.0]).unwrap();
        let err = m.neg_log_lik(&Vector::from_vec(vec![0.0, 0.0]), &data).unwrap_err();
        assert!(matches!(err, FimError::NotPositiveDefinite(_)));
    }
}
