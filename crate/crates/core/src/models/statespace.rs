//! Linear Gaussian state-space model with a scalar observation channel:
//!
//! ```text
//! x_t = A x_{t−1} + w_t,   w_t ~ N(0, Q),  Q = diag(θ)
//! y_t = C x_t + v_t,       v_t ~ N(0, R)
//! ```
//!
//! with `x_0 ~ N(μ0, Σ0)`. The likelihood is evaluated by the Kalman filter.
//! Because `Cov(y)` is linear in `θ`, the joint Gaussian form gives closed-form
//! gradients, Hessians and Fisher information, used as cross-checks and for the
//! exact expected information.

use nalgebra::Cholesky;

use crate::error::{FimError, Result};
use crate::models::{check_dim, Bounds, DataSet, DataStructure, FimSource, Model, SolverKind};
use crate::numerics::fd::{fd_gradient, fd_hessian, FdStep};
use crate::numerics::linalg::{Matrix, SymMat, Vector};
use crate::numerics::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const VARIANCE_MIN: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct LinearStateSpaceModel {
    a: Matrix,
    c: Vector,
    r: f64,
    mu0: Vector,
    sigma0: SymMat,
}

/// Per-step output of the Kalman filter.
#[derive(Clone, Debug)]
pub struct KalmanRun {
    /// `ε_t = y_t − C x̂_{t|t−1}`.
    pub innovations: Vec<f64>,
    /// `S_t = C P_{t|t−1} Cᵀ + R`.
    pub innovation_vars: Vec<f64>,
    /// `x̂_{t|t}`.
    pub filtered_means: Vec<Vector>,
    /// `P_{t|t}`.
    pub filtered_covs: Vec<SymMat>,
}

impl KalmanRun {
    /// `½ Σ_t [log S_t + ε_t² / S_t]`.
    pub fn neg_log_lik(&self) -> f64 {
        self.innovations
            .iter()
            .zip(&self.innovation_vars)
            .map(|(e, s)| 0.5 * (s.ln() + e * e / s))
            .sum()
    }
}

/// Joint Gaussian description of `y_{1:n}`: `Cov(y) = R·I + G_0 + Σ_j θ_j G_j`.
struct JointForm {
    mean: Vector,
    base: Matrix,
    g: Vec<Matrix>,
}

impl LinearStateSpaceModel {
    pub fn new(a: Matrix, c: Vector, r: f64, mu0: Vector, sigma0: SymMat) -> Result<Self> {
        let l = a.nrows();
        if l == 0 || a.ncols() != l || c.len() != l || mu0.len() != l || sigma0.dim() != l {
            return Err(FimError::InvalidInput("state-space dimensions disagree".into()));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(FimError::InvalidInput("observation variance R must be positive".into()));
        }
        if sigma0.min_eigenvalue() < -1e-12 {
            return Err(FimError::InvalidInput("Σ0 must be positive semidefinite".into()));
        }
        if a.iter().chain(c.iter()).chain(mu0.iter()).any(|v| !v.is_finite()) {
            return Err(FimError::NonFiniteEvaluation("state-space system matrix".into()));
        }
        Ok(LinearStateSpaceModel { a, c, r, mu0, sigma0 })
    }

    /// Three-state system with companion-form transition `[[0,1,0],[0,0,1],[0.8,0.8,−0.8]]`,
    /// `C = [1, 0, 0]`, `R = 1`, `μ0 = 0`, `Σ0 = 0`.
    pub fn three_state_default() -> Self {
        let a = Matrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.8, 0.8, -0.8]);
        Self::new(a, Vector::from_vec(vec![1.0, 0.0, 0.0]), 1.0, Vector::zeros(3), SymMat::zeros(3))
            .expect("constant system is valid")
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn check_nonnegative(&self, theta: &Vector) -> Result<()> {
        check_dim(theta, self.state_dim())?;
        if theta.iter().any(|&v| v < 0.0) {
            return Err(FimError::InvalidInput("state noise variances must be non-negative".into()));
        }
        Ok(())
    }

    /// Full Kalman filter record.
    pub fn kalman_filter(&self, theta: &Vector, y: &DataSet) -> Result<KalmanRun> {
        self.check_nonnegative(theta)?;
        let n = y.n();
        let q = Matrix::from_diagonal(theta);
        let mut x = self.mu0.clone();
        let mut p = self.sigma0.as_matrix().clone();
        let mut run = KalmanRun {
            innovations: Vec::with_capacity(n),
            innovation_vars: Vec::with_capacity(n),
            filtered_means: Vec::with_capacity(n),
            filtered_covs: Vec::with_capacity(n),
        };
        for t in 0..n {
            let x_pred = &self.a * &x;
            let p_pred = &self.a * &p * self.a.transpose() + &q;
            let pc = &p_pred * &self.c;
            let s = self.c.dot(&pc) + self.r;
            if !(s > 0.0 && s.is_finite()) {
                return Err(FimError::SingularInnovation { t: t + 1, variance: s });
            }
            let e = y.values()[t] - self.c.dot(&x_pred);
            let k = &pc / s;
            x = x_pred + &k * e;
            p = p_pred - &k * pc.transpose();
            let p_sym = SymMat::new(p.clone())?;
            p = p_sym.as_matrix().clone();
            run.innovations.push(e);
            run.innovation_vars.push(s);
            run.filtered_means.push(x.clone());
            run.filtered_covs.push(p_sym);
        }
        Ok(run)
    }

    /// `−L(θ) = ½ Σ_t [log S_t + ε_t²/S_t]`, without the `2π` constant.
    pub fn ss_neg_log_lik(&self, theta: &Vector, y: &DataSet) -> Result<f64> {
        self.check_nonnegative(theta)?;
        self.filter_nll(theta, y.values())
    }

    /// Allocation-light filter likelihood. Accepts slightly negative variances so
    /// that finite-difference probes around a boundary estimate remain defined;
    /// fails only if an innovation variance is not positive.
    fn filter_nll(&self, theta: &Vector, y: &[f64]) -> Result<f64> {
        let l = self.state_dim();
        let a = self.a.as_slice(); // column-major: a[i + j*l] = A[i][j]
        let c = self.c.as_slice();
        let mut x = self.mu0.as_slice().to_vec();
        let mut p = self.sigma0.as_matrix().as_slice().to_vec();
        let mut xp = vec![0.0; l];
        let mut ap = vec![0.0; l * l];
        let mut pp = vec![0.0; l * l];
        let mut pc = vec![0.0; l];
        let mut total = 0.0;
        for (t, &yt) in y.iter().enumerate() {
            for i in 0..l {
                xp[i] = (0..l).map(|j| a[i + j * l] * x[j]).sum();
            }
            // ap = A·P
            for i in 0..l {
                for j in 0..l {
                    ap[i + j * l] = (0..l).map(|k| a[i + k * l] * p[k + j * l]).sum();
                }
            }
            // pp = (A·P)·Aᵀ + Q
            for i in 0..l {
                for j in 0..l {
                    pp[i + j * l] = (0..l).map(|k| ap[i + k * l] * a[j + k * l]).sum();
                }
                pp[i + i * l] += theta[i];
            }
            for i in 0..l {
                pc[i] = (0..l).map(|j| pp[i + j * l] * c[j]).sum();
            }
            let s = c.iter().zip(&pc).map(|(a, b)| a * b).sum::<f64>() + self.r;
            if !(s > 0.0 && s.is_finite()) {
                return Err(FimError::SingularInnovation { t: t + 1, variance: s });
            }
            let e = yt - c.iter().zip(&xp).map(|(a, b)| a * b).sum::<f64>();
            total += 0.5 * (s.ln() + e * e / s);
            for i in 0..l {
                x[i] = xp[i] + pc[i] * e / s;
            }
            for i in 0..l {
                for j in 0..l {
                    p[i + j * l] = pp[i + j * l] - pc[i] * pc[j] / s;
                }
            }
        }
        if total.is_finite() {
            Ok(total)
        } else {
            Err(FimError::NonFiniteEvaluation("Kalman likelihood".into()))
        }
    }

    /// Hessian of the filter likelihood by central differences.
    pub fn ss_hessian(&self, theta: &Vector, y: &DataSet) -> Result<SymMat> {
        check_dim(theta, self.state_dim())?;
        fd_hessian(|t| self.filter_nll(t, y.values()), theta, FdStep::Default)
    }

    /// Gradient of the filter likelihood by central differences.
    pub fn ss_grad(&self, theta: &Vector, y: &DataSet) -> Result<Vector> {
        check_dim(theta, self.state_dim())?;
        fd_gradient(|t| self.filter_nll(t, y.values()), theta, FdStep::Default)
    }

    /// Monte Carlo `F_n(θ)`: average of [`Self::ss_hessian`] over `m_reps` simulated
    /// series. Returns the average and the entrywise standard errors.
    pub fn ss_expected_fim(&self, theta: &Vector, n: usize, m_reps: usize, rng: &RngStream) -> Result<(SymMat, Matrix)> {
        self.check_nonnegative(theta)?;
        if m_reps < 2 {
            return Err(FimError::InvalidInput("at least two Monte Carlo replications are required".into()));
        }
        let l = self.state_dim();
        let mut sum = Matrix::zeros(l, l);
        let mut sum_sq = Matrix::zeros(l, l);
        for k in 0..m_reps {
            let mut stream = rng.substream(&[k as u64]);
            let y = self.sample(theta, n, &mut stream)?;
            let h = self.ss_hessian(theta, &y)?.into_matrix();
            sum_sq += h.component_mul(&h);
            sum += h;
        }
        let m = m_reps as f64;
        let mean = &sum / m;
        let var = (sum_sq - mean.component_mul(&mean) * m) / (m - 1.0);
        let se = var.map(|v| (v.max(0.0) / m).sqrt());
        Ok((SymMat::new(mean)?, se))
    }

    fn joint_form(&self, n: usize) -> JointForm {
        let l = self.state_dim();
        let at = self.a.transpose();
        // Cov(y_t, y_s) for t ≥ s is C A^{t−s} P_s Cᵀ, with P_s the state covariance.
        let cross = |p_list: &[Matrix]| -> Matrix {
            let mut g = Matrix::zeros(n, n);
            for s in 0..n {
                let mut v = &p_list[s] * &self.c;
                for t in s..n {
                    let val = self.c.dot(&v);
                    g[(t, s)] = val;
                    g[(s, t)] = val;
                    v = &self.a * v;
                }
            }
            g
        };
        let mut p0 = Vec::with_capacity(n);
        let mut p = self.sigma0.as_matrix().clone();
        for _ in 0..n {
            p = &self.a * &p * &at;
            p0.push(p.clone());
        }
        let mut base = cross(&p0);
        for t in 0..n {
            base[(t, t)] += self.r;
        }
        let mut g = Vec::with_capacity(l);
        for j in 0..l {
            let mut list = Vec::with_capacity(n);
            let mut p = Matrix::zeros(l, l);
            for _ in 0..n {
                p = &self.a * &p * &at;
                p[(j, j)] += 1.0;
                list.push(p.clone());
            }
            g.push(cross(&list));
        }
        let mut mean = Vector::zeros(n);
        let mut m = self.mu0.clone();
        for t in 0..n {
            m = &self.a * m;
            mean[t] = self.c.dot(&m);
        }
        JointForm { mean, base, g }
    }

    fn joint_cov(form: &JointForm, theta: &Vector) -> Matrix {
        let mut cov = form.base.clone();
        for (j, g) in form.g.iter().enumerate() {
            cov += g * theta[j];
        }
        cov
    }

    /// Negative log of the joint normal density of `y_{1:n}`, including the `2π` constant.
    pub fn joint_neg_log_lik(&self, theta: &Vector, y: &DataSet) -> Result<f64> {
        check_dim(theta, self.state_dim())?;
        let n = y.n();
        let form = self.joint_form(n);
        let chol = Cholesky::new(Self::joint_cov(&form, theta))
            .ok_or_else(|| FimError::NotPositiveDefinite("joint covariance of y".into()))?;
        let e = Vector::from_column_slice(y.values()) - &form.mean;
        let alpha = chol.solve(&e);
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(0.5 * (log_det + e.dot(&alpha) + n as f64 * LN_2PI))
    }

    fn joint_pieces(&self, theta: &Vector, y: &DataSet) -> Result<(Vec<Matrix>, Vec<Matrix>, Vector)> {
        check_dim(theta, self.state_dim())?;
        let n = y.n();
        let form = self.joint_form(n);
        let chol = Cholesky::new(Self::joint_cov(&form, theta))
            .ok_or_else(|| FimError::NotPositiveDefinite("joint covariance of y".into()))?;
        let e = Vector::from_column_slice(y.values()) - &form.mean;
        let alpha = chol.solve(&e);
        let b: Vec<Matrix> = form.g.iter().map(|g| chol.solve(g)).collect();
        Ok((form.g, b, alpha))
    }

    /// Closed-form gradient from the joint Gaussian form.
    pub fn ss_grad_joint(&self, theta: &Vector, y: &DataSet) -> Result<Vector> {
        let (g, b, alpha) = self.joint_pieces(theta, y)?;
        Ok(Vector::from_iterator(
            g.len(),
            (0..g.len()).map(|j| 0.5 * b[j].trace() - 0.5 * alpha.dot(&(&g[j] * &alpha))),
        ))
    }

    /// Closed-form Hessian from the joint Gaussian form.
    pub fn ss_hessian_joint(&self, theta: &Vector, y: &DataSet) -> Result<SymMat> {
        let (g, b, alpha) = self.joint_pieces(theta, y)?;
        let l = g.len();
        let ga: Vec<Vector> = g.iter().map(|gj| gj * &alpha).collect();
        let bga: Vec<Vector> = b.iter().map(|bj| bj * &alpha).collect();
        let mut h = Matrix::zeros(l, l);
        for j in 0..l {
            for k in j..l {
                let tr = b[j].component_mul(&b[k].transpose()).sum();
                let v = -0.5 * tr + ga[j].dot(&bga[k]);
                h[(j, k)] = v;
                h[(k, j)] = v;
            }
        }
        SymMat::new(h)
    }

    /// Exact `F_n(θ)_{jk} = ½ tr(Σ_y⁻¹ G_j Σ_y⁻¹ G_k)`.
    pub fn ss_exact_fim(&self, theta: &Vector, n: usize) -> Result<SymMat> {
        check_dim(theta, self.state_dim())?;
        let form = self.joint_form(n);
        let chol = Cholesky::new(Self::joint_cov(&form, theta))
            .ok_or_else(|| FimError::NotPositiveDefinite("joint covariance of y".into()))?;
        let b: Vec<Matrix> = form.g.iter().map(|g| chol.solve(g)).collect();
        let l = b.len();
        let mut f = Matrix::zeros(l, l);
        for j in 0..l {
            for k in j..l {
                let v = 0.5 * b[j].component_mul(&b[k].transpose()).sum();
                f[(j, k)] = v;
                f[(k, j)] = v;
            }
        }
        SymMat::new(f)
    }

    /// Average over `t = 1..n` of `C P_t Cᵀ` for the state covariance driven by `Q`,
    /// starting from `P_0 = init`.
    fn mean_state_variance(&self, q: &Matrix, init: &Matrix, n: usize) -> f64 {
        let mut p = init.clone();
        let mut total = 0.0;
        for _ in 0..n {
            p = &self.a * &p * self.a.transpose() + q;
            total += self.c.dot(&(&p * &self.c));
        }
        total / n as f64
    }
}

impl Model for LinearStateSpaceModel {
    fn name(&self) -> &str {
        "linear_state_space"
    }

    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn structure(&self) -> DataStructure {
        DataStructure::Dependent
    }

    fn sample(&self, theta: &Vector, n: usize, rng: &mut RngStream) -> Result<DataSet> {
        self.check_nonnegative(theta)?;
        let l = self.state_dim();
        let s0 = self.sigma0.psd_sqrt();
        let z = Vector::from_fn(l, |_, _| rng.draw_normal());
        let mut x = &self.mu0 + s0 * z;
        let sd: Vec<f64> = theta.iter().map(|v| v.sqrt()).collect();
        let r_sd = self.r.sqrt();
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            x = &self.a * x;
            for j in 0..l {
                x[j] += sd[j] * rng.draw_normal();
            }
            y.push(self.c.dot(&x) + r_sd * rng.draw_normal());
        }
        DataSet::scalar(y)
    }

    fn neg_log_lik(&self, theta: &Vector, data: &DataSet) -> Result<f64> {
        self.ss_neg_log_lik(theta, data)
    }

    fn grad(&self, theta: &Vector, data: &DataSet) -> Result<Vector> {
        self.ss_grad(theta, data)
    }

    fn hessian(&self, theta: &Vector, data: &DataSet) -> Result<SymMat> {
        self.ss_hessian(theta, data)
    }

    fn expected_fim(&self, theta: &Vector, n: usize) -> Result<Option<(SymMat, FimSource)>> {
        Ok(Some((self.ss_exact_fim(theta, n)?, FimSource::Analytic)))
    }

    fn bounds(&self) -> Bounds {
        let l = self.state_dim();
        Bounds {
            lower: Vector::from_element(l, VARIANCE_MIN),
            upper: Vector::from_element(l, f64::INFINITY),
        }
    }

    /// Moment match: a common variance `s` for every state such that the mean
    /// predicted `E[y_t²]` equals the sample mean of `y_t²`.
    fn initial_guess(&self, data: &DataSet) -> Vector {
        let l = self.state_dim();
        let n = data.n();
        let mean_sq = data.values().iter().map(|v| v * v).sum::<f64>() / n as f64;
        let mut m = self.mu0.clone();
        let mut mean_part = 0.0;
        for _ in 0..n {
            m = &self.a * m;
            mean_part += self.c.dot(&m).powi(2);
        }
        mean_part /= n as f64;
        let base = self.mean_state_variance(&Matrix::zeros(l, l), self.sigma0.as_matrix(), n);
        let unit = self.mean_state_variance(&Matrix::identity(l, l), &Matrix::zeros(l, l), n);
        let s = ((mean_sq - mean_part - base - self.r) / unit).max(0.1);
        Vector::from_element(l, s)
    }

    fn solver(&self) -> SolverKind {
        SolverKind::StochasticSearch
    }

    fn search_box(&self, data: &DataSet) -> Option<Bounds> {
        let init = self.initial_guess(data);
        let upper = (init.max() * 20.0).max(20.0);
        Some(Bounds {
            lower: Vector::from_element(self.state_dim(), VARIANCE_MIN),
            upper: Vector::from_element(self.state_dim(), upper),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(a: f64) -> LinearStateSpaceModel {
        LinearStateSpaceModel::new(
            Matrix::from_element(1, 1, a),
            Vector::from_vec(vec![1.0]),
            1.0,
            Vector::zeros(1),
            SymMat::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn no_state_noise_gives_raw_innovations() {
        let m = LinearStateSpaceModel::three_state_default();
        let y = DataSet::scalar(vec![0.5, -1.0, 2.0]).unwrap();
        let run = m.kalman_filter(&Vector::zeros(3), &y).unwrap();
        assert_eq!(run.innovations, vec![0.5, -1.0, 2.0]);
        assert!(run.innovation_vars.iter().all(|&s| s == 1.0));
        let nll = m.ss_neg_log_lik(&Vector::zeros(3), &y).unwrap();
        assert!((nll - 0.5 * (0.25 + 1.0 + 4.0)).abs() < 1e-14);
    }

    #[test]
    fn scalar_white_noise_reduction() {
        let m = scalar_model(0.0);
        let q = 0.7;
        let y = DataSet::scalar(vec![0.3, -0.4, 1.1, 0.0]).unwrap();
        let run = m.kalman_filter(&Vector::from_vec(vec![q]), &y).unwrap();
        assert!(run.innovation_vars.iter().all(|&s| (s - (q + 1.0)).abs() < 1e-15));
        let expect: f64 = y.values().iter().map(|v| 0.5 * ((q + 1.0f64).ln() + v * v / (q + 1.0))).sum();
        assert!((m.ss_neg_log_lik(&Vector::from_vec(vec![q]), &y).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn fast_filter_matches_full_record() {
        let m = LinearStateSpaceModel::three_state_default();
        let theta = Vector::from_vec(vec![1.0, 0.5, 2.0]);
        let y = m.sample(&theta, 50, &mut RngStream::new(3, 0)).unwrap();
        let run = m.kalman_filter(&theta, &y).unwrap();
        assert!((run.neg_log_lik() - m.ss_neg_log_lik(&theta, &y).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn filter_matches_joint_density() {
        let m = LinearStateSpaceModel::three_state_default();
        let theta = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        let y = m.sample(&theta, 20, &mut RngStream::new(9, 0)).unwrap();
        let kal = m.ss_neg_log_lik(&theta, &y).unwrap();
        let joint = m.joint_neg_log_lik(&theta, &y).unwrap();
        assert!((joint - kal - 10.0 * LN_2PI).abs() < 1e-8);
    }

    #[test]
    fn joint_derivatives_match_filter_differences() {
        let m = LinearStateSpaceModel::three_state_default();
        let theta = Vector::from_vec(vec![0.8, 1.2, 0.6]);
        let y = m.sample(&theta, 30, &mut RngStream::new(10, 0)).unwrap();
        let g = m.ss_grad_joint(&theta, &y).unwrap();
        let gf = m.ss_grad(&theta, &y).unwrap();
        assert!((&g - &gf).amax() <= 1e-5 * g.amax().max(1.0));
        let h = m.ss_hessian_joint(&theta, &y).unwrap();
        let hf = m.ss_hessian(&theta, &y).unwrap();
        assert!((h.as_matrix() - hf.as_matrix()).amax() <= 1e-4 * h.as_matrix().amax().max(1.0));
    }

    #[test]
    fn exact_fim_close_to_monte_carlo_average() {
        let m = LinearStateSpaceModel::three_state_default();
        let theta = Vector::from_vec(vec![1.0, 1.0, 1.0]);
        let exact = m.ss_exact_fim(&theta, 40).unwrap();
        let (mc, se) = m.ss_expected_fim(&theta, 40, 400, &RngStream::new(12, 0)).unwrap();
        for r in 0..3 {
            for s in 0..3 {
                assert!((exact.get(r, s) - mc.get(r, s)).abs() < 4.0 * se[(r, s)] + 1e-9, "entry ({r},{s})");
            }
        }
    }

    #[test]
    fn white_noise_samples_when_state_is_silent() {
        let m = LinearStateSpaceModel::three_state_default();
        let y = m.sample(&Vector::zeros(3), 20_000, &mut RngStream::new(1, 2)).unwrap();
        let n = y.n() as f64;
        let mean = y.values().iter().sum::<f64>() / n;
        let var = y.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 / n.sqrt());
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn negative_variance_is_rejected_by_public_likelihood() {
        let m = LinearStateSpaceModel::three_state_default();
        let y = DataSet::scalar(vec![0.1]).unwrap();
        assert!(m.ss_neg_log_lik(&Vector::from_vec(vec![-1.0, 1.0, 1.0]), &y).is_err());
    }
}
