//! One-parameter exponential families `p(x, θ) = h(x) exp{η(θ) T(x) − A(θ)}`.
//!
//! For such models the observed and expected information at the MLE differ by
//! `η''(θ̂) [E_θ̂ T(X) − n⁻¹ Σ T(x_i)]`, reported by [`ExpFamilyModel::lemma6_gap`].

use std::sync::Arc;

use rand_distr::{Distribution, Exp, Poisson};
use statrs::function::gamma::ln_gamma;

use crate::error::{FimError, Result};
use crate::models::{check_dim, Bounds, DataSet, FimSource, Model};
use crate::numerics::linalg::{SymMat, Vector};
use crate::numerics::rng::RngStream;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SamplerFn = Arc<dyn Fn(f64, &mut RngStream) -> f64 + Send + Sync>;

/// Support of the observations, used for normalization checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Support {
    NonNegativeIntegers,
    PositiveReals,
    Reals,
}

/// Callable components of a one-parameter exponential family.
#[derive(Clone)]
pub struct ExpFamilyModel {
    pub name: String,
    pub log_h: ScalarFn,
    pub t: ScalarFn,
    pub eta: ScalarFn,
    pub eta_d1: ScalarFn,
    pub eta_d2: ScalarFn,
    pub a: ScalarFn,
    pub a_d1: ScalarFn,
    pub a_d2: ScalarFn,
    /// `E_θ[T(X)]`.
    pub expected_t: ScalarFn,
    pub sampler: SamplerFn,
    pub support: Support,
    /// Smallest admissible θ (solver projection).
    pub theta_min: f64,
}

impl std::fmt::Debug for ExpFamilyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExpFamilyModel").field("name", &self.name).finish()
    }
}

fn arc(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

impl ExpFamilyModel {
    /// Poisson with mean θ: `T = x`, `η = log θ`, `A = θ`.
    pub fn poisson() -> Self {
        ExpFamilyModel {
            name: "poisson".into(),
            log_h: arc(|x| -ln_gamma(x + 1.0)),
            t: arc(|x| x),
            eta: arc(f64::ln),
            eta_d1: arc(|th| 1.0 / th),
            eta_d2: arc(|th| -1.0 / (th * th)),
            a: arc(|th| th),
            a_d1: arc(|_| 1.0),
            a_d2: arc(|_| 0.0),
            expected_t: arc(|th| th),
            sampler: Arc::new(|th, rng| Poisson::new(th).expect("positive mean").sample(rng)),
            support: Support::NonNegativeIntegers,
            theta_min: 1e-8,
        }
    }

    /// Exponential with rate θ: `p = exp{−θx + log θ}`, so `η = −θ` and `η'' = 0`.
    pub fn exponential_rate() -> Self {
        ExpFamilyModel {
            name: "exponential_rate".into(),
            log_h: arc(|_| 0.0),
            t: arc(|x| x),
            eta: arc(|th| -th),
            eta_d1: arc(|_| -1.0),
            eta_d2: arc(|_| 0.0),
            a: arc(|th| -th.ln()),
            a_d1: arc(|th| -1.0 / th),
            a_d2: arc(|th| 1.0 / (th * th)),
            expected_t: arc(|th| 1.0 / th),
            sampler: Arc::new(|th, rng| Exp::new(th).expect("positive rate").sample(rng)),
            support: Support::PositiveReals,
            theta_min: 1e-8,
        }
    }

    /// Normal with unknown mean θ and known variance `sigma2`.
    pub fn gaussian_known_var(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(FimError::InvalidInput("variance must be positive".into()));
        }
        let sd = sigma2.sqrt();
        Ok(ExpFamilyModel {
            name: "gaussian_known_var".into(),
            log_h: arc(move |x| -x * x / (2.0 * sigma2) - 0.5 * (2.0 * std::f64::consts::PI * sigma2).ln()),
            t: arc(|x| x),
            eta: arc(move |th| th / sigma2),
            eta_d1: arc(move |_| 1.0 / sigma2),
            eta_d2: arc(|_| 0.0),
            a: arc(move |th| th * th / (2.0 * sigma2)),
            a_d1: arc(move |th| th / sigma2),
            a_d2: arc(move |_| 1.0 / sigma2),
            expected_t: arc(|th| th),
            sampler: Arc::new(move |th, rng| th + sd * rng.draw_normal()),
            support: Support::Reals,
            theta_min: f64::NEG_INFINITY,
        })
    }

    pub fn log_density(&self, x: f64, theta: f64) -> f64 {
        (self.log_h)(x) + (self.eta)(theta) * (self.t)(x) - (self.a)(theta)
    }

    /// `η''(θ̂)·[E_θ̂ T(X_1) − n⁻¹ Σ T(x_i)]`.
    pub fn lemma6_gap(&self, data: &DataSet, theta_hat: f64) -> f64 {
        let n = data.n() as f64;
        let mean_t = data.values().iter().map(|&x| (self.t)(x)).sum::<f64>() / n;
        (self.eta_d2)(theta_hat) * ((self.expected_t)(theta_hat) - mean_t)
    }

    /// Per-observation Fisher information `A''(θ) − η''(θ) E_θ T`.
    pub fn fim_per_obs(&self, theta: f64) -> f64 {
        (self.a_d2)(theta) - (self.eta_d2)(theta) * (self.expected_t)(theta)
    }

    fn scalar(theta: &Vector) -> Result<f64> {
        check_dim(theta, 1)?;
        Ok(theta[0])
    }
}

impl Model for ExpFamilyModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn sample(&self, theta: &Vector, n: usize, rng: &mut RngStream) -> Result<DataSet> {
        let th = Self::scalar(theta)?;
        DataSet::scalar((0..n).map(|_| (self.sampler)(th, rng)).collect())
    }

    fn obs_neg_log_lik(&self, theta: &Vector, data: &DataSet, i: usize) -> Result<f64> {
        Ok(-self.log_density(data.obs(i)[0], Self::scalar(theta)?))
    }

    fn obs_grad(&self, theta: &Vector, data: &DataSet, i: usize) -> Result<Vector> {
        let th = Self::scalar(theta)?;
        let t = (self.t)(data.obs(i)[0]);
        Ok(Vector::from_element(1, -((self.eta_d1)(th) * t - (self.a_d1)(th))))
    }

    fn obs_hessian(&self, theta: &Vector, data: &DataSet, i: usize) -> Result<SymMat> {
        let th = Self::scalar(theta)?;
        let t = (self.t)(data.obs(i)[0]);
        Ok(SymMat::from_diagonal(&[-((self.eta_d2)(th) * t - (self.a_d2)(th))]))
    }

    fn expected_fim(&self, theta: &Vector, n: usize) -> Result<Option<(SymMat, FimSource)>> {
        let th = Self::scalar(theta)?;
        Ok(Some((SymMat::from_diagonal(&[n as f64 * self.fim_per_obs(th)]), FimSource::Analytic)))
    }

    fn bounds(&self) -> Bounds {
        let mut b = Bounds::unbounded(1);
        b.lower[0] = self.theta_min;
        b
    }

    fn initial_guess(&self, data: &DataSet) -> Vector {
        let mean = data.values().iter().sum::<f64>() / data.n() as f64;
        let guess = match self.support {
            Support::PositiveReals => 1.0 / mean.max(1e-8),
            Support::NonNegativeIntegers => mean.max(1e-3),
            Support::Reals => mean,
        };
        Vector::from_element(1, guess)
    }
}
