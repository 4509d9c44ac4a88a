//! Statistical models with samplers, negative log-likelihoods, derivatives and
//! expected Fisher information.
//!
//! All likelihood quantities are for the negative log-likelihood `l(θ, x)`, so
//! [`Model::hessian`] is the observed information `H_n(θ)` and
//! [`Model::expected_fim`] is `F_n(θ) = E[H_n(θ)]`.

pub mod expfam;
pub mod gaussian;
pub mod mixture;
pub mod spn;
pub mod statespace;

pub use expfam::ExpFamilyModel;
pub use gaussian::GaussianMeanModel;
pub use mixture::{MixtureGaussianModel, MixtureVariant};
pub use spn::{CovarianceForm, SignalPlusNoiseModel};
pub use statespace::{KalmanRun, LinearStateSpaceModel};

use crate::error::{FimError, Result};
use crate::numerics::linalg::{Matrix, SymMat, Vector};
use crate::numerics::rng::RngStream;

/// `n` observations of dimension `q`, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSet {
    q: usize,
    values: Vec<f64>,
}

impl DataSet {
    pub fn new(q: usize, values: Vec<f64>) -> Result<Self> {
        if q == 0 || values.is_empty() || values.len() % q != 0 {
            return Err(FimError::InvalidInput(format!(
                "data of length {} cannot hold observations of dimension {q}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FimError::NonFiniteEvaluation("data value".into()));
        }
        Ok(DataSet { q, values })
    }

    /// Scalar observations.
    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values)
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.q
    }

    pub fn obs_dim(&self) -> usize {
        self.q
    }

    pub fn obs(&self, i: usize) -> &[f64] {
        &self.values[i * self.q..(i + 1) * self.q]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Dependence structure of the observations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataStructure {
    /// Independent observations; per-observation terms are available.
    Independent,
    /// A dependent series (the state-space model); only whole-data quantities exist.
    Dependent,
}

/// How the MLE is computed for a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    Newton,
    StochasticSearch,
}

/// Origin of an expected information matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FimSource {
    /// Closed form.
    Analytic,
    /// Deterministic numerical integration of an analytic integrand.
    Quadrature,
    /// Average of Hessians over simulated data.
    MonteCarlo,
}

/// Box constraints used by the solvers' projection step.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vector,
    pub upper: Vector,
}

impl Bounds {
    pub fn unbounded(p: usize) -> Self {
        Bounds {
            lower: Vector::from_element(p, f64::NEG_INFINITY),
            upper: Vector::from_element(p, f64::INFINITY),
        }
    }

    pub fn project(&self, theta: &mut Vector) {
        for j in 0..theta.len() {
            theta[j] = theta[j].clamp(self.lower[j], self.upper[j]);
        }
    }

    pub fn contains(&self, theta: &Vector) -> bool {
        (0..theta.len()).all(|j| theta[j] >= self.lower[j] && theta[j] <= self.upper[j])
    }
}

/// Contract every model implements.
///
/// Models with independent observations implement the `obs_*` methods and
/// inherit whole-data sums; dependent models override the whole-data methods.
pub trait Model: Send + Sync {
    fn name(&self) -> &str;

    /// Parameter dimension `p`.
    fn dim(&self) -> usize;

    /// Observation dimension `q`.
    fn obs_dim(&self) -> usize;

    fn sample(&self, theta: &Vector, n: usize, rng: &mut RngStream) -> Result<DataSet>;

    fn structure(&self) -> DataStructure {
        DataStructure::Independent
    }

    fn obs_neg_log_lik(&self, _theta: &Vector, _data: &DataSet, _i: usize) -> Result<f64> {
        Err(FimError::NotIndependentData)
    }

    fn obs_grad(&self, _theta: &Vector, _data: &DataSet, _i: usize) -> Result<Vector> {
        Err(FimError::NotIndependentData)
    }

    fn obs_hessian(&self, _theta: &Vector, _data: &DataSet, _i: usize) -> Result<SymMat> {
        Err(FimError::NotIndependentData)
    }

    fn neg_log_lik(&self, theta: &Vector, data: &DataSet) -> Result<f64> {
        (0..data.n()).try_fold(0.0, |acc, i| Ok(acc + self.obs_neg_log_lik(theta, data, i)?))
    }

    fn grad(&self, theta: &Vector, data: &DataSet) -> Result<Vector> {
        (0..data.n()).try_fold(Vector::zeros(self.dim()), |acc, i| Ok(acc + self.obs_grad(theta, data, i)?))
    }

    fn hessian(&self, theta: &Vector, data: &DataSet) -> Result<SymMat> {
        let mut acc = Matrix::zeros(self.dim(), self.dim());
        for i in 0..data.n() {
            acc += self.obs_hessian(theta, data, i)?.as_matrix();
        }
        SymMat::new(acc)
    }

    /// `F_n(θ)` when the model can compute it without simulation.
    fn expected_fim(&self, _theta: &Vector, _n: usize) -> Result<Option<(SymMat, FimSource)>> {
        Ok(None)
    }

    fn bounds(&self) -> Bounds {
        Bounds::unbounded(self.dim())
    }

    fn initial_guess(&self, data: &DataSet) -> Vector;

    fn solver(&self) -> SolverKind {
        SolverKind::Newton
    }

    /// Maps `θ` to a canonical representative (label switching for mixtures).
    fn canonicalize(&self, _theta: &mut Vector) {}

    /// Search box for stochastic-search solvers.
    fn search_box(&self, _data: &DataSet) -> Option<Bounds> {
        None
    }
}

pub(crate) fn check_dim(theta: &Vector, p: usize) -> Result<()> {
    if theta.len() != p {
        return Err(FimError::DimensionMismatch {
            expected: p,
            found: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(FimError::NonFiniteEvaluation("parameter".into()));
    }
    Ok(())
}

/// Empirical quantile by linear interpolation between order statistics.
pub(crate) fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}
