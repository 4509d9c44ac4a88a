//! Covariance estimators for the MLE and the studies that compare them.
//!
//! * [`observed_fim`] is `H̄_n(θ̂) = H_n(θ̂)/n` and [`expected_fim_scaled`] is
//!   `F̄_n(θ̂) = F_n(θ̂)/n`; their inverses estimate `n·cov(θ̂_n)`.
//! * [`mc_cov_mle`] estimates the target `n·cov(θ̂_n)` by simulation.
//! * [`discrepancy_study`] accumulates the entrywise mean squared errors `M_H`,
//!   `M_F` of both estimators against that target.
//! * [`cumulants`] holds the score-cumulant diagnostics.

pub mod cumulants;

pub use cumulants::{
    condition_a9_variance, null_cumulants, score_correlations, score_draw, theorem1_gap_check, CumulantSet,
    GapCheck, GapCheckOptions, ScoreSample,
};

use serde::Serialize;

use crate::error::{FimError, Result};
use crate::mle::fit_mle;
use crate::models::{FimSource, Model};
use crate::numerics::linalg::{sym_inverse, Matrix, SymMat, Vector};
use crate::numerics::par_map;
use crate::numerics::rng::RngStream;

const ROLE_TARGET: u64 = 1;
const ROLE_OUTER: u64 = 2;
const ROLE_DATA: u64 = 10;
const ROLE_SOLVER: u64 = 11;
const ROLE_FIM: u64 = 12;

/// Which inverse information matrix is used as covariance estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CovEstimatorKind {
    InverseExpectedFim,
    InverseObservedFim,
}

/// `F̄_n` together with its provenance.
#[derive(Clone, Debug)]
pub struct FimValue {
    pub matrix: SymMat,
    pub source: FimSource,
    /// Entrywise standard errors for Monte Carlo values.
    pub std_errors: Option<Matrix>,
}

/// `H̄_n(θ̂) = H_n(θ̂)/n`.
pub fn observed_fim(model: &dyn Model, data: &crate::models::DataSet, theta_hat: &Vector) -> Result<SymMat> {
    Ok(model.hessian(theta_hat, data)?.scale(1.0 / data.n() as f64))
}

/// `F̄_n(θ̂) = F_n(θ̂)/n`, from the model when available and otherwise as the
/// average of `H_n(θ̂)/n` over `mc_reps` datasets simulated at `θ̂`.
pub fn expected_fim_scaled(model: &dyn Model, theta_hat: &Vector, n: usize, mc_reps: usize, rng: &RngStream) -> Result<FimValue> {
    if let Some((f, source)) = model.expected_fim(theta_hat, n)? {
        return Ok(FimValue {
            matrix: f.scale(1.0 / n as f64),
            source,
            std_errors: None,
        });
    }
    monte_carlo_fim_scaled(model, theta_hat, n, mc_reps, rng)
}

/// Monte Carlo `F̄_n(θ)`: mean of `H_n(θ)/n` over simulated datasets, with standard errors.
pub fn monte_carlo_fim_scaled(model: &dyn Model, theta: &Vector, n: usize, mc_reps: usize, rng: &RngStream) -> Result<FimValue> {
    if mc_reps < 2 {
        return Err(FimError::InvalidInput("Monte Carlo information needs at least two replications".into()));
    }
    let p = model.dim();
    let mut sum = Matrix::zeros(p, p);
    let mut sum_sq = Matrix::zeros(p, p);
    for k in 0..mc_reps {
        let mut stream = rng.substream(&[ROLE_FIM, k as u64]);
        let data = model.sample(theta, n, &mut stream)?;
        let h = model.hessian(theta, &data)?.into_matrix() / n as f64;
        sum_sq += h.component_mul(&h);
        sum += h;
    }
    let m = mc_reps as f64;
    let mean = &sum / m;
    let var = (sum_sq - mean.component_mul(&mean) * m) / (m - 1.0);
    Ok(FimValue {
        matrix: SymMat::new(mean)?,
        source: FimSource::MonteCarlo,
        std_errors: Some(var.map(|v| (v.max(0.0) / m).sqrt())),
    })
}

/// Replication failures by cause.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FailureCounts {
    pub solver: usize,
    pub observed_not_pd: usize,
    pub expected_not_pd: usize,
    pub other: usize,
}

impl FailureCounts {
    pub fn total(&self) -> usize {
        self.solver + self.observed_not_pd + self.expected_not_pd + self.other
    }

    fn record_solver_or_other(&mut self, e: &FimError) {
        match e {
            FimError::NotConverged { .. } | FimError::SingularHessian => self.solver += 1,
            _ => self.other += 1,
        }
    }
}

/// Knobs shared by the simulation studies.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyOptions {
    /// Largest tolerated fraction of failed replications.
    pub max_failure_fraction: f64,
    /// Number of candidates for the typical outcome.
    pub typical_count: usize,
    /// Replications for Monte Carlo `F̄_n` when the model has no closed form.
    pub fim_mc_reps: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            max_failure_fraction: 0.01,
            typical_count: 1001,
            fim_mc_reps: 1000,
        }
    }
}

fn check_failures(failed: usize, total: usize, opts: &StudyOptions) -> Result<()> {
    let limit = (opts.max_failure_fraction * total as f64).floor() as usize;
    if failed > limit {
        return Err(FimError::TooManyFailures { failed, total, limit });
    }
    Ok(())
}

/// Simulated `n·cov(θ̂_n)`.
#[derive(Clone, Debug)]
pub struct McCovResult {
    pub cov_scaled: SymMat,
    pub mean: Vector,
    pub reps: usize,
    pub used: usize,
    pub failures: FailureCounts,
}

/// `n` times the sample covariance of `θ̂_n` over `reps` simulated datasets.
pub fn mc_cov_mle(model: &dyn Model, theta_star: &Vector, n: usize, reps: usize, rng: &RngStream) -> Result<McCovResult> {
    mc_cov_mle_with(model, theta_star, n, reps, rng, &StudyOptions::default())
}

pub fn mc_cov_mle_with(
    model: &dyn Model,
    theta_star: &Vector,
    n: usize,
    reps: usize,
    rng: &RngStream,
    opts: &StudyOptions,
) -> Result<McCovResult> {
    if reps < 2 {
        return Err(FimError::InvalidInput("reps must be at least 2".into()));
    }
    let results = par_map(reps, |i| -> Result<Vector> {
        let rep = rng.substream(&[i as u64]);
        let data = model.sample(theta_star, n, &mut rep.substream(&[ROLE_DATA]))?;
        Ok(fit_mle(model, &data, &mut rep.substream(&[ROLE_SOLVER]))?.theta)
    });
    let mut failures = FailureCounts::default();
    let mut estimates = Vec::with_capacity(reps);
    for r in results {
        match r {
            Ok(t) => estimates.push(t),
            Err(e) => failures.record_solver_or_other(&e),
        }
    }
    check_failures(failures.total(), reps, opts)?;
    let p = model.dim();
    let m = estimates.len();
    if m < 2 {
        return Err(FimError::TooManyFailures {
            failed: failures.total(),
            total: reps,
            limit: reps - 2,
        });
    }
    let mean = estimates.iter().fold(Vector::zeros(p), |acc, t| acc + t) / m as f64;
    let mut cov = Matrix::zeros(p, p);
    for t in &estimates {
        let d = t - &mean;
        cov += &d * d.transpose();
    }
    cov *= n as f64 / (m - 1) as f64;
    Ok(McCovResult {
        cov_scaled: SymMat::new(cov)?,
        mean,
        reps,
        used: m,
        failures,
    })
}

/// Relative root-MSE matrix; entries whose target is exactly zero are undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeMatrix {
    p: usize,
    values: Vec<Option<f64>>,
}

impl RelativeMatrix {
    fn from_mse(mse: &Matrix, target: &SymMat) -> Self {
        let p = target.dim();
        let values = (0..p * p)
            .map(|k| {
                let (r, s) = (k / p, k % p);
                let t = target.get(r, s);
                if t == 0.0 {
                    None
                } else {
                    Some((mse[(r, s)].sqrt() / t).abs())
                }
            })
            .collect();
        RelativeMatrix { p, values }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// `None` marks a relative-undefined entry.
    pub fn get(&self, r: usize, s: usize) -> Option<f64> {
        self.values[r * self.p + s]
    }
}

/// Output of [`discrepancy_study`].
#[derive(Clone, Debug)]
pub struct DiscrepancyReport {
    /// Simulated `n·cov(θ̂_n)`.
    pub target: SymMat,
    pub m_h: SymMat,
    pub m_f: SymMat,
    pub r_h: RelativeMatrix,
    pub r_f: RelativeMatrix,
    pub typical_h: SymMat,
    pub typical_f: SymMat,
    /// Monte Carlo standard errors of `M_H`, `M_F` and of the paired difference `M_H − M_F`.
    pub se_m_h: Matrix,
    pub se_m_f: Matrix,
    pub se_diff: Matrix,
    pub reps_outer: usize,
    pub reps_target: usize,
    pub outer_used: usize,
    pub typical_count: usize,
    pub target_failures: FailureCounts,
    pub outer_failures: FailureCounts,
    pub fim_source: FimSource,
}

/// Both estimators from one replication.
struct OuterDraw {
    h_inv: SymMat,
    f_inv: SymMat,
    source: FimSource,
}

enum OuterFailure {
    Solver(FimError),
    Observed,
    Expected,
}

fn outer_draw(model: &dyn Model, theta_star: &Vector, n: usize, rep: &RngStream, opts: &StudyOptions) -> std::result::Result<OuterDraw, OuterFailure> {
    let data = model
        .sample(theta_star, n, &mut rep.substream(&[ROLE_DATA]))
        .map_err(OuterFailure::Solver)?;
    let fit = fit_mle(model, &data, &mut rep.substream(&[ROLE_SOLVER])).map_err(OuterFailure::Solver)?;
    let h_bar = observed_fim(model, &data, &fit.theta).map_err(|_| OuterFailure::Observed)?;
    let h_inv = sym_inverse(&h_bar).map_err(|_| OuterFailure::Observed)?;
    let f_bar = expected_fim_scaled(model, &fit.theta, n, opts.fim_mc_reps, &rep.substream(&[ROLE_FIM]))
        .map_err(|_| OuterFailure::Expected)?;
    let f_inv = sym_inverse(&f_bar.matrix).map_err(|_| OuterFailure::Expected)?;
    Ok(OuterDraw {
        h_inv,
        f_inv,
        source: f_bar.source,
    })
}

/// Runs the full comparison of `H̄_n(θ̂)⁻¹` and `F̄_n(θ̂)⁻¹` against the simulated target.
pub fn discrepancy_study(
    model: &dyn Model,
    theta_star: &Vector,
    n: usize,
    reps_outer: usize,
    reps_target: usize,
    rng: &RngStream,
) -> Result<DiscrepancyReport> {
    discrepancy_study_with(model, theta_star, n, reps_outer, reps_target, rng, &StudyOptions::default())
}

pub fn discrepancy_study_with(
    model: &dyn Model,
    theta_star: &Vector,
    n: usize,
    reps_outer: usize,
    reps_target: usize,
    rng: &RngStream,
    opts: &StudyOptions,
) -> Result<DiscrepancyReport> {
    if reps_outer < 2 || reps_target < 2 {
        return Err(FimError::InvalidInput("reps_outer and reps_target must be at least 2".into()));
    }
    let target = mc_cov_mle_with(model, theta_star, n, reps_target, &rng.substream(&[ROLE_TARGET]), opts)?;
    let outer_rng = rng.substream(&[ROLE_OUTER]);
    let draws = par_map(reps_outer, |i| outer_draw(model, theta_star, n, &outer_rng.substream(&[i as u64]), opts));
    let mut failures = FailureCounts::default();
    let mut valid = Vec::with_capacity(reps_outer);
    for d in draws {
        match d {
            Ok(v) => valid.push(v),
            Err(OuterFailure::Solver(e)) => failures.record_solver_or_other(&e),
            Err(OuterFailure::Observed) => failures.observed_not_pd += 1,
            Err(OuterFailure::Expected) => failures.expected_not_pd += 1,
        }
    }
    check_failures(failures.total(), reps_outer, opts)?;
    if valid.len() < 2 {
        return Err(FimError::TooManyFailures {
            failed: failures.total(),
            total: reps_outer,
            limit: reps_outer - 2,
        });
    }
    let p = model.dim();
    let t = target.cov_scaled.as_matrix();
    let m = valid.len() as f64;
    let (mut sh, mut sh2, mut sf, mut sf2, mut sd, mut sd2) = (
        Matrix::zeros(p, p),
        Matrix::zeros(p, p),
        Matrix::zeros(p, p),
        Matrix::zeros(p, p),
        Matrix::zeros(p, p),
        Matrix::zeros(p, p),
    );
    for d in &valid {
        let eh = (d.h_inv.as_matrix() - t).map(|v| v * v);
        let ef = (d.f_inv.as_matrix() - t).map(|v| v * v);
        let diff = &eh - &ef;
        sh2 += eh.component_mul(&eh);
        sf2 += ef.component_mul(&ef);
        sd2 += diff.component_mul(&diff);
        sh += eh;
        sf += ef;
        sd += diff;
    }
    let se = |s: &Matrix, s2: &Matrix| -> Matrix {
        let mean = s / m;
        ((s2 - mean.component_mul(&mean) * m) / (m - 1.0)).map(|v| (v.max(0.0) / m).sqrt())
    };
    let m_h = SymMat::new(&sh / m)?;
    let m_f = SymMat::new(&sf / m)?;
    let typical_count = if valid.len() >= opts.typical_count {
        opts.typical_count
    } else if valid.len() % 2 == 1 {
        valid.len()
    } else {
        valid.len() - 1
    };
    let cand_h: Vec<SymMat> = valid[..typical_count].iter().map(|d| d.h_inv.clone()).collect();
    let cand_f: Vec<SymMat> = valid[..typical_count].iter().map(|d| d.f_inv.clone()).collect();
    Ok(DiscrepancyReport {
        r_h: RelativeMatrix::from_mse(m_h.as_matrix(), &target.cov_scaled),
        r_f: RelativeMatrix::from_mse(m_f.as_matrix(), &target.cov_scaled),
        typical_h: typical_outcome(&cand_h, &target.cov_scaled)?.1,
        typical_f: typical_outcome(&cand_f, &target.cov_scaled)?.1,
        se_m_h: se(&sh, &sh2),
        se_m_f: se(&sf, &sf2),
        se_diff: se(&sd, &sd2),
        m_h,
        m_f,
        target: target.cov_scaled,
        reps_outer,
        reps_target,
        outer_used: valid.len(),
        typical_count,
        target_failures: target.failures,
        outer_failures: failures,
        fim_source: valid[0].source,
    })
}

/// The candidate whose Frobenius distance to `target` is the median distance.
/// Returns its index in `candidates` and the matrix. Requires an odd count.
pub fn typical_outcome(candidates: &[SymMat], target: &SymMat) -> Result<(usize, SymMat)> {
    if candidates.is_empty() {
        return Err(FimError::EmptyCandidates);
    }
    if candidates.len().is_multiple_of(2) {
        return Err(FimError::InvalidInput("typical outcome needs an odd number of candidates".into()));
    }
    let mut order: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| (c.frobenius_distance(target), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let idx = order[candidates.len() / 2].1;
    Ok((idx, candidates[idx].clone()))
}
