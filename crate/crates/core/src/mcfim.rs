//! Monte Carlo estimation of the Fisher information `F_n(θ) = E H_n(θ)` from
//! simultaneous-perturbation Hessian estimates on simulated pseudo-data.
//!
//! Three estimators share one random-number layout so they can be compared
//! pairwise: the plain double average, the feedback recursion that subtracts
//! the zero-mean perturbation term `Ψ`, and the per-observation variants that
//! use a separate perturbation for each independent observation.

use serde::Serialize;

use crate::error::{FimError, Result};
use crate::models::{DataSet, DataStructure, Model};
use crate::numerics::linalg::{spectral_norm, Matrix, SymMat, Vector};
use crate::numerics::par_map;
use crate::numerics::rng::RngStream;
use crate::spsa::{sample_perturbation, PerturbationDist};
use crate::stats::{mean_se, paired_t_test, t_interval, PairedTTest};

const ROLE_DATA: u64 = 1;
const ROLE_PERTURB: u64 = 2;
const ROLE_INNER: u64 = 3;
const CHUNK: usize = 256;

/// How the gradient entering each Hessian estimate is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Exact gradient of the negative log-likelihood.
    GradientBased,
    /// One-sided SP gradient from likelihood values, with its own perturbation.
    LikelihoodOnly,
}

#[derive(Clone, Debug)]
pub struct HessianEstimateConfig {
    /// Perturbation scale.
    pub c: f64,
    /// Hessian estimates per pseudo-dataset.
    pub m: usize,
    /// Number of pseudo-datasets.
    pub n_pseudo: usize,
    pub mode: GradientMode,
    pub dist: PerturbationDist,
}

impl HessianEstimateConfig {
    pub fn new(c: f64, m: usize, n_pseudo: usize, mode: GradientMode) -> Result<Self> {
        let cfg = HessianEstimateConfig {
            c,
            m,
            n_pseudo,
            mode,
            dist: PerturbationDist::BernoulliPm1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(FimError::InvalidInput(format!("perturbation scale must be positive, got {}", self.c)));
        }
        if self.m == 0 || self.n_pseudo == 0 {
            return Err(FimError::InvalidInput("M and N must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FimMethod {
    Basic,
    Feedback,
    IndepBasic,
    IndepFeedback,
}

impl FimMethod {
    fn feedback(self) -> bool {
        matches!(self, FimMethod::Feedback | FimMethod::IndepFeedback)
    }

    fn indep(self) -> bool {
        matches!(self, FimMethod::IndepBasic | FimMethod::IndepFeedback)
    }
}

/// An estimate of `F_n(θ)` with the settings that produced it.
#[derive(Clone, Debug)]
pub struct FimEstimate {
    pub matrix: SymMat,
    pub method: FimMethod,
    pub c: f64,
    pub m: usize,
    pub n_pseudo: usize,
    pub mode: GradientMode,
    pub n_obs: usize,
    pub seed: u64,
}

/// `½[(δg/2c)(Δ⁻¹)ᵀ + transpose]` with `δg = g_plus − g_minus`.
pub fn sp_hessian_from_gradients(g_plus: &Vector, g_minus: &Vector, c: f64, delta: &Vector) -> Result<SymMat> {
    if let Some(index) = delta.iter().position(|&d| d == 0.0) {
        return Err(FimError::ZeroPerturbationComponent { index });
    }
    let p = delta.len();
    if g_plus.len() != p || g_minus.len() != p {
        return Err(FimError::DimensionMismatch {
            expected: p,
            found: g_plus.len(),
        });
    }
    let dg = (g_plus - g_minus) / (2.0 * c);
    // Entry (r, s) and (s, r) are formed from the same two products in the
    // same order, so the result is symmetric bit for bit.
    let h = Matrix::from_fn(p, p, |r, s| 0.5 * (dg[r] / delta[s] + dg[s] / delta[r]));
    Ok(SymMat::symmetrize_unchecked(h))
}

/// SP Hessian estimate from a gradient oracle.
pub fn sp_hessian_estimate<G>(g: &mut G, theta: &Vector, c: f64, delta: &Vector) -> Result<SymMat>
where
    G: FnMut(&Vector) -> Result<Vector>,
{
    if let Some(index) = delta.iter().position(|&d| d == 0.0) {
        return Err(FimError::ZeroPerturbationComponent { index });
    }
    let gp = g(&(theta + delta * c))?;
    let gm = g(&(theta - delta * c))?;
    sp_hessian_from_gradients(&gp, &gm, c, delta)
}

/// SP Hessian estimate from likelihood values only. The gradient at each
/// of `θ ± cΔ` is the one-sided estimate `[l(x + cΔ̃) − l(x)]/c · Δ̃⁻¹`
/// with a shared inner perturbation `Δ̃`; four calls in total.
pub fn sp_hessian_from_values<L>(l: &mut L, theta: &Vector, c: f64, delta: &Vector, inner: &Vector) -> Result<SymMat>
where
    L: FnMut(&Vector) -> Result<f64>,
{
    if let Some(index) = inner.iter().position(|&d| d == 0.0) {
        return Err(FimError::ZeroPerturbationComponent { index });
    }
    let mut one_sided = |x: Vector| -> Result<Vector> {
        let base = l(&x)?;
        let moved = l(&(&x + inner * c))?;
        let d = (moved - base) / c;
        Ok(inner.map(|v| d / v))
    };
    let gp = one_sided(theta + delta * c)?;
    let gm = one_sided(theta - delta * c)?;
    sp_hessian_from_gradients(&gp, &gm, c, delta)
}

/// `Ψ(H) = ½(HD + DᵀH)` with `D = Δ(Δ⁻¹)ᵀ − I`.
pub fn psi(h: &Matrix, delta: &Vector) -> Matrix {
    let p = delta.len();
    let d = Matrix::from_fn(p, p, |r, s| if r == s { 0.0 } else { delta[r] / delta[s] });
    (h * &d + d.transpose() * h) * 0.5
}

/// One step of the feedback recursion: from `F'_{i−1}` and the M pairs
/// `(Ĥ_{k|i}, Δ_{k|i})` of pseudo-dataset `i` (1-based) to `F'_i`.
pub fn feedback_update(prev: &Matrix, i: usize, hats: &[(SymMat, Vector)]) -> Matrix {
    assert!(i >= 1 && !hats.is_empty(), "feedback step needs i ≥ 1 and at least one estimate");
    let fi = i as f64;
    let mut inc = Matrix::zeros(prev.nrows(), prev.ncols());
    for (h, delta) in hats {
        inc += h.as_matrix() - psi(prev, delta);
    }
    prev * ((fi - 1.0) / fi) + inc / (fi * hats.len() as f64)
}

/// Hessian estimates `(Ĥ_{k|i}, Δ_{k|i})` for one pseudo-dataset, one list per
/// observation block (a single block unless per-observation perturbation is used).
type DatasetHats = Vec<Vec<(SymMat, Vector)>>;

fn dataset_hats(model: &dyn Model, theta: &Vector, n_obs: usize, cfg: &HessianEstimateConfig, indep: bool, stream: &RngStream) -> Result<DatasetHats> {
    let data = model.sample(theta, n_obs, &mut stream.substream(&[ROLE_DATA]))?;
    let p = model.dim();
    let mut perturb = stream.substream(&[ROLE_PERTURB]);
    let mut inner = stream.substream(&[ROLE_INNER]);
    let blocks = if indep { n_obs } else { 1 };
    let mut out = vec![Vec::with_capacity(cfg.m); blocks];
    for _k in 0..cfg.m {
        for (j, block) in out.iter_mut().enumerate() {
            let delta = sample_perturbation(&cfg.dist, p, &mut perturb)?;
            let h = block_hessian(model, theta, &data, indep.then_some(j), cfg, &delta, &mut inner)?;
            block.push((h, delta));
        }
    }
    Ok(out)
}

fn block_hessian(
    model: &dyn Model,
    theta: &Vector,
    data: &DataSet,
    obs: Option<usize>,
    cfg: &HessianEstimateConfig,
    delta: &Vector,
    inner: &mut RngStream,
) -> Result<SymMat> {
    match cfg.mode {
        GradientMode::GradientBased => {
            let mut g = |t: &Vector| match obs {
                Some(j) => model.obs_grad(t, data, j),
                None => model.grad(t, data),
            };
            sp_hessian_estimate(&mut g, theta, cfg.c, delta)
        }
        GradientMode::LikelihoodOnly => {
            let tilde = sample_perturbation(&PerturbationDist::BernoulliPm1, delta.len(), inner)?;
            let mut l = |t: &Vector| match obs {
                Some(j) => model.obs_neg_log_lik(t, data, j),
                None => model.neg_log_lik(t, data),
            };
            sp_hessian_from_values(&mut l, theta, cfg.c, delta, &tilde)
        }
    }
}

/// Runs any of the four estimators. Pseudo-dataset `i` always uses
/// substream `i` of `rng`, so methods evaluated with the same `rng` see the
/// same pseudo-data and perturbations.
pub fn fim_estimate(model: &dyn Model, theta: &Vector, n_obs: usize, cfg: &HessianEstimateConfig, method: FimMethod, rng: &RngStream) -> Result<FimEstimate> {
    cfg.validate()?;
    if method.indep() && model.structure() != DataStructure::Independent {
        return Err(FimError::NotIndependentData);
    }
    let p = model.dim();
    let blocks = if method.indep() { n_obs } else { 1 };
    let mut running = vec![Matrix::zeros(p, p); blocks];
    let mut sum = Matrix::zeros(p, p);
    let mut start = 0;
    while start < cfg.n_pseudo {
        let len = CHUNK.min(cfg.n_pseudo - start);
        let chunk = par_map(len, |k| dataset_hats(model, theta, n_obs, cfg, method.indep(), &rng.substream(&[(start + k) as u64])));
        for (k, hats) in chunk.into_iter().enumerate() {
            let hats = hats?;
            let i = start + k + 1;
            for (j, block) in hats.iter().enumerate() {
                if method.feedback() {
                    running[j] = feedback_update(&running[j], i, block);
                } else {
                    for (h, _) in block {
                        sum += h.as_matrix();
                    }
                }
            }
        }
        start += len;
    }
    let total = if method.feedback() {
        running.into_iter().fold(Matrix::zeros(p, p), |a, m| a + m)
    } else {
        sum / (cfg.n_pseudo * cfg.m) as f64
    };
    Ok(FimEstimate {
        matrix: SymMat::new(total)?,
        method,
        c: cfg.c,
        m: cfg.m,
        n_pseudo: cfg.n_pseudo,
        mode: cfg.mode,
        n_obs,
        seed: rng.master_seed(),
    })
}

/// Double average of SP Hessian estimates.
pub fn fim_basic(model: &dyn Model, theta: &Vector, n_obs: usize, cfg: &HessianEstimateConfig, rng: &RngStream) -> Result<FimEstimate> {
    fim_estimate(model, theta, n_obs, cfg, FimMethod::Basic, rng)
}

/// Feedback recursion starting from the zero matrix.
pub fn fim_feedback(model: &dyn Model, theta: &Vector, n_obs: usize, cfg: &HessianEstimateConfig, rng: &RngStream) -> Result<FimEstimate> {
    fim_estimate(model, theta, n_obs, cfg, FimMethod::Feedback, rng)
}

/// Separate perturbation per independent observation, optionally with feedback
/// applied to each observation's running average.
pub fn fim_indep(model: &dyn Model, theta: &Vector, n_obs: usize, cfg: &HessianEstimateConfig, feedback: bool, rng: &RngStream) -> Result<FimEstimate> {
    let method = if feedback { FimMethod::IndepFeedback } else { FimMethod::IndepBasic };
    fim_estimate(model, theta, n_obs, cfg, method, rng)
}

/// `‖est − ref‖₂ / ‖ref‖₂` in the spectral norm.
pub fn relative_error(est: &SymMat, reference: &SymMat) -> Result<f64> {
    if est.dim() != reference.dim() {
        return Err(FimError::DimensionMismatch {
            expected: reference.dim(),
            found: est.dim(),
        });
    }
    let denom = spectral_norm(reference.as_matrix());
    if denom == 0.0 {
        return Err(FimError::ZeroReference);
    }
    Ok(spectral_norm(&(est.as_matrix() - reference.as_matrix())) / denom)
}

/// Mean with a 95% t interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub mean: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ErrorSummary {
    pub fn of(xs: &[f64]) -> Self {
        let (mean, se) = mean_se(xs);
        let (ci_low, ci_high) = t_interval(xs, 0.95);
        ErrorSummary { mean, se, ci_low, ci_high }
    }
}

/// One benchmark row: a baseline against an enhanced method on shared streams.
#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkRow {
    pub mode: GradientMode,
    pub n_pseudo: usize,
    pub baseline: FimMethod,
    pub enhanced: FimMethod,
    pub baseline_errors: Vec<f64>,
    pub enhanced_errors: Vec<f64>,
    pub baseline_summary: ErrorSummary,
    pub enhanced_summary: ErrorSummary,
    /// Paired test on `err_baseline − err_enhanced`; `p_greater` small means the enhanced method is better.
    pub test: PairedTTest,
}

/// Relative errors of two methods over `runs` independent repetitions.
/// Both methods in a repetition use the same pseudo-data and perturbations.
#[allow(clippy::too_many_arguments)]
pub fn benchmark(
    model: &dyn Model,
    theta: &Vector,
    n_obs: usize,
    cfg: &HessianEstimateConfig,
    reference: &SymMat,
    baseline: FimMethod,
    enhanced: FimMethod,
    runs: usize,
    rng: &RngStream,
) -> Result<BenchmarkRow> {
    if runs < 2 {
        return Err(FimError::InvalidInput("benchmark needs at least two runs".into()));
    }
    let pairs = par_map(runs, |r| -> Result<(f64, f64)> {
        let stream = rng.substream(&[r as u64]);
        let b = fim_estimate(model, theta, n_obs, cfg, baseline, &stream)?;
        let e = fim_estimate(model, theta, n_obs, cfg, enhanced, &stream)?;
        Ok((relative_error(&b.matrix, reference)?, relative_error(&e.matrix, reference)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (be, ee): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(BenchmarkRow {
        mode: cfg.mode,
        n_pseudo: cfg.n_pseudo,
        baseline,
        enhanced,
        baseline_summary: ErrorSummary::of(&be),
        enhanced_summary: ErrorSummary::of(&ee),
        test: paired_t_test(&be, &ee),
        baseline_errors: be,
        enhanced_errors: ee,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianMeanModel, LinearStateSpaceModel, SignalPlusNoiseModel};
    use crate::numerics::linalg::sym_inverse;
    use proptest::prelude::*;

    fn bernoulli_vectors(p: usize) -> Vec<Vector> {
        (0..1u32 << p)
            .map(|mask| Vector::from_fn(p, |i, _| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }))
            .collect()
    }

    fn linear_gradient(h: Matrix) -> impl FnMut(&Vector) -> Result<Vector> {
        move |t: &Vector| Ok(&h * t)
    }

    #[test]
    fn identity_hessian_hand_check() {
        let mut g = linear_gradient(Matrix::identity(2, 2));
        let h = sp_hessian_estimate(&mut g, &Vector::from_vec(vec![0.3, -1.0]), 0.1, &Vector::from_vec(vec![1.0, -1.0])).unwrap();
        assert!((h.as_matrix() - Matrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])).amax() < 1e-12);
        let mut mean = Matrix::zeros(2, 2);
        for d in bernoulli_vectors(2) {
            mean += sp_hessian_estimate(&mut g, &Vector::zeros(2), 0.1, &d).unwrap().as_matrix() / 4.0;
        }
        assert_eq!(mean, Matrix::identity(2, 2));
    }

    #[test]
    fn zero_component_is_rejected() {
        let mut g = linear_gradient(Matrix::identity(2, 2));
        let r = sp_hessian_estimate(&mut g, &Vector::zeros(2), 0.1, &Vector::from_vec(vec![0.0, 1.0]));
        assert!(matches!(r, Err(FimError::ZeroPerturbationComponent { index: 0 })));
    }

    #[test]
    fn psi_examples() {
        let ones = Vector::from_element(3, 1.0);
        let d = Matrix::from_fn(3, 3, |r, s| if r == s { 0.0 } else { 1.0 });
        assert_eq!(psi(&Matrix::identity(3, 3), &ones), d);
        assert_eq!(psi(&Matrix::zeros(3, 3), &Vector::from_vec(vec![1.0, -1.0, 1.0])), Matrix::zeros(3, 3));
    }

    #[test]
    fn psi_has_zero_mean_over_bernoulli_enumeration() {
        let mut rng = RngStream::new(2, 0);
        for p in 2..=6 {
            let a = Matrix::from_fn(p, p, |_, _| rng.draw_normal());
            let h = &a + a.transpose();
            let mut sum = Matrix::zeros(p, p);
            for d in bernoulli_vectors(p) {
                sum += psi(&h, &d);
            }
            assert!(sum.amax() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn quadratic_decomposition_is_exact() {
        let h = Matrix::from_row_slice(3, 3, &[2.0, 0.5, -0.3, 0.5, 1.0, 0.2, -0.3, 0.2, 3.0]);
        let mut g = linear_gradient(h.clone());
        let mut rng = RngStream::new(3, 0);
        for _ in 0..20 {
            let d = sample_perturbation(&PerturbationDist::SegmentedUniform, 3, &mut rng).unwrap();
            let est = sp_hessian_estimate(&mut g, &Vector::from_vec(vec![0.1, 0.2, 0.3]), 1e-3, &d).unwrap();
            let resid = est.as_matrix() - psi(&h, &d) - &h;
            assert!(resid.amax() < 1e-10);
            // The running estimate stays at H once it reaches H.
            let next = feedback_update(&h, 7, &[(est, d)]);
            assert!((next - &h).amax() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn sp_hessian_is_bitwise_symmetric(
            g in proptest::collection::vec(-10.0f64..10.0, 8),
            d in proptest::collection::vec(0.1f64..2.0, 4),
            c in 1e-6f64..1.0,
        ) {
            let h = sp_hessian_from_gradients(
                &Vector::from_vec(g[..4].to_vec()),
                &Vector::from_vec(g[4..].to_vec()),
                c,
                &Vector::from_vec(d),
            ).unwrap();
            prop_assert_eq!(h.as_matrix().clone(), h.as_matrix().transpose());
        }
    }

    #[test]
    fn likelihood_only_recovers_quadratic_hessian_on_average() {
        let h = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mut l = |t: &Vector| Ok(0.5 * t.dot(&(&h * t)));
        let theta = Vector::from_vec(vec![0.2, -0.4]);
        let mut mean = Matrix::zeros(2, 2);
        for d in bernoulli_vectors(2) {
            for dt in bernoulli_vectors(2) {
                mean += sp_hessian_from_values(&mut l, &theta, 1e-3, &d, &dt).unwrap().as_matrix() / 16.0;
            }
        }
        assert!((mean - &h).amax() < 1e-8);
    }

    fn gaussian2() -> (GaussianMeanModel, Matrix) {
        let prec = Matrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        (GaussianMeanModel::new(SymMat::new(prec.clone()).unwrap()).unwrap(), prec)
    }

    #[test]
    fn single_pseudo_dataset_feedback_equals_basic() {
        let (m, _) = gaussian2();
        let cfg = HessianEstimateConfig::new(1e-4, 1, 1, GradientMode::GradientBased).unwrap();
        let rng = RngStream::new(4, 0);
        let b = fim_basic(&m, &Vector::zeros(2), 5, &cfg, &rng).unwrap();
        let f = fim_feedback(&m, &Vector::zeros(2), 5, &cfg, &rng).unwrap();
        assert_eq!(b.matrix, f.matrix);
    }

    #[test]
    fn feedback_is_no_worse_than_basic_on_quadratic() {
        let (m, prec) = gaussian2();
        let cfg = HessianEstimateConfig::new(1e-4, 2, 50, GradientMode::GradientBased).unwrap();
        let f = fim_feedback(&m, &Vector::zeros(2), 5, &cfg, &RngStream::new(5, 0)).unwrap();
        // The recursion error obeys e_i = ((i−1)/i)e_{i−1} − (1/i)·mean Ψ(e_{i−1}),
        // so it decays on quadratics while the basic average keeps Ψ(H) noise.
        let truth = prec * 5.0;
        let b = fim_basic(&m, &Vector::zeros(2), 5, &cfg, &RngStream::new(5, 0)).unwrap();
        let sref = SymMat::new(truth).unwrap();
        assert!(relative_error(&f.matrix, &sref).unwrap() <= relative_error(&b.matrix, &sref).unwrap() + 1e-12);
    }

    #[test]
    fn basic_error_shrinks_like_root_n() {
        let (m, prec) = gaussian2();
        let reference = SymMat::new(prec * 4.0).unwrap();
        let mean_err = |n_pseudo: usize| -> f64 {
            let cfg = HessianEstimateConfig::new(1e-4, 1, n_pseudo, GradientMode::GradientBased).unwrap();
            (0..40)
                .map(|r| relative_error(&fim_basic(&m, &Vector::zeros(2), 4, &cfg, &RngStream::new(60, r)).unwrap().matrix, &reference).unwrap())
                .sum::<f64>()
                / 40.0
        };
        let ratio = mean_err(400) / mean_err(100);
        assert!((0.4..=0.65).contains(&ratio), "{ratio}");
    }

    #[test]
    fn indep_reduces_variance_by_about_n() {
        let (m, prec) = gaussian2();
        let n_obs = 8;
        let cfg = HessianEstimateConfig::new(1e-4, 1, 20, GradientMode::GradientBased).unwrap();
        let entry = |method: FimMethod, r: u64| {
            fim_estimate(&m, &Vector::zeros(2), n_obs, &cfg, method, &RngStream::new(70, r)).unwrap().matrix.get(0, 1) / n_obs as f64
        };
        let var = |method: FimMethod| {
            let xs: Vec<f64> = (0..200).map(|r| entry(method, r)).collect();
            let mu = xs.iter().sum::<f64>() / 200.0;
            assert!((mu - prec[(0, 1)]).abs() < 0.2);
            xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 199.0
        };
        let ratio = var(FimMethod::Basic) / var(FimMethod::IndepBasic);
        assert!(ratio >= n_obs as f64 / 2.0 && ratio <= 2.0 * n_obs as f64, "{ratio}");
    }

    #[test]
    fn indep_rejects_dependent_models() {
        let m = LinearStateSpaceModel::three_state_default();
        let cfg = HessianEstimateConfig::new(1e-4, 1, 2, GradientMode::GradientBased).unwrap();
        let r = fim_indep(&m, &Vector::from_element(3, 1.0), 10, &cfg, false, &RngStream::new(0, 0));
        assert!(matches!(r, Err(FimError::NotIndependentData)));
    }

    #[test]
    fn relative_error_examples() {
        let r = SymMat::from_row_slice(2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        assert_eq!(relative_error(&r, &r).unwrap(), 0.0);
        assert!((relative_error(&r.scale(2.0), &r).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(relative_error(&r, &SymMat::zeros(2)), Err(FimError::ZeroReference)));
    }

    #[test]
    fn relative_error_matches_power_iteration() {
        let mut rng = RngStream::new(9, 0);
        let a = SymMat::new(Matrix::from_fn(4, 4, |_, _| rng.draw_normal())).unwrap();
        let b = SymMat::new(Matrix::from_fn(4, 4, |_, _| rng.draw_normal())).unwrap();
        let power = |m: &Matrix| {
            let mtm = m.transpose() * m;
            let mut v = Vector::from_element(4, 1.0);
            for _ in 0..2000 {
                v = &mtm * &v;
                v /= v.norm();
            }
            (v.dot(&(&mtm * &v))).sqrt()
        };
        let expect = power(&(a.as_matrix() - b.as_matrix())) / power(b.as_matrix());
        assert!((relative_error(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn estimates_are_deterministic_and_near_truth_for_spn() {
        let m = SignalPlusNoiseModel::new(SymMat::from_row_slice(2, &[0.5, 0.2, 0.2, 0.4]).unwrap()).unwrap();
        let theta = Vector::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        let truth = m.spn_expected_fim(&theta, 10).unwrap();
        let cfg = HessianEstimateConfig::new(1e-4, 2, 400, GradientMode::GradientBased).unwrap();
        let rng = RngStream::new(11, 0);
        let a = fim_feedback(&m, &theta, 10, &cfg, &rng).unwrap();
        let b = fim_feedback(&m, &theta, 10, &cfg, &rng).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert!(relative_error(&a.matrix, &truth).unwrap() < 0.2);
        assert!(sym_inverse(&a.matrix).is_ok());
    }
}
