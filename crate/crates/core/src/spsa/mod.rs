//! Simultaneous perturbation stochastic approximation with pluggable
//! perturbation distributions, the one-iteration superiority condition for
//! the segmented uniform distribution, and a paired MSE comparison harness.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{FimError, Result};
use crate::numerics::linalg::{Matrix, Vector};
use crate::numerics::par_map;
use crate::numerics::rng::RngStream;
use crate::stats::{mean_se, paired_t_test, PairedTTest};

const ROLE_NOISE: u64 = 1;
const ROLE_PERTURB_B: u64 = 2;
const ROLE_PERTURB_S: u64 = 3;
const CUSTOM_CHECK_DRAWS: usize = 100_000;

/// Inner endpoint `(19 − 3√13)/20` of the segmented uniform support.
pub fn su_inner() -> f64 {
    (19.0 - 3.0 * 13f64.sqrt()) / 20.0
}

/// Outer endpoint `(19 + 3√13)/20` of the segmented uniform support.
pub fn su_outer() -> f64 {
    (19.0 + 3.0 * 13f64.sqrt()) / 20.0
}

/// Moments a perturbation distribution must declare.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentRecord {
    pub mean: f64,
    pub variance: f64,
    /// `E(1/Δ²)`.
    pub inv_sq_mean: f64,
    /// Uniform bound on `|Δ|`.
    pub bound: f64,
}

pub type PerturbationSampler = Arc<dyn Fn(&mut RngStream) -> f64 + Send + Sync>;

/// Distribution of each perturbation component.
#[derive(Clone)]
pub enum PerturbationDist {
    BernoulliPm1,
    SegmentedUniform,
    Custom {
        name: String,
        sampler: PerturbationSampler,
        moments: MomentRecord,
    },
}

impl fmt::Debug for PerturbationDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl PerturbationDist {
    /// Builds a custom distribution after checking its declared moments
    /// against a fixed-seed empirical sample (`E(1/Δ²)` within 5%).
    pub fn custom(name: &str, sampler: PerturbationSampler, moments: MomentRecord) -> Result<Self> {
        let bad = |msg: String| Err(FimError::InvalidDistribution(format!("{name}: {msg}")));
        if moments.mean != 0.0 {
            return bad("declared mean must be zero".into());
        }
        if !(moments.variance > 0.0 && moments.inv_sq_mean.is_finite() && moments.inv_sq_mean > 0.0) {
            return bad("variance and E(1/Δ²) must be positive and finite".into());
        }
        if !(moments.bound.is_finite() && moments.bound > 0.0) {
            return bad("support must be bounded".into());
        }
        let mut rng = RngStream::derive(0, &[u64::from_le_bytes(*b"pertchk\0")]);
        let mut inv_sq = 0.0;
        let mut sum = 0.0;
        for _ in 0..CUSTOM_CHECK_DRAWS {
            let d = sampler(&mut rng);
            if d == 0.0 || !d.is_finite() || d.abs() > moments.bound {
                return bad(format!("sampler produced {d} outside (0, {}]", moments.bound));
            }
            sum += d;
            inv_sq += 1.0 / (d * d);
        }
        let m = CUSTOM_CHECK_DRAWS as f64;
        if (inv_sq / m / moments.inv_sq_mean - 1.0).abs() > 0.05 {
            return bad(format!("empirical E(1/Δ²) {} disagrees with declared {}", inv_sq / m, moments.inv_sq_mean));
        }
        if (sum / m).abs() > 5.0 * (moments.variance / m).sqrt() {
            return bad(format!("empirical mean {} is not centred", sum / m));
        }
        Ok(PerturbationDist::Custom {
            name: name.to_string(),
            sampler,
            moments,
        })
    }

    pub fn name(&self) -> String {
        match self {
            PerturbationDist::BernoulliPm1 => "bernoulli".into(),
            PerturbationDist::SegmentedUniform => "segmented_uniform".into(),
            PerturbationDist::Custom { name, .. } => name.clone(),
        }
    }

    pub fn moments(&self) -> MomentRecord {
        match self {
            PerturbationDist::BernoulliPm1 => MomentRecord {
                mean: 0.0,
                variance: 1.0,
                inv_sq_mean: 1.0,
                bound: 1.0,
            },
            PerturbationDist::SegmentedUniform => MomentRecord {
                mean: 0.0,
                variance: 1.0,
                inv_sq_mean: 100.0 / 61.0,
                bound: su_outer(),
            },
            PerturbationDist::Custom { moments, .. } => *moments,
        }
    }

    pub fn draw(&self, rng: &mut RngStream) -> f64 {
        match self {
            PerturbationDist::BernoulliPm1 => rng.draw_bernoulli_pm1(),
            PerturbationDist::SegmentedUniform => {
                let sign = rng.draw_bernoulli_pm1();
                sign * rng.draw_uniform_range(su_inner(), su_outer())
            }
            PerturbationDist::Custom { sampler, .. } => sampler(rng),
        }
    }
}

/// `p` independent perturbation components.
pub fn sample_perturbation(dist: &PerturbationDist, p: usize, rng: &mut RngStream) -> Result<Vector> {
    if p == 0 {
        return Err(FimError::InvalidInput("perturbation dimension must be positive".into()));
    }
    Ok(Vector::from_fn(p, |_, _| dist.draw(rng)))
}

/// `a_k = a/(k+2)^0.602`, `c_k = c/(k+1)^0.101`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GainSchedule {
    pub a: f64,
    pub c: f64,
}

impl GainSchedule {
    pub const ALPHA: f64 = 0.602;
    pub const GAMMA: f64 = 0.101;

    pub fn new(a: f64, c: f64) -> Result<Self> {
        if !(a >= 0.0 && a.is_finite()) || !(c > 0.0 && c.is_finite()) {
            return Err(FimError::InvalidInput(format!("gains need a ≥ 0 and c > 0, got a={a}, c={c}")));
        }
        Ok(GainSchedule { a, c })
    }

    pub fn a_k(&self, k: usize) -> f64 {
        self.a / (k as f64 + 2.0).powf(Self::ALPHA)
    }

    pub fn c_k(&self, k: usize) -> f64 {
        self.c / (k as f64 + 1.0).powf(Self::GAMMA)
    }
}

fn check_perturbation(delta: &Vector) -> Result<()> {
    match delta.iter().position(|&d| d == 0.0) {
        Some(index) => Err(FimError::ZeroPerturbationComponent { index }),
        None => Ok(()),
    }
}

/// Two-measurement gradient estimate `[y(θ+cΔ) − y(θ−cΔ)] / (2cΔ_i)`.
pub fn sp_gradient<Y>(y: &mut Y, theta: &Vector, c_k: f64, delta: &Vector) -> Result<Vector>
where
    Y: FnMut(&Vector) -> Result<f64>,
{
    check_perturbation(delta)?;
    if !(c_k > 0.0) {
        return Err(FimError::InvalidInput(format!("c_k must be positive, got {c_k}")));
    }
    let plus = y(&(theta + delta * c_k))?;
    let minus = y(&(theta - delta * c_k))?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(FimError::NonFiniteEvaluation("loss measurement".into()));
    }
    let diff = (plus - minus) / (2.0 * c_k);
    Ok(delta.map(|d| diff / d))
}

/// Runs `k_iters` SPSA steps from `θ0`; perturbations come from `rng`.
pub fn spsa_run<Y>(y: &mut Y, theta0: &Vector, gains: &GainSchedule, dist: &PerturbationDist, k_iters: usize, rng: &mut RngStream) -> Result<Vector>
where
    Y: FnMut(&Vector) -> Result<f64>,
{
    if k_iters == 0 {
        return Err(FimError::InvalidInput("SPSA needs at least one iteration".into()));
    }
    let mut theta = theta0.clone();
    for k in 0..k_iters {
        let delta = sample_perturbation(dist, theta.len(), rng)?;
        let g = sp_gradient(y, &theta, gains.c_k(k), &delta)?;
        theta -= g * gains.a_k(k);
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(FimError::NonFiniteEvaluation(format!("SPSA iterate at step {k}")));
        }
    }
    Ok(theta)
}

/// Inputs of the one-iteration comparison between segmented uniform (S) and Bernoulli (B).
#[derive(Clone, Debug, PartialEq)]
pub struct OneStepInputs {
    /// First derivatives of `L` at `θ0`.
    pub grad: Vector,
    pub theta0: Vector,
    pub theta_star: Vector,
    pub sigma2: f64,
    pub a0_s: f64,
    pub a0_b: f64,
    pub c0_s: f64,
    pub c0_b: f64,
}

/// Leading part of `MSE_S − MSE_B` after one iteration (exact for quadratic
/// losses). Negative values favour the segmented uniform distribution.
pub fn theorem_a1_lhs(x: &OneStepInputs) -> f64 {
    let p = x.grad.len() as f64;
    let sum_l2 = x.grad.norm_squared();
    let cross = (&x.theta0 - &x.theta_star).dot(&x.grad);
    let (a_s, a_b, c_s, c_b) = (x.a0_s, x.a0_b, x.c0_s, x.c0_b);
    ((100.0 / 61.0 * p - 39.0 / 61.0) * a_s * a_s - p * a_b * a_b) * sum_l2
        + (a_s - a_b) * (p * x.sigma2 / (2.0 * c_b * c_b) * (a_s + a_b) - 2.0 * cross)
        - p * a_s * a_s * x.sigma2 * (1.0 / (2.0 * c_b * c_b) - 50.0 / (61.0 * c_s * c_s))
}

/// The two-parameter quadratic form of [`theorem_a1_lhs`], written out term by term.
pub fn quadratic_p2_lhs(l: [f64; 2], offset: [f64; 2], sigma2: f64, a0_s: f64, a0_b: f64, c0_s: f64, c0_b: f64) -> f64 {
    (161.0 / 61.0 * a0_s * a0_s - 2.0 * a0_b * a0_b) * (l[0] * l[0] + l[1] * l[1])
        + (a0_s - a0_b) * (sigma2 / (c0_b * c0_b) * (a0_s + a0_b) - 2.0 * (l[0] * offset[0] + l[1] * offset[1]))
        - a0_s * a0_s * sigma2 * (1.0 / (c0_b * c0_b) - 100.0 / (61.0 * c0_s * c0_s))
}

/// Upper bound `U` on the higher-order remainder, given `|L_ijk| ≤ m`.
/// `max_l` is `max_i L_i(θ0)`, taken as stated (not in absolute value).
pub fn corollary_a1_bound(m: f64, x: &OneStepInputs, max_l: f64) -> f64 {
    let p = x.grad.len() as f64;
    let (a_s, a_b, c_s, c_b) = (x.a0_s, x.a0_b, x.c0_s, x.c0_b);
    let dist: f64 = (&x.theta0 - &x.theta_star).iter().map(|v| v.abs()).sum();
    (4.0 * a_s * c_s * c_s + a_b * c_b * c_b) * m * dist * (p - 1.0).powi(2)
        + a_s * a_s * c_s.powi(4) * m * m * p.powi(7) * a_s / 20.0
        + (a_s * a_s * c_s.powi(3) + a_b * a_b * c_b.powi(3)) * m * p.powi(5) * max_l / 3.0
}

/// Built-in and configurable loss functions.
#[derive(Clone, Debug, PartialEq)]
pub enum Loss {
    /// `θᵀAθ + bᵀθ`.
    Quadratic { a: Matrix, b: Vector },
    /// `t1² − t1·t2 + t2²`.
    Bowl,
    /// `t1⁴ + t1² + t1·t2 + t2²`.
    Quartic,
}

impl Loss {
    pub fn dim(&self) -> usize {
        match self {
            Loss::Quadratic { b, .. } => b.len(),
            Loss::Bowl | Loss::Quartic => 2,
        }
    }

    pub fn value(&self, t: &Vector) -> f64 {
        match self {
            Loss::Quadratic { a, b } => t.dot(&(a * t)) + b.dot(t),
            Loss::Bowl => t[0] * t[0] - t[0] * t[1] + t[1] * t[1],
            Loss::Quartic => t[0].powi(4) + t[0] * t[0] + t[0] * t[1] + t[1] * t[1],
        }
    }

    pub fn gradient(&self, t: &Vector) -> Vector {
        match self {
            Loss::Quadratic { a, b } => (a + a.transpose()) * t + b,
            Loss::Bowl => Vector::from_vec(vec![2.0 * t[0] - t[1], 2.0 * t[1] - t[0]]),
            Loss::Quartic => Vector::from_vec(vec![4.0 * t[0].powi(3) + 2.0 * t[0] + t[1], t[0] + 2.0 * t[1]]),
        }
    }

    /// Largest third-derivative magnitude over the ball `‖θ‖∞ ≤ radius`.
    pub fn third_derivative_bound(&self, radius: f64) -> f64 {
        match self {
            Loss::Quadratic { .. } | Loss::Bowl => 0.0,
            Loss::Quartic => 24.0 * radius,
        }
    }

    /// Minimizer: `∇L = 0` solved analytically.
    pub fn theta_star(&self) -> Result<Vector> {
        match self {
            Loss::Quadratic { a, b } => {
                let s = a + a.transpose();
                let chol = s.cholesky().ok_or_else(|| FimError::NotPositiveDefinite("quadratic loss A + Aᵀ".into()))?;
                Ok(-chol.solve(b))
            }
            Loss::Bowl | Loss::Quartic => Ok(Vector::zeros(2)),
        }
    }
}

/// One side of a comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MseSide {
    pub distribution: String,
    pub mse: f64,
    pub se: f64,
}

/// Paired MSE comparison of Bernoulli and segmented uniform perturbations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpsaComparison {
    pub bernoulli: MseSide,
    pub su: MseSide,
    /// Test on `d = err_B − err_SU`; `p_greater` small means SU is better.
    pub test: PairedTTest,
    pub reps: usize,
    pub iterations: usize,
    pub seed: u64,
}

/// Setup shared by both arms of [`mse_compare`].
#[derive(Clone, Debug, PartialEq)]
pub struct CompareSetup {
    pub loss: Loss,
    pub theta0: Vector,
    pub sigma2: f64,
    pub gains_su: GainSchedule,
    pub gains_bernoulli: GainSchedule,
}

fn noisy_loss(loss: &Loss, sigma: f64, noise: RngStream) -> impl FnMut(&Vector) -> Result<f64> + '_ {
    let mut noise = noise;
    move |t: &Vector| Ok(loss.value(t) + sigma * noise.draw_normal())
}

/// Squared errors `‖θ̂_K − θ*‖²` for both arms of replication `rep`.
/// Both arms see the same measurement-noise sequence.
fn paired_errors(setup: &CompareSetup, theta_star: &Vector, k_iters: usize, rep: &RngStream) -> Result<(f64, f64)> {
    let sigma = setup.sigma2.sqrt();
    let noise = rep.substream(&[ROLE_NOISE]);
    let mut yb = noisy_loss(&setup.loss, sigma, noise.clone());
    let mut ys = noisy_loss(&setup.loss, sigma, noise);
    let tb = spsa_run(&mut yb, &setup.theta0, &setup.gains_bernoulli, &PerturbationDist::BernoulliPm1, k_iters, &mut rep.substream(&[ROLE_PERTURB_B]))?;
    let ts = spsa_run(&mut ys, &setup.theta0, &setup.gains_su, &PerturbationDist::SegmentedUniform, k_iters, &mut rep.substream(&[ROLE_PERTURB_S]))?;
    Ok(((tb - theta_star).norm_squared(), (ts - theta_star).norm_squared()))
}

/// Runs `reps` paired replications of `k_iters` SPSA iterations per arm.
pub fn mse_compare(setup: &CompareSetup, k_iters: usize, reps: usize, rng: &RngStream) -> Result<SpsaComparison> {
    if reps < 2 {
        return Err(FimError::InvalidInput("mse_compare needs at least two replications".into()));
    }
    if setup.theta0.len() != setup.loss.dim() {
        return Err(FimError::DimensionMismatch {
            expected: setup.loss.dim(),
            found: setup.theta0.len(),
        });
    }
    let theta_star = setup.loss.theta_star()?;
    let pairs = par_map(reps, |r| paired_errors(setup, &theta_star, k_iters, &rng.substream(&[r as u64])))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (eb, es): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (mb, sb) = mean_se(&eb);
    let (ms, ss) = mean_se(&es);
    Ok(SpsaComparison {
        bernoulli: MseSide {
            distribution: "bernoulli".into(),
            mse: mb,
            se: sb,
        },
        su: MseSide {
            distribution: "segmented_uniform".into(),
            mse: ms,
            se: ss,
        },
        test: paired_t_test(&eb, &es),
        reps,
        iterations: k_iters,
        seed: rng.master_seed(),
    })
}
