//! Maximum likelihood solvers: damped Newton with box projection, and an
//! annealed localized random search for likelihoods without cheap derivatives.

use serde::Serialize;

use crate::error::{FimError, Result};
use crate::models::{Bounds, DataSet, Model, SolverKind};
use crate::numerics::linalg::{SymMat, Vector};
use crate::numerics::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub max_iters: usize,
    /// Tolerance on the sup-norm of the (projected) gradient.
    pub grad_tol: f64,
    /// Backtracking factor in (0, 1).
    pub step_damping: f64,
    /// Starting point; the model's default guess when absent.
    pub init: Option<Vector>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 200,
            grad_tol: 1e-8,
            step_damping: 0.5,
            init: None,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.grad_tol > 0.0) || !(self.step_damping > 0.0 && self.step_damping < 1.0) {
            return Err(FimError::InvalidInput("solver options out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MleResult {
    #[serde(serialize_with = "serialize_vector")]
    pub theta: Vector,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm of the projected gradient (Newton) or NaN (random search).
    pub grad_norm: f64,
    pub neg_log_lik: f64,
    /// Objective value after each accepted iteration, starting with the initial point.
    pub trace: Vec<f64>,
}

fn serialize_vector<S: serde::Serializer>(v: &Vector, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_slice().serialize(s)
}

/// Gradient with components removed where a bound is active and the gradient
/// pushes outward.
fn free_mask(theta: &Vector, g: &Vector, bounds: &Bounds) -> Vec<bool> {
    (0..theta.len())
        .map(|j| !((theta[j] <= bounds.lower[j] && g[j] > 0.0) || (theta[j] >= bounds.upper[j] && g[j] < 0.0)))
        .collect()
}

fn projected_norm(g: &Vector, free: &[bool]) -> f64 {
    g.iter().zip(free).filter(|(_, &f)| f).map(|(v, _)| v.abs()).fold(0.0, f64::max)
}

/// Newton direction on the free coordinates; `None` if the reduced Hessian is not positive definite.
fn newton_direction(h: &SymMat, g: &Vector, free: &[bool]) -> Option<Vector> {
    let idx: Vec<usize> = (0..g.len()).filter(|&j| free[j]).collect();
    if idx.is_empty() {
        return None;
    }
    let hr = SymMat::new(crate::Matrix::from_fn(idx.len(), idx.len(), |a, b| h.get(idx[a], idx[b]))).ok()?;
    let gr = Vector::from_iterator(idx.len(), idx.iter().map(|&j| g[j]));
    let step = hr.solve(&gr).ok()?;
    let mut d = Vector::zeros(g.len());
    for (a, &j) in idx.iter().enumerate() {
        d[j] = -step[a];
    }
    Some(d)
}

/// Damped Newton iteration with backtracking and projection onto the model's bounds.
///
/// When the Hessian restricted to the free coordinates is not positive definite,
/// or the Newton direction fails to decrease the objective, a scaled steepest
/// descent step is tried before giving up.
pub fn newton_mle(model: &dyn Model, data: &DataSet, opts: &SolveOptions) -> Result<MleResult> {
    opts.validate()?;
    let bounds = model.bounds();
    let mut theta = opts.init.clone().unwrap_or_else(|| model.initial_guess(data));
    if theta.len() != model.dim() {
        return Err(FimError::DimensionMismatch {
            expected: model.dim(),
            found: theta.len(),
        });
    }
    bounds.project(&mut theta);
    let mut f = model.neg_log_lik(&theta, data)?;
    let mut trace = vec![f];
    for iter in 0..opts.max_iters {
        let g = model.grad(&theta, data)?;
        let free = free_mask(&theta, &g, &bounds);
        let grad_norm = projected_norm(&g, &free);
        if grad_norm <= opts.grad_tol {
            return Ok(MleResult {
                theta,
                converged: true,
                iterations: iter,
                grad_norm,
                neg_log_lik: f,
                trace,
            });
        }
        let h = model.hessian(&theta, data)?;
        let mut directions = Vec::with_capacity(2);
        if let Some(d) = newton_direction(&h, &g, &free) {
            directions.push(d);
        }
        // Steepest descent scaled so the first trial moves at most one unit.
        let mut sd = Vector::from_iterator(g.len(), (0..g.len()).map(|j| if free[j] { -g[j] } else { 0.0 }));
        let sd_norm = sd.amax();
        if sd_norm > 1.0 {
            sd /= sd_norm;
        }
        directions.push(sd);

        let slack = 8.0 * f64::EPSILON * f.abs().max(1.0);
        let mut accepted = None;
        'dirs: for d in &directions {
            let mut step = 1.0;
            for _ in 0..60 {
                let mut trial = &theta + d * step;
                bounds.project(&mut trial);
                if let Ok(ft) = model.neg_log_lik(&trial, data) {
                    if ft.is_finite() && ft <= f + slack && trial != theta {
                        accepted = Some((trial, ft));
                        break 'dirs;
                    }
                }
                step *= opts.step_damping;
            }
        }
        match accepted {
            Some((t, ft)) => {
                theta = t;
                f = ft;
                trace.push(f);
            }
            None if directions.len() == 1 => return Err(FimError::SingularHessian),
            None => {
                return Err(FimError::NotConverged {
                    iterations: iter + 1,
                    grad_norm,
                })
            }
        }
    }
    let g = model.grad(&theta, data)?;
    let free = free_mask(&theta, &g, &bounds);
    let grad_norm = projected_norm(&g, &free);
    if grad_norm <= opts.grad_tol {
        return Ok(MleResult {
            theta,
            converged: true,
            iterations: opts.max_iters,
            grad_norm,
            neg_log_lik: f,
            trace,
        });
    }
    Err(FimError::NotConverged {
        iterations: opts.max_iters,
        grad_norm,
    })
}

/// Budget and annealing schedule of the localized random search.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchOptions {
    /// Number of objective evaluations, including the initial point.
    pub budget: usize,
    /// Initial step scale as a fraction of the box width (or absolute when the box is unbounded).
    pub initial_scale: f64,
    /// Final step scale, same units.
    pub final_scale: f64,
    /// Relative objective change over the last fifth of the budget below which the run is flagged converged.
    pub stall_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            budget: 2500,
            initial_scale: 0.05,
            final_scale: 1e-5,
            stall_tol: 1e-6,
        }
    }
}

/// Enhanced localized random search over a box.
///
/// Each iteration draws `d ~ N(b, ρ_k² I)` (per-coordinate scale proportional to
/// the box width), tries `θ + d` and then `θ − d`, and keeps whichever decreases
/// the objective. The bias `b` follows the usual update: `0.2b + 0.4d` after a
/// forward success, `b − 0.4d` after a reverse success, `0.5b` otherwise. The
/// scale `ρ_k` decays geometrically from `initial_scale` to `final_scale`.
pub fn random_search<F>(mut f: F, init: &Vector, bounds: &Bounds, opts: &SearchOptions, rng: &mut RngStream) -> Result<MleResult>
where
    F: FnMut(&Vector) -> Result<f64>,
{
    if opts.budget == 0 || !(opts.initial_scale > 0.0 && opts.final_scale > 0.0) {
        return Err(FimError::InvalidInput("search budget and scales must be positive".into()));
    }
    let p = init.len();
    let width = Vector::from_iterator(
        p,
        (0..p).map(|j| {
            let w = bounds.upper[j] - bounds.lower[j];
            if w.is_finite() {
                w
            } else {
                1.0
            }
        }),
    );
    let mut theta = init.clone();
    bounds.project(&mut theta);
    let mut fx = f(&theta)?;
    if !fx.is_finite() {
        return Err(FimError::NonFiniteEvaluation("random search initial point".into()));
    }
    let mut trace = vec![fx];
    let mut evals = 1usize;
    let mut bias = Vector::zeros(p);
    let total = opts.budget.max(2) as f64;
    let ratio = (opts.final_scale / opts.initial_scale).ln();
    let mut checkpoint = None;
    let mut iterations = 0;
    let evaluate = |f: &mut F, x: &Vector| -> f64 {
        match f(x) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };
    while evals < opts.budget {
        iterations += 1;
        if checkpoint.is_none() && evals as f64 >= 0.8 * total {
            checkpoint = Some(fx);
        }
        let rho = opts.initial_scale * (ratio * evals as f64 / total).exp();
        let d = Vector::from_fn(p, |j, _| bias[j] + rho * width[j] * rng.draw_normal());
        let mut forward = &theta + &d;
        bounds.project(&mut forward);
        let f_fwd = evaluate(&mut f, &forward);
        evals += 1;
        if f_fwd < fx {
            theta = forward;
            fx = f_fwd;
            bias = &bias * 0.2 + &d * 0.4;
            trace.push(fx);
            continue;
        }
        if evals >= opts.budget {
            break;
        }
        let mut reverse = &theta - &d;
        bounds.project(&mut reverse);
        let f_rev = evaluate(&mut f, &reverse);
        evals += 1;
        if f_rev < fx {
            theta = reverse;
            fx = f_rev;
            bias -= &d * 0.4;
            trace.push(fx);
        } else {
            bias *= 0.5;
        }
    }
    let converged = match checkpoint {
        Some(c) => (c - fx).abs() <= opts.stall_tol * fx.abs().max(1.0),
        None => false,
    };
    Ok(MleResult {
        theta,
        converged,
        iterations,
        grad_norm: f64::NAN,
        neg_log_lik: fx,
        trace,
    })
}

/// Random-search MLE inside the model's search box (or its bounds).
pub fn stochastic_search_mle(
    model: &dyn Model,
    data: &DataSet,
    opts: &SolveOptions,
    search: &SearchOptions,
    rng: &mut RngStream,
) -> Result<MleResult> {
    let bounds = model.search_box(data).unwrap_or_else(|| model.bounds());
    let init = opts.init.clone().unwrap_or_else(|| model.initial_guess(data));
    random_search(|t| model.neg_log_lik(t, data), &init, &bounds, search, rng)
}

/// Fits the model with its designated solver and returns the canonical
/// representative of the estimate.
pub fn fit_mle(model: &dyn Model, data: &DataSet, rng: &mut RngStream) -> Result<MleResult> {
    let opts = SolveOptions::default();
    let mut result = match model.solver() {
        SolverKind::Newton => newton_mle(model, data, &opts)?,
        SolverKind::StochasticSearch => stochastic_search_mle(model, data, &opts, &SearchOptions::default(), rng)?,
    };
    model.canonicalize(&mut result.theta);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ExpFamilyModel, GaussianMeanModel, LinearStateSpaceModel, MixtureGaussianModel};

    #[test]
    fn gaussian_mean_converges_in_one_step() {
        let m = GaussianMeanModel::scalar(1.0).unwrap();
        let data = DataSet::scalar(vec![0.3, 1.1, -0.2, 2.0]).unwrap();
        let r = newton_mle(&m, &data, &SolveOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert!((r.theta[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn poisson_mle_is_sample_mean() {
        let m = ExpFamilyModel::poisson();
        let data = DataSet::scalar(vec![3.0, 0.0, 5.0, 2.0, 2.0]).unwrap();
        let r = newton_mle(&m, &data, &SolveOptions::default()).unwrap();
        assert!((r.theta[0] - 2.4).abs() < 1e-9);
    }

    #[test]
    fn objective_never_increases_and_fixed_point_is_stable() {
        let m = MixtureGaussianModel::known_scales(1.0, 1.0).unwrap();
        let theta = Vector::from_vec(vec![0.5, 0.0, 4.0]);
        for seed in 0..20 {
            let data = m.sample(&theta, 50, &mut RngStream::new(seed, 0)).unwrap();
            let r = newton_mle(&m, &data, &SolveOptions::default()).unwrap();
            for w in r.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
            }
            let again = newton_mle(
                &m,
                &data,
                &SolveOptions {
                    init: Some(r.theta.clone()),
                    ..SolveOptions::default()
                },
            )
            .unwrap();
            assert_eq!(again.iterations, 0);
        }
    }

    #[test]
    fn mixture_mle_matches_grid_search() {
        let m = MixtureGaussianModel::known_scales(1.0, 1.0).unwrap();
        let data = m.sample(&Vector::from_vec(vec![0.5, 0.0, 4.0]), 50, &mut RngStream::new(77, 0)).unwrap();
        let r = fit_mle(&m, &data, &mut RngStream::new(0, 0)).unwrap();
        // Coarse grid then a fine grid of spacing 1e−3 around the best coarse cell.
        let eval = |l: f64, a: f64, b: f64| m.neg_log_lik(&Vector::from_vec(vec![l, a, b]), &data).unwrap();
        let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
        for i in 1..100 {
            for j in 0..80 {
                for k in 0..80 {
                    let (l, a, b) = (i as f64 * 0.01, -2.0 + j as f64 * 0.05, 2.0 + k as f64 * 0.05);
                    let v = eval(l, a, b);
                    if v < best.0 {
                        best = (v, l, a, b);
                    }
                }
            }
        }
        let (_, l0, a0, b0) = best;
        for i in -12..=12 {
            for j in -30..=30 {
                for k in -30..=30 {
                    let (l, a, b) = (l0 + i as f64 * 1e-3, a0 + j as f64 * 1e-3, b0 + k as f64 * 1e-3);
                    if l <= 0.0 || l >= 1.0 {
                        continue;
                    }
                    let v = eval(l, a, b);
                    if v < best.0 {
                        best = (v, l, a, b);
                    }
                }
            }
        }
        assert!((r.theta[0] - best.1).abs() <= 1e-3 + 1e-9);
        assert!((r.theta[1] - best.2).abs() <= 1e-3 + 1e-9);
        assert!((r.theta[2] - best.3).abs() <= 1e-3 + 1e-9);
        assert!(r.neg_log_lik <= best.0 + 1e-12);
    }

    #[test]
    fn random_search_finds_quadratic_minimum() {
        let c = Vector::from_vec(vec![0.3, -1.2, 2.0]);
        let bounds = Bounds {
            lower: Vector::from_element(3, -5.0),
            upper: Vector::from_element(3, 5.0),
        };
        let opts = SearchOptions {
            budget: 5000,
            ..SearchOptions::default()
        };
        let r = random_search(|t| Ok((t - &c).norm_squared()), &Vector::zeros(3), &bounds, &opts, &mut RngStream::new(3, 3)).unwrap();
        assert!((&r.theta - &c).amax() < 0.01);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn state_space_search_beats_truth_and_is_deterministic() {
        let m = LinearStateSpaceModel::three_state_default();
        let truth = Vector::from_element(3, 1.0);
        let y = m.sample(&truth, 100, &mut RngStream::new(5, 0)).unwrap();
        let a = fit_mle(&m, &y, &mut RngStream::new(5, 1)).unwrap();
        let b = fit_mle(&m, &y, &mut RngStream::new(5, 1)).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.trace, b.trace);
        let at_truth = m.neg_log_lik(&truth, &y).unwrap();
        assert!(a.neg_log_lik <= at_truth);
        let at_init = m.neg_log_lik(&m.initial_guess(&y), &y).unwrap();
        assert!(a.neg_log_lik <= at_init);
    }
}
