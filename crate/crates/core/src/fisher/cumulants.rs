//! Per-observation score cumulants and the diagnostics built on them.
//!
//! With `l_i = −log p_i`, `U_r^i`, `U_rs^i`, `U_rst^i` are its first three
//! derivatives. Cumulants are estimated by Monte Carlo at a fixed `θ*` with
//! per-observation sample moments, then averaged over observations (`κ̄`).

use crate::error::{FimError, Result};
use crate::fisher::{discrepancy_study_with, DiscrepancyReport, StudyOptions};
use crate::models::{DataSet, DataStructure, Model};
use crate::numerics::fd::{fd_jacobian, FdStep};
use crate::numerics::linalg::{sym_inverse, Matrix, SymMat, Vector};
use crate::numerics::par_map;
use crate::numerics::rng::RngStream;
use crate::stats::correlation;

const ROLE_CUMULANTS: u64 = 20;
const ROLE_SCORES: u64 = 21;
const ROLE_STUDY: u64 = 22;
const ROLE_A9: u64 = 23;
const CHUNK: usize = 32;
const THIRD_DERIV_STEP: f64 = 1e-4;

/// Monte Carlo cumulants of the per-observation derivatives at `θ*`.
#[derive(Clone, Debug)]
pub struct CumulantSet {
    pub p: usize,
    pub n: usize,
    pub m_reps: usize,
    /// `κ̄_r`.
    pub kappa_r: Vector,
    /// `κ̄_rs = E Ū_rs`.
    pub kappa_rs: SymMat,
    /// `κ̄_{r,s} = cov(U_r, U_s)` averaged over observations.
    pub kappa_r_s: SymMat,
    /// `κ̄^{r,s}`, the inverse of `κ̄_{r,s}`.
    pub kappa_r_s_inv: SymMat,
    /// Standard errors of `κ̄_rs` and `κ̄_{r,s}`.
    pub se_kappa_rs: Matrix,
    pub se_kappa_r_s: Matrix,
    /// Per-observation means `κ_r^i` and `κ_rs^i`.
    pub per_obs_r: Vec<Vector>,
    pub per_obs_rs: Vec<Matrix>,
    kappa_rst: Vec<f64>,
    kappa_rs_t: Vec<f64>,
}

impl CumulantSet {
    /// `κ̄_rst`.
    pub fn kappa_rst(&self, r: usize, s: usize, t: usize) -> f64 {
        self.kappa_rst[(r * self.p + s) * self.p + t]
    }

    /// `κ̄_{rs,t} = cov(U_rs, U_t)` averaged over observations.
    pub fn kappa_rs_t(&self, r: usize, s: usize, t: usize) -> f64 {
        self.kappa_rs_t[(r * self.p + s) * self.p + t]
    }

    /// `κ̄_{tu,v} κ̄^{v,w}` as a `p² × p` matrix, row `t·p + u`.
    fn regression(&self) -> Matrix {
        let p = self.p;
        let inv = self.kappa_r_s_inv.as_matrix();
        Matrix::from_fn(p * p, p, |tu, w| (0..p).map(|v| self.kappa_rs_t[tu * p + v] * inv[(v, w)]).sum())
    }
}

struct ObsDerivs {
    g: Vector,
    h: Matrix,
    third: Option<Vec<f64>>,
}

fn obs_derivs(model: &dyn Model, theta: &Vector, data: &DataSet, i: usize, with_third: bool) -> Result<ObsDerivs> {
    let g = model.obs_grad(theta, data, i)?;
    let h = model.obs_hessian(theta, data, i)?.into_matrix();
    let third = if with_third {
        // Column t of the Jacobian is ∂vec(U_rs)/∂θ_t.
        let j = fd_jacobian(
            |t| Ok(Vector::from_column_slice(model.obs_hessian(t, data, i)?.as_matrix().as_slice())),
            theta,
            FdStep::Relative(THIRD_DERIV_STEP),
        )?;
        let p = theta.len();
        // vec() is column-major, so row index of j is s·p + r for entry (r, s).
        Some((0..p * p * p).map(|k| {
            let (rs, t) = (k / p, k % p);
            let (r, s) = (rs / p, rs % p);
            j[(s * p + r, t)]
        }).collect())
    } else {
        None
    };
    Ok(ObsDerivs { g, h, third })
}

/// Estimates per-observation cumulants from `m_reps` datasets of size `n` drawn at `θ*`.
pub fn null_cumulants(model: &dyn Model, theta_star: &Vector, n: usize, m_reps: usize, rng: &RngStream) -> Result<CumulantSet> {
    if model.structure() != DataStructure::Independent {
        return Err(FimError::NotIndependentData);
    }
    if m_reps < 3 || n == 0 {
        return Err(FimError::InvalidInput("cumulants need n ≥ 1 and at least three replications".into()));
    }
    let p = model.dim();
    let (p2, p3) = (p * p, p * p * p);
    let mut s_r = vec![0.0; n * p];
    let mut s_rs = vec![0.0; n * p2];
    let mut s_rst = vec![0.0; n * p3];
    let mut s_r_s = vec![0.0; n * p2];
    let mut s_rs_t = vec![0.0; n * p3];
    // Per-replication averages over observations, for standard errors.
    let mut rep_rs = Vec::with_capacity(m_reps);
    let mut rep_grads: Vec<Vec<f64>> = Vec::with_capacity(m_reps);

    let mut start = 0;
    while start < m_reps {
        let len = CHUNK.min(m_reps - start);
        let chunk = par_map(len, |k| -> Result<Vec<ObsDerivs>> {
            let mut stream = rng.substream(&[ROLE_CUMULANTS, (start + k) as u64]);
            let data = model.sample(theta_star, n, &mut stream)?;
            (0..n).map(|i| obs_derivs(model, theta_star, &data, i, true)).collect()
        });
        for rep in chunk {
            let rep = rep?;
            let mut avg_h = Matrix::zeros(p, p);
            let mut grads = Vec::with_capacity(n * p);
            for (i, d) in rep.iter().enumerate() {
                let third = d.third.as_ref().expect("third derivatives requested");
                for r in 0..p {
                    s_r[i * p + r] += d.g[r];
                    grads.push(d.g[r]);
                    for s in 0..p {
                        s_rs[i * p2 + r * p + s] += d.h[(r, s)];
                        s_r_s[i * p2 + r * p + s] += d.g[r] * d.g[s];
                        for t in 0..p {
                            let k = (r * p + s) * p + t;
                            s_rst[i * p3 + k] += third[k];
                            s_rs_t[i * p3 + k] += d.h[(r, s)] * d.g[t];
                        }
                    }
                }
                avg_h += &d.h;
            }
            rep_rs.push(avg_h / n as f64);
            rep_grads.push(grads);
        }
        start += len;
    }

    let m = m_reps as f64;
    let mut per_obs_r = Vec::with_capacity(n);
    let mut per_obs_rs = Vec::with_capacity(n);
    let mut kappa_r = Vector::zeros(p);
    let mut kappa_rs = Matrix::zeros(p, p);
    let mut kappa_r_s = Matrix::zeros(p, p);
    let mut kappa_rst = vec![0.0; p3];
    let mut kappa_rs_t = vec![0.0; p3];
    for i in 0..n {
        let mr = Vector::from_fn(p, |r, _| s_r[i * p + r] / m);
        let mrs = Matrix::from_fn(p, p, |r, s| s_rs[i * p2 + r * p + s] / m);
        for r in 0..p {
            for s in 0..p {
                kappa_r_s[(r, s)] += (s_r_s[i * p2 + r * p + s] - m * mr[r] * mr[s]) / (m - 1.0);
                for t in 0..p {
                    let k = (r * p + s) * p + t;
                    kappa_rst[k] += s_rst[i * p3 + k] / m;
                    kappa_rs_t[k] += (s_rs_t[i * p3 + k] - m * mrs[(r, s)] * mr[t]) / (m - 1.0);
                }
            }
        }
        kappa_r += &mr;
        kappa_rs += &mrs;
        per_obs_r.push(mr);
        per_obs_rs.push(mrs);
    }
    let nf = n as f64;
    kappa_r /= nf;
    kappa_rs /= nf;
    kappa_r_s /= nf;
    kappa_rst.iter_mut().for_each(|v| *v /= nf);
    kappa_rs_t.iter_mut().for_each(|v| *v /= nf);

    let se_of = |vals: &[Matrix]| -> Matrix {
        let mean = vals.iter().fold(Matrix::zeros(p, p), |a, v| a + v) / m;
        let var = vals.iter().fold(Matrix::zeros(p, p), |a, v| {
            let d = v - &mean;
            a + d.component_mul(&d)
        }) / (m - 1.0);
        var.map(|v| (v / m).sqrt())
    };
    let rep_r_s: Vec<Matrix> = rep_grads
        .iter()
        .map(|g| {
            Matrix::from_fn(p, p, |r, s| {
                (0..n).map(|i| (g[i * p + r] - per_obs_r[i][r]) * (g[i * p + s] - per_obs_r[i][s])).sum::<f64>() / nf
                    * m
                    / (m - 1.0)
            })
        })
        .collect();
    let kappa_r_s = SymMat::new(kappa_r_s)?;
    Ok(CumulantSet {
        p,
        n,
        m_reps,
        kappa_r,
        kappa_rs: SymMat::new(kappa_rs)?,
        kappa_r_s_inv: sym_inverse(&kappa_r_s)?,
        kappa_r_s,
        se_kappa_rs: se_of(&rep_rs),
        se_kappa_r_s: se_of(&rep_r_s),
        per_obs_r,
        per_obs_rs,
        kappa_rst,
        kappa_rs_t,
    })
}

/// One draw of the normalized scores `Z_r`, `Z_st` and the residual `Y_st`.
#[derive(Clone, Debug)]
pub struct ScoreSample {
    pub z_r: Vector,
    pub z_st: SymMat,
    pub y_st: SymMat,
}

/// Normalized scores for one dataset. Sums are centered with the Monte Carlo
/// per-observation means held in `cum`.
pub fn score_draw(model: &dyn Model, data: &DataSet, theta_star: &Vector, cum: &CumulantSet) -> Result<ScoreSample> {
    if data.n() != cum.n {
        return Err(FimError::DimensionMismatch {
            expected: cum.n,
            found: data.n(),
        });
    }
    let p = cum.p;
    let mut z_r = Vector::zeros(p);
    let mut z_st = Matrix::zeros(p, p);
    for i in 0..cum.n {
        let d = obs_derivs(model, theta_star, data, i, false)?;
        z_r += d.g - &cum.per_obs_r[i];
        z_st += d.h - &cum.per_obs_rs[i];
    }
    let scale = 1.0 / (cum.n as f64).sqrt();
    z_r *= scale;
    z_st *= scale;
    let reg = cum.regression();
    let fitted = &reg * &z_r;
    let y = Matrix::from_fn(p, p, |t, u| z_st[(t, u)] - fitted[t * p + u]);
    Ok(ScoreSample {
        z_r,
        z_st: SymMat::new(z_st)?,
        y_st: SymMat::new(y)?,
    })
}

/// Sample correlation of `Z_r` with `Y_st` over draws, as a `p × p²` matrix
/// (row `r`, column `s·p + t`). Entries with a degenerate `Y_st` are zero.
pub fn score_correlations(draws: &[ScoreSample]) -> Matrix {
    let Some(first) = draws.first() else {
        return Matrix::zeros(0, 0);
    };
    let p = first.z_r.len();
    Matrix::from_fn(p, p * p, |r, st| {
        let (s, t) = (st / p, st % p);
        let z: Vec<f64> = draws.iter().map(|d| d.z_r[r]).collect();
        let y: Vec<f64> = draws.iter().map(|d| d.y_st.get(s, t)).collect();
        let c = correlation(&z, &y);
        if c.is_finite() { c } else { 0.0 }
    })
}

/// Sizes for [`theorem1_gap_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GapCheckOptions {
    pub score_draws: usize,
    pub cumulant_reps: usize,
    pub reps_outer: usize,
    pub reps_target: usize,
    pub study: StudyOptions,
}

/// Both sides of the mean-squared-error gap: `n(M_H − M_F)` and `n·E(A²)`.
#[derive(Clone, Debug)]
pub struct GapCheck {
    pub n: usize,
    pub lhs: Matrix,
    pub lhs_se: Matrix,
    pub rhs: Matrix,
    pub rhs_se: Matrix,
    pub correlations: Matrix,
    pub cumulants: CumulantSet,
    pub discrepancy: DiscrepancyReport,
}

/// Compares the simulated gap `n(M_H − M_F)` with its leading-order
/// prediction `E(Σ κ̄^{r,t} κ̄^{s,u} Y_tu)²`.
pub fn theorem1_gap_check(model: &dyn Model, theta_star: &Vector, n: usize, opts: &GapCheckOptions, rng: &RngStream) -> Result<GapCheck> {
    if opts.score_draws < 2 {
        return Err(FimError::InvalidInput("score_draws must be at least 2".into()));
    }
    let cum = null_cumulants(model, theta_star, n, opts.cumulant_reps, &rng.substream(&[ROLE_CUMULANTS]))?;
    let p = cum.p;
    let inv = cum.kappa_r_s_inv.as_matrix().clone();
    let draws = par_map(opts.score_draws, |k| -> Result<ScoreSample> {
        let mut stream = rng.substream(&[ROLE_SCORES, k as u64]);
        let data = model.sample(theta_star, n, &mut stream)?;
        score_draw(model, &data, theta_star, &cum)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut sum = Matrix::zeros(p, p);
    let mut sum_sq = Matrix::zeros(p, p);
    for d in &draws {
        // √n·A_n = κ̄^{r,t} Y_tu κ̄^{u,s}
        let a = &inv * d.y_st.as_matrix() * &inv;
        let a2 = a.component_mul(&a);
        sum_sq += a2.component_mul(&a2);
        sum += a2;
    }
    let m = draws.len() as f64;
    let rhs = &sum / m;
    let rhs_se = ((sum_sq - rhs.component_mul(&rhs) * m) / (m - 1.0)).map(|v| (v.max(0.0) / m).sqrt());
    let disc = discrepancy_study_with(
        model,
        theta_star,
        n,
        opts.reps_outer,
        opts.reps_target,
        &rng.substream(&[ROLE_STUDY]),
        &opts.study,
    )?;
    let nf = n as f64;
    Ok(GapCheck {
        n,
        lhs: (disc.m_h.as_matrix() - disc.m_f.as_matrix()) * nf,
        lhs_se: &disc.se_diff * nf,
        rhs,
        rhs_se,
        correlations: score_correlations(&draws),
        cumulants: cum,
        discrepancy: disc,
    })
}

/// The averaged per-observation variance
/// `n⁻¹ Σ_i var[Σ κ̄^{r,t} κ̄^{s,u} (U_tu^i − κ_tu^i − κ̄_{tu,v} κ̄^{v,w} U_w^i)]`
/// for entry `(r, s)`, with a standard error over observations.
pub fn condition_a9_variance(
    model: &dyn Model,
    theta_star: &Vector,
    n: usize,
    reps: usize,
    entry: (usize, usize),
    rng: &RngStream,
) -> Result<(f64, f64)> {
    let cum = null_cumulants(model, theta_star, n, reps, &rng.substream(&[ROLE_CUMULANTS]))?;
    let p = cum.p;
    let (r, s) = entry;
    if r >= p || s >= p {
        return Err(FimError::InvalidInput(format!("entry ({r}, {s}) outside a {p}-parameter model")));
    }
    let inv = cum.kappa_r_s_inv.as_matrix();
    let reg = cum.regression();
    let values = par_map(reps, |k| -> Result<Vec<f64>> {
        let mut stream = rng.substream(&[ROLE_A9, k as u64]);
        let data = model.sample(theta_star, n, &mut stream)?;
        (0..n)
            .map(|i| {
                let d = obs_derivs(model, theta_star, &data, i, false)?;
                let fitted = &reg * &d.g;
                let mut v = 0.0;
                for t in 0..p {
                    for u in 0..p {
                        let w = d.h[(t, u)] - cum.per_obs_rs[i][(t, u)] - fitted[t * p + u];
                        v += inv[(r, t)] * inv[(s, u)] * w;
                    }
                }
                Ok(v)
            })
            .collect()
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let m = reps as f64;
    let per_obs_var: Vec<f64> = (0..n)
        .map(|i| {
            let mean = values.iter().map(|v| v[i]).sum::<f64>() / m;
            values.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / (m - 1.0)
        })
        .collect();
    let nf = n as f64;
    let mean = per_obs_var.iter().sum::<f64>() / nf;
    let se = if n > 1 {
        (per_obs_var.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0) / nf).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ExpFamilyModel, GaussianMeanModel, MixtureGaussianModel, SignalPlusNoiseModel};

    #[test]
    fn poisson_residual_vanishes() {
        // U_11 = x/θ², U_1 = 1 − x/θ: the regression removes Z_11 exactly.
        let m = ExpFamilyModel::poisson();
        let th = Vector::from_element(1, 2.5);
        let rng = RngStream::new(5, 0);
        let cum = null_cumulants(&m, &th, 30, 400, &rng).unwrap();
        assert!((cum.kappa_rs_t(0, 0, 0) * cum.kappa_r_s_inv.get(0, 0) + 1.0 / 2.5).abs() < 1e-10);
        let data = m.sample(&th, 30, &mut RngStream::new(5, 1)).unwrap();
        let s = score_draw(&m, &data, &th, &cum).unwrap();
        assert!(s.y_st.get(0, 0).abs() <= 1e-10);
    }

    #[test]
    fn gaussian_cumulants_are_exact() {
        let m = GaussianMeanModel::scalar(1.0).unwrap();
        let th = Vector::from_element(1, 0.3);
        let cum = null_cumulants(&m, &th, 10, 2000, &RngStream::new(2, 0)).unwrap();
        assert_eq!(cum.kappa_rs.get(0, 0), 1.0);
        assert_eq!(cum.se_kappa_rs[(0, 0)], 0.0);
        assert!((cum.kappa_r_s.get(0, 0) - 1.0).abs() < 5.0 * cum.se_kappa_r_s[(0, 0)]);
        assert!(cum.kappa_rst(0, 0, 0).abs() < 1e-6);
        assert!(cum.kappa_rs_t(0, 0, 0).abs() < 1e-12);
    }

    #[test]
    fn information_identity_holds_for_mixture() {
        let m = MixtureGaussianModel::known_scales(1.0, 1.0).unwrap();
        let th = Vector::from_vec(vec![0.5, 0.0, 4.0]);
        let cum = null_cumulants(&m, &th, 20, 400, &RngStream::new(8, 0)).unwrap();
        for r in 0..3 {
            for s in 0..3 {
                let d = cum.kappa_rs.get(r, s) - cum.kappa_r_s.get(r, s);
                let se = cum.se_kappa_rs[(r, s)].hypot(cum.se_kappa_r_s[(r, s)]);
                assert!(d.abs() < 5.0 * se + 1e-8, "({r},{s}) {d} vs {se}");
            }
        }
    }

    #[test]
    fn scores_are_centered_and_residual_uncorrelated() {
        let m = MixtureGaussianModel::known_scales(1.0, 1.0).unwrap();
        let th = Vector::from_vec(vec![0.5, 0.0, 4.0]);
        let cum = null_cumulants(&m, &th, 20, 300, &RngStream::new(3, 0)).unwrap();
        let draws: Vec<ScoreSample> = (0..300)
            .map(|k| {
                let data = m.sample(&th, 20, &mut RngStream::new(3, 100 + k)).unwrap();
                score_draw(&m, &data, &th, &cum).unwrap()
            })
            .collect();
        let corr = score_correlations(&draws);
        assert!(corr.amax() < 0.3, "{corr}");
        let mean0 = draws.iter().map(|d| d.z_r[0]).sum::<f64>() / 300.0;
        assert!(mean0.abs() < 0.3);
    }

    #[test]
    fn a9_variance_is_zero_for_poisson_and_positive_for_mixture() {
        let (v, _) = condition_a9_variance(&ExpFamilyModel::poisson(), &Vector::from_element(1, 3.0), 10, 200, (0, 0), &RngStream::new(1, 0)).unwrap();
        assert!(v < 1e-20);
        let m = MixtureGaussianModel::known_scales(1.0, 1.0).unwrap();
        let th = Vector::from_vec(vec![0.5, 0.0, 4.0]);
        let (v, se) = condition_a9_variance(&m, &th, 10, 200, (0, 0), &RngStream::new(1, 1)).unwrap();
        assert!(v > 0.0 && se >= 0.0);
    }

    #[test]
    fn spn_per_observation_cumulants_differ_across_observations() {
        let m = SignalPlusNoiseModel::default_four();
        let th = Vector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let cum = null_cumulants(&m, &th, 5, 50, &RngStream::new(4, 0)).unwrap();
        assert_eq!(cum.per_obs_rs.len(), 5);
        assert!((cum.per_obs_rs[0][(4, 4)] - cum.per_obs_rs[4][(4, 4)]).abs() > 1e-6);
    }

    #[test]
    fn dependent_models_are_rejected() {
        let m = crate::models::LinearStateSpaceModel::three_state_default();
        let r = null_cumulants(&m, &Vector::from_vec(vec![1.0, 1.0, 1.0]), 10, 10, &RngStream::new(0, 0));
        assert!(matches!(r, Err(FimError::NotIndependentData)));
    }
}
