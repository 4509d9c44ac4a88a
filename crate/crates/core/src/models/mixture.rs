//! Two-component univariate Gaussian mixture
//! `f(x, θ) = λ φ(x; μ1, σ1) + (1 − λ) φ(x; μ2, σ2)`.
//!
//! Two parametrizations are offered: known scales with `θ = [λ, μ1, μ2]`, and
//! free scales with `θ = [λ, μ1, σ1, μ2, σ2]`. Internally every quantity is
//! computed in the five-parameter space and then restricted.

use crate::error::{FimError, Result};
use crate::models::{check_dim, quantile, Bounds, DataSet, FimSource, Model};
use crate::numerics::linalg::{Matrix, SymMat, Vector};
use crate::numerics::rng::RngStream;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const LAMBDA_MIN: f64 = 1e-8;
const SCALE_MIN: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MixtureVariant {
    /// `θ = [λ, μ1, μ2]` with fixed component standard deviations.
    KnownScales { sigma1: f64, sigma2: f64 },
    /// `θ = [λ, μ1, σ1, μ2, σ2]`.
    FreeScales,
}

#[derive(Clone, Debug)]
pub struct MixtureGaussianModel {
    variant: MixtureVariant,
    /// Grid spacing of the expected-information quadrature, as a fraction of the smaller σ.
    quadrature_step: f64,
    /// Half-width of the quadrature range in units of each component's σ.
    quadrature_halfwidth: f64,
}

/// Full-space coordinates: λ, μ1, σ1, μ2, σ2.
type Full = [f64; 5];

struct PointTerms {
    log_f: f64,
    /// Gradient of log f.
    score: Full,
    /// Hessian of log f.
    hess: [[f64; 5]; 5],
}

impl MixtureGaussianModel {
    /// Known-scale variant, `θ = [λ, μ1, μ2]`.
    pub fn known_scales(sigma1: f64, sigma2: f64) -> Result<Self> {
        if !(sigma1 > 0.0 && sigma2 > 0.0 && sigma1.is_finite() && sigma2.is_finite()) {
            return Err(FimError::InvalidInput("mixture scales must be positive".into()));
        }
        Ok(MixtureGaussianModel {
            variant: MixtureVariant::KnownScales { sigma1, sigma2 },
            quadrature_step: 1.0 / 40.0,
            quadrature_halfwidth: 12.0,
        })
    }

    /// Free-scale variant, `θ = [λ, μ1, σ1, μ2, σ2]`.
    pub fn free_scales() -> Self {
        MixtureGaussianModel {
            variant: MixtureVariant::FreeScales,
            quadrature_step: 1.0 / 40.0,
            quadrature_halfwidth: 12.0,
        }
    }

    pub fn variant(&self) -> MixtureVariant {
        self.variant
    }

    fn free_indices(&self) -> &'static [usize] {
        match self.variant {
            MixtureVariant::KnownScales { .. } => &[0, 1, 3],
            MixtureVariant::FreeScales => &[0, 1, 2, 3, 4],
        }
    }

    fn full(&self, theta: &Vector) -> Result<Full> {
        check_dim(theta, self.dim())?;
        let f = match self.variant {
            MixtureVariant::KnownScales { sigma1, sigma2 } => [theta[0], theta[1], sigma1, theta[2], sigma2],
            MixtureVariant::FreeScales => [theta[0], theta[1], theta[2], theta[3], theta[4]],
        };
        if !(f[0] > 0.0 && f[0] < 1.0) {
            return Err(FimError::InvalidInput(format!("mixing weight {} outside (0, 1)", f[0])));
        }
        if !(f[2] > 0.0 && f[4] > 0.0) {
            return Err(FimError::InvalidInput("component scales must be positive".into()));
        }
        Ok(f)
    }

    fn point(full: &Full, x: f64, with_hessian: bool) -> PointTerms {
        let [lam, m1, s1, m2, s2] = *full;
        let d1 = x - m1;
        let d2 = x - m2;
        let a1 = lam.ln() - LN_SQRT_2PI - s1.ln() - 0.5 * d1 * d1 / (s1 * s1);
        let a2 = (1.0 - lam).ln() - LN_SQRT_2PI - s2.ln() - 0.5 * d2 * d2 / (s2 * s2);
        let top = a1.max(a2);
        let log_f = top + ((a1 - top).exp() + (a2 - top).exp()).ln();
        let w1 = (a1 - log_f).exp();
        let w2 = (a2 - log_f).exp();

        // Gradients of log(λ φ1) and log((1−λ) φ2) in full coordinates.
        let g1 = [1.0 / lam, d1 / (s1 * s1), d1 * d1 / (s1 * s1 * s1) - 1.0 / s1, 0.0, 0.0];
        let g2 = [-1.0 / (1.0 - lam), 0.0, 0.0, d2 / (s2 * s2), d2 * d2 / (s2 * s2 * s2) - 1.0 / s2];
        let mut score = [0.0; 5];
        for k in 0..5 {
            score[k] = w1 * g1[k] + w2 * g2[k];
        }
        let mut hess = [[0.0; 5]; 5];
        if with_hessian {
            let mut h1 = [[0.0; 5]; 5];
            h1[0][0] = -1.0 / (lam * lam);
            h1[1][1] = -1.0 / (s1 * s1);
            h1[1][2] = -2.0 * d1 / (s1 * s1 * s1);
            h1[2][1] = h1[1][2];
            h1[2][2] = -3.0 * d1 * d1 / (s1 * s1 * s1 * s1) + 1.0 / (s1 * s1);
            let mut h2 = [[0.0; 5]; 5];
            h2[0][0] = -1.0 / ((1.0 - lam) * (1.0 - lam));
            h2[3][3] = -1.0 / (s2 * s2);
            h2[3][4] = -2.0 * d2 / (s2 * s2 * s2);
            h2[4][3] = h2[3][4];
            h2[4][4] = -3.0 * d2 * d2 / (s2 * s2 * s2 * s2) + 1.0 / (s2 * s2);
            for r in 0..5 {
                for s in 0..5 {
                    hess[r][s] = w1 * (h1[r][s] + g1[r] * g1[s]) + w2 * (h2[r][s] + g2[r] * g2[s])
                        - score[r] * score[s];
                }
            }
        }
        PointTerms { log_f, score, hess }
    }

    fn checked_point(full: &Full, x: f64, i: usize, with_hessian: bool) -> Result<PointTerms> {
        let t = Self::point(full, x, with_hessian);
        if !t.log_f.is_finite() || t.log_f < f64::MIN_POSITIVE.ln() {
            return Err(FimError::DegenerateMixture { index: i });
        }
        Ok(t)
    }

    /// Mixture density at a single point.
    pub fn density(&self, theta: &Vector, x: f64) -> Result<f64> {
        let full = self.full(theta)?;
        Ok(Self::point(&full, x, false).log_f.exp())
    }

    fn restrict_vec(&self, v: &Full) -> Vector {
        let idx = self.free_indices();
        Vector::from_iterator(idx.len(), idx.iter().map(|&k| v[k]))
    }

    fn restrict_mat(&self, m: &[[f64; 5]; 5]) -> Matrix {
        let idx = self.free_indices();
        Matrix::from_fn(idx.len(), idx.len(), |r, s| m[idx[r]][idx[s]])
    }

    /// Quadrature grid covering both components; returns (points, spacing).
    fn quadrature_grid(&self, full: &Full) -> (Vec<f64>, f64) {
        let [_, m1, s1, m2, s2] = *full;
        let hw = self.quadrature_halfwidth;
        let lo = (m1 - hw * s1).min(m2 - hw * s2);
        let hi = (m1 + hw * s1).max(m2 + hw * s2);
        let step = self.quadrature_step * s1.min(s2);
        let count = ((hi - lo) / step).ceil() as usize + 1;
        let points = (0..count).map(|k| lo + k as f64 * step).collect();
        (points, step)
    }

    /// Per-observation expected information by trapezoidal quadrature of the
    /// score outer product against the density.
    pub fn expected_fim_per_obs(&self, theta: &Vector) -> Result<SymMat> {
        let full = self.full(theta)?;
        let (points, step) = self.quadrature_grid(&full);
        let mut acc = [[0.0; 5]; 5];
        for &x in &points {
            let t = Self::point(&full, x, false);
            let w = t.log_f.exp() * step;
            if w == 0.0 {
                continue;
            }
            for r in 0..5 {
                for s in r..5 {
                    acc[r][s] += w * t.score[r] * t.score[s];
                }
            }
        }
        for r in 0..5 {
            for s in 0..r {
                acc[r][s] = acc[s][r];
            }
        }
        SymMat::new(self.restrict_mat(&acc))
    }

    /// Integral of the density over the quadrature grid (≈ 1).
    pub fn density_mass(&self, theta: &Vector) -> Result<f64> {
        let full = self.full(theta)?;
        let (points, step) = self.quadrature_grid(&full);
        Ok(points.iter().map(|&x| Self::point(&full, x, false).log_f.exp()).sum::<f64>() * step)
    }
}

impl Model for MixtureGaussianModel {
    fn name(&self) -> &str {
        match self.variant {
            MixtureVariant::KnownScales { .. } => "mixture_known_scales",
            MixtureVariant::FreeScales => "mixture_free_scales",
        }
    }

    fn dim(&self) -> usize {
        self.free_indices().len()
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn sample(&self, theta: &Vector, n: usize, rng: &mut RngStream) -> Result<DataSet> {
        let [lam, m1, s1, m2, s2] = self.full(theta)?;
        let values = (0..n)
            .map(|_| {
                if rng.draw_uniform() < lam {
                    m1 + s1 * rng.draw_normal()
                } else {
                    m2 + s2 * rng.draw_normal()
                }
            })
            .collect();
        DataSet::scalar(values)
    }

    fn obs_neg_log_lik(&self, theta: &Vector, data: &DataSet, i: usize) -> Result<f64> {
        let full = self.full(theta)?;
        Ok(-Self::checked_point(&full, data.obs(i)[0], i, false)?.log_f)
    }

    fn obs_grad(&self, theta: &Vector, data: &DataSet, i: usize) -> Result<Vector> {
        let full = self.full(theta)?;
        let t = Self::checked_point(&full, data.obs(i)[0], i, false)?;
        Ok(-self.restrict_vec(&t.score))
    }

    fn obs_hessian(&self, theta: &Vector, data: &DataSet, i: usize) -> Result<SymMat> {
        let full = self.full(theta)?;
        let t = Self::checked_point(&full, data.obs(i)[0], i, true)?;
        SymMat::new(-self.restrict_mat(&t.hess))
    }

    fn neg_log_lik(&self, theta: &Vector, data: &DataSet) -> Result<f64> {
        let full = self.full(theta)?;
        let mut total = 0.0;
        for (i, &x) in data.values().iter().enumerate() {
            total -= Self::checked_point(&full, x, i, false)?.log_f;
        }
        Ok(total)
    }

    fn grad(&self, theta: &Vector, data: &DataSet) -> Result<Vector> {
        let full = self.full(theta)?;
        let mut acc = [0.0; 5];
        for (i, &x) in data.values().iter().enumerate() {
            let t = Self::checked_point(&full, x, i, false)?;
            for k in 0..5 {
                acc[k] -= t.score[k];
            }
        }
        Ok(self.restrict_vec(&acc))
    }

    fn hessian(&self, theta: &Vector, data: &DataSet) -> Result<SymMat> {
        let full = self.full(theta)?;
        let mut acc = [[0.0; 5]; 5];
        for (i, &x) in data.values().iter().enumerate() {
            let t = Self::checked_point(&full, x, i, true)?;
            for r in 0..5 {
                for s in 0..5 {
                    acc[r][s] -= t.hess[r][s];
                }
            }
        }
        SymMat::new(self.restrict_mat(&acc))
    }

    fn expected_fim(&self, theta: &Vector, n: usize) -> Result<Option<(SymMat, FimSource)>> {
        Ok(Some((self.expected_fim_per_obs(theta)?.scale(n as f64), FimSource::Quadrature)))
    }

    fn bounds(&self) -> Bounds {
        let p = self.dim();
        let mut b = Bounds::unbounded(p);
        b.lower[0] = LAMBDA_MIN;
        b.upper[0] = 1.0 - LAMBDA_MIN;
        if let MixtureVariant::FreeScales = self.variant {
            b.lower[2] = SCALE_MIN;
            b.lower[4] = SCALE_MIN;
        }
        b
    }

    fn initial_guess(&self, data: &DataSet) -> Vector {
        let mut xs = data.values().to_vec();
        xs.sort_by(f64::total_cmp);
        let q1 = quantile(&xs, 0.25);
        let q3 = quantile(&xs, 0.75);
        match self.variant {
            MixtureVariant::KnownScales { .. } => Vector::from_vec(vec![0.5, q1, q3]),
            MixtureVariant::FreeScales => {
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-3);
                Vector::from_vec(vec![0.5, q1, sd, q3, sd])
            }
        }
    }

    fn canonicalize(&self, theta: &mut Vector) {
        match self.variant {
            MixtureVariant::KnownScales { sigma1, sigma2 } => {
                // Components are exchangeable only when their scales agree.
                if sigma1 == sigma2 && theta[1] > theta[2] {
                    theta.swap_rows(1, 2);
                    theta[0] = 1.0 - theta[0];
                }
            }
            MixtureVariant::FreeScales => {
                if theta[1] > theta[3] {
                    theta.swap_rows(1, 3);
                    theta.swap_rows(2, 4);
                    theta[0] = 1.0 - theta[0];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd::{fd_gradient, fd_hessian, FdStep};

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn density_reference_values() {
        let m = MixtureGaussianModel::known_scales(1.0, 1.0).unwrap();
        assert!((m.density(&v(&[1.0 - 1e-12, 0.0, 3.0]), 0.0).unwrap() - 0.398942).abs() < 1e-6);
        assert!((m.density(&v(&[0.5, 0.0, 0.0]), 0.0).unwrap() - 0.398942).abs() < 1e-6);
        // Average of φ(0) and φ(−4).
        let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let expect = 0.5 * phi(0.0) + 0.5 * phi(4.0);
        let got = m.density(&v(&[0.5, 0.0, 4.0]), 0.0).unwrap();
        assert!((got - expect).abs() < 1e-14);
        assert!((got - 0.199538).abs() < 1e-6);
    }

    #[test]
    fn density_integrates_to_one() {
        let m = MixtureGaussianModel::known_scales(1.0, 2.5).unwrap();
        assert!((m.density_mass(&v(&[0.3, -1.0, 4.0])).unwrap() - 1.0).abs() < 1e-6);
        let b = MixtureGaussianModel::free_scales();
        assert!((b.density_mass(&v(&[0.2, 0.0, 1.0, 4.0, 9.0])).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = RngStream::new(17, 0);
        for model in [MixtureGaussianModel::known_scales(1.0, 1.0).unwrap(), MixtureGaussianModel::free_scales()] {
            for _ in 0..10 {
                let theta = match model.variant {
                    MixtureVariant::KnownScales { .. } => v(&[
                        rng.draw_uniform_range(0.1, 0.9),
                        rng.draw_uniform_range(-1.0, 1.0),
                        rng.draw_uniform_range(1.0, 4.0),
                    ]),
                    MixtureVariant::FreeScales => v(&[
                        rng.draw_uniform_range(0.1, 0.9),
                        rng.draw_uniform_range(-1.0, 1.0),
                        rng.draw_uniform_range(0.5, 2.0),
                        rng.draw_uniform_range(1.0, 4.0),
                        rng.draw_uniform_range(0.5, 3.0),
                    ]),
                };
                let data = model.sample(&theta, 20, &mut rng).unwrap();
                let g = model.grad(&theta, &data).unwrap();
                let gf = fd_gradient(|t| model.neg_log_lik(t, &data), &theta, FdStep::Default).unwrap();
                assert!((&g - &gf).amax() <= 1e-5 * g.amax().max(1.0));
                let h = model.hessian(&theta, &data).unwrap();
                let hf = fd_hessian(|t| model.neg_log_lik(t, &data), &theta, FdStep::Default).unwrap();
                let scale = h.as_matrix().amax().max(1.0);
                assert!((h.as_matrix() - hf.as_matrix()).amax() <= 1e-4 * scale);
            }
        }
    }

    #[test]
    fn obs_terms_sum_to_whole_data_terms() {
        let m = MixtureGaussianModel::known_scales(1.0, 1.0).unwrap();
        let theta = v(&[0.4, 0.1, 2.0]);
        let data = m.sample(&theta, 15, &mut RngStream::new(1, 1)).unwrap();
        let mut g = Vector::zeros(3);
        let mut h = Matrix::zeros(3, 3);
        let mut f = 0.0;
        for i in 0..data.n() {
            f += m.obs_neg_log_lik(&theta, &data, i).unwrap();
            g += m.obs_grad(&theta, &data, i).unwrap();
            h += m.obs_hessian(&theta, &data, i).unwrap().as_matrix();
        }
        assert!((f - m.neg_log_lik(&theta, &data).unwrap()).abs() < 1e-10);
        assert!((g - m.grad(&theta, &data).unwrap()).amax() < 1e-10);
        assert!((h - m.hessian(&theta, &data).unwrap().into_matrix()).amax() < 1e-10);
    }

    #[test]
    fn quadrature_fim_agrees_with_hessian_average() {
        let m = MixtureGaussianModel::known_scales(1.0, 1.0).unwrap();
        let theta = v(&[0.5, 0.0, 2.0]);
        let quad = m.expected_fim_per_obs(&theta).unwrap();
        let mut rng = RngStream::new(8, 8);
        let data = m.sample(&theta, 200_000, &mut rng).unwrap();
        let avg = m.hessian(&theta, &data).unwrap().scale(1.0 / 200_000.0);
        let diff = (quad.as_matrix() - avg.as_matrix()).amax();
        assert!(diff < 0.01, "quadrature {quad:?} vs average {avg:?}");
        assert!(quad.min_eigenvalue() > 0.0);
        let (f100, src) = m.expected_fim(&theta, 100).unwrap().unwrap();
        assert_eq!(src, FimSource::Quadrature);
        assert!((f100.as_matrix() - quad.as_matrix() * 100.0).amax() < 1e-9);
    }

    #[test]
    fn degenerate_point_is_reported() {
        let m = MixtureGaussianModel::known_scales(1e-3, 1e-3).unwrap();
        let data = DataSet::scalar(vec![0.0, 500.0]).unwrap();
        let err = m.neg_log_lik(&v(&[0.5, 0.0, 0.0]), &data).unwrap_err();
        assert_eq!(err, FimError::DegenerateMixture { index: 1 });
    }

    #[test]
    fn sampler_collapses_to_first_component() {
        let m = MixtureGaussianModel::known_scales(1.0, 1.0).unwrap();
        let data = m.sample(&v(&[1.0 - 1e-12, 0.7, 10.0]), 100_000, &mut RngStream::new(4, 4)).unwrap();
        let mean = data.values().iter().sum::<f64>() / 1e5;
        assert!((mean - 0.7).abs() < 0.02);
    }

    #[test]
    fn canonical_labelling() {
        let m = MixtureGaussianModel::known_scales(1.0, 1.0).unwrap();
        let mut t = v(&[0.3, 4.0, 0.0]);
        m.canonicalize(&mut t);
        assert_eq!(t, v(&[0.7, 0.0, 4.0]));
        let unequal = MixtureGaussianModel::known_scales(1.0, 2.0).unwrap();
        let mut u = v(&[0.3, 4.0, 0.0]);
        unequal.canonicalize(&mut u);
        assert_eq!(u, v(&[0.3, 4.0, 0.0]));
        let b = MixtureGaussianModel::free_scales();
        let mut w = v(&[0.2, 4.0, 9.0, 0.0, 1.0]);
        b.canonicalize(&mut w);
        assert_eq!(w, v(&[0.8, 0.0, 1.0, 4.0, 9.0]));
    }
}
