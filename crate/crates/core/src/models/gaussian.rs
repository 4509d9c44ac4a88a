//! Multivariate Gaussian with unknown mean and known precision `B`:
//! `l_i(θ) = ½ (x_i − θ)ᵀ B (x_i − θ) + const`.
//!
//! Its log-likelihood is exactly quadratic, so the Hessian `n·B` does not
//! depend on the data. Useful as a reference case for the estimators.

use crate::error::{FimError, Result};
use crate::models::{check_dim, DataSet, FimSource, Model};
use crate::numerics::linalg::{sym_inverse, Matrix, SymMat, Vector};
use crate::numerics::rng::RngStream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug)]
pub struct GaussianMeanModel {
    precision: SymMat,
    cov_sqrt: Matrix,
    log_det_precision: f64,
}

impl GaussianMeanModel {
    pub fn new(precision: SymMat) -> Result<Self> {
        let cov = sym_inverse(&precision)?;
        let log_det_precision = precision.log_det()?;
        Ok(GaussianMeanModel {
            cov_sqrt: cov.psd_sqrt(),
            precision,
            log_det_precision,
        })
    }

    /// Scalar model with variance `sigma2`.
    pub fn scalar(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(FimError::InvalidInput("variance must be positive".into()));
        }
        Self::new(SymMat::from_diagonal(&[1.0 / sigma2]))
    }

    pub fn precision(&self) -> &SymMat {
        &self.precision
    }

    fn residual(&self, theta: &Vector, x: &[f64]) -> Vector {
        Vector::from_iterator(theta.len(), (0..theta.len()).map(|j| x[j] - theta[j]))
    }
}

impl Model for GaussianMeanModel {
    fn name(&self) -> &str {
        "gaussian_mean"
    }

    fn dim(&self) -> usize {
        self.precision.dim()
    }

    fn obs_dim(&self) -> usize {
        self.precision.dim()
    }

    fn sample(&self, theta: &Vector, n: usize, rng: &mut RngStream) -> Result<DataSet> {
        check_dim(theta, self.dim())?;
        let p = self.dim();
        let mut values = Vec::with_capacity(n * p);
        for _ in 0..n {
            let z = Vector::from_fn(p, |_, _| rng.draw_normal());
            let x = theta + &self.cov_sqrt * z;
            values.extend(x.iter());
        }
        DataSet::new(p, values)
    }

    fn obs_neg_log_lik(&self, theta: &Vector, data: &DataSet, i: usize) -> Result<f64> {
        check_dim(theta, self.dim())?;
        let r = self.residual(theta, data.obs(i));
        let quad = r.dot(&(self.precision.as_matrix() * &r));
        Ok(0.5 * (quad + self.dim() as f64 * LN_2PI - self.log_det_precision))
    }

    fn obs_grad(&self, theta: &Vector, data: &DataSet, i: usize) -> Result<Vector> {
        check_dim(theta, self.dim())?;
        let r = self.residual(theta, data.obs(i));
        Ok(-(self.precision.as_matrix() * r))
    }

    fn obs_hessian(&self, theta: &Vector, _data: &DataSet, _i: usize) -> Result<SymMat> {
        check_dim(theta, self.dim())?;
        Ok(self.precision.clone())
    }

    fn expected_fim(&self, theta: &Vector, n: usize) -> Result<Option<(SymMat, FimSource)>> {
        check_dim(theta, self.dim())?;
        Ok(Some((self.precision.scale(n as f64), FimSource::Analytic)))
    }

    fn initial_guess(&self, data: &DataSet) -> Vector {
        let p = self.dim();
        let n = data.n() as f64;
        Vector::from_fn(p, |j, _| (0..data.n()).map(|i| data.obs(i)[j]).sum::<f64>() / n + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd::{fd_gradient, FdStep};

    #[test]
    fn hessian_is_constant_and_gradient_matches() {
        let b = SymMat::from_row_slice(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let m = GaussianMeanModel::new(b.clone()).unwrap();
        let theta = Vector::from_vec(vec![0.2, -0.3]);
        let data = m.sample(&theta, 7, &mut RngStream::new(1, 1)).unwrap();
        assert_eq!(m.hessian(&theta, &data).unwrap(), b.scale(7.0));
        let g = m.grad(&theta, &data).unwrap();
        let gf = fd_gradient(|t| m.neg_log_lik(t, &data), &theta, FdStep::Default).unwrap();
        assert!((g - gf).amax() < 1e-6);
    }
}
