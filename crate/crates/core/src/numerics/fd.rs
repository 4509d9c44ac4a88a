//! Central finite differences, used as oracles for analytic derivatives and as
//! the Hessian path for likelihoods without closed-form second derivatives.

use crate::error::{FimError, Result};
use crate::numerics::linalg::{Matrix, SymMat, Vector};

/// Step-size rule for a finite-difference probe along coordinate `j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FdStep {
    /// `cbrt(ε)·max(1, |θ_j|)` for first derivatives, `ε^{1/4}·max(1, |θ_j|)` for second.
    Default,
    /// The same step `h` on every coordinate.
    Absolute(f64),
    /// `h·max(1, |θ_j|)`.
    Relative(f64),
}

impl FdStep {
    fn step(self, x: f64, order: u32) -> Result<f64> {
        let scale = x.abs().max(1.0);
        let h = match self {
            FdStep::Default if order == 1 => f64::EPSILON.cbrt() * scale,
            FdStep::Default => f64::EPSILON.powf(0.25) * scale,
            FdStep::Absolute(h) => h,
            FdStep::Relative(h) => h * scale,
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(FimError::InvalidInput(format!("finite-difference step {h} must be positive")));
        }
        Ok(h)
    }
}

fn probe<F: FnMut(&Vector) -> Result<f64>>(f: &mut F, x: &Vector) -> Result<f64> {
    let v = f(x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FimError::NonFiniteEvaluation(format!("function value {v} at finite-difference probe")))
    }
}

/// Central-difference gradient of a scalar field.
pub fn fd_gradient<F>(mut f: F, theta: &Vector, step: FdStep) -> Result<Vector>
where
    F: FnMut(&Vector) -> Result<f64>,
{
    let p = theta.len();
    let mut g = Vector::zeros(p);
    let mut x = theta.clone();
    for j in 0..p {
        let h = step.step(theta[j], 1)?;
        x[j] = theta[j] + h;
        let fp = probe(&mut f, &x)?;
        x[j] = theta[j] - h;
        let fm = probe(&mut f, &x)?;
        x[j] = theta[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Hessian from function values, symmetrized.
pub fn fd_hessian<F>(mut f: F, theta: &Vector, step: FdStep) -> Result<SymMat>
where
    F: FnMut(&Vector) -> Result<f64>,
{
    let p = theta.len();
    let hs: Vec<f64> = (0..p).map(|j| step.step(theta[j], 2)).collect::<Result<_>>()?;
    let f0 = probe(&mut f, theta)?;
    let mut out = Matrix::zeros(p, p);
    let mut x = theta.clone();
    for j in 0..p {
        let h = hs[j];
        x[j] = theta[j] + h;
        let fp = probe(&mut f, &x)?;
        x[j] = theta[j] - h;
        let fm = probe(&mut f, &x)?;
        x[j] = theta[j];
        out[(j, j)] = (fp - 2.0 * f0 + fm) / (h * h);
    }
    for j in 0..p {
        for k in (j + 1)..p {
            let (hj, hk) = (hs[j], hs[k]);
            let mut corner = |sj: f64, sk: f64, x: &mut Vector| -> Result<f64> {
                x[j] = theta[j] + sj * hj;
                x[k] = theta[k] + sk * hk;
                let v = probe(&mut f, x);
                x[j] = theta[j];
                x[k] = theta[k];
                v
            };
            let fpp = corner(1.0, 1.0, &mut x)?;
            let fpm = corner(1.0, -1.0, &mut x)?;
            let fmp = corner(-1.0, 1.0, &mut x)?;
            let fmm = corner(-1.0, -1.0, &mut x)?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hj * hk);
            out[(j, k)] = v;
            out[(k, j)] = v;
        }
    }
    SymMat::new(out)
}

/// Central-difference Jacobian of a vector field; column `j` is `∂g/∂θ_j`.
pub fn fd_jacobian<G>(mut g: G, theta: &Vector, step: FdStep) -> Result<Matrix>
where
    G: FnMut(&Vector) -> Result<Vector>,
{
    let p = theta.len();
    let mut x = theta.clone();
    let mut cols = Vec::with_capacity(p);
    for j in 0..p {
        let h = step.step(theta[j], 1)?;
        x[j] = theta[j] + h;
        let gp = g(&x)?;
        x[j] = theta[j] - h;
        let gm = g(&x)?;
        x[j] = theta[j];
        if gp.iter().chain(gm.iter()).any(|v| !v.is_finite()) {
            return Err(FimError::NonFiniteEvaluation("vector field at finite-difference probe".into()));
        }
        cols.push((gp - gm) / (2.0 * h));
    }
    Ok(Matrix::from_columns(&cols))
}
