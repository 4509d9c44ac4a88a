//! Numerical building blocks: dense symmetric matrices, finite differences and
//! reproducible random streams.

pub mod fd;
pub mod linalg;
pub mod rng;

pub use fd::{fd_gradient, fd_hessian, fd_jacobian, FdStep};
pub use linalg::{spectral_norm, sym_inverse, Matrix, SymMat, Vector};
pub use rng::RngStream;

use rayon::prelude::*;

/// Evaluates `f(0..count)` on the current rayon pool and returns results in index order.
pub fn par_map<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}
