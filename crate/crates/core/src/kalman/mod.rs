//! Filtering and smoothing for affine-Gaussian models.
//!
//! Four variants are provided: {sequential, parallel} × {standard,
//! square-root}. The parallel variants build one associative element per
//! time step and combine them with [`crate::scan`]; the sequential variants
//! are the classical recursions and serve as oracles for the parallel ones.
//!
//! Model and result containers carry a [`Mode`] tag: in
//! [`Mode::Standard`] the `noise`/`covs` fields hold covariances, in
//! [`Mode::SquareRoot`] they hold lower-triangular Cholesky factors.

mod filter;
mod likelihood;
mod smoother;

pub use filter::{
    combine_filter_sqrt, combine_filter_std, filter_element_identity, parallel_filter,
    sequential_filter, sqrt_filter_element, std_filter_element, SqrtFilterElement,
    StdFilterElement,
};
pub use likelihood::{filter_log_likelihood, log_likelihood_from_filter};
pub use smoother::{
    combine_smoother_sqrt, combine_smoother_std, parallel_smoother, sequential_smoother,
    smoother_element_identity, sqrt_smoother_element, std_smoother_element, SmootherElement,
};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::real::Real;
use crate::scan::ScanOptions;

/// Covariance representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Full covariance matrices.
    Standard,
    /// Lower-triangular Cholesky factors.
    SquareRoot,
}

/// Sequential recursion or parallel associative scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    Parallel(ScanOptions),
}

impl Execution {
    pub fn parallel() -> Self {
        Execution::Parallel(ScanOptions::default())
    }

    pub fn is_parallel(&self) -> bool {
        matches!(self, Execution::Parallel(_))
    }
}

/// `x ↦ matrix·x + offset + noise`, with `noise ~ N(0, Σ)`.
///
/// `noise` is `Σ` in standard mode and its lower Cholesky factor in
/// square-root mode.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap<T: Real> {
    pub matrix: DMatrix<T>,
    pub offset: DVector<T>,
    pub noise: DMatrix<T>,
}

impl<T: Real> AffineMap<T> {
    pub fn new(matrix: DMatrix<T>, offset: DVector<T>, noise: DMatrix<T>) -> Self {
        AffineMap {
            matrix,
            offset,
            noise,
        }
    }

    pub fn apply_mean(&self, x: &DVector<T>) -> DVector<T> {
        &self.matrix * x + &self.offset
    }

    fn convert(&self, from: Mode, to: Mode) -> Result<AffineMap<T>> {
        Ok(AffineMap {
            matrix: self.matrix.clone(),
            offset: self.offset.clone(),
            noise: convert_cov(&self.noise, from, to)?,
        })
    }
}

fn convert_cov<T: Real>(m: &DMatrix<T>, from: Mode, to: Mode) -> Result<DMatrix<T>> {
    match (from, to) {
        (Mode::Standard, Mode::SquareRoot) => cholesky_or_tria(m),
        (Mode::SquareRoot, Mode::Standard) => Ok(linalg::square(m)),
        _ => Ok(m.clone()),
    }
}

// Positive semidefinite covariances (e.g. exact zeros) have no Cholesky
// factor; fall back to the eigen route, which accepts them.
pub(crate) fn cholesky_or_tria<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let sym = linalg::symmetrize(m);
    match linalg::cholesky(&sym) {
        Ok(l) => Ok(l),
        Err(_) => {
            let (vals, vecs) = linalg::symmetric_eigen(&sym);
            let scale = vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            if vals.iter().any(|&v| v < -T::from_f64(1e3) * T::epsilon() * scale) {
                return Err(Error::NotPositiveDefinite { index: 0 });
            }
            let root = DVector::from_fn(vals.len(), |i, _| vals[i].max(T::zero()).sqrt());
            Ok(linalg::tria(&(vecs * DMatrix::from_diagonal(&root))))
        }
    }
}

/// Affine-Gaussian state-space model
/// `x_k = F_{k−1} x_{k−1} + c_{k−1} + q_{k−1}`, `y_k = H_k x_k + d_k + v_k`.
///
/// `transitions[k]` maps `x_k → x_{k+1}` and `observations[k]` observes
/// `x_{k+1}`, for `k = 0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineModel<T: Real> {
    pub mode: Mode,
    pub prior_mean: DVector<T>,
    /// `P₀` (standard) or `N₀` (square-root).
    pub prior_cov: DMatrix<T>,
    pub transitions: Vec<AffineMap<T>>,
    pub observations: Vec<AffineMap<T>>,
}

impl<T: Real> AffineModel<T> {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.first().map_or(0, |o| o.matrix.nrows())
    }

    /// Time-invariant model repeated over `n` steps.
    pub fn time_invariant(
        mode: Mode,
        prior_mean: DVector<T>,
        prior_cov: DMatrix<T>,
        transition: AffineMap<T>,
        observation: AffineMap<T>,
        n: usize,
    ) -> Self {
        AffineModel {
            mode,
            prior_mean,
            prior_cov,
            transitions: vec![transition; n],
            observations: vec![observation; n],
        }
    }

    /// Same model in the other covariance representation.
    pub fn to_mode(&self, mode: Mode) -> Result<AffineModel<T>> {
        if mode == self.mode {
            return Ok(self.clone());
        }
        Ok(AffineModel {
            mode,
            prior_mean: self.prior_mean.clone(),
            prior_cov: convert_cov(&self.prior_cov, self.mode, mode)?,
            transitions: self
                .transitions
                .iter()
                .map(|t| t.convert(self.mode, mode))
                .collect::<Result<_>>()?,
            observations: self
                .observations
                .iter()
                .map(|o| o.convert(self.mode, mode))
                .collect::<Result<_>>()?,
        })
    }

    pub(crate) fn validate(&self, ys: &[DVector<T>]) -> Result<()> {
        let nx = self.state_dim();
        if self.observations.len() != self.transitions.len() || ys.len() != self.transitions.len() {
            return Err(Error::Dimension(format!(
                "{} transitions, {} observation maps, {} measurements",
                self.transitions.len(),
                self.observations.len(),
                ys.len()
            )));
        }
        if self.prior_cov.shape() != (nx, nx) {
            return Err(Error::Dimension("prior covariance".into()));
        }
        for (k, (t, o)) in self.transitions.iter().zip(&self.observations).enumerate() {
            let ny = o.matrix.nrows();
            if t.matrix.shape() != (nx, nx)
                || t.offset.len() != nx
                || t.noise.shape() != (nx, nx)
                || o.matrix.ncols() != nx
                || o.offset.len() != ny
                || o.noise.shape() != (ny, ny)
                || ys[k].len() != ny
            {
                return Err(Error::Dimension(format!("inconsistent shapes at step {}", k + 1)));
            }
        }
        Ok(())
    }
}

/// Gaussian marginals `N(m_k, P_k)` for `k = 0..=n`.
///
/// `covs` holds `P_k` (standard) or lower-triangular `N_k` (square-root).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSequence<T: Real> {
    pub mode: Mode,
    pub means: Vec<DVector<T>>,
    pub covs: Vec<DMatrix<T>>,
}

impl<T: Real> GaussianSequence<T> {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Full covariance at index `k`, squaring factors if needed.
    pub fn covariance(&self, k: usize) -> DMatrix<T> {
        match self.mode {
            Mode::Standard => self.covs[k].clone(),
            Mode::SquareRoot => linalg::square(&self.covs[k]),
        }
    }

    /// Lower Cholesky factor at index `k`.
    pub fn factor(&self, k: usize) -> Result<DMatrix<T>> {
        match self.mode {
            Mode::Standard => cholesky_or_tria(&self.covs[k]),
            Mode::SquareRoot => Ok(self.covs[k].clone()),
        }
    }

    pub fn to_mode(&self, mode: Mode) -> Result<GaussianSequence<T>> {
        if mode == self.mode {
            return Ok(self.clone());
        }
        Ok(GaussianSequence {
            mode,
            means: self.means.clone(),
            covs: self
                .covs
                .iter()
                .map(|c| convert_cov(c, self.mode, mode))
                .collect::<Result<_>>()?,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.means.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && self.covs.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// Filtering marginals `k = 0..=n` (index 0 is the prior).
pub fn filter<T: Real>(
    model: &AffineModel<T>,
    ys: &[DVector<T>],
    exec: Execution,
) -> Result<GaussianSequence<T>> {
    match exec {
        Execution::Sequential => sequential_filter(model, ys),
        Execution::Parallel(opts) => parallel_filter(model, ys, opts),
    }
}

/// Smoothing marginals `k = 0..=n` from the output of [`filter`].
pub fn smoother<T: Real>(
    model: &AffineModel<T>,
    filtered: &GaussianSequence<T>,
    exec: Execution,
) -> Result<GaussianSequence<T>> {
    match exec {
        Execution::Sequential => sequential_smoother(model, filtered),
        Execution::Parallel(opts) => parallel_smoother(model, filtered, opts),
    }
}

pub(crate) fn map_steps<R, F>(n: usize, exec: Execution, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    use rayon::prelude::*;
    if exec.is_parallel() {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
