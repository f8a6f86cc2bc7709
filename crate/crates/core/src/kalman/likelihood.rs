use nalgebra::DVector;

use super::{filter, map_steps, AffineModel, Execution, GaussianSequence, Mode};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, hstack, solve_lower, symmetrize, tria};
use crate::real::Real;
use crate::scan::{associative_reduce, ScanOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Marginal log-likelihood `Σ_k log N(y_k; H_k m⁻_k + d_k, H_k P⁻_k H_kᵀ + Ω_k)`
/// of the affine model.
pub fn filter_log_likelihood<T: Real>(
    model: &AffineModel<T>,
    ys: &[DVector<T>],
    exec: Execution,
) -> Result<T> {
    let filtered = filter(model, ys, exec)?;
    log_likelihood_from_filter(model, &filtered, ys, exec)
}

/// Log-likelihood from already-computed filtering marginals. The per-step
/// terms are summed with a fixed reduction tree, so the value does not
/// depend on the execution strategy.
pub fn log_likelihood_from_filter<T: Real>(
    model: &AffineModel<T>,
    filtered: &GaussianSequence<T>,
    ys: &[DVector<T>],
    exec: Execution,
) -> Result<T> {
    model.validate(ys)?;
    if filtered.len() != ys.len() + 1 || filtered.mode != model.mode {
        return Err(Error::Dimension("filter output does not match the model".into()));
    }
    let terms = map_steps(ys.len(), exec, |k| step_term(model, filtered, ys, k))?;
    Ok(associative_reduce(terms, |a, b| *a + *b, ScanOptions::default()).unwrap_or_else(T::zero))
}

fn step_term<T: Real>(
    model: &AffineModel<T>,
    filtered: &GaussianSequence<T>,
    ys: &[DVector<T>],
    k: usize,
) -> Result<T> {
    let step = k + 1;
    let tr = &model.transitions[k];
    let ob = &model.observations[k];
    let h = &ob.matrix;
    let m_pred = tr.apply_mean(&filtered.means[k]);
    let innovation = |e: Error| match e {
        Error::NotPositiveDefinite { .. } | Error::SingularDiagonal { .. } => {
            Error::SingularInnovation { step }
        }
        other => other,
    };
    // Lower factor of the innovation covariance.
    let y_fac = match model.mode {
        Mode::Standard => {
            let f = &tr.matrix;
            let p_pred = f * &filtered.covs[k] * f.transpose() + &tr.noise;
            let s = symmetrize(&(h * p_pred * h.transpose() + &ob.noise));
            cholesky(&s).map_err(innovation)?
        }
        Mode::SquareRoot => {
            let n_pred = tria(&hstack(&[&(&tr.matrix * &filtered.covs[k]), &tr.noise]));
            tria(&hstack(&[&(h * n_pred), &ob.noise]))
        }
    };
    let r = &ys[k] - h * m_pred - &ob.offset;
    let ny = r.len();
    let w = solve_lower(&y_fac, &nalgebra::DMatrix::from_column_slice(ny, 1, r.as_slice()))
        .map_err(innovation)?;
    let mut log_det = T::zero();
    for i in 0..ny {
        log_det += y_fac[(i, i)].abs().ln();
    }
    let quad = w.iter().fold(T::zero(), |acc, &v| acc + v * v);
    let half = T::from_f64(0.5);
    Ok(-(T::from_f64(ny as f64 * LN_2PI) + quad) * half - log_det)
}
