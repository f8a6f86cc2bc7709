use nalgebra::{DMatrix, DVector};

use super::{map_steps, AffineModel, Execution, GaussianSequence, Mode};
use crate::error::{Error, Result};
use crate::linalg::{
    block2x2, cholesky, hstack, right_solve_lower, solve_lower, solve_upper_transpose,
    split_lower, symmetrize, tria,
};
use crate::real::Real;
use crate::scan::{try_reverse_associative_scan, ScanOptions};

/// Smoothing element `{E, g, L}`: `p(x_k | x_{k+1}, y_{1:k}) = N(E x_{k+1} + g, L)`.
///
/// In square-root mode `l` holds the lower factor `D` with `L = DDᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherElement<T: Real> {
    pub e: DMatrix<T>,
    pub g: DVector<T>,
    pub l: DMatrix<T>,
}

/// Identity `(I, 0, 0)` of the smoothing operator.
pub fn smoother_element_identity<T: Real>(nx: usize) -> SmootherElement<T> {
    SmootherElement {
        e: DMatrix::identity(nx, nx),
        g: DVector::zeros(nx),
        l: DMatrix::zeros(nx, nx),
    }
}

fn terminal<T: Real>(filtered: &GaussianSequence<T>, k: usize) -> SmootherElement<T> {
    let nx = filtered.means[k].len();
    SmootherElement {
        e: DMatrix::zeros(nx, nx),
        g: filtered.means[k].clone(),
        l: filtered.covs[k].clone(),
    }
}

fn predictive(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NotPositiveDefinite { .. } | Error::SingularDiagonal { .. } => {
            Error::SingularPredictive { step }
        }
        other => other,
    }
}

/// Standard element for index `k ∈ 0..=n` of a standard-mode filter output.
pub fn std_smoother_element<T: Real>(
    model: &AffineModel<T>,
    filtered: &GaussianSequence<T>,
    k: usize,
) -> Result<SmootherElement<T>> {
    if k == model.len() {
        return Ok(terminal(filtered, k));
    }
    let tr = &model.transitions[k];
    let (m, p) = (&filtered.means[k], &filtered.covs[k]);
    let f = &tr.matrix;
    let fp = f * p;
    let p_pred = symmetrize(&(&fp * f.transpose() + &tr.noise));
    let lp = cholesky(&p_pred).map_err(predictive(k + 1))?;
    // E = P Fᵀ P⁻⁻¹ = (P⁻⁻¹ F P)ᵀ
    let gain = solve_upper_transpose(&lp, &solve_lower(&lp, &fp)?)
        .map_err(predictive(k + 1))?
        .transpose();
    let g = m - &gain * tr.apply_mean(m);
    let l = symmetrize(&(p - &gain * &fp));
    Ok(SmootherElement { e: gain, g, l })
}

/// Square-root element for index `k ∈ 0..=n` of a square-root filter output.
pub fn sqrt_smoother_element<T: Real>(
    model: &AffineModel<T>,
    filtered: &GaussianSequence<T>,
    k: usize,
) -> Result<SmootherElement<T>> {
    if k == model.len() {
        return Ok(terminal(filtered, k));
    }
    let tr = &model.transitions[k];
    let (m, nf) = (&filtered.means[k], &filtered.covs[k]);
    let nx = m.len();
    let phi = tria(&block2x2(&(&tr.matrix * nf), Some(&tr.noise), nf, None, nx));
    let (phi11, phi21, phi22) = split_lower(&phi, nx);
    let gain = right_solve_lower(&phi21, &phi11).map_err(predictive(k + 1))?;
    let g = m - &gain * tr.apply_mean(m);
    Ok(SmootherElement {
        e: gain,
        g,
        l: phi22,
    })
}

/// Standard smoothing operator (`ei` earlier in time than `ej`).
pub fn combine_smoother_std<T: Real>(
    ei: &SmootherElement<T>,
    ej: &SmootherElement<T>,
) -> SmootherElement<T> {
    SmootherElement {
        e: &ei.e * &ej.e,
        g: &ei.e * &ej.g + &ei.g,
        l: symmetrize(&(&ei.e * &ej.l * ei.e.transpose() + &ei.l)),
    }
}

/// Square-root smoothing operator (`ei` earlier in time than `ej`).
pub fn combine_smoother_sqrt<T: Real>(
    ei: &SmootherElement<T>,
    ej: &SmootherElement<T>,
) -> SmootherElement<T> {
    SmootherElement {
        e: &ei.e * &ej.e,
        g: &ei.e * &ej.g + &ei.g,
        l: tria(&hstack(&[&(&ei.e * &ej.l), &ei.l])),
    }
}

/// Smoothing by reverse associative scan over per-step elements.
pub fn parallel_smoother<T: Real>(
    model: &AffineModel<T>,
    filtered: &GaussianSequence<T>,
    opts: ScanOptions,
) -> Result<GaussianSequence<T>> {
    check(model, filtered)?;
    let n = model.len();
    let exec = Execution::Parallel(opts);
    let scanned = match model.mode {
        Mode::Standard => {
            let elems = map_steps(n + 1, exec, |k| std_smoother_element(model, filtered, k))?;
            try_reverse_associative_scan(elems, |a, b| Ok::<_, Error>(combine_smoother_std(a, b)), opts)?
        }
        Mode::SquareRoot => {
            let elems = map_steps(n + 1, exec, |k| sqrt_smoother_element(model, filtered, k))?;
            try_reverse_associative_scan(elems, |a, b| Ok::<_, Error>(combine_smoother_sqrt(a, b)), opts)?
        }
    };
    let (means, covs) = scanned.into_iter().map(|e| (e.g, e.l)).unzip();
    Ok(GaussianSequence {
        mode: model.mode,
        means,
        covs,
    })
}

/// Backward Rauch–Tung–Striebel recursion (covariance or factor form).
pub fn sequential_smoother<T: Real>(
    model: &AffineModel<T>,
    filtered: &GaussianSequence<T>,
) -> Result<GaussianSequence<T>> {
    check(model, filtered)?;
    let n = model.len();
    let mut means = filtered.means.clone();
    let mut covs = filtered.covs.clone();
    for k in (0..n).rev() {
        let (ms, cs) = (means[k + 1].clone(), covs[k + 1].clone());
        let el = match model.mode {
            Mode::Standard => std_smoother_element(model, filtered, k)?,
            Mode::SquareRoot => sqrt_smoother_element(model, filtered, k)?,
        };
        means[k] = &el.e * ms + &el.g;
        covs[k] = match model.mode {
            Mode::Standard => symmetrize(&(&el.e * cs * el.e.transpose() + &el.l)),
            Mode::SquareRoot => tria(&hstack(&[&(&el.e * cs), &el.l])),
        };
    }
    Ok(GaussianSequence {
        mode: model.mode,
        means,
        covs,
    })
}

fn check<T: Real>(model: &AffineModel<T>, filtered: &GaussianSequence<T>) -> Result<()> {
    if filtered.mode != model.mode {
        return Err(Error::InvalidArgument(
            "filter output and model use different covariance modes".into(),
        ));
    }
    if filtered.len() != model.len() + 1 || filtered.covs.len() != filtered.len() {
        return Err(Error::Dimension(format!(
            "{} filtering marginals for {} steps",
            filtered.len(),
            model.len()
        )));
    }
    Ok(())
}
