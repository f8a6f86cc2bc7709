//! Iterated posterior-linearization smoothing.
//!
//! Each iteration linearizes every transition and observation density about
//! the current nominal trajectory (independently per step), then runs an
//! affine Kalman filter and smoother on the linearized model. The smoothing
//! marginals become the next nominal trajectory.

use nalgebra::DVector;

use crate::anderson::Anderson;
use crate::error::{Error, Result};
use crate::gslr::{linearize, Linearizer, Method, ObservationOf, StateSpaceModel, TransitionOf};
use crate::kalman::{
    self, log_likelihood_from_filter, map_steps, AffineMap, AffineModel, Execution,
    GaussianSequence, Mode,
};
use crate::linalg::square;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationConfig {
    /// Upper bound `M` on the number of iterations.
    pub max_iterations: usize,
    /// Stop once `max_k ‖m_k^{(i)} − m_k^{(i−1)}‖_∞` falls below this value.
    /// Zero runs exactly `max_iterations` iterations.
    pub tolerance: f64,
    pub mode: Mode,
    pub method: Method,
    pub execution: Execution,
    /// Anderson mixing of the nominal means over this many past iterates;
    /// zero feeds each smoother output straight back as the next nominal.
    pub anderson_memory: usize,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            max_iterations: 20,
            tolerance: 1e-6,
            mode: Mode::Standard,
            method: Method::Taylor,
            execution: Execution::parallel(),
            anderson_memory: 0,
        }
    }
}

/// Per-iteration record of an [`iterated_smoother`] run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Log-likelihood of each iteration's linearized model.
    pub log_likelihoods: Vec<f64>,
    /// `max_k ‖Δm_k‖_∞` after each iteration.
    pub mean_changes: Vec<f64>,
    /// Number of steps whose standard-form noise covariance was clipped.
    pub clipped: Vec<usize>,
    pub converged: bool,
}

impl Diagnostics {
    pub fn iterations(&self) -> usize {
        self.mean_changes.len()
    }
}

/// Affine model obtained by linearizing about a nominal trajectory, with the
/// measurements aligned to its predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedModel<T: Real> {
    pub model: AffineModel<T>,
    pub ys: Vec<DVector<T>>,
    pub clipped: usize,
}

/// Prior replicated over all `n + 1` time indices.
pub fn default_init<T: Real, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    n: usize,
    mode: Mode,
) -> Result<GaussianSequence<T>> {
    let (m0, n0) = model.prior()?;
    let cov = match mode {
        Mode::Standard => square(&n0),
        Mode::SquareRoot => n0,
    };
    Ok(GaussianSequence {
        mode,
        means: vec![m0; n + 1],
        covs: vec![cov; n + 1],
    })
}

/// Linearizes the transition `k → k+1` about nominal index `k` and the
/// observation of `x_{k+1}` about nominal index `k + 1`.
pub fn linearize_model<T: Real, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    ys: &[DVector<T>],
    nominal: &GaussianSequence<T>,
    linearizer: &Linearizer,
    mode: Mode,
    exec: Execution,
) -> Result<LinearizedModel<T>> {
    let n = ys.len();
    if nominal.len() != n + 1 {
        return Err(Error::Dimension(format!(
            "nominal trajectory of length {} for {n} measurements",
            nominal.len()
        )));
    }
    let nominal = nominal.to_mode(mode)?;
    let (m0, n0) = model.prior()?;
    let prior_cov = match mode {
        Mode::Standard => square(&n0),
        Mode::SquareRoot => n0,
    };

    let steps = map_steps(n, exec, |k| {
        let step = k + 1;
        let tr = linearize(
            &TransitionOf(model),
            linearizer,
            mode,
            &nominal.means[k],
            &nominal.covs[k],
        )
        .map_err(|e| e.at_step(step))?;
        let ob = linearize(
            &ObservationOf(model),
            linearizer,
            mode,
            &nominal.means[step],
            &nominal.covs[step],
        )
        .map_err(|e| e.at_step(step))?;
        let predicted = ob.map.apply_mean(&nominal.means[step]);
        let y = model.align_observation(&ys[k], &predicted);
        Ok((tr, ob, y))
    })?;

    let mut transitions: Vec<AffineMap<T>> = Vec::with_capacity(n);
    let mut observations = Vec::with_capacity(n);
    let mut aligned = Vec::with_capacity(n);
    let mut clipped = 0;
    for (tr, ob, y) in steps {
        clipped += usize::from(tr.clipped) + usize::from(ob.clipped);
        transitions.push(tr.map);
        observations.push(ob.map);
        aligned.push(y);
    }
    Ok(LinearizedModel {
        model: AffineModel {
            mode,
            prior_mean: m0,
            prior_cov,
            transitions,
            observations,
        },
        ys: aligned,
        clipped,
    })
}

/// Runs linearize → filter → smoother until the nominal means stop changing
/// or `cfg.max_iterations` is reached. Returns the final smoothing marginals.
pub fn iterated_smoother<T: Real, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    ys: &[DVector<T>],
    init: &GaussianSequence<T>,
    cfg: &IterationConfig,
) -> Result<(GaussianSequence<T>, Diagnostics)> {
    if cfg.max_iterations == 0 {
        return Err(Error::InvalidArgument("at least one iteration is required".into()));
    }
    if !(cfg.tolerance >= 0.0) {
        return Err(Error::InvalidArgument("tolerance must be nonnegative".into()));
    }
    let linearizer = Linearizer::new(cfg.method, model.state_dim())?;
    let mut nominal = init.to_mode(cfg.mode)?;
    let mut diag = Diagnostics::default();
    let mut mixing = Anderson::new(cfg.anderson_memory);

    for iteration in 1..=cfg.max_iterations {
        let run = || -> Result<(GaussianSequence<T>, f64, usize)> {
            let lin = linearize_model(model, ys, &nominal, &linearizer, cfg.mode, cfg.execution)?;
            let filtered = kalman::filter(&lin.model, &lin.ys, cfg.execution)?;
            let ll = log_likelihood_from_filter(&lin.model, &filtered, &lin.ys, cfg.execution)?;
            let smoothed = kalman::smoother(&lin.model, &filtered, cfg.execution)?;
            Ok((smoothed, ll.to_f64(), lin.clipped))
        };
        let (smoothed, ll, clipped) = run().map_err(|e| e.at_iteration(iteration))?;
        if !smoothed.is_finite() {
            return Err(Error::Divergence { iteration });
        }
        let change = max_mean_change(&smoothed, &nominal);
        diag.log_likelihoods.push(ll);
        diag.mean_changes.push(change);
        diag.clipped.push(clipped);
        if change < cfg.tolerance || iteration == cfg.max_iterations || cfg.anderson_memory == 0 {
            nominal = smoothed;
            if change < cfg.tolerance {
                diag.converged = true;
                break;
            }
            continue;
        }
        // Mixed means with the latest covariances as the next nominal.
        let x = flatten(&nominal.means);
        let r = flatten(&smoothed.means) - &x;
        let mixed = mixing.next(&x, &r);
        nominal = smoothed;
        let mut offset = 0;
        for m in nominal.means.iter_mut() {
            let len = m.len();
            m.copy_from(&mixed.rows(offset, len));
            offset += len;
        }
    }
    Ok((nominal, diag))
}

fn flatten<T: Real>(parts: &[DVector<T>]) -> DVector<T> {
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

/// `max_k ‖a_k − b_k‖_∞` over the means of two trajectories.
pub fn max_mean_change<T: Real>(a: &GaussianSequence<T>, b: &GaussianSequence<T>) -> f64 {
    a.means
        .iter()
        .zip(&b.means)
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(u, v)| (*u - *v).abs().to_f64()))
        .fold(0.0, f64::max)
}
