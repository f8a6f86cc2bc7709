//! Parameter estimation through the pseudo-log-likelihood.
//!
//! For a parameterized model the iterated smoother converges to a nominal
//! trajectory `𝔫*(θ)`, the fixed point of one linearize-filter-smooth pass
//! `KS(𝔫, θ)`. The pseudo-log-likelihood `ℓ̂(θ)` is the exact log-likelihood
//! of the model linearized about `𝔫*(θ)`.
//!
//! Its gradient needs `d𝔫*/dθ`, which satisfies the linear fixed point
//! `d𝔫 = ∂KS/∂𝔫 · d𝔫 + ∂KS/∂θ`. Each evaluation of the right-hand side is a
//! single forward-mode pass of `KS` with [`Dual`] numbers whose tangent
//! parts carry `(d𝔫, e_j)`, so only one tangent trajectory per parameter
//! coordinate is ever stored.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::anderson::Anderson;
use crate::error::{Error, Result};
use crate::gslr::{Linearizer, StateSpaceModel};
use crate::iterated::{
    default_init, iterated_smoother, linearize_model, Diagnostics, IterationConfig,
};
use crate::kalman::{self, log_likelihood_from_filter, Execution, GaussianSequence, Mode};
use crate::real::{Dual, Real};

/// A model indexed by a parameter vector, buildable over any scalar type so
/// that parameters can carry tangents.
pub trait ModelFamily: Sync {
    type Model<T: Real>: StateSpaceModel<T>;

    /// Number of parameters.
    fn dim(&self) -> usize;

    fn build<T: Real>(&self, theta: &[T]) -> Result<Self::Model<T>>;

    /// Parameter value of the base model.
    fn initial(&self) -> Vec<f64>;

    /// Box constraints `(lower, upper)` per coordinate.
    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY); self.dim()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationConfig {
    /// Smoother settings used to converge the nominal trajectory. Its
    /// tolerance should be well below `tangent_tolerance`.
    pub smoother: IterationConfig,
    /// Stop the tangent iteration once its update has ∞-norm below this.
    pub tangent_tolerance: f64,
    pub tangent_max_iterations: usize,
    /// Anderson mixing depth for the (linear) tangent iteration; zero
    /// iterates the tangent map as is.
    pub tangent_anderson_memory: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            smoother: IterationConfig {
                max_iterations: 200,
                tolerance: 1e-10,
                anderson_memory: 5,
                ..Default::default()
            },
            tangent_tolerance: 1e-9,
            tangent_max_iterations: 100,
            tangent_anderson_memory: 5,
        }
    }
}

/// Log-likelihood of `model` linearized about `nominal`.
pub fn pseudo_log_likelihood<T: Real, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    ys: &[DVector<T>],
    nominal: &GaussianSequence<T>,
    linearizer: &Linearizer,
    mode: Mode,
    exec: Execution,
) -> Result<T> {
    let lin = linearize_model(model, ys, nominal, linearizer, mode, exec)?;
    let filtered = kalman::filter(&lin.model, &lin.ys, exec)?;
    log_likelihood_from_filter(&lin.model, &filtered, &lin.ys, exec)
}

/// Runs the iterated smoother for `θ`, starting from `warm` when given and
/// from the replicated prior otherwise.
pub fn converge_nominal<F: ModelFamily + ?Sized>(
    family: &F,
    theta: &[f64],
    ys: &[DVector<f64>],
    cfg: &IterationConfig,
    warm: Option<&GaussianSequence<f64>>,
) -> Result<(GaussianSequence<f64>, Diagnostics)> {
    let model = family.build::<f64>(theta)?;
    let init = match warm {
        Some(w) => w.clone(),
        None => default_init(&model, ys.len(), cfg.mode)?,
    };
    iterated_smoother(&model, ys, &init, cfg)
}

/// [`converge_nominal`] that fails unless the tolerance was reached.
fn fixed_point<F: ModelFamily + ?Sized>(
    family: &F,
    theta: &[f64],
    ys: &[DVector<f64>],
    cfg: &IterationConfig,
    warm: Option<&GaussianSequence<f64>>,
) -> Result<GaussianSequence<f64>> {
    let (nominal, diag) = converge_nominal(family, theta, ys, cfg, warm)?;
    if !diag.converged {
        return Err(Error::NominalNonConvergence {
            iterations: diag.iterations(),
            last_change: diag.mean_changes.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(nominal)
}

/// Pseudo-log-likelihood at `θ` with a freshly converged nominal trajectory.
pub fn log_likelihood_at<F: ModelFamily + ?Sized>(
    family: &F,
    theta: &[f64],
    ys: &[DVector<f64>],
    cfg: &IterationConfig,
    warm: Option<&GaussianSequence<f64>>,
) -> Result<(f64, GaussianSequence<f64>)> {
    let nominal = fixed_point(family, theta, ys, cfg, warm)?;
    let model = family.build::<f64>(theta)?;
    let linearizer = Linearizer::new(cfg.method, model.state_dim())?;
    let ll = pseudo_log_likelihood(&model, ys, &nominal, &linearizer, cfg.mode, cfg.execution)?;
    Ok((ll, nominal))
}

/// Output of [`score_fixed_point`].
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub gradient: Vec<f64>,
    pub log_likelihood: f64,
    /// ∞-norm of each tangent update, per parameter coordinate.
    pub update_norms: Vec<Vec<f64>>,
    /// `max |KS(𝔫) − 𝔫|` over the means; large values mean the supplied
    /// nominal was not a fixed point.
    pub fixed_point_residual: f64,
}

/// Gradient of the pseudo-log-likelihood at a converged nominal trajectory.
///
/// The tangent passes always run in covariance form (the nominal is
/// converted if needed): the QR-based triangularization of the square-root
/// form is not differentiable where factors are rank deficient, e.g. at the
/// zero-padded blocks of the filtering elements.
pub fn score_fixed_point<F: ModelFamily + ?Sized>(
    family: &F,
    theta: &[f64],
    ys: &[DVector<f64>],
    nominal: &GaussianSequence<f64>,
    cfg: &EstimationConfig,
) -> Result<Score> {
    score_fixed_point_from(family, theta, ys, nominal, cfg, None).map(|(score, _)| score)
}

/// Converged tangents `∂m_k/∂θ_j`, `∂P_k/∂θ_j` for every coordinate `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangents {
    pub means: Vec<Vec<DVector<f64>>>,
    pub covs: Vec<Vec<DMatrix<f64>>>,
}

/// [`score_fixed_point`] with the tangent iteration started from `start`
/// instead of zero, e.g. the tangents of a nearby parameter. The fixed point
/// does not depend on the starting value; only the iteration count does.
pub fn score_fixed_point_from<F: ModelFamily + ?Sized>(
    family: &F,
    theta: &[f64],
    ys: &[DVector<f64>],
    nominal: &GaussianSequence<f64>,
    cfg: &EstimationConfig,
    start: Option<&Tangents>,
) -> Result<(Score, Tangents)> {
    let p = family.dim();
    if theta.len() != p {
        return Err(Error::Dimension(format!("{} parameters, family has {p}", theta.len())));
    }
    if let Some(t) = start {
        let fits = t.means.len() == p
            && t.covs.len() == p
            && t.means.iter().all(|s| s.len() == nominal.means.len())
            && t.covs.iter().all(|s| s.len() == nominal.covs.len());
        if !fits {
            return Err(Error::Dimension("starting tangents do not match the nominal".into()));
        }
    }
    let nominal = nominal.to_mode(Mode::Standard)?;
    let ys_d: Vec<DVector<Dual>> = ys.iter().map(|y| y.map(Dual::constant)).collect();
    let per_coordinate = |j: usize| {
        let init = start.map(|t| (&t.means[j][..], &t.covs[j][..]));
        tangent_solve(family, theta, j, &ys_d, &nominal, cfg, init)
    };
    let results: Vec<TangentSolution> = if cfg.smoother.execution.is_parallel() {
        (0..p).into_par_iter().map(per_coordinate).collect::<Result<_>>()?
    } else {
        (0..p).map(per_coordinate).collect::<Result<_>>()?
    };
    let mut score = Score {
        gradient: Vec::with_capacity(p),
        log_likelihood: results.first().map_or(0.0, |r| r.log_likelihood),
        update_norms: Vec::with_capacity(p),
        fixed_point_residual: 0.0,
    };
    let mut tangents = Tangents {
        means: Vec::with_capacity(p),
        covs: Vec::with_capacity(p),
    };
    for r in results {
        score.gradient.push(r.derivative);
        score.update_norms.push(r.norms);
        score.fixed_point_residual = score.fixed_point_residual.max(r.residual);
        tangents.means.push(r.dm);
        tangents.covs.push(r.dp);
    }
    Ok((score, tangents))
}

fn dual_sequence(
    nominal: &GaussianSequence<f64>,
    dm: &[DVector<f64>],
    dp: &[DMatrix<f64>],
) -> GaussianSequence<Dual> {
    GaussianSequence {
        mode: Mode::Standard,
        means: nominal
            .means
            .iter()
            .zip(dm)
            .map(|(m, t)| m.zip_map(t, Dual::new))
            .collect(),
        covs: nominal
            .covs
            .iter()
            .zip(dp)
            .map(|(c, t)| c.zip_map(t, Dual::new))
            .collect(),
    }
}

struct TangentSolution {
    derivative: f64,
    log_likelihood: f64,
    norms: Vec<f64>,
    residual: f64,
    dm: Vec<DVector<f64>>,
    dp: Vec<DMatrix<f64>>,
}

fn tangent_solve<F: ModelFamily + ?Sized>(
    family: &F,
    theta: &[f64],
    j: usize,
    ys: &[DVector<Dual>],
    nominal: &GaussianSequence<f64>,
    cfg: &EstimationConfig,
    start: Option<(&[DVector<f64>], &[DMatrix<f64>])>,
) -> Result<TangentSolution> {
    let theta_d: Vec<Dual> = theta
        .iter()
        .enumerate()
        .map(|(i, &t)| Dual::new(t, if i == j { 1.0 } else { 0.0 }))
        .collect();
    let model = family.build::<Dual>(&theta_d)?;
    let linearizer = Linearizer::new(cfg.smoother.method, model.state_dim())?;
    let exec = cfg.smoother.execution;

    let (mut dm, mut dp): (Vec<DVector<f64>>, Vec<DMatrix<f64>>) = match start {
        Some((m, p)) => (m.to_vec(), p.to_vec()),
        None => (
            nominal.means.iter().map(|m| DVector::zeros(m.len())).collect(),
            nominal.covs.iter().map(|c| DMatrix::zeros(c.nrows(), c.ncols())).collect(),
        ),
    };
    let mut norms = Vec::new();
    let mut mixing = Anderson::new(cfg.tangent_anderson_memory);

    for iteration in 1..=cfg.tangent_max_iterations {
        let pass = || -> Result<(GaussianSequence<Dual>, Dual)> {
            let nominal_d = dual_sequence(nominal, &dm, &dp);
            let lin = linearize_model(&model, ys, &nominal_d, &linearizer, Mode::Standard, exec)?;
            let filtered = kalman::filter(&lin.model, &lin.ys, exec)?;
            let ll = log_likelihood_from_filter(&lin.model, &filtered, &lin.ys, exec)?;
            Ok((kalman::smoother(&lin.model, &filtered, exec)?, ll))
        };
        let (smoothed, ll) = pass().map_err(|e| e.at_iteration(iteration))?;

        let mut update = 0.0f64;
        let mut residual = 0.0f64;
        let mixing_input = (cfg.tangent_anderson_memory > 0).then(|| flatten_tangents(&dm, &dp));
        for (k, m) in smoothed.means.iter().enumerate() {
            for (i, v) in m.iter().enumerate() {
                update = update.max((v.eps - dm[k][i]).abs());
                residual = residual.max((v.re - nominal.means[k][i]).abs());
                dm[k][i] = v.eps;
            }
        }
        for (k, c) in smoothed.covs.iter().enumerate() {
            for (idx, v) in c.iter().enumerate() {
                update = update.max((v.eps - dp[k][idx]).abs());
                dp[k][idx] = v.eps;
            }
        }
        if !update.is_finite() || !ll.eps.is_finite() {
            return Err(Error::TangentNonConvergence {
                iterations: iteration,
                last_update: update,
            });
        }
        norms.push(update);
        if update < cfg.tangent_tolerance {
            return Ok(TangentSolution {
                derivative: ll.eps,
                log_likelihood: ll.re,
                norms,
                residual,
                dm,
                dp,
            });
        }
        if let Some(x) = mixing_input {
            let r = flatten_tangents(&dm, &dp) - &x;
            let mixed = mixing.next(&x, &r);
            let mut values = mixed.iter();
            for v in dm.iter_mut().flat_map(|m| m.iter_mut()).chain(dp.iter_mut().flat_map(|p| p.iter_mut())) {
                *v = *values.next().expect("tangent layout");
            }
        }
    }
    Err(Error::TangentNonConvergence {
        iterations: cfg.tangent_max_iterations,
        last_update: norms.last().copied().unwrap_or(f64::NAN),
    })
}

fn flatten_tangents(dm: &[DVector<f64>], dp: &[DMatrix<f64>]) -> DVector<f64> {
    let len = dm.iter().map(|m| m.len()).sum::<usize>() + dp.iter().map(|p| p.len()).sum::<usize>();
    DVector::from_iterator(
        len,
        dm.iter().flat_map(|m| m.iter().copied()).chain(dp.iter().flat_map(|p| p.iter().copied())),
    )
}

/// Central-difference gradient of `θ ↦ ℓ̂(θ)`, re-converging the nominal
/// trajectory (warm-started from `warm`) at every perturbed parameter.
pub fn score_finite_difference<F: ModelFamily + ?Sized>(
    family: &F,
    theta: &[f64],
    ys: &[DVector<f64>],
    cfg: &IterationConfig,
    h: f64,
    warm: Option<&GaussianSequence<f64>>,
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    (0..theta.len())
        .map(|j| {
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[j] += h;
            minus[j] -= h;
            let (lp, _) = log_likelihood_at(family, &plus, ys, cfg, warm)?;
            let (lm, _) = log_likelihood_at(family, &minus, ys, cfg, warm)?;
            Ok((lp - lm) / (2.0 * h))
        })
        .collect()
}

/// Settings of [`maximize_bounded`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    /// Stop when the projected gradient has ∞-norm below this value.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Sufficient-increase constant of the line search.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            gradient_tolerance: 1e-6,
            max_iterations: 200,
            armijo: 1e-4,
            max_backtracks: 40,
        }
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// No step along the search direction increased the objective.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerResult {
    pub theta: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub termination: Termination,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> f64 {
    // ascent direction: x + g projected back
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| ((xi + gi).clamp(lo, hi) - xi).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `objective` (returning value and gradient) over a box with a
/// projected BFGS method and a backtracking line search that uses
/// quadratic, then cubic, interpolation.
pub fn maximize_bounded<O>(
    mut objective: O,
    theta0: &[f64],
    bounds: &[(f64, f64)],
    opts: &OptimizerOptions,
) -> Result<OptimizerResult>
where
    O: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let p = theta0.len();
    if bounds.len() != p {
        return Err(Error::Dimension("one bound pair per parameter is required".into()));
    }
    if bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidArgument("bounds must satisfy lower < upper".into()));
    }
    let mut x = theta0.to_vec();
    project(&mut x, bounds);
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::LineSearch("objective is not finite at the initial point".into()));
    }
    let mut hinv = DMatrix::<f64>::identity(p, p);
    let mut first_step = true;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        theta: x.clone(),
        value: f,
        gradient_norm: projected_gradient_norm(&x, &g, bounds),
    }];

    let termination = loop {
        let iteration = trace.len();
        if trace.last().map_or(false, |t| t.gradient_norm < opts.gradient_tolerance) {
            break Termination::GradientTolerance;
        }
        if iteration > opts.max_iterations {
            break Termination::MaxIterations;
        }

        // Coordinates pinned at a bound with the gradient pushing outward.
        let active: Vec<bool> = (0..p)
            .map(|i| {
                let (lo, hi) = bounds[i];
                (x[i] <= lo && g[i] < 0.0) || (x[i] >= hi && g[i] > 0.0)
            })
            .collect();
        let gv = DVector::from_fn(p, |i, _| if active[i] { 0.0 } else { g[i] });
        let mut d: Vec<f64> = (&hinv * &gv).iter().copied().collect();
        for i in 0..p {
            if active[i] {
                d[i] = 0.0;
            }
        }
        if dot(&d, &g) <= 0.0 {
            hinv = DMatrix::identity(p, p);
            d = gv.iter().copied().collect();
        }
        // Without curvature information the first trial moves each
        // coordinate by at most half the current parameter magnitude.
        let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let xmax = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let reach = if xmax > 0.0 { (0.5 * xmax).min(1.0) } else { 1.0 };
        let mut alpha = if first_step && dmax > 0.0 { (reach / dmax).min(1.0) } else { 1.0 };

        let mut accepted = None;
        let mut prev: Option<(f64, f64)> = None;
        for _ in 0..opts.max_backtracks {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            project(&mut trial, bounds);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let slope = dot(&g, &step);
            if step.iter().all(|&s| s == 0.0) {
                break;
            }
            match objective(&trial) {
                Ok((ft, gt)) if ft.is_finite() && gt.iter().all(|v| v.is_finite()) => {
                    if ft >= f + opts.armijo * slope {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                    let next = interpolate_step(f, dot(&g, &d), alpha, ft, prev);
                    prev = Some((alpha, ft));
                    alpha = next.clamp(0.1 * alpha, 0.5 * alpha);
                }
                // Non-finite or failed evaluations: shrink the step.
                _ => {
                    prev = None;
                    alpha *= 0.25;
                }
            }
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break Termination::Stalled;
        };

        // Minimization form for the curvature pair.
        let s = DVector::from_fn(p, |i, _| x_new[i] - x[i]);
        let y = DVector::from_fn(p, |i, _| g[i] - g_new[i]);
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first_step {
                hinv = DMatrix::identity(p, p) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(p, p);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            hinv = &left * &hinv * &right + &s * s.transpose() * rho;
        }
        first_step = false;
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(TraceEntry {
            iteration,
            theta: x.clone(),
            value: f,
            gradient_norm: projected_gradient_norm(&x, &g, bounds),
        });
    };

    Ok(OptimizerResult {
        theta: x,
        value: f,
        gradient: g,
        trace,
        termination,
    })
}

// Maximizer of the quadratic (one trial) or cubic (two trials) model of
// φ(α) = f(x + α d) built from φ(0), φ'(0) and the trial values.
fn interpolate_step(f0: f64, slope0: f64, alpha: f64, f_alpha: f64, prev: Option<(f64, f64)>) -> f64 {
    // Work with ψ = −φ, which must decrease.
    let (psi0, dpsi0, psi_a) = (-f0, -slope0, -f_alpha);
    let quadratic = || {
        let denom = 2.0 * (psi_a - psi0 - dpsi0 * alpha);
        if denom > 0.0 {
            -dpsi0 * alpha * alpha / denom
        } else {
            0.5 * alpha
        }
    };
    let Some((alpha_p, f_p)) = prev else {
        return quadratic();
    };
    let psi_p = -f_p;
    let r1 = psi_a - psi0 - dpsi0 * alpha;
    let r2 = psi_p - psi0 - dpsi0 * alpha_p;
    let div = alpha - alpha_p;
    if div == 0.0 {
        return quadratic();
    }
    let a = (r1 / (alpha * alpha) - r2 / (alpha_p * alpha_p)) / div;
    let b = (-alpha_p * r1 / (alpha * alpha) + alpha * r2 / (alpha_p * alpha_p)) / div;
    if a == 0.0 {
        return if b != 0.0 { -dpsi0 / (2.0 * b) } else { quadratic() };
    }
    let disc = b * b - 3.0 * a * dpsi0;
    if disc < 0.0 {
        return quadratic();
    }
    let root = (-b + disc.sqrt()) / (3.0 * a);
    if root.is_finite() {
        root
    } else {
        quadratic()
    }
}

/// How [`mle_fit`] obtains gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMethod {
    /// Tangent fixed point ([`score_fixed_point`]).
    FixedPoint,
    /// Central differences with step `h` ([`score_finite_difference`]).
    FiniteDifference { h: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub theta: Vec<f64>,
    pub log_likelihood: f64,
    pub gradient: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub termination: Termination,
    /// Number of objective evaluations (each converges a nominal trajectory).
    pub evaluations: usize,
}

/// Maximizes the pseudo-log-likelihood over the family's parameter box.
pub fn mle_fit<F: ModelFamily + ?Sized>(
    family: &F,
    ys: &[DVector<f64>],
    theta0: &[f64],
    cfg: &EstimationConfig,
    gradient: GradientMethod,
    opts: &OptimizerOptions,
) -> Result<MleResult> {
    let bounds = family.bounds();
    if theta0.len() != family.dim() {
        return Err(Error::Dimension("initial parameter has the wrong length".into()));
    }
    if theta0
        .iter()
        .zip(&bounds)
        .any(|(&t, &(lo, hi))| !(t >= lo && t <= hi))
    {
        return Err(Error::InvalidArgument("initial parameter outside its bounds".into()));
    }
    // Warm starts come from the best point so far: rejected trial points can
    // sit in regions where the smoother converges poorly.
    let mut warm: Option<GaussianSequence<f64>> = None;
    let mut warm_tangents: Option<Tangents> = None;
    let mut best = f64::NEG_INFINITY;
    let mut evaluations = 0;
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        evaluations += 1;
        let nominal = fixed_point(family, theta, ys, &cfg.smoother, warm.as_ref())?;
        let (value, grad) = match gradient {
            GradientMethod::FixedPoint => {
                let (s, t) =
                    score_fixed_point_from(family, theta, ys, &nominal, cfg, warm_tangents.as_ref())?;
                if s.log_likelihood > best {
                    warm_tangents = Some(t);
                }
                (s.log_likelihood, s.gradient)
            }
            GradientMethod::FiniteDifference { h } => {
                let model = family.build::<f64>(theta)?;
                let lin = Linearizer::new(cfg.smoother.method, model.state_dim())?;
                let ll = pseudo_log_likelihood(
                    &model,
                    ys,
                    &nominal,
                    &lin,
                    cfg.smoother.mode,
                    cfg.smoother.execution,
                )?;
                let g = score_finite_difference(family, theta, ys, &cfg.smoother, h, Some(&nominal))?;
                (ll, g)
            }
        };
        if value > best {
            best = value;
            warm = Some(nominal);
        }
        Ok((value, grad))
    };
    let out = maximize_bounded(objective, theta0, &bounds, opts)?;
    Ok(MleResult {
        theta: out.theta,
        log_likelihood: out.value,
        gradient: out.gradient,
        trace: out.trace,
        termination: out.termination,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concave_quadratic_maximizer() {
        // f(θ) = −(θ₀ − 1)² − 3(θ₁ + 2)² − θ₀θ₁
        let f = |t: &[f64]| {
            let v = -(t[0] - 1.0).powi(2) - 3.0 * (t[1] + 2.0).powi(2) - t[0] * t[1];
            let g = vec![-2.0 * (t[0] - 1.0) - t[1], -6.0 * (t[1] + 2.0) - t[0]];
            Ok((v, g))
        };
        let bounds = [(-10.0, 10.0), (-10.0, 10.0)];
        let opts = OptimizerOptions {
            gradient_tolerance: 1e-10,
            ..Default::default()
        };
        let out = maximize_bounded(f, &[0.0, 0.0], &bounds, &opts).unwrap();
        // ∇f = 0: [2 1; 1 6] θ = [2, −12]
        let exact = [(12.0 + 12.0) / 11.0, (-24.0 - 2.0) / 11.0];
        assert!((out.theta[0] - exact[0]).abs() < 1e-8, "{:?}", out.theta);
        assert!((out.theta[1] - exact[1]).abs() < 1e-8);
        assert_eq!(out.termination, Termination::GradientTolerance);
        for w in out.trace.windows(2) {
            assert!(w[1].value >= w[0].value);
        }
    }

    #[test]
    fn active_bound() {
        let f = |t: &[f64]| Ok((-(t[0] - 5.0).powi(2), vec![-2.0 * (t[0] - 5.0)]));
        let out = maximize_bounded(f, &[0.0], &[(-1.0, 2.0)], &OptimizerOptions::default()).unwrap();
        assert_eq!(out.theta[0], 2.0);
        assert_eq!(out.termination, Termination::GradientTolerance);
    }

    #[test]
    fn rejects_bad_bounds() {
        let f = |_: &[f64]| Ok((0.0, vec![0.0]));
        assert!(maximize_bounded(f, &[0.0], &[(1.0, 1.0)], &OptimizerOptions::default()).is_err());
    }

    #[test]
    fn interpolation_finds_quadratic_peak() {
        // φ(α) = −(α − 0.3)², φ(0) = −0.09, φ'(0) = 0.6, φ(1) = −0.49
        let a = interpolate_step(-0.09, 0.6, 1.0, -0.49, None);
        assert!((a - 0.3).abs() < 1e-12);
    }
}
