//! Statistical linear regression of conditional densities against a
//! Gaussian reference.
//!
//! A conditional `p(z | x)` with mean `μ(x)` and covariance `S(x)S(x)ᵀ` is
//! replaced by the affine-Gaussian `z ≈ F x + c + e`, `e ~ N(0, Λ)`, whose
//! parameters minimize the mean-square error under `x ~ N(m, P)`. The
//! moments are computed either by a first-order Taylor expansion about `m`
//! or by a sigma-point rule.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kalman::{cholesky_or_tria, AffineMap, Mode};
use crate::linalg::{
    cholesky, cholesky_downdate, clip_to_psd, hstack, right_solve_lower, solve_lower,
    solve_upper_transpose, symmetric_eigen, symmetrize, tria,
};
use crate::real::Real;

/// Upper bound on the number of tensor-product Gauss–Hermite points.
pub const MAX_GAUSS_HERMITE_POINTS: usize = 100_000;

/// Nonlinear state-space model described by its conditional moments:
///
/// `x_k | x_{k−1} ~ (transition_mean(x_{k−1}), transition_chol(x_{k−1}))`,
/// `y_k | x_k ~ (observation_mean(x_k), observation_chol(x_k))`.
pub trait StateSpaceModel<T: Real>: Sync {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;

    /// Prior mean and lower Cholesky factor of the prior covariance of `x₀`.
    fn prior(&self) -> Result<(DVector<T>, DMatrix<T>)>;

    fn transition_mean(&self, x: &DVector<T>) -> Result<DVector<T>>;
    fn transition_chol(&self, x: &DVector<T>) -> Result<DMatrix<T>>;
    fn observation_mean(&self, x: &DVector<T>) -> Result<DVector<T>>;
    fn observation_chol(&self, x: &DVector<T>) -> Result<DMatrix<T>>;

    fn transition_jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        finite_difference_jacobian(|z| self.transition_mean(z), x)
    }

    fn observation_jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        finite_difference_jacobian(|z| self.observation_mean(z), x)
    }

    /// Representative of the measurement `y` closest to `predicted`.
    ///
    /// Measurements living on a circle (angles) are only defined modulo a
    /// period; a model can shift `y` onto the branch of its prediction so
    /// that the affine residual `y − H x − d` is meaningful.
    fn align_observation(&self, y: &DVector<T>, _predicted: &DVector<T>) -> DVector<T> {
        y.clone()
    }
}

/// One conditional density `p(z | x)` of a model.
pub trait Conditional<T: Real> {
    fn mean(&self, x: &DVector<T>) -> Result<DVector<T>>;
    fn chol(&self, x: &DVector<T>) -> Result<DMatrix<T>>;
    fn jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>>;
}

/// The transition density of a model.
pub struct TransitionOf<'a, M: ?Sized>(pub &'a M);

/// The observation density of a model.
pub struct ObservationOf<'a, M: ?Sized>(pub &'a M);

impl<T: Real, M: StateSpaceModel<T> + ?Sized> Conditional<T> for TransitionOf<'_, M> {
    fn mean(&self, x: &DVector<T>) -> Result<DVector<T>> {
        self.0.transition_mean(x)
    }
    fn chol(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        self.0.transition_chol(x)
    }
    fn jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        self.0.transition_jacobian(x)
    }
}

impl<T: Real, M: StateSpaceModel<T> + ?Sized> Conditional<T> for ObservationOf<'_, M> {
    fn mean(&self, x: &DVector<T>) -> Result<DVector<T>> {
        self.0.observation_mean(x)
    }
    fn chol(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        self.0.observation_chol(x)
    }
    fn jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        self.0.observation_jacobian(x)
    }
}

/// Central-difference Jacobian with per-coordinate step `h·(1 + |x_i|)`.
///
/// `h = 1e−6` in double precision; for coarser formats `h = ε^{1/3}`.
pub fn finite_difference_jacobian<T, F>(f: F, x: &DVector<T>) -> Result<DMatrix<T>>
where
    T: Real,
    F: Fn(&DVector<T>) -> Result<DVector<T>>,
{
    let eps = T::epsilon().to_f64();
    let base = if eps < 1e-10 { 1e-6 } else { eps.cbrt() };
    let n = x.len();
    let mut jac: Option<DMatrix<T>> = None;
    for i in 0..n {
        let h = T::from_f64(base) * (T::one() + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(fp.len(), n));
        let two_h = h + h;
        jac.set_column(i, &((fp - fm) / two_h));
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(f(x).map(|v| v.len()).unwrap_or(0), 0)))
}

/// Affine regression from joint moments of `(x, z)`:
/// `H = C_xzᵀ V_x⁻¹`, `d = E[z] − H E[x]`, `Ω = V_z − H V_x Hᵀ`.
pub fn gslr_from_moments<T: Real>(
    mean_x: &DVector<T>,
    cov_x: &DMatrix<T>,
    mean_z: &DVector<T>,
    cov_xz: &DMatrix<T>,
    cov_z: &DMatrix<T>,
) -> Result<AffineMap<T>> {
    let l = cholesky(&symmetrize(cov_x))?;
    let h = solve_upper_transpose(&l, &solve_lower(&l, cov_xz)?)?.transpose();
    let d = mean_z - &h * mean_x;
    let omega = symmetrize(&(cov_z - &h * cov_x * h.transpose()));
    Ok(AffineMap::new(h, d, omega))
}

/// Regression of an exactly affine-Gaussian conditional `z = H x + d + N(0, Ω)`
/// against `x ~ N(mean, cov)`; recovers `(H, d, Ω)`.
pub fn gslr_exact_affine<T: Real>(
    conditional: &AffineMap<T>,
    mean: &DVector<T>,
    cov: &DMatrix<T>,
) -> Result<AffineMap<T>> {
    let h = &conditional.matrix;
    let mean_z = conditional.apply_mean(mean);
    let cov_xz = cov * h.transpose();
    let cov_z = h * cov * h.transpose() + &conditional.noise;
    gslr_from_moments(mean, cov, &mean_z, &cov_xz, &cov_z)
}

/// Sigma-point family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaScheme {
    /// Spherical cubature: `±√n e_i`, equal weights `1/(2n)`.
    Cubature,
    /// Scaled unscented transform.
    Unscented { alpha: f64, beta: f64, kappa: f64 },
    /// Tensor-product Gauss–Hermite rule of the given order per dimension.
    GaussHermite { order: usize },
}

impl SigmaScheme {
    /// Unscented transform with `α = 1`, `β = 0`, `κ = 1`, which keeps every
    /// weight positive in all dimensions.
    pub fn unscented() -> Self {
        SigmaScheme::Unscented {
            alpha: 1.0,
            beta: 0.0,
            kappa: 1.0,
        }
    }

    /// Unit-Gaussian rule in dimension `n`.
    pub fn rule(&self, n: usize) -> Result<SigmaRule> {
        if n == 0 {
            return Err(Error::InvalidArgument("sigma rule of dimension 0".into()));
        }
        let rule = match *self {
            SigmaScheme::Cubature => {
                let r = (n as f64).sqrt();
                let mut points = DMatrix::zeros(n, 2 * n);
                for i in 0..n {
                    points[(i, i)] = r;
                    points[(i, n + i)] = -r;
                }
                let w = vec![1.0 / (2 * n) as f64; 2 * n];
                SigmaRule {
                    points,
                    wm: w.clone(),
                    wc: w,
                }
            }
            SigmaScheme::Unscented { alpha, beta, kappa } => {
                let nf = n as f64;
                let lambda = alpha * alpha * (nf + kappa) - nf;
                let spread = nf + lambda;
                if !(spread > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "unscented spread n + λ = {spread} must be positive"
                    )));
                }
                let r = spread.sqrt();
                let mut points = DMatrix::zeros(n, 2 * n + 1);
                for i in 0..n {
                    points[(i, 1 + i)] = r;
                    points[(i, 1 + n + i)] = -r;
                }
                let wi = 1.0 / (2.0 * spread);
                let mut wm = vec![wi; 2 * n + 1];
                let mut wc = wm.clone();
                wm[0] = lambda / spread;
                wc[0] = lambda / spread + (1.0 - alpha * alpha + beta);
                SigmaRule { points, wm, wc }
            }
            SigmaScheme::GaussHermite { order } => {
                if order == 0 {
                    return Err(Error::InvalidArgument("Gauss–Hermite order 0".into()));
                }
                let count = (order as f64).powi(n as i32);
                if count > MAX_GAUSS_HERMITE_POINTS as f64 {
                    return Err(Error::InvalidArgument(format!(
                        "Gauss–Hermite rule with {order}^{n} points exceeds {MAX_GAUSS_HERMITE_POINTS}"
                    )));
                }
                let (nodes, weights) = gauss_hermite_1d(order);
                let s = order.pow(n as u32);
                let mut points = DMatrix::zeros(n, s);
                let mut w = vec![1.0; s];
                for (j, wj) in w.iter_mut().enumerate() {
                    let mut idx = j;
                    for i in 0..n {
                        let q = idx % order;
                        idx /= order;
                        points[(i, j)] = nodes[q];
                        *wj *= weights[q];
                    }
                }
                SigmaRule {
                    points,
                    wm: w.clone(),
                    wc: w,
                }
            }
        };
        if let Some(w) = rule.wc.iter().find(|&&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "sigma rule has a nonpositive covariance weight ({w})"
            )));
        }
        Ok(rule)
    }
}

impl fmt::Display for SigmaScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaScheme::Cubature => write!(f, "cubature"),
            SigmaScheme::Unscented { alpha, beta, kappa } => {
                write!(f, "unscented(alpha={alpha},beta={beta},kappa={kappa})")
            }
            SigmaScheme::GaussHermite { order } => write!(f, "gh:{order}"),
        }
    }
}

/// Probabilists' Gauss–Hermite nodes (ascending) and weights (summing to
/// one) from the eigen-decomposition of the Jacobi matrix.
pub fn gauss_hermite_1d(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let b = (k as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let (vals, vecs) = symmetric_eigen(&jac);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (vals[i], vecs[(0, i)] * vecs[(0, i)]))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    // Symmetrize exactly: nodes come in ± pairs, the middle one is 0.
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    for i in 0..order {
        let j = order - 1 - i;
        nodes[i] = 0.5 * (pairs[i].0 - pairs[j].0);
        weights[i] = 0.5 * (pairs[i].1 + pairs[j].1) / total;
    }
    (nodes, weights)
}

/// Unit-Gaussian sigma points `ξ_i` (columns) with mean and covariance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaRule {
    pub points: DMatrix<f64>,
    pub wm: Vec<f64>,
    pub wc: Vec<f64>,
}

impl SigmaRule {
    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }
}

/// User-facing choice of linearization method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Taylor,
    Sigma(SigmaScheme),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Taylor => write!(f, "taylor"),
            Method::Sigma(SigmaScheme::Unscented { .. }) => write!(f, "unscented"),
            Method::Sigma(s) => write!(f, "{s}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Parses `taylor`, `cubature`, `unscented` or `gh:<order>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "taylor" => Ok(Method::Taylor),
            "cubature" => Ok(Method::Sigma(SigmaScheme::Cubature)),
            "unscented" => Ok(Method::Sigma(SigmaScheme::unscented())),
            other => {
                let order = other
                    .strip_prefix("gh:")
                    .and_then(|o| o.parse::<usize>().ok())
                    .filter(|&o| o > 0)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown linearizer '{s}'")))?;
                Ok(Method::Sigma(SigmaScheme::GaussHermite { order }))
            }
        }
    }
}

/// A [`Method`] prepared for a given state dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum Linearizer {
    Taylor,
    Sigma(SigmaRule),
}

impl Linearizer {
    pub fn new(method: Method, state_dim: usize) -> Result<Self> {
        match method {
            Method::Taylor => Ok(Linearizer::Taylor),
            Method::Sigma(scheme) => Ok(Linearizer::Sigma(scheme.rule(state_dim)?)),
        }
    }
}

/// Affine-Gaussian approximation of one conditional. `map.noise` is `Λ`
/// (standard) or its lower factor `S_Λ` (square-root). `clipped` records
/// that negative eigenvalues of a standard-form `Λ` were set to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedStep<T: Real> {
    pub map: AffineMap<T>,
    pub clipped: bool,
}

/// First-order Taylor expansion about `m` in covariance form.
pub fn taylor_std<T: Real, C: Conditional<T> + ?Sized>(
    cond: &C,
    m: &DVector<T>,
) -> Result<LinearizedStep<T>> {
    let (f, c, s) = taylor_parts(cond, m)?;
    Ok(LinearizedStep {
        map: AffineMap::new(f, c, symmetrize(&(&s * s.transpose()))),
        clipped: false,
    })
}

/// First-order Taylor expansion about `m` in factor form.
pub fn taylor_sqrt<T: Real, C: Conditional<T> + ?Sized>(
    cond: &C,
    m: &DVector<T>,
) -> Result<LinearizedStep<T>> {
    let (f, c, s) = taylor_parts(cond, m)?;
    Ok(LinearizedStep {
        map: AffineMap::new(f, c, s),
        clipped: false,
    })
}

fn taylor_parts<T: Real, C: Conditional<T> + ?Sized>(
    cond: &C,
    m: &DVector<T>,
) -> Result<(DMatrix<T>, DVector<T>, DMatrix<T>)> {
    let f = cond.jacobian(m)?;
    let c = cond.mean(m)? - &f * m;
    let s = cond.chol(m)?;
    Ok((f, c, s))
}

struct SigmaMoments<T: Real> {
    f: DMatrix<T>,
    c: DVector<T>,
    // F N = Σ w^c (Z_i − z̄) ξ_iᵀ
    fn_: DMatrix<T>,
    // columns √w^c_i (Z_i − z̄)
    zx: DMatrix<T>,
    // √w^c_i S_i
    weighted_chols: Vec<DMatrix<T>>,
}

fn sigma_moments<T: Real, C: Conditional<T> + ?Sized>(
    cond: &C,
    m: &DVector<T>,
    n_fac: &DMatrix<T>,
    rule: &SigmaRule,
) -> Result<SigmaMoments<T>> {
    let nx = m.len();
    if rule.dim() != nx || n_fac.shape() != (nx, nx) {
        return Err(Error::Dimension(format!(
            "sigma rule of dimension {} for a {nx}-dimensional reference",
            rule.dim()
        )));
    }
    let xi: DMatrix<T> = rule.points.map(T::from_f64);
    let spread = n_fac * &xi;
    let s = rule.len();
    let mut zs = Vec::with_capacity(s);
    let mut weighted_chols = Vec::with_capacity(s);
    for i in 0..s {
        let x = m + spread.column(i);
        zs.push(cond.mean(&x)?);
        weighted_chols.push(cond.chol(&x)? * T::from_f64(rule.wc[i].sqrt()));
    }
    let nz = zs[0].len();
    let mut zbar = DVector::<T>::zeros(nz);
    for (z, &w) in zs.iter().zip(&rule.wm) {
        zbar += z * T::from_f64(w);
    }
    let mut zx = DMatrix::<T>::zeros(nz, s);
    let mut fn_ = DMatrix::<T>::zeros(nz, nx);
    for i in 0..s {
        let dz = &zs[i] - &zbar;
        zx.set_column(i, &(&dz * T::from_f64(rule.wc[i].sqrt())));
        fn_ += (&dz * T::from_f64(rule.wc[i])) * xi.column(i).transpose();
    }
    let f = right_solve_lower(&fn_, n_fac)?;
    let c = &zbar - &f * m;
    Ok(SigmaMoments {
        f,
        c,
        fn_,
        zx,
        weighted_chols,
    })
}

/// Sigma-point regression against `N(m, N Nᵀ)` in covariance form.
/// `Λ = Σ w^c S_i S_iᵀ + Z_x Z_xᵀ − F P Fᵀ`, symmetrized and projected onto
/// the positive semidefinite cone.
pub fn sigma_std<T: Real, C: Conditional<T> + ?Sized>(
    cond: &C,
    m: &DVector<T>,
    n_fac: &DMatrix<T>,
    rule: &SigmaRule,
) -> Result<LinearizedStep<T>> {
    let mo = sigma_moments(cond, m, n_fac, rule)?;
    let mut lambda = &mo.zx * mo.zx.transpose() - &mo.fn_ * mo.fn_.transpose();
    for s in &mo.weighted_chols {
        lambda += s * s.transpose();
    }
    let (lambda, clipped) = clip_to_psd(&lambda);
    Ok(LinearizedStep {
        map: AffineMap::new(mo.f, mo.c, lambda),
        clipped,
    })
}

/// Sigma-point regression against `N(m, N Nᵀ)` in factor form:
/// `S_Λ = DownDate(Tria(√w^c_1 S_1, …, √w^c_s S_s, Z_x), F N)`.
pub fn sigma_sqrt<T: Real, C: Conditional<T> + ?Sized>(
    cond: &C,
    m: &DVector<T>,
    n_fac: &DMatrix<T>,
    rule: &SigmaRule,
) -> Result<LinearizedStep<T>> {
    let mo = sigma_moments(cond, m, n_fac, rule)?;
    let mut blocks: Vec<&DMatrix<T>> = mo.weighted_chols.iter().collect();
    blocks.push(&mo.zx);
    let s_prime = tria(&hstack(&blocks));
    let s_lambda = cholesky_downdate(&s_prime, &mo.fn_)?;
    Ok(LinearizedStep {
        map: AffineMap::new(mo.f, mo.c, s_lambda),
        clipped: false,
    })
}

/// Linearizes `cond` about the reference `N(mean, ·)`, where `cov` is the
/// covariance in standard mode and its lower factor in square-root mode.
pub fn linearize<T: Real, C: Conditional<T> + ?Sized>(
    cond: &C,
    linearizer: &Linearizer,
    mode: Mode,
    mean: &DVector<T>,
    cov: &DMatrix<T>,
) -> Result<LinearizedStep<T>> {
    match (linearizer, mode) {
        (Linearizer::Taylor, Mode::Standard) => taylor_std(cond, mean),
        (Linearizer::Taylor, Mode::SquareRoot) => taylor_sqrt(cond, mean),
        (Linearizer::Sigma(rule), Mode::Standard) => {
            sigma_std(cond, mean, &cholesky_or_tria(cov)?, rule)
        }
        (Linearizer::Sigma(rule), Mode::SquareRoot) => sigma_sqrt(cond, mean, cov, rule),
    }
}
