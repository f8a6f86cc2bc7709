use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use super::{SimRng, Simulate};
use crate::error::{Error, Result};
use crate::estimation::ModelFamily;
use crate::gslr::StateSpaceModel;
use crate::kalman::{AffineMap, AffineModel, Mode};
use crate::linalg::{square, symmetric_eigen};
use crate::real::Real;

/// Time-invariant linear-Gaussian model
/// `x_k = F x_{k−1} + c + L_Q q`, `y_k = H x_k + d + L_R r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian<T: Real> {
    pub f: DMatrix<T>,
    pub c: DVector<T>,
    pub q_chol: DMatrix<T>,
    pub h: DMatrix<T>,
    pub d: DVector<T>,
    pub r_chol: DMatrix<T>,
    pub prior_mean: DVector<T>,
    pub prior_chol: DMatrix<T>,
}

impl<T: Real> LinearGaussian<T> {
    pub fn cast<U: Real>(&self) -> LinearGaussian<U> {
        let c = |v: T| U::from_f64(v.to_f64());
        LinearGaussian {
            f: self.f.map(c),
            c: self.c.map(c),
            q_chol: self.q_chol.map(c),
            h: self.h.map(c),
            d: self.d.map(c),
            r_chol: self.r_chol.map(c),
            prior_mean: self.prior_mean.map(c),
            prior_chol: self.prior_chol.map(c),
        }
    }

    /// The same system as an [`AffineModel`] over `n` steps.
    pub fn to_affine(&self, mode: Mode, n: usize) -> AffineModel<T> {
        let noise = |l: &DMatrix<T>| match mode {
            Mode::Standard => square(l),
            Mode::SquareRoot => l.clone(),
        };
        AffineModel::time_invariant(
            mode,
            self.prior_mean.clone(),
            noise(&self.prior_chol),
            AffineMap::new(self.f.clone(), self.c.clone(), noise(&self.q_chol)),
            AffineMap::new(self.h.clone(), self.d.clone(), noise(&self.r_chol)),
            n,
        )
    }
}

impl<T: Real> StateSpaceModel<T> for LinearGaussian<T> {
    fn state_dim(&self) -> usize {
        self.f.nrows()
    }

    fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    fn prior(&self) -> Result<(DVector<T>, DMatrix<T>)> {
        Ok((self.prior_mean.clone(), self.prior_chol.clone()))
    }

    fn transition_mean(&self, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(&self.f * x + &self.c)
    }

    fn transition_chol(&self, _x: &DVector<T>) -> Result<DMatrix<T>> {
        Ok(self.q_chol.clone())
    }

    fn transition_jacobian(&self, _x: &DVector<T>) -> Result<DMatrix<T>> {
        Ok(self.f.clone())
    }

    fn observation_mean(&self, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(&self.h * x + &self.d)
    }

    fn observation_chol(&self, _x: &DVector<T>) -> Result<DMatrix<T>> {
        Ok(self.r_chol.clone())
    }

    fn observation_jacobian(&self, _x: &DVector<T>) -> Result<DMatrix<T>> {
        Ok(self.h.clone())
    }
}

impl Simulate for LinearGaussian<f64> {}

/// Parameters of [`random_lgssm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomLgssmSpec {
    pub nx: usize,
    pub ny: usize,
    pub seed: u64,
    /// Spectral norm of `F`, which bounds its spectral radius.
    pub spectral_norm: f64,
    pub process_scale: f64,
    pub observation_scale: f64,
}

impl Default for RandomLgssmSpec {
    fn default() -> Self {
        RandomLgssmSpec {
            nx: 3,
            ny: 2,
            seed: 0,
            spectral_norm: 0.9,
            process_scale: 0.5,
            observation_scale: 0.5,
        }
    }
}

fn gaussian_matrix(rng: &mut SimRng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

// Lower triangular with diagonal bounded away from zero.
fn random_factor(rng: &mut SimRng, n: usize, scale: f64) -> DMatrix<f64> {
    let mut l = gaussian_matrix(rng, n, n).lower_triangle() * 0.5;
    for i in 0..n {
        l[(i, i)] = 0.5 + l[(i, i)].abs();
    }
    l * scale
}

/// Largest singular value.
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = symmetric_eigen(&(m.transpose() * m));
    vals.iter().fold(0.0f64, |a, &v| a.max(v)).sqrt()
}

/// Random stable linear-Gaussian model with positive definite noises.
pub fn random_lgssm(spec: &RandomLgssmSpec) -> Result<LinearGaussian<f64>> {
    if spec.nx == 0 || spec.ny == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    if !(spec.spectral_norm > 0.0 && spec.spectral_norm < 1.0) {
        return Err(Error::InvalidArgument("spectral norm must lie in (0, 1)".into()));
    }
    let mut rng = SimRng::seed_from_u64(spec.seed);
    let (nx, ny) = (spec.nx, spec.ny);
    let raw = gaussian_matrix(&mut rng, nx, nx);
    let f = &raw * (spec.spectral_norm / spectral_norm(&raw));
    Ok(LinearGaussian {
        f,
        c: gaussian_matrix(&mut rng, nx, 1).column(0) * 0.1,
        q_chol: random_factor(&mut rng, nx, spec.process_scale),
        h: gaussian_matrix(&mut rng, ny, nx),
        d: gaussian_matrix(&mut rng, ny, 1).column(0) * 0.1,
        r_chol: random_factor(&mut rng, ny, spec.observation_scale),
        prior_mean: gaussian_matrix(&mut rng, nx, 1).column(0).into_owned(),
        prior_chol: random_factor(&mut rng, nx, 1.0),
    })
}

/// Linear-Gaussian model whose noise factors are scaled by `θ`:
/// `L_R = θ_last · base.r_chol` and, when `process` is set,
/// `L_Q = θ_0 · base.q_chol`.
#[derive(Debug, Clone, PartialEq)]
pub struct LgssmNoiseFamily {
    pub base: LinearGaussian<f64>,
    pub process: bool,
}

impl ModelFamily for LgssmNoiseFamily {
    type Model<T: Real> = LinearGaussian<T>;

    fn dim(&self) -> usize {
        1 + usize::from(self.process)
    }

    fn build<T: Real>(&self, theta: &[T]) -> Result<LinearGaussian<T>> {
        let mut model = self.base.cast::<T>();
        if self.process {
            model.q_chol *= theta[0];
        }
        model.r_chol *= theta[self.dim() - 1];
        Ok(model)
    }

    fn initial(&self) -> Vec<f64> {
        vec![1.0; self.dim()]
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(1e-3, 1e3); self.dim()]
    }
}
