use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Poisson};

use super::{SimRng, Simulate};
use crate::error::{Error, Result};
use crate::estimation::ModelFamily;
use crate::gslr::StateSpaceModel;
use crate::real::Real;

/// Stochastic Ricker population model on the log scale:
///
/// `x_k = log a + x_{k−1} − exp(x_{k−1}) + q_k`, `q_k ~ N(0, Q)`,
/// `y_k | x_k ~ Poisson(b exp(x_k))`, `x₀ = log c`.
///
/// The Poisson observation is represented by its first two conditional
/// moments (mean and variance both `b eˣ`). The point-mass initial state is
/// replaced by `N(log c, prior_var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ricker<T: Real> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub q: T,
    pub prior_var: T,
}

impl<T: Real> Default for Ricker<T> {
    fn default() -> Self {
        Ricker {
            a: T::from_f64(44.7),
            b: T::from_f64(10.0),
            c: T::from_f64(7.0),
            q: T::from_f64(0.3 * 0.3),
            prior_var: T::from_f64(1e-12),
        }
    }
}

impl<T: Real> Ricker<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("Q", self.q),
            ("prior variance", self.prior_var),
        ] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("Ricker {name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Ricker<U> {
        let c = |v: T| U::from_f64(v.to_f64());
        Ricker {
            a: c(self.a),
            b: c(self.b),
            c: c(self.c),
            q: c(self.q),
            prior_var: c(self.prior_var),
        }
    }
}

fn scalar<T: Real>(v: T) -> DMatrix<T> {
    DMatrix::from_element(1, 1, v)
}

impl<T: Real> StateSpaceModel<T> for Ricker<T> {
    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn prior(&self) -> Result<(DVector<T>, DMatrix<T>)> {
        Ok((
            DVector::from_element(1, self.c.ln()),
            scalar(self.prior_var.sqrt()),
        ))
    }

    fn transition_mean(&self, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(DVector::from_element(1, self.a.ln() + x[0] - x[0].exp()))
    }

    fn transition_chol(&self, _x: &DVector<T>) -> Result<DMatrix<T>> {
        Ok(scalar(self.q.sqrt()))
    }

    fn transition_jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        Ok(scalar(T::one() - x[0].exp()))
    }

    fn observation_mean(&self, x: &DVector<T>) -> Result<DVector<T>> {
        Ok(DVector::from_element(1, self.b * x[0].exp()))
    }

    fn observation_chol(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        Ok(scalar((self.b * x[0].exp()).sqrt()))
    }

    fn observation_jacobian(&self, x: &DVector<T>) -> Result<DMatrix<T>> {
        Ok(scalar(self.b * x[0].exp()))
    }
}

impl Simulate for Ricker<f64> {
    fn sample_observation(&self, x: &DVector<f64>, rng: &mut SimRng) -> Result<DVector<f64>> {
        let rate = self.b * x[0].exp();
        let dist = Poisson::new(rate)
            .map_err(|e| Error::InvalidArgument(format!("Poisson rate {rate}: {e}")))?;
        Ok(DVector::from_element(1, dist.sample(rng)))
    }
}

/// Ricker model parameterized by `θ = [log a]`, other parameters fixed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RickerLogAFamily {
    pub base: Ricker<f64>,
}

impl ModelFamily for RickerLogAFamily {
    type Model<T: Real> = Ricker<T>;

    fn dim(&self) -> usize {
        1
    }

    fn build<T: Real>(&self, theta: &[T]) -> Result<Ricker<T>> {
        let mut model = self.base.cast::<T>();
        model.a = theta[0].exp();
        Ok(model)
    }

    fn initial(&self) -> Vec<f64> {
        vec![self.base.a.ln()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gslr::{taylor_sqrt, taylor_std, TransitionOf};
    use crate::models::simulate;

    #[test]
    fn taylor_at_log_seven() {
        let model = Ricker::<f64>::default();
        let m = DVector::from_element(1, 7f64.ln());
        let lin = taylor_std(&TransitionOf(&model), &m).unwrap();
        let f = 1.0 - 7.0;
        assert!((lin.map.matrix[(0, 0)] - f).abs() < 1e-12);
        let c = 44.7f64.ln() + 7f64.ln() - 7.0 - f * 7f64.ln();
        assert!((lin.map.offset[0] - c).abs() < 1e-12);
        let sq = taylor_sqrt(&TransitionOf(&model), &m).unwrap();
        assert!((sq.map.noise[(0, 0)] - 0.3).abs() < 1e-15);
        assert!((lin.map.noise[(0, 0)] - 0.09).abs() < 1e-15);
    }

    #[test]
    fn observation_mean_at_zero_is_b() {
        let model = Ricker::<f64>::default();
        assert_eq!(model.observation_mean(&DVector::zeros(1)).unwrap()[0], 10.0);
    }

    #[test]
    fn poisson_observations_have_mean_b() {
        let model = Ricker::<f64>::default();
        let mut rng = <SimRng as rand::SeedableRng>::seed_from_u64(11);
        let draws = 100_000;
        let x = DVector::zeros(1);
        let mean: f64 = (0..draws)
            .map(|_| model.sample_observation(&x, &mut rng).unwrap()[0])
            .sum::<f64>()
            / draws as f64;
        // standard error √(b / draws)
        let se = (10.0 / draws as f64).sqrt();
        assert!((mean - 10.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn simulation_is_reproducible() {
        let model = Ricker::<f64>::default();
        let a = simulate(&model, 50, 3).unwrap();
        let b = simulate(&model, 50, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states.len(), 51);
        assert!(a.observations.iter().all(|y| y[0] >= 0.0 && y[0].fract() == 0.0));
    }

    #[test]
    fn invalid_parameters() {
        let mut model = Ricker::<f64>::default();
        model.b = -1.0;
        assert!(model.validate().is_err());
    }
}
