//! Bundled state-space models and simulation.

mod coordinated_turn;
mod lgssm;
mod ricker;

pub use coordinated_turn::{CoordinatedTurn, CtObservationStdFamily};
pub use lgssm::{random_lgssm, LgssmNoiseFamily, LinearGaussian, RandomLgssmSpec};
pub use ricker::{Ricker, RickerLogAFamily};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::gslr::StateSpaceModel;

/// Random number generator used by all simulators.
pub type SimRng = ChaCha8Rng;

/// `mean + L z` with `z ~ N(0, I)`.
pub fn sample_gaussian(mean: &DVector<f64>, chol: &DMatrix<f64>, rng: &mut SimRng) -> DVector<f64> {
    let z = DVector::from_fn(chol.ncols(), |_, _| StandardNormal.sample(rng));
    mean + chol * z
}

/// Sampling interface. The defaults draw Gaussians from the conditional
/// moments; models with non-Gaussian noise override them.
pub trait Simulate: StateSpaceModel<f64> {
    fn sample_initial(&self, rng: &mut SimRng) -> Result<DVector<f64>> {
        let (m0, n0) = self.prior()?;
        Ok(sample_gaussian(&m0, &n0, rng))
    }

    fn sample_transition(&self, x: &DVector<f64>, rng: &mut SimRng) -> Result<DVector<f64>> {
        Ok(sample_gaussian(&self.transition_mean(x)?, &self.transition_chol(x)?, rng))
    }

    fn sample_observation(&self, x: &DVector<f64>, rng: &mut SimRng) -> Result<DVector<f64>> {
        Ok(sample_gaussian(&self.observation_mean(x)?, &self.observation_chol(x)?, rng))
    }
}

/// Simulated latent states `x_{0:n}` and measurements `y_{1:n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
}

/// Draws a trajectory of length `n`; the same seed always gives the same
/// output.
pub fn simulate<M: Simulate + ?Sized>(model: &M, n: usize, seed: u64) -> Result<Simulation> {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(n + 1);
    let mut observations = Vec::with_capacity(n);
    let mut x = model.sample_initial(&mut rng)?;
    states.push(x.clone());
    for _ in 0..n {
        x = model.sample_transition(&x, &mut rng)?;
        observations.push(model.sample_observation(&x, &mut rng)?);
        states.push(x.clone());
    }
    Ok(Simulation {
        states,
        observations,
    })
}
