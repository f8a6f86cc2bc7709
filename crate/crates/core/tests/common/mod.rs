#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use parsmooth::kalman::{AffineMap, AffineModel, Mode};
use parsmooth::models::{random_lgssm, LinearGaussian, RandomLgssmSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| {
        let u: f64 = rng.random_range(-1.0..1.0);
        let v: f64 = rng.random_range(-1.0..1.0);
        u + v
    })
}

pub fn lgssm(seed: u64, nx: usize, ny: usize) -> LinearGaussian<f64> {
    random_lgssm(&RandomLgssmSpec {
        nx,
        ny,
        seed,
        ..Default::default()
    })
    .unwrap()
}

/// Time-varying random affine model with positive definite noises.
pub fn random_affine(rng: &mut ChaCha8Rng, nx: usize, ny: usize, n: usize) -> AffineModel<f64> {
    let spd = |rng: &mut ChaCha8Rng, d: usize, scale: f64| {
        let a = gaussian(rng, d, d);
        (&a * a.transpose() + DMatrix::identity(d, d) * 0.1) * scale
    };
    let transitions = (0..n)
        .map(|_| {
            let f = gaussian(rng, nx, nx) * (0.5 / nx as f64);
            AffineMap::new(f, gaussian(rng, nx, 1).column(0).into(), spd(rng, nx, 0.3))
        })
        .collect();
    let observations = (0..n)
        .map(|_| {
            AffineMap::new(
                gaussian(rng, ny, nx),
                gaussian(rng, ny, 1).column(0).into(),
                spd(rng, ny, 0.2),
            )
        })
        .collect();
    AffineModel {
        mode: Mode::Standard,
        prior_mean: gaussian(rng, nx, 1).column(0).into(),
        prior_cov: spd(rng, nx, 1.0),
        transitions,
        observations,
    }
}

pub fn random_ys(rng: &mut ChaCha8Rng, ny: usize, n: usize) -> Vec<DVector<f64>> {
    (0..n).map(|_| gaussian(rng, ny, 1).column(0).into()).collect()
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / (1.0 + b.amax())
}

pub fn rel_err_v(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / (1.0 + b.amax())
}
