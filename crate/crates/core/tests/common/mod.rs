#![allow(dead_code)]

use std::sync::Arc;

use intermittent::density::{ConeParams, Density, GradedGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn grid(n: usize) -> Arc<GradedGrid<f64>> {
    Arc::new(GradedGrid::for_exponent(n, 0.5).unwrap())
}

/// Cone constants for the default box `γ* = 0.5`, `ε* = 0.1`.
pub fn cone() -> ConeParams<f64> {
    ConeParams::fitted(0.7).unwrap()
}

/// `x^{-p} (1 + a sin(2π k x + φ))`, normalized.
pub fn wavy(grid: &Arc<GradedGrid<f64>>, p: f64, a: f64, k: f64, phi: f64) -> Density<f64> {
    Density::from_fn(grid.clone(), |x| {
        x.powf(-p) * (1.0 + a * (std::f64::consts::TAU * k * x + phi).sin())
    })
    .unwrap()
    .normalize()
    .unwrap()
}

/// Parameters of a random density from [`wavy`].
pub fn random_params(rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64) {
    (
        rng.gen_range(0.0..0.5),
        rng.gen_range(0.0..0.3),
        rng.gen_range(0.5..1.5),
        rng.gen_range(0.0..std::f64::consts::TAU),
    )
}

pub fn random_densities(grid: &Arc<GradedGrid<f64>>, n: usize, seed: u64) -> Vec<Density<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (p, a, k, phi) = random_params(&mut rng);
            wavy(grid, p, a, k, phi)
        })
        .collect()
}

/// Random coupling scalars of a probability density.
pub fn random_coupling(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))
}
