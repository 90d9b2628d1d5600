//! Finite mean-field particle system
//! `x_k ↦ T(x_k, ε (δ_{x_1} + … + δ_{x_N}) / N)`.
//!
//! Updates are synchronous: the coupling is computed from the current state,
//! then every particle moves under that one map. The coupling reductions use
//! compensated sums over fixed chunks combined in chunk order, so results do
//! not depend on the number of threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::Density;
use crate::map_family::{Family, MapSpec};
use crate::{Error, Result, Scalar};

const CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble<T> {
    positions: Vec<T>,
    rng_seed: u64,
    step_count: u64,
}

/// Coupling observed at one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CouplingSample<T> {
    pub step: u64,
    pub s: T,
    pub c: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistogramBin<T> {
    pub left: T,
    pub right: T,
    pub count: u64,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new(positions: Vec<T>, rng_seed: u64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParameter {
                name: "positions",
                reason: "empty ensemble".into(),
            });
        }
        if let Some(&x) = positions
            .iter()
            .find(|&&x| !(x >= T::zero() && x < T::one()))
        {
            return Err(Error::OutOfDomain(x.to_f64_lossy()));
        }
        Ok(Ensemble {
            positions,
            rng_seed,
            step_count: 0,
        })
    }

    /// `n` i.i.d. draws from `h` by inverse-CDF sampling.
    pub fn sample_from_density(h: &Density<T>, n: usize, seed: u64) -> Result<Self> {
        let sampler = InverseCdf::new(h)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| sampler.sample(T::lit(rng.gen::<f64>())))
            .collect();
        Self::new(positions, seed)
    }

    /// `n` i.i.d. uniform draws.
    pub fn uniform(n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| T::lit(rng.gen::<f64>()).min(below_one()))
            .collect();
        Self::new(positions, seed)
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Mean-state coupling scalars: `(mean sin 2πx, mean cos 2πx)`, or
    /// `(mean sin πx, 0)` for the remark family.
    pub fn empirical_coupling(&self, family: Family) -> (T, T) {
        let (omega, want_cos) = match family {
            Family::CoupledPm => (T::PI() + T::PI(), true),
            Family::RemarkPm => (T::PI(), false),
        };
        let partials: Vec<(Kahan<T>, Kahan<T>)> = self
            .positions
            .par_chunks(CHUNK)
            .map(|chunk| {
                let (mut s, mut c) = (Kahan::default(), Kahan::default());
                for &x in chunk {
                    let (sn, cs) = (omega * x).sin_cos();
                    s.add(sn);
                    if want_cos {
                        c.add(cs);
                    }
                }
                (s, c)
            })
            .collect();
        let (mut s, mut c) = (Kahan::default(), Kahan::default());
        for (ps, pc) in partials {
            s.add(ps.sum);
            s.add(ps.comp_neg());
            c.add(pc.sum);
            c.add(pc.comp_neg());
        }
        let n = T::from_usize_lossy(self.positions.len());
        (s.sum / n, c.sum / n)
    }

    /// The map all particles share at the next step.
    pub fn current_map(&self, gamma_star: T, epsilon: T, family: Family) -> Result<MapSpec<T>> {
        let (s, c) = self.empirical_coupling(family);
        MapSpec::new(family, gamma_star, epsilon, s, c)
    }

    /// One synchronous step in place; returns the map that was applied.
    pub fn advance(&mut self, gamma_star: T, epsilon: T, family: Family) -> Result<MapSpec<T>> {
        let spec = self.current_map(gamma_star, epsilon, family)?;
        self.positions
            .par_iter_mut()
            .for_each(|x| *x = spec.eval(*x).min(below_one()));
        self.step_count += 1;
        Ok(spec)
    }

    /// Runs `steps` steps, recording the coupling every `record_every` steps
    /// (never when `record_every` is 0).
    pub fn run(
        &mut self,
        steps: u64,
        gamma_star: T,
        epsilon: T,
        family: Family,
        record_every: u64,
    ) -> Result<Vec<CouplingSample<T>>> {
        let mut series = Vec::new();
        for _ in 0..steps {
            let record = record_every > 0 && self.step_count.is_multiple_of(record_every);
            let spec = self.advance(gamma_star, epsilon, family)?;
            if record {
                series.push(CouplingSample {
                    step: self.step_count - 1,
                    s: spec.s_h(),
                    c: spec.c_h(),
                });
            }
        }
        Ok(series)
    }

    /// Kolmogorov–Smirnov distance between the empirical law and `∫_0^x h`
    /// (`h` normalized to unit mass).
    pub fn ks_distance(&self, h: &Density<T>) -> Result<T> {
        let cum = h.cumulative()?;
        let total = cum[cum.len() - 1];
        let mut xs = self.positions.clone();
        xs.sort_by(|a, b| a.partial_cmp(b).expect("positions are finite"));
        let n = T::from_usize_lossy(xs.len());
        let mut worst = T::zero();
        for (i, &x) in xs.iter().enumerate() {
            let f = h.cdf_with(&cum, x) / total;
            let below = T::from_usize_lossy(i) / n;
            let above = T::from_usize_lossy(i + 1) / n;
            worst = worst.max((f - below).abs()).max((above - f).abs());
        }
        Ok(worst.min(T::one()))
    }

    /// Counts on `bins` equal bins of `[0, 1)`.
    pub fn histogram(&self, bins: usize) -> Vec<HistogramBin<T>> {
        let bins = bins.max(1);
        let mut counts = vec![0u64; bins];
        let b = T::from_usize_lossy(bins);
        for &x in &self.positions {
            let k = (x * b).floor().to_usize().unwrap_or(0).min(bins - 1);
            counts[k] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(k, count)| HistogramBin {
                left: T::from_usize_lossy(k) / b,
                right: T::from_usize_lossy(k + 1) / b,
                count,
            })
            .collect()
    }
}

pub fn empirical_coupling<T: Scalar>(e: &Ensemble<T>, family: Family) -> (T, T) {
    e.empirical_coupling(family)
}

/// Synchronous step returning the new state.
pub fn ensemble_step<T: Scalar>(
    e: &Ensemble<T>,
    gamma_star: T,
    epsilon: T,
    family: Family,
) -> Result<Ensemble<T>> {
    let mut next = e.clone();
    next.advance(gamma_star, epsilon, family)?;
    Ok(next)
}

pub fn ks_distance<T: Scalar>(e: &Ensemble<T>, h: &Density<T>) -> Result<T> {
    e.ks_distance(h)
}

fn below_one<T: Scalar>() -> T {
    T::one() - T::epsilon() * T::lit(0.5)
}

#[derive(Clone, Copy, Debug, Default)]
struct Kahan<T> {
    sum: T,
    comp: T,
}

impl<T: Scalar> Kahan<T> {
    fn add(&mut self, v: T) {
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    fn comp_neg(&self) -> T {
        -self.comp
    }
}

/// Inverse of the cumulative distribution of a density, cell by cell with the
/// same model as its quadrature.
struct InverseCdf<'a, T> {
    h: &'a Density<T>,
    cum: Vec<T>,
}

impl<'a, T: Scalar> InverseCdf<'a, T> {
    fn new(h: &'a Density<T>) -> Result<Self> {
        let cum = h.cumulative()?;
        if !(cum[cum.len() - 1] > T::zero()) {
            return Err(Error::InvalidDensity {
                x: 0.0,
                value: 0.0,
                requirement: "of positive total mass",
            });
        }
        Ok(InverseCdf { h, cum })
    }

    fn sample(&self, u: T) -> T {
        let nodes = self.h.grid().nodes();
        let values = self.h.values();
        let target = u * self.cum[self.cum.len() - 1];
        let x = if target <= self.cum[0] {
            let p1 = T::one() + self.h.tail_exponent();
            if self.cum[0] > T::zero() {
                nodes[0] * (target / self.cum[0]).powf(T::one() / p1)
            } else {
                nodes[0]
            }
        } else {
            let j = (self.cum.partition_point(|&c| c < target)).clamp(1, nodes.len() - 1) - 1;
            let (a, b) = (nodes[j], nodes[j + 1]);
            let (ga, gb) = (values[j], values[j + 1]);
            let rest = target - self.cum[j];
            let x = if ga > T::zero() && gb > T::zero() {
                // a g_a (e^{(1+p) r} − 1)/(1+p) = rest
                let p1 = T::one() + (gb / ga).ln() / (b / a).ln();
                let z = rest / (a * ga);
                let r = if p1.abs() < T::lit(1e-12) {
                    z
                } else {
                    (z * p1).ln_1p() / p1
                };
                a * r.exp()
            } else {
                // linear cell: g_a t + (g_b − g_a) t²/(2h) = rest
                let h = b - a;
                let slope = (gb - ga) / h;
                let t = if slope.abs() < T::epsilon() {
                    rest / ga.max(T::min_positive_value())
                } else {
                    let disc = (ga * ga + T::lit(2.0) * slope * rest).max(T::zero());
                    T::lit(2.0) * rest / (ga + disc.sqrt())
                };
                a + t
            };
            x.max(a).min(b)
        };
        x.min(below_one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GradedGrid;
    use std::sync::Arc;

    #[test]
    fn coupling_examples() {
        let e = Ensemble::new(vec![0.0_f64; 10], 0).unwrap();
        assert_eq!(e.empirical_coupling(Family::CoupledPm), (0.0, 1.0));
        let q = Ensemble::new(vec![0.25_f64; 7], 0).unwrap();
        let (s, c) = q.empirical_coupling(Family::CoupledPm);
        assert!((s - 1.0).abs() < 1e-15 && c.abs() < 1e-15);
        let (s, c) = q.empirical_coupling(Family::RemarkPm);
        assert!((s - (std::f64::consts::PI / 4.0).sin()).abs() < 1e-15 && c == 0.0);
    }

    #[test]
    fn uniform_coupling_is_small() {
        let n = 1_000_000;
        for seed in 0..3 {
            let e = Ensemble::<f64>::uniform(n, seed).unwrap();
            let (s, c) = e.empirical_coupling(Family::CoupledPm);
            let bound = 3.0 / (n as f64).sqrt();
            assert!(s.abs() < bound && c.abs() < bound, "seed {seed}: {s} {c}");
        }
    }

    #[test]
    fn single_particle_follows_the_map() {
        let mut e = Ensemble::new(vec![0.3_f64], 1).unwrap();
        let spec = MapSpec::unperturbed(0.5).unwrap();
        let mut x = 0.3;
        for _ in 0..50 {
            e.advance(0.5, 0.0, Family::CoupledPm).unwrap();
            x = spec.eval(x);
            assert_eq!(e.positions()[0], x);
        }
        assert_eq!(e.step_count(), 50);
    }

    #[test]
    fn degenerate_stays_degenerate() {
        let e = Ensemble::new(vec![0.42_f64; 5], 1).unwrap();
        let next = ensemble_step(&e, 0.5, 0.05, Family::CoupledPm).unwrap();
        assert!(next.positions().iter().all(|&x| x == next.positions()[0]));
    }

    #[test]
    fn ks_examples() {
        let g = Arc::new(GradedGrid::new(256, 3.0).unwrap());
        let uniform = Density::constant(g.clone(), 1.0).unwrap();
        let e = Ensemble::new(vec![0.5_f64], 0).unwrap();
        assert!((e.ks_distance(&uniform).unwrap() - 0.5).abs() < 1e-12);
        let h = Density::from_fn(
            Arc::new(GradedGrid::for_exponent(4096, 0.5).unwrap()),
            |x: f64| 0.5 * x.powf(-0.5),
        )
        .unwrap();
        let s = Ensemble::sample_from_density(&h, 100_000, 3).unwrap();
        assert!(s.ks_distance(&h).unwrap() < 0.01);
    }

    #[test]
    fn inverse_cdf_round_trip() {
        let h = Density::from_fn(
            Arc::new(GradedGrid::<f64>::for_exponent(512, 0.5).unwrap()),
            |x| x.powf(-0.4) * (1.0 + 0.5 * (5.0 * x).sin()),
        )
        .unwrap();
        let inv = InverseCdf::new(&h).unwrap();
        let total = inv.cum[inv.cum.len() - 1];
        for k in 1..200 {
            let u = k as f64 / 200.0;
            let x = inv.sample(u);
            assert!((h.cdf_with(&inv.cum, x) / total - u).abs() < 1e-10, "u {u}");
        }
    }

    #[test]
    fn histogram_counts_everything() {
        let e = Ensemble::<f64>::uniform(1000, 9).unwrap();
        let hist = e.histogram(10);
        assert_eq!(hist.iter().map(|b| b.count).sum::<u64>(), 1000);
        assert_eq!(hist[3].left, 0.3);
    }

    #[test]
    fn invalid_positions() {
        assert!(Ensemble::new(Vec::<f64>::new(), 0).is_err());
        assert!(Ensemble::new(vec![1.0_f64], 0).is_err());
    }
}
