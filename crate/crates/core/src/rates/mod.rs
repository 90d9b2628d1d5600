//! Decay-rate fits, convergence and memory-loss experiments, and the
//! convolution sequence bound.

mod sequence;

pub use sequence::{
    c_beta_gamma, c_prime, verify_sequence_lemma, RepairedCheck, SequenceBound, SequenceReport,
};

use std::sync::Arc;

use serde::Serialize;

use crate::density::{cone_membership, ConeParams, Density};
use crate::map_family::{Family, MapSpec};
use crate::transfer::{apply_transfer, iterate_direct, TransferContext};
use crate::{Error, Result, Scalar};

/// Least-squares line through `(log n, log d_n)` for `n` in the inclusive
/// window. Returns `(exponent, constant)` with `d_n ≈ constant · n^exponent`.
pub fn fit_decay_exponent<T: Scalar>(
    distances: &[(usize, T)],
    window: (usize, usize),
) -> Result<(T, T)> {
    let pts: Vec<(T, T)> = distances
        .iter()
        .filter(|(n, _)| *n >= window.0 && *n <= window.1 && *n > 0)
        .map(|&(n, d)| {
            if d > T::zero() {
                Ok((T::from_usize_lossy(n).ln(), d.ln()))
            } else {
                Err(Error::InvalidParameter {
                    name: "distances",
                    reason: format!("d_{n} = {d} is not positive"),
                })
            }
        })
        .collect::<Result<_>>()?;
    if pts.len() < 5 {
        return Err(Error::TooFewPoints {
            needed: 5,
            got: pts.len(),
        });
    }
    let m = T::from_usize_lossy(pts.len());
    let mx = pts.iter().map(|p| p.0).sum::<T>() / m;
    let my = pts.iter().map(|p| p.1).sum::<T>() / m;
    let sxy: T = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: T = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    Ok((slope, (my - slope * mx).exp()))
}

/// Constant `C` of `d_n ≈ C n^b` with `b` fixed, by least squares in log space.
fn fit_constant<T: Scalar>(distances: &[(usize, T)], window: (usize, usize), b: T) -> Result<T> {
    let logs: Vec<T> = distances
        .iter()
        .filter(|(n, d)| *n >= window.0 && *n <= window.1 && *n > 0 && *d > T::zero())
        .map(|&(n, d)| d.ln() - b * T::from_usize_lossy(n).ln())
        .collect();
    if logs.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    Ok((logs.iter().copied().sum::<T>() / T::from_usize_lossy(logs.len())).exp())
}

/// Fit-front, verify-back check of `d_n ≤ C n^b`.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport<T> {
    pub distances: Vec<(usize, T)>,
    pub fit_window: (usize, usize),
    pub fitted_exponent: T,
    pub fitted_constant: T,
    /// `b = 1 − 1/γ`
    pub bound_exponent: T,
    /// `C`, fitted on the front window with the exponent fixed to `b`
    pub bound_constant: T,
    pub front_window: (usize, usize),
    pub back_window: (usize, usize),
    /// largest `d_n / (C n^b)` over the back window
    pub worst_back_ratio: T,
    pub bound_satisfied: bool,
}

/// Back-window points may exceed the fitted bound by this factor.
pub const BOUND_SLACK: f64 = 1.2;

impl<T: Scalar> ConvergenceReport<T> {
    pub fn evaluate(
        distances: Vec<(usize, T)>,
        fit_window: (usize, usize),
        bound_exponent: T,
        front_window: (usize, usize),
        back_window: (usize, usize),
    ) -> Result<Self> {
        let (fitted_exponent, fitted_constant) = fit_decay_exponent(&distances, fit_window)?;
        let bound_constant = fit_constant(&distances, front_window, bound_exponent)?;
        let mut worst = T::zero();
        for &(n, d) in &distances {
            if n >= back_window.0 && n <= back_window.1 && n > 0 {
                worst =
                    worst.max(d / (bound_constant * T::from_usize_lossy(n).powf(bound_exponent)));
            }
        }
        Ok(ConvergenceReport {
            distances,
            fit_window,
            fitted_exponent,
            fitted_constant,
            bound_exponent,
            bound_constant,
            front_window,
            back_window,
            worst_back_ratio: worst,
            bound_satisfied: worst <= T::lit(BOUND_SLACK),
        })
    }

    /// `n,d_n,bound` rows with the fitted bound `C n^b`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,d_n,bound\n");
        for &(n, d) in &self.distances {
            let bound =
                self.bound_constant * T::from_usize_lossy(n.max(1)).powf(self.bound_exponent);
            s.push_str(&format!("{n},{d:e},{bound:e}\n"));
        }
        s
    }
}

/// Windows of a study: `(fit, front, back)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StudyWindows {
    pub fit: (usize, usize),
    pub front: (usize, usize),
    pub back: (usize, usize),
}

impl StudyWindows {
    /// Front third from `n = 10`, back two thirds, fit over everything from 10.
    pub fn thirds(n: usize) -> Self {
        let split = (n / 3).max(11);
        StudyWindows {
            fit: (10, n),
            front: (10, split),
            back: (split, n),
        }
    }
}

/// `d_n = ‖h_n − h_{n+1}‖₁` along the self-consistent iteration from `h0`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study<T: Scalar>(
    h0: &Density<T>,
    n: usize,
    family: Family,
    gamma_star: T,
    epsilon: T,
    bound_exponent: T,
    windows: StudyWindows,
) -> Result<ConvergenceReport<T>> {
    let run = iterate_direct(h0, n, family, gamma_star, epsilon, None)?;
    let distances = run.residuals.into_iter().enumerate().collect();
    ConvergenceReport::evaluate(
        distances,
        windows.fit,
        bound_exponent,
        windows.front,
        windows.back,
    )
}

/// `‖L_{εh_n} ⋯ L_{εh_1} (f − g)‖₁` for `n = 1..=steps`, cycling through
/// `h_sequence`. `f` and `g` must lie in `D^1_1` for `cone`.
#[allow(clippy::too_many_arguments)]
pub fn memory_loss_experiment<T: Scalar>(
    f: &Density<T>,
    g: &Density<T>,
    h_sequence: &[Density<T>],
    steps: usize,
    family: Family,
    gamma_star: T,
    epsilon: T,
    cone: &ConeParams<T>,
    windows: StudyWindows,
) -> Result<ConvergenceReport<T>> {
    if h_sequence.is_empty() {
        return Err(Error::InvalidParameter {
            name: "h_sequence",
            reason: "empty".into(),
        });
    }
    for (name, d) in [("f", f), ("g", g)] {
        if !cone_membership(d, cone, 1)?.pass {
            return Err(Error::InvalidParameter {
                name,
                reason: "not in the cone D^1_1".into(),
            });
        }
    }
    let grid: &Arc<_> = f.grid();
    let ctxs: Vec<TransferContext<T>> = h_sequence
        .iter()
        .map(|h| {
            let (s, c) = h.coupling_functionals(family);
            Ok(TransferContext::new(
                MapSpec::new(family, gamma_star, epsilon, s, c)?,
                grid.clone(),
            ))
        })
        .collect::<Result<_>>()?;
    let (mut a, mut b) = (f.clone(), g.clone());
    let mut distances = Vec::with_capacity(steps);
    for k in 1..=steps {
        let ctx = &ctxs[(k - 1) % ctxs.len()];
        a = apply_transfer(ctx, &a)?;
        b = apply_transfer(ctx, &b)?;
        distances.push((k, a.l1_distance(&b)?));
    }
    ConvergenceReport::evaluate(
        distances,
        windows.fit,
        T::one() - T::one() / gamma_star,
        windows.front,
        windows.back,
    )
}

/// True when `d_n` never grows by more than `tol` from one step to the next.
pub fn is_nonincreasing<T: Scalar>(distances: &[(usize, T)], tol: T) -> bool {
    distances.windows(2).all(|w| w[1].1 <= w[0].1 + tol)
}
