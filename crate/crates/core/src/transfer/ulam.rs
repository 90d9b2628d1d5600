//! Coarse Ulam discretization, kept only as an independent cross-check of the
//! pointwise operator.

use serde::Serialize;

use crate::density::Density;
use crate::map_family::{Branch, MapSpec};
use crate::{Error, Result, Scalar};

const MAX_CELLS: usize = 512;

/// Stationary vector of the Ulam chain on `m` uniform cells.
#[derive(Clone, Debug, Serialize)]
pub struct UlamChain<T> {
    pub m: usize,
    /// probability of each cell
    pub cell_mass: Vec<T>,
}

impl<T: Scalar> UlamChain<T> {
    /// `Σ_j |p_j − ∫_{cell j} h|`.
    pub fn l1_distance_to(&self, h: &Density<T>) -> Result<T> {
        let cum = h.cumulative()?;
        let m = T::from_usize_lossy(self.m);
        let mut prev = T::zero();
        let mut total = T::zero();
        for (j, &p) in self.cell_mass.iter().enumerate() {
            let right = h.cdf_with(&cum, T::from_usize_lossy(j + 1) / m);
            total += (p - (right - prev)).abs();
            prev = right;
        }
        Ok(total)
    }
}

/// Builds the chain with `P_ij = |cell_i ∩ T^{-1} cell_j| / |cell_i|` and solves
/// for its stationary vector by GTH elimination.
pub fn ulam_invariant<T: Scalar>(spec: &MapSpec<T>, m: usize) -> Result<UlamChain<T>> {
    if !(2..=MAX_CELLS).contains(&m) {
        return Err(Error::InvalidParameter {
            name: "m",
            reason: format!("{m} not in 2..={MAX_CELLS}"),
        });
    }
    let mf = T::from_usize_lossy(m);
    let mut p = vec![T::zero(); m * m];
    for branch in [Branch::Left, Branch::Right] {
        let cuts: Vec<T> = (0..=m)
            .map(|j| {
                let y = T::from_usize_lossy(j) / mf;
                spec.branch_inverse(branch, y)
            })
            .collect::<Result<_>>()?;
        for j in 0..m {
            let (a, b) = (cuts[j], cuts[j + 1]);
            let first = (a * mf).floor().to_usize().unwrap_or(0).min(m - 1);
            let last = (b * mf).ceil().to_usize().unwrap_or(m).min(m);
            for i in first..last {
                let lo = T::from_usize_lossy(i) / mf;
                let hi = T::from_usize_lossy(i + 1) / mf;
                let overlap = b.min(hi) - a.max(lo);
                if overlap > T::zero() {
                    p[i * m + j] += overlap * mf;
                }
            }
        }
    }
    Ok(UlamChain {
        m,
        cell_mass: gth_stationary(p, m),
    })
}

/// Grassmann–Taksar–Heyman elimination; subtraction free, so it stays accurate
/// for the nearly reducible chains produced near an indifferent fixed point.
fn gth_stationary<T: Scalar>(mut p: Vec<T>, m: usize) -> Vec<T> {
    for k in (1..m).rev() {
        let s: T = (0..k).map(|j| p[k * m + j]).sum();
        for i in 0..k {
            p[i * m + k] /= s;
        }
        for i in 0..k {
            let pik = p[i * m + k];
            if pik == T::zero() {
                continue;
            }
            for j in 0..k {
                let pkj = p[k * m + j];
                if pkj != T::zero() {
                    p[i * m + j] += pik * pkj;
                }
            }
        }
    }
    let mut pi = vec![T::zero(); m];
    pi[0] = T::one();
    for k in 1..m {
        pi[k] = (0..k).map(|i| pi[i] * p[i * m + k]).sum();
    }
    let total: T = pi.iter().copied().sum();
    pi.iter().map(|&v| v / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_map_like_chain_is_uniform() {
        // γ* small: nearly the doubling map away from 0, stationary law close to uniform
        let chain = ulam_invariant(&MapSpec::unperturbed(1e-6).unwrap(), 64).unwrap();
        assert!((chain.cell_mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for &p in &chain.cell_mass {
            assert!((p * 64.0 - 1.0).abs() < 1e-3, "{p}");
        }
    }

    #[test]
    fn gth_two_state() {
        let pi = gth_stationary(vec![0.9_f64, 0.1, 0.5, 0.5], 2);
        assert!((pi[0] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_large_chains() {
        assert!(ulam_invariant(&MapSpec::unperturbed(0.5).unwrap(), 1024).is_err());
    }
}
