//! Cone conditions: derivative-ratio bounds `|g^(ℓ)|/g ≤ a_ℓ/χ_ℓ`,
//! normalization, and the tail bound `∫_0^x g ≤ A x^{1−γ}`.
//!
//! Derivatives are taken of `log g` against `log x` with the three-point
//! nonuniform stencil and converted back, which keeps the estimates exact for
//! power laws at the singular end of the grid.

use serde::Serialize;

use super::Density;
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConeParams<T> {
    pub r: usize,
    /// `a_1..=a_r`
    pub a: Vec<T>,
    /// tail constant `A`
    pub big_a: T,
    pub chi_star: T,
    pub gamma: T,
}

impl<T: Scalar> ConeParams<T> {
    pub fn new(a: Vec<T>, big_a: T, chi_star: T, gamma: T) -> Result<Self> {
        if a.is_empty() || a.iter().any(|&v| !(v > T::zero())) {
            return Err(Error::InvalidParameter {
                name: "a",
                reason: "all a_l must be positive".into(),
            });
        }
        if !(big_a > T::zero()) {
            return Err(Error::InvalidParameter {
                name: "A",
                reason: format!("{big_a} <= 0"),
            });
        }
        if !(chi_star > T::zero() && chi_star <= T::one()) {
            return Err(Error::InvalidParameter {
                name: "chi_star",
                reason: format!("{chi_star} not in (0, 1]"),
            });
        }
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("{gamma} not in (0, 1)"),
            });
        }
        Ok(ConeParams {
            r: a.len(),
            a,
            big_a,
            chi_star,
            gamma,
        })
    }

    /// Smallest `a_ℓ` admitting the reference density `(1−γ)x^{-γ}`:
    /// the rising factorial `γ(γ+1)…(γ+ℓ−1)`.
    pub fn reference_ratio(gamma: T, ell: usize) -> T {
        (0..ell).fold(T::one(), |acc, i| acc * (gamma + T::from_usize_lossy(i)))
    }

    /// The constants used throughout the crate for `r = 3`, `χ* = 1`.
    ///
    /// `a_ℓ = 8^ℓ · γ(γ+1)…(γ+ℓ−1)` and `A = 4`: the reference density sits at
    /// most at `1/8` of every derivative bound and at `1/4` of the tail bound.
    /// Calibrated against the stationary densities of the default parameter
    /// box and checked for invariance in the transfer tests.
    pub fn fitted(gamma: T) -> Result<Self> {
        let a = (1..=3)
            .map(|ell| T::lit(8f64.powi(ell as i32)) * Self::reference_ratio(gamma, ell))
            .collect();
        Self::new(a, T::lit(4.0), T::one(), gamma)
    }

    /// `χ_ℓ(x) = min{x^ℓ, χ*}`.
    pub fn chi(&self, ell: usize, x: T) -> T {
        x.powi(ell as i32).min(self.chi_star)
    }

    /// Whether `(1−γ)x^{-γ}` satisfies the bounds with `a_ℓ/2` and `A/2`.
    pub fn admits_reference_with_margin(&self) -> bool {
        let half = T::lit(0.5);
        self.a
            .iter()
            .enumerate()
            .all(|(i, &a)| Self::reference_ratio(self.gamma, i + 1) <= a * half)
            && self.big_a * half >= T::one()
    }
}

/// Worst slack of the ratio conditions, per order.
#[derive(Clone, Debug, Serialize)]
pub struct RatioCheck<T> {
    /// `min_x (1 − ratio_ℓ(x)/a_ℓ)` for `ℓ = 1..=k`; nonnegative means satisfied
    pub margins: Vec<T>,
    /// node attaining each minimum
    pub worst_x: Vec<T>,
    /// the largest observed `χ_ℓ |g^(ℓ)| / g`
    pub max_ratio: Vec<T>,
}

impl<T: Scalar> RatioCheck<T> {
    pub fn pass(&self) -> bool {
        self.margins.iter().all(|&m| m >= T::zero())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeReport<T> {
    pub k: usize,
    pub pass: bool,
    pub ratios: RatioCheck<T>,
    /// `|∫g − 1|`
    pub mass_error: T,
    /// `min_x (1 − ∫_0^x g / (A x^{1−γ}))`
    pub tail_margin: T,
    pub tail_worst_x: T,
}

const MASS_TOL: f64 = 1e-6;
/// slack for the tail bound, which is attained with equality by the reference density
const TAIL_ROUNDING: f64 = 1e-12;

/// Membership of `d` in `D^k_1`. Derivative conditions are checked at all
/// nodes but the first two and the last.
pub fn cone_membership<T: Scalar>(
    d: &Density<T>,
    p: &ConeParams<T>,
    k: usize,
) -> Result<ConeReport<T>> {
    let ratios = derivative_ratio_check(d, p, k, T::zero())?;
    let mass_error = (d.quadrature()? - T::one()).abs();
    let cum = d.cumulative()?;
    let exponent = T::one() - p.gamma;
    let mut tail_margin = T::infinity();
    let mut tail_worst_x = T::zero();
    for (&x, &f) in d.grid().nodes().iter().zip(&cum) {
        let m = T::one() - f / (p.big_a * x.powf(exponent));
        if m < tail_margin {
            tail_margin = m;
            tail_worst_x = x;
        }
    }
    let pass =
        ratios.pass() && mass_error <= T::lit(MASS_TOL) && tail_margin >= -T::lit(TAIL_ROUNDING);
    Ok(ConeReport {
        k,
        pass,
        ratios,
        mass_error,
        tail_margin,
        tail_worst_x,
    })
}

/// Checks `χ_ℓ |g^(ℓ)|/g ≤ a_ℓ` for `ℓ < k` and the Lipschitz bound of
/// `g^(k−1)` (estimated by `|g^(k)|`) for nodes `x >= x_min`.
pub fn derivative_ratio_check<T: Scalar>(
    d: &Density<T>,
    p: &ConeParams<T>,
    k: usize,
    x_min: T,
) -> Result<RatioCheck<T>> {
    if k == 0 || k > p.r || k > 3 {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: format!("{k} not in 1..={}", p.r.min(3)),
        });
    }
    let nodes = d.grid().nodes();
    let values = d.values();
    let n = nodes.len();
    for (&x, &v) in nodes.iter().zip(values) {
        if !(v > T::zero()) {
            return Err(Error::InvalidDensity {
                x: x.to_f64_lossy(),
                value: v.to_f64_lossy(),
                requirement: "strictly positive",
            });
        }
    }
    let u: Vec<T> = nodes.iter().map(|x| x.ln()).collect();
    let lg: Vec<T> = values.iter().map(|v| v.ln()).collect();
    let du = first_derivative(&u, &lg);
    let duu = second_derivative(&u, &lg);
    let duuu = if k >= 3 {
        first_derivative(&u, &duu)
    } else {
        vec![T::nan(); n]
    };

    let mut margins = vec![T::infinity(); k];
    let mut worst_x = vec![T::zero(); k];
    let mut max_ratio = vec![T::zero(); k];
    let (two, three) = (T::lit(2.0), T::lit(3.0));
    for i in 2..n - 1 {
        let x = nodes[i];
        if x < x_min {
            continue;
        }
        let (l1, l2) = (du[i], duu[i]);
        // x^ℓ g^(ℓ)/g in terms of log-log derivatives
        let r1 = l1;
        let r2 = l2 - l1 + l1 * l1;
        for ell in 1..=k {
            let scaled = match ell {
                1 => r1,
                2 => r2,
                _ => {
                    if i + 2 > n - 1 {
                        continue;
                    }
                    let l3 = duuu[i];
                    // x^3 (log g)''' = l3 − 3 l2 + 2 l1
                    let lx3 = l3 - three * l2 + two * l1;
                    let lx2 = l2 - l1;
                    lx3 + three * lx2 * l1 + l1 * l1 * l1
                }
            };
            if !scaled.is_finite() {
                return Err(Error::NonFinite {
                    x: x.to_f64_lossy(),
                    ell,
                    j: 0,
                });
            }
            let ratio = scaled.abs() * p.chi(ell, x) / x.powi(ell as i32);
            let m = T::one() - ratio / p.a[ell - 1];
            if ratio > max_ratio[ell - 1] {
                max_ratio[ell - 1] = ratio;
            }
            if m < margins[ell - 1] {
                margins[ell - 1] = m;
                worst_x[ell - 1] = x;
            }
        }
    }
    Ok(RatioCheck {
        margins,
        worst_x,
        max_ratio,
    })
}

/// Three-point derivative on a nonuniform grid; ends are left as NaN.
fn first_derivative<T: Scalar>(u: &[T], f: &[T]) -> Vec<T> {
    let n = u.len();
    let mut out = vec![T::nan(); n];
    for i in 1..n - 1 {
        if !(f[i - 1].is_finite() && f[i].is_finite() && f[i + 1].is_finite()) {
            continue;
        }
        let hm = u[i] - u[i - 1];
        let hp = u[i + 1] - u[i];
        out[i] = -hp / (hm * (hm + hp)) * f[i - 1]
            + (hp - hm) / (hm * hp) * f[i]
            + hm / (hp * (hm + hp)) * f[i + 1];
    }
    out
}

fn second_derivative<T: Scalar>(u: &[T], f: &[T]) -> Vec<T> {
    let n = u.len();
    let two = T::lit(2.0);
    let mut out = vec![T::nan(); n];
    for i in 1..n - 1 {
        let hm = u[i] - u[i - 1];
        let hp = u[i + 1] - u[i];
        out[i] =
            two * (f[i - 1] / (hm * (hm + hp)) - f[i] / (hm * hp) + f[i + 1] / (hp * (hm + hp)));
    }
    out
}
