//! Grid certification of the structural assumptions on a family of maps:
//! smoothness (closed-form derivatives up to order 4), the tail bound
//! `1 + c_γ x^γ ≤ T' ≤ C_γ`, the weighted bounds on the monomials of
//! `(w^ℓ)^{(ℓ−j)}` with `w = 1/T'`, and bounded distortion on the right branch.

use serde::Serialize;

use super::{Branch, Family, MapSpec};
use crate::density::GradedGrid;
use crate::{Error, Result, Scalar};

/// Parameter box `γ* ± 2ε*`, with `γ = γ_+` as the working exponent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ParameterBox<T> {
    pub gamma_star: T,
    pub eps_star: T,
}

impl<T: Scalar> ParameterBox<T> {
    pub const DEFAULT_EPS_STAR: f64 = 0.1;

    pub fn new(gamma_star: T, eps_star: T) -> Result<Self> {
        let b = ParameterBox {
            gamma_star,
            eps_star,
        };
        if !(eps_star > T::zero()) {
            return Err(Error::InvalidParameter {
                name: "eps_star",
                reason: format!("{eps_star} <= 0"),
            });
        }
        if !(b.gamma_minus() > T::zero() && b.gamma_plus() < T::one()) {
            return Err(Error::InvalidParameter {
                name: "eps_star",
                reason: format!(
                    "gamma_star ± 2 eps_star = [{}, {}] leaves (0, 1)",
                    b.gamma_minus(),
                    b.gamma_plus()
                ),
            });
        }
        Ok(b)
    }

    pub fn gamma_minus(&self) -> T {
        self.gamma_star - T::lit(2.0) * self.eps_star
    }

    pub fn gamma_plus(&self) -> T {
        self.gamma_star + T::lit(2.0) * self.eps_star
    }

    pub fn contains(&self, epsilon: T) -> bool {
        epsilon.abs() <= self.eps_star
    }

    pub fn check_epsilon(&self, epsilon: T) -> Result<()> {
        if self.contains(epsilon) {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "epsilon",
                reason: format!("|{epsilon}| exceeds eps_star = {}", self.eps_star),
            })
        }
    }

    /// 25 maps: five equispaced `ε ∈ [−ε*, ε*]` times the coupling scalars
    /// `(0, 0)` and the four corners `(±1, ±1)` (the functionals of a
    /// probability density never leave `[−1, 1]`).
    pub fn sweep(&self, family: Family) -> Result<Vec<MapSpec<T>>> {
        let one = T::one();
        let couplings = [
            (T::zero(), T::zero()),
            (one, one),
            (one, -one),
            (-one, one),
            (-one, -one),
        ];
        let mut out = Vec::with_capacity(25);
        for k in 0..5 {
            let eps = self.eps_star * (T::from_usize_lossy(k) / T::lit(2.0) - one);
            for &(s, c) in &couplings {
                let (eps, s) = match family {
                    // the remark family needs ε ≥ 0 and a nonnegative sine moment
                    Family::RemarkPm => (eps.abs(), s.abs()),
                    Family::CoupledPm => (eps, s),
                };
                out.push(MapSpec::new(family, self.gamma_star, eps, s, c)?);
            }
        }
        Ok(out)
    }
}

/// Constants certifying the assumptions; `b[ℓ-1]` is the worst monomial bound at order ℓ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionConstants<T> {
    pub c_gamma: T,
    pub big_c_gamma: T,
    pub gamma: T,
    pub c_d: T,
    pub b: Vec<T>,
    /// `b_ℓ` over `j < ℓ` only. The `j = ℓ` monomial is `w^ℓ` itself, whose
    /// ratio vanishes like `x^γ̃` at 0, so its grid infimum is set by the first node.
    pub b_below_diagonal: Vec<T>,
    pub chi_star: T,
    pub r: usize,
}

/// A monomial `coeff · w^{p0} (w')^{p1} (w'')^{p2} (w''')^{p3}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Monomial {
    pub coeff: u32,
    pub powers: [u8; 4],
}

impl Monomial {
    const fn new(coeff: u32, powers: [u8; 4]) -> Self {
        Monomial { coeff, powers }
    }

    fn eval<T: Scalar>(&self, w: &[T; 4]) -> T {
        let mut v = T::from_usize_lossy(self.coeff as usize);
        for (k, &p) in self.powers.iter().enumerate() {
            v *= w[k].powi(p as i32);
        }
        v
    }
}

/// Monomials in the expansion of `(w^ℓ)^{(ℓ−j)}`, `1 ≤ ℓ ≤ 3`, `0 ≤ j ≤ ℓ`.
pub fn monomials(ell: usize, j: usize) -> &'static [Monomial] {
    static TABLE: [&[Monomial]; 9] = [
        // ℓ = 1: w', w
        &[Monomial::new(1, [0, 1, 0, 0])],
        &[Monomial::new(1, [1, 0, 0, 0])],
        // ℓ = 2: 2(w')² + 2ww'', 2ww', w²
        &[
            Monomial::new(2, [0, 2, 0, 0]),
            Monomial::new(2, [1, 0, 1, 0]),
        ],
        &[Monomial::new(2, [1, 1, 0, 0])],
        &[Monomial::new(1, [2, 0, 0, 0])],
        // ℓ = 3: 6(w')³ + 18ww'w'' + 3w²w''', 6w(w')² + 3w²w'', 3w²w', w³
        &[
            Monomial::new(6, [0, 3, 0, 0]),
            Monomial::new(18, [1, 1, 1, 0]),
            Monomial::new(3, [2, 0, 0, 1]),
        ],
        &[
            Monomial::new(6, [1, 2, 0, 0]),
            Monomial::new(3, [2, 0, 1, 0]),
        ],
        &[Monomial::new(3, [2, 1, 0, 0])],
        &[Monomial::new(1, [3, 0, 0, 0])],
    ];
    let offset = match ell {
        1 => 0,
        2 => 2,
        3 => 5,
        _ => return &[],
    };
    if j > ell {
        return &[];
    }
    TABLE[offset + j]
}

#[derive(Clone, Debug, Serialize)]
pub struct MonomialBound<T> {
    pub ell: usize,
    pub j: usize,
    pub monomial: Monomial,
    /// `inf_x (1/χ_ℓ(T x) − w^ℓ/χ_ℓ(x)) / (|w_{ℓ,j}|/χ_j(x))`
    pub b: T,
    pub worst_x: T,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport<T> {
    pub constants: AssumptionConstants<T>,
    pub monomial_bounds: Vec<MonomialBound<T>>,
    pub n_maps: usize,
    pub n_points: usize,
    pub passes: bool,
}

/// `[w, w', w'', w''']` from the derivatives of `T`.
fn w_derivatives<T: Scalar>(spec: &MapSpec<T>, x: T) -> Result<[T; 4]> {
    let t1 = spec.derivative(x, 1)?;
    let t2 = spec.derivative(x, 2)?;
    let t3 = spec.derivative(x, 3)?;
    let t4 = spec.derivative(x, 4)?;
    let (two, six) = (T::lit(2.0), T::lit(6.0));
    let inv = T::one() / t1;
    let inv2 = inv * inv;
    let inv3 = inv2 * inv;
    Ok([
        inv,
        -t2 * inv2,
        two * t2 * t2 * inv3 - t3 * inv2,
        -six * t2 * t2 * t2 * inv3 * inv + six * t2 * t3 * inv3 - t4 * inv2,
    ])
}

/// Measures the assumption constants over every map in `specs` at every grid
/// node (excluding the branch boundary and `x = 1`), for `r = 3`.
pub fn verify_assumptions<T: Scalar>(
    specs: &[MapSpec<T>],
    grid: &GradedGrid<T>,
    gamma: T,
    chi_star: T,
) -> Result<AssumptionReport<T>> {
    const R: usize = 3;
    let chi = |ell: usize, x: T| x.powi(ell as i32).min(chi_star);
    let mut bounds: Vec<MonomialBound<T>> = Vec::new();
    for ell in 1..=R {
        for j in 0..=ell {
            for &m in monomials(ell, j) {
                bounds.push(MonomialBound {
                    ell,
                    j,
                    monomial: m,
                    b: T::infinity(),
                    worst_x: T::zero(),
                });
            }
        }
    }
    let mut c_gamma = T::infinity();
    let mut big_c_gamma = T::zero();
    let mut c_d = T::neg_infinity();
    let mut n_points = 0;

    for spec in specs {
        let boundary = spec.branch_boundary();
        for &x in grid.nodes() {
            if x >= T::one() || (x - boundary).abs() <= T::root_tol() {
                continue;
            }
            let branch = spec.branch_of(x);
            let lifted = spec.eval_lifted(x);
            let image = match branch {
                Branch::Left => lifted,
                Branch::Right => lifted - T::one(),
            };
            if !(image > T::zero() && image < T::one()) {
                continue;
            }
            n_points += 1;
            let excess = spec.derivative_excess(x);
            let slope = T::one() + excess;
            c_gamma = c_gamma.min(excess / x.powf(gamma));
            big_c_gamma = big_c_gamma.max(slope);
            if branch == Branch::Right {
                let t2 = spec.derivative(x, 2)?;
                c_d = c_d.max(t2 / (slope * slope));
            }
            let w = w_derivatives(spec, x)?;
            for mb in bounds.iter_mut() {
                let (ell, j) = (mb.ell, mb.j);
                let margin = T::one() / chi(ell, image) - w[0].powi(ell as i32) / chi(ell, x);
                let weight = mb.monomial.eval(&w).abs() / chi(j, x);
                if !margin.is_finite() || !weight.is_finite() {
                    return Err(Error::NonFinite {
                        x: x.to_f64_lossy(),
                        ell,
                        j,
                    });
                }
                if weight == T::zero() {
                    continue;
                }
                let b = margin / weight;
                if b < mb.b {
                    mb.b = b;
                    mb.worst_x = x;
                }
            }
        }
    }

    let b: Vec<T> = (1..=R)
        .map(|ell| {
            bounds
                .iter()
                .filter(|m| m.ell == ell)
                .map(|m| m.b)
                .fold(T::infinity(), T::min)
        })
        .collect();
    let b_below_diagonal: Vec<T> = (1..=R)
        .map(|ell| {
            bounds
                .iter()
                .filter(|m| m.ell == ell && m.j < ell)
                .map(|m| m.b)
                .fold(T::infinity(), T::min)
        })
        .collect();
    let passes = c_gamma > T::zero()
        && big_c_gamma.is_finite()
        && c_d.is_finite()
        && b.iter().all(|&v| v > T::zero() && v.is_finite());
    Ok(AssumptionReport {
        constants: AssumptionConstants {
            c_gamma,
            big_c_gamma,
            gamma,
            c_d,
            b,
            b_below_diagonal,
            chi_star,
            r: R,
        },
        monomial_bounds: bounds,
        n_maps: specs.len(),
        n_points,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_tables() {
        assert_eq!(monomials(3, 1).len(), 2);
        assert_eq!(monomials(3, 1)[0], Monomial::new(6, [1, 2, 0, 0]));
        assert_eq!(monomials(3, 0).len(), 3);
        assert_eq!(monomials(2, 0).len(), 2);
        assert_eq!(monomials(1, 1), &[Monomial::new(1, [1, 0, 0, 0])]);
        assert!(monomials(4, 0).is_empty());
        assert!(monomials(2, 3).is_empty());
    }

    #[test]
    fn expansions_match_finite_differences() {
        // (w^3)'' = 6 w (w')^2 + 3 w^2 w'' checked numerically on a concrete w
        let spec = MapSpec::new(Family::CoupledPm, 0.5, 0.05, 0.4, -0.7).unwrap();
        let w_of = |x: f64| 1.0 / spec.derivative(x, 1).unwrap();
        let h = 1e-4;
        for &x in &[0.2, 0.4, 0.7, 0.9] {
            let w = w_derivatives(&spec, x).unwrap();
            for ell in 1..=3usize {
                let p = |t: f64| w_of(t).powi(ell as i32);
                for j in 0..=ell {
                    let order = ell - j;
                    let fd = match order {
                        0 => p(x),
                        1 => (p(x + h) - p(x - h)) / (2.0 * h),
                        2 => (p(x + h) - 2.0 * p(x) + p(x - h)) / (h * h),
                        _ => {
                            (p(x + 2.0 * h) - 2.0 * p(x + h) + 2.0 * p(x - h) - p(x - 2.0 * h))
                                / (2.0 * h * h * h)
                        }
                    };
                    let sum: f64 = monomials(ell, j)
                        .iter()
                        .map(|m| {
                            // restore the sign that the magnitude table drops
                            let mut v = m.coeff as f64;
                            for (k, &pw) in m.powers.iter().enumerate() {
                                v *= w[k].powi(pw as i32);
                            }
                            v
                        })
                        .sum();
                    assert!(
                        (sum - fd).abs() < 1e-4 * fd.abs().max(1.0),
                        "l={ell} j={j} x={x}: {sum} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn unperturbed_map_passes() {
        let spec = MapSpec::<f64>::unperturbed(0.5).unwrap();
        let grid = GradedGrid::new(20_000, 3.0).unwrap();
        let rep = verify_assumptions(&[spec], &grid, 0.5, 1.0).unwrap();
        assert!(rep.passes);
        // (T' − 1)/x^γ = 1 + γ exactly when γ = γ̃
        assert!((rep.constants.c_gamma - 1.5).abs() < 1e-9);
        assert!((rep.constants.big_c_gamma - 2.5).abs() < 1e-3);
        assert!(rep.constants.c_d.is_finite() && rep.constants.c_d > 0.0);
        // w itself: positive b on a dense grid
        let b11 = rep
            .monomial_bounds
            .iter()
            .find(|m| m.ell == 1 && m.j == 1)
            .unwrap();
        assert!(b11.b > 0.0);
    }

    #[test]
    fn box_validation() {
        assert!(ParameterBox::new(0.5, 0.1).is_ok());
        assert!(ParameterBox::new(0.5, 0.3).is_err());
        let b = ParameterBox::<f64>::new(0.5, 0.1).unwrap();
        assert!((b.gamma_plus() - 0.7).abs() < 1e-15);
        assert!((b.gamma_minus() - 0.3).abs() < 1e-15);
        assert!(b.check_epsilon(0.2).is_err());
        assert_eq!(b.sweep(Family::CoupledPm).unwrap().len(), 25);
        assert_eq!(b.sweep(Family::RemarkPm).unwrap().len(), 25);
    }
}
