//! Coupled intermittent interval maps.
//!
//! Both families are perturbations of the Pomeau–Manneville map
//! `x ↦ x (1 + x^γ*) mod 1`. The coupling enters through two scalars
//! computed from the current density (see [`crate::density::Density::coupling_functionals`]):
//!
//! * [`Family::CoupledPm`]: `T(x) = x (1 + x^{γ* + ε s}) + ε c x² (1 − x)`, where
//!   `s = ∫h sin(2πs)` and `c = ∫h cos(2πs)`.
//! * [`Family::RemarkPm`]: `T(x) = x (1 + x^{γ*}) + ε s x (1 − x)`, where `s = ∫h sin(πs)`.
//!
//! Formulas are for the lifted map `[0, 1] → [0, 2]`; reduction mod 1 happens in
//! [`MapSpec::eval`] only.

mod assumptions;

pub use assumptions::{
    verify_assumptions, AssumptionConstants, AssumptionReport, Monomial, MonomialBound,
    ParameterBox,
};

use serde::{Deserialize, Serialize};

use crate::roots::{bisect, newton_bracketed};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    CoupledPm,
    RemarkPm,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::CoupledPm => "coupled-pm",
            Family::RemarkPm => "remark-pm",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coupled-pm" | "coupled" => Ok(Family::CoupledPm),
            "remark-pm" | "remark" => Ok(Family::RemarkPm),
            other => Err(Error::InvalidParameter {
                name: "family",
                reason: format!("unknown family `{other}` (expected coupled-pm or remark-pm)"),
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// `(0, x*)`, containing the indifferent fixed point.
    Left,
    /// `(x*, 1)`, uniformly expanding.
    Right,
}

/// A fully instantiated map: family, base exponent, coupling strength and the
/// coupling scalars of the density it was built from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MapSpec<T> {
    family: Family,
    gamma_star: T,
    epsilon: T,
    s_h: T,
    c_h: T,
    /// exponent of the indifferent term, `γ̃`
    exponent: T,
    /// coefficient of the polynomial perturbation
    poly_coeff: T,
    branch_boundary: T,
}

impl<T: Scalar> MapSpec<T> {
    pub fn new(family: Family, gamma_star: T, epsilon: T, s_h: T, c_h: T) -> Result<Self> {
        let one = T::one();
        if !(gamma_star > T::zero() && gamma_star < one) {
            return Err(Error::InvalidParameter {
                name: "gamma_star",
                reason: format!("{gamma_star} is not in (0, 1)"),
            });
        }
        for (name, v) in [("epsilon", epsilon), ("s_h", s_h), ("c_h", c_h)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: "not finite".into(),
                });
            }
        }
        let (exponent, poly_coeff) = match family {
            Family::CoupledPm => (gamma_star + epsilon * s_h, epsilon * c_h),
            Family::RemarkPm => {
                if epsilon < T::zero() {
                    return Err(Error::InvalidParameter {
                        name: "epsilon",
                        reason: format!("{epsilon} < 0 is not allowed for the remark family"),
                    });
                }
                (gamma_star, epsilon * s_h)
            }
        };
        if !(exponent > T::zero() && exponent < one) {
            return Err(Error::ExponentOutOfRange(exponent.to_f64_lossy()));
        }
        let mut spec = MapSpec {
            family,
            gamma_star,
            epsilon,
            s_h,
            c_h,
            exponent,
            poly_coeff,
            branch_boundary: T::zero(),
        };
        // Expansion on a coarse probe grid; the indifferent point itself is excluded.
        for k in 1..=64 {
            let x = T::from_usize_lossy(k) / T::lit(64.0);
            let d = spec.derivative_excess(x);
            if !(d > T::zero()) {
                return Err(Error::InvalidParameter {
                    name: "epsilon",
                    reason: format!("map is not expanding at x = {x} (T' - 1 = {d})"),
                });
            }
        }
        spec.branch_boundary = spec.solve_branch_boundary();
        Ok(spec)
    }

    /// Unperturbed Pomeau–Manneville map `x (1 + x^γ*)`.
    pub fn unperturbed(gamma_star: T) -> Result<Self> {
        Self::new(
            Family::CoupledPm,
            gamma_star,
            T::zero(),
            T::zero(),
            T::zero(),
        )
    }

    pub fn family(&self) -> Family {
        self.family
    }
    pub fn gamma_star(&self) -> T {
        self.gamma_star
    }
    pub fn epsilon(&self) -> T {
        self.epsilon
    }
    pub fn s_h(&self) -> T {
        self.s_h
    }
    pub fn c_h(&self) -> T {
        self.c_h
    }
    pub fn branch_boundary(&self) -> T {
        self.branch_boundary
    }

    /// Exponent of the indifferent term: `γ* + ε s_h` for the coupled family, `γ*` otherwise.
    pub fn effective_exponent(&self) -> T {
        self.exponent
    }

    /// Key identifying the map up to floating point equality; equal keys give identical maps.
    pub fn cache_key(&self) -> (Family, T, T) {
        (self.family, self.exponent, self.poly_coeff)
    }

    fn poly(&self, x: T, order: usize) -> T {
        let (one, two, three) = (T::one(), T::lit(2.0), T::lit(3.0));
        match (self.family, order) {
            (Family::CoupledPm, 0) => x * x * (one - x),
            (Family::CoupledPm, 1) => two * x - three * x * x,
            (Family::CoupledPm, 2) => two - T::lit(6.0) * x,
            (Family::CoupledPm, 3) => -T::lit(6.0),
            (Family::RemarkPm, 0) => x * (one - x),
            (Family::RemarkPm, 1) => one - two * x,
            (Family::RemarkPm, 2) => -two,
            _ => T::zero(),
        }
    }

    /// Lifted map, `[0, 1] → [0, 2]`.
    pub fn eval_lifted(&self, x: T) -> T {
        x + x.powf(T::one() + self.exponent) + self.poly_coeff * self.poly(x, 0)
    }

    /// `T(x) mod 1`, in `[0, 1)`. Lifted values 1 and 2 both reduce to 0.
    pub fn eval(&self, x: T) -> T {
        let y = self.eval_lifted(x);
        let r = y - y.floor();
        if r >= T::one() {
            T::zero()
        } else {
            r
        }
    }

    /// `T'(x) − 1`, evaluated without cancellation near the indifferent point.
    pub fn derivative_excess(&self, x: T) -> T {
        let g = self.exponent;
        (T::one() + g) * x.powf(g) + self.poly_coeff * self.poly(x, 1)
    }

    /// `T(x)/x − 1` for `x > 0`, evaluated without cancellation.
    pub fn log_stretch(&self, x: T) -> T {
        let one = T::one();
        let poly_over_x = match self.family {
            Family::CoupledPm => x * (one - x),
            Family::RemarkPm => one - x,
        };
        x.powf(self.exponent) + self.poly_coeff * poly_over_x
    }

    /// Derivative of the lifted map of the given order (1..=4).
    pub fn derivative(&self, x: T, order: usize) -> Result<T> {
        let g = self.exponent;
        let one = T::one();
        let k = self.poly_coeff;
        let coeff_pow = |m: usize| {
            // d^m/dx^m x^{1+g} = (1+g) g (g-1) ... (g-m+2) x^{1+g-m}
            let mut c = one;
            for i in 0..m {
                c *= one + g - T::from_usize_lossy(i);
            }
            c * x.powf(one + g - T::from_usize_lossy(m))
        };
        match order {
            1 => Ok(one + self.derivative_excess(x)),
            2..=4 => Ok(coeff_pow(order) + k * self.poly(x, order)),
            other => Err(Error::UnsupportedOrder(other)),
        }
    }

    fn solve_branch_boundary(&self) -> T {
        bisect(
            |x| self.eval_lifted(x),
            T::one(),
            T::zero(),
            T::one(),
            T::root_tol(),
        )
    }

    /// Preimage of `y ∈ [0, 1]` in the given branch: bisection to 1e-13 and one Newton polish.
    pub fn branch_inverse(&self, branch: Branch, y: T) -> Result<T> {
        if !(y >= T::zero() && y <= T::one()) {
            return Err(Error::OutOfDomain(y.to_f64_lossy()));
        }
        let (target, lo, hi) = self.bracket(branch, y);
        if y == T::zero() {
            return Ok(lo);
        }
        let root = bisect(|x| self.eval_lifted(x), target, lo, hi, T::root_tol());
        let polished =
            root - (self.eval_lifted(root) - target) / (T::one() + self.derivative_excess(root));
        Ok(if polished >= lo && polished <= hi {
            polished
        } else {
            root
        })
    }

    /// Fast preimage used when building operator stencils: bracketed Newton from `guess`.
    pub(crate) fn preimage(&self, branch: Branch, y: T, guess: T) -> T {
        let (target, lo, hi) = self.bracket(branch, y);
        if y == T::zero() {
            return lo;
        }
        if branch == Branch::Left && y == T::one() {
            return self.branch_boundary;
        }
        if branch == Branch::Right && y == T::one() {
            return T::one();
        }
        newton_bracketed(
            |x| (self.eval_lifted(x), T::one() + self.derivative_excess(x)),
            target,
            lo,
            hi,
            guess,
        )
    }

    fn bracket(&self, branch: Branch, y: T) -> (T, T, T) {
        match branch {
            Branch::Left => (y, T::zero(), self.branch_boundary),
            Branch::Right => (T::one() + y, self.branch_boundary, T::one()),
        }
    }

    /// Branch containing `x` (the boundary belongs to the left branch's closure).
    pub fn branch_of(&self, x: T) -> Branch {
        if x <= self.branch_boundary {
            Branch::Left
        } else {
            Branch::Right
        }
    }
}
