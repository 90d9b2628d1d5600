//! Splitting `L_{εh₀} v − L_{εh₁} v` into a difference of two densities, and
//! finite-difference estimates along the coupling path between them.

use serde::Serialize;

use super::TransferContext;
use crate::density::{cone_membership, ConeParams, Density};
use crate::map_family::{Family, MapSpec};
use crate::{Error, Result, Scalar};

const SIGN_THRESHOLD: f64 = 1e-14;

/// `β`, `C_β` and the exponent window `[γ₋, γ₊]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PerturbationConstants<T> {
    pub beta: T,
    /// measured `δ / (|ε| ‖h₀ − h₁‖₁)`, zero until measured
    pub c_beta: T,
    pub gamma_minus: T,
    pub gamma_plus: T,
}

impl<T: Scalar> PerturbationConstants<T> {
    /// `γ± = γ* ± 2ε*`, `β = γ₊ − γ₋`.
    pub fn for_box(gamma_star: T, eps_star: T) -> Result<Self> {
        let two = T::lit(2.0);
        let c = PerturbationConstants {
            beta: T::lit(4.0) * eps_star.abs(),
            c_beta: T::zero(),
            gamma_minus: gamma_star - two * eps_star.abs(),
            gamma_plus: gamma_star + two * eps_star.abs(),
        };
        if !(c.gamma_minus > T::zero() && c.gamma_plus < T::one()) {
            return Err(Error::InvalidParameter {
                name: "eps_star",
                reason: format!(
                    "γ± = {} ± {} leaves (0,1)",
                    gamma_star,
                    two * eps_star.abs()
                ),
            });
        }
        Ok(c)
    }

    /// `β < γ` and `β < 1 − γ` for `γ = γ₊`.
    pub fn admissible(&self) -> bool {
        self.beta >= T::zero()
            && self.beta < self.gamma_plus
            && self.beta < T::one() - self.gamma_plus
    }

    fn cone(&self) -> Result<ConeParams<T>> {
        ConeParams::fitted(self.gamma_plus)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Decomposition<T> {
    pub delta: T,
    /// `D₊ / δ`, unset when `δ = 0`
    #[serde(skip)]
    pub f0: Option<Density<T>>,
    #[serde(skip)]
    pub f1: Option<Density<T>>,
    /// `|∫D₊ − ∫D₋|`
    pub mass_mismatch: T,
    /// `δ / (|ε| ‖h₀ − h₁‖₁)` when both are nonzero
    pub ratio: Option<T>,
    /// `sup f₀ x^β`, `sup f₁ x^β`
    pub weighted_sups: Option<(T, T)>,
}

fn frozen_context<T: Scalar>(
    v: &Density<T>,
    h: &Density<T>,
    family: Family,
    gamma_star: T,
    epsilon: T,
) -> Result<TransferContext<T>> {
    let (s, c) = h.coupling_functionals(family);
    let spec = MapSpec::new(family, gamma_star, epsilon, s, c)?;
    Ok(TransferContext::new(spec, v.grid().clone()))
}

fn require_cone<T: Scalar>(v: &Density<T>, consts: &PerturbationConstants<T>) -> Result<()> {
    let report = cone_membership(v, &consts.cone()?, 2)?;
    if report.pass {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "v",
            reason: "not in the cone D^2_1".into(),
        })
    }
}

/// `L_{εh₀} v − L_{εh₁} v = δ (f₀ − f₁)` with `f₀, f₁ ≥ 0` of unit mass.
pub fn perturbation_decomposition<T: Scalar>(
    v: &Density<T>,
    h0: &Density<T>,
    h1: &Density<T>,
    family: Family,
    gamma_star: T,
    epsilon: T,
    consts: &PerturbationConstants<T>,
) -> Result<Decomposition<T>> {
    require_cone(v, consts)?;
    let a = frozen_context(v, h0, family, gamma_star, epsilon)?.apply_values(v.values());
    let b = frozen_context(v, h1, family, gamma_star, epsilon)?.apply_values(v.values());
    let thr = T::lit(SIGN_THRESHOLD);
    let (mut plus, mut minus) = (Vec::with_capacity(a.len()), Vec::with_capacity(a.len()));
    for (&x, &y) in a.iter().zip(&b) {
        let d = x - y;
        plus.push(if d > thr { d } else { T::zero() });
        minus.push(if d < -thr { -d } else { T::zero() });
    }
    let grid = v.grid().clone();
    let dp = Density::from_values(grid.clone(), plus)?;
    let dm = Density::from_values(grid, minus)?;
    let (mp, mm) = (dp.quadrature()?, dm.quadrature()?);
    let delta = mp;
    if delta < thr {
        return Ok(Decomposition {
            delta: T::zero(),
            f0: None,
            f1: None,
            mass_mismatch: (mp - mm).abs(),
            ratio: None,
            weighted_sups: None,
        });
    }
    let f0 = dp.scaled(T::one() / delta);
    let f1 = dm.scaled(T::one() / delta);
    let dist = h0.l1_distance(h1)?;
    let ratio = if epsilon != T::zero() && dist > T::zero() {
        Some(delta / (epsilon.abs() * dist))
    } else {
        None
    };
    let sups = (f0.weighted_sup(consts.beta), f1.weighted_sup(consts.beta));
    Ok(Decomposition {
        delta,
        f0: Some(f0),
        f1: Some(f1),
        mass_mismatch: (mp - mm).abs(),
        ratio,
        weighted_sups: Some(sups),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PartialDerivativeReport<T> {
    pub s_points: Vec<T>,
    pub ds: T,
    /// `sup |∂_s L_s v| x^β / |ε|` at steps `ds` and `ds/2`
    pub s_sup: (T, T),
    /// `sup |∂_x ∂_s L_s v| x^{β+1} / |ε|` at steps `ds` and `ds/2`
    pub x_sup: (T, T),
    pub stable: bool,
    pub pass: bool,
}

/// Central differences in `s` of `L_s v`, where `L_s` is the transfer operator
/// of the map coupled to `f_s = (1−s) f₀ + s f₁`.
#[allow(clippy::too_many_arguments)]
pub fn partial_derivative_bound_check<T: Scalar>(
    v: &Density<T>,
    f0: &Density<T>,
    f1: &Density<T>,
    family: Family,
    gamma_star: T,
    epsilon: T,
    consts: &PerturbationConstants<T>,
    ds: T,
) -> Result<PartialDerivativeReport<T>> {
    require_cone(v, consts)?;
    let s_points: Vec<T> = [0.25, 0.5, 0.75].iter().map(|&s| T::lit(s)).collect();
    if !(ds > T::zero() && ds <= T::lit(0.25)) {
        return Err(Error::InvalidParameter {
            name: "ds",
            reason: format!("{ds} not in (0, 0.25]"),
        });
    }
    let (a, b) = (
        f0.coupling_functionals(family),
        f1.coupling_functionals(family),
    );
    let image = |s: T| -> Result<Vec<T>> {
        let cs = (
            (T::one() - s) * a.0 + s * b.0,
            (T::one() - s) * a.1 + s * b.1,
        );
        let spec = MapSpec::new(family, gamma_star, epsilon, cs.0, cs.1)?;
        Ok(TransferContext::new(spec, v.grid().clone()).apply_values(v.values()))
    };
    let nodes = v.grid().nodes();
    let beta = consts.beta;
    let sups = |step: T| -> Result<(T, T)> {
        let (mut s_sup, mut x_sup) = (T::zero(), T::zero());
        if epsilon == T::zero() {
            return Ok((s_sup, x_sup));
        }
        for &s in &s_points {
            let (hi, lo) = (image(s + step)?, image(s - step)?);
            let ds_vals: Vec<T> = hi
                .iter()
                .zip(&lo)
                .map(|(&p, &m)| (p - m) / (step + step))
                .collect();
            for (i, (&x, &d)) in nodes.iter().zip(&ds_vals).enumerate() {
                if !d.is_finite() {
                    return Err(Error::NonFinite {
                        x: x.to_f64_lossy(),
                        ell: 0,
                        j: i,
                    });
                }
                s_sup = s_sup.max(d.abs() * x.powf(beta));
            }
            for i in 1..nodes.len() - 1 {
                let (h0, h1) = (nodes[i] - nodes[i - 1], nodes[i + 1] - nodes[i]);
                let dx = (ds_vals[i + 1] - ds_vals[i]) / h1 * (h0 / (h0 + h1))
                    + (ds_vals[i] - ds_vals[i - 1]) / h0 * (h1 / (h0 + h1));
                x_sup = x_sup.max(dx.abs() * nodes[i].powf(beta + T::one()));
            }
        }
        let e = epsilon.abs();
        Ok((s_sup / e, x_sup / e))
    };
    let (s1, x1) = sups(ds)?;
    let (s2, x2) = sups(ds * T::lit(0.5))?;
    let close = |p: T, q: T| {
        let m = p.abs().max(q.abs());
        m == T::zero() || (p - q).abs() <= T::lit(0.15) * m
    };
    let stable = close(s1, s2) && close(x1, x2);
    let finite = [s1, s2, x1, x2].iter().all(|v| v.is_finite());
    Ok(PartialDerivativeReport {
        s_points,
        ds,
        s_sup: (s1, s2),
        x_sup: (x1, x2),
        stable,
        pass: stable && finite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GradedGrid;
    use std::sync::Arc;

    fn setup(
        n: usize,
    ) -> (
        Arc<GradedGrid<f64>>,
        Density<f64>,
        PerturbationConstants<f64>,
    ) {
        let g = Arc::new(GradedGrid::for_exponent(n, 0.5).unwrap());
        let v = Density::power_law(g.clone(), 0.5).unwrap();
        (g, v, PerturbationConstants::for_box(0.5, 0.05).unwrap())
    }

    #[test]
    fn constants() {
        let c = PerturbationConstants::<f64>::for_box(0.5, 0.05).unwrap();
        assert!((c.beta - 0.2).abs() < 1e-15);
        assert!(c.admissible());
        assert!(!PerturbationConstants::for_box(0.5, 0.1)
            .unwrap()
            .admissible());
        assert!(PerturbationConstants::for_box(0.5, 0.3).is_err());
    }

    #[test]
    fn trivial_decompositions() {
        let (g, v, c) = setup(1024);
        let one = Density::constant(g.clone(), 1.0).unwrap();
        let lin = Density::from_fn(g, |x| 2.0 * x).unwrap();
        let same =
            perturbation_decomposition(&v, &one, &one, Family::CoupledPm, 0.5, 0.05, &c).unwrap();
        assert_eq!(same.delta, 0.0);
        assert!(same.f0.is_none());
        let frozen =
            perturbation_decomposition(&v, &one, &lin, Family::CoupledPm, 0.5, 0.0, &c).unwrap();
        assert_eq!(frozen.delta, 0.0);
    }

    #[test]
    fn ratio_is_stable_under_refinement() {
        let mut ratios = Vec::new();
        for n in [2048, 4096] {
            let (g, v, c) = setup(n);
            let one = Density::constant(g.clone(), 1.0).unwrap();
            let lin = Density::from_fn(g, |x| 2.0 * x).unwrap();
            let d = perturbation_decomposition(&v, &one, &lin, Family::CoupledPm, 0.5, 0.05, &c)
                .unwrap();
            assert!(d.mass_mismatch < 1e-6, "{}", d.mass_mismatch);
            let f0 = d.f0.as_ref().unwrap();
            assert!((f0.quadrature().unwrap() - 1.0).abs() < 1e-12);
            let (a, b) = d.weighted_sups.unwrap();
            assert!(a.is_finite() && b.is_finite());
            ratios.push(d.ratio.unwrap());
        }
        assert!(ratios[0].is_finite() && ratios[0] > 0.0);
        assert!(
            (ratios[0] - ratios[1]).abs() < 0.1 * ratios[1],
            "{ratios:?}"
        );
    }

    #[test]
    fn partial_derivatives() {
        let (g, v, c) = setup(1024);
        let one = Density::constant(g.clone(), 1.0).unwrap();
        let lin = Density::from_fn(g, |x| 2.0 * x).unwrap();
        let zero_eps =
            partial_derivative_bound_check(&v, &one, &lin, Family::CoupledPm, 0.5, 0.0, &c, 0.1)
                .unwrap();
        assert_eq!((zero_eps.s_sup, zero_eps.x_sup), ((0.0, 0.0), (0.0, 0.0)));
        let flat =
            partial_derivative_bound_check(&v, &one, &one, Family::CoupledPm, 0.5, 0.05, &c, 0.1)
                .unwrap();
        assert_eq!(flat.s_sup, (0.0, 0.0));
        let box_c = PerturbationConstants::for_box(0.5, 0.1).unwrap();
        let r = partial_derivative_bound_check(
            &v,
            &one,
            &lin,
            Family::CoupledPm,
            0.5,
            0.1,
            &box_c,
            0.1,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.s_sup.0 > 0.0);
    }
}
