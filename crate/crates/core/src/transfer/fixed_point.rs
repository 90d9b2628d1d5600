//! Self-consistent fixed point by an inner–outer scheme.
//!
//! Outer: freeze the coupling scalars, solve for the invariant density of the
//! frozen map, recompute the coupling. Inner: the frozen invariant density is
//! the Perron vector of the discrete operator, `L h = λ h`. It is found from
//! the first-return form `h = (λ − L_left)^{-1} L_right h`, iterated with `λ`
//! updated from the mass of `L h`; this converges geometrically, where iterating
//! `L` itself only converges polynomially. `(λ − L_left)^{-1}` is a forward
//! substitution because the left stencils are lower triangular. The discrete
//! `λ` differs from 1 by the quadrature error of mass conservation, and the
//! renormalized self-consistent step fixes the Perron vector exactly.

use std::sync::Arc;

use serde::Serialize;

use super::{SelfConsistentOperator, TransferContext};
use crate::density::{Density, GradedGrid};
use crate::map_family::{Branch, Family, MapSpec};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug)]
pub struct FixedPointOptions<T> {
    /// L¹ change between successive inner iterates
    pub inner_tol: T,
    /// max-norm change of the coupling scalars between outer iterations
    pub outer_tol: T,
    pub max_outer: usize,
    pub max_inner: usize,
    /// coupling used for the first frozen map (default: that of the initial density)
    pub initial_coupling: Option<(T, T)>,
    /// starting density (default: `1`)
    pub initial_density: Option<Density<T>>,
}

impl<T: Scalar> Default for FixedPointOptions<T> {
    fn default() -> Self {
        FixedPointOptions {
            inner_tol: T::lit(1e-10),
            outer_tol: T::lit(1e-9),
            max_outer: 200,
            max_inner: 5000,
            initial_coupling: None,
            initial_density: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPointSolution<T> {
    #[serde(skip)]
    pub density: Density<T>,
    /// `(s_h, c_h)` of the returned density
    pub coupling: (T, T),
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// `‖L_ε h − h‖₁` for the returned `h`
    pub residual_l1: T,
}

/// Invariant probability density of one frozen map.
///
/// Returns the density and the number of first-return iterations.
pub fn invariant_density<T: Scalar>(
    ctx: &TransferContext<T>,
    start: Option<&Density<T>>,
    tol: T,
    max_iter: usize,
) -> Result<(Density<T>, usize)> {
    let grid = ctx.grid().clone();
    let mut h = match start {
        Some(d) => d.normalize()?,
        None => Density::constant(grid.clone(), T::one())?,
    };
    let first = ctx.right_support_start();
    let floor = ctx.min_shift();
    let mut change = T::infinity();
    for it in 1..=max_iter {
        let lam_minus_one = Density::from_values(grid.clone(), ctx.apply_values(h.values()))?
            .quadrature()?
            - T::one();
        let shift = if lam_minus_one > floor {
            lam_minus_one
        } else {
            T::zero()
        };
        let rhs = ctx.apply_branch_values(h.values(), Branch::Right);
        let next = Density::from_values(grid.clone(), ctx.solve_left_resolvent(&rhs, shift))?
            .normalize()?;
        // the right branch only reads nodes ≥ first, so only those matter
        change = l1_on(&h, &next, first);
        h = next;
        if change < tol {
            return Ok((h, it));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: change.to_f64_lossy(),
    })
}

/// L¹ distance restricted to nodes `first..`.
fn l1_on<T: Scalar>(a: &Density<T>, b: &Density<T>, first: usize) -> T {
    let nodes = a.grid().nodes();
    let (u, v) = (a.values(), b.values());
    let half = T::lit(0.5);
    (first.max(1)..nodes.len())
        .map(|i| {
            (nodes[i] - nodes[i - 1]) * ((u[i] - v[i]).abs() + (u[i - 1] - v[i - 1]).abs()) * half
        })
        .sum()
}

/// Fixed point `h_ε = L_{εh_ε} h_ε`.
pub fn solve_fixed_point<T: Scalar>(
    family: Family,
    gamma_star: T,
    epsilon: T,
    grid: &Arc<GradedGrid<T>>,
    opts: &FixedPointOptions<T>,
) -> Result<FixedPointSolution<T>> {
    let mut h = match &opts.initial_density {
        Some(d) => d.normalize()?,
        None => Density::constant(grid.clone(), T::one())?,
    };
    if !Arc::ptr_eq(h.grid(), grid) && **h.grid() != **grid {
        return Err(Error::GridMismatch);
    }
    let mut coupling = opts
        .initial_coupling
        .unwrap_or_else(|| h.coupling_functionals(family));
    let mut ctx: Option<TransferContext<T>> = None;
    let mut inner_total = 0;
    let mut last_change = T::infinity();
    for outer in 1..=opts.max_outer {
        let spec = MapSpec::new(family, gamma_star, epsilon, coupling.0, coupling.1)?;
        let next_ctx = match &ctx {
            Some(prev) => TransferContext::with_hint(spec, grid.clone(), prev),
            None => TransferContext::new(spec, grid.clone()),
        };
        let (next_h, inner) =
            invariant_density(&next_ctx, Some(&h), opts.inner_tol, opts.max_inner)?;
        inner_total += inner;
        h = next_h;
        ctx = Some(next_ctx);
        let new_coupling = h.coupling_functionals(family);
        last_change = (new_coupling.0 - coupling.0)
            .abs()
            .max((new_coupling.1 - coupling.1).abs());
        coupling = new_coupling;
        if last_change < opts.outer_tol {
            let mut op = SelfConsistentOperator::new(family, gamma_star, epsilon);
            let residual_l1 = h.l1_distance(&op.step(&h)?)?;
            return Ok(FixedPointSolution {
                density: h,
                coupling,
                outer_iterations: outer,
                inner_iterations: inner_total,
                residual_l1,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_outer,
        residual: last_change.to_f64_lossy(),
    })
}
