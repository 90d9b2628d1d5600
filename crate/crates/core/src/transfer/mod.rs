//! Transfer operators of the coupled maps.
//!
//! `(L g)(x) = Σ_{T y = x} g(y) / T'(y)` is evaluated pointwise at every grid
//! node from cached branch preimages. Between nodes `g` is interpolated
//! linearly above `x = 0.1`; below it `x^{γ̃} g` is interpolated linearly in
//! `log x`, which is exact for the `x^{-γ̃}` behaviour of the stationary
//! density and keeps the operator linear with nonnegative weights.
//!
//! Each node therefore carries a two-term stencil per branch. The left-branch
//! coefficient on a node's own value is stored as its complement
//! `1 − coeff`, evaluated without cancellation, because near the indifferent
//! point that coefficient is `1 − O(x^{γ̃})`.

mod fixed_point;
mod perturbation;
mod ulam;

pub use fixed_point::{
    invariant_density, solve_fixed_point, FixedPointOptions, FixedPointSolution,
};
pub use perturbation::{
    partial_derivative_bound_check, perturbation_decomposition, Decomposition,
    PartialDerivativeReport, PerturbationConstants,
};
pub use ulam::{ulam_invariant, UlamChain};

use std::sync::Arc;

use rayon::prelude::*;

use crate::density::{Density, GradedGrid};
use crate::map_family::{Branch, Family, MapSpec};
use crate::{Error, Result, Scalar};

/// Branch preimages of one node and the weights `1/T'` there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preimage<T> {
    pub left: T,
    pub right: T,
    pub left_weight: T,
    pub right_weight: T,
}

/// `lo · g[idx] + hi · g[idx + 1]`
#[derive(Clone, Copy, Debug)]
struct Stencil<T> {
    idx: usize,
    lo: T,
    hi: T,
}

/// Preimages, left stencil, right-branch weight, right stencil.
type NodeData<T> = (Preimage<T>, Stencil<T>, T, Stencil<T>);

impl<T: Scalar> Stencil<T> {
    #[inline]
    fn apply(&self, g: &[T]) -> T {
        let mut v = self.lo * g[self.idx];
        if self.hi != T::zero() {
            v += self.hi * g[self.idx + 1];
        }
        v
    }
}

const LOG_INTERP_BELOW: f64 = 0.1;

/// Operator `L_{εh}` for one frozen map on one grid.
#[derive(Clone, Debug)]
pub struct TransferContext<T> {
    spec: MapSpec<T>,
    grid: Arc<GradedGrid<T>>,
    interp_exponent: T,
    preimages: Vec<Preimage<T>>,
    left: Vec<Stencil<T>>,
    right: Vec<Stencil<T>>,
    /// `1 −` (left coefficient on the node's own value)
    left_diag: Vec<T>,
}

impl<T: Scalar> TransferContext<T> {
    pub fn new(spec: MapSpec<T>, grid: Arc<GradedGrid<T>>) -> Self {
        Self::build(spec, grid, None)
    }

    /// Like [`TransferContext::new`], seeding the preimage solves with a
    /// previous context's preimages (same grid, nearby map).
    pub fn with_hint(
        spec: MapSpec<T>,
        grid: Arc<GradedGrid<T>>,
        hint: &TransferContext<T>,
    ) -> Self {
        let hint = if Arc::ptr_eq(&hint.grid, &grid) {
            Some(hint.preimages.as_slice())
        } else {
            None
        };
        Self::build(spec, grid, hint)
    }

    fn build(spec: MapSpec<T>, grid: Arc<GradedGrid<T>>, hint: Option<&[Preimage<T>]>) -> Self {
        let nodes = grid.nodes();
        let p = spec.effective_exponent();
        let boundary = spec.branch_boundary();
        let built: Vec<NodeData<T>> = (0..nodes.len())
            .into_par_iter()
            .map(|i| {
                let x = nodes[i];
                let (gl, gr) = match hint {
                    Some(h) => (h[i].left, h[i].right),
                    None => (
                        x / (T::one() + spec.log_stretch(x)),
                        boundary + x * (T::one() - boundary),
                    ),
                };
                let yl = spec.preimage(Branch::Left, x, gl);
                let yr = spec.preimage(Branch::Right, x, gr);
                let tau_l = spec.derivative_excess(yl);
                let wl = T::one() / (T::one() + tau_l);
                let wr = T::one() / (T::one() + spec.derivative_excess(yr));
                let (left, diag) = left_stencil(&spec, nodes, i, yl, wl, tau_l, p);
                let (j, lo, hi) = interp_weights(nodes, cell_for(nodes, yr), yr, p);
                let right = Stencil {
                    idx: j,
                    lo: wr * lo,
                    hi: wr * hi,
                };
                (
                    Preimage {
                        left: yl,
                        right: yr,
                        left_weight: wl,
                        right_weight: wr,
                    },
                    left,
                    diag,
                    right,
                )
            })
            .collect();
        let mut preimages = Vec::with_capacity(built.len());
        let mut left = Vec::with_capacity(built.len());
        let mut left_diag = Vec::with_capacity(built.len());
        let mut right = Vec::with_capacity(built.len());
        for (pre, l, d, r) in built {
            preimages.push(pre);
            left.push(l);
            left_diag.push(d);
            right.push(r);
        }
        TransferContext {
            spec,
            grid,
            interp_exponent: p,
            preimages,
            left,
            right,
            left_diag,
        }
    }

    pub fn spec(&self) -> &MapSpec<T> {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<GradedGrid<T>> {
        &self.grid
    }

    pub fn preimages(&self) -> &[Preimage<T>] {
        &self.preimages
    }

    /// Exponent `p` of the `x^{-p}` interpolation model below 0.1.
    pub fn interp_exponent(&self) -> T {
        self.interp_exponent
    }

    fn check_grid(&self, g: &Density<T>) -> Result<()> {
        if Arc::ptr_eq(&self.grid, g.grid()) || *self.grid == **g.grid() {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Node values of `L g`.
    pub fn apply_values(&self, g: &[T]) -> Vec<T> {
        (0..g.len())
            .into_par_iter()
            .map(|i| self.left_value(g, i) + self.right[i].apply(g))
            .collect()
    }

    fn left_value(&self, g: &[T], i: usize) -> T {
        self.left[i].apply(g)
    }

    /// `L g` restricted to one branch: `(g/T') ∘ T_b^{-1}`.
    pub fn apply_branch_values(&self, g: &[T], branch: Branch) -> Vec<T> {
        let st = match branch {
            Branch::Left => &self.left,
            Branch::Right => &self.right,
        };
        st.par_iter().map(|s| s.apply(g)).collect()
    }

    /// First node index any right-branch stencil reads.
    pub(crate) fn right_support_start(&self) -> usize {
        self.right.iter().map(|s| s.idx).min().unwrap_or(0)
    }

    /// Solves `(λ − L_left) h = rhs`, `λ = 1 + shift`, by forward substitution
    /// (the left-branch stencil of a node only reads nodes at or below it).
    pub(crate) fn solve_left_resolvent(&self, rhs: &[T], shift: T) -> Vec<T> {
        let n = rhs.len();
        let mut h = vec![T::zero(); n];
        for i in 0..n {
            let s = &self.left[i];
            let mut acc = rhs[i];
            if s.idx < i {
                acc += s.lo * h[s.idx];
            }
            if s.hi != T::zero() && s.idx + 1 < i {
                acc += s.hi * h[s.idx + 1];
            }
            h[i] = acc / (self.left_diag[i] + shift);
        }
        h
    }

    /// Smallest shift keeping `λ − L_left` invertible with a positive inverse.
    pub(crate) fn min_shift(&self) -> T {
        -self.left_diag.iter().copied().fold(T::infinity(), T::min)
    }
}

/// Cell of `y` for stencils: `None` for the first-cell power-law model.
fn cell_for<T: Scalar>(nodes: &[T], y: T) -> Option<usize> {
    if y < nodes[0] {
        return None;
    }
    let p = nodes.partition_point(|&x| x <= y);
    Some(p.saturating_sub(1).min(nodes.len() - 2))
}

/// Interpolation weights of `g(y)` on the nodes of `cell` (tail model when `None`).
fn interp_weights<T: Scalar>(nodes: &[T], cell: Option<usize>, y: T, p: T) -> (usize, T, T) {
    match cell {
        None => (0, (nodes[0] / y).powf(p), T::zero()),
        Some(j) => {
            let (a, b) = (nodes[j], nodes[j + 1]);
            if y < T::lit(LOG_INTERP_BELOW) {
                let lam = ((y / a).ln() / (b / a).ln()).max(T::zero()).min(T::one());
                (j, (T::one() - lam) * (a / y).powf(p), lam * (b / y).powf(p))
            } else {
                let lam = ((y - a) / (b - a)).max(T::zero()).min(T::one());
                (j, T::one() - lam, lam)
            }
        }
    }
}

/// Left stencil of node `i` and the complement of its own coefficient.
fn left_stencil<T: Scalar>(
    spec: &MapSpec<T>,
    nodes: &[T],
    i: usize,
    y: T,
    w: T,
    tau: T,
    p: T,
) -> (Stencil<T>, T) {
    let one = T::one();
    // ρ = log(x_i / y), from T(y)/y − 1 without forming the ratio
    let rho = spec.log_stretch(y).ln_1p();
    // 1 − w (x_i/y)^p
    let self_gap = -(p * rho - tau.ln_1p()).exp_m1();
    let scale = (p * rho).exp();
    if i == 0 {
        let st = Stencil {
            idx: 0,
            lo: w * scale,
            hi: T::zero(),
        };
        return (st, self_gap);
    }
    let x = nodes[i];
    let gap = (x / nodes[i - 1]).ln();
    if rho <= gap {
        // y ∈ [x_{i−1}, x_i]
        if y < T::lit(LOG_INTERP_BELOW) {
            let one_minus_lam = rho / gap;
            let lam = one - one_minus_lam;
            let lo = w * one_minus_lam * (p * (rho - gap)).exp();
            let hi = w * lam * scale;
            let diag = self_gap + w * one_minus_lam * scale;
            (Stencil { idx: i - 1, lo, hi }, diag)
        } else {
            let a = nodes[i - 1];
            let lam = ((y - a) / (x - a)).max(T::zero()).min(one);
            (
                Stencil {
                    idx: i - 1,
                    lo: w * (one - lam),
                    hi: w * lam,
                },
                one - w * lam,
            )
        }
    } else {
        let cell = if i == 1 {
            None
        } else {
            cell_for(nodes, y).map(|j| j.min(i - 2))
        };
        let (j, lo, hi) = interp_weights(nodes, cell, y, p);
        (
            Stencil {
                idx: j,
                lo: w * lo,
                hi: w * hi,
            },
            one,
        )
    }
}

/// `L_{εh} g`.
pub fn apply_transfer<T: Scalar>(ctx: &TransferContext<T>, g: &Density<T>) -> Result<Density<T>> {
    ctx.check_grid(g)?;
    Density::from_values(g.grid().clone(), ctx.apply_values(g.values()))
}

/// Transfer operator of a single branch, `(g/T') ∘ T_b^{-1}`.
pub fn apply_branch_transfer<T: Scalar>(
    ctx: &TransferContext<T>,
    g: &Density<T>,
    branch: Branch,
) -> Result<Density<T>> {
    ctx.check_grid(g)?;
    Density::from_values(
        g.grid().clone(),
        ctx.apply_branch_values(g.values(), branch),
    )
}

/// Remembers the last context so repeated maps (ε = 0, frozen coupling) reuse
/// their preimages, and nearby maps start their solves from them.
#[derive(Debug, Default)]
pub struct TransferCache<T> {
    last: Option<TransferContext<T>>,
    hits: usize,
    misses: usize,
}

impl<T: Scalar> TransferCache<T> {
    pub fn new() -> Self {
        TransferCache {
            last: None,
            hits: 0,
            misses: 0,
        }
    }

    pub fn context(&mut self, spec: MapSpec<T>, grid: &Arc<GradedGrid<T>>) -> &TransferContext<T> {
        let reuse = matches!(&self.last, Some(c) if c.spec.cache_key() == spec.cache_key() && Arc::ptr_eq(&c.grid, grid));
        if reuse {
            self.hits += 1;
        } else {
            self.misses += 1;
            let ctx = match &self.last {
                Some(prev) => TransferContext::with_hint(spec, grid.clone(), prev),
                None => TransferContext::new(spec, grid.clone()),
            };
            self.last = Some(ctx);
        }
        self.last.as_ref().expect("context present")
    }

    /// (hits, misses)
    pub fn stats(&self) -> (usize, usize) {
        (self.hits, self.misses)
    }
}

/// The nonlinear operator `h ↦ L_{εh} h`, renormalized to unit mass.
#[derive(Debug)]
pub struct SelfConsistentOperator<T> {
    pub family: Family,
    pub gamma_star: T,
    pub epsilon: T,
    cache: TransferCache<T>,
}

impl<T: Scalar> SelfConsistentOperator<T> {
    pub fn new(family: Family, gamma_star: T, epsilon: T) -> Self {
        SelfConsistentOperator {
            family,
            gamma_star,
            epsilon,
            cache: TransferCache::new(),
        }
    }

    /// Map `T_{εh}` built from the coupling functionals of `h`.
    pub fn map_for(&self, h: &Density<T>) -> Result<MapSpec<T>> {
        let (s, c) = h.coupling_functionals(self.family);
        MapSpec::new(self.family, self.gamma_star, self.epsilon, s, c)
    }

    /// One step; also returns the mass of `L_{εh} h` before renormalization.
    pub fn step_with_mass(&mut self, h: &Density<T>) -> Result<(Density<T>, T)> {
        let spec = self.map_for(h)?;
        let ctx = self.cache.context(spec, h.grid());
        let image = apply_transfer(ctx, h)?;
        let mass = image.quadrature()?;
        Ok((image.scaled(T::one() / mass), mass))
    }

    pub fn step(&mut self, h: &Density<T>) -> Result<Density<T>> {
        self.step_with_mass(h).map(|(d, _)| d)
    }

    pub fn cache_stats(&self) -> (usize, usize) {
        self.cache.stats()
    }
}

/// `L_ε h = L_{εh} h`, as a probability density.
pub fn self_consistent_step<T: Scalar>(
    h: &Density<T>,
    family: Family,
    gamma_star: T,
    epsilon: T,
) -> Result<Density<T>> {
    SelfConsistentOperator::new(family, gamma_star, epsilon).step(h)
}

#[derive(Clone, Debug)]
pub struct DirectIteration<T> {
    /// `d_k = ‖h_k − h_{k+1}‖₁`, `k = 0..n`
    pub residuals: Vec<T>,
    /// `‖h_k − h_ref‖₁`, `k = 0..=n`, when a reference was supplied
    pub reference_distances: Option<Vec<T>>,
    /// masses of `L_{εh_k} h_k` before renormalization
    pub raw_masses: Vec<T>,
    pub final_density: Density<T>,
}

/// `n` applications of the self-consistent operator starting from `h0`.
pub fn iterate_direct<T: Scalar>(
    h0: &Density<T>,
    n: usize,
    family: Family,
    gamma_star: T,
    epsilon: T,
    reference: Option<&Density<T>>,
) -> Result<DirectIteration<T>> {
    let mut op = SelfConsistentOperator::new(family, gamma_star, epsilon);
    let mut h = h0.clone();
    let mut residuals = Vec::with_capacity(n);
    let mut raw_masses = Vec::with_capacity(n);
    let mut refd = reference.map(|_| Vec::with_capacity(n + 1));
    if let (Some(r), Some(v)) = (reference, refd.as_mut()) {
        v.push(h.l1_distance(r)?);
    }
    for _ in 0..n {
        let (next, mass) = op.step_with_mass(&h)?;
        residuals.push(h.l1_distance(&next)?);
        raw_masses.push(mass);
        if let (Some(r), Some(v)) = (reference, refd.as_mut()) {
            v.push(next.l1_distance(r)?);
        }
        h = next;
    }
    Ok(DirectIteration {
        residuals,
        reference_distances: refd,
        raw_masses,
        final_density: h,
    })
}
