//! Densities on `(0, 1]` sampled on a singularity-graded grid.
//!
//! Nodes are `x_i = (i/n)^q`, `i = 1..=n`. The point 0 itself is never
//! sampled: densities of interest behave like `x^{-γ}` there. On the first
//! cell `(0, x_1]` a density is modelled by the power law through its first two
//! node values. Every other cell uses the power law through its two endpoint
//! values (linear if one of them vanishes), integrated exactly, so pure power
//! laws carry no quadrature error at all.

mod cone;

pub use cone::{cone_membership, derivative_ratio_check, ConeParams, ConeReport, RatioCheck};

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::map_family::Family;
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradedGrid<T> {
    n_cells: usize,
    grading_q: T,
    /// `x_1..=x_n`; `x_0 = 0` is implicit.
    nodes: Vec<T>,
    /// trapezoid weights over `x_1..=x_n`
    #[serde(skip)]
    weights: Vec<T>,
}

impl<T: Scalar> GradedGrid<T> {
    pub fn new(n_cells: usize, grading_q: T) -> Result<Self> {
        if n_cells < 4 {
            return Err(Error::InvalidParameter {
                name: "n_cells",
                reason: format!("{n_cells} < 4"),
            });
        }
        if !(grading_q >= T::one()) || !grading_q.is_finite() {
            return Err(Error::InvalidParameter {
                name: "grading_q",
                reason: format!("{grading_q} < 1"),
            });
        }
        let n = T::from_usize_lossy(n_cells);
        let mut nodes: Vec<T> = (1..=n_cells)
            .map(|i| (T::from_usize_lossy(i) / n).powf(grading_q))
            .collect();
        nodes[n_cells - 1] = T::one();
        if nodes[0] <= T::zero() || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter {
                name: "grading_q",
                reason: "nodes underflow or collide for this resolution".into(),
            });
        }
        Ok(Self::from_parts(n_cells, grading_q, nodes))
    }

    /// Grid with the default grading `max(3, ⌈2/(1−γ)⌉)` for densities behaving like `x^{-γ}`.
    pub fn for_exponent(n_cells: usize, gamma: T) -> Result<Self> {
        Self::new(n_cells, Self::default_grading(gamma))
    }

    pub fn default_grading(gamma: T) -> T {
        (T::lit(2.0) / (T::one() - gamma)).ceil().max(T::lit(3.0))
    }

    fn from_parts(n_cells: usize, grading_q: T, nodes: Vec<T>) -> Self {
        let half = T::lit(0.5);
        let n = nodes.len();
        let weights = (0..n)
            .map(|i| {
                let left = if i == 0 { nodes[0] } else { nodes[i - 1] };
                let right = if i + 1 == n { nodes[i] } else { nodes[i + 1] };
                (right - left) * half
            })
            .collect();
        GradedGrid {
            n_cells,
            grading_q,
            nodes,
            weights,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn grading_q(&self) -> T {
        self.grading_q
    }

    /// Evaluation points `x_1..=x_n`.
    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True when `x^{-γ}` is integrable in the first-cell model of this grid.
    pub fn resolves_exponent(&self, gamma: T) -> bool {
        self.grading_q >= T::one() / (T::one() - gamma)
    }

    /// Index `j` with `nodes[j] <= y <= nodes[j + 1]`, or `None` when `y < x_1`.
    pub fn cell_containing(&self, y: T) -> Option<usize> {
        if y < self.nodes[0] {
            return None;
        }
        let p = self.nodes.partition_point(|&x| x <= y);
        Some(p.saturating_sub(1).min(self.nodes.len() - 2))
    }
}

/// Probability density (or any nonnegative function) sampled at grid nodes.
#[derive(Clone, Debug)]
pub struct Density<T> {
    grid: Arc<GradedGrid<T>>,
    values: Vec<T>,
    /// exponent `p` of the power law `v_1 (x/x_1)^p` used on `(0, x_1]`
    tail_exponent: T,
}

impl<T: Scalar> Density<T> {
    pub fn from_values(grid: Arc<GradedGrid<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        for (&x, &v) in grid.nodes().iter().zip(&values) {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::InvalidDensity {
                    x: x.to_f64_lossy(),
                    value: v.to_f64_lossy(),
                    requirement: "finite and nonnegative",
                });
            }
        }
        let tail_exponent = fit_tail_exponent(grid.nodes(), &values);
        Ok(Density {
            grid,
            values,
            tail_exponent,
        })
    }

    pub fn from_fn(grid: Arc<GradedGrid<T>>, f: impl Fn(T) -> T) -> Result<Self> {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Self::from_values(grid, values)
    }

    pub fn constant(grid: Arc<GradedGrid<T>>, value: T) -> Result<Self> {
        Self::from_fn(grid, |_| value)
    }

    /// `(1 − γ) x^{-γ}`, the reference density of the cones.
    pub fn power_law(grid: Arc<GradedGrid<T>>, gamma: T) -> Result<Self> {
        Self::from_fn(grid, |x| (T::one() - gamma) * x.powf(-gamma))
    }

    pub fn grid(&self) -> &Arc<GradedGrid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn tail_exponent(&self) -> T {
        self.tail_exponent
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Mass on the first cell `(0, x_1]` under the power-law model.
    fn tail_mass(&self) -> Result<T> {
        tail_integral(self.grid.nodes()[0], self.values[0], self.tail_exponent)
    }

    /// `∫_0^1 g`: analytic power law on `(0, x_1]`, then cell by cell (see [`cell_integral`]).
    pub fn quadrature(&self) -> Result<T> {
        Ok(self.tail_mass()? + body_integral(self.grid.nodes(), &self.values))
    }

    /// Rescales to unit mass. Idempotent up to rounding.
    pub fn normalize(&self) -> Result<Self> {
        let mass = self.quadrature()?;
        if !(mass > T::zero()) {
            return Err(Error::InvalidDensity {
                x: 0.0,
                value: mass.to_f64_lossy(),
                requirement: "of positive total mass",
            });
        }
        Ok(self.scaled(T::one() / mass))
    }

    /// `c g`; the tail exponent is scale invariant.
    pub fn scaled(&self, c: T) -> Self {
        Density {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| v * c).collect(),
            tail_exponent: self.tail_exponent,
        }
    }

    /// `a f + b g` for nonnegative results.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&f, &g)| a * f + b * g)
            .collect();
        Self::from_values(self.grid.clone(), values)
    }

    pub fn l1_distance(&self, other: &Self) -> Result<T> {
        self.same_grid(other)?;
        let diff: Vec<T> = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&f, &g)| (f - g).abs())
            .collect();
        let tail = (self.tail_mass()? - other.tail_mass()?).abs();
        Ok(body_integral(self.grid.nodes(), &diff) + tail)
    }

    /// Coupling scalars `(s_h, c_h)`: `(∫h sin 2πs, ∫h cos 2πs)` for the coupled
    /// family, `(∫h sin πs, 0)` for the remark family.
    pub fn coupling_functionals(&self, family: Family) -> (T, T) {
        match family {
            Family::CoupledPm => {
                let (c, s) = self.fourier_integral(T::PI() + T::PI());
                (s, c)
            }
            Family::RemarkPm => (self.fourier_integral(T::PI()).1, T::zero()),
        }
    }

    /// `(∫ g cos ωx, ∫ g sin ωx)` for the piecewise linear interpolant of the
    /// node values, integrated exactly cell by cell. Linear in `g`, and exact for
    /// `g ≡ 1` up to rounding.
    pub fn fourier_integral(&self, omega: T) -> (T, T) {
        let nodes = self.grid.nodes();
        let mut re = T::zero();
        let mut im = T::zero();
        for i in 1..nodes.len() {
            let (a, b) = (nodes[i - 1], nodes[i]);
            let h = b - a;
            let ((ar, ai), (br, bi)) = linear_phase_weights(omega * h);
            let (ga, gb) = (self.values[i - 1], self.values[i]);
            let (pr, pi) = (ga * ar + gb * br, ga * ai + gb * bi);
            let (c, s) = ((omega * a).cos(), (omega * a).sin());
            re += h * (c * pr - s * pi);
            im += h * (c * pi + s * pr);
        }
        let tail = self.tail_mass().unwrap_or(T::zero());
        let p = self.tail_exponent;
        let mean = nodes[0] * (T::one() + p) / (T::lit(2.0) + p);
        (
            re + tail * (omega * mean).cos(),
            im + tail * (omega * mean).sin(),
        )
    }

    /// `∫ g k` for a bounded smooth kernel `k` (trapezoid rule).
    pub fn integrate_against(&self, kernel: impl Fn(T) -> T) -> T {
        let nodes = self.grid.nodes();
        let body: T = self
            .grid
            .weights
            .iter()
            .zip(nodes.iter().zip(&self.values))
            .map(|(&w, (&x, &v))| w * v * kernel(x))
            .sum();
        let tail = self.tail_mass().unwrap_or(T::zero()) * kernel(nodes[0] * T::lit(0.5));
        body + tail
    }

    /// Cumulative integrals `∫_0^{x_i} g` at every node.
    pub fn cumulative(&self) -> Result<Vec<T>> {
        let nodes = self.grid.nodes();
        let mut acc = self.tail_mass()?;
        let mut out = Vec::with_capacity(nodes.len());
        out.push(acc);
        for i in 1..nodes.len() {
            acc += cell_integral(nodes[i - 1], nodes[i], self.values[i - 1], self.values[i]);
            out.push(acc);
        }
        Ok(out)
    }

    /// Value at an arbitrary point, consistent with the quadrature model.
    pub fn value_at(&self, x: T) -> Result<T> {
        if !(x > T::zero() && x <= T::one()) {
            return Err(Error::OutOfDomain(x.to_f64_lossy()));
        }
        let nodes = self.grid.nodes();
        match self.grid.cell_containing(x) {
            None => Ok(self.values[0] * (x / nodes[0]).powf(self.tail_exponent)),
            Some(j) => {
                let (a, b) = (nodes[j], nodes[j + 1]);
                let (ga, gb) = (self.values[j], self.values[j + 1]);
                if power_cell(ga, gb) {
                    Ok(ga * ((gb / ga).ln() * (x / a).ln() / (b / a).ln()).exp())
                } else {
                    Ok(ga + (x - a) / (b - a) * (gb - ga))
                }
            }
        }
    }

    /// `∫_0^x g` using the same model as [`Density::cumulative`].
    pub fn cdf_with(&self, cumulative: &[T], x: T) -> T {
        if x <= T::zero() {
            return T::zero();
        }
        let nodes = self.grid.nodes();
        if x >= T::one() {
            return cumulative[cumulative.len() - 1];
        }
        match self.grid.cell_containing(x) {
            None => cumulative[0] * (x / nodes[0]).powf(T::one() + self.tail_exponent),
            Some(j) => {
                let (a, b) = (nodes[j], nodes[j + 1]);
                let (ga, gb) = (self.values[j], self.values[j + 1]);
                if power_cell(ga, gb) {
                    let p = (gb / ga).ln() / (b / a).ln();
                    let r = (x / a).ln();
                    cumulative[j] + a * ga * r * expm1_ratio((T::one() + p) * r)
                } else {
                    let gx = ga + (x - a) / (b - a) * (gb - ga);
                    cumulative[j] + (x - a) * (ga + gx) * T::lit(0.5)
                }
            }
        }
    }
    /// `sup_i g(x_i) x_i^β`.
    pub fn weighted_sup(&self, beta: T) -> T {
        self.grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(&x, &v)| v * x.powf(beta))
            .fold(T::zero(), T::max)
    }

    /// Slope of the least-squares line through `(log x_i, log g(x_i))` over
    /// nodes in `[x_lo, x_hi]`; `-γ` for `x^{-γ}`.
    pub fn local_exponent(&self, x_lo: T, x_hi: T) -> Result<T> {
        let pts: Vec<(T, T)> = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .filter(|(&x, &v)| x >= x_lo && x <= x_hi && v > T::zero())
            .map(|(&x, &v)| (x.ln(), v.ln()))
            .collect();
        if pts.len() < 2 {
            return Err(Error::TooFewPoints {
                needed: 2,
                got: pts.len(),
            });
        }
        let m = T::from_usize_lossy(pts.len());
        let mx = pts.iter().map(|p| p.0).sum::<T>() / m;
        let my = pts.iter().map(|p| p.1).sum::<T>() / m;
        let sxy: T = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: T = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        Ok(sxy / sxx)
    }

    pub fn min_value(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    /// CSV with header `x,value`, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,value\n");
        for (x, v) in self.grid.nodes().iter().zip(&self.values) {
            let _ = writeln!(s, "{x:e},{v:e}");
        }
        s
    }

    /// Parses the output of [`Density::to_csv`]. Nodes must be strictly
    /// increasing, form a graded grid and carry nonnegative values.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim() == "x,value" => {}
            _ => {
                return Err(Error::Csv {
                    line: 1,
                    reason: "expected header `x,value`".into(),
                })
            }
        }
        let mut xs: Vec<T> = Vec::new();
        let mut vs: Vec<T> = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut field = |name: &str| -> Result<T> {
                let raw = parts.next().ok_or_else(|| Error::Csv {
                    line: line_no,
                    reason: format!("missing {name}"),
                })?;
                let v: f64 = raw.trim().parse().map_err(|_| Error::Csv {
                    line: line_no,
                    reason: format!("cannot parse {name} `{raw}`"),
                })?;
                Ok(T::lit(v))
            };
            let x = field("x")?;
            let v = field("value")?;
            if let Some(&prev) = xs.last() {
                if x <= prev {
                    return Err(Error::Csv {
                        line: line_no,
                        reason: "x is not increasing".into(),
                    });
                }
            }
            if !(v >= T::zero()) {
                return Err(Error::Csv {
                    line: line_no,
                    reason: "negative value".into(),
                });
            }
            xs.push(x);
            vs.push(v);
        }
        let n = xs.len();
        if n < 4 {
            return Err(Error::Csv {
                line: n + 1,
                reason: "too few rows".into(),
            });
        }
        let q = xs[0].ln() / (T::one() / T::from_usize_lossy(n)).ln();
        let q = if (q - q.round()).abs() < T::lit(1e-9) * q {
            q.round()
        } else {
            q
        };
        let grid = GradedGrid::new(n, q)?;
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
        for (i, (&a, &b)) in xs.iter().zip(grid.nodes()).enumerate() {
            if ((a - b) / b).abs() > tol {
                return Err(Error::Csv {
                    line: i + 2,
                    reason: "nodes do not form a graded grid".into(),
                });
            }
        }
        Density::from_values(Arc::new(grid), vs)
    }
}

fn fit_tail_exponent<T: Scalar>(nodes: &[T], values: &[T]) -> T {
    let (v0, v1) = (values[0], values[1]);
    if v0 > T::zero() && v1 > T::zero() {
        (v1 / v0).ln() / (nodes[1] / nodes[0]).ln()
    } else {
        T::zero()
    }
}

fn power_cell<T: Scalar>(ga: T, gb: T) -> bool {
    ga > T::zero() && gb > T::zero()
}

/// `∫_a^b g` for one cell: the power law through `(a, g_a)`, `(b, g_b)`, or
/// the trapezoid rule when a value vanishes.
fn cell_integral<T: Scalar>(a: T, b: T, ga: T, gb: T) -> T {
    if power_cell(ga, gb) {
        let r = (b / a).ln();
        a * ga * r * expm1_ratio((gb / ga).ln() + r)
    } else {
        (b - a) * (ga + gb) * T::lit(0.5)
    }
}

fn body_integral<T: Scalar>(nodes: &[T], values: &[T]) -> T {
    let mut acc = T::zero();
    for i in 1..nodes.len() {
        acc += cell_integral(nodes[i - 1], nodes[i], values[i - 1], values[i]);
    }
    acc
}

/// `(e^t − 1)/t`
fn expm1_ratio<T: Scalar>(t: T) -> T {
    if t.abs() < T::lit(1e-8) {
        T::one() + t * T::lit(0.5)
    } else {
        t.exp_m1() / t
    }
}

/// `(∫_0^1 (1−t) e^{iθt} dt, ∫_0^1 t e^{iθt} dt)` as (re, im) pairs.
fn linear_phase_weights<T: Scalar>(theta: T) -> ((T, T), (T, T)) {
    if theta.abs() < T::lit(0.1) {
        // Σ (iθ)^k/k! · (1/((k+1)(k+2)), 1/(k+2))
        let (mut ar, mut ai, mut br, mut bi) = (T::zero(), T::zero(), T::zero(), T::zero());
        let mut term = T::one();
        for k in 0..10usize {
            let kf = T::from_usize_lossy(k);
            let wa = term / ((kf + T::one()) * (kf + T::lit(2.0)));
            let wb = term / (kf + T::lit(2.0));
            match k % 4 {
                0 => {
                    ar += wa;
                    br += wb;
                }
                1 => {
                    ai += wa;
                    bi += wb;
                }
                2 => {
                    ar -= wa;
                    br -= wb;
                }
                _ => {
                    ai -= wa;
                    bi -= wb;
                }
            }
            term = term * theta / (kf + T::one());
        }
        return ((ar, ai), (br, bi));
    }
    let (s, c) = theta.sin_cos();
    let t2 = theta * theta;
    let a = ((T::one() - c) / t2, T::one() / theta - s / t2);
    let b = (s / theta + (c - T::one()) / t2, -c / theta + s / t2);
    (a, b)
}

fn tail_integral<T: Scalar>(x1: T, v1: T, p: T) -> Result<T> {
    if v1 == T::zero() {
        return Ok(T::zero());
    }
    if !(p > -T::one()) {
        return Err(Error::NonIntegrableTail(p.to_f64_lossy()));
    }
    Ok(v1 * x1 / (T::one() + p))
}
