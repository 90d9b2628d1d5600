//! Sequences dominated by a polynomial term plus a convolution of their past:
//! `δ_n ≤ ξ n^{-a} + σ Σ_{j<n} δ_j (n−j)^{-a-1+β/γ}`, `a = 1/γ − 1`, imply
//! `δ_n ≤ K n^{-a}` with `K = max{δ_0, ξ/(1 − σ C_{β,γ})}` whenever
//! `σ C_{β,γ} < 1`.

use serde::Serialize;

use crate::Scalar;

const REL_TOL: f64 = 1e-12;

/// `C_{β,γ}` over `n = 1..=n_max`: the largest ratio
/// `Σ_{j<n} (j+1)^{1−1/γ} (n−j)^{−1/γ+β/γ} / (n+1)^{1−1/γ}`, with its maximizer.
pub fn c_beta_gamma<T: Scalar>(gamma: T, beta: T, n_max: usize) -> (T, usize) {
    let one = T::one();
    let a = one - one / gamma;
    let k = -one / gamma + beta / gamma;
    let pa: Vec<T> = (0..=n_max + 1)
        .map(|i| T::from_usize_lossy(i).powf(a))
        .collect();
    let pk: Vec<T> = (0..=n_max)
        .map(|i| T::from_usize_lossy(i).powf(k))
        .collect();
    let mut best = (T::zero(), 1);
    for n in 1..=n_max {
        let sum: T = (0..n).map(|j| pa[j + 1] * pk[n - j]).sum();
        let ratio = sum / pa[n + 1];
        if ratio > best.0 {
            best = (ratio, n);
        }
    }
    best
}

/// `C'` over `n = 1..=n_max`: the largest ratio
/// `Σ_{j<n} max(j,1)^{1−1/γ} (n−j)^{−1/γ+β/γ} / n^{1−1/γ}`, with its maximizer.
///
/// With this constant the induction `δ_j ≤ K' max(j,1)^{1−1/γ}` closes for
/// the bound `K' n^{1−1/γ}`, `K' = max{δ_0, ξ/(1 − σC')}`; with `C_{β,γ}` it
/// only closes for `(n+1)^{1−1/γ}` on the sum, while the `ξ n^{1−1/γ}` term
/// stays at `n`.
pub fn c_prime<T: Scalar>(gamma: T, beta: T, n_max: usize) -> (T, usize) {
    let one = T::one();
    let a = one - one / gamma;
    let k = -one / gamma + beta / gamma;
    let pa: Vec<T> = (0..=n_max)
        .map(|i| T::from_usize_lossy(i.max(1)).powf(a))
        .collect();
    let pk: Vec<T> = (0..=n_max)
        .map(|i| T::from_usize_lossy(i).powf(k))
        .collect();
    let mut best = (T::zero(), 1);
    for n in 1..=n_max {
        let sum: T = (0..n).map(|j| pa[j] * pk[n - j]).sum();
        let ratio = sum / pa[n];
        if ratio > best.0 {
            best = (ratio, n);
        }
    }
    best
}

#[derive(Clone, Debug, Serialize)]
pub struct SequenceBound<T> {
    pub xi: T,
    pub sigma: T,
    pub gamma: T,
    pub beta: T,
    /// computed over the length of `delta`
    pub c_beta_gamma: T,
    pub c_argmax: usize,
    /// `δ_0, δ_1, …`
    pub delta: Vec<T>,
}

impl<T: Scalar> SequenceBound<T> {
    pub fn new(xi: T, sigma: T, gamma: T, beta: T, delta: Vec<T>) -> Self {
        let (c, arg) = c_beta_gamma(gamma, beta, delta.len().saturating_sub(1).max(1));
        SequenceBound {
            xi,
            sigma,
            gamma,
            beta,
            c_beta_gamma: c,
            c_argmax: arg,
            delta,
        }
    }

    /// The sequence attaining the hypothesis with equality at every `n > 0`.
    pub fn saturating(xi: T, sigma: T, gamma: T, beta: T, delta0: T, len: usize) -> Self {
        let mut delta = Vec::with_capacity(len.max(1));
        delta.push(delta0);
        let kernel = kernel_powers(gamma, beta, len);
        for n in 1..len {
            let v = rhs(xi, sigma, gamma, &delta, &kernel, n);
            delta.push(v);
        }
        Self::new(xi, sigma, gamma, beta, delta)
    }
}

fn kernel_powers<T: Scalar>(gamma: T, beta: T, len: usize) -> Vec<T> {
    let k = -T::one() / gamma + beta / gamma;
    (0..len.max(1))
        .map(|i| T::from_usize_lossy(i).powf(k))
        .collect()
}

/// `ξ n^{1−1/γ} + σ Σ_{j<n} δ_j (n−j)^{-1/γ+β/γ}`
fn rhs<T: Scalar>(xi: T, sigma: T, gamma: T, delta: &[T], kernel: &[T], n: usize) -> T {
    let a = T::one() - T::one() / gamma;
    let conv: T = (0..n).map(|j| delta[j] * kernel[n - j]).sum();
    xi * T::from_usize_lossy(n).powf(a) + sigma * conv
}

#[derive(Clone, Debug, Serialize)]
pub struct SequenceReport<T> {
    pub hypothesis_holds: bool,
    /// whether `σ C_{β,γ} < 1`, so that the conclusion applies
    pub conclusion_applies: bool,
    /// false unless the conclusion applies and holds
    pub conclusion_holds: bool,
    /// `max{δ_0, ξ/(1−σC)}`; infinite when the conclusion does not apply
    pub k: T,
    pub sigma_c: T,
    pub c_beta_gamma: T,
    pub c_argmax: usize,
    /// `max_n δ_n n^{1/γ−1} / K`
    pub worst_ratio: T,
    /// first `n` where the conclusion fails
    pub first_violation: Option<usize>,
    /// the same check with [`c_prime`] in place of `C_{β,γ}`
    pub repaired: RepairedCheck<T>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RepairedCheck<T> {
    pub c_prime: T,
    pub sigma_c_prime: T,
    pub applies: bool,
    pub k: T,
    pub holds: bool,
    pub worst_ratio: T,
}

/// `(holds, worst ratio, first violation)` of `δ_n ≤ K n^{1−1/γ}`.
fn check_conclusion<T: Scalar>(d: &[T], k: T, gamma: T, tol: T) -> (bool, T, Option<usize>) {
    let a = T::one() - T::one() / gamma;
    let mut worst = T::zero();
    let mut first = None;
    for (n, &v) in d.iter().enumerate().skip(1) {
        let bound = k * T::from_usize_lossy(n).powf(a);
        if v > bound * (T::one() + tol) && first.is_none() {
            first = Some(n);
        }
        if bound > T::zero() && bound.is_finite() {
            worst = worst.max(v / bound);
        }
    }
    (first.is_none(), worst, first)
}

pub fn verify_sequence_lemma<T: Scalar>(sb: &SequenceBound<T>) -> SequenceReport<T> {
    let tol = T::lit(REL_TOL);
    let d = &sb.delta;
    let kernel = kernel_powers(sb.gamma, sb.beta, d.len());
    let hypothesis_holds = (1..d.len()).all(|n| {
        let r = rhs(sb.xi, sb.sigma, sb.gamma, d, &kernel, n);
        d[n] <= r + tol * r.abs().max(T::min_positive_value())
    });
    let sigma_c = sb.sigma * sb.c_beta_gamma;
    let conclusion_applies = sigma_c < T::one();
    let delta0 = d.first().copied().unwrap_or(T::zero());
    let k_of = |sc: T| {
        if sc < T::one() {
            delta0.max(sb.xi / (T::one() - sc))
        } else {
            T::infinity()
        }
    };
    let k = k_of(sigma_c);
    let (holds, worst, first_violation) = check_conclusion(d, k, sb.gamma, tol);

    let (cp, _) = c_prime(sb.gamma, sb.beta, d.len().saturating_sub(1).max(1));
    let sigma_cp = sb.sigma * cp;
    let kp = k_of(sigma_cp);
    let (holds_p, worst_p, _) = check_conclusion(d, kp, sb.gamma, tol);
    SequenceReport {
        hypothesis_holds,
        conclusion_applies,
        conclusion_holds: hypothesis_holds && conclusion_applies && holds,
        k,
        sigma_c,
        c_beta_gamma: sb.c_beta_gamma,
        c_argmax: sb.c_argmax,
        worst_ratio: worst,
        first_violation,
        repaired: RepairedCheck {
            c_prime: cp,
            sigma_c_prime: sigma_cp,
            applies: sigma_cp < T::one(),
            k: kp,
            holds: hypothesis_holds && sigma_cp < T::one() && holds_p,
            worst_ratio: worst_p,
        },
    }
}
