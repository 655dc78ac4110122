//! Guaranteed decay rates and feasibility sets for threshold policies.
//!
//! Under a certificate with rates `(a_S, a_U)`, a wait threshold `n` and a
//! per-active-step success probability `η`, the expected certificate value
//! contracts at least at
//!
//! ```text
//! β(n, η) = exp( (η ln(a_S a_Uⁿ) + (1 - η) ln a_U) / (1 + n η) )
//! ```
//!
//! per step. A policy meets the target `μ` when `β(n, η) ≤ μ`. Since
//! `β(n, ·)` is strictly decreasing and both `η_C(h̄, ·)` and `η_I(h̄, ·)`
//! are nondecreasing, the feasible powers (gains) for each `(n, h̄)` form
//! an interval whose left endpoint is found by bisection.

use serde::Serialize;

use crate::channel::ChannelModel;
use crate::cost::{PowerRule, ThresholdPolicy};
use crate::error::{Error, Result};

/// Target decay rate `μ` together with the certificate rates it refers to.
#[derive(Clone, Copy, Debug)]
pub struct RateTarget {
    a_s: f64,
    a_u: f64,
    mu: f64,
}

impl RateTarget {
    /// Requires `a_S ∈ [0,1)`, `a_U > a_S` and `μ ∈ (a_S, min(1, a_U))`.
    pub fn new(a_s: f64, a_u: f64, mu: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&a_s) {
            return Err(Error::invalid(format!("a_S must lie in [0,1), got {a_s}")));
        }
        if a_u <= a_s {
            return Err(Error::invalid(format!("a_U ({a_u}) must exceed a_S ({a_s})")));
        }
        if !(mu > a_s && mu < a_u.min(1.0)) {
            return Err(Error::invalid(format!(
                "mu must lie in ({a_s}, {}), got {mu}",
                a_u.min(1.0)
            )));
        }
        Ok(RateTarget { a_s, a_u, mu })
    }

    pub fn success_rate(&self) -> f64 {
        self.a_s
    }
    pub fn failure_rate(&self) -> f64 {
        self.a_u
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
}

/// Guaranteed per-step decay rate for wait threshold `n` and success
/// probability `η`.
pub fn beta(n: usize, eta: f64, rt: &RateTarget) -> f64 {
    let eta = eta.clamp(0.0, 1.0);
    // Exact algebraic endpoints, a hair off through exp(ln(..)).
    if eta == 0.0 {
        return rt.a_u;
    }
    if eta == 1.0 && n == 0 {
        return rt.a_s;
    }
    let ln_s = rt.a_s.ln() + n as f64 * rt.a_u.ln();
    let ln_u = rt.a_u.ln();
    ((eta * ln_s + (1.0 - eta) * ln_u) / (1.0 + n as f64 * eta)).exp()
}

/// Smallest success probability with `β(n, η) = μ`, solved in closed form
/// (the log of `β` is a ratio of affine functions of `η`). `None` when no
/// `η ∈ (0, 1]` achieves the target.
pub fn required_eta(n: usize, rt: &RateTarget) -> Option<f64> {
    let num = rt.mu.ln() - rt.a_u.ln();
    let den = rt.a_s.ln() + (n as f64 - 1.0) * rt.a_u.ln() - n as f64 * rt.mu.ln();
    if den >= 0.0 {
        return None;
    }
    let eta = num / den;
    (0.0 < eta && eta <= 1.0).then_some(eta)
}

/// Largest wait threshold that any success probability can stabilize:
/// the last `n` with `(a_S a_Uⁿ)^(1/(n+1)) ≤ μ`. The left side is strictly
/// increasing in `n`, so the first failure ends the scan.
pub fn max_horizon(rt: &RateTarget) -> usize {
    let mut n = 0usize;
    loop {
        let next = n + 1;
        let log_beta1 = (rt.a_s.ln() + next as f64 * rt.a_u.ln()) / (next as f64 + 1.0);
        if log_beta1 > rt.mu.ln() {
            return n;
        }
        n = next;
    }
}

/// Smallest feasible constant power `p̲(μ, n, h̄) ∈ [0, P_max]`, i.e. the
/// least `p` with `η_C(h̄, p) ≥ η*(n)`. `None` when even the power cap
/// cannot reach the required success probability.
pub fn min_power(ch: &ChannelModel, rt: &RateTarget, n: usize, hbar: f64) -> Result<Option<f64>> {
    let Some(eta_star) = required_eta(n, rt) else {
        return Ok(None);
    };
    if ch.eta_constant(hbar, 0.0)? >= eta_star {
        return Ok(Some(0.0));
    }
    if ch.eta_constant(hbar, ch.max_power())? < eta_star {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, ch.max_power());
    let tol = 1e-9 * ch.max_power();
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if ch.eta_constant(hbar, mid)? >= eta_star {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Smallest feasible inversion gain `κ̲(μ, n, h̄) ≥ 0`. `None` when even
/// full saturation (`κ → ∞`, every tail point at the power cap) stays
/// below the required success probability.
pub fn min_gain(ch: &ChannelModel, rt: &RateTarget, n: usize, hbar: f64) -> Result<Option<f64>> {
    let Some(eta_star) = required_eta(n, rt) else {
        return Ok(None);
    };
    if ch.eta_inversion(hbar, 0.0) >= eta_star {
        return Ok(Some(0.0));
    }
    if ch.eta_inversion_sup(hbar) < eta_star {
        return Ok(None);
    }
    // η_I(h̄, ·) is nondecreasing; grow a bracket then bisect.
    let kappa_max = ch.max_gain() * ch.max_power();
    let mut hi = 1.0f64;
    while ch.eta_inversion(hbar, hi) < eta_star {
        hi *= 2.0;
        if hi > kappa_max {
            hi = kappa_max;
            break;
        }
    }
    if ch.eta_inversion(hbar, hi) < eta_star {
        // Supremum is attained only in the limit; the bound said feasible,
        // so the cap value must already be within rounding of the target.
        return Ok(Some(kappa_max));
    }
    let mut lo = 0.0f64;
    let tol = 1e-9 * hi.max(1.0);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if ch.eta_inversion(hbar, mid) >= eta_star {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Smallest constant power certified feasible by the success-probability
/// lower bound `η_C(h̄, p) ≥ Pr(h ≥ h̄) ψ(h̄ p)` alone: the least `p` with
/// `Pr(h ≥ h̄) ψ(h̄ p) ≥ η*(n)`. Conservative (never below [`min_power`]),
/// but needs no evaluation of the alphabet sum.
pub fn min_power_lower_bound(
    ch: &ChannelModel,
    rt: &RateTarget,
    n: usize,
    hbar: f64,
) -> Option<f64> {
    let eta_star = required_eta(n, rt)?;
    if hbar <= 0.0 {
        return None;
    }
    let tail = ch.tail_prob(hbar);
    if tail <= 0.0 {
        return None;
    }
    let target = eta_star / tail;
    if target > 1.0 {
        return None;
    }
    if ch.psi.eval(hbar * ch.max_power()) < target {
        return None;
    }
    if ch.psi.eval(0.0) >= target {
        return Some(0.0);
    }
    let (mut lo, mut hi) = (0.0, ch.max_power());
    let tol = 1e-9 * ch.max_power();
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if ch.psi.eval(hbar * mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Verdict of the stability check for one concrete policy.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PolicyCheck {
    /// Success probability per active step induced by the policy.
    pub eta: f64,
    /// Guaranteed decay rate `β(n, η)`.
    pub achieved_beta: f64,
    /// Target rate the policy was checked against.
    pub mu: f64,
    pub pass: bool,
}

/// Evaluate `β(n, η)` for the policy's induced success probability and
/// compare against the target (with a 1e-9 slack for rates produced by
/// bisection at the feasibility boundary).
pub fn verify_policy(ch: &ChannelModel, rt: &RateTarget, policy: &ThresholdPolicy) -> Result<PolicyCheck> {
    let eta = match policy.rule {
        PowerRule::Constant { power } => ch.eta_constant(policy.channel_threshold, power)?,
        PowerRule::Inversion { gain } => ch.eta_inversion(policy.channel_threshold, gain),
    };
    let achieved_beta = beta(policy.wait_threshold, eta, rt);
    Ok(PolicyCheck {
        eta,
        achieved_beta,
        mu: rt.mu(),
        pass: achieved_beta <= rt.mu() + 1e-9,
    })
}

/// One row of the feasibility table.
#[derive(Clone, Debug, Serialize)]
pub struct FeasibilityRow {
    pub n: usize,
    pub eta_star: Option<f64>,
    pub p_lower: Option<f64>,
    pub kappa_lower: Option<f64>,
}

/// Required success probabilities and minimal powers/gains for every wait
/// threshold up to [`max_horizon`], at one channel threshold.
#[derive(Clone, Debug, Serialize)]
pub struct FeasibilityWindow {
    pub hbar: f64,
    pub horizon: usize,
    pub rows: Vec<FeasibilityRow>,
}

pub fn feasibility_window(ch: &ChannelModel, rt: &RateTarget, hbar: f64) -> Result<FeasibilityWindow> {
    let horizon = max_horizon(rt);
    let mut rows = Vec::with_capacity(horizon + 1);
    for n in 0..=horizon {
        rows.push(FeasibilityRow {
            n,
            eta_star: required_eta(n, rt),
            p_lower: min_power(ch, rt, n, hbar)?,
            kappa_lower: min_gain(ch, rt, n, hbar)?,
        });
    }
    Ok(FeasibilityWindow { hbar, horizon, rows })
}
