//! Minimization of the average communication power over threshold
//! policies, subject to the decay-rate constraint `β(n, η) ≤ μ`.
//!
//! The joint problem is non-convex, but four structured sub-cases admit a
//! finite candidate search; a grid-plus-refinement fallback covers the
//! rest. All searches are exhaustive over the wait thresholds `0..=N`
//! (with `N` from [`stability::max_horizon`]) and the channel alphabet.
//! Cost functions along the power axis are either increasing or
//! N-shaped, so each one-dimensional search reduces to the candidate set
//! `{feasibility boundary, interior local minimum, cap}`; the interior
//! point is located by a derivative-sign scan followed by bisection.
//!
//! Ties are broken deterministically: lowest cost, then smallest wait
//! threshold, then smallest channel threshold, then smallest power.

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ChannelModel;
use crate::cost::{self, CostBreakdown, PowerRule, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::stability::{self, PolicyCheck, RateTarget};

/// Which power rule a solver should optimize.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Constant,
    Inversion,
}

/// Which structured sub-case produced an outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    PureChannel,
    PureTime,
    /// Cost evaluated under the near-sure-delivery approximation
    /// `η_C ≈ Pr(h ≥ h̄)(1 - ε)`; the stability check still uses the exact
    /// success probability.
    EpsLoss,
    UnsaturatedInversion,
    GeneralGrid,
}

impl SolveMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveMode::PureChannel => "pure-channel",
            SolveMode::PureTime => "pure-time",
            SolveMode::EpsLoss => "eps-loss",
            SolveMode::UnsaturatedInversion => "unsaturated",
            SolveMode::GeneralGrid => "general",
        }
    }
}

/// Minimizer returned by a solver. Construction verifies the policy
/// against the rate target, so every outcome is stability-feasible.
#[derive(Clone, Debug, Serialize)]
pub struct OptimizationOutcome {
    pub policy: ThresholdPolicy,
    pub cost: CostBreakdown,
    pub mode: SolveMode,
    pub candidates_examined: usize,
    pub verification: PolicyCheck,
}

/// Candidate ordering key: cost, then the deterministic tie-breaks.
type Key = (f64, usize, f64, f64);

fn better(a: &Key, b: &Key) -> bool {
    use std::cmp::Ordering::*;
    match a.0.total_cmp(&b.0) {
        Less => true,
        Greater => false,
        Equal => match a.1.cmp(&b.1) {
            Less => true,
            Greater => false,
            Equal => match a.2.total_cmp(&b.2) {
                Less => true,
                Greater => false,
                Equal => a.3.total_cmp(&b.3).is_lt(),
            },
        },
    }
}

struct Candidate {
    key: Key,
    rule: PowerRule,
    cost: CostBreakdown,
}

struct Search {
    best: Option<Candidate>,
    examined: usize,
}

impl Search {
    fn new() -> Self {
        Search { best: None, examined: 0 }
    }

    fn offer(&mut self, n: usize, hbar: f64, power: f64, rule: PowerRule, cost: CostBreakdown) {
        self.examined += 1;
        let key = (cost.total, n, hbar, power);
        if self.best.as_ref().is_none_or(|b| better(&key, &b.key)) {
            self.best = Some(Candidate { key, rule, cost });
        }
    }

    fn merge(mut self, other: Search) -> Search {
        self.examined += other.examined;
        if let Some(c) = other.best {
            if self.best.as_ref().is_none_or(|b| better(&c.key, &b.key)) {
                self.best = Some(c);
            }
        }
        self
    }

    fn finish(self, ch: &ChannelModel, rt: &RateTarget, mode: SolveMode) -> Result<Option<OptimizationOutcome>> {
        let Some(c) = self.best else {
            return Ok(None);
        };
        let policy = ThresholdPolicy::new(c.key.1, c.key.2, c.rule, ch)?;
        let verification = stability::verify_policy(ch, rt, &policy)?;
        if !verification.pass {
            return Err(Error::infeasible(format!(
                "optimizer selected a candidate failing the stability check (beta {} > mu {})",
                verification.achieved_beta,
                rt.mu()
            )));
        }
        Ok(Some(OptimizationOutcome {
            policy,
            cost: c.cost,
            mode,
            candidates_examined: self.examined,
            verification,
        }))
    }
}

/// Rightmost interior local minimum of a cost along one power axis:
/// scan the derivative sign on a grid (the descent probe), then bisect
/// the rightmost negative-to-positive crossing.
fn rightmost_interior_min(deriv: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Option<f64> {
    if !(hi > lo) {
        return None;
    }
    const PROBE: usize = 128;
    let step = (hi - lo) / PROBE as f64;
    let mut crossing = None;
    let mut prev = deriv(lo);
    for i in 1..=PROBE {
        let x = lo + i as f64 * step;
        let d = deriv(x);
        if prev < 0.0 && d >= 0.0 {
            crossing = Some((x - step, x));
        }
        prev = d;
    }
    let (mut a, mut b) = crossing?;
    let tol = 1e-8 * hi.max(1.0);
    while b - a > tol {
        let m = 0.5 * (a + b);
        if deriv(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Sign-carrying derivative of the pure-time cost `p / (1 + n η_C(0, p))`.
fn pure_time_cost_slope(ch: &ChannelModel, n: usize, p: f64) -> f64 {
    let eta: f64 = ch
        .alphabet()
        .iter()
        .zip(ch.pmf())
        .map(|(h, r)| ch.psi.eval(p * h) * r)
        .sum();
    let deta: f64 = ch
        .alphabet()
        .iter()
        .zip(ch.pmf())
        .map(|(h, r)| h * ch.psi.derivative(p * h) * r)
        .sum();
    (1.0 + n as f64 * eta) - p * n as f64 * deta
}

/// Sign-carrying derivative of the unsaturated inversion cost
/// `(P_S + κ S) / (1 + n t ψ(κ))` with `S = Σ ρ/h`, `t = Pr(h ≥ h̄)`.
fn unsaturated_cost_slope(
    ch: &ChannelModel,
    n: usize,
    sum_rho_over_h: f64,
    tail: f64,
    kappa: f64,
) -> f64 {
    let denom = 1.0 + n as f64 * tail * ch.psi.eval(kappa);
    let numer = ch.sensing_power() + kappa * sum_rho_over_h;
    sum_rho_over_h * denom - numer * n as f64 * tail * ch.psi.derivative(kappa)
}

/// One point of a cost-versus-threshold sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub hbar: f64,
    /// Optimal power (constant rule) or gain (inversion rule); absent when
    /// the threshold is infeasible.
    pub level: Option<f64>,
    pub cost: Option<f64>,
}

/// Pure channel-threshold policies: `n = 0`, minimal feasible power or
/// gain per threshold (the cost is increasing along the power axis when
/// the clock never waits).
pub fn pure_channel_sweep(ch: &ChannelModel, rt: &RateTarget, rule: RuleKind) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(ch.alphabet().len());
    for &hbar in ch.alphabet() {
        let point = match rule {
            RuleKind::Constant => stability::min_power(ch, rt, 0, hbar)?
                .map(|p| (p, cost::cost_constant(ch, 0, hbar, p).map(|c| c.total)))
                .map(|(p, c)| c.map(|c| (p, c)))
                .transpose()?,
            RuleKind::Inversion => stability::min_gain(ch, rt, 0, hbar)?
                .map(|k| (k, cost::cost_inversion(ch, 0, hbar, k).map(|c| c.total)))
                .map(|(k, c)| c.map(|c| (k, c)))
                .transpose()?,
        };
        out.push(SweepPoint {
            hbar,
            level: point.map(|(l, _)| l),
            cost: point.map(|(_, c)| c),
        });
    }
    Ok(out)
}

/// Solve the pure channel-threshold problem: argmin of the sweep.
pub fn solve_pure_channel(
    ch: &ChannelModel,
    rt: &RateTarget,
    rule: RuleKind,
) -> Result<Option<OptimizationOutcome>> {
    let mut search = Search::new();
    for &hbar in ch.alphabet() {
        match rule {
            RuleKind::Constant => {
                if let Some(p) = stability::min_power(ch, rt, 0, hbar)? {
                    let c = cost::cost_constant(ch, 0, hbar, p)?;
                    search.offer(0, hbar, p, PowerRule::Constant { power: p }, c);
                }
            }
            RuleKind::Inversion => {
                if let Some(k) = stability::min_gain(ch, rt, 0, hbar)? {
                    let c = cost::cost_inversion(ch, 0, hbar, k)?;
                    search.offer(0, hbar, k, PowerRule::Inversion { gain: k }, c);
                }
            }
        }
    }
    search.finish(ch, rt, SolveMode::PureChannel)
}

/// One row of the pure-time optimization table.
#[derive(Clone, Debug, Serialize)]
pub struct PureTimeRow {
    pub n: usize,
    pub p_lower: f64,
    pub p_star: f64,
    pub cost: f64,
}

/// Per-threshold optimal powers for pure time-triggered policies
/// (`h̄ = 0`, constant power, never senses).
pub fn pure_time_table(ch: &ChannelModel, rt: &RateTarget) -> Result<Vec<PureTimeRow>> {
    let horizon = stability::max_horizon(rt);
    let eta_pmax = ch.eta_constant(0.0, ch.max_power())?;
    let mut rows = Vec::new();
    for n in 0..=horizon {
        // Feasibility precondition at the power cap.
        if stability::beta(n, eta_pmax, rt) > rt.mu() {
            continue;
        }
        let Some(p_low) = stability::min_power(ch, rt, n, 0.0)? else {
            continue;
        };
        let mut cands = vec![p_low, ch.max_power()];
        if let Some(po) =
            rightmost_interior_min(|p| pure_time_cost_slope(ch, n, p), p_low, ch.max_power())
        {
            cands.push(po);
        }
        let mut best: Option<(f64, f64)> = None;
        for p in cands {
            let j = cost::cost_pure_time(ch, n, p)?;
            if best.is_none_or(|(bj, bp)| (j, p) < (bj, bp)) {
                best = Some((j, p));
            }
        }
        let (cost, p_star) = best.expect("candidate set is nonempty");
        rows.push(PureTimeRow { n, p_lower: p_low, p_star, cost });
    }
    Ok(rows)
}

/// Solve the pure time-threshold problem over all feasible `n`.
pub fn solve_pure_time(ch: &ChannelModel, rt: &RateTarget) -> Result<Option<OptimizationOutcome>> {
    let mut search = Search::new();
    for row in pure_time_table(ch, rt)? {
        // Count the full candidate set even though the table kept the best.
        let c = cost::cost_constant(ch, row.n, 0.0, row.p_star)?;
        search.offer(row.n, 0.0, row.p_star, PowerRule::Constant { power: row.p_star }, c);
    }
    search.finish(ch, rt, SolveMode::PureTime)
}

/// Smallest `γ` with `ψ(γ) ≥ 1 - ε`, or `None` when the success function
/// never gets that close to one.
fn near_sure_gamma(ch: &ChannelModel, eps: f64) -> Option<f64> {
    let target = 1.0 - eps;
    let mut hi = 1.0f64;
    while ch.psi.eval(hi) < target {
        hi *= 2.0;
        if hi > 1e12 {
            return None;
        }
    }
    let mut lo = 0.0f64;
    while hi - lo > 1e-12 * hi.max(1.0) {
        let m = 0.5 * (lo + hi);
        if ch.psi.eval(m) >= target {
            hi = m;
        } else {
            lo = m;
        }
    }
    Some(hi)
}

/// Near-sure-delivery constant-power policies for one wait threshold:
/// per threshold `h̄`, the power solving `ψ(h̄ p) = 1 - ε`, admissible while
/// `Pr(h ≥ h̄)(1 - ε)` still meets the required success probability.
pub fn eps_loss_sweep(
    ch: &ChannelModel,
    rt: &RateTarget,
    eps: f64,
    n: usize,
) -> Result<Vec<SweepPoint>> {
    check_eps(eps)?;
    let gamma = near_sure_gamma(ch, eps);
    let eta_star = stability::required_eta(n, rt);
    let mut out = Vec::with_capacity(ch.alphabet().len());
    for &hbar in ch.alphabet() {
        let mut point = None;
        if let (Some(gamma), Some(eta_star)) = (gamma, eta_star) {
            if hbar > 0.0 {
                let eta_approx = ch.tail_prob(hbar) * (1.0 - eps);
                let p = gamma / hbar;
                if eta_approx >= eta_star && p <= ch.max_power() {
                    point = Some((p, eps_loss_cost(ch, n, hbar, p, eps).total));
                }
            }
        }
        out.push(SweepPoint {
            hbar,
            level: point.map(|(p, _)| p),
            cost: point.map(|(_, c)| c),
        });
    }
    Ok(out)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0 < eps && eps < 0.5) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 0.5), got {eps}")));
    }
    Ok(())
}

/// Cost of an ε-loss policy under the substitution `η_C = Pr(h ≥ h̄)(1-ε)`.
fn eps_loss_cost(ch: &ChannelModel, n: usize, hbar: f64, p: f64, eps: f64) -> CostBreakdown {
    let tail = ch.tail_prob(hbar);
    let eta = tail * (1.0 - eps);
    let senses = hbar > ch.min_gain();
    let denom = 1.0 + n as f64 * eta;
    let transmit_part = p * tail / denom;
    let sensing_part = if senses { ch.sensing_power() } else { 0.0 } / denom;
    CostBreakdown {
        total: transmit_part + sensing_part,
        transmit_part,
        sensing_part,
        eta,
        pr_active: 1.0 / denom,
    }
}

/// Solve the ε-loss constant-power problem, optionally restricted to one
/// wait threshold.
pub fn solve_eps_loss(
    ch: &ChannelModel,
    rt: &RateTarget,
    eps: f64,
    fixed_n: Option<usize>,
) -> Result<Option<OptimizationOutcome>> {
    check_eps(eps)?;
    let horizon = stability::max_horizon(rt);
    let ns: Vec<usize> = match fixed_n {
        Some(n) => vec![n],
        None => (0..=horizon).collect(),
    };
    let mut search = Search::new();
    let mut best_breakdown: Option<(Key, CostBreakdown)> = None;
    for n in ns {
        for pt in eps_loss_sweep(ch, rt, eps, n)? {
            if let (Some(p), Some(_)) = (pt.level, pt.cost) {
                let c = eps_loss_cost(ch, n, pt.hbar, p, eps);
                let key = (c.total, n, pt.hbar, p);
                search.offer(n, pt.hbar, p, PowerRule::Constant { power: p }, c);
                if best_breakdown.as_ref().is_none_or(|(k, _)| better(&key, k)) {
                    best_breakdown = Some((key, c));
                }
            }
        }
    }
    search.finish(ch, rt, SolveMode::EpsLoss)
}

/// Sign-carrying derivative of the constant-power cost
/// `(P_S_eff + p t) / (1 + n η_C(h̄, p))` with `t = Pr(h ≥ h̄)`.
fn constant_cost_slope(ch: &ChannelModel, n: usize, hbar: f64, sensing: f64, p: f64) -> f64 {
    let (mut eta, mut deta) = (0.0, 0.0);
    for (h, r) in ch.alphabet().iter().zip(ch.pmf()) {
        if *h < hbar {
            continue;
        }
        eta += ch.psi.eval(p * h) * r;
        deta += h * ch.psi.derivative(p * h) * r;
    }
    let tail = ch.tail_prob(hbar);
    tail * (1.0 + n as f64 * eta) - (sensing + p * tail) * n as f64 * deta
}

/// Constant-power policies for one wait threshold: per channel threshold,
/// the best of `{p̲, interior local minimum, P_max}` under the exact cost.
pub fn constant_sweep(ch: &ChannelModel, rt: &RateTarget, n: usize) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(ch.alphabet().len());
    for &hbar in ch.alphabet() {
        let mut best = None;
        if let Some(p_low) = stability::min_power(ch, rt, n, hbar)? {
            let sensing = if hbar > ch.min_gain() { ch.sensing_power() } else { 0.0 };
            let mut cands = vec![p_low, ch.max_power()];
            if let Some(po) = rightmost_interior_min(
                |p| constant_cost_slope(ch, n, hbar, sensing, p),
                p_low,
                ch.max_power(),
            ) {
                cands.push(po);
            }
            for p in cands {
                let c = cost::cost_constant(ch, n, hbar, p)?;
                if best.is_none_or(|(bc, bp)| (c.total, p) < (bc, bp)) {
                    best = Some((c.total, p));
                }
            }
        }
        out.push(SweepPoint {
            hbar,
            level: best.map(|(_, p)| p),
            cost: best.map(|(c, _)| c),
        });
    }
    Ok(out)
}

/// Unsaturated channel-inversion policies for one wait threshold:
/// per threshold `h̄`, gains confined to `[κ̲, P_max h̄]` so the cap never
/// binds, candidate set `{κ̲, interior minimum, P_max h̄}`.
pub fn unsaturated_sweep(
    ch: &ChannelModel,
    rt: &RateTarget,
    n: usize,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(ch.alphabet().len());
    for &hbar in ch.alphabet() {
        let mut best = None;
        if hbar > 0.0 {
            if let Some(k_low) = stability::min_gain(ch, rt, n, hbar)? {
                let k_cap = ch.max_power() * hbar;
                if k_low <= k_cap {
                    let tail = ch.tail_prob(hbar);
                    let s: f64 = ch
                        .alphabet()
                        .iter()
                        .zip(ch.pmf())
                        .filter(|(h, _)| **h >= hbar && **h > 0.0)
                        .map(|(h, r)| r / h)
                        .sum();
                    let mut cands = vec![k_low, k_cap];
                    if let Some(ko) = rightmost_interior_min(
                        |k| unsaturated_cost_slope(ch, n, s, tail, k),
                        k_low,
                        k_cap,
                    ) {
                        cands.push(ko);
                    }
                    for k in cands {
                        let c = cost::cost_inversion(ch, n, hbar, k)?;
                        if best.is_none_or(|(bc, bk)| (c.total, k) < (bc, bk)) {
                            best = Some((c.total, k));
                        }
                    }
                }
            }
        }
        out.push(SweepPoint {
            hbar,
            level: best.map(|(_, k)| k),
            cost: best.map(|(c, _)| c),
        });
    }
    Ok(out)
}

/// Solve the unsaturated-inversion problem, optionally restricted to one
/// wait threshold.
pub fn solve_unsaturated_inversion(
    ch: &ChannelModel,
    rt: &RateTarget,
    fixed_n: Option<usize>,
) -> Result<Option<OptimizationOutcome>> {
    let horizon = stability::max_horizon(rt);
    let ns: Vec<usize> = match fixed_n {
        Some(n) => vec![n],
        None => (0..=horizon).collect(),
    };
    let mut search = Search::new();
    for n in ns {
        for pt in unsaturated_sweep(ch, rt, n)? {
            if let Some(k) = pt.level {
                let c = cost::cost_inversion(ch, n, pt.hbar, k)?;
                search.offer(n, pt.hbar, k, PowerRule::Inversion { gain: k }, c);
            }
        }
    }
    search.finish(ch, rt, SolveMode::UnsaturatedInversion)
}

/// Grid-based fallback: exhaustive over `(n, h̄)`, geometric power grid
/// from the feasibility boundary to the cap with golden-section
/// refinement around the best grid point. Each candidate is checked
/// against the rate target before it may win.
pub fn solve_general(
    ch: &ChannelModel,
    rt: &RateTarget,
    rule: RuleKind,
    resolution: usize,
) -> Result<Option<OptimizationOutcome>> {
    if resolution < 16 {
        return Err(Error::invalid("power grid resolution must be at least 16"));
    }
    let horizon = stability::max_horizon(rt);
    let pairs: Vec<(usize, f64)> = (0..=horizon)
        .flat_map(|n| ch.alphabet().iter().map(move |&h| (n, h)))
        .collect();

    let searches: Result<Vec<Search>> = pairs
        .par_iter()
        .map(|&(n, hbar)| {
            let mut search = Search::new();
            let bounds = match rule {
                RuleKind::Constant => stability::min_power(ch, rt, n, hbar)?
                    .map(|lo| (lo, ch.max_power())),
                RuleKind::Inversion => {
                    if hbar <= 0.0 {
                        None
                    } else {
                        stability::min_gain(ch, rt, n, hbar)?
                            .map(|lo| (lo, ch.max_power() * hbar))
                            .filter(|(lo, hi)| lo <= hi)
                    }
                }
            };
            let Some((lo, hi)) = bounds else {
                return Ok(search);
            };
            let eval = |level: f64| -> Result<CostBreakdown> {
                match rule {
                    RuleKind::Constant => cost::cost_constant(ch, n, hbar, level),
                    RuleKind::Inversion => cost::cost_inversion(ch, n, hbar, level),
                }
            };
            let offer = |search: &mut Search, level: f64, c: CostBreakdown| {
                // Feasibility re-check from the cost's own success probability.
                if stability::beta(n, c.eta, rt) <= rt.mu() + 1e-9 {
                    let rule = match rule {
                        RuleKind::Constant => PowerRule::Constant { power: level },
                        RuleKind::Inversion => PowerRule::Inversion { gain: level },
                    };
                    search.offer(n, hbar, level, rule, c);
                }
            };

            // Geometric grid; the boundary point is always included.
            let grid_lo = if lo > 0.0 { lo } else { (hi * 1e-9).min(hi) };
            let mut grid = Vec::with_capacity(resolution + 1);
            if lo <= 0.0 {
                grid.push(lo.max(0.0));
            }
            if hi > grid_lo {
                let ratio = (hi / grid_lo).powf(1.0 / (resolution as f64 - 1.0));
                let mut x = grid_lo;
                for _ in 0..resolution {
                    grid.push(x.min(hi));
                    x *= ratio;
                }
            } else {
                grid.push(hi);
            }
            let mut best_idx = 0usize;
            let mut best_cost = f64::INFINITY;
            for (i, &g) in grid.iter().enumerate() {
                let c = eval(g)?;
                if c.total < best_cost {
                    best_cost = c.total;
                    best_idx = i;
                }
                offer(&mut search, g, c);
            }
            // Golden-section refinement in the bracket around the best point.
            let a = if best_idx == 0 { grid[0] } else { grid[best_idx - 1] };
            let b = if best_idx + 1 < grid.len() { grid[best_idx + 1] } else { grid[best_idx] };
            if b > a {
                let refined = golden_section_min(
                    |x| eval(x).map(|c| c.total).unwrap_or(f64::INFINITY),
                    a,
                    b,
                    120,
                );
                let c = eval(refined)?;
                offer(&mut search, refined, c);
            }
            Ok(search)
        })
        .collect();

    let search = searches?
        .into_iter()
        .fold(Search::new(), Search::merge);
    search.finish(ch, rt, SolveMode::GeneralGrid)
}

/// Golden-section search for the minimum of `f` on `[a, b]`.
fn golden_section_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, max_evals: usize) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_895;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut evals = 2;
    while evals < max_evals && (b - a) > 1e-12 * b.abs().max(1.0) {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
        evals += 1;
    }
    if f1 < f2 {
        x1
    } else {
        x2
    }
}
