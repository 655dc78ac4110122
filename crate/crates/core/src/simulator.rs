//! Deterministic Monte-Carlo simulation of the networked loop under a
//! threshold policy.
//!
//! Each step: the clock `τ` counts steps since the last delivery; once
//! `τ ≥ n + 1` the policy becomes active, senses the channel when it needs
//! the measurement, transmits when the gain clears the threshold, and the
//! packet goes through with probability `ψ(gain × power)`. Delivery applies
//! `f_S` and resets the clock, anything else applies `f_U`.
//!
//! Time 0 is a delivery by convention: the first step applies `f_S`
//! unconditionally and free of charge, and the clock starts at 1.
//!
//! Reproducibility: trial `i` draws from the substream `stream(seed, i)`,
//! trials are aggregated in fixed blocks merged in index order, so equal
//! seeds give bit-identical results at any thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::ChannelModel;
use crate::cost::{PowerRule, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::lyapunov::LyapunovCertificate;
use crate::rng;
use crate::stability::{self, RateTarget};

/// Initial loop state for each trial.
#[derive(Clone, Debug)]
pub enum InitialState {
    /// Every trial starts from this exact state.
    Vector(Vec<f64>),
    /// Plant state uniform on the sphere of this radius, controller state
    /// zero, held measurement synchronized to `g_p(x_p)`.
    PlantSphere { radius: f64 },
}

/// Simulation run parameters.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub initial: InitialState,
    /// Record the certificate value every this many steps (time 0 is
    /// always recorded).
    pub record_v_every: usize,
    /// Trials with index below this keep a full per-step certificate
    /// trajectory and a delivery log.
    pub log_trials: usize,
    /// Stop trials once the squared plant-state norm reaches this level.
    pub hitting_radius: Option<f64>,
    /// Upper bound on `horizon × trials`.
    pub step_budget: u64,
    /// Run even when the policy fails the stability check.
    pub allow_unstable: bool,
}

impl SimConfig {
    pub fn new(horizon: usize, trials: usize, seed: u64, initial: InitialState) -> Self {
        SimConfig {
            horizon,
            trials,
            seed,
            initial,
            record_v_every: 1,
            log_trials: 0,
            hitting_radius: None,
            step_budget: 2_000_000_000,
            allow_unstable: false,
        }
    }
}

/// One policy decision that reached the channel, for audit-style checks.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DeliveryEvent {
    pub trial: usize,
    pub t: usize,
    pub tau: usize,
    pub sensed: bool,
    pub gain: f64,
    pub power: f64,
    pub attempted: bool,
    pub success: bool,
}

/// Aggregated simulation output.
#[derive(Clone, Debug, Serialize)]
pub struct SimResult {
    /// Times at which the certificate value was recorded.
    pub record_times: Vec<usize>,
    /// Mean certificate value over completed trials at each recorded time.
    pub v_mean: Vec<f64>,
    /// Standard error of that mean.
    pub v_sem: Vec<f64>,
    /// Reference envelope `μ^t × v_mean[0]`.
    pub v_bound: Vec<f64>,
    /// Clock occupancy: index `j < n` counts `τ = j + 1`, the last index
    /// counts the active bucket `τ ≥ n + 1`. Sums to
    /// `horizon × completed_trials`.
    pub tau_histogram: Vec<u64>,
    /// Average of transmit power plus sensing charges per step.
    pub empirical_cost: f64,
    /// Steps with the policy active (`τ ≥ n + 1`).
    pub attempt_count: u64,
    /// Transmissions (active steps whose gain cleared the threshold).
    pub transmit_count: u64,
    /// Delivered packets.
    pub success_count: u64,
    pub completed_trials: usize,
    /// Trials dropped from the aggregates after a non-finite state.
    pub diverged_trials: usize,
    /// Per trial: first step with squared plant norm at or below the
    /// hitting radius (only when a radius was configured).
    pub hitting_steps: Vec<Option<usize>>,
    /// Events from logged trials.
    pub delivery_log: Vec<DeliveryEvent>,
    /// Per-step certificate values of logged trials.
    pub v_trajectories: Vec<Vec<f64>>,
}

struct TrialOutput {
    v_at_records: Vec<f64>,
    hist: Vec<u64>,
    cost_sum: f64,
    attempts: u64,
    transmits: u64,
    successes: u64,
    diverged: bool,
    hit: Option<usize>,
    log: Vec<DeliveryEvent>,
    v_traj: Vec<f64>,
}

/// Run the closed loop under the policy.
///
/// The policy must pass the stability check for the given target unless
/// `allow_unstable` is set.
pub fn simulate(
    sys: &crate::dynamics::ClosedLoopSystem,
    cert: &LyapunovCertificate,
    ch: &ChannelModel,
    policy: &ThresholdPolicy,
    rt: &RateTarget,
    cfg: &SimConfig,
) -> Result<SimResult> {
    let dim = sys.chi_dim();
    if cfg.horizon == 0 || cfg.trials == 0 {
        return Err(Error::invalid("horizon and trials must be positive"));
    }
    if cfg.record_v_every == 0 {
        return Err(Error::invalid("record stride must be positive"));
    }
    if (cfg.horizon as u64).saturating_mul(cfg.trials as u64) > cfg.step_budget {
        return Err(Error::Budget(format!(
            "horizon x trials = {} exceeds the configured budget {}",
            cfg.horizon as u64 * cfg.trials as u64,
            cfg.step_budget
        )));
    }
    if let InitialState::Vector(v) = &cfg.initial {
        if v.len() != dim {
            return Err(Error::Dimension {
                context: "initial state",
                expected: dim,
                actual: v.len(),
            });
        }
    }
    if !cfg.allow_unstable {
        let check = stability::verify_policy(ch, rt, policy)?;
        if !check.pass {
            return Err(Error::infeasible(format!(
                "policy fails the stability check (beta {:.6} > mu {:.6}); \
                 set allow_unstable to run anyway",
                check.achieved_beta,
                rt.mu()
            )));
        }
    }

    let n = policy.wait_threshold;
    let record_times: Vec<usize> =
        (0..=cfg.horizon).filter(|t| t % cfg.record_v_every == 0).collect();

    // Cumulative pmf for inverse-transform gain draws.
    let cum: Vec<f64> = ch
        .pmf()
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();

    let run_trial = |trial: usize| -> TrialOutput {
        let mut r = rng::stream(cfg.seed, trial as u64);
        let logging = trial < cfg.log_trials;
        let mut chi = match &cfg.initial {
            InitialState::Vector(v) => v.clone(),
            InitialState::PlantSphere { radius } => {
                let sp = sys.plant().state_dim();
                let sc = sys.controller().state_dim();
                let sy = sys.plant().output_dim();
                let mut xp: Vec<f64> = (0..sp).map(|_| r.next_normal()).collect();
                let norm = xp.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                xp.iter_mut().for_each(|v| *v *= radius / norm);
                let mut chi = vec![0.0; sp + sc + sy];
                chi[..sp].copy_from_slice(&xp);
                let (head, tail) = chi.split_at_mut(sp + sc);
                sys.plant().output_into(&head[..sp], tail);
                chi
            }
        };

        let mut out = TrialOutput {
            v_at_records: Vec::with_capacity(record_times.len()),
            hist: vec![0u64; n + 1],
            cost_sum: 0.0,
            attempts: 0,
            transmits: 0,
            successes: 0,
            diverged: false,
            hit: None,
            log: Vec::new(),
            v_traj: Vec::new(),
        };

        let sp = sys.plant().state_dim();
        let mut ws = sys.scratch();
        let mut next = vec![0.0; chi.len()];
        let mut tau = 1usize;

        let record = |t: usize, chi: &[f64], out: &mut TrialOutput| -> bool {
            if let Some(r2) = cfg.hitting_radius {
                if out.hit.is_none() {
                    let n2: f64 = chi[..sp].iter().map(|v| v * v).sum();
                    if n2 <= r2 {
                        out.hit = Some(t);
                    }
                }
            }
            let v = cert.v(chi);
            if logging {
                out.v_traj.push(v);
            }
            if t % cfg.record_v_every == 0 {
                out.v_at_records.push(v);
                if !v.is_finite() {
                    out.diverged = true;
                    return false;
                }
            }
            true
        };

        if !record(0, &chi, &mut out) {
            return out;
        }
        // Delivery at time 0 by convention: free, unconditional.
        sys.step_success_into(&chi, &mut next, &mut ws);
        std::mem::swap(&mut chi, &mut next);
        if !record(1, &chi, &mut out) {
            return out;
        }

        for t in 1..=cfg.horizon {
            out.hist[tau.min(n + 1) - 1] += 1;
            let mut delivered = false;
            if tau >= n + 1 {
                out.attempts += 1;
                let sensed = policy.requires_csi;
                if sensed {
                    out.cost_sum += ch.sensing_power();
                }
                // The gain governs the outcome whether or not it was measured.
                let u = r.next_f64();
                let idx = cum.partition_point(|&c| c < u).min(ch.alphabet().len() - 1);
                let gain = ch.alphabet()[idx];
                let transmit = !sensed || gain >= policy.channel_threshold - 1e-12;
                let mut power = 0.0;
                let mut success = false;
                if transmit {
                    out.transmits += 1;
                    power = match policy.rule {
                        PowerRule::Constant { power } => power,
                        PowerRule::Inversion { gain: kappa } => ch.inversion_power(kappa, gain),
                    };
                    out.cost_sum += power;
                    success = r.next_f64() < ch.psi.eval(gain * power);
                }
                if logging {
                    out.log.push(DeliveryEvent {
                        trial,
                        t,
                        tau,
                        sensed,
                        gain,
                        power,
                        attempted: transmit,
                        success,
                    });
                }
                delivered = success;
            }
            if delivered {
                out.successes += 1;
                sys.step_success_into(&chi, &mut next, &mut ws);
                tau = 1;
            } else {
                sys.step_failure_into(&chi, &mut next, &mut ws);
                tau += 1;
            }
            std::mem::swap(&mut chi, &mut next);
            // The state one past the horizon is never examined.
            if t < cfg.horizon && !record(t + 1, &chi, &mut out) {
                return out;
            }
        }
        out
    };

    // Fixed-size blocks keep float accumulation order independent of the
    // worker count.
    const BLOCK: usize = 64;
    let blocks: Vec<usize> = (0..cfg.trials.div_ceil(BLOCK)).collect();
    let partials: Vec<BlockAccum> = blocks
        .par_iter()
        .map(|&b| {
            let lo = b * BLOCK;
            let hi = ((b + 1) * BLOCK).min(cfg.trials);
            let mut acc = BlockAccum::new(record_times.len(), n + 1, cfg.hitting_radius.is_some());
            for trial in lo..hi {
                acc.add(run_trial(trial));
            }
            acc
        })
        .collect();

    let mut total = BlockAccum::new(record_times.len(), n + 1, cfg.hitting_radius.is_some());
    for p in partials {
        total.merge(p);
    }

    let completed = total.completed;
    if completed == 0 {
        return Err(Error::Degenerate("every trial diverged".into()));
    }
    let inv = 1.0 / completed as f64;
    let v_mean: Vec<f64> = total.v_sum.iter().map(|s| s * inv).collect();
    let v_sem: Vec<f64> = total
        .v_sum
        .iter()
        .zip(&total.v_sumsq)
        .map(|(s, s2)| {
            let mean = s * inv;
            let var = (s2 * inv - mean * mean).max(0.0);
            (var / completed as f64).sqrt()
        })
        .collect();
    let v0 = v_mean.first().copied().unwrap_or(0.0);
    let v_bound: Vec<f64> =
        record_times.iter().map(|&t| rt.mu().powi(t as i32) * v0).collect();
    let steps_counted = (cfg.horizon as u64) * (completed as u64);

    Ok(SimResult {
        record_times,
        v_mean,
        v_sem,
        v_bound,
        tau_histogram: total.hist,
        empirical_cost: total.cost_sum / steps_counted as f64,
        attempt_count: total.attempts,
        transmit_count: total.transmits,
        success_count: total.successes,
        completed_trials: completed,
        diverged_trials: total.diverged,
        hitting_steps: total.hitting,
        delivery_log: total.log,
        v_trajectories: total.v_trajs,
    })
}

struct BlockAccum {
    v_sum: Vec<f64>,
    v_sumsq: Vec<f64>,
    hist: Vec<u64>,
    cost_sum: f64,
    attempts: u64,
    transmits: u64,
    successes: u64,
    completed: usize,
    diverged: usize,
    track_hits: bool,
    hitting: Vec<Option<usize>>,
    log: Vec<DeliveryEvent>,
    v_trajs: Vec<Vec<f64>>,
}

impl BlockAccum {
    fn new(records: usize, buckets: usize, track_hits: bool) -> Self {
        BlockAccum {
            v_sum: vec![0.0; records],
            v_sumsq: vec![0.0; records],
            hist: vec![0; buckets],
            cost_sum: 0.0,
            attempts: 0,
            transmits: 0,
            successes: 0,
            completed: 0,
            diverged: 0,
            track_hits,
            hitting: Vec::new(),
            log: Vec::new(),
            v_trajs: Vec::new(),
        }
    }

    fn add(&mut self, t: TrialOutput) {
        if t.diverged {
            self.diverged += 1;
        } else {
            for (i, v) in t.v_at_records.iter().enumerate() {
                self.v_sum[i] += v;
                self.v_sumsq[i] += v * v;
            }
            for (h, c) in self.hist.iter_mut().zip(&t.hist) {
                *h += c;
            }
            self.cost_sum += t.cost_sum;
            self.attempts += t.attempts;
            self.transmits += t.transmits;
            self.successes += t.successes;
            self.completed += 1;
            if self.track_hits {
                self.hitting.push(t.hit);
            }
        }
        self.log.extend(t.log);
        if !t.v_traj.is_empty() {
            self.v_trajs.push(t.v_traj);
        }
    }

    fn merge(&mut self, o: BlockAccum) {
        for (a, b) in self.v_sum.iter_mut().zip(&o.v_sum) {
            *a += b;
        }
        for (a, b) in self.v_sumsq.iter_mut().zip(&o.v_sumsq) {
            *a += b;
        }
        for (a, b) in self.hist.iter_mut().zip(&o.hist) {
            *a += b;
        }
        self.cost_sum += o.cost_sum;
        self.attempts += o.attempts;
        self.transmits += o.transmits;
        self.successes += o.successes;
        self.completed += o.completed;
        self.diverged += o.diverged;
        self.hitting.extend(o.hitting);
        self.log.extend(o.log);
        self.v_trajs.extend(o.v_trajs);
    }
}

/// Comparison of the simulated clock histogram against the stationary law.
#[derive(Clone, Debug, Serialize)]
pub struct HistogramReport {
    pub expected: Vec<f64>,
    pub observed: Vec<f64>,
    pub max_abs_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Check the clock histogram against `η/(nη+1)` per low state and
/// `1/(nη+1)` for the active bucket, at tolerance `4/√(total samples)`.
pub fn tau_histogram_check(result: &SimResult, n: usize, eta: f64) -> Result<HistogramReport> {
    if result.tau_histogram.len() != n + 1 {
        return Err(Error::Dimension {
            context: "tau histogram buckets",
            expected: n + 1,
            actual: result.tau_histogram.len(),
        });
    }
    let total: u64 = result.tau_histogram.iter().sum();
    if total == 0 {
        return Err(Error::Degenerate("empty histogram".into()));
    }
    let st = crate::cost::tau_stationary(n, eta.clamp(1e-12, 1.0 - 1e-12))?;
    let mut expected = vec![st.pr_each_low; n];
    expected.push(st.pr_active);
    let observed: Vec<f64> =
        result.tau_histogram.iter().map(|&c| c as f64 / total as f64).collect();
    let max_abs_deviation = expected
        .iter()
        .zip(&observed)
        .map(|(e, o)| (e - o).abs())
        .fold(0.0f64, f64::max);
    let tolerance = 4.0 / (total as f64).sqrt();
    Ok(HistogramReport {
        expected,
        observed,
        max_abs_deviation,
        tolerance,
        pass: max_abs_deviation <= tolerance,
    })
}

/// Comparison of the empirical average power against a cost formula.
#[derive(Clone, Debug, Serialize)]
pub struct CostReport {
    pub empirical: f64,
    pub predicted: f64,
    pub relative_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Check the empirical average power against a prediction at relative
/// tolerance `3/√trials + 1%`.
pub fn empirical_cost_check(result: &SimResult, predicted_total: f64) -> CostReport {
    let relative_deviation = if predicted_total == 0.0 {
        result.empirical_cost.abs()
    } else {
        (result.empirical_cost - predicted_total).abs() / predicted_total
    };
    let tolerance = 3.0 / (result.completed_trials as f64).sqrt() + 0.01;
    CostReport {
        empirical: result.empirical_cost,
        predicted: predicted_total,
        relative_deviation,
        tolerance,
        pass: relative_deviation <= tolerance,
    }
}

/// One-sided check of the decay guarantee: the mean certificate value must
/// stay below `μ^t v_mean[0]` plus three standard errors at every recorded
/// time.
#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    /// Worst ratio of `v_mean` to the inflated envelope.
    pub max_ratio: f64,
    pub worst_time: usize,
    pub pass: bool,
}

pub fn decay_check(result: &SimResult) -> DecayReport {
    let mut max_ratio = 0.0f64;
    let mut worst_time = 0usize;
    for i in 0..result.record_times.len() {
        let allowance = result.v_bound[i] + 3.0 * result.v_sem[i];
        let ratio = if allowance > 0.0 {
            result.v_mean[i] / allowance
        } else if result.v_mean[i] > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > max_ratio {
            max_ratio = ratio;
            worst_time = result.record_times[i];
        }
    }
    DecayReport { max_ratio, worst_time, pass: max_ratio <= 1.0 }
}

/// Labelled policy for the hitting-time experiment.
#[derive(Clone, Debug)]
pub struct HittingPolicy {
    pub label: String,
    pub policy: ThresholdPolicy,
}

/// Hitting-time summary for one policy.
#[derive(Clone, Debug, Serialize)]
pub struct HittingRow {
    pub label: String,
    /// Mean steps until the squared plant norm first reached the radius,
    /// over trials that hit within the horizon.
    pub mean_steps: Option<f64>,
    pub hit_trials: usize,
    pub censored_trials: usize,
    pub mean_cost: f64,
}

/// For each policy: mean time for the squared plant-state norm to reach
/// `radius`, plus the empirical average power, from a fresh simulation
/// with the shared config. Policies are taken as given (no stability
/// gate), so baselines such as always-transmit-at-full-power fit in.
pub fn hitting_time_experiment(
    sys: &crate::dynamics::ClosedLoopSystem,
    cert: &LyapunovCertificate,
    ch: &ChannelModel,
    rt: &RateTarget,
    policies: &[HittingPolicy],
    radius: f64,
    cfg: &SimConfig,
) -> Result<Vec<HittingRow>> {
    if !(radius > 0.0) {
        return Err(Error::invalid("hitting radius must be positive"));
    }
    let mut rows = Vec::with_capacity(policies.len());
    for item in policies {
        let mut cfg = cfg.clone();
        cfg.hitting_radius = Some(radius);
        cfg.allow_unstable = true;
        let result = simulate(sys, cert, ch, &item.policy, rt, &cfg)?;
        let hits: Vec<usize> = result.hitting_steps.iter().flatten().copied().collect();
        let hit_trials = hits.len();
        let censored_trials = result.hitting_steps.len() - hit_trials;
        let mean_steps = (!hits.is_empty())
            .then(|| hits.iter().sum::<usize>() as f64 / hit_trials as f64);
        rows.push(HittingRow {
            label: item.label.clone(),
            mean_steps,
            hit_trials,
            censored_trials,
            mean_cost: result.empirical_cost,
        });
    }
    Ok(rows)
}
