//! Stationary clock law and average-power cost formulas.
//!
//! The clock `τ` counts steps since the last delivery. With success
//! probability `η` per active step its stationary law is
//! `Pr(τ = j) = η/(nη + 1)` for `j ≤ n` and `Pr(τ ≥ n+1) = 1/(nη + 1)`,
//! which prices the infinite-horizon average power of a threshold policy.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelModel;
use crate::error::{Error, Result};

/// Transmit-power rule applied when the thresholds allow a transmission.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerRule {
    /// Fixed power regardless of the measured gain.
    Constant { power: f64 },
    /// `min(P_max, gain/h)`: holds the received quality constant.
    Inversion { gain: f64 },
}

/// Transmit when the clock exceeds `wait_threshold` and the measured gain
/// is at least `channel_threshold`, with power from `rule`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub wait_threshold: usize,
    pub channel_threshold: f64,
    pub rule: PowerRule,
    /// Whether running the policy needs the measured gain at all: false
    /// only for constant power with a threshold at or below the smallest
    /// alphabet point. Sensing power is charged exactly when true.
    pub requires_csi: bool,
}

impl ThresholdPolicy {
    pub fn new(
        wait_threshold: usize,
        channel_threshold: f64,
        rule: PowerRule,
        ch: &ChannelModel,
    ) -> Result<Self> {
        match rule {
            PowerRule::Constant { power } => {
                if !(0.0..=ch.max_power()).contains(&power) {
                    return Err(Error::invalid(format!(
                        "constant power {power} outside [0, {}]",
                        ch.max_power()
                    )));
                }
            }
            PowerRule::Inversion { gain } => {
                if gain < 0.0 {
                    return Err(Error::invalid("inversion gain must be nonnegative"));
                }
            }
        }
        let requires_csi = match rule {
            PowerRule::Constant { .. } => channel_threshold > ch.min_gain(),
            PowerRule::Inversion { .. } => true,
        };
        Ok(ThresholdPolicy { wait_threshold, channel_threshold, rule, requires_csi })
    }
}

/// Stationary clock distribution.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TauStationary {
    /// `Pr(τ = j)` for each `j ∈ {1..n}`.
    pub pr_each_low: f64,
    /// `Pr(τ ≥ n + 1)`.
    pub pr_active: f64,
}

/// Stationary law of the clock for wait threshold `n` and success
/// probability `η ∈ (0, 1)`.
pub fn tau_stationary(n: usize, eta: f64) -> Result<TauStationary> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid(format!("eta must lie in (0,1), got {eta}")));
    }
    let denom = n as f64 * eta + 1.0;
    Ok(TauStationary { pr_each_low: eta / denom, pr_active: 1.0 / denom })
}

/// Average-power decomposition of a policy.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CostBreakdown {
    /// Average communication power per step; always the exact sum of the
    /// two parts below.
    pub total: f64,
    pub transmit_part: f64,
    pub sensing_part: f64,
    /// Success probability per active step used in the denominator.
    pub eta: f64,
    /// `Pr(τ ≥ n + 1)` in stationarity.
    pub pr_active: f64,
}

fn breakdown(
    expected_transmit_power: f64,
    sensing_power: f64,
    n: usize,
    eta: f64,
) -> CostBreakdown {
    let denom = 1.0 + n as f64 * eta;
    let transmit_part = expected_transmit_power / denom;
    let sensing_part = sensing_power / denom;
    CostBreakdown {
        total: transmit_part + sensing_part,
        transmit_part,
        sensing_part,
        eta,
        pr_active: 1.0 / denom,
    }
}

/// Average power of the constant-power threshold policy:
/// `(P_S + p Pr(h ≥ h̄)) / (1 + n η_C(h̄, p))`, with the sensing charge
/// dropped when the policy never needs the measurement.
pub fn cost_constant(ch: &ChannelModel, n: usize, hbar: f64, p: f64) -> Result<CostBreakdown> {
    let eta = ch.eta_constant(hbar, p)?;
    let senses = hbar > ch.min_gain();
    let sensing = if senses { ch.sensing_power() } else { 0.0 };
    Ok(breakdown(p * ch.tail_prob(hbar), sensing, n, eta))
}

/// Average power of the channel-inversion threshold policy:
/// `(P_S + Σ_{h ≥ h̄} min(P_max, κ/h) ρ(h)) / (1 + n η_I(h̄, κ))`.
/// Inversion always senses when active.
pub fn cost_inversion(ch: &ChannelModel, n: usize, hbar: f64, kappa: f64) -> Result<CostBreakdown> {
    if kappa < 0.0 {
        return Err(Error::invalid("inversion gain must be nonnegative"));
    }
    let eta = ch.eta_inversion(hbar, kappa);
    Ok(breakdown(ch.expected_inversion_power(hbar, kappa), ch.sensing_power(), n, eta))
}

/// Average power of the pure-time policy (no channel threshold, no
/// sensing): `p / ((1 - e(p)) n + 1)` with `e(p) = 1 - η_C(0, p)`.
pub fn cost_pure_time(ch: &ChannelModel, n: usize, p: f64) -> Result<f64> {
    let eta = ch.eta_constant(0.0, p)?;
    Ok(p / (n as f64 * eta + 1.0))
}

/// Cost of an arbitrary threshold policy through the matching formula.
pub fn policy_cost(ch: &ChannelModel, policy: &ThresholdPolicy) -> Result<CostBreakdown> {
    match policy.rule {
        PowerRule::Constant { power } => {
            cost_constant(ch, policy.wait_threshold, policy.channel_threshold, power)
        }
        PowerRule::Inversion { gain } => {
            cost_inversion(ch, policy.wait_threshold, policy.channel_threshold, gain)
        }
    }
}
