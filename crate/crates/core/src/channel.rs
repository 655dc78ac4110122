//! Finite channel-measurement models and packet-success functions.
//!
//! The transmitter sees a quantized channel gain `h` drawn i.i.d. from a
//! finite alphabet with pmf `ρ`. A transmission at power `P` under gain `h`
//! is decoded with probability `ψ(P·h)`. The two threshold policies induce
//! the per-active-step success probabilities
//!
//! ```text
//! η_C(h̄, p) = Σ_{h ≥ h̄} ψ(p h) ρ(h)                        (constant power)
//! η_I(h̄, κ) = Σ_{h ≥ h̄} ψ(min(P_max, κ/h) · h) ρ(h)        (channel inversion)
//! ```

use std::sync::Arc;

use crate::error::{Error, Result};

type GammaFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Relative slack for alphabet threshold comparisons: grid arithmetic can
/// put a nominal point a few ulps on either side of the requested value.
const ALPHABET_EPS: f64 = 1e-9;

/// Rational approximation of the error function (Abramowitz-Stegun
/// 7.1.26 form), absolute error below 1.5e-7.
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * x);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Packet-success probability as a function of `γ = power × gain`.
/// Nondecreasing with values in `[0, 1]`.
#[derive(Clone)]
pub struct SuccessFunction {
    kind: SuccessKind,
}

#[derive(Clone)]
enum SuccessKind {
    /// `ψ(γ) = (1/2 + erf(√γ)/2)^M`: every bit of an M-bit packet decoded
    /// under Gaussian noise.
    QpskAwgn { bits: u32 },
    /// `ψ(γ) = exp(-1/γ)` for `γ > 0`, continuously extended by 0.
    ExpError,
    Custom { f: Arc<GammaFn>, derivative: Option<Arc<GammaFn>> },
}

impl SuccessFunction {
    pub fn qpsk_awgn(bits: u32) -> Result<Self> {
        if bits == 0 {
            return Err(Error::invalid("packet size must be at least 1 bit"));
        }
        Ok(SuccessFunction { kind: SuccessKind::QpskAwgn { bits } })
    }

    pub fn exp_error() -> Self {
        SuccessFunction { kind: SuccessKind::ExpError }
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        SuccessFunction { kind: SuccessKind::Custom { f: Arc::new(f), derivative: None } }
    }

    pub fn custom_with_derivative(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SuccessFunction {
            kind: SuccessKind::Custom { f: Arc::new(f), derivative: Some(Arc::new(df)) },
        }
    }

    /// `ψ(γ)`.
    pub fn eval(&self, gamma: f64) -> f64 {
        let g = gamma.max(0.0);
        match &self.kind {
            SuccessKind::QpskAwgn { bits } => {
                (0.5 + 0.5 * erf(g.sqrt())).powi(*bits as i32)
            }
            SuccessKind::ExpError => {
                if g <= 0.0 {
                    0.0
                } else {
                    (-1.0 / g).exp()
                }
            }
            SuccessKind::Custom { f, .. } => f(g).clamp(0.0, 1.0),
        }
    }

    /// `dψ/dγ`, analytic where the form allows, central differences otherwise.
    pub fn derivative(&self, gamma: f64) -> f64 {
        let g = gamma.max(0.0);
        match &self.kind {
            SuccessKind::QpskAwgn { bits } => {
                if g <= 0.0 {
                    return 0.0;
                }
                let m = *bits as f64;
                let base = 0.5 + 0.5 * erf(g.sqrt());
                // d/dγ [erf(√γ)/2] = e^(-γ) / (2 √(π γ))
                let dbase = (-g).exp() / (2.0 * (std::f64::consts::PI * g).sqrt());
                m * base.powi(*bits as i32 - 1) * dbase
            }
            SuccessKind::ExpError => {
                if g <= 0.0 {
                    0.0
                } else {
                    (-1.0 / g).exp() / (g * g)
                }
            }
            SuccessKind::Custom { derivative: Some(df), .. } => df(g),
            SuccessKind::Custom { f, .. } => {
                let h = 1e-6 * g.max(1.0);
                let lo = (g - h).max(0.0);
                (f(g + h) - f(lo)) / (g + h - lo)
            }
        }
    }
}

/// Uniform quantization grid `{min, min+step, ..., max}`.
#[derive(Clone, Copy, Debug)]
pub struct Grid {
    pub min: f64,
    pub step: f64,
    pub max: f64,
}

/// Finite channel-measurement model with its success function, sensing
/// power and transmit power cap. Immutable; all evaluations are pure.
#[derive(Clone)]
pub struct ChannelModel {
    alphabet: Vec<f64>,
    pmf: Vec<f64>,
    pub psi: SuccessFunction,
    sensing_power: f64,
    max_power: f64,
}

impl ChannelModel {
    pub fn new(
        alphabet: Vec<f64>,
        pmf: Vec<f64>,
        psi: SuccessFunction,
        sensing_power: f64,
        max_power: f64,
    ) -> Result<Self> {
        if alphabet.is_empty() || alphabet.len() != pmf.len() {
            return Err(Error::invalid("alphabet and pmf must be nonempty and equal length"));
        }
        if alphabet[0] < 0.0 {
            return Err(Error::invalid("alphabet must be nonnegative"));
        }
        if alphabet.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("alphabet must be strictly ascending"));
        }
        if pmf.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid("pmf must be nonnegative"));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("pmf must sum to 1, got {total:.15}")));
        }
        if sensing_power < 0.0 {
            return Err(Error::invalid("sensing power must be nonnegative"));
        }
        if !(max_power > 0.0) {
            return Err(Error::invalid("power cap must be positive"));
        }
        Ok(ChannelModel { alphabet, pmf, psi, sensing_power, max_power })
    }

    /// Quantization of a Rayleigh-fading gain with tail `Pr(h ≥ x) =
    /// exp(-x/(2σ²))`. Interior points carry the cell mass, the top point
    /// absorbs the upper tail and the bottom point any mass below the grid.
    pub fn quantized_rayleigh(
        sigma2: f64,
        grid: Grid,
        psi: SuccessFunction,
        sensing_power: f64,
        max_power: f64,
    ) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::invalid("sigma2 must be positive"));
        }
        if !(grid.step > 0.0) || grid.min < 0.0 || grid.max <= grid.min {
            return Err(Error::invalid("grid must satisfy step > 0 and max > min >= 0"));
        }
        let count = ((grid.max - grid.min) / grid.step).round() as usize + 1;
        if count < 2 {
            return Err(Error::invalid("grid needs at least two points"));
        }
        let span_err = (grid.min + (count - 1) as f64 * grid.step - grid.max).abs();
        if span_err > 1e-9 * grid.step {
            return Err(Error::invalid("grid span is not a whole number of steps"));
        }
        let survivor = |x: f64| (-x / (2.0 * sigma2)).exp();
        let mut alphabet = Vec::with_capacity(count);
        let mut pmf = Vec::with_capacity(count);
        for k in 0..count {
            let h = grid.min + k as f64 * grid.step;
            alphabet.push(h);
            let mass = if k + 1 == count {
                survivor(h)
            } else if k == 0 {
                1.0 - survivor(h + grid.step)
            } else {
                survivor(h) - survivor(h + grid.step)
            };
            pmf.push(mass);
        }
        // Exact unit mass despite rounding in the exponentials.
        let total: f64 = pmf.iter().sum();
        let top = pmf.len() - 1;
        pmf[top] += 1.0 - total;
        ChannelModel::new(alphabet, pmf, psi, sensing_power, max_power)
    }

    /// Degenerate single-point channel with unit gain: the success
    /// probability at power `p` is just `ψ(p)`.
    pub fn unit_gain(psi: SuccessFunction, max_power: f64) -> Result<Self> {
        ChannelModel::new(vec![1.0], vec![1.0], psi, 0.0, max_power)
    }

    pub fn alphabet(&self) -> &[f64] {
        &self.alphabet
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn min_gain(&self) -> f64 {
        self.alphabet[0]
    }

    pub fn max_gain(&self) -> f64 {
        *self.alphabet.last().expect("alphabet is nonempty")
    }

    pub fn sensing_power(&self) -> f64 {
        self.sensing_power
    }

    pub fn max_power(&self) -> f64 {
        self.max_power
    }

    /// Copy with a different sensing power.
    pub fn with_sensing_power(&self, sensing_power: f64) -> Result<Self> {
        ChannelModel::new(
            self.alphabet.clone(),
            self.pmf.clone(),
            self.psi.clone(),
            sensing_power,
            self.max_power,
        )
    }

    #[inline]
    fn at_least(&self, h: f64, threshold: f64) -> bool {
        h >= threshold - ALPHABET_EPS * threshold.abs().max(1.0)
    }

    /// `Pr(h ≥ h̄)` over alphabet points.
    pub fn tail_prob(&self, hbar: f64) -> f64 {
        self.alphabet
            .iter()
            .zip(&self.pmf)
            .filter(|(h, _)| self.at_least(**h, hbar))
            .map(|(_, r)| r)
            .sum()
    }

    /// Success probability per active step under constant power `p`.
    pub fn eta_constant(&self, hbar: f64, p: f64) -> Result<f64> {
        if !(0.0..=self.max_power).contains(&p) {
            return Err(Error::invalid(format!(
                "power {p} outside [0, {}]",
                self.max_power
            )));
        }
        Ok(self
            .alphabet
            .iter()
            .zip(&self.pmf)
            .filter(|(h, _)| self.at_least(**h, hbar))
            .map(|(h, r)| self.psi.eval(p * h) * r)
            .sum())
    }

    /// Success probability per active step under channel inversion with
    /// gain `κ`: unsaturated points receive `ψ(κ)`, capped points
    /// `ψ(h P_max)`. Each alphabet point is counted exactly once.
    pub fn eta_inversion(&self, hbar: f64, kappa: f64) -> f64 {
        if kappa <= 0.0 {
            // Zero gain transmits nothing; ψ(0) may still be positive for
            // custom functions, so evaluate it faithfully.
            return self.tail_prob(hbar) * self.psi.eval(0.0);
        }
        let cap = kappa / self.max_power;
        self.alphabet
            .iter()
            .zip(&self.pmf)
            .filter(|(h, _)| self.at_least(**h, hbar))
            .map(|(h, r)| {
                if *h <= cap {
                    self.psi.eval(h * self.max_power) * r
                } else {
                    self.psi.eval(kappa) * r
                }
            })
            .sum()
    }

    /// Least upper bound of `η_I(h̄, ·)`: every point above the threshold
    /// saturated at the power cap.
    pub fn eta_inversion_sup(&self, hbar: f64) -> f64 {
        self.alphabet
            .iter()
            .zip(&self.pmf)
            .filter(|(h, _)| self.at_least(**h, hbar))
            .map(|(h, r)| self.psi.eval(h * self.max_power) * r)
            .sum()
    }

    /// Expected transmit power per active step under inversion:
    /// `Σ_{h ≥ h̄} min(P_max, κ/h) ρ(h)`.
    pub fn expected_inversion_power(&self, hbar: f64, kappa: f64) -> f64 {
        if kappa <= 0.0 {
            return 0.0;
        }
        self.alphabet
            .iter()
            .zip(&self.pmf)
            .filter(|(h, _)| self.at_least(**h, hbar))
            .map(|(h, r)| {
                let pw = if *h > 0.0 { (kappa / h).min(self.max_power) } else { self.max_power };
                pw * r
            })
            .sum()
    }

    /// Inversion transmit power for a single measurement.
    pub fn inversion_power(&self, kappa: f64, h: f64) -> f64 {
        if kappa <= 0.0 {
            0.0
        } else if h > 0.0 {
            (kappa / h).min(self.max_power)
        } else {
            self.max_power
        }
    }
}
