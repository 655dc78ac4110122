//! JSON experiment configuration. Unknown keys are rejected everywhere.

use nalgebra::DMatrix;
use serde::Deserialize;

use wncs::channel::{ChannelModel, Grid, SuccessFunction};
use wncs::cost::{PowerRule, ThresholdPolicy};
use wncs::dynamics::{self, ClosedLoopSystem};
use wncs::lyapunov::{self, LyapunovCertificate};
use wncs::simulator::{InitialState, SimConfig};
use wncs::stability::RateTarget;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub certificate: Option<CertificateSpec>,
    pub channel: ChannelSpec,
    pub target: TargetSpec,
    #[serde(default)]
    pub policy: Option<PolicySpec>,
    #[serde(default)]
    pub optimize: Option<OptimizeSpec>,
    #[serde(default)]
    pub sim: Option<SimSpec>,
    #[serde(default)]
    pub output: Option<OutputSpec>,
    /// Channel thresholds tabulated by the `feasible` command.
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    RobotArm,
    RobotArmLinearized,
    Linear {
        a_p: Vec<Vec<f64>>,
        b_p: Vec<Vec<f64>>,
        c_p: Vec<Vec<f64>>,
        #[serde(default)]
        a_c: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        b_c: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        c_c: Option<Vec<Vec<f64>>>,
        d_c: Vec<Vec<f64>>,
        hold: HoldSpec,
    },
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldSpec {
    ZeroOrderHold,
    Zeroing,
    Linear { c_g: Vec<Vec<f64>> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    /// Row-major symmetric matrix of the quadratic certificate.
    #[serde(default)]
    pub p: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub a_s: Option<f64>,
    #[serde(default)]
    pub a_u: Option<f64>,
    /// Build the certificate from the linear loop with this nominal rate.
    #[serde(default)]
    pub construct: Option<ConstructSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructSpec {
    #[serde(default)]
    pub a0: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub mu: f64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    QuantizedRayleigh {
        sigma2: f64,
        grid: GridSpec,
        success: SuccessSpec,
        #[serde(rename = "P_S", default)]
        p_s: f64,
        #[serde(rename = "P_max")]
        p_max: f64,
    },
    UnitGain {
        success: SuccessSpec,
        #[serde(rename = "P_max")]
        p_max: f64,
    },
    Explicit {
        alphabet: Vec<f64>,
        pmf: Vec<f64>,
        success: SuccessSpec,
        #[serde(rename = "P_S", default)]
        p_s: f64,
        #[serde(rename = "P_max")]
        p_max: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub step: f64,
    pub max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SuccessSpec {
    QpskAwgn { bits: u32 },
    ExpError,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub n: usize,
    pub hbar: f64,
    pub rule: RuleSpec,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleSpec {
    Constant { p: f64 },
    Inversion { kappa: f64 },
}

#[derive(Debug, Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSpec {
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub rule: Option<String>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub resolution: Option<usize>,
    #[serde(default)]
    pub fixed_n: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub horizon: usize,
    pub trials: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    pub initial: InitialSpec,
    #[serde(default)]
    pub record_v_every: Option<usize>,
    #[serde(default)]
    pub log_trials: Option<usize>,
    #[serde(default)]
    pub allow_unstable: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Sphere { radius: f64 },
    Vector(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub directory: Option<String>,
    #[serde(default)]
    pub format: Option<FormatSpec>,
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FormatSpec {
    Csv,
    Json,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Schema(format!("{what}: ragged matrix rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(0.0 < self.target.mu && self.target.mu < 1.0) {
            return Err(CliError::Schema(format!(
                "target.mu must lie in (0,1), got {}",
                self.target.mu
            )));
        }
        if let Some(c) = &self.certificate {
            if c.p.is_some() && (c.a_s.is_none() || c.a_u.is_none()) {
                return Err(CliError::Schema(
                    "certificate with a matrix requires both rates".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn build_channel(&self) -> Result<ChannelModel, CliError> {
        let success = |s: &SuccessSpec| -> Result<SuccessFunction, CliError> {
            match s {
                SuccessSpec::QpskAwgn { bits } => {
                    SuccessFunction::qpsk_awgn(*bits).map_err(CliError::from_core_schema)
                }
                SuccessSpec::ExpError => Ok(SuccessFunction::exp_error()),
            }
        };
        match &self.channel {
            ChannelSpec::QuantizedRayleigh { sigma2, grid, success: s, p_s, p_max } => {
                ChannelModel::quantized_rayleigh(
                    *sigma2,
                    Grid { min: grid.min, step: grid.step, max: grid.max },
                    success(s)?,
                    *p_s,
                    *p_max,
                )
                .map_err(CliError::from_core_schema)
            }
            ChannelSpec::UnitGain { success: s, p_max } => {
                ChannelModel::unit_gain(success(s)?, *p_max).map_err(CliError::from_core_schema)
            }
            ChannelSpec::Explicit { alphabet, pmf, success: s, p_s, p_max } => {
                ChannelModel::new(alphabet.clone(), pmf.clone(), success(s)?, *p_s, *p_max)
                    .map_err(CliError::from_core_schema)
            }
        }
    }

    pub fn build_system(&self) -> Result<ClosedLoopSystem, CliError> {
        match self.system.as_ref() {
            None => Err(CliError::Schema("this command needs a system section".into())),
            Some(SystemSpec::RobotArm) => Ok(dynamics::robot_arm()),
            Some(SystemSpec::RobotArmLinearized) => Ok(dynamics::robot_arm_linearized()),
            Some(SystemSpec::Linear { a_p, b_p, c_p, a_c, b_c, c_c, d_c, hold }) => {
                let a_p = matrix(a_p, "a_p")?;
                let b_p = matrix(b_p, "b_p")?;
                let c_p = matrix(c_p, "c_p")?;
                let sy = c_p.nrows();
                let su = b_p.ncols();
                let a_c = a_c.as_deref().map(|m| matrix(m, "a_c")).transpose()?
                    .unwrap_or_else(|| DMatrix::zeros(0, 0));
                let sc = a_c.nrows();
                let b_c = b_c.as_deref().map(|m| matrix(m, "b_c")).transpose()?
                    .unwrap_or_else(|| DMatrix::zeros(sc, sy));
                let c_c = c_c.as_deref().map(|m| matrix(m, "c_c")).transpose()?
                    .unwrap_or_else(|| DMatrix::zeros(su, sc));
                let d_c = matrix(d_c, "d_c")?;
                let c_g = match hold {
                    HoldSpec::ZeroOrderHold => DMatrix::identity(sy, sy),
                    HoldSpec::Zeroing => DMatrix::zeros(sy, sy),
                    HoldSpec::Linear { c_g } => matrix(c_g, "c_g")?,
                };
                dynamics::linear_system(a_p, b_p, c_p, a_c, b_c, c_c, d_c, c_g)
                    .map_err(CliError::from_core_schema)
            }
        }
    }

    /// The linear matrices used for certificate checks: a linear system's
    /// own form, or the origin linearization of the robot arm.
    pub fn linear_form_for_certification(
        &self,
    ) -> Result<wncs::dynamics::LinearForm, CliError> {
        match self.system.as_ref() {
            Some(SystemSpec::RobotArm) => {
                Ok(dynamics::robot_arm_linearized().linear_form().unwrap().clone())
            }
            _ => {
                let sys = self.build_system()?;
                sys.linear_form().cloned().ok_or_else(|| {
                    CliError::Schema("certification needs a linear system or a built-in".into())
                })
            }
        }
    }

    pub fn rates(&self) -> Result<(f64, f64), CliError> {
        let cert = self
            .certificate
            .as_ref()
            .ok_or_else(|| CliError::Schema("certificate rates are required".into()))?;
        match (cert.a_s, cert.a_u) {
            (Some(a_s), Some(a_u)) => Ok((a_s, a_u)),
            _ => Err(CliError::Schema("certificate must provide a_s and a_u".into())),
        }
    }

    pub fn rate_target(&self) -> Result<RateTarget, CliError> {
        let (a_s, a_u) = self.rates()?;
        RateTarget::new(a_s, a_u, self.target.mu).map_err(CliError::from_core_schema)
    }

    pub fn build_quadratic_certificate(&self) -> Result<Option<LyapunovCertificate>, CliError> {
        let Some(spec) = self.certificate.as_ref() else {
            return Ok(None);
        };
        if let Some(p) = &spec.p {
            let (a_s, a_u) = self.rates()?;
            let p = matrix(p, "certificate.p")?;
            return LyapunovCertificate::quadratic(p, a_s, a_u)
                .map(Some)
                .map_err(CliError::from_core_schema);
        }
        Ok(None)
    }

    /// The raw certificate matrix and rates, without the definiteness
    /// validation: certification itself decides whether they hold up.
    pub fn raw_quadratic(&self) -> Result<Option<(DMatrix<f64>, f64, f64)>, CliError> {
        let Some(spec) = self.certificate.as_ref() else {
            return Ok(None);
        };
        if let Some(p) = &spec.p {
            let (a_s, a_u) = self.rates()?;
            return Ok(Some((matrix(p, "certificate.p")?, a_s, a_u)));
        }
        Ok(None)
    }

    /// The certificate for simulation/certification: explicit matrix, or
    /// constructed from the linear form when `construct` was requested.
    pub fn build_certificate(&self) -> Result<LyapunovCertificate, CliError> {
        if let Some(cert) = self.build_quadratic_certificate()? {
            return Ok(cert);
        }
        let spec = self
            .certificate
            .as_ref()
            .ok_or_else(|| CliError::Schema("a certificate section is required".into()))?;
        if let Some(c) = &spec.construct {
            let lin = self.linear_form_for_certification()?;
            let a0 = match c.a0 {
                Some(a0) => a0,
                None => {
                    let rho = lin
                        .nominal_block()
                        .complex_eigenvalues()
                        .iter()
                        .map(|l| l.norm())
                        .fold(0.0f64, f64::max);
                    (rho * rho + 1.0) / 2.0
                }
            };
            return lyapunov::construct_linear_certificate(&lin, a0)
                .map_err(|e| CliError::Check(e.to_string()));
        }
        Err(CliError::Schema("certificate needs a matrix or a construct request".into()))
    }

    pub fn build_policy(&self, ch: &ChannelModel) -> Result<ThresholdPolicy, CliError> {
        let spec = self
            .policy
            .as_ref()
            .ok_or_else(|| CliError::Schema("this command needs a policy section".into()))?;
        let rule = match spec.rule {
            RuleSpec::Constant { p } => PowerRule::Constant { power: p },
            RuleSpec::Inversion { kappa } => PowerRule::Inversion { gain: kappa },
        };
        ThresholdPolicy::new(spec.n, spec.hbar, rule, ch).map_err(CliError::from_core_schema)
    }

    pub fn build_sim_config(
        &self,
        seed_override: Option<u64>,
        trials_override: Option<usize>,
        horizon_override: Option<usize>,
    ) -> Result<SimConfig, CliError> {
        let spec = self
            .sim
            .as_ref()
            .ok_or_else(|| CliError::Schema("this command needs a sim section".into()))?;
        let initial = match &spec.initial {
            InitialSpec::Sphere { radius } => InitialState::PlantSphere { radius: *radius },
            InitialSpec::Vector(v) => InitialState::Vector(v.clone()),
        };
        let mut cfg = SimConfig::new(
            horizon_override.unwrap_or(spec.horizon),
            trials_override.unwrap_or(spec.trials),
            seed_override.or(spec.seed).unwrap_or(1),
            initial,
        );
        cfg.record_v_every = spec.record_v_every.unwrap_or(10);
        cfg.log_trials = spec.log_trials.unwrap_or(0);
        cfg.allow_unstable = spec.allow_unstable.unwrap_or(false);
        Ok(cfg)
    }
}
