//! The five subcommands. Every command is a pure function of its
//! configuration and seed: rerunning writes identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use wncs::channel::{ChannelModel, Grid, SuccessFunction};
use wncs::cost::{self, PowerRule, ThresholdPolicy};
use wncs::dynamics;
use wncs::lyapunov::{self, BoxSampler, CertificateForm};
use wncs::optimizer::{self, RuleKind, SolveMode};
use wncs::simulator::{self, HittingPolicy, InitialState, SimConfig};
use wncs::stability::{self, RateTarget};

use crate::config::ExperimentConfig;
use crate::table::{Cell, Table};
use crate::CliError;

pub struct Outputs {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Outputs { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, content)?;
        self.written.push(path);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Check(format!("serialization failed: {e}")))?;
        text.push('\n');
        self.write(name, &text)
    }
}

/// Verify a quadratic certificate against the loop's linear matrices and,
/// when the inequalities hold, hunt for nonlinear counterexamples by
/// sampling. Without a supplied matrix a certificate is constructed first
/// and reported.
pub fn cmd_certify(cfg: &ExperimentConfig, out: &mut Outputs, seed: u64) -> Result<(), CliError> {
    let lin = cfg.linear_form_for_certification()?;

    let (p, a_s, a_u, source) = match cfg.raw_quadratic()? {
        Some((p, a_s, a_u)) => (p, a_s, a_u, "supplied"),
        None => {
            let cert = cfg.build_certificate()?;
            let CertificateForm::Quadratic { p } = cert.form().clone() else {
                return Err(CliError::Schema("certification needs a quadratic certificate".into()));
            };
            (p, cert.success_rate(), cert.failure_rate(), "constructed")
        }
    };

    let report = lyapunov::certify_linear(&lin.a_success, &lin.a_failure, &p, a_s, a_u)
        .map_err(|e| CliError::Schema(e.to_string()))?;

    // Sampling falsification on the actual (possibly nonlinear) system,
    // only meaningful once the linear inequalities hold.
    let mut sampling_json = serde_json::Value::Null;
    let mut falsified = false;
    if report.pass() {
        if let Ok(sys) = cfg.build_system() {
            let cert = lyapunov::LyapunovCertificate::quadratic(p.clone(), a_s, a_u)
                .map_err(|e| CliError::Check(e.to_string()))?;
            let sampler = BoxSampler::unit_box(sys.chi_dim(), 100_000, seed);
            let sampling = lyapunov::estimate_rates_sampling(&sys, &cert, &sampler)
                .map_err(|e| CliError::Check(e.to_string()))?;
            falsified = sampling.falsifies(&cert);
            sampling_json = serde_json::to_value(&sampling).unwrap_or_default();
        }
    }

    let pass = report.pass() && !falsified;
    let p_rows: Vec<Vec<f64>> =
        (0..p.nrows()).map(|i| (0..p.ncols()).map(|j| p[(i, j)]).collect()).collect();
    out.write_json(
        "certify_report.json",
        &json!({
            "source": source,
            "rates": {"a_s": a_s, "a_u": a_u},
            "p": p_rows,
            "certify": serde_json::to_value(&report).unwrap_or_default(),
            "sampling": sampling_json,
            "pass": pass,
        }),
    )?;
    println!(
        "certify: {} (margins {:.3e} / {:.3e}, sampling falsified: {falsified})",
        if pass { "pass" } else { "fail" },
        report.success_margin,
        report.failure_margin
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Check("certification failed; see certify_report.json".into()))
    }
}

/// Tabulate required success probabilities and minimal powers and gains
/// for every wait threshold up to the horizon.
pub fn cmd_feasible(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    let ch = cfg.build_channel()?;
    let rt = cfg.rate_target()?;
    let thresholds = cfg.thresholds.clone().unwrap_or_else(|| vec![0.0]);

    let mut table = Table::new(&["hbar", "n", "eta_star", "p_lower", "kappa_lower", "feasible"]);
    for &hbar in &thresholds {
        let window = stability::feasibility_window(&ch, &rt, hbar)
            .map_err(|e| CliError::Check(e.to_string()))?;
        for row in &window.rows {
            let feasible = row.p_lower.is_some() || row.kappa_lower.is_some();
            table.push(vec![
                hbar.into(),
                row.n.into(),
                row.eta_star.into(),
                row.p_lower.into(),
                row.kappa_lower.into(),
                if feasible { "true" } else { "false" }.into(),
            ]);
        }
    }
    out.write("feasible.csv", &table.to_csv())?;
    println!(
        "feasible: horizon {} over {} threshold(s); wrote feasible.csv",
        stability::max_horizon(&rt),
        thresholds.len()
    );
    Ok(())
}

fn rule_kind(cfg: &ExperimentConfig) -> Result<RuleKind, CliError> {
    match cfg.optimize.as_ref().and_then(|o| o.rule.as_deref()) {
        None | Some("constant") => Ok(RuleKind::Constant),
        Some("inversion") => Ok(RuleKind::Inversion),
        Some(other) => Err(CliError::Schema(format!("unknown rule {other:?}"))),
    }
}

fn infeasibility_diagnostic(ch: &ChannelModel, rt: &RateTarget) -> String {
    let horizon = stability::max_horizon(rt);
    let sup_eta = ch.eta_constant(0.0, ch.max_power()).unwrap_or(0.0);
    let min_required = (0..=horizon)
        .filter_map(|n| stability::required_eta(n, rt))
        .fold(f64::INFINITY, f64::min);
    format!(
        "no candidate meets the decay target mu = {}: the channel reaches at most \
         eta = {sup_eta:.4} at the power cap while the easiest wait threshold requires \
         eta* = {min_required:.4}",
        rt.mu()
    )
}

/// Solve one of the structured optimization modes and write the outcome
/// plus mode-appropriate sweep data.
pub fn cmd_optimize(
    cfg: &ExperimentConfig,
    mode_flag: Option<&str>,
    out: &mut Outputs,
) -> Result<(), CliError> {
    let ch = cfg.build_channel()?;
    let rt = cfg.rate_target()?;
    let opt = cfg.optimize.clone().unwrap_or(crate::config::OptimizeSpec {
        mode: None,
        rule: None,
        epsilon: None,
        resolution: None,
        fixed_n: None,
    });
    let mode = mode_flag
        .map(str::to_string)
        .or(opt.mode.clone())
        .ok_or_else(|| CliError::Schema("an optimization mode is required".into()))?;

    let check = |e: wncs::Error| CliError::Check(e.to_string());
    let schema = |e: wncs::Error| CliError::Schema(e.to_string());

    let (outcome, sweep): (Option<optimizer::OptimizationOutcome>, Option<(String, Table)>) =
        match mode.as_str() {
            "pure-channel" => {
                let rule = rule_kind(cfg)?;
                let outcome = optimizer::solve_pure_channel(&ch, &rt, rule).map_err(check)?;
                let sweep = optimizer::pure_channel_sweep(&ch, &rt, rule).map_err(check)?;
                let mut t = Table::new(&["hbar", "level", "cost"]);
                for p in sweep {
                    t.push(vec![p.hbar.into(), p.level.into(), p.cost.into()]);
                }
                (outcome, Some(("sweep_hbar.csv".into(), t)))
            }
            "pure-time" => {
                let outcome = optimizer::solve_pure_time(&ch, &rt).map_err(check)?;
                let rows = optimizer::pure_time_table(&ch, &rt).map_err(check)?;
                let mut t = Table::new(&["n", "p_lower", "p_star", "cost"]);
                for r in rows {
                    t.push(vec![r.n.into(), r.p_lower.into(), r.p_star.into(), r.cost.into()]);
                }
                (outcome, Some(("sweep_n.csv".into(), t)))
            }
            "eps-loss" => {
                let eps = opt.epsilon.ok_or_else(|| {
                    CliError::Schema("eps-loss mode requires optimize.epsilon".into())
                })?;
                let outcome =
                    optimizer::solve_eps_loss(&ch, &rt, eps, opt.fixed_n).map_err(schema)?;
                let sweep_n = opt
                    .fixed_n
                    .or(outcome.as_ref().map(|o| o.policy.wait_threshold))
                    .unwrap_or(0);
                let sweep = optimizer::eps_loss_sweep(&ch, &rt, eps, sweep_n).map_err(schema)?;
                let mut t = Table::new(&["hbar", "level", "cost"]);
                for p in sweep {
                    t.push(vec![p.hbar.into(), p.level.into(), p.cost.into()]);
                }
                (outcome, Some(("sweep_hbar.csv".into(), t)))
            }
            "unsaturated" => {
                let outcome =
                    optimizer::solve_unsaturated_inversion(&ch, &rt, opt.fixed_n).map_err(check)?;
                let sweep_n = opt
                    .fixed_n
                    .or(outcome.as_ref().map(|o| o.policy.wait_threshold))
                    .unwrap_or(0);
                let sweep = optimizer::unsaturated_sweep(&ch, &rt, sweep_n).map_err(check)?;
                let mut t = Table::new(&["hbar", "level", "cost"]);
                for p in sweep {
                    t.push(vec![p.hbar.into(), p.level.into(), p.cost.into()]);
                }
                (outcome, Some(("sweep_hbar.csv".into(), t)))
            }
            "general" => {
                let rule = rule_kind(cfg)?;
                let resolution = opt.resolution.unwrap_or(64);
                let outcome =
                    optimizer::solve_general(&ch, &rt, rule, resolution).map_err(schema)?;
                let sweep = match (&outcome, rule) {
                    (Some(o), RuleKind::Constant) => {
                        Some(optimizer::constant_sweep(&ch, &rt, o.policy.wait_threshold)
                            .map_err(check)?)
                    }
                    (Some(o), RuleKind::Inversion) => {
                        Some(optimizer::unsaturated_sweep(&ch, &rt, o.policy.wait_threshold)
                            .map_err(check)?)
                    }
                    (None, _) => None,
                };
                let table = sweep.map(|s| {
                    let mut t = Table::new(&["hbar", "level", "cost"]);
                    for p in s {
                        t.push(vec![p.hbar.into(), p.level.into(), p.cost.into()]);
                    }
                    ("sweep_hbar.csv".to_string(), t)
                });
                (outcome, table)
            }
            other => return Err(CliError::Schema(format!("unknown mode {other:?}"))),
        };

    if let Some((name, table)) = sweep {
        out.write(&name, &table.to_csv())?;
    }
    match outcome {
        Some(o) => {
            out.write_json(
                "outcome.json",
                &serde_json::to_value(&o)
                    .map_err(|e| CliError::Check(format!("serialization failed: {e}")))?,
            )?;
            println!(
                "optimize [{}]: cost {:.6} at n = {}, hbar = {:.4}, beta = {:.6}",
                o.mode.as_str(),
                o.cost.total,
                o.policy.wait_threshold,
                o.policy.channel_threshold,
                o.verification.achieved_beta
            );
            Ok(())
        }
        None => Err(CliError::Check(format!(
            "infeasible [{mode}]: {}",
            infeasibility_diagnostic(&ch, &rt)
        ))),
    }
}

/// Run the Monte-Carlo simulator and write trajectories, the clock
/// histogram and a summary with the built-in statistical checks.
pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    out: &mut Outputs,
    seed: Option<u64>,
    trials: Option<usize>,
    horizon: Option<usize>,
) -> Result<(), CliError> {
    let sys = cfg.build_system()?;
    let cert = cfg.build_certificate()?;
    let ch = cfg.build_channel()?;
    let rt = cfg.rate_target()?;
    let policy = cfg.build_policy(&ch)?;
    let sim_cfg = cfg.build_sim_config(seed, trials, horizon)?;

    let result = simulator::simulate(&sys, &cert, &ch, &policy, &rt, &sim_cfg)
        .map_err(|e| CliError::Check(e.to_string()))?;

    let mut vt = Table::new(&["t", "v_mean", "v_sem", "v_bound"]);
    for i in 0..result.record_times.len() {
        vt.push(vec![
            result.record_times[i].into(),
            result.v_mean[i].into(),
            result.v_sem[i].into(),
            result.v_bound[i].into(),
        ]);
    }
    out.write("v_mean.csv", &vt.to_csv())?;

    let total: u64 = result.tau_histogram.iter().sum();
    let mut ht = Table::new(&["tau", "count", "frequency"]);
    for (i, &count) in result.tau_histogram.iter().enumerate() {
        ht.push(vec![
            (i + 1).into(),
            Cell::Int(count as i64),
            (count as f64 / total as f64).into(),
        ]);
    }
    out.write("tau_histogram.csv", &ht.to_csv())?;

    let predicted = cost::policy_cost(&ch, &policy).map_err(|e| CliError::Check(e.to_string()))?;
    let verification =
        stability::verify_policy(&ch, &rt, &policy).map_err(|e| CliError::Check(e.to_string()))?;
    let decay = simulator::decay_check(&result);
    let cost_check = simulator::empirical_cost_check(&result, predicted.total);
    let tau_check =
        simulator::tau_histogram_check(&result, policy.wait_threshold, verification.eta).ok();

    out.write_json(
        "summary.json",
        &json!({
            "seed": sim_cfg.seed,
            "horizon": sim_cfg.horizon,
            "trials": sim_cfg.trials,
            "policy": serde_json::to_value(&policy).unwrap_or_default(),
            "verification": serde_json::to_value(&verification).unwrap_or_default(),
            "empirical_cost": result.empirical_cost,
            "predicted_cost": serde_json::to_value(&predicted).unwrap_or_default(),
            "cost_check": serde_json::to_value(&cost_check).unwrap_or_default(),
            "decay_check": serde_json::to_value(&decay).unwrap_or_default(),
            "tau_check": serde_json::to_value(&tau_check).unwrap_or_default(),
            "attempt_count": result.attempt_count,
            "transmit_count": result.transmit_count,
            "success_count": result.success_count,
            "completed_trials": result.completed_trials,
            "diverged_trials": result.diverged_trials,
        }),
    )?;
    println!(
        "simulate: empirical cost {:.6} (predicted {:.6}), decay check {}",
        result.empirical_cost,
        predicted.total,
        if decay.pass { "pass" } else { "fail" }
    );
    Ok(())
}

/// Built-in study setup used by `reproduce`.
fn study_channel(sensing: f64) -> ChannelModel {
    ChannelModel::quantized_rayleigh(
        0.5,
        Grid { min: 0.0, step: 0.05, max: 5.0 },
        SuccessFunction::qpsk_awgn(32).unwrap(),
        sensing,
        10.0,
    )
    .expect("built-in channel is valid")
}

fn study_rates(mu: f64) -> RateTarget {
    RateTarget::new(0.98, 1.0009, mu).expect("built-in rates are valid")
}

fn memoryless_channel() -> ChannelModel {
    ChannelModel::unit_gain(SuccessFunction::exp_error(), 10.0).expect("valid")
}

/// Near-sure constant-power point for one threshold: the conservative
/// power from the success lower bound, costed with that same bound.
fn near_sure_point(
    ch: &ChannelModel,
    rt: &RateTarget,
    n: usize,
    hbar: f64,
) -> Option<(f64, f64)> {
    let p = stability::min_power_lower_bound(ch, rt, n, hbar)?;
    let eta = ch.tail_prob(hbar) * ch.psi.eval(hbar * p);
    let total = (ch.sensing_power() + p * ch.tail_prob(hbar)) / (1.0 + n as f64 * eta);
    Some((p, total))
}

/// Emit the data series behind the study's figures.
pub fn cmd_reproduce(
    figure: u32,
    out: &mut Outputs,
    seed: u64,
    trials: Option<usize>,
    horizon: Option<usize>,
) -> Result<(), CliError> {
    let check = |e: wncs::Error| CliError::Check(e.to_string());
    match figure {
        3 => {
            // Pure channel thresholds: exact minimal powers, the
            // conservative near-sure powers, and minimal inversion gains.
            let ch = study_channel(0.0);
            let rt = study_rates(0.999);
            let mut t = Table::new(&[
                "hbar",
                "p_min",
                "j_constant_min_power",
                "p_near_sure",
                "j_constant_near_sure",
                "kappa_min",
                "j_inversion",
            ]);
            let exact = optimizer::pure_channel_sweep(&ch, &rt, RuleKind::Constant).map_err(check)?;
            let inv = optimizer::pure_channel_sweep(&ch, &rt, RuleKind::Inversion).map_err(check)?;
            for (e, i) in exact.iter().zip(&inv) {
                let ns = near_sure_point(&ch, &rt, 0, e.hbar);
                t.push(vec![
                    e.hbar.into(),
                    e.level.into(),
                    e.cost.into(),
                    ns.map(|x| x.0).into(),
                    ns.map(|x| x.1).into(),
                    i.level.into(),
                    i.cost.into(),
                ]);
            }
            out.write("fig3.csv", &t.to_csv())?;
            let best_inv = optimizer::solve_pure_channel(&ch, &rt, RuleKind::Inversion)
                .map_err(check)?
                .ok_or_else(|| CliError::Check("inversion infeasible".into()))?;
            let best_ns = ch
                .alphabet()
                .iter()
                .filter_map(|&h| near_sure_point(&ch, &rt, 0, h).map(|(p, j)| (j, h, p)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            out.write_json(
                "summary.json",
                &json!({
                    "inversion_min": {"cost": best_inv.cost.total,
                                       "hbar": best_inv.policy.channel_threshold},
                    "constant_near_sure_min": best_ns.map(|(j, h, p)| json!({
                        "cost": j, "hbar": h, "p": p})),
                }),
            )?;
        }
        4 | 5 => {
            let ch = memoryless_channel();
            if figure == 4 {
                let rows = optimizer::pure_time_table(&ch, &study_rates(0.999)).map_err(check)?;
                let mut t = Table::new(&["n", "p_lower", "p_star", "cost"]);
                for r in rows {
                    t.push(vec![r.n.into(), r.p_lower.into(), r.p_star.into(), r.cost.into()]);
                }
                out.write("fig4.csv", &t.to_csv())?;
            } else {
                let mut t = Table::new(&["mu", "n", "p_star", "cost"]);
                let mut minima = Vec::new();
                for mu in [0.995, 0.999, 0.9999] {
                    let rt = study_rates(mu);
                    let rows = optimizer::pure_time_table(&ch, &rt).map_err(check)?;
                    for r in &rows {
                        t.push(vec![mu.into(), r.n.into(), r.p_star.into(), r.cost.into()]);
                    }
                    if let Some(best) = rows.iter().min_by(|a, b| a.cost.total_cmp(&b.cost)) {
                        minima.push(json!({"mu": mu, "n": best.n, "cost": best.cost}));
                    }
                }
                out.write("fig5.csv", &t.to_csv())?;
                out.write_json("summary.json", &json!({ "minima": minima }))?;
            }
        }
        6 => {
            let ch = study_channel(0.0);
            let rt = study_rates(0.999);
            let n = 9;
            let inv = optimizer::unsaturated_sweep(&ch, &rt, n).map_err(check)?;
            let mut t = Table::new(&[
                "hbar",
                "p_near_sure",
                "j_constant_near_sure",
                "kappa_star",
                "j_inversion",
            ]);
            for i in &inv {
                let ns = near_sure_point(&ch, &rt, n, i.hbar);
                t.push(vec![
                    i.hbar.into(),
                    ns.map(|x| x.0).into(),
                    ns.map(|x| x.1).into(),
                    i.level.into(),
                    i.cost.into(),
                ]);
            }
            out.write("fig6.csv", &t.to_csv())?;
            let best_inv = inv
                .iter()
                .filter_map(|p| p.cost.map(|c| (c, p.hbar)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let best_ns = ch
                .alphabet()
                .iter()
                .filter_map(|&h| near_sure_point(&ch, &rt, n, h).map(|(p, j)| (j, h, p)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            out.write_json(
                "summary.json",
                &json!({
                    "n": n,
                    "inversion_min": best_inv.map(|(j, h)| json!({"cost": j, "hbar": h})),
                    "constant_near_sure_min": best_ns.map(|(j, h, p)| json!({
                        "cost": j, "hbar": h, "p": p})),
                }),
            )?;
        }
        7 => {
            let rt = study_rates(0.999);
            let horizon_n = stability::max_horizon(&rt);
            let mut t = Table::new(&["p_s", "n", "hbar", "kappa", "cost"]);
            for p_s in [0.0, 0.2, 0.5] {
                let ch = study_channel(p_s);
                for n in 0..=horizon_n {
                    let sweep = optimizer::unsaturated_sweep(&ch, &rt, n).map_err(check)?;
                    let best = sweep
                        .iter()
                        .filter_map(|p| p.cost.map(|c| (c, p.hbar, p.level.unwrap_or(0.0))))
                        .min_by(|a, b| a.0.total_cmp(&b.0));
                    if let Some((cost, hbar, kappa)) = best {
                        t.push(vec![
                            p_s.into(),
                            n.into(),
                            hbar.into(),
                            kappa.into(),
                            cost.into(),
                        ]);
                    }
                }
            }
            out.write("fig7.csv", &t.to_csv())?;
        }
        8 => {
            let ch = study_channel(0.0);
            let sys = dynamics::robot_arm();
            let cert = lyapunov::construct_linear_certificate(
                dynamics::robot_arm_linearized().linear_form().unwrap(),
                0.995,
            )
            .map_err(check)?;
            let rt = study_rates(0.999);
            let mut policies = vec![HittingPolicy {
                label: "baseline".into(),
                policy: ThresholdPolicy::new(
                    0,
                    0.0,
                    PowerRule::Constant { power: ch.max_power() },
                    &ch,
                )
                .map_err(check)?,
            }];
            for mu in [0.99, 0.995, 0.999] {
                let rtm = study_rates(mu);
                let o = optimizer::solve_unsaturated_inversion(&ch, &rtm, None)
                    .map_err(check)?
                    .ok_or_else(|| CliError::Check(format!("mu = {mu} infeasible")))?;
                policies.push(HittingPolicy { label: format!("mu={mu}"), policy: o.policy });
            }
            let mut cfg = SimConfig::new(
                horizon.unwrap_or(5000),
                trials.unwrap_or(10_000),
                seed,
                InitialState::PlantSphere { radius: 1.0 },
            );
            cfg.record_v_every = cfg.horizon;
            let rows =
                simulator::hitting_time_experiment(&sys, &cert, &ch, &rt, &policies, 1e-6, &cfg)
                    .map_err(|e| CliError::Check(e.to_string()))?;
            let mut t = Table::new(&[
                "label",
                "mean_hitting_steps",
                "hit_trials",
                "censored_trials",
                "mean_cost",
            ]);
            for r in &rows {
                t.push(vec![
                    r.label.as_str().into(),
                    r.mean_steps.into(),
                    r.hit_trials.into(),
                    r.censored_trials.into(),
                    r.mean_cost.into(),
                ]);
            }
            out.write("fig8.csv", &t.to_csv())?;
        }
        other => {
            return Err(CliError::Schema(format!(
                "unknown figure {other}; expected one of 3, 4, 5, 6, 7, 8"
            )))
        }
    }
    println!("reproduce: figure {figure} data written");
    Ok(())
}

/// What `optimize` mode strings map to, exposed for help text and tests.
pub fn known_modes() -> &'static [&'static str] {
    &["pure-channel", "pure-time", "eps-loss", "unsaturated", "general"]
}

/// Human-readable mode of an outcome (re-exported for the binary).
pub fn mode_name(mode: SolveMode) -> &'static str {
    mode.as_str()
}
