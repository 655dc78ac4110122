//! Property and cross-check suite: structural invariants that hold for
//! whole parameter families, independent of any reference numbers.

use nalgebra::DMatrix;
use proptest::prelude::*;

use wncs::channel::{ChannelModel, Grid, SuccessFunction};
use wncs::cost::{self, PowerRule, ThresholdPolicy};
use wncs::dynamics;
use wncs::lyapunov;
use wncs::optimizer::{self, RuleKind};
use wncs::simulator::{self, InitialState, SimConfig};
use wncs::stability::{self, RateTarget};

fn rayleigh(sigma2: f64, step: f64, psi: SuccessFunction, p_max: f64) -> ChannelModel {
    ChannelModel::quantized_rayleigh(
        sigma2,
        Grid { min: 0.0, step, max: 5.0 },
        psi,
        0.0,
        p_max,
    )
    .unwrap()
}

fn rate_target(a_s: f64, gap: f64, frac: f64) -> RateTarget {
    let a_u = a_s + gap;
    let hi = a_u.min(1.0);
    let mu = a_s + frac * (hi - a_s);
    RateTarget::new(a_s, a_u, mu).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn beta_is_strictly_decreasing_and_pinned_at_endpoints(
        a_s in 0.01f64..0.95,
        gap in 0.01f64..0.5,
        frac in 0.05f64..0.95,
        n in 0usize..12,
    ) {
        let rt = rate_target(a_s, gap, frac);
        prop_assert_eq!(stability::beta(n, 0.0, &rt), rt.failure_rate());
        prop_assert_eq!(stability::beta(0, 1.0, &rt), rt.success_rate());
        let mut last = f64::INFINITY;
        for k in 0..=100 {
            let b = stability::beta(n, k as f64 / 100.0, &rt);
            prop_assert!(b < last);
            last = b;
        }
    }

    #[test]
    fn required_eta_round_trips_through_beta(
        a_s in 0.01f64..0.95,
        gap in 0.01f64..0.5,
        frac in 0.05f64..0.95,
        n in 0usize..12,
    ) {
        let rt = rate_target(a_s, gap, frac);
        if let Some(eta) = stability::required_eta(n, &rt) {
            prop_assert!((0.0..=1.0).contains(&eta));
            let b = stability::beta(n, eta, &rt);
            prop_assert!((b - rt.mu()).abs() < 1e-12, "beta {} mu {}", b, rt.mu());
        }
    }

    #[test]
    fn eta_constant_sandwich_and_monotonicity(
        sigma2 in 0.3f64..2.0,
        hbar_idx in 0usize..20,
        p in 0.05f64..10.0,
    ) {
        let ch = rayleigh(sigma2, 0.25, SuccessFunction::qpsk_awgn(32).unwrap(), 10.0);
        let hbar = ch.alphabet()[hbar_idx];
        let tail = ch.tail_prob(hbar);
        let eta = ch.eta_constant(hbar, p).unwrap();
        prop_assert!(tail * ch.psi.eval(hbar * p) - 1e-12 <= eta);
        prop_assert!(eta <= tail + 1e-12);
        // Monotone in p and antitone in hbar.
        let eta_hi = ch.eta_constant(hbar, (p * 1.2).min(10.0)).unwrap();
        prop_assert!(eta_hi + 1e-15 >= eta);
        if hbar_idx + 1 < ch.alphabet().len() {
            let eta_next = ch.eta_constant(ch.alphabet()[hbar_idx + 1], p).unwrap();
            prop_assert!(eta_next <= eta + 1e-15);
        }
    }

    #[test]
    fn eta_inversion_monotone_and_branch_consistent(
        sigma2 in 0.3f64..2.0,
        hbar_idx in 1usize..20,
        kappa in 0.01f64..30.0,
    ) {
        let ch = rayleigh(sigma2, 0.25, SuccessFunction::qpsk_awgn(16).unwrap(), 4.0);
        let hbar = ch.alphabet()[hbar_idx];
        let eta = ch.eta_inversion(hbar, kappa);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&eta));
        let eta_hi = ch.eta_inversion(hbar, kappa * 1.1);
        prop_assert!(eta_hi + 1e-15 >= eta);
        // At the branch boundary kappa = hbar * P_max the unsaturated
        // product formula agrees with the general sum.
        let kb = hbar * ch.max_power();
        let general = ch.eta_inversion(hbar, kb);
        let unsaturated = ch.tail_prob(hbar) * ch.psi.eval(kb);
        prop_assert!((general - unsaturated).abs() < 1e-12);
    }

    #[test]
    fn cost_identities_hold_to_machine_precision(
        sigma2 in 0.3f64..2.0,
        n in 0usize..12,
        hbar_idx in 0usize..20,
        p in 0.0f64..10.0,
        kappa in 0.0f64..20.0,
        sensing in 0.0f64..0.5,
    ) {
        let ch = ChannelModel::quantized_rayleigh(
            sigma2,
            Grid { min: 0.0, step: 0.25, max: 5.0 },
            SuccessFunction::qpsk_awgn(32).unwrap(),
            sensing,
            10.0,
        ).unwrap();
        let hbar = ch.alphabet()[hbar_idx];

        let c = cost::cost_constant(&ch, n, hbar, p).unwrap();
        prop_assert_eq!(c.total, c.sensing_part + c.transmit_part);
        let senses = hbar > ch.min_gain();
        let numer = if senses { sensing } else { 0.0 } + p * ch.tail_prob(hbar);
        prop_assert!((c.total * (1.0 + n as f64 * c.eta) - numer).abs() <= 1e-12 * numer.max(1.0));
        prop_assert!((c.pr_active - 1.0 / (1.0 + n as f64 * c.eta)).abs() < 1e-15);

        let ci = cost::cost_inversion(&ch, n, hbar, kappa).unwrap();
        prop_assert_eq!(ci.total, ci.sensing_part + ci.transmit_part);
        let numer_i = sensing + ch.expected_inversion_power(hbar, kappa);
        prop_assert!(
            (ci.total * (1.0 + n as f64 * ci.eta) - numer_i).abs() <= 1e-12 * numer_i.max(1.0)
        );

        // Unsaturated branch agrees with the closed form.
        if hbar > 0.0 && kappa <= hbar * ch.max_power() {
            let s: f64 = ch
                .alphabet()
                .iter()
                .zip(ch.pmf())
                .filter(|(h, _)| **h >= hbar)
                .map(|(h, r)| r / h)
                .sum();
            let closed = (sensing + kappa * s)
                / (1.0 + n as f64 * ch.tail_prob(hbar) * ch.psi.eval(kappa));
            prop_assert!((ci.total - closed).abs() <= 1e-12 * closed.max(1.0));
        }
    }

    #[test]
    fn tau_stationary_is_a_distribution(n in 0usize..40, eta in 0.001f64..0.999) {
        let t = cost::tau_stationary(n, eta).unwrap();
        let total = n as f64 * t.pr_each_low + t.pr_active;
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(t.pr_each_low >= 0.0 && t.pr_active > 0.0);
    }

    #[test]
    fn min_power_brackets_the_feasibility_boundary(
        sigma2 in 0.3f64..2.0,
        n in 0usize..6,
        hbar_idx in 0usize..16,
    ) {
        let ch = rayleigh(sigma2, 0.25, SuccessFunction::qpsk_awgn(32).unwrap(), 10.0);
        let rt = RateTarget::new(0.98, 1.0009, 0.999).unwrap();
        let hbar = ch.alphabet()[hbar_idx];
        let eta_star = stability::required_eta(n, &rt).unwrap();
        if let Some(p) = stability::min_power(&ch, &rt, n, hbar).unwrap() {
            prop_assert!(ch.eta_constant(hbar, p).unwrap() >= eta_star);
            let below = (p - 1e-6 * ch.max_power()).max(0.0);
            if p > 1e-8 {
                prop_assert!(ch.eta_constant(hbar, below).unwrap() < eta_star);
            }
        }
        if let Some(k) = stability::min_gain(&ch, &rt, n, hbar).unwrap() {
            prop_assert!(ch.eta_inversion(hbar, k) >= eta_star - 1e-12);
            if k > 1e-6 {
                prop_assert!(ch.eta_inversion(hbar, k * (1.0 - 1e-5)) < eta_star);
            }
        }
    }
}

#[test]
fn general_solver_dominates_specialized_modes() {
    let rt = RateTarget::new(0.98, 1.0009, 0.999).unwrap();
    let tol = 1e-4;

    // Pure time on the memoryless exponential-success channel.
    let unit = ChannelModel::unit_gain(SuccessFunction::exp_error(), 10.0).unwrap();
    let pt = optimizer::solve_pure_time(&unit, &rt).unwrap().unwrap();
    let general = optimizer::solve_general(&unit, &rt, RuleKind::Constant, 64)
        .unwrap()
        .unwrap();
    assert!(
        general.cost.total <= pt.cost.total * (1.0 + tol),
        "general {} vs pure-time {}",
        general.cost.total,
        pt.cost.total
    );

    // Pure channel (both rules) on a coarse fading channel.
    let ch = rayleigh(0.5, 0.25, SuccessFunction::qpsk_awgn(32).unwrap(), 10.0);
    for rule in [RuleKind::Constant, RuleKind::Inversion] {
        let pc = optimizer::solve_pure_channel(&ch, &rt, rule).unwrap().unwrap();
        let g = optimizer::solve_general(&ch, &rt, rule, 48).unwrap().unwrap();
        assert!(
            g.cost.total <= pc.cost.total * (1.0 + tol),
            "{rule:?}: general {} vs pure-channel {}",
            g.cost.total,
            pc.cost.total
        );
    }

    // Unsaturated inversion and eps-loss are approximations/restrictions:
    // the general optimum can only be at least as good.
    let unsat = optimizer::solve_unsaturated_inversion(&ch, &rt, None).unwrap().unwrap();
    let g_inv = optimizer::solve_general(&ch, &rt, RuleKind::Inversion, 48).unwrap().unwrap();
    assert!(g_inv.cost.total <= unsat.cost.total * (1.0 + tol));
    if let Some(eps) = optimizer::solve_eps_loss(&ch, &rt, 0.05, None).unwrap() {
        let g_c = optimizer::solve_general(&ch, &rt, RuleKind::Constant, 48).unwrap().unwrap();
        assert!(g_c.cost.total <= eps.cost.total * (1.0 + tol));
    }
}

#[test]
fn pure_time_optimum_beats_feasible_grid() {
    // The claimed optimum is not beaten anywhere on a dense feasible grid.
    let unit = ChannelModel::unit_gain(SuccessFunction::exp_error(), 10.0).unwrap();
    let rt = RateTarget::new(0.98, 1.0009, 0.999).unwrap();
    let best = optimizer::solve_pure_time(&unit, &rt).unwrap().unwrap();
    let horizon = stability::max_horizon(&rt);
    for n in 0..=horizon {
        let Some(p_low) = stability::min_power(&unit, &rt, n, 0.0).unwrap() else {
            continue;
        };
        for k in 0..=200 {
            let p = p_low + (10.0 - p_low) * k as f64 / 200.0;
            let j = cost::cost_pure_time(&unit, n, p).unwrap();
            assert!(
                best.cost.total <= j + 1e-9,
                "beaten at n={n} p={p}: {j} < {}",
                best.cost.total
            );
        }
    }
}

#[test]
fn optimum_candidates_carry_a_witness() {
    // At the returned power, either a boundary is active or the numerical
    // cost derivative changes sign across it (local-minimum witness).
    let unit = ChannelModel::unit_gain(SuccessFunction::exp_error(), 10.0).unwrap();
    let rt = RateTarget::new(0.98, 1.0009, 0.999).unwrap();
    let out = optimizer::solve_pure_time(&unit, &rt).unwrap().unwrap();
    let n = out.policy.wait_threshold;
    let PowerRule::Constant { power } = out.policy.rule else { panic!() };
    let p_low = stability::min_power(&unit, &rt, n, 0.0).unwrap().unwrap();
    let at_boundary =
        (power - p_low).abs() < 1e-6 || (power - unit.max_power()).abs() < 1e-6;
    if !at_boundary {
        let h = 1e-5;
        let j = |p: f64| cost::cost_pure_time(&unit, n, p).unwrap();
        assert!(j(power - h) > j(power) && j(power + h) > j(power));
    }
}

#[test]
fn simulation_is_bit_identical_across_thread_counts() {
    let sys = dynamics::robot_arm();
    let p = DMatrix::identity(4, 4);
    let cert = lyapunov::LyapunovCertificate::quadratic(p, 0.99, 1.5).unwrap();
    let rt = RateTarget::new(0.99, 1.5, 0.995).unwrap();
    let ch = ChannelModel::unit_gain(SuccessFunction::exp_error(), 10.0).unwrap();
    let policy = ThresholdPolicy::new(2, 0.0, PowerRule::Constant { power: 2.0 }, &ch).unwrap();
    let mut cfg = SimConfig::new(800, 300, 2024, InitialState::PlantSphere { radius: 1.0 });
    cfg.record_v_every = 40;
    cfg.allow_unstable = true;

    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulator::simulate(&sys, &cert, &ch, &policy, &rt, &cfg).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.empirical_cost.to_bits(), b.empirical_cost.to_bits());
    assert_eq!(a.tau_histogram, b.tau_histogram);
    assert_eq!(a.success_count, b.success_count);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.v_mean), bits(&b.v_mean));
    assert_eq!(bits(&a.v_sem), bits(&b.v_sem));
}

#[test]
fn logged_trajectories_respect_renewal_growth_bound() {
    // Certified linear loop: between consecutive deliveries,
    // V(t_k + l) <= a_U^(l-1) a_S V(t_k).
    let sys = dynamics::robot_arm_linearized();
    let cert = lyapunov::construct_linear_certificate(sys.linear_form().unwrap(), 0.995).unwrap();
    let (a_s, a_u) = (cert.success_rate(), cert.failure_rate());
    let rt = RateTarget::new(a_s, a_u, 0.9995).unwrap();
    let ch = ChannelModel::unit_gain(SuccessFunction::custom(|_| 0.45), 10.0).unwrap();
    let policy = ThresholdPolicy::new(2, 0.0, PowerRule::Constant { power: 1.0 }, &ch).unwrap();
    let mut cfg = SimConfig::new(600, 3, 15, InitialState::PlantSphere { radius: 1.0 });
    cfg.log_trials = 3;
    cfg.allow_unstable = true;
    let res = simulator::simulate(&sys, &cert, &ch, &policy, &rt, &cfg).unwrap();
    assert_eq!(res.v_trajectories.len(), 3);

    for trial in 0..3 {
        let v = &res.v_trajectories[trial];
        // Delivery anchors: the forced success at t = 0 plus logged events.
        let mut anchors = vec![0usize];
        anchors.extend(
            res.delivery_log
                .iter()
                .filter(|e| e.trial == trial && e.success)
                .map(|e| e.t),
        );
        anchors.push(v.len() - 1);
        let mut checked = 0usize;
        for w in anchors.windows(2) {
            let (from, to) = (w[0], w[1]);
            let v0 = v[from];
            for (l, vt) in v[from + 1..=to].iter().enumerate() {
                let bound = a_u.powi(l as i32) * a_s * v0;
                assert!(
                    *vt <= bound * (1.0 + 1e-9) + 1e-300,
                    "trial {trial} t={} v={vt} bound={bound}",
                    from + l + 1
                );
                checked += 1;
            }
        }
        assert!(checked > 100);
    }
}

#[test]
fn empirical_success_rate_concentrates_on_eta() {
    let sys = dynamics::robot_arm();
    let cert = lyapunov::LyapunovCertificate::quadratic(DMatrix::identity(4, 4), 0.9, 1.5)
        .unwrap();
    let rt = RateTarget::new(0.9, 1.5, 0.99).unwrap();
    let ch = rayleigh(0.5, 0.05, SuccessFunction::qpsk_awgn(32).unwrap(), 10.0);
    // Constant power with a channel threshold: eta is the alphabet sum.
    let (hbar, p) = (1.0, 2.0);
    let eta = ch.eta_constant(hbar, p).unwrap();
    let policy = ThresholdPolicy::new(1, hbar, PowerRule::Constant { power: p }, &ch).unwrap();
    let mut cfg = SimConfig::new(4000, 250, 31, InitialState::Vector(vec![0.01, 0.0, 0.01, 0.0]));
    cfg.record_v_every = 1000;
    cfg.allow_unstable = true;
    let res = simulator::simulate(&sys, &cert, &ch, &policy, &rt, &cfg).unwrap();
    let freq = res.success_count as f64 / res.attempt_count as f64;
    let tol = 4.0 / (res.attempt_count as f64).sqrt();
    assert!((freq - eta).abs() <= tol, "{freq} vs {eta} (tol {tol})");
}

#[test]
fn sensing_power_shifts_optimal_wait_upward() {
    // With expensive channel measurements, waiting longer between
    // deliveries amortizes the sensing charge over more steps.
    let rt = RateTarget::new(0.98, 1.0009, 0.999).unwrap();
    let base = ChannelModel::quantized_rayleigh(
        0.5,
        Grid { min: 0.0, step: 0.05, max: 5.0 },
        SuccessFunction::qpsk_awgn(32).unwrap(),
        0.0,
        10.0,
    )
    .unwrap();
    let mut best_n = Vec::new();
    for sensing in [0.0, 0.2, 0.5] {
        let ch = base.with_sensing_power(sensing).unwrap();
        let out = optimizer::solve_unsaturated_inversion(&ch, &rt, None).unwrap().unwrap();
        best_n.push(out.policy.wait_threshold);
    }
    assert!(best_n[0] <= best_n[1] && best_n[1] <= best_n[2], "{best_n:?}");
    assert!(best_n[2] > best_n[0], "{best_n:?}");
}

#[test]
fn feasibility_window_matches_direct_computation() {
    let ch = rayleigh(0.5, 0.25, SuccessFunction::qpsk_awgn(32).unwrap(), 10.0);
    let rt = RateTarget::new(0.98, 1.0009, 0.999).unwrap();
    let w = stability::feasibility_window(&ch, &rt, 1.0).unwrap();
    assert_eq!(w.horizon, stability::max_horizon(&rt));
    for row in &w.rows {
        assert_eq!(row.eta_star, stability::required_eta(row.n, &rt));
        assert_eq!(row.p_lower, stability::min_power(&ch, &rt, row.n, 1.0).unwrap());
    }
}
