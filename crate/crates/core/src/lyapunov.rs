//! Lyapunov decay certificates for the networked loop.
//!
//! A certificate is a function `V ≥ 0` with two rates: `V(f_S(χ)) ≤ a_S V(χ)`
//! on delivery steps and `V(f_U(χ)) ≤ a_U V(χ)` on loss steps, with
//! `a_S ∈ [0, 1)` and `a_U > a_S`. For linear loops both inequalities are
//! the matrix conditions `A'ᵀ P A' ⪯ a P`, checked here by eigenvalues.
//! For nonlinear loops the module offers constructive compositions from a
//! growth certificate on the un-networked loop, and a sampling falsifier:
//! it can refute a claimed rate pair but never proves one.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dynamics::{ClosedLoopSystem, LinearForm};
use crate::error::{Error, Result};
use crate::rng;

type VFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// How the certificate evaluates `V`.
#[derive(Clone)]
pub enum CertificateForm {
    /// `V(χ) = χᵀ P χ` with `P` symmetric positive definite.
    Quadratic { p: DMatrix<f64> },
    /// An arbitrary nonnegative function with `V(0) = 0`.
    Opaque { v: Arc<VFn> },
}

/// Decay certificate `(V, a_S, a_U)`.
#[derive(Clone)]
pub struct LyapunovCertificate {
    a_s: f64,
    a_u: f64,
    form: CertificateForm,
}

impl LyapunovCertificate {
    /// Quadratic certificate; `p` must be symmetric positive definite.
    pub fn quadratic(p: DMatrix<f64>, a_s: f64, a_u: f64) -> Result<Self> {
        check_rates(a_s, a_u)?;
        check_symmetric(&p, "certificate matrix")?;
        let min_eig = p
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |m, &e| m.min(e));
        if min_eig <= 0.0 {
            return Err(Error::invalid(format!(
                "certificate matrix must be positive definite (min eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(LyapunovCertificate { a_s, a_u, form: CertificateForm::Quadratic { p } })
    }

    /// Certificate wrapping an opaque `V`.
    pub fn opaque(
        v: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        a_s: f64,
        a_u: f64,
    ) -> Result<Self> {
        check_rates(a_s, a_u)?;
        Ok(LyapunovCertificate { a_s, a_u, form: CertificateForm::Opaque { v: Arc::new(v) } })
    }

    pub fn success_rate(&self) -> f64 {
        self.a_s
    }

    pub fn failure_rate(&self) -> f64 {
        self.a_u
    }

    pub fn form(&self) -> &CertificateForm {
        &self.form
    }

    /// Evaluate `V(χ)`.
    pub fn v(&self, chi: &[f64]) -> f64 {
        match &self.form {
            CertificateForm::Quadratic { p } => quadratic_form(p, chi),
            CertificateForm::Opaque { v } => v(chi),
        }
    }
}

fn check_rates(a_s: f64, a_u: f64) -> Result<()> {
    if !(0.0..1.0).contains(&a_s) {
        return Err(Error::invalid(format!("success rate must lie in [0,1), got {a_s}")));
    }
    if a_u <= a_s {
        return Err(Error::invalid(format!(
            "failure rate must exceed success rate ({a_u} <= {a_s})"
        )));
    }
    Ok(())
}

fn check_symmetric(p: &DMatrix<f64>, what: &str) -> Result<()> {
    if p.nrows() != p.ncols() {
        return Err(Error::invalid(format!("{what} must be square")));
    }
    let scale = p.amax().max(1.0);
    for i in 0..p.nrows() {
        for j in (i + 1)..p.ncols() {
            if (p[(i, j)] - p[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::invalid(format!("{what} must be symmetric")));
            }
        }
    }
    Ok(())
}

#[inline]
pub(crate) fn quadratic_form(p: &DMatrix<f64>, chi: &[f64]) -> f64 {
    let n = chi.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += p[(i, j)] * chi[j];
        }
        acc += chi[i] * row;
    }
    acc
}

/// Outcome of the linear matrix-inequality check.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CertificationReport {
    /// Minimum eigenvalue of `a_S P - A_SᵀP A_S` (≥ -tol means pass).
    pub success_margin: f64,
    /// Minimum eigenvalue of `a_U P - A_UᵀP A_U`.
    pub failure_margin: f64,
    /// Eigenvalue slack used for both checks.
    pub tolerance: f64,
    pub success_pass: bool,
    pub failure_pass: bool,
}

impl CertificationReport {
    pub fn pass(&self) -> bool {
        self.success_pass && self.failure_pass
    }
}

/// Check `A_SᵀP A_S ⪯ a_S P` and `A_UᵀP A_U ⪯ a_U P` by eigenvalues,
/// with slack `10⁻⁹ (1 + ‖P‖)` absorbing floating-point error.
pub fn certify_linear(
    a_s_mat: &DMatrix<f64>,
    a_u_mat: &DMatrix<f64>,
    p: &DMatrix<f64>,
    a_s: f64,
    a_u: f64,
) -> Result<CertificationReport> {
    check_symmetric(p, "certificate matrix")?;
    check_rates(a_s, a_u)?;
    let n = p.nrows();
    if a_s_mat.nrows() != n || a_s_mat.ncols() != n || a_u_mat.nrows() != n || a_u_mat.ncols() != n {
        return Err(Error::Dimension {
            context: "certificate matrices",
            expected: n,
            actual: a_s_mat.nrows(),
        });
    }
    let p_norm = p
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |m, e| m.max(e.abs()));
    let tolerance = 1e-9 * (1.0 + p_norm);
    let margin = |a: &DMatrix<f64>, rate: f64| -> f64 {
        let m = rate * p - a.transpose() * p * a;
        // Symmetrize against round-off before the eigen solve.
        let m = (&m + m.transpose()) * 0.5;
        m.symmetric_eigenvalues().iter().fold(f64::INFINITY, |acc, &e| acc.min(e))
    };
    let success_margin = margin(a_s_mat, a_s);
    let failure_margin = margin(a_u_mat, a_u);
    Ok(CertificationReport {
        success_margin,
        failure_margin,
        tolerance,
        success_pass: success_margin >= -tolerance,
        failure_pass: failure_margin >= -tolerance,
    })
}

/// Solve `AᵀP A - a₀ P = -I` by the fixed-point iteration
/// `Q ← A'ᵀQ A' + I` with `A' = A/√a₀`, then `P = Q/a₀`.
/// Requires the spectral radius of `A` to be below `√a₀`.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, a0: f64) -> Result<DMatrix<f64>> {
    if !(0.0 < a0 && a0 < 1.0) {
        return Err(Error::invalid(format!("decay target must lie in (0,1), got {a0}")));
    }
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid("matrix must be square"));
    }
    let rho = a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0f64, f64::max);
    if rho >= a0.sqrt() {
        return Err(Error::infeasible(format!(
            "spectral radius {rho:.6} is not below sqrt(a0) = {:.6}",
            a0.sqrt()
        )));
    }
    let a_scaled = a / a0.sqrt();
    let at = a_scaled.transpose();
    let mut q = DMatrix::identity(n, n);
    let mut last_delta = f64::INFINITY;
    for _ in 0..5_000_000usize {
        let next = &at * &q * &a_scaled + DMatrix::identity(n, n);
        let delta = (&next - &q).amax();
        q = next;
        // Absolute target from the construction, relaxed by the iterate's
        // own magnitude once f64 resolution becomes the binding limit.
        if delta <= 1e-12 * q.amax().max(1.0) {
            return Ok(q / a0);
        }
        // Rounding plateau: the update stopped shrinking.
        if delta >= last_delta && delta <= 1e-9 * q.amax().max(1.0) {
            return Ok(q / a0);
        }
        last_delta = delta;
    }
    Err(Error::infeasible("discrete Lyapunov iteration did not converge"))
}

/// Build a quadratic certificate for a linear closed loop whose nominal
/// (plant + controller) block decays at rate `a0` per step.
///
/// `P = diag(P₀, ε I)` with `P₀` from [`solve_discrete_lyapunov`] on the
/// nominal block; `ε` starts at 1 and halves until
/// `a_S = a₀ + ε ‖C_g C_p‖² / λ_min(P₀) ≤ (1 + a₀)/2`, and
/// `a_U = ‖A_UᵀP A_U‖ / λ_min(P)`.
pub fn construct_linear_certificate(lin: &LinearForm, a0: f64) -> Result<LyapunovCertificate> {
    let a_nominal = lin.nominal_block();
    let p0 = solve_discrete_lyapunov(&a_nominal, a0)?;
    let lam_min_p0 = p0
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |m, &e| m.min(e));
    let coupling = lin.hold_coupling();
    let coupling_norm = spectral_norm(&coupling);

    let mut eps = 1.0;
    let mut a_s = a0 + eps * coupling_norm * coupling_norm / lam_min_p0;
    while a_s > (1.0 + a0) / 2.0 {
        eps *= 0.5;
        a_s = a0 + eps * coupling_norm * coupling_norm / lam_min_p0;
        if eps < 1e-300 {
            return Err(Error::infeasible("hold coupling too strong for any epsilon"));
        }
    }

    let k = lin.nominal_dim();
    let sy = lin.output_dim;
    let n = k + sy;
    let mut p = DMatrix::zeros(n, n);
    p.view_mut((0, 0), (k, k)).copy_from(&p0);
    for i in 0..sy {
        p[(k + i, k + i)] = eps;
    }

    let lam_min_p = lam_min_p0.min(eps);
    let m = lin.a_failure.transpose() * &p * &lin.a_failure;
    let m = (&m + m.transpose()) * 0.5;
    let m_norm = m
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, e| acc.max(e.abs()));
    let a_u = (m_norm / lam_min_p).max(a_s * (1.0 + 1e-9) + 1e-12);

    LyapunovCertificate::quadratic(p, a_s, a_u)
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().fold(0.0f64, |a, &s| a.max(s))
}

/// Growth certificate for the un-networked loop, used by the compositions:
/// `W(success step) ≤ a_w1 W`, `W(failure step) ≤ a_w0 W + b0 |ŷ|²`,
/// and `lower_quadratic |x|² ≤ W(x) ≤ upper_quadratic |x|²`.
pub struct GrowthCertificateW {
    w: Arc<VFn>,
    pub a_w1: f64,
    pub a_w0: f64,
    pub b0: f64,
    pub lower_quadratic: f64,
    pub upper_quadratic: f64,
}

impl GrowthCertificateW {
    pub fn new(
        w: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        a_w1: f64,
        a_w0: f64,
        b0: f64,
        lower_quadratic: f64,
        upper_quadratic: f64,
    ) -> Result<Self> {
        if !(0.0 < a_w1 && a_w1 < 1.0) {
            return Err(Error::invalid("a_w1 must lie in (0,1)"));
        }
        if a_w0 < 0.0 || b0 < 0.0 {
            return Err(Error::invalid("growth coefficients must be nonnegative"));
        }
        if !(lower_quadratic > 0.0) || lower_quadratic > upper_quadratic {
            return Err(Error::invalid("quadratic bounds must satisfy 0 < lower <= upper"));
        }
        Ok(GrowthCertificateW { w: Arc::new(w), a_w1, a_w0, b0, lower_quadratic, upper_quadratic })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.w)(x)
    }
}

/// Certificate for zeroing holds: `V(χ) = W(x_p, x_c) + |ŷ|`,
/// `a_S = a_w1`, `a_U = a_w0`.
pub fn compose_zeroing(w: &GrowthCertificateW, nominal_dim: usize) -> Result<LyapunovCertificate> {
    if w.a_w0 <= w.a_w1 {
        return Err(Error::invalid("zeroing composition needs a_w0 > a_w1"));
    }
    let inner = w.w.clone();
    let v = move |chi: &[f64]| {
        let (x, yhat) = chi.split_at(nominal_dim);
        inner(x) + norm2(yhat)
    };
    LyapunovCertificate::opaque(v, w.a_w1, w.a_w0)
}

/// Certificate for zero-order holds: `V(χ) = W(x_p, x_c) + ν |ŷ|²` with
/// `ν ∈ (0, (1 - a_w1) lower_quadratic / c²)`, `c` a Lipschitz constant of
/// the output map. Then `a_S = a_w1 + ν c² / lower_quadratic < 1` and
/// `a_U = max(a_w0, b0/ν + 1)`.
pub fn compose_zoh(
    w: &GrowthCertificateW,
    nominal_dim: usize,
    output_lipschitz: f64,
    nu: f64,
) -> Result<LyapunovCertificate> {
    if output_lipschitz <= 0.0 {
        return Err(Error::invalid("output Lipschitz constant must be positive"));
    }
    let limit = (1.0 - w.a_w1) * w.lower_quadratic / (output_lipschitz * output_lipschitz);
    if !(nu > 0.0 && nu < limit) {
        return Err(Error::invalid(format!(
            "nu must lie in the open interval (0, {limit:.6e}), got {nu}"
        )));
    }
    let a_s = w.a_w1 + nu * output_lipschitz * output_lipschitz / w.lower_quadratic;
    debug_assert!(a_s < 1.0);
    let a_u = w.a_w0.max(w.b0 / nu + 1.0);
    let inner = w.w.clone();
    let v = move |chi: &[f64]| {
        let (x, yhat) = chi.split_at(nominal_dim);
        let ny = norm2(yhat);
        inner(x) + nu * ny * ny
    };
    LyapunovCertificate::opaque(v, a_s, a_u)
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Uniform box sampler specification for the falsifier.
#[derive(Clone, Debug)]
pub struct BoxSampler {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub count: usize,
    pub seed: u64,
    /// States with `V(χ) ≤ tol_v` are skipped (ratio undefined there).
    pub tol_v: f64,
}

impl BoxSampler {
    pub fn unit_box(dim: usize, count: usize, seed: u64) -> Self {
        BoxSampler {
            lower: vec![-1.0; dim],
            upper: vec![1.0; dim],
            count,
            seed,
            tol_v: 1e-12,
        }
    }
}

/// Result of sampling the decay ratios of a certificate along the two maps.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SamplingReport {
    pub max_ratio_success: f64,
    pub max_ratio_failure: f64,
    pub worst_success_state: Vec<f64>,
    pub worst_failure_state: Vec<f64>,
    pub skipped: usize,
    pub evaluated: usize,
}

impl SamplingReport {
    /// True when some sampled state exceeds the claimed success rate.
    pub fn falsifies_success(&self, cert: &LyapunovCertificate) -> bool {
        self.max_ratio_success > cert.success_rate()
    }

    /// True when some sampled state exceeds the claimed failure rate.
    pub fn falsifies_failure(&self, cert: &LyapunovCertificate) -> bool {
        self.max_ratio_failure > cert.failure_rate()
    }

    pub fn falsifies(&self, cert: &LyapunovCertificate) -> bool {
        self.falsifies_success(cert) || self.falsifies_failure(cert)
    }
}

/// Empirically bound `max V(f(χ))/V(χ)` over uniform box samples for both
/// step maps. A reported maximum above a claimed rate falsifies that rate
/// on the witnessing state; staying below proves nothing.
///
/// Each sample index owns its own substream, so results are independent of
/// chunking and thread count.
pub fn estimate_rates_sampling(
    sys: &ClosedLoopSystem,
    cert: &LyapunovCertificate,
    sampler: &BoxSampler,
) -> Result<SamplingReport> {
    let dim = sys.chi_dim();
    if sampler.lower.len() != dim || sampler.upper.len() != dim {
        return Err(Error::Dimension {
            context: "sampler box",
            expected: dim,
            actual: sampler.lower.len(),
        });
    }
    if sampler.count == 0 {
        return Err(Error::invalid("sampler count must be at least 1"));
    }

    struct Acc {
        rs: f64,
        ru: f64,
        ws_state: Vec<f64>,
        wu_state: Vec<f64>,
        skipped: usize,
        evaluated: usize,
    }
    let zero = || Acc {
        rs: f64::NEG_INFINITY,
        ru: f64::NEG_INFINITY,
        ws_state: Vec::new(),
        wu_state: Vec::new(),
        skipped: 0,
        evaluated: 0,
    };
    let merge = |mut a: Acc, b: Acc| {
        if b.rs > a.rs {
            a.rs = b.rs;
            a.ws_state = b.ws_state;
        }
        if b.ru > a.ru {
            a.ru = b.ru;
            a.wu_state = b.wu_state;
        }
        a.skipped += b.skipped;
        a.evaluated += b.evaluated;
        a
    };

    const CHUNK: usize = 4096;
    let chunks: Vec<usize> = (0..sampler.count.div_ceil(CHUNK)).collect();
    let acc = chunks
        .par_iter()
        .map(|&c| {
            let mut acc = zero();
            let mut ws = sys.scratch();
            let mut chi = vec![0.0; dim];
            let mut next = vec![0.0; dim];
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(sampler.count);
            for i in lo..hi {
                let mut r = rng::stream(sampler.seed, i as u64);
                for d in 0..dim {
                    chi[d] = sampler.lower[d] + (sampler.upper[d] - sampler.lower[d]) * r.next_f64();
                }
                let v = cert.v(&chi);
                if v <= sampler.tol_v {
                    acc.skipped += 1;
                    continue;
                }
                acc.evaluated += 1;
                sys.step_success_into(&chi, &mut next, &mut ws);
                let rs = cert.v(&next) / v;
                if rs > acc.rs {
                    acc.rs = rs;
                    acc.ws_state = chi.clone();
                }
                sys.step_failure_into(&chi, &mut next, &mut ws);
                let ru = cert.v(&next) / v;
                if ru > acc.ru {
                    acc.ru = ru;
                    acc.wu_state = chi.clone();
                }
            }
            acc
        })
        .reduce(zero, merge);

    if acc.evaluated == 0 {
        return Err(Error::Degenerate("every sampled state had V below tolerance".into()));
    }
    Ok(SamplingReport {
        max_ratio_success: acc.rs,
        max_ratio_failure: acc.ru,
        worst_success_state: acc.ws_state,
        worst_failure_state: acc.wu_state,
        skipped: acc.skipped,
        evaluated: acc.evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics;

    #[test]
    fn scalar_discrete_lyapunov_solution() {
        // A = 0.5, a0 = 0.3: 0.25 P - 0.3 P = -1 so P = 20.
        let a = DMatrix::from_row_slice(1, 1, &[0.5]);
        let p = solve_discrete_lyapunov(&a, 0.3).unwrap();
        assert!((p[(0, 0)] - 20.0).abs() < 1e-9, "{}", p[(0, 0)]);
    }

    #[test]
    fn lyapunov_solver_rejects_fast_matrices() {
        let a = DMatrix::from_row_slice(1, 1, &[1.1]);
        assert!(matches!(solve_discrete_lyapunov(&a, 0.9), Err(Error::Infeasible(_))));
        // Schur but not below sqrt(a0).
        let a = DMatrix::from_row_slice(1, 1, &[0.9]);
        assert!(solve_discrete_lyapunov(&a, 0.5).is_err());
    }

    #[test]
    fn certify_zero_map_passes_any_spd() {
        let z = DMatrix::zeros(2, 2);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let rep = certify_linear(&z, &z, &p, 0.5, 0.9).unwrap();
        assert!(rep.pass(), "{rep:?}");
    }

    #[test]
    fn scalar_certify_boundary() {
        // A_S = 0.9, P = 1: passes iff a_S >= 0.81.
        let a = DMatrix::from_row_slice(1, 1, &[0.9]);
        let p = DMatrix::identity(1, 1);
        let ok = certify_linear(&a, &a, &p, 0.8101, 1.5).unwrap();
        assert!(ok.success_pass);
        let bad = certify_linear(&a, &a, &p, 0.8099, 1.5).unwrap();
        assert!(!bad.success_pass);
    }

    #[test]
    fn certify_rejects_asymmetric_p() {
        let a = DMatrix::identity(2, 2);
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(certify_linear(&a, &a, &p, 0.5, 1.0).is_err());
    }

    #[test]
    fn constructed_certificate_passes_its_own_check() {
        let sys = dynamics::robot_arm_linearized();
        let lin = sys.linear_form().unwrap();
        let cert = construct_linear_certificate(lin, 0.995).unwrap();
        assert!(cert.success_rate() < 1.0);
        let CertificateForm::Quadratic { p } = cert.form() else {
            panic!("constructed certificate must be quadratic")
        };
        let rep = certify_linear(
            &lin.a_success,
            &lin.a_failure,
            p,
            cert.success_rate(),
            cert.failure_rate(),
        )
        .unwrap();
        assert!(rep.pass(), "{rep:?}");
    }

    #[test]
    fn construction_requires_nominal_decay() {
        // Nominal block with spectral radius 1.1 is rejected outright.
        let a_p = DMatrix::from_row_slice(1, 1, &[1.1]);
        let b_p = DMatrix::from_row_slice(1, 1, &[0.0]);
        let c_p = DMatrix::from_row_slice(1, 1, &[1.0]);
        let sys = dynamics::linear_system(
            a_p,
            b_p,
            c_p,
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(1, 0),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let lin = sys.linear_form().unwrap();
        assert!(matches!(construct_linear_certificate(lin, 0.9), Err(Error::Infeasible(_))));
    }

    #[test]
    fn quadratic_certificate_validates_input() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(LyapunovCertificate::quadratic(p, 0.5, 1.0).is_err());
        let p = DMatrix::identity(2, 2);
        assert!(LyapunovCertificate::quadratic(p.clone(), 0.5, 0.4).is_err());
        let cert = LyapunovCertificate::quadratic(p, 0.5, 1.1).unwrap();
        assert_eq!(cert.v(&[0.0, 0.0]), 0.0);
        assert_eq!(cert.v(&[3.0, 4.0]), 25.0);
    }

    #[test]
    fn zeroing_composition_rates() {
        let w = GrowthCertificateW::new(|x| x[0] * x[0], 0.9, 1.2, 0.0, 1.0, 1.0).unwrap();
        let cert = compose_zeroing(&w, 1).unwrap();
        assert_eq!(cert.success_rate(), 0.9);
        assert_eq!(cert.failure_rate(), 1.2);
        // With yhat = 0 the certificate reduces to W.
        assert_eq!(cert.v(&[2.0, 0.0]), 4.0);
        // Rate ordering enforced.
        let w2 = GrowthCertificateW::new(|x| x[0] * x[0], 0.9, 0.8, 0.0, 1.0, 1.0).unwrap();
        assert!(compose_zeroing(&w2, 1).is_err());
    }

    #[test]
    fn zeroing_composition_decays_on_a_real_system() {
        // x⁺ = 0.5x + u, y = x, u = -0.3y: success contraction 0.2,
        // failure (zeroing hold keeps ŷ = 0) contraction 0.5.
        let plant = dynamics::PlantModel::new(
            1,
            1,
            1,
            |x, u, out| out[0] = 0.5 * x[0] + u[0],
            |x, out| out[0] = x[0],
        )
        .unwrap();
        let ctrl =
            dynamics::ControllerModel::static_feedback(1, 1, |y, out| out[0] = -0.3 * y[0]).unwrap();
        let sys =
            dynamics::ClosedLoopSystem::new(plant, ctrl, dynamics::HoldStrategy::Zeroing).unwrap();
        let w = GrowthCertificateW::new(|x| x[0] * x[0], 0.04, 0.25, 0.0, 1.0, 1.0).unwrap();
        let cert = compose_zeroing(&w, 1).unwrap();
        let mut r = rng::stream(5, 0);
        for _ in 0..500 {
            // Sample on the zeroing-invariant set ŷ = 0, plus arbitrary ŷ for f_S.
            let x = 4.0 * r.next_f64() - 2.0;
            let yh = 4.0 * r.next_f64() - 2.0;
            let chi = [x, yh];
            let v = cert.v(&chi);
            if v < 1e-9 {
                continue;
            }
            let s = sys.step_success(&chi).unwrap();
            assert!(cert.v(&s) <= cert.success_rate() * v + 1e-12);
            let chi0 = [x, 0.0];
            let v0 = cert.v(&chi0);
            if v0 > 1e-9 {
                let f = sys.step_failure(&chi0).unwrap();
                assert!(cert.v(&f) <= cert.failure_rate() * v0 + 1e-12);
            }
        }
    }

    #[test]
    fn zoh_composition_formulas() {
        let w = GrowthCertificateW::new(|x| x[0] * x[0], 0.8, 1.0, 0.0, 1.0, 1.0).unwrap();
        // a_S = 0.8 + 0.1 * 1 / 1 = 0.9; b0 = 0 so a_U = max(1.0, 1.0) = 1.0.
        let cert = compose_zoh(&w, 1, 1.0, 0.1).unwrap();
        assert!((cert.success_rate() - 0.9).abs() < 1e-15);
        assert_eq!(cert.failure_rate(), 1.0);
        // The interval is open at (1 - a_w1) * lower / c².
        assert!(compose_zoh(&w, 1, 1.0, 0.2).is_err());
        assert!(compose_zoh(&w, 1, 1.0, 0.0).is_err());
    }

    #[test]
    fn sampling_falsifies_identity_failure_map() {
        // Plant x⁺ = x under zero feedback: V is conserved by f_U, so a
        // claimed failure rate of 0.5 is refuted with ratio about 1.
        let plant = dynamics::PlantModel::new(
            1,
            1,
            1,
            |x, u, out| out[0] = x[0] + u[0],
            |x, out| out[0] = x[0],
        )
        .unwrap();
        let ctrl = dynamics::ControllerModel::static_feedback(1, 1, |_, out| out[0] = 0.0).unwrap();
        let sys =
            dynamics::ClosedLoopSystem::new(plant, ctrl, dynamics::HoldStrategy::ZeroOrderHold)
                .unwrap();
        let cert = LyapunovCertificate::quadratic(DMatrix::identity(2, 2), 0.4, 0.5).unwrap();
        let report =
            estimate_rates_sampling(&sys, &cert, &BoxSampler::unit_box(2, 2000, 9)).unwrap();
        assert!(report.falsifies_failure(&cert), "{report:?}");
        assert!(report.max_ratio_failure >= 1.0 - 1e-12);
    }

    #[test]
    fn sampling_respects_certified_linear_rates() {
        let sys = dynamics::robot_arm_linearized();
        let lin = sys.linear_form().unwrap();
        let cert = construct_linear_certificate(lin, 0.995).unwrap();
        let report =
            estimate_rates_sampling(&sys, &cert, &BoxSampler::unit_box(4, 20_000, 1)).unwrap();
        assert!(
            !report.falsifies(&cert),
            "certified rates falsified: {} vs {}, {} vs {}",
            report.max_ratio_success,
            cert.success_rate(),
            report.max_ratio_failure,
            cert.failure_rate()
        );
    }

    #[test]
    fn sampling_determinism_independent_of_chunking() {
        let sys = dynamics::robot_arm();
        let p = DMatrix::identity(4, 4);
        let cert = LyapunovCertificate::quadratic(p, 0.99, 1.5).unwrap();
        let a = estimate_rates_sampling(&sys, &cert, &BoxSampler::unit_box(4, 10_000, 3)).unwrap();
        let b = estimate_rates_sampling(&sys, &cert, &BoxSampler::unit_box(4, 10_000, 3)).unwrap();
        assert_eq!(a.max_ratio_success.to_bits(), b.max_ratio_success.to_bits());
        assert_eq!(a.max_ratio_failure.to_bits(), b.max_ratio_failure.to_bits());
    }

    #[test]
    fn sampling_all_skipped_is_degenerate() {
        let sys = dynamics::robot_arm();
        let cert = LyapunovCertificate::opaque(|_| 0.0, 0.5, 1.0).unwrap();
        let r = estimate_rates_sampling(&sys, &cert, &BoxSampler::unit_box(4, 100, 1));
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }
}
