//! Closed-loop dynamics of the emulated networked system.
//!
//! The loop state is the concatenation `χ = (x_p, x_c, ŷ)` of plant state,
//! controller state and the networked copy of the measurement held at the
//! controller. Two one-step maps describe the loop:
//!
//! ```text
//! f_S(χ) = (f_p(x_p, g_c(x_c, y)), f_c(x_c, y), hold(y))   with y = g_p(x_p)
//! f_U(χ) = (f_p(x_p, g_c(x_c, ŷ)), f_c(x_c, ŷ), hold(ŷ))
//! ```
//!
//! `f_S` applies when the measurement was delivered this step, `f_U` when
//! it was not. Systems are immutable after construction; the step maps are
//! pure, so a system can be shared freely across threads.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

type StepFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
type OutputFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Discrete-time plant `x_p(t+1) = f_p(x_p, u)`, `y = g_p(x_p)`.
pub struct PlantModel {
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    step: Arc<StepFn>,
    output: Arc<OutputFn>,
}

impl PlantModel {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        step: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        output: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if state_dim == 0 || input_dim == 0 || output_dim == 0 {
            return Err(Error::invalid("plant dimensions must be positive"));
        }
        Ok(PlantModel {
            state_dim,
            input_dim,
            output_dim,
            step: Arc::new(step),
            output: Arc::new(output),
        })
    }

    /// Linear plant `x⁺ = A x + B u`, `y = C x`.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::invalid("plant A must be square"));
        }
        if b.nrows() != n {
            return Err(Error::Dimension { context: "plant B rows", expected: n, actual: b.nrows() });
        }
        if c.ncols() != n {
            return Err(Error::Dimension { context: "plant C cols", expected: n, actual: c.ncols() });
        }
        let m = b.ncols();
        let p = c.nrows();
        let (a2, b2, c2) = (a.clone(), b.clone(), c.clone());
        PlantModel::new(
            n,
            m,
            p,
            move |x, u, out| mat_vec2(&a2, x, &b2, u, out),
            move |x, out| mat_vec(&c2, x, out),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Evaluate the measurement map `y = g_p(x_p)`.
    pub fn output_into(&self, x: &[f64], out: &mut [f64]) {
        (self.output)(x, out)
    }
}

/// Output-feedback controller `x_c(t+1) = f_c(x_c, y)`, `u = g_c(x_c, y)`.
/// Static controllers have `state_dim == 0` and ignore `x_c`.
pub struct ControllerModel {
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    step: Arc<StepFn>,
    output: Arc<StepFn>,
}

impl ControllerModel {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        output_dim: usize,
        step: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        output: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::invalid("controller i/o dimensions must be positive"));
        }
        Ok(ControllerModel {
            state_dim,
            input_dim,
            output_dim,
            step: Arc::new(step),
            output: Arc::new(output),
        })
    }

    /// Static output feedback `u = f(y)`.
    pub fn static_feedback(
        input_dim: usize,
        output_dim: usize,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        ControllerModel::new(0, input_dim, output_dim, |_, _, _| {}, move |_, y, out| f(y, out))
    }

    /// Linear controller `x_c⁺ = A_c x_c + B_c y`, `u = C_c x_c + D_c y`.
    /// Zero-row/column `A_c, B_c, C_c` encode a static controller.
    pub fn linear(
        ac: DMatrix<f64>,
        bc: DMatrix<f64>,
        cc: DMatrix<f64>,
        dc: DMatrix<f64>,
    ) -> Result<Self> {
        let sc = ac.nrows();
        let sy = dc.ncols();
        let su = dc.nrows();
        if ac.ncols() != sc || bc.nrows() != sc || cc.ncols() != sc {
            return Err(Error::invalid("controller state blocks not conformable"));
        }
        if (sc > 0 && bc.ncols() != sy) || cc.nrows() != su {
            return Err(Error::invalid("controller i/o blocks not conformable"));
        }
        let (ac2, bc2) = (ac.clone(), bc.clone());
        let (cc2, dc2) = (cc.clone(), dc.clone());
        ControllerModel::new(
            sc,
            sy,
            su,
            move |xc, y, out| mat_vec2(&ac2, xc, &bc2, y, out),
            move |xc, y, out| mat_vec2(&cc2, xc, &dc2, y, out),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
}

/// Rule generating the next held measurement from the current one.
#[derive(Clone)]
pub enum HoldStrategy {
    /// Keep the last value: `ŷ⁺ = ŷ`.
    ZeroOrderHold,
    /// Reset to zero every step.
    Zeroing,
    /// Linear extrapolation `ŷ⁺ = C_g ŷ`.
    LinearHold(DMatrix<f64>),
}

impl HoldStrategy {
    fn apply(&self, yhat: &[f64], out: &mut [f64]) {
        match self {
            HoldStrategy::ZeroOrderHold => out.copy_from_slice(yhat),
            HoldStrategy::Zeroing => out.fill(0.0),
            HoldStrategy::LinearHold(cg) => mat_vec(cg, yhat, out),
        }
    }
}

/// Matrices of a linear closed loop, kept for certificate work.
///
/// `a_success`/`a_failure` act on the full `(x_p, x_c, ŷ)` state.
#[derive(Clone, Debug)]
pub struct LinearForm {
    pub a_success: DMatrix<f64>,
    pub a_failure: DMatrix<f64>,
    pub plant_dim: usize,
    pub controller_dim: usize,
    pub output_dim: usize,
}

impl LinearForm {
    /// Dimension of the nominal (plant + controller) block.
    pub fn nominal_dim(&self) -> usize {
        self.plant_dim + self.controller_dim
    }

    /// Upper-left block of the success matrix: the loop as if never networked.
    pub fn nominal_block(&self) -> DMatrix<f64> {
        let k = self.nominal_dim();
        self.a_success.view((0, 0), (k, k)).into()
    }

    /// Lower-left block of the success matrix (`C_g C_p`), the map from
    /// plant state to the freshly held measurement.
    pub fn hold_coupling(&self) -> DMatrix<f64> {
        let k = self.nominal_dim();
        self.a_success.view((k, 0), (self.output_dim, self.plant_dim)).into()
    }
}

/// The emulated loop with its two one-step maps.
pub struct ClosedLoopSystem {
    plant: PlantModel,
    controller: ControllerModel,
    hold: HoldStrategy,
    linear: Option<LinearForm>,
}

/// Reusable buffers so the step maps allocate nothing in hot loops.
pub struct StepScratch {
    y: Vec<f64>,
    u: Vec<f64>,
    xc: Vec<f64>,
}

impl ClosedLoopSystem {
    pub fn new(plant: PlantModel, controller: ControllerModel, hold: HoldStrategy) -> Result<Self> {
        if controller.input_dim != plant.output_dim {
            return Err(Error::Dimension {
                context: "controller input vs plant output",
                expected: plant.output_dim,
                actual: controller.input_dim,
            });
        }
        if controller.output_dim != plant.input_dim {
            return Err(Error::Dimension {
                context: "controller output vs plant input",
                expected: plant.input_dim,
                actual: controller.output_dim,
            });
        }
        if let HoldStrategy::LinearHold(cg) = &hold {
            if cg.nrows() != plant.output_dim || cg.ncols() != plant.output_dim {
                return Err(Error::invalid("hold matrix must be output_dim x output_dim"));
            }
        }
        Ok(ClosedLoopSystem { plant, controller, hold, linear: None })
    }

    /// Total loop dimension `s_p + s_c + s_y`.
    pub fn chi_dim(&self) -> usize {
        self.plant.state_dim + self.controller.state_dim + self.plant.output_dim
    }

    pub fn plant(&self) -> &PlantModel {
        &self.plant
    }

    pub fn controller(&self) -> &ControllerModel {
        &self.controller
    }

    /// Closed-loop matrices when the system was built by [`linear_system`].
    pub fn linear_form(&self) -> Option<&LinearForm> {
        self.linear.as_ref()
    }

    pub fn scratch(&self) -> StepScratch {
        StepScratch {
            y: vec![0.0; self.plant.output_dim],
            u: vec![0.0; self.plant.input_dim],
            xc: vec![0.0; self.controller.state_dim],
        }
    }

    fn split<'a>(&self, chi: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let sp = self.plant.state_dim;
        let sc = self.controller.state_dim;
        (&chi[..sp], &chi[sp..sp + sc], &chi[sp + sc..])
    }

    fn check_dim(&self, chi: &[f64]) -> Result<()> {
        if chi.len() != self.chi_dim() {
            return Err(Error::Dimension {
                context: "closed-loop state",
                expected: self.chi_dim(),
                actual: chi.len(),
            });
        }
        Ok(())
    }

    fn step_raw(&self, chi: &[f64], out: &mut [f64], ws: &mut StepScratch, delivered: bool) {
        let sp = self.plant.state_dim;
        let sc = self.controller.state_dim;
        let (xp, xc, yhat) = self.split(chi);
        // The measurement fed to the controller: fresh on delivery, held otherwise.
        let fed: &[f64] = if delivered {
            (self.plant.output)(xp, &mut ws.y);
            &ws.y
        } else {
            yhat
        };
        (self.controller.output)(xc, fed, &mut ws.u);
        (self.controller.step)(xc, fed, &mut ws.xc);
        (self.plant.step)(xp, &ws.u, &mut out[..sp]);
        out[sp..sp + sc].copy_from_slice(&ws.xc);
        self.hold.apply(fed, &mut out[sp + sc..]);
    }

    /// One step with a successful delivery (`f_S`); no allocation.
    pub fn step_success_into(&self, chi: &[f64], out: &mut [f64], ws: &mut StepScratch) {
        self.step_raw(chi, out, ws, true)
    }

    /// One step with a lost packet (`f_U`); no allocation.
    pub fn step_failure_into(&self, chi: &[f64], out: &mut [f64], ws: &mut StepScratch) {
        self.step_raw(chi, out, ws, false)
    }

    /// `f_S(χ)`.
    pub fn step_success(&self, chi: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(chi)?;
        let mut out = vec![0.0; chi.len()];
        self.step_success_into(chi, &mut out, &mut self.scratch());
        Ok(out)
    }

    /// `f_U(χ)`.
    pub fn step_failure(&self, chi: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(chi)?;
        let mut out = vec![0.0; chi.len()];
        self.step_failure_into(chi, &mut out, &mut self.scratch());
        Ok(out)
    }

    /// `F(χ, ℓ)`: one success followed by `ℓ - 1` failures.
    pub fn iterate(&self, chi: &[f64], ell: usize) -> Result<Vec<f64>> {
        if ell == 0 {
            return Err(Error::invalid("iterate requires ell >= 1"));
        }
        self.check_dim(chi)?;
        let mut ws = self.scratch();
        let mut cur = chi.to_vec();
        let mut next = vec![0.0; chi.len()];
        self.step_success_into(&cur, &mut next, &mut ws);
        std::mem::swap(&mut cur, &mut next);
        for _ in 1..ell {
            self.step_failure_into(&cur, &mut next, &mut ws);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }
}

/// Linear plant and controller closed over the network, producing a system
/// whose step maps are exactly the success/failure matrices
///
/// ```text
///        ⎡ A_p + B_p D_c C_p   B_p C_c   0 ⎤        ⎡ A_p   B_p C_c   B_p D_c ⎤
/// A_S =  ⎢ B_c C_p             A_c       0 ⎥, A_U = ⎢ 0     A_c       B_c     ⎥
///        ⎣ C_g C_p             0         0 ⎦        ⎣ 0     0         C_g     ⎦
/// ```
#[allow(clippy::too_many_arguments)]
pub fn linear_system(
    a_p: DMatrix<f64>,
    b_p: DMatrix<f64>,
    c_p: DMatrix<f64>,
    a_c: DMatrix<f64>,
    b_c: DMatrix<f64>,
    c_c: DMatrix<f64>,
    d_c: DMatrix<f64>,
    c_g: DMatrix<f64>,
) -> Result<ClosedLoopSystem> {
    let sp = a_p.nrows();
    let sy = c_p.nrows();
    let su = b_p.ncols();
    let sc = a_c.nrows();
    if d_c.nrows() != su || d_c.ncols() != sy {
        return Err(Error::invalid("D_c must be input_dim x output_dim"));
    }
    if c_g.nrows() != sy || c_g.ncols() != sy {
        return Err(Error::invalid("C_g must be output_dim x output_dim"));
    }
    if sc > 0 && (b_c.nrows() != sc || b_c.ncols() != sy || c_c.nrows() != su || c_c.ncols() != sc) {
        return Err(Error::invalid("controller blocks not conformable"));
    }

    let plant = PlantModel::linear(a_p.clone(), b_p.clone(), c_p.clone())?;
    let controller = ControllerModel::linear(a_c.clone(), b_c.clone(), c_c.clone(), d_c.clone())?;
    let hold = HoldStrategy::LinearHold(c_g.clone());
    let mut sys = ClosedLoopSystem::new(plant, controller, hold)?;

    let n = sp + sc + sy;
    let mut a_s = DMatrix::zeros(n, n);
    let mut a_u = DMatrix::zeros(n, n);
    let bpdc = &b_p * &d_c;
    a_s.view_mut((0, 0), (sp, sp)).copy_from(&(&a_p + &bpdc * &c_p));
    a_u.view_mut((0, 0), (sp, sp)).copy_from(&a_p);
    a_u.view_mut((0, sp + sc), (sp, sy)).copy_from(&bpdc);
    if sc > 0 {
        a_s.view_mut((0, sp), (sp, sc)).copy_from(&(&b_p * &c_c));
        a_s.view_mut((sp, 0), (sc, sp)).copy_from(&(&b_c * &c_p));
        a_s.view_mut((sp, sp), (sc, sc)).copy_from(&a_c);
        a_u.view_mut((0, sp), (sp, sc)).copy_from(&(&b_p * &c_c));
        a_u.view_mut((sp, sp), (sc, sc)).copy_from(&a_c);
        a_u.view_mut((sp, sp + sc), (sc, sy)).copy_from(&b_c);
    }
    a_s.view_mut((sp + sc, 0), (sy, sp)).copy_from(&(&c_g * &c_p));
    a_u.view_mut((sp + sc, sp + sc), (sy, sy)).copy_from(&c_g);

    sys.linear = Some(LinearForm {
        a_success: a_s,
        a_failure: a_u,
        plant_dim: sp,
        controller_dim: sc,
        output_dim: sy,
    });
    Ok(sys)
}

/// Single-link robot arm, Euler-discretized at 1 ms, under the stabilizing
/// static feedback `u = -sin(y₁) - 25 y₁ - 10 y₂` and a zero-order hold.
/// The measured output is the full plant state, so `χ ∈ R⁴`.
pub fn robot_arm() -> ClosedLoopSystem {
    let ts = 1e-3;
    let plant = PlantModel::new(
        2,
        1,
        2,
        move |x, u, out| {
            out[0] = x[0] + ts * x[1];
            out[1] = x[1] + ts * (x[0].sin() + u[0]);
        },
        |x, out| out.copy_from_slice(x),
    )
    .expect("robot arm plant dimensions are valid");
    let controller = ControllerModel::static_feedback(2, 1, |y, out| {
        out[0] = -y[0].sin() - 25.0 * y[0] - 10.0 * y[1];
    })
    .expect("robot arm controller dimensions are valid");
    ClosedLoopSystem::new(plant, controller, HoldStrategy::ZeroOrderHold)
        .expect("robot arm loop dimensions are valid")
}

/// Linearization of [`robot_arm`] at the origin, as a linear closed loop
/// with retrievable success/failure matrices.
pub fn robot_arm_linearized() -> ClosedLoopSystem {
    let ts = 1e-3;
    let a_p = DMatrix::from_row_slice(2, 2, &[1.0, ts, ts, 1.0]);
    let b_p = DMatrix::from_row_slice(2, 1, &[0.0, ts]);
    let c_p = DMatrix::identity(2, 2);
    let a_c = DMatrix::zeros(0, 0);
    let b_c = DMatrix::zeros(0, 2);
    let c_c = DMatrix::zeros(1, 0);
    let d_c = DMatrix::from_row_slice(1, 2, &[-26.0, -10.0]);
    let c_g = DMatrix::identity(2, 2);
    linear_system(a_p, b_p, c_p, a_c, b_c, c_c, d_c, c_g)
        .expect("robot arm linearization is conformable")
}

fn mat_vec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (i, row) in m.row_iter().enumerate() {
        out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out = m x + m2 x2`, tolerating empty blocks.
fn mat_vec2(m: &DMatrix<f64>, x: &[f64], m2: &DMatrix<f64>, x2: &[f64], out: &mut [f64]) {
    for i in 0..out.len() {
        let mut acc = 0.0;
        if m.ncols() > 0 && i < m.nrows() {
            acc += m.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        if m2.ncols() > 0 && i < m2.nrows() {
            acc += m2.row(i).iter().zip(x2).map(|(a, b)| a * b).sum::<f64>();
        }
        out[i] = acc;
    }
}
