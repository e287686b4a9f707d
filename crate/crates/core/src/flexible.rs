//! Emulation of a flexible flight spacecraft with a rigid test payload.
//!
//! The flexural coordinates of the flight vehicle are simulated alongside the
//! manipulator. Subtracting the payload equations from the partitioned flight
//! equations and eliminating `ξ̈` gives
//!
//! ```text
//! M̄_Δ ν̇ = F_sg − h̄_Δ + M_sf M_f⁻¹ h_sf,    M̄_Δ = M_Δ − M_sf M_f⁻¹ M_sfᵀ
//! ξ̈     = −M_f⁻¹ (M_sfᵀ ν̇ + h_sf)
//! ```
//!
//! with `h̄_Δ = h_sr − h_m`. Shortcut closed forms of both estimators are
//! kept as `*_shortcut` variants so the difference against direct block
//! elimination can be measured; the emulation loop uses the eliminated form.

use nalgebra::{DMatrix, DVector};

use crate::controller::{control_torque_for_accel, ControlOutput, ControllerState, DeltaInertia, EmulationGains};
use crate::error::{EmuError, Result};
use crate::manipulator::{JointVector, ManipulatorState, PayloadAttachment};
use crate::ode::rk4_step;
use crate::spacecraft::{dense6, gyric_term, FlexState, FlexibleSpacecraft, RigidSpacecraft};
use crate::spatial::{Mat6, Twist6, Wrench6};

/// Relative eigenvalue threshold for a singular `M̄_Δ`.
const FLEX_DELTA_TOL: f64 = 1e-9;

/// `M̄_Δ`, its inverse and the coupling `M_sf M_f⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexDeltaInertia {
    pub m_delta: Mat6,
    pub m_bar: Mat6,
    pub m_bar_inv: Mat6,
    pub m_f_inv: DMatrix<f64>,
    /// `M_sf M_f⁻¹`, 6 × n_ξ.
    pub coupling: DMatrix<f64>,
}

impl FlexDeltaInertia {
    /// `M̄_Δ⁻¹ x`.
    pub fn solve(&self, x: &Wrench6) -> Twist6 {
        self.m_bar_inv * x
    }
}

fn to_mat6(m: &DMatrix<f64>) -> Mat6 {
    Mat6::from_column_slice(m.as_slice())
}

fn to_wrench(v: &DVector<f64>) -> Wrench6 {
    Wrench6::from_column_slice(v.as_slice())
}

/// `M̄_Δ = M_Δ − M_sf M_f⁻¹ M_sfᵀ`, with `M_Δ = M_s − M_m`.
pub fn flexible_delta_inertia(
    flight: &FlexibleSpacecraft,
    test: &RigidSpacecraft,
) -> Result<FlexDeltaInertia> {
    let m_delta = flight.rigid.matrix() - test.inertia.matrix();
    let n = flight.n_modes();
    let m_f_inv = if n == 0 {
        DMatrix::zeros(0, 0)
    } else {
        flight
            .m_f
            .clone()
            .cholesky()
            .ok_or_else(|| EmuError::SingularMassMatrix("M_f is not positive definite".into()))?
            .inverse()
    };
    let coupling = &flight.m_sf * &m_f_inv;
    let schur = to_mat6(&(&coupling * flight.m_sf.transpose()));
    let m_bar = m_delta - schur;
    let m_bar = (m_bar + m_bar.transpose()) * 0.5;

    let eig = m_bar.symmetric_eigenvalues();
    let smallest = eig.iter().fold(f64::INFINITY, |a, b| a.min(b.abs()));
    let scale = flight.rigid.lambda_max().max(test.inertia.lambda_max());
    if !(smallest > FLEX_DELTA_TOL * scale) {
        return Err(EmuError::SingularFlexDelta(smallest));
    }
    let m_bar_inv = m_bar
        .try_inverse()
        .ok_or(EmuError::SingularFlexDelta(smallest))?;
    Ok(FlexDeltaInertia {
        m_delta,
        m_bar,
        m_bar_inv,
        m_f_inv,
        coupling,
    })
}

/// `h̄_Δ = h_sr − h_m` together with `h_sf`.
pub fn flexible_bias(
    flight: &FlexibleSpacecraft,
    test: &RigidSpacecraft,
    nu: &Twist6,
    flex: &FlexState,
) -> (Wrench6, DVector<f64>) {
    let (h_sr, h_sf) = flight.bias(nu, flex);
    (h_sr - gyric_term(&test.inertia, nu), h_sf)
}

/// Flight accelerations implied by the sensed wrench.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexEstimate {
    pub nu_dot: Twist6,
    pub xi_ddot: DVector<f64>,
}

/// Affine map `ν̇* = A F_sg + b` of the flexible estimator at the current
/// state.
pub fn flexible_accel_map(
    fd: &FlexDeltaInertia,
    flight: &FlexibleSpacecraft,
    test: &RigidSpacecraft,
    nu: &Twist6,
    flex: &FlexState,
) -> (Mat6, Twist6) {
    let (h_delta, h_sf) = flexible_bias(flight, test, nu, flex);
    let drive = -h_delta + to_wrench(&(&fd.coupling * &h_sf));
    (fd.m_bar_inv, fd.solve(&drive))
}

/// `ξ̈ = −M_f⁻¹ (M_sfᵀ ν̇ + h_sf)`.
pub fn flexural_accel_given(
    fd: &FlexDeltaInertia,
    flight: &FlexibleSpacecraft,
    nu_dot: &Twist6,
    h_sf: &DVector<f64>,
) -> DVector<f64> {
    let nu_dot = DVector::from_column_slice(nu_dot.as_slice());
    -(&fd.m_f_inv * (flight.m_sf.transpose() * nu_dot + h_sf))
}

/// Hub and flexural accelerations from `F_sg` by elimination of `ξ̈`.
pub fn estimate_flexible_accel(
    fd: &FlexDeltaInertia,
    flight: &FlexibleSpacecraft,
    test: &RigidSpacecraft,
    nu: &Twist6,
    flex: &FlexState,
    f_sg: &Wrench6,
) -> FlexEstimate {
    let (a, b) = flexible_accel_map(fd, flight, test, nu, flex);
    let nu_dot = a * f_sg + b;
    let (_, h_sf) = flight.bias(nu, flex);
    FlexEstimate {
        xi_ddot: flexural_accel_given(fd, flight, &nu_dot, &h_sf),
        nu_dot,
    }
}

/// `q̈* = J⁻¹(M̄_Δ⁻¹(F_sg − h̄_Δ + M_sf M_f⁻¹ h_sf) − J̇ q̇)`.
pub fn flexible_joint_accel(
    state: &ManipulatorState,
    fd: &FlexDeltaInertia,
    flight: &FlexibleSpacecraft,
    test: &RigidSpacecraft,
    flex: &FlexState,
    f_sg: &Wrench6,
) -> Result<JointVector> {
    let est = estimate_flexible_accel(fd, flight, test, &state.twist(), flex, f_sg);
    state.solve_jacobian(&(est.nu_dot - state.bias_acceleration()))
}

/// `ξ̈` from the eliminated equations.
pub fn flexural_accel(
    fd: &FlexDeltaInertia,
    flight: &FlexibleSpacecraft,
    test: &RigidSpacecraft,
    flex: &FlexState,
    nu: &Twist6,
    f_sg: &Wrench6,
) -> DVector<f64> {
    estimate_flexible_accel(fd, flight, test, nu, flex, f_sg).xi_ddot
}

/// Cartesian part of the shortcut estimator,
/// `M̄_Δ⁻¹ F_sg − N q̇ − M̄_Δ⁻¹ M_sf M_f⁻¹ h_sf` with `N q̇ = M_Δ⁻¹ h_Δ` of the
/// rigid hub.
pub fn cartesian_accel_shortcut(
    fd: &FlexDeltaInertia,
    rigid_delta: &DeltaInertia,
    flight: &FlexibleSpacecraft,
    nu: &Twist6,
    flex: &FlexState,
    f_sg: &Wrench6,
) -> Twist6 {
    let (_, h_sf) = flight.bias(nu, flex);
    fd.solve(f_sg) - rigid_delta.solve(&rigid_delta.bias(nu)) - fd.solve(&to_wrench(&(&fd.coupling * &h_sf)))
}

/// `q̈* = −J⁻¹(N + J̇)q̇ − J⁻¹ M̄_Δ⁻¹ M_sf M_f⁻¹ h_sf + J⁻¹ M̄_Δ⁻¹ F_sg`, the
/// shortcut form with `J⁻¹` applied to every Cartesian term.
pub fn flexible_joint_accel_shortcut(
    state: &ManipulatorState,
    fd: &FlexDeltaInertia,
    rigid_delta: &DeltaInertia,
    flight: &FlexibleSpacecraft,
    flex: &FlexState,
    f_sg: &Wrench6,
) -> Result<JointVector> {
    let nu = state.twist();
    let a = cartesian_accel_shortcut(fd, rigid_delta, flight, &nu, flex, f_sg);
    state.solve_jacobian(&(a - state.bias_acceleration()))
}

/// `ξ̈ = −M_f⁻¹(I + M_f⁻¹ M_sfᵀ M_sf M_f⁻¹) h_sf − M_f⁻¹ M_sfᵀ M̄_Δ⁻¹(F_sg − h̄_Δ)`,
/// the shortcut form.
pub fn flexural_accel_shortcut(
    fd: &FlexDeltaInertia,
    flight: &FlexibleSpacecraft,
    test: &RigidSpacecraft,
    flex: &FlexState,
    nu: &Twist6,
    f_sg: &Wrench6,
) -> DVector<f64> {
    let (h_delta, h_sf) = flexible_bias(flight, test, nu, flex);
    let n = flight.n_modes();
    let m_sf_t = flight.m_sf.transpose();
    let inner = DMatrix::identity(n, n) + &fd.m_f_inv * &m_sf_t * &fd.coupling;
    let drive = fd.solve(&(f_sg - h_delta));
    -(&fd.m_f_inv * inner * &h_sf)
        - &fd.m_f_inv * &m_sf_t * DVector::from_column_slice(drive.as_slice())
}

/// Oracle: solves
/// `[M_Δ M_sf; M_sfᵀ M_f][ν̇; ξ̈] = [F_sg − h̄_Δ; −h_sf]` as one dense system.
pub fn block_elimination_accel(
    flight: &FlexibleSpacecraft,
    test: &RigidSpacecraft,
    nu: &Twist6,
    flex: &FlexState,
    f_sg: &Wrench6,
) -> Result<FlexEstimate> {
    let n = flight.n_modes();
    let mut m = flight.mass_matrix();
    let m_m = dense6(&test.inertia.matrix());
    let mut hub = m.view_mut((0, 0), (6, 6));
    hub -= m_m;
    let (h_delta, h_sf) = flexible_bias(flight, test, nu, flex);
    let mut rhs = DVector::zeros(6 + n);
    rhs.rows_mut(0, 6).copy_from(&(f_sg - h_delta));
    rhs.rows_mut(6, n).copy_from(&(-h_sf));
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or(EmuError::SingularFlexDelta(0.0))?;
    Ok(FlexEstimate {
        nu_dot: Twist6::from_column_slice(&x.as_slice()[..6]),
        xi_ddot: x.rows(6, n).into_owned(),
    })
}

/// Discrepancies of each estimator against the block-elimination oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexCrossCheck {
    pub nu_dot_eliminated: f64,
    pub xi_ddot_eliminated: f64,
    pub nu_dot_shortcut: f64,
    pub xi_ddot_shortcut: f64,
}

pub fn flexible_cross_check(
    fd: &FlexDeltaInertia,
    rigid_delta: &DeltaInertia,
    flight: &FlexibleSpacecraft,
    test: &RigidSpacecraft,
    nu: &Twist6,
    flex: &FlexState,
    f_sg: &Wrench6,
) -> Result<FlexCrossCheck> {
    let oracle = block_elimination_accel(flight, test, nu, flex, f_sg)?;
    let est = estimate_flexible_accel(fd, flight, test, nu, flex, f_sg);
    let shortcut_nu = cartesian_accel_shortcut(fd, rigid_delta, flight, nu, flex, f_sg);
    let shortcut_xi = flexural_accel_shortcut(fd, flight, test, flex, nu, f_sg);
    Ok(FlexCrossCheck {
        nu_dot_eliminated: (est.nu_dot - oracle.nu_dot).norm(),
        xi_ddot_eliminated: (&est.xi_ddot - &oracle.xi_ddot).norm(),
        nu_dot_shortcut: (shortcut_nu - oracle.nu_dot).norm(),
        xi_ddot_shortcut: (shortcut_xi - &oracle.xi_ddot).norm(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopPhase {
    Estimate,
    Control,
    IntegrateFlex,
}

/// Co-simulation state of the simulated appendages.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexEmulationState {
    pub flex: FlexState,
    pub delta: FlexDeltaInertia,
    pub phase: LoopPhase,
}

impl FlexEmulationState {
    pub fn new(flight: &FlexibleSpacecraft, test: &RigidSpacecraft, flex: FlexState) -> Result<Self> {
        if flex.len() != flight.n_modes() {
            return Err(EmuError::InvalidScenario(format!(
                "flexural state has {} coordinates, model has {}",
                flex.len(),
                flight.n_modes()
            )));
        }
        Ok(Self {
            flex,
            delta: flexible_delta_inertia(flight, test)?,
            phase: LoopPhase::Estimate,
        })
    }
}

/// Packs `(ξ, ξ̇)` into one vector.
pub fn pack_flex(flex: &FlexState) -> DVector<f64> {
    let n = flex.len();
    let mut x = DVector::zeros(2 * n);
    x.rows_mut(0, n).copy_from(&flex.xi);
    x.rows_mut(n, n).copy_from(&flex.xi_dot);
    x
}

pub fn unpack_flex(x: &DVector<f64>) -> FlexState {
    let n = x.len() / 2;
    FlexState {
        xi: x.rows(0, n).into_owned(),
        xi_dot: x.rows(n, n).into_owned(),
    }
}

/// One pass of the co-simulation loop at a controller update: estimate `q̈*`,
/// evaluate the torque law with it, then advance `(ξ, ξ̇)` over `dt` by RK4
/// with `ν` and `F_sg` held.
#[allow(clippy::too_many_arguments)]
pub fn flex_emulation_step(
    emu: &mut FlexEmulationState,
    flight: &FlexibleSpacecraft,
    state: &ManipulatorState,
    attachment: &PayloadAttachment,
    gains: &EmulationGains,
    ctrl: &ControllerState,
    f_sg: &Wrench6,
    dt: f64,
) -> Result<ControlOutput> {
    let test = &attachment.payload;
    let nu = state.twist();

    emu.phase = LoopPhase::Estimate;
    let est = estimate_flexible_accel(&emu.delta, flight, test, &nu, &emu.flex, f_sg);
    let qdd_star = state.solve_jacobian(&(est.nu_dot - state.bias_acceleration()))?;

    emu.phase = LoopPhase::Control;
    let tau = control_torque_for_accel(state, attachment, gains, ctrl, &qdd_star, f_sg);
    let f_ext_star = f_sg + test.inertia.apply(&est.nu_dot) + gyric_term(&test.inertia, &nu);

    emu.phase = LoopPhase::IntegrateFlex;
    let delta = &emu.delta;
    let next = rk4_step(0.0, &pack_flex(&emu.flex), dt, |_, y| {
        let flex = unpack_flex(y);
        let xi_ddot = flexural_accel(delta, flight, test, &flex, &nu, f_sg);
        let mut d = DVector::zeros(y.len());
        let n = flex.len();
        d.rows_mut(0, n).copy_from(&flex.xi_dot);
        d.rows_mut(n, n).copy_from(&xi_ddot);
        Ok(d)
    })?;
    emu.flex = unpack_flex(&next);
    emu.phase = LoopPhase::Estimate;

    Ok(ControlOutput {
        tau,
        qdd_star,
        nu_dot_star: est.nu_dot,
        f_ext_star,
    })
}
