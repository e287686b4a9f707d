//! Closed-loop stepping of the emulator and the free-floating reference.
//!
//! In ideal mode the sensor is exact and the algebraic loop between torque,
//! acceleration and sensed wrench is solved as one linear system in `q̈` at
//! every derivative evaluation. In sampled mode the controller runs at its own
//! period on the last sensor sample, with the torque held between updates.

use nalgebra::{DVector, Matrix6};

use crate::controller::{
    control_torque, control_torque_for_accel, estimate_joint_accel, ControllerState, DeltaInertia,
};
use crate::error::{EmuError, Result};
use crate::flexible::{
    flex_emulation_step, flexible_accel_map, flexible_joint_accel, flexural_accel_given, FlexDeltaInertia,
    FlexEmulationState,
};
use crate::manipulator::{cartesian_inertia, combined_dynamics, jacobian, JointVector, ManipulatorState};
use crate::ode::rk4_step;
use crate::sensor::{true_interaction_wrench, Sensor};
use crate::spacecraft::{gyric_term, oracle_step, FlexState, OracleState, RigidBodyState};
use crate::spatial::{sensor_transform, sensor_transform_inverse, Mat6, Twist6, Wrench6, GRAVITY};
use crate::stability::{acceleration_error_amplitude, check_mass_inequality, StabilityReport};

use super::output::{FidelityReport, Table};
use super::scenario::{Mode, Scenario};

/// Acceleration estimator of the configured flight model.
#[derive(Debug, Clone)]
pub enum Estimator {
    Rigid(DeltaInertia),
    Flexible(FlexDeltaInertia),
}

impl Estimator {
    pub fn new(sc: &Scenario) -> Result<Self> {
        if sc.is_flexible() {
            Ok(Self::Flexible(crate::flexible::flexible_delta_inertia(
                &sc.flight,
                &sc.attachment.payload,
            )?))
        } else {
            Ok(Self::Rigid(DeltaInertia::new(&sc.flight.rigid, &sc.attachment.payload.inertia)?))
        }
    }

    /// `ν̇* = A F_sg + b` at the current state.
    pub fn map(&self, sc: &Scenario, nu: &Twist6, flex: &FlexState) -> (Mat6, Twist6) {
        match self {
            Self::Rigid(d) => (d.inverse_matrix(), -d.solve(&d.bias(nu))),
            Self::Flexible(fd) => flexible_accel_map(fd, &sc.flight, &sc.attachment.payload, nu, flex),
        }
    }

    /// `M_Δ`, or `M̄_Δ` for a flexible flight model.
    pub fn delta_matrix(&self) -> Mat6 {
        match self {
            Self::Rigid(d) => d.matrix(),
            Self::Flexible(fd) => fd.m_bar,
        }
    }

    pub fn lambda_max(&self) -> f64 {
        let m = self.delta_matrix();
        m.symmetric_eigenvalues().iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

/// Every closed-loop quantity at one state.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub state: ManipulatorState,
    pub qdd: JointVector,
    pub qdd_star: JointVector,
    pub nu_dot_star: Twist6,
    /// Raw sensor wrench in {S}, offset included.
    pub f_s: Wrench6,
    pub f_sg: Wrench6,
    pub f_ext_star: Wrench6,
    pub f_ext: Wrench6,
    pub tau: JointVector,
    /// Simulated flexural acceleration; empty for a rigid flight model.
    pub xi_ddot: DVector<f64>,
}

/// Solves the ideal closed loop at `(q, q̇)`.
///
/// With `F_sg = F_sg0 − S J q̈`, `S = T(ĉ) T(c)⁻¹ M_m`, and the estimator
/// `ν̇* = A F_sg + b`, the torque law is
/// `τ = G F_sg + Jᵀ M_Cr (b − J̇q̇) + h_r − m_m g J_vᵀRᵀk + M_t PD` with
/// `G = Jᵀ(M_Cr A − I)`, and the plant `M_t q̈ + h_t = τ + Jᵀ F_ext` becomes
/// `(M_t + G S J) q̈ = G F_sg0 + Jᵀ M_Cr (b − J̇q̇) + η + Jᵀ F_ext − h_t`.
pub fn evaluate_ideal(
    sc: &Scenario,
    est: &Estimator,
    q: JointVector,
    q_dot: JointVector,
    ctrl: &ControllerState,
    flex: &FlexState,
    f_ext: &Wrench6,
) -> Result<Evaluation> {
    let att = &sc.attachment;
    let comp = &sc.compensation;
    let state = ManipulatorState::new(sc.model.as_ref(), &att.c, q, q_dot);
    let m_cr = cartesian_inertia(&state)?;
    let nu = state.twist();
    let jdqd = state.bias_acceleration();
    let j = &state.jacobian;
    let mm = att.payload.inertia.matrix();

    let raw0 = true_interaction_wrench(att, &nu, &jdqd, &state.rotation, &state.gravity_dir, f_ext)
        + sc.sensor.offset_wrench();
    let f_sg0 = comp.compensate(&raw0, &state.rotation);
    let to_sensor = sensor_transform_inverse(&att.c) * mm;
    let s = sensor_transform(&comp.c) * to_sensor;

    let (a, b) = est.map(sc, &nu, flex);
    let g = j.transpose() * (m_cr * a - Matrix6::identity());
    let (m_t, h_t) = combined_dynamics(&state, att);
    let weight = state.j_v().transpose()
        * (state.gravity_in_body() * (att.payload.inertia.mass() * GRAVITY));
    let eta = state.h_r - weight + m_t * ctrl.pd(&sc.gains, &state);
    let lhs = m_t + g * s * j;
    let rhs = g * f_sg0 + j.transpose() * (m_cr * (b - jdqd)) + eta + j.transpose() * f_ext - h_t;
    let qdd = lhs
        .lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| EmuError::SingularClosedLoopMatrix(condition(&lhs)))?;

    let f_sg = f_sg0 - s * (j * qdd);
    let f_s = raw0 - to_sensor * (j * qdd);
    let nu_dot_star = a * f_sg + b;
    let qdd_star = state.solve_jacobian(&(nu_dot_star - jdqd))?;
    let tau = control_torque_for_accel(&state, att, &sc.gains, ctrl, &qdd_star, &f_sg);
    let f_ext_star =
        f_sg + att.payload.inertia.apply(&nu_dot_star) + gyric_term(&att.payload.inertia, &nu);
    let xi_ddot = match est {
        Estimator::Rigid(_) => DVector::zeros(0),
        Estimator::Flexible(fd) => {
            let (_, h_sf) = sc.flight.bias(&nu, flex);
            flexural_accel_given(fd, &sc.flight, &nu_dot_star, &h_sf)
        }
    };
    Ok(Evaluation {
        state,
        qdd,
        qdd_star,
        nu_dot_star,
        f_s,
        f_sg,
        f_ext_star,
        f_ext: *f_ext,
        tau,
        xi_ddot,
    })
}

fn condition(m: &Mat6) -> f64 {
    let sv = m.singular_values();
    if sv.min() > 0.0 {
        sv.max() / sv.min()
    } else {
        f64::INFINITY
    }
}

/// Residuals of an ideal evaluation against the plant equation and against
/// the torque law evaluated through the controller module (rigid flight
/// model).
pub fn ideal_residuals(sc: &Scenario, ev: &Evaluation, ctrl: &ControllerState) -> Result<(f64, f64)> {
    let (m_t, h_t) = combined_dynamics(&ev.state, &sc.attachment);
    let plant = m_t * ev.qdd + h_t - ev.tau - ev.state.jacobian.transpose() * ev.f_ext;
    let delta = DeltaInertia::new(&sc.flight.rigid, &sc.attachment.payload.inertia)?;
    let law = control_torque(&ev.state, &sc.attachment, &delta, &sc.gains, ctrl, &ev.f_sg)?;
    Ok((plant.norm(), (law.tau - ev.tau).norm()))
}

/// Plant acceleration under a given torque.
pub fn plant_accel(
    sc: &Scenario,
    state: &ManipulatorState,
    tau: &JointVector,
    f_ext: &Wrench6,
) -> Result<JointVector> {
    let (m_t, h_t) = combined_dynamics(state, &sc.attachment);
    m_t.cholesky()
        .map(|c| c.solve(&(tau + state.jacobian.transpose() * f_ext - h_t)))
        .ok_or_else(|| EmuError::SingularMassMatrix("combined mass matrix M_t".into()))
}

/// Emulator state advanced by either stepping mode.
#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorState {
    pub t: f64,
    pub step: usize,
    pub q: JointVector,
    pub q_dot: JointVector,
    pub ctrl: ControllerState,
    /// Simulated appendage state.
    pub flex: FlexState,
}

/// Outputs held between sampled controller updates.
#[derive(Debug, Clone)]
struct Held {
    tau: JointVector,
    f_s: Wrench6,
    f_sg: Wrench6,
    qdd_star: JointVector,
    nu_dot_star: Twist6,
    f_ext_star: Wrench6,
}

/// One sensor sample as logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSample {
    pub t: f64,
    pub raw: Wrench6,
    pub f_sg: Wrench6,
}

/// Quantities written to one trajectory row.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub q: JointVector,
    pub q_dot: JointVector,
    pub nu: Twist6,
    pub nu_dot_star: Twist6,
    pub f_s: Wrench6,
    pub f_sg: Wrench6,
    pub f_ext_star: Wrench6,
    pub f_ext: Wrench6,
    pub tau: JointVector,
    pub q_err: JointVector,
    pub x_norm: f64,
    pub delta_norm: f64,
    pub flex: FlexState,
}

pub struct Simulation<'a> {
    sc: &'a Scenario,
    est: Estimator,
    sensor: Sensor,
    flex_emu: Option<FlexEmulationState>,
    held: Option<Held>,
    pub state: EmulatorState,
    pub sensor_log: Vec<SensorSample>,
}

const BASE: usize = 24;

impl<'a> Simulation<'a> {
    pub fn new(sc: &'a Scenario) -> Result<Self> {
        let est = Estimator::new(sc)?;
        let mut ctrl = ControllerState::new(sc.q0, sc.qd0);
        ctrl.q_ref += sc.position_error0;
        ctrl.q_dot_ref += sc.velocity_error0;
        let mut sensor_model = sc.sensor.clone();
        if sc.mode == Mode::Ideal {
            sensor_model.noise_std = [0.0; 2];
            sensor_model.resolution = [0.0; 2];
        }
        let flex_emu = match &est {
            Estimator::Flexible(_) => Some(FlexEmulationState::new(
                &sc.flight,
                &sc.attachment.payload,
                sc.flex0.clone(),
            )?),
            Estimator::Rigid(_) => None,
        };
        Ok(Self {
            sc,
            est,
            sensor: Sensor::new(sensor_model)?,
            flex_emu,
            held: None,
            state: EmulatorState {
                t: 0.0,
                step: 0,
                q: sc.q0,
                q_dot: sc.qd0,
                ctrl,
                flex: sc.flex0.clone(),
            },
            sensor_log: Vec::new(),
        })
    }

    pub fn estimator(&self) -> &Estimator {
        &self.est
    }

    pub fn step(&mut self) -> Result<()> {
        match self.sc.mode {
            Mode::Ideal => self.step_ideal(),
            Mode::Sampled => self.step_sampled(),
        }
    }

    /// RK4 over `(q, q̇, q_ref, q̇_ref, ξ, ξ̇)` with the closed loop solved
    /// exactly at each stage.
    pub fn step_ideal(&mut self) -> Result<()> {
        let sc = self.sc;
        let n = sc.flight.n_modes();
        let f_ext = sc.external_wrench(self.state.t);
        let mut x = DVector::zeros(BASE + 2 * n);
        let s = &self.state;
        x.rows_mut(0, 6).copy_from(&s.q);
        x.rows_mut(6, 6).copy_from(&s.q_dot);
        x.rows_mut(12, 6).copy_from(&s.ctrl.q_ref);
        x.rows_mut(18, 6).copy_from(&s.ctrl.q_dot_ref);
        x.rows_mut(BASE, n).copy_from(&s.flex.xi);
        x.rows_mut(BASE + n, n).copy_from(&s.flex.xi_dot);
        let est = &self.est;
        let next = rk4_step(self.state.t, &x, sc.dt, |_, y| {
            let (q, qd, ctrl, flex) = unpack_ideal(y, n);
            let ev = evaluate_ideal(sc, est, q, qd, &ctrl, &flex, &f_ext)?;
            let mut d = DVector::zeros(y.len());
            d.rows_mut(0, 6).copy_from(&qd);
            d.rows_mut(6, 6).copy_from(&ev.qdd);
            d.rows_mut(12, 6).copy_from(&ctrl.q_dot_ref);
            d.rows_mut(18, 6).copy_from(&ev.qdd_star);
            d.rows_mut(BASE, n).copy_from(&flex.xi_dot);
            d.rows_mut(BASE + n, n).copy_from(&ev.xi_ddot);
            Ok(d)
        })?;
        let (q, qd, ctrl, flex) = unpack_ideal(&next, n);
        self.state.q = q;
        self.state.q_dot = qd;
        self.state.ctrl.q_ref = ctrl.q_ref;
        self.state.ctrl.q_dot_ref = ctrl.q_dot_ref;
        self.state.flex = flex;
        self.advance_clock();
        Ok(())
    }

    /// One plant step under a held torque, preceded by a controller update
    /// whenever one is due.
    pub fn step_sampled(&mut self) -> Result<()> {
        let sc = self.sc;
        let f_ext = sc.external_wrench(self.state.t);
        if self.state.step % sc.steps_per_update() == 0 {
            self.control_update(&f_ext)?;
        }
        let tau = self.held.as_ref().expect("controller updated at step 0").tau;
        let mut x = DVector::zeros(12);
        x.rows_mut(0, 6).copy_from(&self.state.q);
        x.rows_mut(6, 6).copy_from(&self.state.q_dot);
        let next = rk4_step(self.state.t, &x, sc.dt, |_, y| {
            let q = JointVector::from_column_slice(&y.as_slice()[..6]);
            let qd = JointVector::from_column_slice(&y.as_slice()[6..12]);
            let state = ManipulatorState::new(sc.model.as_ref(), &sc.attachment.c, q, qd);
            let qdd = plant_accel(sc, &state, &tau, &f_ext)?;
            let mut d = DVector::zeros(12);
            d.rows_mut(0, 6).copy_from(&qd);
            d.rows_mut(6, 6).copy_from(&qdd);
            Ok(d)
        })?;
        self.state.q = JointVector::from_column_slice(&next.as_slice()[..6]);
        self.state.q_dot = JointVector::from_column_slice(&next.as_slice()[6..12]);
        self.advance_clock();
        Ok(())
    }

    fn advance_clock(&mut self) {
        self.state.step += 1;
        self.state.t = self.state.step as f64 * self.sc.dt;
    }

    /// Samples the sensor under the torque applied so far (the closed-loop
    /// acceleration before the first update) and computes a new torque.
    fn control_update(&mut self, f_ext: &Wrench6) -> Result<()> {
        let sc = self.sc;
        let att = &sc.attachment;
        let s = &self.state;
        let state = ManipulatorState::new(sc.model.as_ref(), &att.c, s.q, s.q_dot);
        state.check_conditioning()?;
        let qdd = match &self.held {
            None => evaluate_ideal(sc, &self.est, s.q, s.q_dot, &s.ctrl, &s.flex, f_ext)?.qdd,
            Some(h) => plant_accel(sc, &state, &h.tau, f_ext)?,
        };
        let nu_dot = state.jacobian * qdd + state.bias_acceleration();
        let truth = true_interaction_wrench(
            att,
            &state.twist(),
            &nu_dot,
            &state.rotation,
            &state.gravity_dir,
            f_ext,
        );
        let reading = self.sensor.sample(&truth, s.t);
        let f_sg = sc.compensation.compensate(&reading.wrench, &state.rotation);
        self.sensor_log.push(SensorSample {
            t: s.t,
            raw: reading.wrench,
            f_sg,
        });

        let first = self.held.is_none();
        let qdd_star = match (&self.est, &self.flex_emu) {
            (Estimator::Flexible(_), Some(emu)) => {
                flexible_joint_accel(&state, &emu.delta, &sc.flight, &att.payload, &emu.flex, &f_sg)?
            }
            (Estimator::Rigid(d), _) => estimate_joint_accel(&state, d, &f_sg)?,
            (Estimator::Flexible(_), None) => unreachable!("flexible estimator without appendage state"),
        };
        let ctrl = &mut self.state.ctrl;
        if first {
            ctrl.qdd_star = qdd_star;
        } else {
            ctrl.advance(&qdd_star, sc.control_period);
        }
        let out = match (&self.est, &mut self.flex_emu) {
            (Estimator::Flexible(_), Some(emu)) => {
                let out = flex_emulation_step(
                    emu,
                    &sc.flight,
                    &state,
                    att,
                    &sc.gains,
                    ctrl,
                    &f_sg,
                    sc.control_period,
                )?;
                self.state.flex = emu.flex.clone();
                out
            }
            (Estimator::Rigid(d), _) => control_torque(&state, att, d, &sc.gains, ctrl, &f_sg)?,
            (Estimator::Flexible(_), None) => unreachable!("flexible estimator without appendage state"),
        };
        ctrl.nu_dot_star = out.nu_dot_star;
        ctrl.f_ext_star = out.f_ext_star;
        self.held = Some(Held {
            tau: out.tau,
            f_s: reading.wrench,
            f_sg,
            qdd_star: out.qdd_star,
            nu_dot_star: out.nu_dot_star,
            f_ext_star: out.f_ext_star,
        });
        Ok(())
    }

    /// `(q̃, q̇̃)` stacked.
    pub fn error_state(&self) -> DVector<f64> {
        let s = &self.state;
        let mut x = DVector::zeros(12);
        x.rows_mut(0, 6).copy_from(&(s.ctrl.q_ref - s.q));
        x.rows_mut(6, 6).copy_from(&(s.ctrl.q_dot_ref - s.q_dot));
        x
    }

    /// Payload twist `J q̇`.
    pub fn twist(&self) -> Twist6 {
        jacobian(self.sc.model.as_ref(), &self.state.q, &self.sc.attachment.c) * self.state.q_dot
    }

    /// Ideal-mode closed-loop evaluation at the current state.
    pub fn evaluate(&self) -> Result<Evaluation> {
        let s = &self.state;
        let f_ext = self.sc.external_wrench(s.t);
        evaluate_ideal(self.sc, &self.est, s.q, s.q_dot, &s.ctrl, &s.flex, &f_ext)
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        let sc = self.sc;
        let s = &self.state;
        let f_ext = sc.external_wrench(s.t);
        let (state, qdd, qdd_star, nu_dot_star, f_s, f_sg, f_ext_star, tau) = match (&self.held, sc.mode) {
            (Some(h), Mode::Sampled) => {
                let state = ManipulatorState::new(sc.model.as_ref(), &sc.attachment.c, s.q, s.q_dot);
                let qdd = plant_accel(sc, &state, &h.tau, &f_ext)?;
                (state, qdd, h.qdd_star, h.nu_dot_star, h.f_s, h.f_sg, h.f_ext_star, h.tau)
            }
            _ => {
                let ev = self.evaluate()?;
                (ev.state, ev.qdd, ev.qdd_star, ev.nu_dot_star, ev.f_s, ev.f_sg, ev.f_ext_star, ev.tau)
            }
        };
        let delta = self.est.delta_matrix() * (state.jacobian * (qdd_star - qdd));
        Ok(Snapshot {
            t: s.t,
            q: s.q,
            q_dot: s.q_dot,
            nu: state.twist(),
            nu_dot_star,
            f_s,
            f_sg,
            f_ext_star,
            f_ext,
            tau,
            q_err: s.ctrl.q_ref - s.q,
            x_norm: self.error_state().norm(),
            delta_norm: delta.norm(),
            flex: s.flex.clone(),
        })
    }
}

fn unpack_ideal(y: &DVector<f64>, n: usize) -> (JointVector, JointVector, ControllerState, FlexState) {
    let v = |i: usize| JointVector::from_column_slice(&y.as_slice()[i..i + 6]);
    let ctrl = ControllerState::new(v(12), v(18));
    let flex = FlexState {
        xi: y.rows(BASE, n).into_owned(),
        xi_dot: y.rows(BASE + n, n).into_owned(),
    };
    (v(0), v(6), ctrl, flex)
}

/// Outputs of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Table,
    pub oracle: Option<Table>,
    pub sensor: Table,
    pub fidelity: Option<FidelityReport>,
    pub stability: StabilityReport,
    /// Per-step time grid with `‖x‖` and, when the oracle ran, `‖ν − ν_o‖`.
    pub times: Vec<f64>,
    pub error_norms: Vec<f64>,
    pub twist_errors: Vec<f64>,
    /// Logged `(t, ‖δ‖, envelope)` triples.
    pub delta: Vec<(f64, f64, f64)>,
}

pub fn stability_report(sc: &Scenario) -> Result<StabilityReport> {
    let samples = sc.workspace.halton_samples(sc.stability_samples);
    check_mass_inequality(sc.model.as_ref(), &sc.attachment, &sc.gains, &samples)
}

/// Runs the emulator alone.
pub fn simulate(sc: &Scenario) -> Result<RunOutput> {
    run(sc, false)
}

/// Runs the emulator and an independent integration of the flight spacecraft
/// from the same initial twist and pose under the same thruster schedule.
pub fn run_with_oracle(sc: &Scenario) -> Result<RunOutput> {
    run(sc, true)
}

fn run(sc: &Scenario, with_oracle: bool) -> Result<RunOutput> {
    let stability = stability_report(sc)?;
    let mut sim = Simulation::new(sc)?;
    let n = sc.flight.n_modes();
    let mut trajectory = Table::new(trajectory_header(n));
    let mut oracle_table = Table::new(oracle_header(n));

    let init = ManipulatorState::new(sc.model.as_ref(), &sc.attachment.c, sc.q0, sc.qd0);
    let mut oracle = OracleState {
        body: RigidBodyState::new(init.position, &init.rotation, init.twist()),
        flex: sc.flex0.clone(),
    };

    let x0 = sim.error_state().norm();
    let omega = stability.suggested_decay_omega;
    let amplitude = acceleration_error_amplitude(&sc.gains, stability.q_norm_max, x0);
    let envelope_scale = stability.sigma * amplitude * sim.estimator().lambda_max();
    let envelope = |t: f64| envelope_scale * (-omega * t).exp();

    let steps = sc.steps();
    let mut times = Vec::with_capacity(steps + 1);
    let mut error_norms = Vec::with_capacity(steps + 1);
    let mut twist_errors = Vec::new();
    let mut delta = Vec::new();
    let mut max_nu_oracle: f64 = 0.0;
    let mut sum_sq = 0.0;
    let mut max_xi_err: f64 = 0.0;

    for i in 0..=steps {
        if i > 0 {
            let t = sim.state.t;
            sim.step()?;
            if with_oracle {
                oracle = oracle_step(&sc.flight, &oracle, &sc.external_wrench(t), sc.dt)?;
            }
        }
        let t = sim.state.t;
        times.push(t);
        error_norms.push(sim.error_state().norm());
        if with_oracle {
            let err = (sim.twist() - oracle.body.nu).norm();
            twist_errors.push(err);
            sum_sq += err * err;
            max_nu_oracle = max_nu_oracle.max(oracle.body.nu.norm());
            if n > 0 {
                max_xi_err = max_xi_err.max((&sim.state.flex.xi - &oracle.flex.xi).norm());
            }
        }
        if i % sc.log_every == 0 || i == steps {
            let snap = sim.snapshot()?;
            delta.push((t, snap.delta_norm, envelope(t)));
            trajectory.push(trajectory_row(&snap));
            if with_oracle {
                oracle_table.push(oracle_row(t, &oracle));
            }
        }
    }

    let mut sensor = Table::new(sensor_header());
    if sc.mode == Mode::Sampled {
        for s in &sim.sensor_log {
            sensor.push(sensor_row(s.t, &s.raw, &s.f_sg));
        }
    } else {
        for row in &trajectory.rows {
            // t, then raw and compensated wrench columns of the trajectory.
            let mut r = vec![row[0]];
            r.extend_from_slice(&row[25..37]);
            sensor.push(r);
        }
    }

    let fidelity = with_oracle.then(|| {
        let max_nu_error = twist_errors.iter().copied().fold(0.0, f64::max);
        let envelope_applies = x0 > 0.0 && omega > 0.0;
        FidelityReport {
            mode: sc.mode,
            steps,
            dt: sc.dt,
            max_nu_error,
            rms_nu_error: (sum_sq / twist_errors.len() as f64).sqrt(),
            max_nu_oracle,
            relative_nu_error: if max_nu_oracle > 0.0 { max_nu_error / max_nu_oracle } else { max_nu_error },
            initial_error_norm: x0,
            final_error_norm: *error_norms.last().expect("at least one sample"),
            max_delta_norm: delta.iter().map(|d| d.1).fold(0.0, f64::max),
            delta_decay_rate: omega,
            delta_envelope_holds: envelope_applies.then(|| delta.iter().all(|(_, d, e)| d <= e)),
            max_xi_error: (n > 0).then_some(max_xi_err),
        }
    });

    Ok(RunOutput {
        trajectory,
        oracle: with_oracle.then_some(oracle_table),
        sensor,
        fidelity,
        stability,
        times,
        error_norms,
        twist_errors,
        delta,
    })
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

const WRENCH: [&str; 6] = ["fx", "fy", "fz", "nx", "ny", "nz"];
const TWIST: [&str; 6] = ["vx", "vy", "vz", "wx", "wy", "wz"];

fn named(prefix: &str, names: &[&str]) -> Vec<String> {
    names.iter().map(|n| format!("{prefix}{n}")).collect()
}

/// Trajectory columns: time, joints, payload twist, estimates, wrenches,
/// torque, tracking error and the appendage state.
pub fn trajectory_header(n_modes: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(indexed("q", 6));
    h.extend(indexed("qd", 6));
    h.extend(named("nu_", &TWIST));
    h.extend(named("nudot_star_", &TWIST));
    h.extend(named("fs_", &WRENCH));
    h.extend(named("fsg_", &WRENCH));
    h.extend(named("fext_star_", &WRENCH));
    h.extend(named("fext_", &WRENCH));
    h.extend(indexed("tau", 6));
    h.extend(indexed("qerr", 6));
    h.push("x_norm".into());
    h.push("delta_norm".into());
    h.extend(indexed("xi", n_modes));
    h.extend(indexed("xidot", n_modes));
    h
}

fn trajectory_row(s: &Snapshot) -> Vec<f64> {
    let mut r = vec![s.t];
    for v in [&s.q, &s.q_dot, &s.nu, &s.nu_dot_star, &s.f_s, &s.f_sg, &s.f_ext_star, &s.f_ext, &s.tau, &s.q_err] {
        r.extend(v.iter());
    }
    r.push(s.x_norm);
    r.push(s.delta_norm);
    r.extend(s.flex.xi.iter());
    r.extend(s.flex.xi_dot.iter());
    r
}

pub fn oracle_header(n_modes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(named("nu_", &TWIST));
    h.extend(indexed("xi", n_modes));
    h.extend(indexed("xidot", n_modes));
    h
}

fn oracle_row(t: f64, o: &OracleState) -> Vec<f64> {
    let q = o.body.attitude.quaternion();
    let mut r = vec![t];
    r.extend(o.body.position.iter());
    r.extend([q.w, q.i, q.j, q.k]);
    r.extend(o.body.nu.iter());
    r.extend(o.flex.xi.iter());
    r.extend(o.flex.xi_dot.iter());
    r
}

pub fn sensor_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(named("raw_", &WRENCH));
    h.extend(named("fsg_", &WRENCH));
    h
}

fn sensor_row(t: f64, raw: &Wrench6, f_sg: &Wrench6) -> Vec<f64> {
    let mut r = vec![t];
    r.extend(raw.iter());
    r.extend(f_sg.iter());
    r
}
