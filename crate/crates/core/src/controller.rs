//! Emulation control law.
//!
//! The compensated sensor signal `F_sg` drives an estimate of the flight
//! spacecraft acceleration `ν̇*`, mapped to joint space as `q̈*`. The torque
//! law tracks the double integral of `q̈*` with an inverse-dynamics PD loop and
//! cancels an estimate of the external wrench, which avoids the algebraic loop
//! a direct acceleration-feedback controller would create.

use serde::{Deserialize, Serialize};

use crate::error::{EmuError, Result};
use crate::manipulator::{
    cartesian_inertia, combined_dynamics, JointVector, ManipulatorState, PayloadAttachment,
};
use crate::spacecraft::gyric_term;
use crate::spatial::{block_diag, bottom, six, skew, top, Inertia6, Mat3, Mat6, Twist6, Wrench6, GRAVITY};

/// Relative threshold below which a mass or inertia difference is treated as
/// zero.
const DELTA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmulationGains {
    pub k_p: f64,
    pub k_d: f64,
}

impl EmulationGains {
    pub fn new(k_p: f64, k_d: f64) -> Result<Self> {
        let g = Self { k_p, k_d };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_p > 0.0 && self.k_d > 0.0) || !self.k_p.is_finite() || !self.k_d.is_finite() {
            return Err(EmuError::InvalidScenario(format!(
                "controller gains must be positive, got k_p = {}, k_d = {}",
                self.k_p, self.k_d
            )));
        }
        Ok(())
    }
}

/// Difference between flight and test spacecraft inertia,
/// `M_Δ = diag((m_s − m_m) I, I_s − I_m)`, with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaInertia {
    mass: f64,
    inertia: Mat3,
    inertia_inv: Mat3,
}

impl DeltaInertia {
    pub fn new(flight: &Inertia6, test: &Inertia6) -> Result<Self> {
        let mass = flight.mass() - test.mass();
        if mass.abs() <= DELTA_TOL * flight.mass().max(test.mass()) {
            return Err(EmuError::SingularDeltaInertia {
                what: "mass difference",
                value: mass,
            });
        }
        let inertia = flight.inertia() - test.inertia();
        let scale = flight.lambda_max().max(test.lambda_max());
        let eig = inertia.symmetric_eigen().eigenvalues;
        let smallest = eig.iter().copied().fold(f64::INFINITY, |a, b| if b.abs() < a.abs() { b } else { a });
        if smallest.abs() <= DELTA_TOL * scale {
            return Err(EmuError::SingularDeltaInertia {
                what: "inertia difference eigenvalue",
                value: smallest,
            });
        }
        let inertia_inv = inertia.try_inverse().ok_or(EmuError::SingularDeltaInertia {
            what: "inertia difference eigenvalue",
            value: smallest,
        })?;
        Ok(Self {
            mass,
            inertia,
            inertia_inv,
        })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn inertia(&self) -> &Mat3 {
        &self.inertia
    }

    pub fn matrix(&self) -> Mat6 {
        block_diag(&(Mat3::identity() * self.mass), &self.inertia)
    }

    pub fn inverse_matrix(&self) -> Mat6 {
        block_diag(&(Mat3::identity() / self.mass), &self.inertia_inv)
    }

    /// `M_Δ⁻¹ x`.
    pub fn solve(&self, x: &Wrench6) -> Twist6 {
        six(&(top(x) / self.mass), &(self.inertia_inv * bottom(x)))
    }

    /// Largest absolute eigenvalue of `M_Δ`.
    pub fn lambda_max(&self) -> f64 {
        let eig = self.inertia.symmetric_eigen().eigenvalues;
        eig.iter().fold(self.mass.abs(), |a, b| a.max(b.abs()))
    }

    /// `h_Δ = ((m_s − m_m) ω × v, ω × (I_s − I_m) ω)`.
    pub fn bias(&self, nu: &Twist6) -> Wrench6 {
        let v = top(nu);
        let w = bottom(nu);
        six(&(w.cross(&v) * self.mass), &w.cross(&(self.inertia * w)))
    }

    /// `N(q, q̇)` such that `N q̇ = M_Δ⁻¹ h_Δ`.
    pub fn n_matrix(&self, state: &ManipulatorState) -> Mat6 {
        let w = skew(&(state.j_omega() * state.q_dot));
        let mut n = Mat6::zeros();
        n.fixed_rows_mut::<3>(0).copy_from(&(w * state.j_v()));
        n.fixed_rows_mut::<3>(3)
            .copy_from(&(self.inertia_inv * w * self.inertia * state.j_omega()));
        n
    }
}

/// Internal reference trajectory and the latest estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// `∫∫ q̈* dt`.
    pub q_ref: JointVector,
    /// `∫ q̈* dt`.
    pub q_dot_ref: JointVector,
    /// Most recent `q̈*`, used by the trapezoidal update.
    pub qdd_star: JointVector,
    pub nu_dot_star: Twist6,
    pub f_ext_star: Wrench6,
}

impl ControllerState {
    /// Integrators start on the measured state, so the initial tracking error
    /// is zero.
    pub fn new(q: JointVector, q_dot: JointVector) -> Self {
        Self {
            q_ref: q,
            q_dot_ref: q_dot,
            qdd_star: JointVector::zeros(),
            nu_dot_star: Twist6::zeros(),
            f_ext_star: Wrench6::zeros(),
        }
    }

    /// Trapezoidal update of the reference integrators with a new `q̈*`.
    pub fn advance(&mut self, qdd_star: &JointVector, dt: f64) {
        let qd_next = self.q_dot_ref + (self.qdd_star + qdd_star) * (0.5 * dt);
        self.q_ref += (self.q_dot_ref + qd_next) * (0.5 * dt);
        self.q_dot_ref = qd_next;
        self.qdd_star = *qdd_star;
    }

    /// `K_d(q̇_ref − q̇) + K_p(q_ref − q)`.
    pub fn pd(&self, gains: &EmulationGains, state: &ManipulatorState) -> JointVector {
        (self.q_dot_ref - state.q_dot) * gains.k_d + (self.q_ref - state.q) * gains.k_p
    }
}

/// `ν̇* = M_Δ⁻¹(F_sg − h_Δ(ν))`.
pub fn estimate_cartesian_accel(delta: &DeltaInertia, nu: &Twist6, f_sg: &Wrench6) -> Twist6 {
    delta.solve(&(f_sg - delta.bias(nu)))
}

/// `q̈* = J⁻¹(ν̇* − J̇ q̇)`.
pub fn estimate_joint_accel(
    state: &ManipulatorState,
    delta: &DeltaInertia,
    f_sg: &Wrench6,
) -> Result<JointVector> {
    let nu_dot = estimate_cartesian_accel(delta, &state.twist(), f_sg);
    state.solve_jacobian(&(nu_dot - state.bias_acceleration()))
}

/// `q̈* = J⁻¹ M_Δ⁻¹ F_sg − J⁻¹(N + J̇) q̇`, the same quantity through `N`.
pub fn estimate_joint_accel_expanded(
    state: &ManipulatorState,
    delta: &DeltaInertia,
    f_sg: &Wrench6,
) -> Result<JointVector> {
    let n = delta.n_matrix(state);
    state.solve_jacobian(&(delta.solve(f_sg) - (n + state.jacobian_dot) * state.q_dot))
}

/// `F*_ext = (I + M_m M_Δ⁻¹) F_sg + h_m − M_m N q̇`.
pub fn estimate_external_force(
    state: &ManipulatorState,
    attachment: &PayloadAttachment,
    delta: &DeltaInertia,
    f_sg: &Wrench6,
) -> Wrench6 {
    let inertia = &attachment.payload.inertia;
    let n = delta.n_matrix(state);
    f_sg + inertia.apply(&delta.solve(f_sg)) + gyric_term(inertia, &state.twist())
        - inertia.apply(&(n * state.q_dot))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub tau: JointVector,
    pub qdd_star: JointVector,
    pub nu_dot_star: Twist6,
    pub f_ext_star: Wrench6,
}

/// Joint torque of the emulation controller:
///
/// `τ = Jᵀ(M_Cr M_Δ⁻¹ − I) F_sg + h_r − M_r J⁻¹(N + J̇) q̇ − m_m g J_vᵀ Rᵀ k
///      + M_t (K_d(q̇_ref − q̇) + K_p(q_ref − q))`.
pub fn control_torque(
    state: &ManipulatorState,
    attachment: &PayloadAttachment,
    delta: &DeltaInertia,
    gains: &EmulationGains,
    ctrl: &ControllerState,
    f_sg: &Wrench6,
) -> Result<ControlOutput> {
    let (force, motion) = feedback_decomposition(state, attachment, delta, f_sg)?;
    let (m_t, _) = combined_dynamics(state, attachment);
    let tau = force + motion + m_t * ctrl.pd(gains, state);
    let nu_dot_star = estimate_cartesian_accel(delta, &state.twist(), f_sg);
    Ok(ControlOutput {
        tau,
        qdd_star: state.solve_jacobian(&(nu_dot_star - state.bias_acceleration()))?,
        nu_dot_star,
        f_ext_star: estimate_external_force(state, attachment, delta, f_sg),
    })
}

/// The torque law in its inverse-dynamics form,
/// `τ = M_t(q̈* + PD) + h_t − Jᵀ F*_ext`.
pub fn control_torque_inverse_dynamics(
    state: &ManipulatorState,
    attachment: &PayloadAttachment,
    delta: &DeltaInertia,
    gains: &EmulationGains,
    ctrl: &ControllerState,
    f_sg: &Wrench6,
) -> Result<JointVector> {
    let (m_t, h_t) = combined_dynamics(state, attachment);
    let qdd_star = estimate_joint_accel(state, delta, f_sg)?;
    let f_ext_star = estimate_external_force(state, attachment, delta, f_sg);
    Ok(m_t * (qdd_star + ctrl.pd(gains, state)) + h_t - state.jacobian.transpose() * f_ext_star)
}

/// Torque for an arbitrary commanded `q̈*`, after eliminating the external
/// force estimate: `τ = M_r q̈* − Jᵀ F_sg + h_r − m_m g J_vᵀ Rᵀ k + M_t PD`.
pub fn control_torque_for_accel(
    state: &ManipulatorState,
    attachment: &PayloadAttachment,
    gains: &EmulationGains,
    ctrl: &ControllerState,
    qdd_star: &JointVector,
    f_sg: &Wrench6,
) -> JointVector {
    let (m_t, _) = combined_dynamics(state, attachment);
    state.m_r * qdd_star - state.jacobian.transpose() * f_sg + state.h_r
        - payload_weight_torque(state, attachment)
        + m_t * ctrl.pd(gains, state)
}

/// `m_m g J_vᵀ Rᵀ k`.
fn payload_weight_torque(state: &ManipulatorState, attachment: &PayloadAttachment) -> JointVector {
    state.j_v().transpose() * (state.gravity_in_body() * (attachment.payload.inertia.mass() * GRAVITY))
}

/// Split of the torque law into the force-feedback part
/// `Jᵀ(M_Cr M_Δ⁻¹ − I) F_sg` and the motion-dependent part
/// `h_r − M_r J⁻¹(N + J̇) q̇ − m_m g J_vᵀ Rᵀ k`; their sum is the commanded
/// torque when the tracking error is zero.
pub fn feedback_decomposition(
    state: &ManipulatorState,
    attachment: &PayloadAttachment,
    delta: &DeltaInertia,
    f_sg: &Wrench6,
) -> Result<(JointVector, JointVector)> {
    let m_cr = cartesian_inertia(state)?;
    let force = state.jacobian.transpose() * (m_cr * delta.solve(f_sg) - f_sg);
    let n = delta.n_matrix(state);
    let drift = state.solve_jacobian(&((n + state.jacobian_dot) * state.q_dot))?;
    let motion = state.h_r - state.m_r * drift - payload_weight_torque(state, attachment);
    Ok((force, motion))
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::manipulator::{CartesianStage, SerialArm};
    use crate::sensor::true_interaction_wrench;
    use crate::spacecraft::{rigid_forward_dynamics, RigidSpacecraft};
    use crate::spatial::Vec3;

    fn flight() -> RigidSpacecraft {
        RigidSpacecraft::new("flight", Inertia6::from_diagonal(200.0, [120.0, 100.0, 80.0]).unwrap())
    }

    fn payload() -> PayloadAttachment {
        PayloadAttachment {
            payload: RigidSpacecraft::new("test", Inertia6::from_diagonal(50.0, [10.0, 12.0, 8.0]).unwrap()),
            c: Vec3::new(0.02, -0.01, 0.25),
        }
    }

    fn random_state(rng: &mut ChaCha8Rng, c: &Vec3) -> ManipulatorState {
        let arm = SerialArm::default_elbow();
        loop {
            let q = JointVector::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let qd = JointVector::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let s = ManipulatorState::new(&arm, c, q, qd);
            if s.condition_number() < 1e3 {
                return s;
            }
        }
    }

    fn random_wrench(rng: &mut ChaCha8Rng, scale: f64) -> Wrench6 {
        Wrench6::from_fn(|_, _| rng.random_range(-scale..scale))
    }

    /// Compensated signal produced when the payload moves exactly like the
    /// flight spacecraft under `f_ext`.
    fn matched_signal(state: &ManipulatorState, att: &PayloadAttachment, f_ext: &Wrench6) -> (Twist6, Wrench6) {
        let nu = state.twist();
        let nu_dot = rigid_forward_dynamics(&flight(), &nu, f_ext);
        let f_s = true_interaction_wrench(att, &nu, &nu_dot, &state.rotation, &state.gravity_dir, f_ext);
        let f_sg = crate::spatial::transform_wrench(&att.c, &f_s)
            - crate::sensor::gravity_wrench(att.payload.inertia.mass(), &state.rotation, &state.gravity_dir);
        (nu_dot, f_sg)
    }

    #[test]
    fn delta_inertia_examples() {
        let d = DeltaInertia::new(
            &Inertia6::from_diagonal(2.0, [2.0, 2.0, 2.0]).unwrap(),
            &Inertia6::from_diagonal(1.0, [1.0, 1.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(d.matrix(), Mat6::identity());
        let equal_mass = DeltaInertia::new(
            &Inertia6::from_diagonal(5.0, [2.0, 2.0, 2.0]).unwrap(),
            &Inertia6::from_diagonal(5.0, [1.0, 1.0, 1.0]).unwrap(),
        );
        assert!(matches!(equal_mass, Err(EmuError::SingularDeltaInertia { what: "mass difference", .. })));
        let zero_eig = DeltaInertia::new(
            &Inertia6::from_diagonal(5.0, [3.0, 2.0, 1.5]).unwrap(),
            &Inertia6::from_diagonal(1.0, [1.5, 2.0, 3.0]).unwrap(),
        );
        match zero_eig {
            Err(EmuError::SingularDeltaInertia { value, .. }) => assert!(value.abs() < 1e-12),
            other => panic!("expected singular inertia difference, got {other:?}"),
        }
    }

    #[test]
    fn delta_inverse_is_inverse() {
        let d = DeltaInertia::new(&flight().inertia, &payload().payload.inertia).unwrap();
        assert_relative_eq!(d.matrix() * d.inverse_matrix(), Mat6::identity(), epsilon = 1e-14);
    }

    #[test]
    fn cartesian_accel_examples() {
        let d = DeltaInertia::new(
            &Inertia6::from_diagonal(2.0, [2.0, 2.0, 2.0]).unwrap(),
            &Inertia6::from_diagonal(1.0, [1.0, 1.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(estimate_cartesian_accel(&d, &Twist6::zeros(), &Wrench6::zeros()), Twist6::zeros());
        let f = Wrench6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_relative_eq!(estimate_cartesian_accel(&d, &Twist6::zeros(), &f), f);
    }

    #[test]
    fn estimator_residual_vanishes() {
        let d = DeltaInertia::new(&flight().inertia, &payload().payload.inertia).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let nu = random_wrench(&mut rng, 1.0);
            let f = random_wrench(&mut rng, 50.0);
            let a = estimate_cartesian_accel(&d, &nu, &f);
            assert!((d.matrix() * a + d.bias(&nu) - f).norm() < 1e-12);
        }
    }

    #[test]
    fn estimate_equals_flight_acceleration_for_matched_motion() {
        let att = payload();
        let d = DeltaInertia::new(&flight().inertia, &att.payload.inertia).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let state = random_state(&mut rng, &att.c);
            let f_ext = random_wrench(&mut rng, 20.0);
            let (nu_dot, f_sg) = matched_signal(&state, &att, &f_ext);
            let est = estimate_cartesian_accel(&d, &state.twist(), &f_sg);
            assert_relative_eq!(est, nu_dot, epsilon = 1e-9);
            // The external wrench estimate is exact when tracking is perfect.
            let f_star = estimate_external_force(&state, &att, &d, &f_sg);
            assert_relative_eq!(f_star, f_ext, epsilon = 1e-9);
        }
    }

    #[test]
    fn joint_accel_round_trip_and_n_matrix() {
        let att = payload();
        let d = DeltaInertia::new(&flight().inertia, &att.payload.inertia).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let state = random_state(&mut rng, &att.c);
            let f_sg = random_wrench(&mut rng, 30.0);
            let qdd = estimate_joint_accel(&state, &d, &f_sg).unwrap();
            let nu_dot = estimate_cartesian_accel(&d, &state.twist(), &f_sg);
            assert!((state.jacobian * qdd + state.bias_acceleration() - nu_dot).norm() < 1e-10);
            let n_qd = d.n_matrix(&state) * state.q_dot;
            assert_relative_eq!(n_qd, d.solve(&d.bias(&state.twist())), epsilon = 1e-12);
            let expanded = estimate_joint_accel_expanded(&state, &d, &f_sg).unwrap();
            assert_relative_eq!(qdd, expanded, epsilon = 1e-9, max_relative = 1e-10);
        }
    }

    #[test]
    fn zero_input_gives_zero_accel() {
        let att = payload();
        let d = DeltaInertia::new(&flight().inertia, &att.payload.inertia).unwrap();
        let arm = SerialArm::default_elbow();
        let q = JointVector::new(0.3, 0.4, -0.2, 0.5, 0.8, -0.6);
        let state = ManipulatorState::new(&arm, &att.c, q, JointVector::zeros());
        assert_eq!(estimate_joint_accel(&state, &d, &Wrench6::zeros()).unwrap(), JointVector::zeros());
    }

    #[test]
    fn vanishing_payload_estimate_is_signal() {
        let mut att = payload();
        att.payload.inertia = att.payload.inertia.scaled(1e-12).unwrap();
        let d = DeltaInertia::new(&flight().inertia, &att.payload.inertia).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let state = random_state(&mut rng, &att.c);
        let f_sg = random_wrench(&mut rng, 10.0);
        assert_relative_eq!(estimate_external_force(&state, &att, &d, &f_sg), f_sg, epsilon = 1e-9);
    }

    #[test]
    fn explicit_law_equals_inverse_dynamics_form() {
        let att = payload();
        let d = DeltaInertia::new(&flight().inertia, &att.payload.inertia).unwrap();
        let gains = EmulationGains::new(4.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let state = random_state(&mut rng, &att.c);
            let mut ctrl = ControllerState::new(state.q, state.q_dot);
            ctrl.q_ref += random_wrench(&mut rng, 0.1);
            ctrl.q_dot_ref += random_wrench(&mut rng, 0.1);
            let f_sg = random_wrench(&mut rng, 30.0);
            let out = control_torque(&state, &att, &d, &gains, &ctrl, &f_sg).unwrap();
            let alt = control_torque_inverse_dynamics(&state, &att, &d, &gains, &ctrl, &f_sg).unwrap();
            assert_relative_eq!(out.tau, alt, epsilon = 1e-9, max_relative = 1e-11);
            let generic = control_torque_for_accel(&state, &att, &gains, &ctrl, &out.qdd_star, &f_sg);
            assert_relative_eq!(out.tau, generic, epsilon = 1e-9, max_relative = 1e-11);
        }
    }

    #[test]
    fn force_feedback_vanishes_when_cartesian_inertia_matches() {
        let carriage = Inertia6::from_diagonal(30.0, [2.0, 3.0, 4.0]).unwrap();
        let cm = Vec3::new(0.0, 0.0, 0.2);
        let stage = CartesianStage::new(carriage.clone(), cm).unwrap();
        let att = PayloadAttachment {
            payload: RigidSpacecraft::new("test", Inertia6::from_diagonal(10.0, [1.0, 1.5, 2.0]).unwrap()),
            c: cm,
        };
        let flight = Inertia6::new(40.0, carriage.inertia() + att.payload.inertia.inertia()).unwrap();
        let d = DeltaInertia::new(&flight, &att.payload.inertia).unwrap();
        let q = JointVector::new(0.1, -0.2, 0.3, 0.4, 0.5, -0.6);
        let qd = JointVector::new(0.1, 0.2, -0.1, 0.3, -0.2, 0.1);
        let state = ManipulatorState::new(&stage, &cm, q, qd);
        let f_sg = Wrench6::new(3.0, -2.0, 1.0, 0.5, -0.3, 0.2);
        let (force, _) = feedback_decomposition(&state, &att, &d, &f_sg).unwrap();
        assert!(force.norm() < 1e-12);
    }

    #[test]
    fn static_hold_is_gravity_compensation() {
        let att = payload();
        let d = DeltaInertia::new(&flight().inertia, &att.payload.inertia).unwrap();
        let gains = EmulationGains::new(1.0, 1.0).unwrap();
        let arm = SerialArm::default_elbow();
        let q = JointVector::new(0.3, 0.4, -0.2, 0.5, 0.8, -0.6);
        let state = ManipulatorState::new(&arm, &att.c, q, JointVector::zeros());
        let ctrl = ControllerState::new(q, JointVector::zeros());
        let out = control_torque(&state, &att, &d, &gains, &ctrl, &Wrench6::zeros()).unwrap();
        let (_, h_t) = combined_dynamics(&state, &att);
        assert_relative_eq!(out.tau, h_t, epsilon = 1e-9);
    }

    #[test]
    fn decomposition_properties() {
        let att = payload();
        let d = DeltaInertia::new(&flight().inertia, &att.payload.inertia).unwrap();
        let gains = EmulationGains::new(2.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let state = random_state(&mut rng, &att.c);
        let f_sg = random_wrench(&mut rng, 30.0);
        let (force0, _) = feedback_decomposition(&state, &att, &d, &Wrench6::zeros()).unwrap();
        assert_eq!(force0, JointVector::zeros());
        let (force, motion) = feedback_decomposition(&state, &att, &d, &f_sg).unwrap();
        let (force2, _) = feedback_decomposition(&state, &att, &d, &(f_sg * 2.0)).unwrap();
        assert_relative_eq!(force2, force * 2.0, epsilon = 1e-10);
        let ctrl = ControllerState::new(state.q, state.q_dot);
        let out = control_torque(&state, &att, &d, &gains, &ctrl, &f_sg).unwrap();
        assert_relative_eq!(out.tau, force + motion, epsilon = 1e-10);
    }

    #[test]
    fn trapezoidal_reference_integrates_constant_acceleration_exactly() {
        let mut ctrl = ControllerState::new(JointVector::zeros(), JointVector::zeros());
        let a = JointVector::from_element(2.0);
        ctrl.qdd_star = a;
        for _ in 0..1000 {
            ctrl.advance(&a, 1e-3);
        }
        assert_relative_eq!(ctrl.q_dot_ref, a, epsilon = 1e-12);
        assert_relative_eq!(ctrl.q_ref, a * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn invalid_gains_rejected() {
        assert!(EmulationGains::new(0.0, 1.0).is_err());
        assert!(EmulationGains::new(1.0, -1.0).is_err());
        assert!(EmulationGains::new(f64::NAN, 1.0).is_err());
    }
}
