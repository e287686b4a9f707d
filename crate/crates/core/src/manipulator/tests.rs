use approx::assert_relative_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rnea::{inverse_dynamics, mass_and_bias, AttachedBody};
use super::*;
use crate::spatial::{Inertia6, Twist6};

fn nominal_q() -> JointVector {
    JointVector::new(0.3, 0.4, -0.2, 0.5, 0.8, -0.6)
}

fn random_q(rng: &mut ChaCha8Rng) -> JointVector {
    JointVector::from_fn(|_, _| rng.random_range(-2.5..2.5))
}

fn random_qd(rng: &mut ChaCha8Rng) -> JointVector {
    JointVector::from_fn(|_, _| rng.random_range(-1.0..1.0))
}

fn payload() -> PayloadAttachment {
    let inertia = Inertia6::from_diagonal(40.0, [6.0, 5.0, 4.0]).unwrap();
    PayloadAttachment {
        payload: RigidSpacecraft {
            name: "test".into(),
            inertia,
        },
        c: Vec3::new(0.05, -0.02, 0.3),
    }
}

fn attached(att: &PayloadAttachment) -> AttachedBody {
    AttachedBody {
        link: 5,
        mass: att.payload.inertia.mass(),
        com: att.c,
        inertia: *att.payload.inertia.inertia(),
    }
}

/// Body twist of {C} by finite differences of the pose along `q + qd t`.
fn fd_twist(model: &dyn Manipulator, q: &JointVector, qd: &JointVector, c: &Vec3) -> Twist6 {
    let h = 1e-6;
    let (r0, _) = forward_kinematics(model, q, c);
    let (r1, p1) = forward_kinematics(model, &(q + qd * h), c);
    let (rm, pm) = forward_kinematics(model, &(q - qd * h), c);
    let v_world = (p1 - pm) / (2.0 * h);
    let rdot = (r1.into_inner() - rm.into_inner()) / (2.0 * h);
    let w_skew = r0.transpose().into_inner() * rdot;
    let w = Vec3::new(w_skew[(2, 1)], w_skew[(0, 2)], w_skew[(1, 0)]);
    six(&(r0.transpose() * v_world), &w)
}

#[test]
fn home_pose_matches_table_geometry() {
    let arm = SerialArm::default_elbow();
    let (r, o) = forward_kinematics(&arm, &JointVector::zeros(), &Vec3::zeros());
    // Shoulder offset and upper arm along x, forearm and tool along z.
    assert_relative_eq!(o, Vec3::new(1.7, 0.0, 2.15), epsilon = 1e-12);
    assert_relative_eq!(r.into_inner(), Mat3::identity(), epsilon = 1e-12);
}

#[test]
fn twist_matches_finite_differences() {
    let arm = SerialArm::default_elbow();
    let c = payload().c;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let q = random_q(&mut rng);
        let qd = random_qd(&mut rng);
        let nu = jacobian(&arm, &q, &c) * qd;
        assert_relative_eq!(nu, fd_twist(&arm, &q, &qd, &c), epsilon = 1e-7);
    }
}

#[test]
fn jacobian_dot_matches_finite_differences() {
    let arm = SerialArm::default_elbow();
    let c = payload().c;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    for _ in 0..20 {
        let q = random_q(&mut rng);
        let qd = random_qd(&mut rng);
        let fd = (jacobian(&arm, &(q + qd * h), &c) - jacobian(&arm, &(q - qd * h), &c)) / (2.0 * h);
        assert_relative_eq!(jacobian_dot(&arm, &q, &qd, &c), fd, epsilon = 1e-7);
    }
}

#[test]
fn stage_jacobian_matches_finite_differences() {
    let carriage = Inertia6::from_diagonal(30.0, [2.0, 3.0, 4.0]).unwrap();
    let stage = CartesianStage::new(carriage, Vec3::new(0.0, 0.0, 0.2)).unwrap();
    let c = Vec3::new(0.1, 0.0, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    for _ in 0..10 {
        let q = random_q(&mut rng);
        let qd = random_qd(&mut rng);
        let nu = jacobian(&stage, &q, &c) * qd;
        assert_relative_eq!(nu, fd_twist(&stage, &q, &qd, &c), epsilon = 1e-7);
        let fd = (jacobian(&stage, &(q + qd * h), &c) - jacobian(&stage, &(q - qd * h), &c)) / (2.0 * h);
        assert_relative_eq!(jacobian_dot(&stage, &q, &qd, &c), fd, epsilon = 1e-7);
    }
}

#[test]
fn world_angular_velocity_is_rotated_body_rate() {
    let arm = SerialArm::default_elbow();
    let q = nominal_q();
    let qd = JointVector::new(0.1, -0.2, 0.3, 0.4, -0.5, 0.6);
    let state = ManipulatorState::new(&arm, &Vec3::zeros(), q, qd);
    let chain = arm.chain(&q);
    let rates = chain.rates(&qd);
    assert_relative_eq!(
        state.rotation * (state.j_omega() * qd),
        rates.link_omega[5],
        epsilon = 1e-12
    );
}

#[test]
fn mass_matrix_is_symmetric_positive_definite() {
    let arm = SerialArm::default_elbow();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let q = random_q(&mut rng);
        let (m, _) = manipulator_dynamics(&arm, &q, &JointVector::zeros());
        assert_relative_eq!(m, m.transpose(), epsilon = 1e-10);
        assert!(m.cholesky().is_some());
    }
}

#[test]
fn projection_agrees_with_recursive_newton_euler() {
    let arm = SerialArm::default_elbow();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let q = random_q(&mut rng);
        let qd = random_qd(&mut rng);
        let (m, h) = manipulator_dynamics(&arm, &q, &qd);
        let (m_ref, h_ref) = mass_and_bias(&arm, &[], &q, &qd);
        assert_relative_eq!(m, m_ref, epsilon = 1e-9, max_relative = 1e-10);
        assert_relative_eq!(h, h_ref, epsilon = 1e-9, max_relative = 1e-10);
    }
}

#[test]
fn combined_dynamics_agree_with_payload_as_extra_body() {
    let arm = SerialArm::default_elbow();
    let att = payload();
    let extra = [attached(&att)];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let q = random_q(&mut rng);
        let qd = random_qd(&mut rng);
        let state = ManipulatorState::new(&arm, &att.c, q, qd);
        let (m_t, h_t) = combined_dynamics(&state, &att);
        let (m_ref, h_ref) = mass_and_bias(&arm, &extra, &q, &qd);
        assert_relative_eq!(m_t, m_ref, epsilon = 1e-9, max_relative = 1e-10);
        assert_relative_eq!(h_t, h_ref, epsilon = 1e-9, max_relative = 1e-10);
    }
}

#[test]
fn stage_dynamics_agree_with_recursive_newton_euler() {
    let carriage = Inertia6::from_diagonal(30.0, [2.0, 3.0, 4.0]).unwrap();
    let stage = CartesianStage::new(carriage, Vec3::new(0.0, 0.1, 0.2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let q = random_q(&mut rng);
        let qd = random_qd(&mut rng);
        let (m, h) = manipulator_dynamics(&stage, &q, &qd);
        let (m_ref, h_ref) = mass_and_bias(&stage, &[], &q, &qd);
        assert_relative_eq!(m, m_ref, epsilon = 1e-9);
        assert_relative_eq!(h, h_ref, epsilon = 1e-9);
    }
}

#[test]
fn rnea_recovers_applied_acceleration() {
    let arm = SerialArm::default_elbow();
    let q = nominal_q();
    let qd = JointVector::new(0.2, 0.1, -0.3, 0.5, 0.2, -0.4);
    let qdd = JointVector::new(1.0, -0.5, 0.3, 0.0, 0.7, -1.2);
    let (m, h) = manipulator_dynamics(&arm, &q, &qd);
    let tau = inverse_dynamics(&arm, &[], &q, &qd, &qdd);
    let solved = m.lu().solve(&(tau - h)).unwrap();
    assert_relative_eq!(solved, qdd, epsilon = 1e-9);
}

#[test]
fn passivity_of_coriolis_terms() {
    // With gravity removed, qdᵀ (Ṁ/2 q̇ − C q̇) = 0, i.e. qdᵀ h = ½ qdᵀ Ṁ qd.
    let arm = SerialArm::default_elbow();
    let q = nominal_q();
    let qd = JointVector::new(0.3, -0.4, 0.5, 0.6, -0.7, 0.8);
    let (_, g) = manipulator_dynamics(&arm, &q, &JointVector::zeros());
    let (_, h) = manipulator_dynamics(&arm, &q, &qd);
    let eps = 1e-6;
    let (mp, _) = manipulator_dynamics(&arm, &(q + qd * eps), &JointVector::zeros());
    let (mm, _) = manipulator_dynamics(&arm, &(q - qd * eps), &JointVector::zeros());
    let m_dot = (mp - mm) / (2.0 * eps);
    let lhs = qd.dot(&(h - g));
    let rhs = 0.5 * qd.dot(&(m_dot * qd));
    assert_relative_eq!(lhs, rhs, epsilon = 1e-6, max_relative = 1e-7);
}

#[test]
fn equilibrium_torque_holds_configuration() {
    let arm = SerialArm::default_elbow();
    let att = payload();
    let q = nominal_q();
    let state = ManipulatorState::new(&arm, &att.c, q, JointVector::zeros());
    let (_, h_t) = combined_dynamics(&state, &att);
    let tau = inverse_dynamics(&arm, &[attached(&att)], &q, &JointVector::zeros(), &JointVector::zeros());
    assert_relative_eq!(h_t, tau, epsilon = 1e-9);
}

#[test]
fn vanishing_payload_recovers_arm_dynamics() {
    let arm = SerialArm::default_elbow();
    let mut att = payload();
    att.payload.inertia = att.payload.inertia.scaled(1e-12).unwrap();
    let q = nominal_q();
    let qd = JointVector::new(0.1, 0.2, 0.3, -0.1, -0.2, -0.3);
    let state = ManipulatorState::new(&arm, &att.c, q, qd);
    let (m_t, h_t) = combined_dynamics(&state, &att);
    assert_relative_eq!(m_t, state.m_r, epsilon = 1e-9);
    assert_relative_eq!(h_t, state.h_r, epsilon = 1e-9);
}

#[test]
fn stage_cartesian_inertia_is_carriage_inertia() {
    let carriage = Inertia6::from_diagonal(30.0, [2.0, 3.0, 4.0]).unwrap();
    let cm = Vec3::new(0.0, 0.1, 0.2);
    let stage = CartesianStage::new(carriage.clone(), cm).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let mut q = random_q(&mut rng);
        q[4] = q[4].clamp(-1.2, 1.2);
        let state = ManipulatorState::new(&stage, &cm, q, JointVector::zeros());
        let m_cr = cartesian_inertia(&state).unwrap();
        assert_relative_eq!(m_cr, carriage.matrix(), epsilon = 1e-9);
    }
}

#[test]
fn cartesian_inertia_matches_explicit_inverse() {
    let arm = SerialArm::default_elbow();
    let c = payload().c;
    let state = ManipulatorState::new(&arm, &c, nominal_q(), JointVector::zeros());
    let j_inv = state.jacobian.try_inverse().unwrap();
    let explicit = j_inv.transpose() * state.m_r * j_inv;
    let m_cr = cartesian_inertia(&state).unwrap();
    assert_relative_eq!(m_cr, explicit, epsilon = 1e-8, max_relative = 1e-10);
    assert!(m_cr.cholesky().is_some());
}

#[test]
fn singular_configuration_is_rejected() {
    let arm = SerialArm::default_elbow();
    let state = ManipulatorState::new(&arm, &Vec3::zeros(), JointVector::zeros(), JointVector::zeros());
    assert!(matches!(
        state.check_conditioning(),
        Err(EmuError::NearSingularJacobian { .. })
    ));
    let state = ManipulatorState::new(&arm, &Vec3::zeros(), nominal_q(), JointVector::zeros());
    assert!(state.condition_number() < 1e3);
}

#[test]
fn arm_table_validation() {
    let mut table = ArmTable::default_elbow();
    table.joint.pop();
    assert!(SerialArm::from_table(&table).is_err());
    let mut table = ArmTable::default_elbow();
    table.gravity_direction = [0.0, 0.0, -2.0];
    assert!(SerialArm::from_table(&table).is_err());
    let mut table = ArmTable::default_elbow();
    table.link[2].inertia = [1.0, 1.0, -1.0, 0.0, 0.0, 0.0];
    assert!(matches!(
        SerialArm::from_table(&table),
        Err(EmuError::NonSpdInertia(_))
    ));
}
