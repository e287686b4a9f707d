//! Closed-loop stability analysis of the emulation controller.
//!
//! With zero force-estimation error the tracking error obeys
//! `M_r q̈̃ + M_t (K_d q̇̃ + K_p q̃) = 0`, i.e. a PD loop perturbed by
//! `Q = M_r⁻¹ Jᵀ M_m J`. The loop is exponentially stable when `‖Q‖ ≤ α`.

use std::fmt;

use nalgebra::{Matrix2, Matrix6};
use serde::{Deserialize, Serialize};

use crate::controller::EmulationGains;
use crate::error::{EmuError, Result};
use crate::manipulator::{cartesian_inertia, JointVector, Manipulator, ManipulatorState, PayloadAttachment};
use crate::spatial::{spectral_norm, Inertia6};

/// Default number of workspace samples.
pub const DEFAULT_SAMPLES: usize = 4096;

/// `Q(q) = M_r⁻¹ Jᵀ M_m J`.
pub fn q_matrix(model: &dyn Manipulator, attachment: &PayloadAttachment, q: &JointVector) -> Matrix6<f64> {
    let state = ManipulatorState::new(model, &attachment.c, *q, JointVector::zeros());
    q_matrix_at(&state, &attachment.payload.inertia)
}

fn q_matrix_at(state: &ManipulatorState, payload: &Inertia6) -> Matrix6<f64> {
    let j = &state.jacobian;
    let rhs = j.transpose() * payload.matrix() * j;
    state
        .m_r
        .cholesky()
        .expect("manipulator inertia is positive definite")
        .solve(&rhs)
}

/// `α(k_p, k_d) = k_p k_d / ((k_p + 1)² + k_d²)^{3/2}`.
pub fn alpha(gains: &EmulationGains) -> f64 {
    let (kp, kd) = (gains.k_p, gains.k_d);
    kp * kd / ((kp + 1.0).powi(2) + kd * kd).powf(1.5)
}

/// Gains maximizing `α`: `k_p = 1`, `k_d = √2`.
pub fn max_alpha_gains() -> EmulationGains {
    EmulationGains {
        k_p: 1.0,
        k_d: std::f64::consts::SQRT_2,
    }
}

/// Largest achievable `α`, `1 / (4√2 (3/2)^{3/2})`.
pub fn max_alpha() -> f64 {
    alpha(&max_alpha_gains())
}

/// Gains for a workspace bound `‖Q‖ ≤ q_norm_max`, or `None` if no positive
/// gains satisfy the condition.
pub fn suggest_gains(q_norm_max: f64) -> Option<EmulationGains> {
    (q_norm_max <= max_alpha()).then(max_alpha_gains)
}

/// State matrix of one axis of the unperturbed error dynamics.
pub fn error_dynamics_matrix(gains: &EmulationGains) -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -gains.k_p, -gains.k_d)
}

/// Solution of `PA + AᵀP = −I` for the scalar-gain error dynamics.
pub fn lyapunov_p(gains: &EmulationGains) -> Matrix2<f64> {
    let (kp, kd) = (gains.k_p, gains.k_d);
    Matrix2::new(kp * (kp + 1.0) + kd * kd, kd, kd, kp + 1.0) / (2.0 * kp * kd)
}

/// Upper bound `((k_p + 1)² + k_d²) / (2 k_p k_d)` on `λ_max(P)`.
pub fn lambda_max_p_bound(gains: &EmulationGains) -> f64 {
    let (kp, kd) = (gains.k_p, gains.k_d);
    ((kp + 1.0).powi(2) + kd * kd) / (2.0 * kp * kd)
}

/// Decay rate of `‖x‖` implied by the Lyapunov argument,
/// `(1 − 2√(k_p² + k_d²) λ_max(P) ‖Q‖) / (2 λ_max(P))`; non-positive when the
/// argument does not apply.
pub fn lyapunov_decay_rate(gains: &EmulationGains, q_norm: f64) -> f64 {
    let lmax = lyapunov_p(gains).symmetric_eigen().eigenvalues.max();
    let margin = 1.0 - 2.0 * gains.k_p.hypot(gains.k_d) * lmax * q_norm;
    margin / (2.0 * lmax)
}

/// `a = (k_p² + k_d²)(1 + ‖Q‖)‖x(0)‖`, the acceleration-error amplitude.
pub fn acceleration_error_amplitude(gains: &EmulationGains, q_norm: f64, x0_norm: f64) -> f64 {
    (gains.k_p.powi(2) + gains.k_d.powi(2)) * (1.0 + q_norm) * x0_norm
}

/// Joint box sampled for workspace suprema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointBox {
    pub lower: [f64; 6],
    pub upper: [f64; 6],
}

impl JointBox {
    pub fn around(center: &JointVector, half_width: f64) -> Self {
        Self {
            lower: std::array::from_fn(|i| center[i] - half_width),
            upper: std::array::from_fn(|i| center[i] + half_width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return Err(EmuError::InvalidScenario(
                "workspace box lower bounds must not exceed upper bounds".into(),
            ));
        }
        Ok(())
    }

    /// Deterministic Halton points (bases 2, 3, 5, 7, 11, 13) in the box.
    pub fn halton_samples(&self, count: usize) -> Vec<JointVector> {
        const BASES: [u32; 6] = [2, 3, 5, 7, 11, 13];
        (1..=count)
            .map(|i| {
                JointVector::from_fn(|j, _| {
                    let u = radical_inverse(i as u64, BASES[j]);
                    self.lower[j] + u * (self.upper[j] - self.lower[j])
                })
            })
            .collect()
    }
}

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub samples: usize,
    /// Sampled supremum of `‖Q(q)‖₂`.
    pub q_norm_max: f64,
    pub alpha: f64,
    /// `‖Q‖ ≤ α` at every sample.
    pub satisfied_q_condition: bool,
    /// `λ_max(M_m) ≤ α λ_min(M_r) / λ_max(JJᵀ)` at every sample.
    pub satisfied_mass_inequality: bool,
    /// Smallest sampled `α λ_min(M_r) / λ_max(JJᵀ)`.
    pub mass_bound: f64,
    pub lambda_max_payload: f64,
    pub p: Matrix2<f64>,
    pub lambda_max_p: f64,
    /// Sampled `max_q ‖J‖₂`.
    pub sigma: f64,
    pub suggested_decay_omega: f64,
}

/// Evaluates both stability conditions over the given joint samples.
pub fn check_mass_inequality(
    model: &dyn Manipulator,
    attachment: &PayloadAttachment,
    gains: &EmulationGains,
    samples: &[JointVector],
) -> Result<StabilityReport> {
    if samples.is_empty() {
        return Err(EmuError::InvalidScenario("workspace sample set is empty".into()));
    }
    let a = alpha(gains);
    let payload = &attachment.payload.inertia;
    let lambda_m = payload.lambda_max();
    let mut q_norm_max: f64 = 0.0;
    let mut sigma: f64 = 0.0;
    let mut mass_bound = f64::INFINITY;
    for q in samples {
        let state = ManipulatorState::new(model, &attachment.c, *q, JointVector::zeros());
        q_norm_max = q_norm_max.max(spectral_norm(&q_matrix_at(&state, payload)));
        let jj = state.jacobian * state.jacobian.transpose();
        let jj_max = jj.symmetric_eigen().eigenvalues.max();
        sigma = sigma.max(jj_max.sqrt());
        let mr_min = state.m_r.symmetric_eigen().eigenvalues.min();
        mass_bound = mass_bound.min(a * mr_min / jj_max);
    }
    let p = lyapunov_p(gains);
    Ok(StabilityReport {
        samples: samples.len(),
        q_norm_max,
        alpha: a,
        satisfied_q_condition: q_norm_max <= a,
        satisfied_mass_inequality: lambda_m <= mass_bound,
        mass_bound,
        lambda_max_payload: lambda_m,
        p,
        lambda_max_p: p.symmetric_eigen().eigenvalues.max(),
        sigma,
        suggested_decay_omega: lyapunov_decay_rate(gains, q_norm_max),
    })
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples = {}", self.samples)?;
        writeln!(f, "q_norm_max = {:.16e}", self.q_norm_max)?;
        writeln!(f, "alpha = {:.16e}", self.alpha)?;
        writeln!(f, "q_condition = {}", self.satisfied_q_condition)?;
        writeln!(f, "mass_inequality = {}", self.satisfied_mass_inequality)?;
        writeln!(f, "mass_bound = {:.16e}", self.mass_bound)?;
        writeln!(f, "lambda_max_payload = {:.16e}", self.lambda_max_payload)?;
        writeln!(
            f,
            "p = [{:.16e}, {:.16e}; {:.16e}, {:.16e}]",
            self.p[(0, 0)],
            self.p[(0, 1)],
            self.p[(1, 0)],
            self.p[(1, 1)]
        )?;
        writeln!(f, "lambda_max_p = {:.16e}", self.lambda_max_p)?;
        writeln!(f, "sigma = {:.16e}", self.sigma)?;
        writeln!(f, "suggested_decay_omega = {:.16e}", self.suggested_decay_omega)
    }
}

/// `‖M_Cr(q) + M_m − M_s‖_F`; zero where the force feedback vanishes.
pub fn zero_gain_condition(
    model: &dyn Manipulator,
    flight: &Inertia6,
    attachment: &PayloadAttachment,
    q: &JointVector,
) -> Result<f64> {
    let state = ManipulatorState::new(model, &attachment.c, *q, JointVector::zeros());
    let m_cr = cartesian_inertia(&state)?;
    Ok((m_cr + attachment.payload.inertia.matrix() - flight.matrix()).norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub a: f64,
    pub omega: f64,
    /// RMS of `‖x‖ / (a e^{−Ωt}) − 1`.
    pub residual: f64,
}

/// Least-squares fit of `log ‖x‖ = log a − Ω t`.
pub fn fit_decay_envelope(times: &[f64], norms: &[f64]) -> Result<DecayFit> {
    if times.len() != norms.len() || times.len() < 100 {
        return Err(EmuError::InvalidScenario(
            "decay fit needs at least 100 matching samples".into(),
        ));
    }
    if !(norms[0] > 0.0) || norms.iter().any(|x| !(*x > 0.0)) {
        return Err(EmuError::InvalidScenario(
            "decay fit needs a strictly positive error norm".into(),
        ));
    }
    let n = times.len() as f64;
    let ys: Vec<f64> = norms.iter().map(|x| x.ln()).collect();
    let tm = times.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let (mut stt, mut sty) = (0.0, 0.0);
    for (t, y) in times.iter().zip(&ys) {
        stt += (t - tm) * (t - tm);
        sty += (t - tm) * (y - ym);
    }
    let slope = sty / stt;
    if !(slope < 0.0) {
        return Err(EmuError::NonDecayingError { slope });
    }
    let a = (ym - slope * tm).exp();
    let residual = (times
        .iter()
        .zip(norms)
        .map(|(t, x)| (x / (a * (slope * t).exp()) - 1.0).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(DecayFit {
        a,
        omega: -slope,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::manipulator::{CartesianStage, SerialArm};
    use crate::spacecraft::RigidSpacecraft;
    use crate::spatial::Vec3;

    fn attachment(mass: f64, diag: [f64; 3]) -> PayloadAttachment {
        PayloadAttachment {
            payload: RigidSpacecraft::new("test", Inertia6::from_diagonal(mass, diag).unwrap()),
            c: Vec3::new(0.0, 0.0, 0.2),
        }
    }

    fn nominal() -> JointVector {
        JointVector::new(0.3, 0.4, -0.2, 0.5, 0.8, -0.6)
    }

    #[test]
    fn alpha_examples() {
        let a = alpha(&EmulationGains::new(1.0, 1.0).unwrap());
        assert_relative_eq!(a, 5f64.powf(-1.5), epsilon = 1e-15);
        assert!((a - 0.089443).abs() < 1e-6);
        assert!(alpha(&EmulationGains::new(1e-9, 1.0).unwrap()) < 1e-9);
        assert!(alpha(&EmulationGains::new(1.0, 1e-9).unwrap()) < 1e-9);
        let a21 = alpha(&EmulationGains::new(2.0, 1.0).unwrap());
        let a12 = alpha(&EmulationGains::new(1.0, 2.0).unwrap());
        assert!((a21 - a12).abs() > 1e-3);
    }

    #[test]
    fn maximal_alpha() {
        assert_relative_eq!(max_alpha(), 1.0 / (4.0 * 2f64.sqrt() * 1.5f64.powf(1.5)), epsilon = 1e-15);
        for kp in [0.5, 0.9, 1.1, 2.0] {
            for kd in [1.0, 1.3, 1.5, 2.0] {
                assert!(alpha(&EmulationGains::new(kp, kd).unwrap()) <= max_alpha());
            }
        }
        assert_eq!(suggest_gains(0.01), Some(max_alpha_gains()));
        assert_eq!(suggest_gains(0.2), None);
    }

    #[test]
    fn lyapunov_unit_gains() {
        let g = EmulationGains::new(1.0, 1.0).unwrap();
        let p = lyapunov_p(&g);
        assert_relative_eq!(p, Matrix2::new(1.5, 0.5, 0.5, 1.0), epsilon = 1e-15);
        let a = error_dynamics_matrix(&g);
        assert!((p * a + a.transpose() * p + Matrix2::identity()).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn lyapunov_solution_for_random_gains(kp in 0.01f64..50.0, kd in 0.01f64..50.0) {
            let g = EmulationGains::new(kp, kd).unwrap();
            let p = lyapunov_p(&g);
            let a = error_dynamics_matrix(&g);
            let res = p * a + a.transpose() * p + Matrix2::identity();
            prop_assert!(res.norm() < 1e-12 * (1.0 + p.norm()));
            let eig = p.symmetric_eigen().eigenvalues;
            prop_assert!(eig.min() > 0.0);
            prop_assert!(eig.max() <= lambda_max_p_bound(&g) * (1.0 + 1e-12));
        }

        #[test]
        fn alpha_from_lyapunov_bound(kp in 0.01f64..50.0, kd in 0.01f64..50.0) {
            // α = 1 / (2 s b) with s = √((k_p+1)² + k_d²) and b the λ_max(P) bound.
            let g = EmulationGains::new(kp, kd).unwrap();
            let s = ((kp + 1.0).powi(2) + kd * kd).sqrt();
            let via_bound = 1.0 / (2.0 * s * lambda_max_p_bound(&g));
            prop_assert!((alpha(&g) - via_bound).abs() <= 1e-12 * alpha(&g).max(1e-300));
        }
    }

    #[test]
    fn q_matrix_properties() {
        let arm = SerialArm::default_elbow();
        let q = nominal();
        let tiny = attachment(1e-12, [1e-12, 1e-12, 1e-12]);
        assert!(spectral_norm(&q_matrix(&arm, &tiny, &q)) < 1e-10);
        let one = attachment(5.0, [0.2, 0.3, 0.25]);
        let two = attachment(10.0, [0.4, 0.6, 0.5]);
        assert_relative_eq!(q_matrix(&arm, &two, &q), q_matrix(&arm, &one, &q) * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn q_norm_respects_conservative_bound() {
        let arm = SerialArm::default_elbow();
        let att = attachment(5.0, [0.2, 0.3, 0.25]);
        for q in JointBox::around(&nominal(), 1.5).halton_samples(200) {
            let state = ManipulatorState::new(&arm, &att.c, q, JointVector::zeros());
            let qn = spectral_norm(&q_matrix(&arm, &att, &q));
            let jj = (state.jacobian * state.jacobian.transpose()).symmetric_eigen().eigenvalues.max();
            let mr = state.m_r.symmetric_eigen().eigenvalues.min();
            assert!(qn <= att.payload.inertia.lambda_max() * jj / mr * (1.0 + 1e-10));
        }
    }

    #[test]
    fn halton_points_fill_box() {
        let b = JointBox::around(&JointVector::zeros(), 1.0);
        let pts = b.halton_samples(4096);
        assert_eq!(pts.len(), 4096);
        assert!(pts.iter().all(|p| p.iter().all(|x| (-1.0..=1.0).contains(x))));
        let mean = pts.iter().sum::<JointVector>() / 4096.0;
        assert!(mean.norm() < 0.01);
        assert_relative_eq!(radical_inverse(1, 2), 0.5);
        assert_relative_eq!(radical_inverse(3, 2), 0.75);
        assert_relative_eq!(radical_inverse(5, 3), 7.0 / 9.0);
    }

    #[test]
    fn mass_inequality_flags() {
        let arm = SerialArm::default_elbow();
        let gains = EmulationGains::new(1.0, 1.0).unwrap();
        let samples = JointBox::around(&nominal(), 0.5).halton_samples(256);
        let tiny = attachment(1e-6, [1e-7, 1e-7, 1e-7]);
        let r = check_mass_inequality(&arm, &tiny, &gains, &samples).unwrap();
        assert!(r.satisfied_q_condition && r.satisfied_mass_inequality);

        // Mass inequality fails while the sampled Q condition still holds.
        let mut found = false;
        for scale in [1e3, 3e3, 1e4, 3e4, 1e5, 3e5] {
            let att = attachment(1e-6 * scale, [1e-7 * scale, 1e-7 * scale, 1e-7 * scale]);
            let r = check_mass_inequality(&arm, &att, &gains, &samples).unwrap();
            if !r.satisfied_mass_inequality && r.satisfied_q_condition {
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn flags_are_monotone_in_payload_mass() {
        let arm = SerialArm::default_elbow();
        let gains = EmulationGains::new(1.0, 1.0).unwrap();
        let samples = JointBox::around(&nominal(), 0.5).halton_samples(128);
        let mut prev = (true, true);
        for k in 0..12 {
            let s = 1e-3 * 2f64.powi(k);
            let att = attachment(s, [0.05 * s, 0.05 * s, 0.05 * s]);
            let r = check_mass_inequality(&arm, &att, &gains, &samples).unwrap();
            assert!(!r.satisfied_q_condition || prev.0);
            assert!(!r.satisfied_mass_inequality || prev.1);
            prev = (r.satisfied_q_condition, r.satisfied_mass_inequality);
        }
        assert!(!prev.0 && !prev.1);
    }

    #[test]
    fn empty_samples_rejected() {
        let arm = SerialArm::default_elbow();
        let gains = EmulationGains::new(1.0, 1.0).unwrap();
        assert!(check_mass_inequality(&arm, &attachment(1.0, [0.1, 0.1, 0.1]), &gains, &[]).is_err());
    }

    #[test]
    fn zero_gain_on_cartesian_stage() {
        let carriage = Inertia6::from_diagonal(30.0, [2.0, 3.0, 4.0]).unwrap();
        let c = Vec3::new(0.0, 0.0, 0.2);
        let stage = CartesianStage::new(carriage.clone(), c).unwrap();
        let att = PayloadAttachment {
            payload: RigidSpacecraft::new("test", Inertia6::from_diagonal(10.0, [1.0, 1.0, 1.0]).unwrap()),
            c,
        };
        let flight = Inertia6::new(40.0, carriage.inertia() + att.payload.inertia.inertia()).unwrap();
        for q in JointBox::around(&JointVector::zeros(), 1.0).halton_samples(50) {
            assert!(zero_gain_condition(&stage, &flight, &att, &q).unwrap() < 1e-9);
        }
    }

    #[test]
    fn zero_gain_generic_arm_nonzero() {
        let arm = SerialArm::default_elbow();
        let att = attachment(10.0, [1.0, 1.0, 1.0]);
        let flight = Inertia6::from_diagonal(200.0, [120.0, 100.0, 80.0]).unwrap();
        for q in JointBox::around(&nominal(), 0.3).halton_samples(20) {
            assert!(zero_gain_condition(&arm, &flight, &att, &q).unwrap() > 1.0);
        }
        // M_s = M_m leaves exactly the Cartesian inertia.
        let q = nominal();
        let state = ManipulatorState::new(&arm, &att.c, q, JointVector::zeros());
        let m_cr = cartesian_inertia(&state).unwrap();
        let r = zero_gain_condition(&arm, &att.payload.inertia, &att, &q).unwrap();
        assert_relative_eq!(r, m_cr.norm(), max_relative = 1e-12);
    }

    #[test]
    fn decay_fit_examples() {
        let t: Vec<f64> = (0..500).map(|i| i as f64 * 0.01).collect();
        let x: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        let fit = fit_decay_envelope(&t, &x).unwrap();
        assert!((fit.omega - 2.0).abs() < 0.02);
        assert_relative_eq!(fit.a, 1.0, epsilon = 1e-10);
        assert!(fit.residual < 1e-10);
        let flat = vec![1.0; 500];
        assert!(matches!(fit_decay_envelope(&t, &flat), Err(EmuError::NonDecayingError { .. })));
        assert!(fit_decay_envelope(&t[..50], &x[..50]).is_err());
    }

    #[test]
    fn report_is_key_value_text() {
        let arm = SerialArm::default_elbow();
        let gains = EmulationGains::new(1.0, 1.0).unwrap();
        let samples = JointBox::around(&nominal(), 0.2).halton_samples(8);
        let r = check_mass_inequality(&arm, &attachment(0.1, [0.01, 0.01, 0.01]), &gains, &samples).unwrap();
        let text = r.to_string();
        assert!(text.lines().all(|l| l.contains(" = ")));
        assert!(text.contains("alpha = 8.94427190999915"));
    }
}
