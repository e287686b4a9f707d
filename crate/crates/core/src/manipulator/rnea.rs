//! Recursive Newton-Euler inverse dynamics in the world frame.
//!
//! Independent of the Jacobian projection used by
//! [`super::manipulator_dynamics`]; bodies can be welded to any link, which
//! lets the arm and its payload be treated as one `n + 1` body system.

use nalgebra::Matrix6;

use super::{JointKind, JointVector, Manipulator};
use crate::spatial::{Mat3, Vec3, GRAVITY};

/// Rigid body welded to a link; mass properties in that link's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttachedBody {
    pub link: usize,
    pub mass: f64,
    pub com: Vec3,
    pub inertia: Mat3,
}

/// Joint forces `τ` required for accelerations `qdd` at `(q, qd)`, gravity
/// included.
pub fn inverse_dynamics(
    model: &dyn Manipulator,
    extra: &[AttachedBody],
    q: &JointVector,
    qd: &JointVector,
    qdd: &JointVector,
) -> JointVector {
    inverse_dynamics_with_gravity(model, extra, q, qd, qdd, GRAVITY)
}

fn inverse_dynamics_with_gravity(
    model: &dyn Manipulator,
    extra: &[AttachedBody],
    q: &JointVector,
    qd: &JointVector,
    qdd: &JointVector,
    g: f64,
) -> JointVector {
    let chain = model.chain(q);
    let gvec = model.gravity_direction() * g;
    let n = chain.axes.len();

    let mut refpt = vec![Vec3::zeros(); n];
    let mut omega = vec![Vec3::zeros(); n];
    let mut alpha = vec![Vec3::zeros(); n];
    let mut vel = vec![Vec3::zeros(); n];
    let mut acc = vec![Vec3::zeros(); n];

    let (mut w_prev, mut wd_prev, mut v_prev, mut a_prev, mut p_prev) = (
        Vec3::zeros(),
        Vec3::zeros(),
        Vec3::zeros(),
        Vec3::zeros(),
        chain.axes[0].origin,
    );
    for j in 0..n {
        let ax = &chain.axes[j];
        let r = ax.origin - p_prev;
        let v_c = v_prev + w_prev.cross(&r);
        let a_c = a_prev + wd_prev.cross(&r) + w_prev.cross(&w_prev.cross(&r));
        let z = ax.axis;
        let (w, wd, v, a) = match ax.kind {
            JointKind::Revolute => (
                w_prev + z * qd[j],
                wd_prev + z * qdd[j] + w_prev.cross(&z) * qd[j],
                v_c,
                a_c,
            ),
            JointKind::Prismatic => (
                w_prev,
                wd_prev,
                v_c + z * qd[j],
                a_c + z * qdd[j] + w_prev.cross(&z) * (2.0 * qd[j]),
            ),
        };
        refpt[j] = ax.origin;
        omega[j] = w;
        alpha[j] = wd;
        vel[j] = v;
        acc[j] = a;
        (w_prev, wd_prev, v_prev, a_prev, p_prev) = (w, wd, v, a, ax.origin);
    }

    // Resultant force and moment (about the reference point) on each link.
    let mut force = vec![Vec3::zeros(); n];
    let mut moment = vec![Vec3::zeros(); n];
    let bodies = model
        .links()
        .iter()
        .enumerate()
        .map(|(j, l)| (j, l.mass, l.com, l.inertia))
        .chain(extra.iter().map(|b| (b.link, b.mass, b.com, b.inertia)));
    for (j, mass, com, inertia) in bodies {
        let (rk, ok) = chain.frames[j];
        let r = ok + rk * com - refpt[j];
        let a_cm = acc[j] + alpha[j].cross(&r) + omega[j].cross(&omega[j].cross(&r));
        let f = (a_cm - gvec) * mass;
        let iw = rk * inertia * rk.transpose();
        let nm = iw * alpha[j] + omega[j].cross(&(iw * omega[j]));
        force[j] += f;
        moment[j] += nm + r.cross(&f);
    }

    let mut tau = JointVector::zeros();
    let (mut f_next, mut n_next, mut p_next) = (Vec3::zeros(), Vec3::zeros(), Vec3::zeros());
    for j in (0..n).rev() {
        let f = force[j] + f_next;
        let m = moment[j] + n_next + (p_next - refpt[j]).cross(&f_next);
        let z = chain.axes[j].axis;
        tau[j] = match chain.axes[j].kind {
            JointKind::Revolute => z.dot(&m),
            JointKind::Prismatic => z.dot(&f),
        };
        (f_next, n_next, p_next) = (f, m, refpt[j]);
    }
    tau
}

/// `(M, h)` assembled from repeated inverse-dynamics calls.
pub fn mass_and_bias(
    model: &dyn Manipulator,
    extra: &[AttachedBody],
    q: &JointVector,
    qd: &JointVector,
) -> (Matrix6<f64>, JointVector) {
    let zero = JointVector::zeros();
    let h = inverse_dynamics(model, extra, q, qd, &zero);
    let mut m = Matrix6::zeros();
    for i in 0..6 {
        let mut e = JointVector::zeros();
        e[i] = 1.0;
        m.set_column(
            i,
            &inverse_dynamics_with_gravity(model, extra, q, &zero, &e, 0.0),
        );
    }
    (m, h)
}
