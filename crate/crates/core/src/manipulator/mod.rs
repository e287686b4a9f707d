//! Serial-chain manipulator kinematics and dynamics, and the combined
//! manipulator + payload model.
//!
//! Every chain is described by its joint axes in the world frame {W} at a given
//! configuration ([`ChainPose`]); Jacobians, their time derivatives and the
//! joint-space dynamics are computed generically from that description, so the
//! six-revolute arm and the Cartesian stage share one implementation.
//!
//! Payload quantities are expressed in the payload CM frame {C}, which is
//! parallel to the flange frame and offset from it by `c`.

mod dh;
pub mod rnea;
mod stage;

use std::fmt;

use nalgebra::{Matrix6, Vector6};

use crate::error::{EmuError, Result};
use crate::spacecraft::{gyric_term, RigidSpacecraft};
use crate::spatial::{block_diag, bottom, six, skew, top, Mat3, Mat6, RotationMatrix, Vec3, GRAVITY};

pub use dh::{ArmTable, JointRow, LinkRow, SerialArm};
pub use stage::CartesianStage;

pub type JointVector = Vector6<f64>;
pub type Jacobian = Matrix6<f64>;

/// Condition number of `J` above which a configuration is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// Mass properties of one link, expressed in that link's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkInertia {
    pub mass: f64,
    pub com: Vec3,
    /// Inertia about the link CM.
    pub inertia: Mat3,
}

impl LinkInertia {
    pub fn massless() -> Self {
        Self {
            mass: 0.0,
            com: Vec3::zeros(),
            inertia: Mat3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointAxis {
    pub kind: JointKind,
    /// Unit axis in {W}.
    pub axis: Vec3,
    /// A point on the axis in {W}.
    pub origin: Vec3,
}

/// World-frame geometry of a chain at one configuration. `frames[j]` is the
/// pose of the link moved by joint `j`; the last entry is the flange.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPose {
    pub axes: Vec<JointAxis>,
    pub frames: Vec<(RotationMatrix, Vec3)>,
}

impl ChainPose {
    pub fn flange(&self) -> &(RotationMatrix, Vec3) {
        self.frames.last().expect("non-empty chain")
    }

    /// World Jacobian `[linear; angular]` of a point rigidly attached to link
    /// `link`. Columns of joints beyond `link` are zero.
    pub fn point_jacobian(&self, link: usize, p: &Vec3) -> Jacobian {
        let mut j = Jacobian::zeros();
        for (i, ax) in self.axes.iter().enumerate().take(link + 1) {
            let col = match ax.kind {
                JointKind::Revolute => six(&ax.axis.cross(&(p - ax.origin)), &ax.axis),
                JointKind::Prismatic => six(&ax.axis, &Vec3::zeros()),
            };
            j.set_column(i, &col);
        }
        j
    }

    /// Velocity-dependent rates of the axes for joint velocities `qd`.
    pub fn rates(&self, qd: &JointVector) -> ChainRates {
        let n = self.axes.len();
        let mut carrier_omega = vec![Vec3::zeros(); n];
        let mut link_omega = vec![Vec3::zeros(); n];
        let mut omega = Vec3::zeros();
        for (j, ax) in self.axes.iter().enumerate() {
            carrier_omega[j] = omega;
            if ax.kind == JointKind::Revolute {
                omega += ax.axis * qd[j];
            }
            link_omega[j] = omega;
        }
        let axis_dot = self
            .axes
            .iter()
            .zip(&carrier_omega)
            .map(|(ax, w)| w.cross(&ax.axis))
            .collect();
        let origin_vel = (0..n)
            .map(|j| self.point_velocity(j.saturating_sub(1), j > 0, &self.axes[j].origin, qd))
            .collect();
        ChainRates {
            carrier_omega,
            link_omega,
            axis_dot,
            origin_vel,
        }
    }

    fn point_velocity(&self, link: usize, moving: bool, p: &Vec3, qd: &JointVector) -> Vec3 {
        if !moving {
            return Vec3::zeros();
        }
        self.axes
            .iter()
            .enumerate()
            .take(link + 1)
            .map(|(i, ax)| match ax.kind {
                JointKind::Revolute => ax.axis.cross(&(p - ax.origin)) * qd[i],
                JointKind::Prismatic => ax.axis * qd[i],
            })
            .sum()
    }

    /// Time derivative of [`Self::point_jacobian`] along `qd`.
    pub fn point_jacobian_dot(
        &self,
        rates: &ChainRates,
        link: usize,
        p: &Vec3,
        qd: &JointVector,
    ) -> Jacobian {
        let p_dot = self.point_velocity(link, true, p, qd);
        let mut jd = Jacobian::zeros();
        for (i, ax) in self.axes.iter().enumerate().take(link + 1) {
            let zd = rates.axis_dot[i];
            let col = match ax.kind {
                JointKind::Revolute => six(
                    &(zd.cross(&(p - ax.origin)) + ax.axis.cross(&(p_dot - rates.origin_vel[i]))),
                    &zd,
                ),
                JointKind::Prismatic => six(&zd, &Vec3::zeros()),
            };
            jd.set_column(i, &col);
        }
        jd
    }
}

/// Angular velocities of the frames carrying each axis, of each link, and the
/// rates of change of the axes and their origins.
#[derive(Debug, Clone)]
pub struct ChainRates {
    pub carrier_omega: Vec<Vec3>,
    pub link_omega: Vec<Vec3>,
    pub axis_dot: Vec<Vec3>,
    pub origin_vel: Vec<Vec3>,
}

pub trait Manipulator: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;

    /// Axis geometry and link frames at `q`.
    fn chain(&self, q: &JointVector) -> ChainPose;

    /// One entry per joint, for the link that joint moves.
    fn links(&self) -> &[LinkInertia];

    /// Unit vector along gravity in {W}.
    fn gravity_direction(&self) -> Vec3;
}

/// Pose of the payload CM frame {C}: `(R, c_pos)` in {W}.
pub fn forward_kinematics(
    model: &dyn Manipulator,
    q: &JointVector,
    c: &Vec3,
) -> (RotationMatrix, Vec3) {
    let chain = model.chain(q);
    let (r, o) = *chain.flange();
    (r, o + r * c)
}

/// Jacobian of the payload CM twist expressed in {C}.
pub fn jacobian(model: &dyn Manipulator, q: &JointVector, c: &Vec3) -> Jacobian {
    let chain = model.chain(q);
    body_jacobian(&chain, c).0
}

/// Time derivative of [`jacobian`] along `qd`.
pub fn jacobian_dot(
    model: &dyn Manipulator,
    q: &JointVector,
    qd: &JointVector,
    c: &Vec3,
) -> Jacobian {
    let chain = model.chain(q);
    body_jacobian_and_dot(&chain, c, qd).1
}

fn body_jacobian(chain: &ChainPose, c: &Vec3) -> (Jacobian, RotationMatrix, Vec3) {
    let (r, o) = *chain.flange();
    let p = o + r * c;
    let jw = chain.point_jacobian(chain.axes.len() - 1, &p);
    let rt = r.transpose().into_inner();
    (block_diag(&rt, &rt) * jw, r, p)
}

fn body_jacobian_and_dot(chain: &ChainPose, c: &Vec3, qd: &JointVector) -> (Jacobian, Jacobian) {
    let (j, r, p) = body_jacobian(chain, c);
    let rates = chain.rates(qd);
    let jdw = chain.point_jacobian_dot(&rates, chain.axes.len() - 1, &p, qd);
    let rt = r.transpose().into_inner();
    let w = skew(&bottom(&(j * qd)));
    let jd = block_diag(&rt, &rt) * jdw - block_diag(&w, &w) * j;
    (j, jd)
}

/// Joint-space inertia `M_r` and bias `h_r` (Coriolis, centrifugal and the
/// arm's own gravity load) so that `M_r q̈ + h_r = τ`.
///
/// Computed by projecting each link's Newton-Euler equations through its CM
/// Jacobian.
pub fn manipulator_dynamics(
    model: &dyn Manipulator,
    q: &JointVector,
    qd: &JointVector,
) -> (Matrix6<f64>, JointVector) {
    let chain = model.chain(q);
    let rates = chain.rates(qd);
    chain_dynamics(&chain, &rates, model.links(), &model.gravity_direction(), qd)
}

fn chain_dynamics(
    chain: &ChainPose,
    rates: &ChainRates,
    links: &[LinkInertia],
    gravity_dir: &Vec3,
    qd: &JointVector,
) -> (Matrix6<f64>, JointVector) {
    let g = gravity_dir * GRAVITY;
    let mut m = Matrix6::zeros();
    let mut h = JointVector::zeros();
    for (k, link) in links.iter().enumerate() {
        if link.mass == 0.0 && link.inertia == Mat3::zeros() {
            continue;
        }
        let (rk, ok) = chain.frames[k];
        let p = ok + rk * link.com;
        let jac = chain.point_jacobian(k, &p);
        let jac_dot = chain.point_jacobian_dot(rates, k, &p, qd);
        let jv = jac.fixed_rows::<3>(0);
        let jw = jac.fixed_rows::<3>(3);
        let iw = rk * link.inertia * rk.transpose();
        let w = rates.link_omega[k];
        let acc_bias = jac_dot * qd;
        m += jv.transpose() * jv * link.mass + jw.transpose() * iw * jw;
        h += jv.transpose() * ((top(&acc_bias) - g) * link.mass)
            + jw.transpose() * (iw * bottom(&acc_bias) + w.cross(&(iw * w)));
    }
    (m, h)
}

/// Rigid payload mounted on the flange through the force/moment sensor. The
/// sensor frame {S} is parallel to {C}; `c` locates the payload CM from the
/// sensor origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PayloadAttachment {
    pub payload: RigidSpacecraft,
    pub c: Vec3,
}

/// Kinematic and dynamic quantities of the arm at `(q, q̇)`, computed once per
/// evaluation and shared by the sensor, estimator and controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorState {
    pub q: JointVector,
    pub q_dot: JointVector,
    /// Orientation of {C} in {W}.
    pub rotation: RotationMatrix,
    /// Payload CM position in {W}.
    pub position: Vec3,
    pub jacobian: Jacobian,
    pub jacobian_dot: Jacobian,
    pub m_r: Matrix6<f64>,
    pub h_r: JointVector,
    pub gravity_dir: Vec3,
}

impl ManipulatorState {
    pub fn new(model: &dyn Manipulator, c: &Vec3, q: JointVector, q_dot: JointVector) -> Self {
        let chain = model.chain(&q);
        let rates = chain.rates(&q_dot);
        let (j, jd) = body_jacobian_and_dot(&chain, c, &q_dot);
        let (r, o) = *chain.flange();
        let gravity_dir = model.gravity_direction();
        let (m_r, h_r) = chain_dynamics(&chain, &rates, model.links(), &gravity_dir, &q_dot);
        Self {
            q,
            q_dot,
            rotation: r,
            position: o + r * c,
            jacobian: j,
            jacobian_dot: jd,
            m_r,
            h_r,
            gravity_dir,
        }
    }

    pub fn j_v(&self) -> nalgebra::Matrix3x6<f64> {
        self.jacobian.fixed_rows::<3>(0).into_owned()
    }

    pub fn j_omega(&self) -> nalgebra::Matrix3x6<f64> {
        self.jacobian.fixed_rows::<3>(3).into_owned()
    }

    /// Payload twist `ν = J q̇` in {C}.
    pub fn twist(&self) -> Vector6<f64> {
        self.jacobian * self.q_dot
    }

    /// `J̇ q̇`.
    pub fn bias_acceleration(&self) -> Vector6<f64> {
        self.jacobian_dot * self.q_dot
    }

    /// Gravity direction expressed in {C}, `Rᵀ k`.
    pub fn gravity_in_body(&self) -> Vec3 {
        self.rotation.transpose() * self.gravity_dir
    }

    pub fn condition_number(&self) -> f64 {
        let sv = self.jacobian.singular_values();
        let min = sv.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            sv.max() / min
        }
    }

    pub fn check_conditioning(&self) -> Result<()> {
        let condition = self.condition_number();
        if !(condition <= CONDITION_LIMIT) {
            return Err(EmuError::NearSingularJacobian {
                condition,
                limit: CONDITION_LIMIT,
            });
        }
        Ok(())
    }

    /// `J⁻¹ x` after the conditioning check.
    pub fn solve_jacobian(&self, x: &Vector6<f64>) -> Result<JointVector> {
        self.check_conditioning()?;
        self.jacobian
            .lu()
            .solve(x)
            .ok_or(EmuError::NearSingularJacobian {
                condition: f64::INFINITY,
                limit: CONDITION_LIMIT,
            })
    }
}

/// `M_t = Jᵀ M_m J + M_r` and
/// `h_t = h_r + Jᵀ h_m + Jᵀ M_m J̇ q̇ − m_m g J_vᵀ Rᵀ k`.
pub fn combined_dynamics(
    state: &ManipulatorState,
    attachment: &PayloadAttachment,
) -> (Matrix6<f64>, JointVector) {
    let inertia = &attachment.payload.inertia;
    let mm = inertia.matrix();
    let j = &state.jacobian;
    let m_t = j.transpose() * mm * j + state.m_r;
    let nu = state.twist();
    let h_m = gyric_term(inertia, &nu);
    let weight = state.gravity_in_body() * (inertia.mass() * GRAVITY);
    let h_t = state.h_r + j.transpose() * (h_m + mm * state.bias_acceleration())
        - state.j_v().transpose() * weight;
    (m_t, h_t)
}

/// Cartesian inertia `M_Cr = J⁻ᵀ M_r J⁻¹`.
pub fn cartesian_inertia(state: &ManipulatorState) -> Result<Mat6> {
    state.check_conditioning()?;
    let lu_t = state.jacobian.transpose().lu();
    let singular = || EmuError::NearSingularJacobian {
        condition: f64::INFINITY,
        limit: CONDITION_LIMIT,
    };
    let y = lu_t.solve(&state.m_r).ok_or_else(singular)?;
    let m = lu_t.solve(&y.transpose()).ok_or_else(singular)?;
    Ok((m + m.transpose()) * 0.5)
}

#[cfg(test)]
mod tests;
