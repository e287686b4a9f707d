use super::{ChainPose, JointAxis, JointKind, JointVector, LinkInertia, Manipulator};
use crate::error::Result;
use crate::spatial::{rot_x, rot_y, rot_z, Inertia6, RotationMatrix, Vec3};

/// Ideal six-axis Cartesian stage: three prismatic axes along world x, y, z
/// followed by a z-y-x rotary head, `R = Rz(q₄) Ry(q₅) Rx(q₆)`.
///
/// All moving mass sits in a single carriage rigidly attached to the head,
/// with its CM at `carriage_cm` in the flange frame. When the payload CM
/// coincides with the carriage CM, the Cartesian inertia seen by the payload is
/// the carriage's own constant, diagonal generalized inertia.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianStage {
    links: Vec<LinkInertia>,
    gravity: Vec3,
}

impl CartesianStage {
    pub fn new(carriage: Inertia6, carriage_cm: Vec3) -> Result<Self> {
        let mut links = vec![LinkInertia::massless(); 6];
        links[5] = LinkInertia {
            mass: carriage.mass(),
            com: carriage_cm,
            inertia: *carriage.inertia(),
        };
        Ok(Self {
            links,
            gravity: Vec3::new(0.0, 0.0, -1.0),
        })
    }

    pub fn carriage(&self) -> &LinkInertia {
        &self.links[5]
    }
}

impl Manipulator for CartesianStage {
    fn name(&self) -> &str {
        "cartesian"
    }

    fn chain(&self, q: &JointVector) -> ChainPose {
        let p = Vec3::new(q[0], q[1], q[2]);
        let rz = rot_z(q[3]);
        let rzy = rz * rot_y(q[4]);
        let r = rzy * rot_x(q[5]);
        let prismatic = |axis: Vec3| JointAxis {
            kind: JointKind::Prismatic,
            axis,
            origin: Vec3::zeros(),
        };
        let revolute = |axis: Vec3| JointAxis {
            kind: JointKind::Revolute,
            axis,
            origin: p,
        };
        let axes = vec![
            prismatic(Vec3::x()),
            prismatic(Vec3::y()),
            prismatic(Vec3::z()),
            revolute(Vec3::z()),
            revolute(rz * Vec3::y()),
            revolute(rzy * Vec3::x()),
        ];
        let id = RotationMatrix::identity();
        let frames = vec![
            (id, Vec3::new(q[0], 0.0, 0.0)),
            (id, Vec3::new(q[0], q[1], 0.0)),
            (id, p),
            (rz, p),
            (rzy, p),
            (r, p),
        ];
        ChainPose { axes, frames }
    }

    fn links(&self) -> &[LinkInertia] {
        &self.links
    }

    fn gravity_direction(&self) -> Vec3 {
        self.gravity
    }
}
