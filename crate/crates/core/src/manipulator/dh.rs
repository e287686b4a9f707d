use serde::{Deserialize, Serialize};

use super::{ChainPose, JointAxis, JointKind, JointVector, LinkInertia, Manipulator};
use crate::error::{EmuError, Result};
use crate::spatial::{rot_x, rot_z, Mat3, RotationMatrix, Vec3};

const DEFAULT_TABLE: &str = include_str!("../../data/elbow6r.toml");

/// One row of the Denavit-Hartenberg table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRow {
    #[serde(rename = "type", default = "revolute")]
    pub kind: JointKind,
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

fn revolute() -> JointKind {
    JointKind::Revolute
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkRow {
    pub mass: f64,
    pub com: [f64; 3],
    /// `[ixx, iyy, izz, ixy, ixz, iyz]` about the link CM.
    pub inertia: [f64; 6],
}

/// Serialized arm description, as found in the scenario file or the built-in
/// parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmTable {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_gravity")]
    pub gravity_direction: [f64; 3],
    pub joint: Vec<JointRow>,
    pub link: Vec<LinkRow>,
}

fn default_name() -> String {
    "custom".into()
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -1.0]
}

impl ArmTable {
    pub fn default_elbow() -> Self {
        toml::from_str(DEFAULT_TABLE).expect("built-in arm table parses")
    }
}

/// Six-joint serial arm in standard DH convention.
#[derive(Debug, Clone, PartialEq)]
pub struct SerialArm {
    name: String,
    joints: Vec<JointRow>,
    links: Vec<LinkInertia>,
    gravity: Vec3,
}

impl SerialArm {
    pub fn from_table(table: &ArmTable) -> Result<Self> {
        if table.joint.len() != 6 || table.link.len() != 6 {
            return Err(EmuError::InvalidScenario(format!(
                "arm must have 6 joints and 6 links, got {} and {}",
                table.joint.len(),
                table.link.len()
            )));
        }
        let g = Vec3::from(table.gravity_direction);
        if ((g.norm() - 1.0).abs()) > 1e-9 {
            return Err(EmuError::InvalidScenario(format!(
                "gravity direction must be a unit vector, |k| = {}",
                g.norm()
            )));
        }
        let links = table
            .link
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let [xx, yy, zz, xy, xz, yz] = row.inertia;
                let inertia = Mat3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
                if row.mass < 0.0 {
                    return Err(EmuError::NonPositiveMass(row.mass));
                }
                if row.mass > 0.0 && inertia.cholesky().is_none() {
                    return Err(EmuError::NonSpdInertia(format!("link {}", i + 1)));
                }
                Ok(LinkInertia {
                    mass: row.mass,
                    com: Vec3::from(row.com),
                    inertia,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: table.name.clone(),
            joints: table.joint.clone(),
            links,
            gravity: g,
        })
    }

    pub fn default_elbow() -> Self {
        Self::from_table(&ArmTable::default_elbow()).expect("built-in arm table is valid")
    }
}

impl Manipulator for SerialArm {
    fn name(&self) -> &str {
        &self.name
    }

    fn chain(&self, q: &JointVector) -> ChainPose {
        let mut r = RotationMatrix::identity();
        let mut o = Vec3::zeros();
        let mut axes = Vec::with_capacity(6);
        let mut frames = Vec::with_capacity(6);
        for (i, row) in self.joints.iter().enumerate() {
            axes.push(JointAxis {
                kind: row.kind,
                axis: r * Vec3::z(),
                origin: o,
            });
            let (theta, d) = match row.kind {
                JointKind::Revolute => (q[i] + row.theta_offset, row.d),
                JointKind::Prismatic => (row.theta_offset, row.d + q[i]),
            };
            let rz = r * rot_z(theta);
            o += rz * Vec3::new(row.a, 0.0, 0.0) + r * Vec3::new(0.0, 0.0, d);
            r = rz * rot_x(row.alpha);
            frames.push((r, o));
        }
        ChainPose { axes, frames }
    }

    fn links(&self) -> &[LinkInertia] {
        &self.links
    }

    fn gravity_direction(&self) -> Vec3 {
        self.gravity
    }
}
