//! Force/moment sensor at the flange–payload interface.
//!
//! The sensor frame {S} is parallel to the payload CM frame {C} and located
//! `c` away from the CM. The exact wrench follows from the payload's Newton-Euler
//! equations; readings add a constant offset, per-axis Gaussian noise and a
//! mid-tread quantizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EmuError, Result};
use crate::manipulator::PayloadAttachment;
use crate::spacecraft::gyric_term;
use crate::spatial::{
    inverse_transform_wrench, six, transform_wrench, RotationMatrix, Twist6, Vec3, Wrench6, GRAVITY,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    /// Constant offset `F_0` added to every reading, in {S}.
    #[serde(default)]
    pub offset: [f64; 6],
    /// Standard deviation of force (N) and moment (N·m) noise.
    #[serde(default)]
    pub noise_std: [f64; 2],
    /// Quantization step for force (N) and moment (N·m); zero disables it.
    #[serde(default)]
    pub resolution: [f64; 2],
    #[serde(default = "default_period")]
    pub sample_period: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_period() -> f64 {
    1e-3
}

impl Default for SensorModel {
    fn default() -> Self {
        Self::ideal(default_period())
    }
}

impl SensorModel {
    /// Noise-free, offset-free, unquantized sensor.
    pub fn ideal(sample_period: f64) -> Self {
        Self {
            offset: [0.0; 6],
            noise_std: [0.0; 2],
            resolution: [0.0; 2],
            sample_period,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(EmuError::InvalidScenario(format!("sensor: {what}")));
        if self.noise_std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return bad("noise standard deviations must be finite and non-negative");
        }
        if self.resolution.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return bad("resolution must be finite and non-negative");
        }
        if !(self.sample_period > 0.0) || !self.sample_period.is_finite() {
            return bad("sample period must be positive");
        }
        if self.offset.iter().any(|o| !o.is_finite()) {
            return bad("offset must be finite");
        }
        Ok(())
    }

    pub fn offset_wrench(&self) -> Wrench6 {
        Wrench6::from(self.offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    /// Raw wrench in {S}.
    pub wrench: Wrench6,
    pub t: f64,
}

/// Round-to-nearest quantizer with step `r`, ties away from zero.
pub fn quantize(x: f64, r: f64) -> f64 {
    if r > 0.0 {
        (x / r).round() * r
    } else {
        x
    }
}

/// A sensor instance with its own noise stream.
#[derive(Debug, Clone)]
pub struct Sensor {
    model: SensorModel,
    rng: ChaCha8Rng,
}

impl Sensor {
    pub fn new(model: SensorModel) -> Result<Self> {
        model.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        Ok(Self { model, rng })
    }

    pub fn model(&self) -> &SensorModel {
        &self.model
    }

    /// One reading of the true wrench `f_s` (in {S}) at time `t`.
    pub fn sample(&mut self, f_s: &Wrench6, t: f64) -> SensorReading {
        let mut wrench = *f_s + self.model.offset_wrench();
        for i in 0..6 {
            let axis = i / 3;
            let z: f64 = StandardNormal.sample(&mut self.rng);
            wrench[i] = quantize(wrench[i] + z * self.model.noise_std[axis], self.model.resolution[axis]);
        }
        SensorReading { wrench, t }
    }

    /// Mean of `count` readings of a constant wrench, as taken during a static
    /// calibration capture.
    pub fn capture_static(&mut self, f_s: &Wrench6, t: f64, count: usize) -> SensorReading {
        let count = count.max(1);
        let sum: Wrench6 = (0..count).map(|_| self.sample(f_s, t).wrench).sum();
        SensorReading {
            wrench: sum / count as f64,
            t,
        }
    }
}

/// Gravity wrench on the payload in {C}: `F_g = (m g Rᵀk, 0)`.
pub fn gravity_wrench(mass: f64, rotation: &RotationMatrix, gravity_dir: &Vec3) -> Wrench6 {
    six(&(rotation.transpose() * gravity_dir * (mass * GRAVITY)), &Vec3::zeros())
}

/// Exact sensor wrench `F_s = T⁻¹(F_g + F_ext − M_m ν̇ − h_m)`, in {S}.
pub fn true_interaction_wrench(
    attachment: &PayloadAttachment,
    nu: &Twist6,
    nu_dot: &Twist6,
    rotation: &RotationMatrix,
    gravity_dir: &Vec3,
    f_ext: &Wrench6,
) -> Wrench6 {
    let inertia = &attachment.payload.inertia;
    let f_g = gravity_wrench(inertia.mass(), rotation, gravity_dir);
    let at_cm = f_g + f_ext - inertia.apply(nu_dot) - gyric_term(inertia, nu);
    inverse_transform_wrench(&attachment.c, &at_cm)
}

/// Parameters used to remove offset and payload weight from raw readings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityCompensation {
    pub offset: Wrench6,
    pub mass: f64,
    pub c: Vec3,
    /// Unit gravity direction in {W}.
    pub gravity_dir: Vec3,
}

impl GravityCompensation {
    /// Compensation built from the true sensor and payload parameters.
    pub fn exact(sensor: &SensorModel, attachment: &PayloadAttachment, gravity_dir: &Vec3) -> Self {
        Self {
            offset: sensor.offset_wrench(),
            mass: attachment.payload.inertia.mass(),
            c: attachment.c,
            gravity_dir: *gravity_dir,
        }
    }

    /// `F_sg = T(ĉ)(F_s − F̂_0) − F̂_g`, in {C}.
    pub fn compensate(&self, raw: &Wrench6, rotation: &RotationMatrix) -> Wrench6 {
        transform_wrench(&self.c, &(raw - self.offset))
            - gravity_wrench(self.mass, rotation, &self.gravity_dir)
    }
}

pub fn compensated_wrench(
    reading: &SensorReading,
    calibration: &GravityCompensation,
    rotation: &RotationMatrix,
) -> Wrench6 {
    calibration.compensate(&reading.wrench, rotation)
}
