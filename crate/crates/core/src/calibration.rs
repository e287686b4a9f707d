//! Identification of the sensor offset and the payload gravity parameters
//! from static poses, and the micro-g quality index.
//!
//! At rest the sensor reads `f_s = f_0 + g Rᵀ w` and
//! `n_s = n_0 − g m_m [(Rᵀk)×] c` with `w = m_m k`. The force equations are
//! solved first for `(f_0, w)`, which fixes `m_m` and `k` for the moment
//! equations in `(n_0, c)`.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{EmuError, Result};
use crate::manipulator::{forward_kinematics, JointVector, Manipulator, PayloadAttachment};
use crate::sensor::{true_interaction_wrench, GravityCompensation, Sensor};
use crate::spatial::{
    bottom, rotation_from_matrix, six, skew, top, Mat3, RotationMatrix, Twist6, Vec3, Wrench6, GRAVITY,
};

/// CM offsets below this length (m) are treated as zero.
const MIN_CM_OFFSET: f64 = 1e-9;

/// Default number of readings averaged per static pose.
pub const DEFAULT_CAPTURE_SAMPLES: usize = 100;

/// One static calibration measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPose {
    pub q: JointVector,
    /// Orientation of the sensor frame in {W}.
    pub rotation: RotationMatrix,
    /// Averaged raw reading in {S}.
    pub reading: Wrench6,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub theta: DVector<f64>,
    pub residual: DVector<f64>,
    pub condition: f64,
}

/// Minimizer of `‖Ψθ − y‖₂` through the singular value decomposition.
pub fn solve_least_squares(y: &DVector<f64>, psi: &DMatrix<f64>) -> Result<LeastSquares> {
    let cols = psi.ncols();
    // Pad wide systems so the full right singular basis is available.
    let padded = if psi.nrows() < cols {
        psi.clone().resize_vertically(cols, 0.0)
    } else {
        psi.clone()
    };
    let dim = padded.nrows().max(cols);
    let svd = padded.svd(true, true);
    let sv = &svd.singular_values;
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let smax = sv.max();
    let tol = smax * f64::EPSILON * dim as f64;
    let rank = sv.iter().filter(|s| **s > tol).count();
    if rank < cols {
        let (imin, _) = sv.argmin();
        return Err(EmuError::RankDeficient {
            rank,
            cols,
            null_direction: v_t.row(imin).iter().copied().collect(),
        });
    }
    let rhs = if y.len() < cols { y.clone().resize_vertically(cols, 0.0) } else { y.clone() };
    let theta = svd.solve(&rhs, tol).map_err(|e| EmuError::Parse(e.to_string()))?;
    let residual = psi * &theta - y;
    Ok(LeastSquares {
        theta,
        residual,
        condition: smax / sv.min(),
    })
}

fn require_poses(poses: &[CalibrationPose]) -> Result<()> {
    if poses.is_empty() {
        return Err(EmuError::EmptyDataset);
    }
    Ok(())
}

/// Row block `[I  g Rᵀ]` for one pose.
fn force_rows(rotation: &RotationMatrix) -> DMatrix<f64> {
    let mut rows = DMatrix::zeros(3, 6);
    rows.view_mut((0, 0), (3, 3)).copy_from(&Mat3::identity());
    rows.view_mut((0, 3), (3, 3))
        .copy_from(&(rotation.transpose().into_inner() * GRAVITY));
    rows
}

/// Row block `[I  −g m [(Rᵀk)×]]` for one pose.
fn moment_rows(rotation: &RotationMatrix, mass: f64, k: &Vec3) -> DMatrix<f64> {
    let mut rows = DMatrix::zeros(3, 6);
    rows.view_mut((0, 0), (3, 3)).copy_from(&Mat3::identity());
    rows.view_mut((0, 3), (3, 3))
        .copy_from(&(-skew(&(rotation.transpose() * k)) * (GRAVITY * mass)));
    rows
}

fn stack(poses: &[CalibrationPose], rows: impl Fn(&CalibrationPose) -> DMatrix<f64>, part: fn(&Wrench6) -> Vec3) -> (DVector<f64>, DMatrix<f64>) {
    let p = poses.len();
    let mut y = DVector::zeros(3 * p);
    let mut psi = DMatrix::zeros(3 * p, 6);
    for (i, pose) in poses.iter().enumerate() {
        y.fixed_rows_mut::<3>(3 * i).copy_from(&part(&pose.reading));
        psi.view_mut((3 * i, 0), (3, 6)).copy_from(&rows(pose));
    }
    (y, psi)
}

/// Stacked force regression `y₁ = Ψ₁ [f_0; w]`.
pub fn build_force_regression(poses: &[CalibrationPose]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    require_poses(poses)?;
    Ok(stack(poses, |p| force_rows(&p.rotation), top))
}

/// Stacked moment regression `y₂ = Ψ₂(m_m, k) [n_0; c]`.
pub fn build_moment_regression(
    poses: &[CalibrationPose],
    mass: f64,
    k: &Vec3,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    require_poses(poses)?;
    Ok(stack(poses, |p| moment_rows(&p.rotation, mass, k), bottom))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub offset: Wrench6,
    /// `ŵ = m̂_m k̂`.
    pub w: Vec3,
    pub mass: f64,
    pub k: Vec3,
    pub c: Vec3,
    pub force_residuals: Vec<f64>,
    pub moment_residuals: Vec<f64>,
    pub force_condition: f64,
    pub moment_condition: f64,
}

impl CalibrationResult {
    pub fn compensation(&self) -> GravityCompensation {
        GravityCompensation {
            offset: self.offset,
            mass: self.mass,
            c: self.c,
            gravity_dir: self.k,
        }
    }

    /// `[f_0; w]`.
    pub fn theta1(&self) -> DVector<f64> {
        DVector::from_iterator(6, top(&self.offset).iter().chain(self.w.iter()).copied())
    }

    /// `[n_0; c]`.
    pub fn theta2(&self) -> DVector<f64> {
        DVector::from_iterator(6, bottom(&self.offset).iter().chain(self.c.iter()).copied())
    }
}

impl fmt::Display for CalibrationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v3 = |v: &Vec3| format!("[{:.16e}, {:.16e}, {:.16e}]", v[0], v[1], v[2]);
        writeln!(f, "f0 = {}", v3(&top(&self.offset)))?;
        writeln!(f, "n0 = {}", v3(&bottom(&self.offset)))?;
        writeln!(f, "w = {}", v3(&self.w))?;
        writeln!(f, "mass = {:.16e}", self.mass)?;
        writeln!(f, "k = {}", v3(&self.k))?;
        writeln!(f, "c = {}", v3(&self.c))?;
        writeln!(f, "force_condition = {:.16e}", self.force_condition)?;
        writeln!(f, "moment_condition = {:.16e}", self.moment_condition)?;
        writeln!(f, "poses = {}", self.force_residuals.len())
    }
}

fn block_norms(r: &DVector<f64>) -> Vec<f64> {
    (0..r.len() / 3).map(|i| r.fixed_rows::<3>(3 * i).norm()).collect()
}

/// Two-stage identification of offset, mass, gravity direction and CM offset.
pub fn calibrate(poses: &[CalibrationPose]) -> Result<CalibrationResult> {
    let (y1, psi1) = build_force_regression(poses)?;
    let s1 = solve_least_squares(&y1, &psi1)?;
    let w = Vec3::new(s1.theta[3], s1.theta[4], s1.theta[5]);
    let mass = w.norm();
    if !(mass > 0.0) {
        return Err(EmuError::NonPositiveMass(mass));
    }
    let k = w / mass;
    let (y2, psi2) = build_moment_regression(poses, mass, &k)?;
    let s2 = solve_least_squares(&y2, &psi2)?;
    Ok(CalibrationResult {
        offset: Wrench6::new(
            s1.theta[0], s1.theta[1], s1.theta[2], s2.theta[0], s2.theta[1], s2.theta[2],
        ),
        w,
        mass,
        k,
        c: Vec3::new(s2.theta[3], s2.theta[4], s2.theta[5]),
        force_residuals: block_norms(&s1.residual),
        moment_residuals: block_norms(&s2.residual),
        force_condition: s1.condition,
        moment_condition: s2.condition,
    })
}

/// Conservative bounds `(6 g m ‖Δq‖, 6 g m ‖c‖ ‖Δq‖)` on the static force and
/// moment error caused by a joint-angle error.
pub fn sensitivity_bounds(mass: f64, c: &Vec3, dq_norm: f64) -> (f64, f64) {
    let df = 6.0 * GRAVITY * mass * dq_norm;
    (df, df * c.norm())
}

/// Actual change in the static sensor force and moment when the compensator
/// uses `q + dq` instead of `q`.
pub fn static_wrench_error(
    model: &dyn Manipulator,
    attachment: &PayloadAttachment,
    q: &JointVector,
    dq: &JointVector,
) -> (f64, f64) {
    let k = model.gravity_direction();
    let weight = attachment.payload.inertia.mass() * GRAVITY;
    let (r0, _) = forward_kinematics(model, q, &attachment.c);
    let (r1, _) = forward_kinematics(model, &(q + dq), &attachment.c);
    let df = (r1.transpose() * k - r0.transpose() * k) * weight;
    (df.norm(), attachment.c.cross(&df).norm())
}

fn check_flight_mass(flight_mass: f64) -> Result<()> {
    if !(flight_mass > 0.0) {
        return Err(EmuError::NonPositiveMass(flight_mass));
    }
    Ok(())
}

fn force_residual(pose: &CalibrationPose, cal: &CalibrationResult) -> Vec3 {
    top(&pose.reading) - top(&cal.offset) - pose.rotation.transpose() * cal.w * GRAVITY
}

fn moment_residual(pose: &CalibrationPose, cal: &CalibrationResult) -> Vec3 {
    bottom(&pose.reading) - bottom(&cal.offset)
        + skew(&(pose.rotation.transpose() * cal.k)) * cal.c * (GRAVITY * cal.mass)
}

/// Micro-g index `‖Σᵢ (f_sᵢ − Ψ₁ᵢ Θ̂₁)‖ / (n g m_s) × 10⁶`.
///
/// The residuals are taken against `calibration`, which should be identified
/// from a separate dataset: an in-sample fit makes the sum vanish identically.
pub fn microg_index(poses: &[CalibrationPose], flight_mass: f64, calibration: &CalibrationResult) -> Result<f64> {
    require_poses(poses)?;
    check_flight_mass(flight_mass)?;
    let sum: Vec3 = poses.iter().map(|p| force_residual(p, calibration)).sum();
    Ok(sum.norm() / (poses.len() as f64 * GRAVITY * flight_mass) * 1e6)
}

/// Stricter companion of [`microg_index`] using the mean of residual norms.
pub fn microg_index_mean_norm(
    poses: &[CalibrationPose],
    flight_mass: f64,
    calibration: &CalibrationResult,
) -> Result<f64> {
    require_poses(poses)?;
    check_flight_mass(flight_mass)?;
    let sum: f64 = poses.iter().map(|p| force_residual(p, calibration).norm()).sum();
    Ok(sum / (poses.len() as f64 * GRAVITY * flight_mass) * 1e6)
}

/// Rotational index `‖Σᵢ (n_sᵢ − Ψ₂ᵢ Θ̂₂)‖ / (n g ‖c‖ m_m) × 10⁶`.
pub fn rotational_microg_index(poses: &[CalibrationPose], calibration: &CalibrationResult) -> Result<f64> {
    require_poses(poses)?;
    let lever = calibration.c.norm() * calibration.mass;
    if !(calibration.c.norm() > MIN_CM_OFFSET) {
        return Err(EmuError::ZeroCmOffset);
    }
    let sum: Vec3 = poses.iter().map(|p| moment_residual(p, calibration)).sum();
    Ok(sum.norm() / (poses.len() as f64 * GRAVITY * lever) * 1e6)
}

/// Best achievable index for a sensor of force resolution `resolution`.
pub fn resolution_floor(resolution: f64, flight_mass: f64) -> f64 {
    resolution / (GRAVITY * flight_mass) * 1e6
}

/// Eight wrist configurations around `base`, rotating the sensor about two
/// non-parallel axes so both regressions have full rank.
pub fn design_poses(base: &JointVector) -> Vec<JointVector> {
    const WRIST: [(f64, f64); 8] = [
        (0.0, 0.0),
        (0.0, 0.8),
        (0.0, -0.8),
        (1.2, 0.4),
        (-1.2, 0.4),
        (1.6, -0.6),
        (-1.6, -0.6),
        (3.0, 1.0),
    ];
    WRIST
        .iter()
        .map(|(d4, d5)| {
            let mut q = *base;
            q[3] += d4;
            q[4] += d5;
            q
        })
        .collect()
}

/// Static readings at each configuration, averaged over `samples` readings.
pub fn capture_dataset(
    model: &dyn Manipulator,
    attachment: &PayloadAttachment,
    sensor: &mut Sensor,
    configurations: &[JointVector],
    samples: usize,
) -> Vec<CalibrationPose> {
    let k = model.gravity_direction();
    configurations
        .iter()
        .map(|q| {
            let (rotation, _) = forward_kinematics(model, q, &attachment.c);
            let truth = true_interaction_wrench(
                attachment,
                &Twist6::zeros(),
                &Twist6::zeros(),
                &rotation,
                &k,
                &Wrench6::zeros(),
            );
            CalibrationPose {
                q: *q,
                rotation,
                reading: sensor.capture_static(&truth, 0.0, samples).wrench,
            }
        })
        .collect()
}

pub const DATASET_HEADER: &str =
    "q1,q2,q3,q4,q5,q6,r11,r12,r13,r21,r22,r23,r31,r32,r33,fx,fy,fz,nx,ny,nz";

pub fn write_dataset<W: Write>(mut out: W, poses: &[CalibrationPose]) -> Result<()> {
    writeln!(out, "{DATASET_HEADER}")?;
    for p in poses {
        let r = p.rotation.matrix();
        let fields: Vec<String> = p
            .q
            .iter()
            .chain((0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| &r[(i, j)]))
            .chain(p.reading.iter())
            .map(|x| format!("{x:.16e}"))
            .collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<CalibrationPose>> {
    let mut poses = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('q') {
            continue;
        }
        let values = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| EmuError::Parse(format!("line {}: {e}", lineno + 1)))?;
        if values.len() != 21 {
            return Err(EmuError::Parse(format!(
                "line {}: expected 21 columns, found {}",
                lineno + 1,
                values.len()
            )));
        }
        let m = Mat3::from_row_slice(&values[6..15]);
        poses.push(CalibrationPose {
            q: JointVector::from_column_slice(&values[0..6]),
            rotation: rotation_from_matrix(&m)?,
            reading: Wrench6::from_column_slice(&values[15..21]),
        });
    }
    if poses.is_empty() {
        return Err(EmuError::EmptyDataset);
    }
    Ok(poses)
}

/// Per-pose residual table.
pub fn write_residuals<W: Write>(mut out: W, result: &CalibrationResult) -> Result<()> {
    writeln!(out, "pose,force_residual,moment_residual")?;
    for (i, (f, n)) in result.force_residuals.iter().zip(&result.moment_residuals).enumerate() {
        writeln!(out, "{i},{f:.16e},{n:.16e}")?;
    }
    Ok(())
}

/// Synthetic static reading generated directly from the regression model.
pub fn model_reading(rotation: &RotationMatrix, offset: &Wrench6, mass: f64, k: &Vec3, c: &Vec3) -> Wrench6 {
    let f = rotation.transpose() * k * (GRAVITY * mass);
    offset + six(&f, &c.cross(&f))
}
