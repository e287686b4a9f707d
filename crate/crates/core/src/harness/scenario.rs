//! Scenario files: TOML schema, conversion to runtime models and validation.
//!
//! Units are SI throughout: kg, kg·m², m, rad, s, N, N·m. Wrenches and twists
//! are ordered `[linear; angular]` and expressed in the payload CM frame {C}.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::controller::{DeltaInertia, EmulationGains};
use crate::error::{EmuError, Result};
use crate::flexible::flexible_delta_inertia;
use crate::manipulator::{
    ArmTable, CartesianStage, JointVector, Manipulator, ManipulatorState, PayloadAttachment, SerialArm,
};
use crate::sensor::{GravityCompensation, SensorModel};
use crate::spacecraft::{FlexState, FlexibleSpacecraft, RigidSpacecraft};
use crate::spatial::{Inertia6, Mat3, Vec3, Wrench6};
use crate::stability::{JointBox, DEFAULT_SAMPLES};

/// Inertia tensor given either by its principal moments or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InertiaSpec {
    Diagonal([f64; 3]),
    Full([[f64; 3]; 3]),
}

impl InertiaSpec {
    fn to_inertia(&self, mass: f64) -> Result<Inertia6> {
        match self {
            InertiaSpec::Diagonal(d) => Inertia6::from_diagonal(mass, *d),
            InertiaSpec::Full(rows) => {
                Inertia6::new(mass, Mat3::from_fn(|i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexSection {
    /// Modal inertia, `n × n`, row-major.
    pub m_f: Vec<Vec<f64>>,
    /// Hub/modal coupling, 6 rows of `n` entries.
    pub m_sf: Vec<Vec<f64>>,
    pub k_f: Vec<Vec<f64>>,
    #[serde(default)]
    pub d_f: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub xi0: Option<Vec<f64>>,
    #[serde(default)]
    pub xi_dot0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlightSection {
    #[serde(default = "flight_name")]
    pub name: String,
    pub mass: f64,
    pub inertia: InertiaSpec,
    #[serde(default)]
    pub flex: Option<FlexSection>,
}

fn flight_name() -> String {
    "flight".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSection {
    #[serde(default = "test_name")]
    pub name: String,
    pub mass: f64,
    pub inertia: InertiaSpec,
    /// Payload CM relative to the sensor origin, in {S}.
    pub c: [f64; 3],
}

fn test_name() -> String {
    "test".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManipulatorKind {
    Elbow6r,
    Cartesian,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorSection {
    #[serde(default = "default_kind")]
    pub model: ManipulatorKind,
    /// Arm description when `model = "table"`.
    #[serde(default)]
    pub table: Option<ArmTable>,
    #[serde(default = "default_carriage_mass")]
    pub carriage_mass: f64,
    #[serde(default = "default_carriage_inertia")]
    pub carriage_inertia: [f64; 3],
    /// Carriage CM in the flange frame.
    #[serde(default)]
    pub carriage_cm: [f64; 3],
    #[serde(default = "default_q0")]
    pub q0: [f64; 6],
    #[serde(default)]
    pub qd0: [f64; 6],
}

fn default_kind() -> ManipulatorKind {
    ManipulatorKind::Elbow6r
}

fn default_carriage_mass() -> f64 {
    100.0
}

fn default_carriage_inertia() -> [f64; 3] {
    [10.0, 10.0, 10.0]
}

/// A well-conditioned configuration of the default arm.
pub const NOMINAL_Q: [f64; 6] = [0.3, 0.4, -0.2, 0.5, 0.8, -0.6];

fn default_q0() -> [f64; 6] {
    NOMINAL_Q
}

impl Default for ManipulatorSection {
    fn default() -> Self {
        Self {
            model: default_kind(),
            table: None,
            carriage_mass: default_carriage_mass(),
            carriage_inertia: default_carriage_inertia(),
            carriage_cm: [0.0; 3],
            q0: default_q0(),
            qd0: [0.0; 6],
        }
    }
}

/// Compensation parameters used by the controller in place of the true ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompensationSection {
    #[serde(default)]
    pub offset: [f64; 6],
    pub mass: f64,
    pub c: [f64; 3],
    #[serde(default = "down")]
    pub gravity_dir: [f64; 3],
}

fn down() -> [f64; 3] {
    [0.0, 0.0, -1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub k_p: f64,
    pub k_d: f64,
    /// `q_ref(0) − q(0)`.
    #[serde(default)]
    pub initial_position_error: [f64; 6],
    /// `q̇_ref(0) − q̇(0)`.
    #[serde(default)]
    pub initial_velocity_error: [f64; 6],
    #[serde(default)]
    pub compensation: Option<CompensationSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ideal,
    Sampled,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ideal => "ideal",
            Mode::Sampled => "sampled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub dt: f64,
    #[serde(default)]
    pub control_period: Option<f64>,
    pub duration: f64,
    /// Overrides the sensor seed when present.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Write every n-th step to the trajectory files.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_mode() -> Mode {
    Mode::Ideal
}

fn default_log_every() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thruster {
    pub t_start: f64,
    pub t_end: f64,
    pub wrench: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    /// Half width of the joint box around `q0`.
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_half_width() -> f64 {
    0.3
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            half_width: default_half_width(),
            samples: default_samples(),
        }
    }
}

/// The scenario document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub flight: FlightSection,
    pub test: TestSection,
    #[serde(default)]
    pub manipulator: ManipulatorSection,
    #[serde(default)]
    pub sensor: SensorModel,
    pub controller: ControllerSection,
    pub sim: SimSection,
    #[serde(default)]
    pub thruster: Vec<Thruster>,
    #[serde(default)]
    pub stability: StabilitySection,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| EmuError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EmuError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Validated runtime scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: Arc<dyn Manipulator>,
    pub flight: FlexibleSpacecraft,
    pub attachment: PayloadAttachment,
    pub sensor: SensorModel,
    pub compensation: GravityCompensation,
    pub gains: EmulationGains,
    pub mode: Mode,
    pub dt: f64,
    pub control_period: f64,
    pub duration: f64,
    pub thrusters: Vec<Thruster>,
    pub q0: JointVector,
    pub qd0: JointVector,
    pub position_error0: JointVector,
    pub velocity_error0: JointVector,
    pub flex0: FlexState,
    pub log_every: usize,
    pub workspace: JointBox,
    pub stability_samples: usize,
}

fn matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(EmuError::InvalidScenario(format!(
            "{what} must be {nrows} x {ncols}"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn vector(v: &Option<Vec<f64>>, n: usize, what: &str) -> Result<nalgebra::DVector<f64>> {
    match v {
        None => Ok(nalgebra::DVector::zeros(n)),
        Some(v) if v.len() == n => Ok(nalgebra::DVector::from_column_slice(v)),
        Some(v) => Err(EmuError::InvalidScenario(format!(
            "{what} has {} entries, expected {n}",
            v.len()
        ))),
    }
}

fn positive(x: f64, what: &str) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(EmuError::InvalidScenario(format!("{what} must be positive, got {x}")))
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(ScenarioFile::load(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_file(ScenarioFile::parse(text)?)
    }

    /// Builds the runtime models and checks every precondition of a run.
    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let rigid = file.flight.inertia.to_inertia(file.flight.mass)?;
        let flight = match &file.flight.flex {
            None => FlexibleSpacecraft::rigid_only(file.flight.name.clone(), rigid),
            Some(fx) => {
                let n = fx.m_f.len();
                let zero = vec![vec![0.0; n]; n];
                FlexibleSpacecraft::new(
                    file.flight.name.clone(),
                    rigid,
                    matrix(&fx.m_f, n, n, "M_f")?,
                    matrix(&fx.m_sf, 6, n, "M_sf")?,
                    matrix(&fx.k_f, n, n, "K_f")?,
                    matrix(fx.d_f.as_ref().unwrap_or(&zero), n, n, "D_f")?,
                )?
            }
        };
        let n = flight.n_modes();
        let flex0 = match &file.flight.flex {
            None => FlexState::zeros(0),
            Some(fx) => FlexState {
                xi: vector(&fx.xi0, n, "xi0")?,
                xi_dot: vector(&fx.xi_dot0, n, "xi_dot0")?,
            },
        };

        let payload = RigidSpacecraft::new(
            file.test.name.clone(),
            file.test.inertia.to_inertia(file.test.mass)?,
        );
        let attachment = PayloadAttachment {
            payload,
            c: Vec3::from(file.test.c),
        };

        let m = &file.manipulator;
        let model: Arc<dyn Manipulator> = match m.model {
            ManipulatorKind::Elbow6r => Arc::new(SerialArm::default_elbow()),
            ManipulatorKind::Table => {
                let table = m.table.as_ref().ok_or_else(|| {
                    EmuError::InvalidScenario("manipulator model \"table\" needs [manipulator.table]".into())
                })?;
                Arc::new(SerialArm::from_table(table)?)
            }
            ManipulatorKind::Cartesian => Arc::new(CartesianStage::new(
                Inertia6::from_diagonal(m.carriage_mass, m.carriage_inertia)?,
                Vec3::from(m.carriage_cm),
            )?),
        };

        let gains = EmulationGains::new(file.controller.k_p, file.controller.k_d)?;
        let mut sensor = file.sensor.clone();
        if let Some(seed) = file.sim.seed {
            sensor.seed = seed;
        }
        sensor.validate()?;
        let compensation = match &file.controller.compensation {
            None => GravityCompensation::exact(&sensor, &attachment, &model.gravity_direction()),
            Some(cs) => {
                positive(cs.mass, "compensation mass")?;
                GravityCompensation {
                    offset: Wrench6::from(cs.offset),
                    mass: cs.mass,
                    c: Vec3::from(cs.c),
                    gravity_dir: Vec3::from(cs.gravity_dir).normalize(),
                }
            }
        };

        let sim = &file.sim;
        positive(sim.dt, "sim.dt")?;
        positive(sim.duration, "sim.duration")?;
        let control_period = sim.control_period.unwrap_or(sim.dt);
        positive(control_period, "sim.control_period")?;
        if sim.dt > control_period * (1.0 + 1e-12) {
            return Err(EmuError::InvalidScenario(format!(
                "sim.dt = {} exceeds the control period {}",
                sim.dt, control_period
            )));
        }
        let ratio = control_period / sim.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(EmuError::InvalidScenario(format!(
                "control period {control_period} is not a multiple of dt {}",
                sim.dt
            )));
        }
        if sim.log_every == 0 {
            return Err(EmuError::InvalidScenario("sim.log_every must be at least 1".into()));
        }
        validate_thrusters(&file.thruster)?;

        // Modes faster than the Nyquist rate of the shared step are rejected.
        let nyquist = std::f64::consts::PI / sim.dt;
        let fastest = flight
            .free_modal_frequencies()
            .into_iter()
            .chain(flight.clamped_modal_frequencies())
            .fold(0.0, f64::max);
        if fastest >= nyquist {
            return Err(EmuError::InvalidScenario(format!(
                "modal frequency {fastest} rad/s is above the Nyquist limit {nyquist} rad/s of dt"
            )));
        }

        if n == 0 {
            DeltaInertia::new(&flight.rigid, &attachment.payload.inertia)?;
        } else {
            flexible_delta_inertia(&flight, &attachment.payload)?;
        }

        let q0 = JointVector::from(m.q0);
        let qd0 = JointVector::from(m.qd0);
        ManipulatorState::new(model.as_ref(), &attachment.c, q0, qd0).check_conditioning()?;

        let st = &file.stability;
        positive(st.half_width, "stability.half_width")?;
        if st.samples == 0 {
            return Err(EmuError::InvalidScenario("stability.samples must be at least 1".into()));
        }

        Ok(Self {
            model,
            flight,
            attachment,
            sensor,
            compensation,
            gains,
            mode: sim.mode,
            dt: sim.dt,
            control_period,
            duration: sim.duration,
            thrusters: file.thruster.clone(),
            q0,
            qd0,
            position_error0: JointVector::from(file.controller.initial_position_error),
            velocity_error0: JointVector::from(file.controller.initial_velocity_error),
            flex0,
            log_every: sim.log_every,
            workspace: JointBox::around(&q0, st.half_width),
            stability_samples: st.samples,
        })
    }

    pub fn is_flexible(&self) -> bool {
        self.flight.n_modes() > 0
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Plant steps per controller update.
    pub fn steps_per_update(&self) -> usize {
        (self.control_period / self.dt).round() as usize
    }

    /// Thruster wrench active at `t`.
    pub fn external_wrench(&self, t: f64) -> Wrench6 {
        // Pulse edges on the step grid are taken at the step start.
        let t = t + 1e-9 * self.dt;
        self.thrusters
            .iter()
            .find(|th| th.t_start <= t && t < th.t_end)
            .map(|th| Wrench6::from(th.wrench))
            .unwrap_or_else(Wrench6::zeros)
    }
}

fn validate_thrusters(thrusters: &[Thruster]) -> Result<()> {
    for (i, th) in thrusters.iter().enumerate() {
        if !(th.t_start >= 0.0 && th.t_end > th.t_start) || th.wrench.iter().any(|w| !w.is_finite()) {
            return Err(EmuError::InvalidScenario(format!(
                "thruster {i}: need 0 <= t_start < t_end and a finite wrench"
            )));
        }
        if i > 0 && th.t_start < thrusters[i - 1].t_end {
            return Err(EmuError::InvalidScenario(format!(
                "thruster {i} starts before thruster {} ends; schedule must be sorted and non-overlapping",
                i - 1
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[flight]
mass = 200.0
inertia = [120.0, 100.0, 80.0]

[test]
mass = 100.0
inertia = [60.0, 50.0, 40.0]
c = [0.0, 0.0, 0.1]

[controller]
k_p = 1.0
k_d = 1.5

[sim]
dt = 0.001
duration = 1.0
"#;

    fn with(extra: &str) -> Result<Scenario> {
        Scenario::parse(&format!("{BASE}{extra}"))
    }

    #[test]
    fn minimal_scenario_uses_defaults() {
        let sc = with("").unwrap();
        assert_eq!(sc.mode, Mode::Ideal);
        assert_eq!(sc.control_period, 0.001);
        assert_eq!(sc.steps(), 1000);
        assert_eq!(sc.log_every, 10);
        assert_eq!(sc.q0, JointVector::from(NOMINAL_Q));
        assert!(!sc.is_flexible());
        assert_eq!(sc.stability_samples, DEFAULT_SAMPLES);
    }

    #[test]
    fn full_inertia_matrix_is_accepted() {
        let text = BASE.replace(
            "inertia = [120.0, 100.0, 80.0]",
            "inertia = [[120.0, 1.0, 0.0], [1.0, 100.0, 0.0], [0.0, 0.0, 80.0]]",
        );
        let sc = Scenario::parse(&text).unwrap();
        assert_eq!(sc.flight.rigid.inertia()[(0, 1)], 1.0);
    }

    #[test]
    fn equal_masses_are_rejected() {
        let text = BASE.replace("mass = 100.0", "mass = 200.0");
        let err = Scenario::parse(&text).unwrap_err();
        assert_eq!(err.code(), "singular-delta-inertia");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn step_longer_than_control_period_is_rejected() {
        let text = BASE.replace("dt = 0.001", "dt = 0.002\ncontrol_period = 0.001");
        assert_eq!(Scenario::parse(&text).unwrap_err().code(), "invalid-scenario");
    }

    #[test]
    fn control_period_must_be_step_multiple() {
        let text = BASE.replace("dt = 0.001", "dt = 0.001\ncontrol_period = 0.0025");
        assert!(Scenario::parse(&text).is_err());
        let text = BASE.replace("dt = 0.001", "dt = 0.001\ncontrol_period = 0.004");
        assert_eq!(Scenario::parse(&text).unwrap().steps_per_update(), 4);
    }

    #[test]
    fn overlapping_thrusters_are_rejected() {
        let extra = r#"
[[thruster]]
t_start = 0.0
t_end = 0.5
wrench = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]

[[thruster]]
t_start = 0.4
t_end = 0.6
wrench = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]
"#;
        assert_eq!(with(extra).unwrap_err().code(), "invalid-scenario");
    }

    #[test]
    fn thruster_schedule_is_piecewise_constant() {
        let extra = r#"
[[thruster]]
t_start = 0.1
t_end = 0.2
wrench = [5.0, 0.0, 0.0, 0.0, 0.0, 0.0]
"#;
        let sc = with(extra).unwrap();
        assert_eq!(sc.external_wrench(0.05)[0], 0.0);
        assert_eq!(sc.external_wrench(0.1)[0], 5.0);
        assert_eq!(sc.external_wrench(0.199)[0], 5.0);
        assert_eq!(sc.external_wrench(0.2)[0], 0.0);
    }

    #[test]
    fn fast_modes_are_rejected() {
        let extra = r#"
[flight.flex]
m_f = [[1.0]]
m_sf = [[0.0], [0.0], [0.0], [0.0], [0.0], [0.0]]
k_f = [[1.0e8]]
"#;
        let text = BASE.replace("[test]", &format!("{extra}\n[test]"));
        let err = Scenario::parse(&text).unwrap_err();
        assert!(err.to_string().contains("Nyquist"), "{err}");
    }

    #[test]
    fn unknown_keys_are_parse_errors() {
        let err = with("\n[extra]\nx = 1\n").unwrap_err();
        assert_eq!(err.code(), "parse");
    }

    #[test]
    fn seed_override_reaches_sensor() {
        let text = BASE.replace("duration = 1.0", "duration = 1.0\nseed = 42");
        assert_eq!(Scenario::parse(&text).unwrap().sensor.seed, 42);
    }
}
