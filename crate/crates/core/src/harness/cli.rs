//! `zerog` command line.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibration::{
    calibrate, capture_dataset, design_poses, microg_index, microg_index_mean_norm, read_dataset,
    resolution_floor, rotational_microg_index, write_dataset, write_residuals, CalibrationPose,
    DEFAULT_CAPTURE_SAMPLES,
};
use crate::error::{EmuError, Result};
use crate::sensor::Sensor;

use super::output::write_text;
use super::scenario::{Mode, Scenario, ScenarioFile};
use super::sim::{run_with_oracle, simulate, stability_report, RunOutput};

#[derive(Debug, Parser)]
#[command(name = "zerog", version, about = "Zero-g emulation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Ideal,
    Sampled,
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the sensor noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the stepping mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the closed loop and write trajectory.csv, sensor.csv and stability.txt.
    Simulate(Common),
    /// Run the closed loop against the free-floating reference and also write
    /// oracle.csv and fidelity.txt.
    Compare(Common),
    /// Identify offset, payload mass, CM offset and gravity direction.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Pose/reading dataset (CSV); synthesized from the scenario when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate the stability conditions over the scenario's joint box.
    AnalyzeStability(Common),
    /// Residual-acceleration index of a static dataset.
    MicrogIndex {
        #[command(flatten)]
        common: Common,
        /// Dataset to evaluate; synthesized from the scenario when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Separate dataset to calibrate on; defaults to the evaluated one.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Flight spacecraft mass (kg); taken from the scenario when absent.
        #[arg(long)]
        flight_mass: Option<f64>,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ERROR {}: {e}", e.code());
            e.exit_code()
        }
    }
}

fn load_scenario(common: &Common) -> Result<Scenario> {
    let path = common
        .scenario
        .as_ref()
        .ok_or_else(|| EmuError::InvalidScenario("--scenario is required".into()))?;
    let mut file = ScenarioFile::load(path)?;
    if let Some(seed) = common.seed {
        file.sim.seed = Some(seed);
    }
    if let Some(mode) = common.mode {
        file.sim.mode = match mode {
            ModeArg::Ideal => Mode::Ideal,
            ModeArg::Sampled => Mode::Sampled,
        };
    }
    Scenario::from_file(file)
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| EmuError::Io(format!("{}: {e}", dir.display())))
}

fn write_run(out: &Path, run: &RunOutput) -> Result<()> {
    run.trajectory.save(&out.join("trajectory.csv"))?;
    run.sensor.save(&out.join("sensor.csv"))?;
    write_text(&out.join("stability.txt"), &run.stability.to_string())?;
    if let Some(oracle) = &run.oracle {
        oracle.save(&out.join("oracle.csv"))?;
    }
    if let Some(f) = &run.fidelity {
        write_text(&out.join("fidelity.txt"), &f.to_string())?;
    }
    Ok(())
}

fn synthetic_dataset(sc: &Scenario) -> Result<Vec<CalibrationPose>> {
    let mut sensor = Sensor::new(sc.sensor.clone())?;
    Ok(capture_dataset(
        sc.model.as_ref(),
        &sc.attachment,
        &mut sensor,
        &design_poses(&sc.q0),
        DEFAULT_CAPTURE_SAMPLES,
    ))
}

fn read_poses(path: &Path) -> Result<Vec<CalibrationPose>> {
    let file = File::open(path).map_err(|e| EmuError::Io(format!("{}: {e}", path.display())))?;
    read_dataset(BufReader::new(file))
}

fn dataset(common: &Common, data: &Option<PathBuf>) -> Result<(Vec<CalibrationPose>, bool)> {
    match data {
        Some(p) => Ok((read_poses(p)?, false)),
        None => Ok((synthetic_dataset(&load_scenario(common)?)?, true)),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate(common) => {
            let sc = load_scenario(&common)?;
            let run = simulate(&sc)?;
            create_out(&common.out)?;
            write_run(&common.out, &run)
        }
        Command::Compare(common) => {
            let sc = load_scenario(&common)?;
            let run = run_with_oracle(&sc)?;
            create_out(&common.out)?;
            write_run(&common.out, &run)?;
            if let Some(f) = &run.fidelity {
                print!("{f}");
            }
            Ok(())
        }
        Command::AnalyzeStability(common) => {
            let sc = load_scenario(&common)?;
            let report = stability_report(&sc)?;
            create_out(&common.out)?;
            write_text(&common.out.join("stability.txt"), &report.to_string())?;
            print!("{report}");
            Ok(())
        }
        Command::Calibrate { common, data } => {
            let (poses, synthetic) = dataset(&common, &data)?;
            let result = calibrate(&poses)?;
            create_out(&common.out)?;
            if synthetic {
                let mut f = BufWriter::new(File::create(common.out.join("dataset.csv"))?);
                write_dataset(&mut f, &poses)?;
                f.flush()?;
            }
            write_text(&common.out.join("calibration.txt"), &result.to_string())?;
            let mut f = BufWriter::new(File::create(common.out.join("residuals.csv"))?);
            write_residuals(&mut f, &result)?;
            f.flush()?;
            print!("{result}");
            Ok(())
        }
        Command::MicrogIndex {
            common,
            data,
            calibration,
            flight_mass,
        } => {
            let scenario = match (&common.scenario, flight_mass) {
                (None, Some(_)) => None,
                _ => Some(load_scenario(&common)?),
            };
            let flight_mass = flight_mass
                .or_else(|| scenario.as_ref().map(|s| s.flight.rigid.mass()))
                .expect("mass from flag or scenario");
            let (poses, _) = dataset(&common, &data)?;
            let cal_poses = match &calibration {
                Some(p) => read_poses(p)?,
                None => poses.clone(),
            };
            let cal = calibrate(&cal_poses)?;
            let mut text = format!(
                "gamma = {:.16e}\ngamma_mean_norm = {:.16e}\n",
                microg_index(&poses, flight_mass, &cal)?,
                microg_index_mean_norm(&poses, flight_mass, &cal)?
            );
            match rotational_microg_index(&poses, &cal) {
                Ok(g) => text.push_str(&format!("gamma_rotational = {g:.16e}\n")),
                Err(EmuError::ZeroCmOffset) => text.push_str("gamma_rotational = n/a\n"),
                Err(e) => return Err(e),
            }
            if let Some(sc) = &scenario {
                let floor = resolution_floor(sc.sensor.resolution[0], flight_mass);
                text.push_str(&format!("resolution_floor = {floor:.16e}\n"));
            }
            create_out(&common.out)?;
            write_text(&common.out.join("microg.txt"), &text)?;
            print!("{text}");
            Ok(())
        }
    }
}
