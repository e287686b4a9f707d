//! CSV tables and text reports.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;

use super::scenario::Mode;

/// Fixed-column numeric table, written as CSV with 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header.join(","))?;
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Agreement between the emulated payload and the free-floating reference.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub mode: Mode,
    pub steps: usize,
    pub dt: f64,
    /// `max_t ‖ν(t) − ν_o(t)‖`.
    pub max_nu_error: f64,
    pub rms_nu_error: f64,
    pub max_nu_oracle: f64,
    /// `max ‖ν − ν_o‖ / max ‖ν_o‖`.
    pub relative_nu_error: f64,
    pub initial_error_norm: f64,
    pub final_error_norm: f64,
    pub max_delta_norm: f64,
    pub delta_decay_rate: f64,
    /// `None` when the envelope does not apply (no initial error, or a
    /// non-positive decay rate).
    pub delta_envelope_holds: Option<bool>,
    pub max_xi_error: Option<f64>,
}

impl fmt::Display for FidelityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode = {}", self.mode)?;
        writeln!(f, "steps = {}", self.steps)?;
        writeln!(f, "dt = {:.16e}", self.dt)?;
        writeln!(f, "max_nu_error = {:.16e}", self.max_nu_error)?;
        writeln!(f, "rms_nu_error = {:.16e}", self.rms_nu_error)?;
        writeln!(f, "max_nu_oracle = {:.16e}", self.max_nu_oracle)?;
        writeln!(f, "relative_nu_error = {:.16e}", self.relative_nu_error)?;
        writeln!(f, "initial_error_norm = {:.16e}", self.initial_error_norm)?;
        writeln!(f, "final_error_norm = {:.16e}", self.final_error_norm)?;
        writeln!(f, "max_delta_norm = {:.16e}", self.max_delta_norm)?;
        writeln!(f, "delta_decay_rate = {:.16e}", self.delta_decay_rate)?;
        match self.delta_envelope_holds {
            Some(ok) => writeln!(f, "delta_envelope_holds = {ok}")?,
            None => writeln!(f, "delta_envelope_holds = n/a")?,
        }
        if let Some(e) = self.max_xi_error {
            writeln!(f, "max_xi_error = {e:.16e}")?;
        }
        Ok(())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}
