//! Scattering driver: loads the mesh, solves and writes the far field.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use hbem::scatter::{run_scattering, FarField, PlaneWave, SolveReport};

use crate::config::{ModeName, ScatterFileConfig, SCHEMA_VERSION};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub assembly_s: f64,
    pub solve_s: f64,
    pub far_field_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterReport {
    pub schema_version: u32,
    pub config: ScatterFileConfig,
    pub wavenumber: f64,
    pub elements: usize,
    pub dofs: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    /// Stored over dense entries for the double layer and the
    /// discontinuous single layer; 1 in dense mode.
    pub compression: [f64; 2],
    pub timings: Timings,
}

#[derive(Debug, Clone, Serialize)]
struct FarFieldRow {
    theta_deg: f64,
    re: f64,
    im: f64,
    abs_u: f64,
    #[serde(rename = "TS_dB")]
    ts_db: f64,
}

/// Solves the configured problem. `base` resolves relative mesh paths.
pub fn run(config: ScatterFileConfig, base: Option<&Path>) -> Result<(ScatterReport, SolveReport, FarField), CliError> {
    let config = config.resolve()?;
    let mesh = Arc::new(config.mesh.load(base)?);
    let scatter = config.to_scatter_config(mesh)?;
    let wave = PlaneWave::from_angle(config.amplitude, config.incidence_deg.to_radians(), scatter.wavenumber())?;
    let mode: ModeName = config.mode;
    let (solve, far) = run_scattering(&scatter, &wave, mode.into())?;
    let report = ScatterReport {
        schema_version: SCHEMA_VERSION,
        wavenumber: solve.wavenumber,
        elements: solve.elements,
        dofs: solve.dofs,
        iterations: solve.iterations,
        restarts: solve.restarts,
        residual: solve.residual,
        residual_history: solve.history.clone(),
        compression: solve.compression,
        timings: Timings {
            assembly_s: solve.timings.assembly,
            solve_s: solve.timings.solve,
            far_field_s: solve.timings.far_field,
        },
        config,
    };
    Ok((report, solve, far))
}

/// Writes `far_field.csv` and `scatter_report.json` into `dir`.
pub fn write_outputs(report: &ScatterReport, far: &FarField, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("far_field.csv"))?;
    for ((&theta, u), &ts) in far.angles_deg.iter().zip(&far.values).zip(&far.target_strength_db) {
        w.serialize(FarFieldRow {
            theta_deg: theta,
            re: u.re,
            im: u.im,
            abs_u: u.norm(),
            ts_db: ts,
        })?;
    }
    w.flush()?;
    std::fs::write(dir.join("scatter_report.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}
