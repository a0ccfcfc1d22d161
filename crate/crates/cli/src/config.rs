//! JSON configuration files. Every field has a default, and reports embed
//! the resolved configuration with all defaults filled in.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use hbem::assembly::{AssemblyConfig, DEFAULT_CHUNK_SIZE};
use hbem::gmres::{GmresConfig, DEFAULT_RESTART, DEFAULT_SOLVER_TOLERANCE};
use hbem::hmatrix::{AcaConfig, DEFAULT_ACA_TOLERANCE, DEFAULT_ETA, DEFAULT_LEAF_SIZE, DEFAULT_OFFLOAD_THRESHOLD};
use hbem::kernels::{Equation, Operator, Precision};
use hbem::mesh::{load_mesh, refine_unit_sphere, TriangleMesh};
use hbem::scatter::{
    ScatterConfig, SolveMode, DEFAULT_EVALUATION_POINTS, DEFAULT_EVALUATION_RADIUS, DEFAULT_SOUND_SPEED,
};
use hbem::spaces::SpaceFamily;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Dense,
    Hmatrix,
}

impl From<ModeName> for SolveMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Dense => SolveMode::Dense,
            ModeName::Hmatrix => SolveMode::HMatrix,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionName {
    Single,
    Double,
}

impl From<PrecisionName> for Precision {
    fn from(p: PrecisionName) -> Self {
        match p {
            PrecisionName::Single => Precision::Single,
            PrecisionName::Double => Precision::Double,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorName {
    Slp,
    Dlp,
    Adlp,
    Hyps,
}

impl From<OperatorName> for Operator {
    fn from(o: OperatorName) -> Self {
        match o {
            OperatorName::Slp => Operator::Slp,
            OperatorName::Dlp => Operator::Dlp,
            OperatorName::Adlp => Operator::Adlp,
            OperatorName::Hyps => Operator::Hyps,
        }
    }
}

/// `reference` = per-pair host integrator; `batched` = backend pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathName {
    Reference,
    Batched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum EquationConfig {
    Laplace,
    Helmholtz { wavenumber: f64 },
}

impl EquationConfig {
    pub fn equation(&self) -> Equation {
        match *self {
            EquationConfig::Laplace => Equation::Laplace,
            EquationConfig::Helmholtz { wavenumber } => Equation::Helmholtz(wavenumber),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EquationConfig::Laplace => "laplace",
            EquationConfig::Helmholtz { .. } => "helmholtz",
        }
    }

    pub fn wavenumber(&self) -> f64 {
        match *self {
            EquationConfig::Laplace => 0.0,
            EquationConfig::Helmholtz { wavenumber } => wavenumber,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceName {
    P0,
    P1,
}

/// Numerical parameters shared by both commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    /// `null` uses every available core.
    pub workers: Option<usize>,
    pub devices: usize,
    pub chunk_size: usize,
    pub regular_order: usize,
    pub singular_order: usize,
    pub aca_tolerance: f64,
    pub eta: f64,
    pub leaf_size: usize,
    pub offload_threshold: usize,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        let a = AssemblyConfig::default();
        Self {
            workers: None,
            devices: a.devices,
            chunk_size: DEFAULT_CHUNK_SIZE,
            regular_order: a.regular_order,
            singular_order: a.singular_order,
            aca_tolerance: DEFAULT_ACA_TOLERANCE,
            eta: DEFAULT_ETA,
            leaf_size: DEFAULT_LEAF_SIZE,
            offload_threshold: DEFAULT_OFFLOAD_THRESHOLD,
        }
    }
}

impl NumericsConfig {
    pub fn assembly(&self, precision: Precision) -> AssemblyConfig {
        AssemblyConfig {
            chunk_size: self.chunk_size,
            devices: self.devices,
            workers: self.workers,
            precision,
            regular_order: self.regular_order,
            singular_order: self.singular_order,
            max_bytes: None,
        }
    }

    pub fn aca(&self) -> AcaConfig {
        AcaConfig {
            tolerance: self.aca_tolerance,
            max_rank: None,
            offload_threshold: self.offload_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub seed: u64,
    pub repetitions: usize,
    /// Icosphere refinement levels, smallest first.
    pub levels: Vec<u32>,
    pub equations: Vec<EquationConfig>,
    pub operators: Vec<OperatorName>,
    pub modes: Vec<ModeName>,
    pub paths: Vec<PathName>,
    pub precisions: Vec<PrecisionName>,
    /// Space for SLP, DLP and ADLP; HYPS always uses continuous P1.
    pub space: SpaceName,
    pub numerics: NumericsConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            repetitions: 5,
            levels: vec![1, 2, 3],
            equations: vec![EquationConfig::Laplace, EquationConfig::Helmholtz { wavenumber: 2.0 }],
            operators: vec![OperatorName::Slp, OperatorName::Dlp],
            modes: vec![ModeName::Dense],
            paths: vec![PathName::Reference, PathName::Batched],
            precisions: vec![PrecisionName::Double],
            space: SpaceName::P0,
            numerics: NumericsConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let empty = [
            ("levels", self.levels.is_empty()),
            ("equations", self.equations.is_empty()),
            ("operators", self.operators.is_empty()),
            ("modes", self.modes.is_empty()),
            ("paths", self.paths.is_empty()),
            ("precisions", self.precisions.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(CliError::Config(format!("`{name}` must not be empty")));
        }
        if self.repetitions == 0 {
            return Err(CliError::Config("`repetitions` must be at least 1".into()));
        }
        if self.levels.iter().any(|&l| l > 8) {
            return Err(CliError::Config("sphere levels above 8 are not supported".into()));
        }
        for eq in &self.equations {
            if let EquationConfig::Helmholtz { wavenumber } = eq {
                if !(*wavenumber > 0.0 && wavenumber.is_finite()) {
                    return Err(CliError::Config("Helmholtz wavenumber must be positive".into()));
                }
            }
        }
        self.numerics.assembly(Precision::Double).validate()?;
        self.numerics.aca().validate()?;
        Ok(())
    }

    pub fn family(&self, operator: OperatorName) -> SpaceFamily {
        match (operator, self.space) {
            (OperatorName::Hyps, _) | (_, SpaceName::P1) => SpaceFamily::P1Continuous,
            (_, SpaceName::P0) => SpaceFamily::P0,
        }
    }
}

/// Either a refined unit sphere or a Gmsh file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum MeshConfig {
    Sphere { level: u32 },
    File { path: PathBuf },
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig::Sphere { level: 3 }
    }
}

impl MeshConfig {
    pub fn load(&self, base: Option<&Path>) -> Result<TriangleMesh, CliError> {
        match self {
            MeshConfig::Sphere { level } => Ok(refine_unit_sphere(*level)?),
            MeshConfig::File { path } => {
                let path = match base {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                Ok(load_mesh(&path)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterFileConfig {
    pub mesh: MeshConfig,
    /// Hz; ignored when `wavenumber` is set.
    pub frequency: Option<f64>,
    pub wavenumber: Option<f64>,
    pub sound_speed: f64,
    pub amplitude: f64,
    /// Incidence angle in the xy-plane, degrees.
    pub incidence_deg: f64,
    pub mode: ModeName,
    pub precision: PrecisionName,
    pub solver_tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
    pub evaluation_points: usize,
    pub radius: f64,
    pub force: bool,
    pub numerics: NumericsConfig,
}

impl Default for ScatterFileConfig {
    fn default() -> Self {
        Self {
            mesh: MeshConfig::default(),
            frequency: None,
            wavenumber: Some(2.0),
            sound_speed: DEFAULT_SOUND_SPEED,
            amplitude: 1.0,
            incidence_deg: 0.0,
            mode: ModeName::Dense,
            precision: PrecisionName::Double,
            solver_tolerance: DEFAULT_SOLVER_TOLERANCE,
            restart: DEFAULT_RESTART,
            max_iterations: GmresConfig::default().max_iterations,
            evaluation_points: DEFAULT_EVALUATION_POINTS,
            radius: DEFAULT_EVALUATION_RADIUS,
            force: false,
            numerics: NumericsConfig::default(),
        }
    }
}

impl ScatterFileConfig {
    /// Fills `frequency` from `wavenumber` (or the reverse) so both are explicit.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        match (self.wavenumber, self.frequency) {
            (Some(k), _) => self.frequency = Some(k * self.sound_speed / (2.0 * std::f64::consts::PI)),
            (None, Some(f)) => self.wavenumber = Some(hbem::scatter::wavenumber_from_frequency(f, self.sound_speed)),
            (None, None) => return Err(CliError::Config("set `frequency` or `wavenumber`".into())),
        }
        if !(self.amplitude != 0.0 && self.amplitude.is_finite()) {
            return Err(CliError::Config("`amplitude` must be non-zero".into()));
        }
        Ok(self)
    }

    pub fn to_scatter_config(&self, mesh: Arc<TriangleMesh>) -> Result<ScatterConfig, CliError> {
        let frequency = self
            .frequency
            .ok_or_else(|| CliError::Config("configuration is not resolved".into()))?;
        let mut cfg = ScatterConfig::new(mesh, frequency);
        cfg.sound_speed = self.sound_speed;
        cfg.assembly = self.numerics.assembly(self.precision.into());
        cfg.aca = self.numerics.aca();
        cfg.leaf_size = self.numerics.leaf_size;
        cfg.eta = self.numerics.eta;
        cfg.solver = GmresConfig {
            tolerance: self.solver_tolerance,
            restart: self.restart,
            max_iterations: self.max_iterations,
        };
        cfg.evaluation_points = self.evaluation_points;
        cfg.radius = self.radius;
        cfg.force = self.force;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
