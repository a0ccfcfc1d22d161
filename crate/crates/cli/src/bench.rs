//! Assembly benchmark: every (operator, equation, level, mode, path,
//! precision) cell is assembled `repetitions` times and timed. On the
//! smallest level each cell is also checked by a matvec probe against the
//! double-precision reference assembly.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use hbem::assembly::{assemble_dense_reference, build_backends, dense_operator, integration_context, DenseMatrix};
use hbem::backend::BatchIntegrator;
use hbem::hmatrix::{assemble_hmatrix, block_tree_for_spaces, HMatrix};
use hbem::kernels::{IntegrationContext, OperatorSpec, Precision};
use hbem::mesh::refine_unit_sphere;
use hbem::par;
use hbem::scalar::Scalar;
use hbem::spaces::FunctionSpace;

use crate::config::{BenchConfig, EquationConfig, ModeName, OperatorName, PathName, PrecisionName, SCHEMA_VERSION};
use crate::error::CliError;

pub const FRAMING: &str = "S = t_reference / t_batched. The reference path integrates every element pair \
on the host one at a time; the batched path sends regular pairs to the batched backend through the \
chunked pipeline. Both run on the same CPU, so S measures the batching architecture, not accelerator hardware.";

/// S = t_ref / t_acc, absent when either timing is missing.
pub fn speedup(t_reference: Option<f64>, t_accelerated: Option<f64>) -> Option<f64> {
    match (t_reference, t_accelerated) {
        (Some(r), Some(a)) if r > 0.0 && a > 0.0 => Some(r / a),
        _ => None,
    }
}

/// Mean and sample standard deviation (0 for a single sample).
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub operator: OperatorName,
    pub equation: String,
    pub wavenumber: f64,
    pub level: u32,
    pub elements: usize,
    pub n: usize,
    pub mode: ModeName,
    pub path: PathName,
    pub precision: PrecisionName,
    pub repetitions: usize,
    pub times_s: Vec<f64>,
    pub mean_s: f64,
    pub std_s: f64,
    /// Only on the smallest level.
    pub probe: Option<Probe>,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRecord {
    pub operator: OperatorName,
    pub equation: String,
    pub n: usize,
    pub mode: ModeName,
    pub precision: PrecisionName,
    pub t_reference_s: Option<f64>,
    pub t_batched_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub framing: String,
    pub workers: usize,
    pub config: BenchConfig,
    pub runs: Vec<RunRecord>,
    pub speedups: Vec<SpeedupRecord>,
}

impl BenchmarkReport {
    pub fn all_valid(&self) -> bool {
        self.runs.iter().all(|r| r.valid)
    }

    /// The report with every timing-derived field cleared.
    pub fn without_timings(&self) -> BenchmarkReport {
        let mut r = self.clone();
        for run in &mut r.runs {
            run.times_s.clear();
            run.mean_s = 0.0;
            run.std_s = 0.0;
        }
        for s in &mut r.speedups {
            s.t_reference_s = s.t_reference_s.map(|_| 0.0);
            s.t_batched_s = s.t_batched_s.map(|_| 0.0);
            s.speedup = s.speedup.map(|_| 0.0);
        }
        r
    }
}

enum Assembled<T> {
    Dense(DenseMatrix<T>),
    H(HMatrix<T>),
}

impl<T: Scalar> Assembled<T> {
    fn matvec(&self, x: &[T]) -> hbem::Result<Vec<T>> {
        match self {
            Assembled::Dense(d) => d.matvec(x),
            Assembled::H(h) => h.matvec(x),
        }
    }
}

struct Cell<'a> {
    spec: OperatorSpec,
    ctx: &'a IntegrationContext,
    mode: ModeName,
    path: PathName,
    precision: Precision,
}

fn assemble_cell<T: Scalar>(cell: &Cell<'_>, config: &BenchConfig) -> hbem::Result<Assembled<T>> {
    let asm = config.numerics.assembly(cell.precision);
    let spec = cell.spec.with_precision(cell.precision);
    match (cell.mode, cell.path) {
        (ModeName::Dense, PathName::Reference) => Ok(Assembled::Dense(assemble_dense_reference(&spec, cell.ctx, &asm)?)),
        (ModeName::Dense, PathName::Batched) => Ok(Assembled::Dense(dense_operator(&spec, cell.ctx, &asm)?.0)),
        (ModeName::Hmatrix, path) => {
            let n = &config.numerics;
            let tree = block_tree_for_spaces(&cell.ctx.test, &cell.ctx.trial, n.leaf_size, n.eta);
            let backends = match path {
                PathName::Reference => Vec::new(),
                PathName::Batched => build_backends(&spec, cell.ctx, &asm)?,
            };
            let refs: Vec<&dyn BatchIntegrator> = backends.iter().map(|b| b as &dyn BatchIntegrator).collect();
            Ok(Assembled::H(assemble_hmatrix(&spec, cell.ctx, &tree, &n.aca(), &refs)?.0))
        }
    }
}

fn probe_vector<T: Scalar>(n: usize, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| T::from_parts(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

fn relative_error<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y).abs_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.abs_sqr()).sum();
    (num / den).sqrt()
}

fn probe_tolerance(mode: ModeName, precision: PrecisionName, aca_tolerance: f64) -> f64 {
    let base = match precision {
        PrecisionName::Double => 1e-10,
        PrecisionName::Single => 1e-3,
    };
    match mode {
        ModeName::Dense => base,
        ModeName::Hmatrix => base.max(10.0 * aca_tolerance),
    }
}

/// Times one cell; returns the timings and the probe matvec of the last assembly.
fn time_cell<T: Scalar>(cell: &Cell<'_>, config: &BenchConfig, x: Option<&[T]>) -> hbem::Result<(Vec<f64>, Option<Vec<T>>)> {
    let mut times = Vec::with_capacity(config.repetitions);
    let mut last = None;
    for _ in 0..config.repetitions {
        let start = Instant::now();
        let a = assemble_cell::<T>(cell, config)?;
        times.push(start.elapsed().as_secs_f64());
        last = Some(a);
    }
    let y = match (x, last) {
        (Some(x), Some(a)) => Some(a.matvec(x)?),
        _ => None,
    };
    Ok((times, y))
}

type ProbeCache = HashMap<(OperatorName, usize), Vec<Complex64>>;

fn run_operator<T: Scalar>(
    config: &BenchConfig,
    eq_index: usize,
    operator: OperatorName,
    level: u32,
    smallest: bool,
    ctx: &IntegrationContext,
    cache: &mut ProbeCache,
    runs: &mut Vec<RunRecord>,
) -> Result<(), CliError> {
    let eq: &EquationConfig = &config.equations[eq_index];
    let spec = OperatorSpec::new(eq.equation(), operator.into(), Precision::Double)?;
    let n = ctx.test.dof_count();
    let x: Option<Vec<T>> = smallest.then(|| probe_vector(ctx.trial.dof_count(), config.seed));
    if let Some(x) = &x {
        cache.entry((operator, eq_index)).or_insert_with(|| {
            let reference = assemble_dense_reference::<T>(&spec, ctx, &config.numerics.assembly(Precision::Double))
                .and_then(|a| a.matvec(x));
            match reference {
                Ok(y) => y.into_iter().map(|v| Complex64::new(v.re(), v.im())).collect(),
                Err(e) => {
                    log::error!("reference probe for {operator:?} failed: {e}");
                    Vec::new()
                }
            }
        });
    }
    for &mode in &config.modes {
        for &path in &config.paths {
            for &precision in &config.precisions {
                let cell = Cell {
                    spec,
                    ctx,
                    mode,
                    path,
                    precision: precision.into(),
                };
                let (times, y) = time_cell::<T>(&cell, config, x.as_deref())?;
                let probe = y.map(|y| {
                    let reference: Vec<T> = cache[&(operator, eq_index)]
                        .iter()
                        .map(|v| T::from_parts(v.re, v.im))
                        .collect();
                    let err = if reference.len() == y.len() {
                        relative_error(&y, &reference)
                    } else {
                        f64::INFINITY
                    };
                    let tolerance = probe_tolerance(mode, precision, config.numerics.aca_tolerance);
                    Probe {
                        relative_error: err,
                        tolerance,
                        passed: err <= tolerance,
                    }
                });
                let (mean, std) = mean_std(&times);
                let valid = probe.as_ref().is_none_or(|p| p.passed);
                if !valid {
                    log::error!(
                        "probe failed: {operator:?} {} level {level} {mode:?} {path:?} {precision:?}",
                        eq.name()
                    );
                }
                log::info!(
                    "{operator:?} {} N={n} {mode:?} {path:?} {precision:?}: {mean:.4} s ± {std:.4}",
                    eq.name()
                );
                runs.push(RunRecord {
                    operator,
                    equation: eq.name().into(),
                    wavenumber: eq.wavenumber(),
                    level,
                    elements: ctx.test.mesh().element_count(),
                    n,
                    mode,
                    path,
                    precision,
                    repetitions: config.repetitions,
                    times_s: times,
                    mean_s: mean,
                    std_s: std,
                    probe,
                    valid,
                });
            }
        }
    }
    Ok(())
}

fn speedups(runs: &[RunRecord]) -> Vec<SpeedupRecord> {
    let mut out: Vec<SpeedupRecord> = Vec::new();
    for r in runs {
        let key = |s: &SpeedupRecord| {
            s.operator == r.operator
                && s.equation == r.equation
                && s.n == r.n
                && s.mode == r.mode
                && s.precision == r.precision
        };
        let idx = match out.iter().position(key) {
            Some(i) => i,
            None => {
                out.push(SpeedupRecord {
                    operator: r.operator,
                    equation: r.equation.clone(),
                    n: r.n,
                    mode: r.mode,
                    precision: r.precision,
                    t_reference_s: None,
                    t_batched_s: None,
                    speedup: None,
                });
                out.len() - 1
            }
        };
        match r.path {
            PathName::Reference => out[idx].t_reference_s = Some(r.mean_s),
            PathName::Batched => out[idx].t_batched_s = Some(r.mean_s),
        }
    }
    for s in &mut out {
        s.speedup = speedup(s.t_reference_s, s.t_batched_s);
    }
    out
}

pub fn run_benchmark(config: &BenchConfig) -> Result<BenchmarkReport, CliError> {
    config.validate()?;
    let mut config = config.clone();
    config.levels.sort_unstable();
    config.levels.dedup();
    par::with_workers(config.numerics.workers, || {
        let workers = par::current_workers();
        let mut runs = Vec::new();
        let mut cache = ProbeCache::new();
        for (li, &level) in config.levels.iter().enumerate() {
            let mesh = Arc::new(refine_unit_sphere(level)?);
            for &operator in &config.operators {
                let space = FunctionSpace::new(mesh.clone(), config.family(operator));
                let ctx = integration_context(&space, &space, &config.numerics.assembly(Precision::Double))?;
                for (ei, eq) in config.equations.iter().enumerate() {
                    match eq {
                        EquationConfig::Laplace => {
                            run_operator::<f64>(&config, ei, operator, level, li == 0, &ctx, &mut cache, &mut runs)?
                        }
                        EquationConfig::Helmholtz { .. } => run_operator::<Complex64>(
                            &config, ei, operator, level, li == 0, &ctx, &mut cache, &mut runs,
                        )?,
                    }
                }
            }
        }
        let speedups = speedups(&runs);
        Ok(BenchmarkReport {
            schema_version: SCHEMA_VERSION,
            framing: FRAMING.into(),
            workers,
            config: config.clone(),
            runs,
            speedups,
        })
    })
}

#[derive(Serialize)]
struct RunRow<'a> {
    operator: OperatorName,
    equation: &'a str,
    wavenumber: f64,
    level: u32,
    n: usize,
    mode: ModeName,
    path: PathName,
    precision: PrecisionName,
    repetitions: usize,
    mean_s: f64,
    std_s: f64,
    probe_error: Option<f64>,
    valid: bool,
}

/// Writes `bench_report.json`, `bench_runs.csv` and `bench_speedups.csv`.
pub fn write_report(report: &BenchmarkReport, dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("bench_report.json"), serde_json::to_string_pretty(report)?)?;
    let mut w = csv::Writer::from_path(dir.join("bench_runs.csv"))?;
    for r in &report.runs {
        w.serialize(RunRow {
            operator: r.operator,
            equation: &r.equation,
            wavenumber: r.wavenumber,
            level: r.level,
            n: r.n,
            mode: r.mode,
            path: r.path,
            precision: r.precision,
            repetitions: r.repetitions,
            mean_s: r.mean_s,
            std_s: r.std_s,
            probe_error: r.probe.as_ref().map(|p| p.relative_error),
            valid: r.valid,
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("bench_speedups.csv"))?;
    for s in &report.speedups {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speedup_arithmetic() {
        assert!((speedup(Some(2275.0), Some(1206.0)).unwrap() - 1.886).abs() < 5e-4);
        assert_eq!(speedup(Some(3.0), Some(3.0)), Some(1.0));
        assert_eq!(speedup(Some(3.0), None), None);
    }

    #[test]
    fn absent_speedup_is_not_serialized() {
        let s = SpeedupRecord {
            operator: OperatorName::Slp,
            equation: "laplace".into(),
            n: 80,
            mode: ModeName::Dense,
            precision: PrecisionName::Double,
            t_reference_s: Some(1.0),
            t_batched_s: None,
            speedup: None,
        };
        let v = serde_json::to_value(&s).unwrap();
        assert!(v.get("speedup").is_none());
    }

    #[test]
    fn mean_and_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }
}
