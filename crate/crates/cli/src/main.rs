use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hbem_cli::bench::{run_benchmark, write_report};
use hbem_cli::config::{read_json, BenchConfig, ModeName, PrecisionName, ScatterFileConfig};
use hbem_cli::scatter::{run, write_outputs};
use hbem_cli::CliError;

const AFTER_HELP: &str = "\
Outputs:
  bench    bench_report.json   resolved config, framing, every run and speedup
           bench_runs.csv      operator,equation,wavenumber,level,n,mode,path,precision,
                               repetitions,mean_s,std_s,probe_error,valid
           bench_speedups.csv  operator,equation,n,mode,precision,t_reference_s,
                               t_batched_s,speedup (S = t_reference / t_batched)
  scatter  far_field.csv       theta_deg,re,im,abs_u,TS_dB
                               one row per evaluation angle on the ring of radius R;
                               TS_dB = 20 log10(|u| R / |A|)
           scatter_report.json resolved config, iterations, residual history, timings

Exit codes:
  0  success
  2  invalid configuration, mesh or arguments (including an under-resolved mesh
     without --force)
  3  numerical failure (solver did not converge, non-finite values, failed probe)";

#[derive(Debug, Parser)]
#[command(name = "hbem", version, about = "Boundary element assembly benchmark and scattering solver", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time reference and batched assembly across mesh levels.
    Bench(Common),
    /// Solve sound-hard scattering of a plane wave and write the far field.
    Scatter(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration; defaults apply to every missing field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Operator representation.
    #[arg(long, value_parser = ["dense", "hmatrix"])]
    mode: Option<String>,
    /// Floating-point precision of the regular integrals.
    #[arg(long, value_parser = ["single", "double"])]
    precision: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Number of batched backends.
    #[arg(long)]
    devices: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Run even when the mesh has fewer than 6 elements per wavelength.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn mode(&self) -> Option<ModeName> {
        self.mode.as_deref().map(|m| match m {
            "hmatrix" => ModeName::Hmatrix,
            _ => ModeName::Dense,
        })
    }

    fn precision(&self) -> Option<PrecisionName> {
        self.precision.as_deref().map(|p| match p {
            "single" => PrecisionName::Single,
            _ => PrecisionName::Double,
        })
    }

    fn load<T: Default + for<'de> serde::Deserialize<'de>>(&self) -> Result<T, CliError> {
        match &self.config {
            Some(p) => read_json(p),
            None => Ok(T::default()),
        }
    }

    fn base(&self) -> Option<&Path> {
        self.config.as_deref().and_then(Path::parent)
    }
}

fn bench(args: &Common) -> Result<(), CliError> {
    let mut config: BenchConfig = args.load()?;
    if let Some(m) = args.mode() {
        config.modes = vec![m];
    }
    if let Some(p) = args.precision() {
        config.precisions = vec![p];
    }
    if args.workers.is_some() {
        config.numerics.workers = args.workers;
    }
    if let Some(d) = args.devices {
        config.numerics.devices = d;
    }
    let report = run_benchmark(&config)?;
    write_report(&report, &args.out)?;
    for s in &report.speedups {
        match s.speedup {
            Some(v) => println!("{:?} {} N={} {:?}: S = {v:.3}", s.operator, s.equation, s.n, s.mode),
            None => println!("{:?} {} N={} {:?}: S not available", s.operator, s.equation, s.n, s.mode),
        }
    }
    if !report.all_valid() {
        let bad: Vec<String> = report
            .runs
            .iter()
            .filter(|r| !r.valid)
            .map(|r| format!("{:?}/{}/{:?}/{:?}/{:?}", r.operator, r.equation, r.mode, r.path, r.precision))
            .collect();
        return Err(CliError::Probe(bad.join(", ")));
    }
    Ok(())
}

fn scatter(args: &Common) -> Result<(), CliError> {
    let mut config: ScatterFileConfig = args.load()?;
    if let Some(m) = args.mode() {
        config.mode = m;
    }
    if let Some(p) = args.precision() {
        config.precision = p;
    }
    if args.workers.is_some() {
        config.numerics.workers = args.workers;
    }
    if let Some(d) = args.devices {
        config.numerics.devices = d;
    }
    config.force |= args.force;
    let (report, _, far) = run(config, args.base())?;
    write_outputs(&report, &far, &args.out)?;
    println!(
        "{} elements, {} iterations, residual {:.2e}, wrote {}",
        report.elements,
        report.iterations,
        report.residual,
        args.out.join("far_field.csv").display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Bench(a) => bench(a),
        Command::Scatter(a) => scatter(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
