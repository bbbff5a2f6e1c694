use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ptcontrol::experiment::{
    build_or_load, parse_controls, parse_duration_range, parse_grid, run_nonmarkov, run_optimize, run_sweep,
    sweep_csv, trajectory_csv, ExperimentConfig, PtCache,
};
use ptcontrol::process_tensor::{load_pt, save_pt};
use ptcontrol::Error;

/// Optimal control of a two-level system in a non-Markovian bosonic bath.
#[derive(Parser)]
#[command(name = "ptcontrol", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a process tensor and write it to a cache file.
    BuildPt {
        #[arg(long)]
        config: PathBuf,
        /// Process duration in ps.
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize the control fields for one duration, starting from control B.
    Optimize {
        /// Prebuilt process tensor; its duration is used.
        #[arg(long, conflicts_with = "duration")]
        pt: Option<PathBuf>,
        /// Experiment config. Required unless the defaults are wanted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, requires = "config")]
        duration: Option<f64>,
        /// Output JSON; trajectory CSVs are written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Additional optimizations from random starts.
        #[arg(long, default_value_t = 0)]
        restarts: usize,
    },
    /// Sweep process durations and emit sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Durations as start:stop:step in ps.
        #[arg(long)]
        durations: String,
        #[arg(long)]
        out: PathBuf,
        /// Worker count; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// BLP non-Markovianity of a control schedule.
    Nonmarkov {
        #[arg(long)]
        pt: PathBuf,
        /// Schedule JSON, bare or as written by `optimize`.
        #[arg(long)]
        controls: PathBuf,
        /// θ × φ grid, e.g. 16x32.
        #[arg(long, default_value = "16x32")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}_{suffix}"))
}

fn run(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::BuildPt { config, duration, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (pt, summary) = build_or_load(&cfg, duration, None)?;
            save_pt(&pt, &out)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Optimize {
            pt,
            config,
            duration,
            out,
            restarts,
        } => {
            let cfg = match &config {
                Some(path) => ExperimentConfig::load(path)?,
                None => ExperimentConfig::default(),
            };
            let pt = match (pt, duration) {
                (Some(path), None) => load_pt(&path)?,
                (None, Some(t)) => build_or_load(&cfg, t, None)?.0,
                _ => return Err(Error::Config("give either --pt or --config with --duration".into())),
            };
            let report = run_optimize(&pt, &cfg, restarts)?;
            write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
            write(&sibling(&out, "trajectory_A.csv"), trajectory_csv(&report.trajectory_a))?;
            write(&sibling(&out, "trajectory_B.csv"), trajectory_csv(&report.trajectory_b))?;
            eprintln!(
                "T = {} ps: infidelity A {:.6e}, B {:.6e} ({} iterations, {:?})",
                report.duration_ps,
                report.result.infidelity,
                report.control_b_infidelity,
                report.result.iterations,
                report.result.termination_reason
            );
        }
        Command::Sweep {
            config,
            durations,
            out,
            jobs,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let durations = parse_duration_range(&durations)?;
            fs::create_dir_all(&out).map_err(|source| Error::Io {
                path: out.clone(),
                source,
            })?;
            let cache = PtCache::new(out.join("pt_cache"))?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let rows = run_sweep(&cfg, &durations, jobs, Some(&cache));
            write(&out.join("sweep.csv"), sweep_csv(&rows))?;
            for r in rows.iter().filter(|r| !r.is_ok()) {
                eprintln!("T = {} ps: {}", r.t_ps, r.status);
            }
            if !rows.iter().any(|r| r.is_ok()) {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Nonmarkov { pt, controls, grid, out } => {
            let grid = parse_grid(&grid)?;
            let sched = parse_controls(&read(&controls)?)?;
            let pt = load_pt(&pt)?;
            let report = run_nonmarkov(&pt, &sched, &grid)?;
            write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
