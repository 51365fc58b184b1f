//! `pg-lio`: simulate datasets, run the odometry, evaluate trajectories.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pglio::eval::evaluate;
use pglio::io::{read_config, read_imu, read_scan, read_trajectory, write_trajectory, Config};
use pglio::pipeline::Pipeline;
use pglio::simulator::{scenario, write_dataset, SCENARIOS};

#[derive(Parser)]
#[command(name = "pg-lio", version, about = "Photometric-geometric LiDAR-inertial odometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SCENARIOS))]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Run odometry over a directory of scans and an IMU file.
    Run {
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        imu: PathBuf,
        /// Key-value configuration; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_photometric: bool,
        #[arg(long)]
        no_geometric: bool,
        /// Also write the final map as `map.xyz`.
        #[arg(long)]
        save_map: bool,
    },
    /// Compare an estimated trajectory against a reference.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Segment length for the relative error, metres.
        #[arg(long, default_value_t = 10.0)]
        delta: f64,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<pglio::Error> for Failure {
    fn from(e: pglio::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn scan_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::Usage(format!("scan directory not found: {}", dir.display())));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgls"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Usage(format!("no .pgls scans in {}", dir.display())));
    }
    Ok(files)
}

fn simulate(name: &str, seed: u64, out: &Path, duration: Option<f64>) -> Result<(), Failure> {
    let mut s = scenario(name)?;
    if let Some(d) = duration {
        if !(d > s.lidar.period) {
            return Err(Failure::Usage(format!("duration must exceed one revolution ({} s), got {d}", s.lidar.period)));
        }
        s.duration = d;
    }
    write_dataset(&s.simulate(seed), out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    scans: &Path,
    imu: &Path,
    config: Option<&Path>,
    out: &Path,
    no_photometric: bool,
    no_geometric: bool,
    save_map: bool,
) -> Result<(), Failure> {
    require_file(imu, "IMU file")?;
    if let Some(c) = config {
        require_file(c, "config file")?;
    }
    let files = scan_files(scans)?;
    let mut cfg = match config {
        Some(c) => read_config(c)?,
        None => Config::default(),
    };
    if no_photometric {
        cfg.photo.enabled = false;
    }
    if no_geometric {
        cfg.geo.enabled = false;
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut pipeline = Pipeline::new(cfg)?;
    pipeline.push_imu(&read_imu(imu)?)?;

    let diag_path = out.join("diagnostics.jsonl");
    let mut diag = BufWriter::new(File::create(&diag_path).map_err(io_err(&diag_path))?);
    let mut trajectory = Vec::new();
    for f in &files {
        let scan = read_scan(f)?;
        if let Some(o) = pipeline.process_scan(&scan)? {
            let line = serde_json::to_string(&o.diagnostics).map_err(|e| Failure::Runtime(e.to_string()))?;
            writeln!(diag, "{line}").map_err(io_err(&diag_path))?;
            trajectory.push((o.stamp, o.pose));
        }
    }
    diag.flush().map_err(io_err(&diag_path))?;
    write_trajectory(out.join("trajectory.tum"), &trajectory)?;
    if save_map {
        let p = out.join("map.xyz");
        std::fs::write(&p, pipeline.map().to_xyz()).map_err(io_err(&p))?;
    }
    log::info!("{} of {} scans processed", trajectory.len(), files.len());
    Ok(())
}

fn evaluate_cmd(est: &Path, reference: &Path, delta: f64, json: bool) -> Result<(), Failure> {
    require_file(est, "estimate")?;
    require_file(reference, "reference")?;
    if !(delta > 0.0) {
        return Err(Failure::Usage(format!("delta must be positive, got {delta}")));
    }
    let m = evaluate(&read_trajectory(est)?, &read_trajectory(reference)?, delta)?;
    if json {
        println!("{}", serde_json::to_string(&m).map_err(|e| Failure::Runtime(e.to_string()))?);
    } else {
        println!("pairs        {}", m.pairs);
        println!("path length  {:.3} m", m.path_length_m);
        println!("ATE RMSE     {:.4} m", m.ate_rmse_m);
        match m.re_percent {
            Some(re) => println!("RE ({} m)    {:.3} %", m.re_delta_m, re),
            None => println!("RE ({} m)    n/a (path too short)", m.re_delta_m),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Simulate { scenario, seed, out, duration } => simulate(scenario, *seed, out, *duration),
        Command::Run { scans, imu, config, out, no_photometric, no_geometric, save_map } => {
            run(scans, imu, config.as_deref(), out, *no_photometric, *no_geometric, *save_map)
        }
        Command::Evaluate { est, reference, delta, json } => evaluate_cmd(est, reference, *delta, *json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
