//! Command-line front end: `generate`, `run`, `sweep`, `convergence` and `report`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nhf::harness::{
    convergence_experiment, emit_report, repetition_config, run_experiment, summarize_reports, sweep, timing_path,
    write_json, ConvergenceConfig, ExperimentConfig, ReportFormat, RunReport, SweepAxis, Timing,
};
use nhf::model::{generate_ground_truth, write_binary, write_csv};
use nhf::qmc::HaltonStream;
use nhf::{NhfError, Result};

#[derive(Parser, Debug)]
#[command(
    name = "nhf",
    version,
    about = "Nested hybrid filters for parameter estimation and state tracking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (JSON). Defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `run.seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Output format.
    #[arg(long, global = true, default_value = "json")]
    format: ReportFormat,

    /// Worker threads (0 = all cores). Falls back to NHF_THREADS.
    #[arg(long, global = true, env = "NHF_THREADS")]
    threads: Option<usize>,

    /// Also write `DIM COUNT` Halton points (from index 1) to a CSV file.
    #[arg(long, global = true, num_args = 2, value_names = ["DIM", "COUNT"])]
    dump_qmc: Option<Vec<usize>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the two-scale model and write the truth and observations.
    Generate {
        /// Write binary dumps instead of CSV.
        #[arg(long)]
        binary: bool,
    },
    /// Run the configured filter for every repetition.
    Run,
    /// Sweep one configuration axis.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Repetitions per value (defaults to `run.repetitions`).
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Error against the exact posterior on a linear-Gaussian model as N grows.
    Convergence,
    /// Aggregate the run reports found in a directory.
    Report {
        /// Directory holding emitted run reports (defaults to `--out`).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let threads = cli.common.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| NhfError::Config(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli))
}

struct Output<'a> {
    dir: &'a Path,
    stamp: String,
    seed: u64,
}

impl Output<'_> {
    fn path(&self, verb: &str, suffix: &str, ext: &str) -> PathBuf {
        self.dir
            .join(format!("{verb}_{}_{}{suffix}.{ext}", self.stamp, self.seed))
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    std::fs::create_dir_all(&c.out).map_err(|e| NhfError::io(&c.out, e))?;
    let mut cfg = match &c.config {
        Some(p) if !matches!(cli.command, Command::Convergence) => ExperimentConfig::load(p)?,
        _ => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.run.seed = s;
    }
    let out = Output {
        dir: &c.out,
        stamp: chrono::Utc::now().format("%Y%m%dT%H%M%S").to_string(),
        seed: cfg.run.seed,
    };

    if let Some(spec) = &c.dump_qmc {
        let (dim, count) = (spec[0], spec[1]);
        let mut h = HaltonStream::starting_at(dim, 1)?;
        let rows = h.next_block(count);
        let steps: Vec<u64> = (1..=count as u64).collect();
        let path = out.path("qmc", "", "csv");
        write_csv(&path, &steps, &rows)?;
        println!("{}", path.display());
    }

    match &cli.command {
        Command::Generate { binary } => {
            let n_steps = cfg.n_observations() * cfg.model.m as u64;
            let gt = generate_ground_truth(&cfg.model, n_steps, cfg.run.seed)?;
            let ext = if *binary { "bin" } else { "csv" };
            let write = |path: &Path, steps: &[u64], rows: &[Vec<f64>]| {
                if *binary {
                    write_binary(path, steps, rows)
                } else {
                    write_csv(path, steps, rows)
                }
            };
            let truth_path = out.path("generate", "_truth", ext);
            write(&truth_path, &gt.trajectory.times, &gt.trajectory.slow_states)?;
            let obs_path = out.path("generate", "_observations", ext);
            write(&obs_path, &gt.observations.steps, &gt.observations.values)?;
            println!("{}\n{}", truth_path.display(), obs_path.display());
        }
        Command::Run => {
            for rep in 0..cfg.run.repetitions as u64 {
                let rc = if cfg.run.repetitions == 1 {
                    cfg.clone()
                } else {
                    repetition_config(&cfg, rep)
                };
                let report = run_experiment(&rc)?;
                let suffix = if cfg.run.repetitions == 1 {
                    String::new()
                } else {
                    format!("_rep{rep}")
                };
                print_run(&report, &emit(&report, c.format, &out.path("run", &suffix, "json"))?);
            }
        }
        Command::Sweep { axis, values, reps } => {
            let reps = reps.unwrap_or(cfg.run.repetitions);
            let mut counter = 0usize;
            let report = sweep(&cfg, *axis, values, reps, |value, r| {
                let path = out.path("sweep", &format!("_{value}_rep{}", counter % reps), "json");
                counter += 1;
                emit(r, c.format, &path).map(|_| ())
            })?;
            let path = out.path("sweep", "", "json");
            write_json(&report, &path)?;
            let timing: Vec<(usize, f64, f64)> = report
                .points
                .iter()
                .map(|p| (p.value, p.wall_time_mean, p.wall_time_std))
                .collect();
            write_json(&timing, &timing_path(&path))?;
            for p in &report.points {
                println!(
                    "{}={:<6} mse={} ± {}  wall={:.2}s",
                    axis_name(*axis),
                    p.value,
                    fmt_opt(p.mse_mean),
                    fmt_opt(p.mse_std),
                    p.wall_time_mean
                );
            }
            println!("{}", path.display());
        }
        Command::Convergence => {
            let mut ccfg = match &c.config {
                Some(p) => nhf::harness::read_json::<ConvergenceConfig>(p)?,
                None => ConvergenceConfig::default(),
            };
            if let Some(s) = c.seed {
                ccfg.seed = s;
            }
            let start = std::time::Instant::now();
            let report = convergence_experiment(&ccfg)?;
            let path = out.path("convergence", "", "json");
            write_json(&report, &path)?;
            write_json(
                &Timing {
                    wall_time_seconds: start.elapsed().as_secs_f64(),
                },
                &timing_path(&path),
            )?;
            for p in &report.points {
                println!("N={:<6} mean |error| = {:.6}", p.n, p.mean_error);
            }
            println!("slope = {:.4}\n{}", report.slope, path.display());
        }
        Command::Report { input } => {
            let dir = input.as_deref().unwrap_or(&c.out);
            let summary = summarize_reports(dir)?;
            let path = out.path("report", "", "json");
            write_json(&summary, &path)?;
            println!(
                "{} runs ({} diverged), mse={} ± {}\n{}",
                summary.runs,
                summary.diverged_runs,
                fmt_opt(summary.mse_mean),
                fmt_opt(summary.mse_std),
                path.display()
            );
        }
    }
    Ok(())
}

fn emit(report: &RunReport, format: ReportFormat, json_path: &Path) -> Result<Vec<PathBuf>> {
    let path = match format {
        ReportFormat::Json => json_path.to_path_buf(),
        ReportFormat::Csv => json_path.with_extension("csv"),
    };
    emit_report(report, format, &path)
}

fn print_run(report: &RunReport, paths: &[PathBuf]) {
    println!(
        "seed={} mse={} diverged={} wall={:.2}s",
        report.config_echo.run.seed,
        fmt_opt(report.mse_mean),
        report.diverged,
        report.wall_time_seconds
    );
    for p in paths {
        println!("  {}", p.display());
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn axis_name(a: SweepAxis) -> &'static str {
    match a {
        SweepAxis::N => "N",
        SweepAxis::Dx => "d_x",
        SweepAxis::M => "m",
    }
}
