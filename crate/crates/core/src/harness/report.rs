//! Writing reports to disk as JSON or CSV.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::RunReport;
use super::sweep::mean_std;
use crate::error::{NhfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = NhfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(NhfError::invalid(format!(
                "unknown format `{other}` (expected json or csv)"
            ))),
        }
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| NhfError::Serialization {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| NhfError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| NhfError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| NhfError::Serialization {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// `dir/stem.timing.json` next to a report at `dir/stem.ext`.
pub fn timing_path(path: &Path) -> PathBuf {
    sibling(path, ".timing.json")
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_seconds: f64,
}

/// Writes a run report. JSON: the full report at `path`. CSV: `<stem>_mse.csv`
/// (`step,mse`) and `<stem>_theta.csv` (`step`, posterior means, posterior
/// variances). The wall time goes to `<stem>.timing.json` in both cases.
/// Returns the written paths.
pub fn emit_report(report: &RunReport, format: ReportFormat, path: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    match format {
        ReportFormat::Json => {
            write_json(report, path)?;
            written.push(path.to_path_buf());
        }
        ReportFormat::Csv => {
            let mse_path = sibling(path, "_mse.csv");
            let mut w = csv_writer(&mse_path)?;
            csv_row(&mut w, &mse_path, ["step".to_string(), "mse".to_string()])?;
            for p in &report.mse_time_series {
                csv_row(
                    &mut w,
                    &mse_path,
                    [p.step.to_string(), p.mse.map(|v| format!("{v:?}")).unwrap_or_default()],
                )?;
            }
            w.flush().map_err(|e| NhfError::io(&mse_path, e))?;
            written.push(mse_path);

            let theta_path = sibling(path, "_theta.csv");
            let mut w = csv_writer(&theta_path)?;
            let d = report.theta_trace.first().map_or(3, |s| s.theta_mean.len());
            let header = std::iter::once("step".to_string())
                .chain((0..d).map(|j| format!("mean_{j}")))
                .chain((0..d).map(|j| format!("var_{j}")));
            csv_row(&mut w, &theta_path, header)?;
            for s in &report.theta_trace {
                let row = std::iter::once(s.step.to_string())
                    .chain(s.theta_mean.iter().map(|v| format!("{v:?}")))
                    .chain((0..d).map(|j| format!("{:?}", s.theta_cov[j][j])));
                csv_row(&mut w, &theta_path, row)?;
            }
            w.flush().map_err(|e| NhfError::io(&theta_path, e))?;
            written.push(theta_path);
        }
    }
    let tp = timing_path(path);
    write_json(
        &Timing {
            wall_time_seconds: report.wall_time_seconds,
        },
        &tp,
    )?;
    written.push(tp);
    Ok(written)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| NhfError::Serialization {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn csv_row<I: IntoIterator<Item = String>>(w: &mut csv::Writer<std::fs::File>, path: &Path, row: I) -> Result<()> {
    w.write_record(row).map_err(|e| NhfError::Serialization {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Aggregate of previously emitted run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub files: Vec<String>,
    pub runs: usize,
    pub diverged_runs: usize,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
    pub wall_time_mean: Option<f64>,
}

/// Reads every run report (`*.json` other than timing files) in `dir` and
/// aggregates their mean MSE and, where available, wall times.
pub fn summarize_reports(dir: &Path) -> Result<ReportSummary> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| NhfError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            name.ends_with(".json") && !name.ends_with(".timing.json")
        })
        .collect();
    paths.sort();
    let mut files = Vec::new();
    let mut mses = Vec::new();
    let mut walls = Vec::new();
    let mut diverged_runs = 0;
    for p in &paths {
        let Ok(report) = read_json::<RunReport>(p) else {
            continue;
        };
        files.push(p.file_name().unwrap_or_default().to_string_lossy().into_owned());
        diverged_runs += usize::from(report.diverged);
        if let Some(m) = report.mse_mean {
            mses.push(m);
        }
        if let Ok(t) = read_json::<Timing>(&timing_path(p)) {
            walls.push(t.wall_time_seconds);
        }
    }
    let (mse_mean, mse_std) = mean_std(&mses).unzip();
    Ok(ReportSummary {
        runs: files.len(),
        files,
        diverged_runs,
        mse_mean,
        mse_std,
        wall_time_mean: mean_std(&walls).map(|(m, _)| m),
    })
}
