//! Recomputes summary statistics from a finished run directory, using only
//! the files on disk.

use std::fs;
use std::path::{Path, PathBuf};

use super::sweep::{summarize, summary_csv_text, AedRow, SummaryRow};
use super::ExperimentError;
use crate::metrics::{aed_value, read_accuracy_csv, read_metrics_csv, running_mse, RunHeader, RunSeries};

#[derive(Debug, Clone)]
pub struct RunReport {
    pub path: PathBuf,
    pub series: RunSeries,
    pub summary: SummaryRow,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub runs: Vec<RunReport>,
    pub aed: Vec<AedRow>,
    /// Disagreements between stored and recomputed values.
    pub problems: Vec<String>,
}

impl Report {
    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.runs.iter().map(|r| r.summary.clone()).collect()
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<28} {:>6} {:>9} {:>9} {:>9} {:>11} {:>11}\n",
            "variant", "seed", "final", "std", "drawdown", "mse", "mse_window"
        );
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
        for r in &self.runs {
            let m = &r.summary;
            s.push_str(&format!(
                "{:<28} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>11} {:>11}\n",
                m.variant,
                m.seed,
                m.final_acc,
                m.std,
                m.max_drawdown,
                opt(m.mse),
                opt(m.mse_window)
            ));
        }
        if !self.aed.is_empty() {
            s.push_str("\nAED (mu1 > 0 over mu1 = 0)\n");
            for r in self.aed.iter().filter(|r| r.aed.is_some()) {
                s.push_str(&format!("seed {} mu1={} round {}: {:.4}\n", r.seed, r.mu1, r.round, r.aed.unwrap()));
            }
        }
        for p in &self.problems {
            s.push_str(&format!("MISMATCH: {p}\n"));
        }
        s
    }
}

fn find_metrics(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), ExperimentError> {
    let mut entries: Vec<_> = fs::read_dir(dir).map_err(ExperimentError::io(dir))?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_metrics(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == "metrics.csv") {
            found.push(path);
        }
    }
    Ok(())
}

fn load_run(metrics: &Path, problems: &mut Vec<String>) -> Result<RunReport, ExperimentError> {
    let dir = metrics.parent().expect("metrics.csv has a parent");
    let header_path = dir.join("header.json");
    let text = fs::read_to_string(&header_path).map_err(ExperimentError::io(&header_path))?;
    let header: RunHeader =
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", header_path.display())))?;
    let csv = read_metrics_csv(metrics)?;
    if csv.config_hash != header.config_hash && !csv.records.is_empty() {
        problems.push(format!("{}: config hash differs from header", metrics.display()));
    }
    let mut series = RunSeries::new(header);
    for rec in csv.records {
        if let Err(e) = series.push(rec) {
            problems.push(format!("{}: {e}", metrics.display()));
            break;
        }
    }
    let centralized_path = dir.parent().map(|p| p.join("centralized.csv"));
    let centralized = match centralized_path {
        Some(p) if p.exists() => Some(read_accuracy_csv(&p)?),
        _ => None,
    };
    if let Some(c) = &centralized {
        let recomputed = running_mse(&series.accuracies(), c);
        for (rec, m) in series.records.iter().zip(&recomputed) {
            if rec.mse_running != Some(*m) {
                problems.push(format!("{} round {}: stored mse_running {:?}, recomputed {m}", metrics.display(), rec.round, rec.mse_running));
                break;
            }
        }
    }
    let variant = series.header.variant.clone();
    let summary = summarize(&variant, &series, centralized.as_deref())?;
    Ok(RunReport { path: metrics.to_path_buf(), series, summary })
}

fn check_aed(root: &Path, runs: &[RunReport], problems: &mut Vec<String>) -> Result<Vec<AedRow>, ExperimentError> {
    let path = root.join("aed.csv");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(&path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())));
        let seed: u64 = rec[0].parse().map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let mu1 = rec[1].to_string();
        let round = num(2)? as u64;
        let find = |variant: &str| runs.iter().find(|r| r.series.header.seed == seed && r.series.header.variant == variant);
        let (pos, zero) = match (find(&format!("mu1={mu1}")), find("mu1=0")) {
            (Some(p), Some(z)) => (p, z),
            _ => {
                problems.push(format!("aed.csv row for seed {seed} mu1={mu1} has no matching runs"));
                continue;
            }
        };
        let (dp, dz) = match (pos.series.records.get(round as usize), zero.series.records.get(round as usize)) {
            (Some(p), Some(z)) => (p.delta_acc, z.delta_acc),
            _ => {
                problems.push(format!("aed.csv round {round} missing from runs"));
                continue;
            }
        };
        let aed = aed_value(dp, dz);
        let stored = if rec[5].is_empty() { None } else { Some(num(5)?) };
        if stored != aed {
            problems.push(format!("aed.csv seed {seed} mu1={mu1} round {round}: stored {stored:?}, recomputed {aed:?}"));
        }
        rows.push(AedRow { seed, mu1, round, delta_pos: dp, delta_zero: dz, aed });
    }
    Ok(rows)
}

/// Compares a sweep's stored summary.csv with the recomputed rows.
fn check_summary(root: &Path, runs: &[RunReport], problems: &mut Vec<String>) -> Result<(), ExperimentError> {
    let path = root.join("summary.csv");
    if !path.exists() {
        return Ok(());
    }
    let recomputed: Vec<SummaryRow> = runs.iter().map(|r| r.summary.clone()).collect();
    let fresh = summary_csv_text(&recomputed);
    let stored = fs::read_to_string(&path).map_err(ExperimentError::io(&path))?;
    let mut stored_lines: Vec<&str> = stored.lines().collect();
    let mut fresh_lines: Vec<&str> = fresh.lines().collect();
    stored_lines.sort_unstable();
    fresh_lines.sort_unstable();
    if stored_lines != fresh_lines {
        problems.push(format!("{} differs from the values recomputed from metrics.csv files", path.display()));
    }
    Ok(())
}

pub fn report(dir: &Path) -> Result<Report, ExperimentError> {
    if !dir.is_dir() {
        return Err(ExperimentError::Config(format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    find_metrics(dir, &mut files)?;
    if files.is_empty() {
        return Err(ExperimentError::Config(format!("no metrics.csv under {}", dir.display())));
    }
    let mut problems = Vec::new();
    let mut runs = Vec::new();
    for f in &files {
        runs.push(load_run(f, &mut problems)?);
    }
    let aed = check_aed(dir, &runs, &mut problems)?;
    check_summary(dir, &runs, &mut problems)?;
    Ok(Report { runs, aed, problems })
}
