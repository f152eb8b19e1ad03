//! One-axis parameter sweeps that share the pretrained model and partitions
//! of each seed across every variant.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::config::RunConfig;
use super::runner::{prepare_seed, run_federated, Datasets};
use super::ExperimentError;
use crate::federation::Baseline;
use crate::metrics::{aed_value, convergence_window, mse_to_centralized, stability_stats, RunSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SweepAxis {
    Mu1,
    Mu2,
    Csr,
    Scd,
    Fsr,
    Lar,
    Framework,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 7] =
        [SweepAxis::Mu1, SweepAxis::Mu2, SweepAxis::Csr, SweepAxis::Scd, SweepAxis::Fsr, SweepAxis::Lar, SweepAxis::Framework];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Mu1 => "mu1",
            SweepAxis::Mu2 => "mu2",
            SweepAxis::Csr => "csr",
            SweepAxis::Scd => "scd",
            SweepAxis::Fsr => "fsr",
            SweepAxis::Lar => "lar",
            SweepAxis::Framework => "framework",
        }
    }

    /// Sets this axis to `value` in `cfg`. Per-RSU overrides of the same
    /// setting are dropped so the sweep value applies everywhere.
    pub fn apply(self, cfg: &mut RunConfig, value: &str) -> Result<(), ExperimentError> {
        let bad = |e: &dyn fmt::Display| ExperimentError::Config(format!("{}={value}: {e}", self.name()));
        let float = || value.parse::<f64>().map_err(|e| bad(&e));
        match self {
            SweepAxis::Mu1 => {
                cfg.federation.mu1 = float()?;
                cfg.rsu.iter_mut().for_each(|r| r.mu1 = None);
            }
            SweepAxis::Mu2 => {
                cfg.federation.mu2 = float()?;
                cfg.rsu.iter_mut().for_each(|r| r.mu2 = None);
            }
            SweepAxis::Csr => {
                cfg.heterogeneity.csr = float()?;
                cfg.rsu.iter_mut().for_each(|r| r.csr = None);
            }
            SweepAxis::Fsr => {
                cfg.heterogeneity.fsr = float()?;
                cfg.rsu.iter_mut().for_each(|r| r.fsr = None);
            }
            SweepAxis::Scd => {
                cfg.heterogeneity.scd_seconds = value.parse().map_err(|e| bad(&e))?;
                cfg.rsu.iter_mut().for_each(|r| r.scd_seconds = None);
            }
            SweepAxis::Lar => {
                cfg.heterogeneity.lar = value.parse().map_err(|e| bad(&e))?;
                cfg.rsu.iter_mut().for_each(|r| r.lar = None);
            }
            SweepAxis::Framework => {
                let b: Baseline = value.parse().map_err(|e| bad(&e))?;
                cfg.apply_baseline(b);
                cfg.rsu.iter_mut().for_each(|r| {
                    r.mu1 = None;
                    r.mu2 = None;
                    r.lar = None;
                });
            }
        }
        cfg.validate()
    }

    /// Directory name of one variant.
    pub fn variant_name(self, value: &str) -> String {
        match self {
            SweepAxis::Framework => value.to_string(),
            _ => format!("{}={value}", self.name()),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| ExperimentError::Config(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AedRow {
    pub seed: u64,
    pub mu1: String,
    pub round: u64,
    pub delta_pos: f64,
    pub delta_zero: f64,
    pub aed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub seed: u64,
    pub final_acc: f64,
    pub std: f64,
    pub max_drawdown: f64,
    /// Mean squared gap to centralized training over all rounds.
    pub mse: Option<f64>,
    /// The same over the final convergence window only.
    pub mse_window: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    /// Keyed by (value, seed).
    pub runs: BTreeMap<(String, u64), RunSeries>,
    pub centralized: BTreeMap<u64, Vec<f64>>,
    /// Only filled for mu1 sweeps.
    pub aed: Vec<AedRow>,
    pub summary: Vec<SummaryRow>,
}

impl SweepOutcome {
    pub fn series(&self, value: &str, seed: u64) -> Option<&RunSeries> {
        self.runs.get(&(value.to_string(), seed))
    }
}

/// AED rows pairing every nonzero mu1 value with the mu1 = 0 run of the same seed.
pub fn aed_table(runs: &BTreeMap<(String, u64), RunSeries>) -> Result<Vec<AedRow>, ExperimentError> {
    let is_zero = |v: &str| v.parse::<f64>().map(|x| x == 0.0).unwrap_or(false);
    let mut rows = Vec::new();
    for ((value, seed), pos) in runs {
        if is_zero(value) {
            continue;
        }
        let zero = runs
            .iter()
            .find(|((v, s), _)| s == seed && is_zero(v))
            .map(|(_, r)| r)
            .ok_or_else(|| ExperimentError::Config("AED needs a mu1 = 0 reference run in the sweep".into()))?;
        for (p, z) in pos.records.iter().zip(&zero.records) {
            rows.push(AedRow {
                seed: *seed,
                mu1: value.clone(),
                round: p.round,
                delta_pos: p.delta_acc,
                delta_zero: z.delta_acc,
                aed: aed_value(p.delta_acc, z.delta_acc),
            });
        }
    }
    Ok(rows)
}

pub fn summarize(variant: &str, series: &RunSeries, centralized: Option<&[f64]>) -> Result<SummaryRow, ExperimentError> {
    let acc = series.accuracies();
    let window = convergence_window(acc.len());
    let stats = stability_stats(&acc, window)?;
    Ok(SummaryRow {
        variant: variant.to_string(),
        seed: series.header.seed,
        final_acc: series.final_acc().unwrap_or(f64::NAN),
        std: stats.std,
        max_drawdown: stats.max_drawdown,
        mse: centralized.map(|c| mse_to_centralized(&acc, c)),
        mse_window: centralized.map(|c| {
            let n = acc.len().min(c.len());
            let from = n.saturating_sub(window);
            mse_to_centralized(&acc[from..n], &c[from..n])
        }),
    })
}

pub fn summary_csv_text(rows: &[SummaryRow]) -> String {
    let mut text = String::from("variant,seed,final_acc,std,max_drawdown,mse,mse_window\n");
    let opt = |v: Option<f64>| v.map(|m| m.to_string()).unwrap_or_default();
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.variant,
            r.seed,
            r.final_acc,
            r.std,
            r.max_drawdown,
            opt(r.mse),
            opt(r.mse_window)
        ));
    }
    text
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<(), ExperimentError> {
    fs::write(path, summary_csv_text(rows)).map_err(ExperimentError::io(path))
}

pub fn write_aed_csv(path: &Path, rows: &[AedRow]) -> Result<(), ExperimentError> {
    let mut text = String::from("seed,mu1,round,delta_pos,delta_zero,aed\n");
    for r in rows {
        let aed = r.aed.map(|a| a.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{},{},{},{}\n", r.seed, r.mu1, r.round, r.delta_pos, r.delta_zero, aed));
    }
    fs::write(path, text).map_err(ExperimentError::io(path))
}

/// Runs every value of `axis` for every seed in `base.run.seeds`. Each seed
/// pretrains once; all variants of that seed start from the same file.
pub fn run_sweep(
    base: &RunConfig,
    data: &Datasets,
    axis: SweepAxis,
    values: &[String],
    out: Option<&Path>,
) -> Result<SweepOutcome, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::Config("sweep needs at least one value".into()));
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut cfg = base.clone();
        axis.apply(&mut cfg, v)?;
        configs.push(cfg);
    }
    let is_zero = |v: &String| v.parse::<f64>().map(|x| x == 0.0).unwrap_or(false);
    if axis == SweepAxis::Mu1 && values.len() > 1 && !values.iter().any(is_zero) {
        return Err(ExperimentError::Config("mu1 sweep must include 0 as the AED reference".into()));
    }

    let mut runs = BTreeMap::new();
    let mut centralized = BTreeMap::new();
    let mut summary = Vec::new();
    for &seed in &base.run.seeds {
        let seed_dir = out.map(|o| o.join(format!("seed-{seed}")));
        let stage = prepare_seed(base, data, seed, seed_dir.as_deref())?;
        for (value, cfg) in values.iter().zip(&configs) {
            let variant = axis.variant_name(value);
            let run_dir = seed_dir.as_ref().map(|d| d.join(&variant));
            let series = run_federated(cfg, data, &stage, &variant, run_dir.as_deref())?;
            summary.push(summarize(&variant, &series, stage.centralized.as_deref())?);
            runs.insert((value.clone(), seed), series);
        }
        if let Some(c) = stage.centralized {
            centralized.insert(seed, c);
        }
    }
    let aed = if axis == SweepAxis::Mu1 && values.len() > 1 { aed_table(&runs)? } else { Vec::new() };
    if let Some(o) = out {
        fs::write(o.join("config.toml"), base.to_toml()).map_err(ExperimentError::io(o))?;
        write_summary_csv(&o.join("summary.csv"), &summary)?;
        if !aed.is_empty() {
            write_aed_csv(&o.join("aed.csv"), &aed)?;
        }
    }
    Ok(SweepOutcome { axis, values: values.to_vec(), runs, centralized, aed, summary })
}
