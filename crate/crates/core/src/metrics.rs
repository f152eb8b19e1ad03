//! Per-round records, accuracy enhancement degree, stability statistics and
//! the centralized-training reference.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabeledDataset, RsuId};
use crate::model::{evaluate, sgd_epoch_indices, Anchors, ModelError, ParamVector, ProximalSpec, SgdOptions};
use crate::seeds::{stream_seed, tag};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("round {0} missing from series")]
    MissingRound(u64),
    #[error("rounds must increase by one from 0; got {found} after {previous:?}")]
    RoundOrder { previous: Option<u64>, found: u64 },
    #[error("delta_acc {delta} is not global_acc - acc_pre ({expected})")]
    DeltaMismatch { delta: f64, expected: f64 },
    #[error("window must be at least 1 and at most the series length {len}, got {window}")]
    Window { window: usize, len: usize },
    #[error("metrics csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("metrics io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed metrics csv: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One global round of a run. Round 0 is the evaluation of the initial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub global_acc: f64,
    pub delta_acc: f64,
    pub per_rsu_csr: BTreeMap<RsuId, f64>,
    pub stale_rsus: BTreeSet<RsuId>,
    /// Cumulative mean squared accuracy gap to centralized training.
    pub mse_running: Option<f64>,
    /// Wall time of the round. Kept out of the metrics CSV so that reruns are
    /// byte-identical.
    pub wall_ms: u64,
}

/// Run provenance written next to the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub variant: String,
    pub config_hash: String,
    pub seed: u64,
    pub acc_pre: f64,
    pub pretrained_sha256: Option<String>,
    pub model_size_bytes: usize,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub header: RunHeader,
    pub records: Vec<RoundRecord>,
}

impl RunSeries {
    pub fn new(header: RunHeader) -> Self {
        Self { header, records: Vec::new() }
    }

    pub fn push(&mut self, record: RoundRecord) -> Result<(), MetricsError> {
        let previous = self.records.last().map(|r| r.round);
        let expected = previous.map_or(0, |p| p + 1);
        if record.round != expected {
            return Err(MetricsError::RoundOrder { previous, found: record.round });
        }
        let delta = record.global_acc - self.header.acc_pre;
        if record.delta_acc != delta {
            return Err(MetricsError::DeltaMismatch { delta: record.delta_acc, expected: delta });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.global_acc).collect()
    }

    pub fn record(&self, round: u64) -> Result<&RoundRecord, MetricsError> {
        self.records.get(round as usize).filter(|r| r.round == round).ok_or(MetricsError::MissingRound(round))
    }

    pub fn final_acc(&self) -> Option<f64> {
        self.records.last().map(|r| r.global_acc)
    }
}

/// Relative accuracy gain `(d_pos - d_zero) / d_zero`; `None` when `d_zero == 0`.
pub fn aed_value(delta_pos: f64, delta_zero: f64) -> Option<f64> {
    if delta_zero == 0.0 {
        None
    } else {
        Some((delta_pos - delta_zero) / delta_zero)
    }
}

/// Accuracy enhancement degree of a `mu1 > 0` run over its `mu1 = 0` twin at `round`.
pub fn aed(series_mu_pos: &RunSeries, series_mu_zero: &RunSeries, round: u64) -> Result<Option<f64>, MetricsError> {
    let pos = series_mu_pos.record(round)?;
    let zero = series_mu_zero.record(round)?;
    Ok(aed_value(pos.delta_acc, zero.delta_acc))
}

/// Threshold on the `mu1 = 0` accuracy gain before AED is reported.
pub const AED_WARMUP_DELTA: f64 = 0.01;

/// AED per aligned round, reported from the first round whose `mu1 = 0` gain
/// exceeds [`AED_WARMUP_DELTA`]. Earlier rounds and zero denominators map to `None`.
pub fn aed_curve(delta_pos: &[f64], delta_zero: &[f64]) -> Vec<Option<f64>> {
    let n = delta_pos.len().min(delta_zero.len());
    let start = delta_zero[..n].iter().position(|&d| d > AED_WARMUP_DELTA).unwrap_or(n);
    (0..n).map(|t| if t < start { None } else { aed_value(delta_pos[t], delta_zero[t]) }).collect()
}

/// Per-round mean over seeds of the defined entries of several AED curves.
pub fn seed_mean_curve(curves: &[Vec<Option<f64>>]) -> Vec<Option<f64>> {
    let n = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..n)
        .map(|t| {
            let vals: Vec<f64> = curves.iter().filter_map(|c| c[t]).collect();
            if vals.is_empty() {
                None
            } else {
                Some(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        })
        .collect()
}

/// Mean squared gap over rounds aligned by index, truncated to the shorter series.
pub fn mse_to_centralized(fed: &[f64], cen: &[f64]) -> f64 {
    let n = fed.len().min(cen.len());
    if n == 0 {
        return 0.0;
    }
    fed.iter().zip(cen).take(n).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64
}

/// Cumulative MSE after each aligned round.
pub fn running_mse(fed: &[f64], cen: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    fed.iter()
        .zip(cen)
        .enumerate()
        .map(|(t, (a, b))| {
            sum += (a - b) * (a - b);
            sum / (t + 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityStats {
    pub std: f64,
    pub max_drawdown: f64,
}

/// Population std and largest peak-to-later-trough drop over the last `window` values.
pub fn stability_stats(acc: &[f64], window: usize) -> Result<StabilityStats, MetricsError> {
    if window == 0 || window > acc.len() {
        return Err(MetricsError::Window { window, len: acc.len() });
    }
    let tail = &acc[acc.len() - window..];
    let mean = tail.iter().sum::<f64>() / window as f64;
    let var = tail.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / window as f64;
    let mut peak = f64::NEG_INFINITY;
    let mut drawdown = 0.0f64;
    for &a in tail {
        peak = peak.max(a);
        drawdown = drawdown.max(peak - a);
    }
    Ok(StabilityStats { std: var.sqrt(), max_drawdown: drawdown })
}

/// Final quarter of the rounds, at least one.
pub fn convergence_window(n_rounds: usize) -> usize {
    n_rounds.div_ceil(4).max(1).min(n_rounds.max(1))
}

/// Mean and population std.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// First round whose accuracy reaches `threshold`.
pub fn rounds_to_reach(acc: &[f64], threshold: f64) -> Option<usize> {
    acc.iter().position(|&a| a >= threshold)
}

/// Plain SGD on pooled data, one accuracy entry per epoch starting with the
/// initial model's accuracy at index 0.
pub fn centralized_train(
    train: &LabeledDataset,
    indices: &[usize],
    test: &LabeledDataset,
    init: &ParamVector,
    epochs: usize,
    sgd: SgdOptions,
    seed: u64,
) -> Result<(ParamVector, Vec<f64>), MetricsError> {
    let mut params = init.clone();
    let batch = test.as_batch();
    let mut series = vec![evaluate(&params, &batch)?];
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, &[tag::CENTRAL]));
    let anchor = init.clone();
    for _ in 0..epochs {
        sgd_epoch_indices(&mut params, train, indices, Anchors { rsu: &anchor, cloud: &anchor }, ProximalSpec::none(), sgd, &mut rng)?;
        series.push(evaluate(&params, &batch)?);
    }
    Ok((params, series))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Column names of the metrics CSV for the given RSUs.
pub fn csv_columns(rsus: &[RsuId]) -> Vec<String> {
    let mut cols: Vec<String> = ["round", "global_acc", "delta_acc", "aed", "mse_running"].iter().map(|s| s.to_string()).collect();
    cols.extend(rsus.iter().map(|k| format!("csr_rsu{k}")));
    cols.extend(rsus.iter().map(|k| format!("stale_rsu{k}")));
    cols.push("config_hash".into());
    cols.push("seed".into());
    cols
}

/// Appends rows to a metrics CSV, flushing after each so an interrupted run
/// leaves a readable prefix.
pub struct MetricsWriter {
    writer: csv::Writer<File>,
    rsus: Vec<RsuId>,
    config_hash: String,
    seed: u64,
}

impl MetricsWriter {
    pub fn create(path: &Path, rsus: &[RsuId], config_hash: &str, seed: u64) -> Result<Self, MetricsError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(csv_columns(rsus))?;
        writer.flush()?;
        Ok(Self { writer, rsus: rsus.to_vec(), config_hash: config_hash.to_string(), seed })
    }

    pub fn write(&mut self, rec: &RoundRecord, aed: Option<f64>) -> Result<(), MetricsError> {
        let mut row = vec![rec.round.to_string(), rec.global_acc.to_string(), rec.delta_acc.to_string(), fmt_opt(aed), fmt_opt(rec.mse_running)];
        row.extend(self.rsus.iter().map(|k| fmt_opt(rec.per_rsu_csr.get(k).copied())));
        row.extend(self.rsus.iter().map(|k| u8::from(rec.stale_rsus.contains(k)).to_string()));
        row.push(self.config_hash.clone());
        row.push(self.seed.to_string());
        self.writer.write_record(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

/// A metrics CSV read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSeries {
    pub rsus: Vec<RsuId>,
    pub records: Vec<RoundRecord>,
    pub aed: Vec<Option<f64>>,
    pub config_hash: String,
    pub seed: u64,
}

fn parse_opt(s: &str) -> Result<Option<f64>, MetricsError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| MetricsError::Malformed(format!("not a number: {s:?}")))
    }
}

fn parse_req<T: std::str::FromStr>(s: &str) -> Result<T, MetricsError> {
    s.parse().map_err(|_| MetricsError::Malformed(format!("bad value {s:?}")))
}

pub fn read_metrics_csv(path: &Path) -> Result<CsvSeries, MetricsError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let rsus: Vec<RsuId> = headers
        .iter()
        .filter_map(|h| h.strip_prefix("csr_rsu"))
        .map(parse_req)
        .collect::<Result<_, _>>()?;
    if headers.iter().collect::<Vec<_>>() != csv_columns(&rsus) {
        return Err(MetricsError::Malformed(format!("unexpected header {headers:?}")));
    }
    let k = rsus.len();
    let mut out = CsvSeries { rsus: rsus.clone(), records: Vec::new(), aed: Vec::new(), config_hash: String::new(), seed: 0 };
    for row in reader.records() {
        let row = row?;
        let mut per_rsu_csr = BTreeMap::new();
        let mut stale_rsus = BTreeSet::new();
        for (j, &rsu) in rsus.iter().enumerate() {
            if let Some(v) = parse_opt(&row[5 + j])? {
                per_rsu_csr.insert(rsu, v);
            }
            if &row[5 + k + j] == "1" {
                stale_rsus.insert(rsu);
            }
        }
        out.records.push(RoundRecord {
            round: parse_req(&row[0])?,
            global_acc: parse_req(&row[1])?,
            delta_acc: parse_req(&row[2])?,
            per_rsu_csr,
            stale_rsus,
            mse_running: parse_opt(&row[4])?,
            wall_ms: 0,
        });
        out.aed.push(parse_opt(&row[3])?);
        out.config_hash = row[5 + 2 * k].to_string();
        out.seed = parse_req(&row[6 + 2 * k])?;
    }
    Ok(out)
}

/// Writes `round,acc` rows for a plain accuracy series.
pub fn write_accuracy_csv(path: &Path, acc: &[f64]) -> Result<(), MetricsError> {
    let mut f = File::create(path)?;
    writeln!(f, "round,acc")?;
    for (t, a) in acc.iter().enumerate() {
        writeln!(f, "{t},{a}")?;
    }
    Ok(())
}

pub fn read_accuracy_csv(path: &Path) -> Result<Vec<f64>, MetricsError> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.records().map(|r| parse_req(&r?[1])).collect()
}
