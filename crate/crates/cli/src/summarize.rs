//! Cross-seed aggregation of completed runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use cdqlab::stats;
use cdqlab::trainer::{MetricRecord, Variant};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::runner::{RunInfo, CHECKPOINT, FAILED, METRICS_JSONL, RUN_INFO};

pub const SUMMARY_CSV: &str = "summary.csv";

/// Mean and standard error across seeds of one metric at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub variant: Variant,
    pub env: String,
    pub metric: String,
    pub component: Option<usize>,
    pub step: usize,
    /// Runs contributing a value.
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

type Key = (String, Variant, String, String, Option<usize>, usize);

/// A run directory that finished: run info and checkpoint present, no
/// failure marker.
pub fn completed_runs(out: &Path) -> Result<Vec<(RunInfo, PathBuf)>, CliError> {
    let mut runs = Vec::new();
    let entries = match fs::read_dir(out) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(runs),
        Err(e) => return Err(CliError::io(out, e)),
    };
    for entry in entries {
        let dir = entry.map_err(|e| CliError::io(out, e))?.path();
        if !dir.is_dir() || dir.join(FAILED).exists() || !dir.join(CHECKPOINT).exists() {
            continue;
        }
        let info_path = dir.join(RUN_INFO);
        let Ok(text) = fs::read_to_string(&info_path) else {
            continue;
        };
        let info: RunInfo =
            serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", info_path.display())))?;
        runs.push((info, dir));
    }
    runs.sort_by(|a, b| a.0.run_id.cmp(&b.0.run_id));
    Ok(runs)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| CliError::Runtime(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// One row per `(experiment, variant, env, metric, component, step)`, in
/// that sort order. Empty when `out` holds no completed runs.
pub fn summarize(out: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for (info, dir) in completed_runs(out)? {
        for m in read_metrics(&dir.join(METRICS_JSONL))? {
            let key = (info.experiment.clone(), info.variant, info.env.clone(), m.metric, m.component, m.step);
            groups.entry(key).or_default().push(m.value);
        }
    }
    Ok(groups
        .into_iter()
        .map(|((experiment, variant, env, metric, component, step), xs)| SummaryRow {
            experiment,
            variant,
            env,
            metric,
            component,
            step,
            n: xs.len(),
            mean: stats::mean(&xs),
            se: stats::std_err(&xs),
        })
        .collect())
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
