//! Executes runs and lays out their output directories.
//!
//! ```text
//! <out>/
//!   manifest.json            every run this directory has seen, with status
//!   <run_id>/
//!     run.json               experiment name, variant, env, seed
//!     config.toml            resolved trainer configuration
//!     metrics.jsonl          one MetricRecord per line, flushed as written
//!     metrics.csv            the same records as a flat table
//!     checkpoint.bin         final parameters (completed runs only)
//!     FAILED                 error message (failed runs only)
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cdqlab::trainer::{MetricRecord, Trainer, Variant};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::experiment::RunSpec;

pub const MANIFEST: &str = "manifest.json";
pub const RUN_INFO: &str = "run.json";
pub const CONFIG: &str = "config.toml";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const METRICS_CSV: &str = "metrics.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const FAILED: &str = "FAILED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub experiment: String,
    pub variant: Variant,
    pub env: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub info: RunInfo,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub runs: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(out: &Path) -> Result<Self, CliError> {
        let path = out.join(MANIFEST);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }

    /// Replaces entries with the same run id, keeps the rest.
    fn merge(&mut self, entries: Vec<ManifestEntry>) {
        for e in entries {
            match self.runs.iter_mut().find(|r| r.info.run_id == e.info.run_id) {
                Some(slot) => *slot = e,
                None => self.runs.push(e),
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunFilter {
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
}

impl RunFilter {
    pub fn keeps(&self, run: &RunSpec) -> bool {
        self.variant.is_none_or(|v| v == run.config.variant) && self.seed.is_none_or(|s| s == run.config.seed)
    }
}

/// Runs every spec (on `jobs` threads), then records them in the manifest.
/// Failed runs do not stop the others.
pub fn run_all(runs: &[RunSpec], out: &Path, jobs: usize) -> Result<Vec<ManifestEntry>, CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let entries: Vec<ManifestEntry> = pool.install(|| runs.par_iter().map(|r| run_one(r, out)).collect());
    let mut manifest = Manifest::load(out)?;
    manifest.merge(entries.clone());
    let path = out.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(entries)
}

fn run_one(spec: &RunSpec, out: &Path) -> ManifestEntry {
    let info = RunInfo {
        run_id: spec.run_id.clone(),
        experiment: spec.experiment.clone(),
        variant: spec.config.variant,
        env: spec.config.env.clone(),
        seed: spec.config.seed,
    };
    let dir = out.join(&spec.run_id);
    info!("{}: starting", spec.run_id);
    match execute(spec, &info, &dir) {
        Ok(()) => {
            info!("{}: completed", spec.run_id);
            ManifestEntry {
                info,
                status: RunStatus::Completed,
                error: None,
            }
        }
        Err(e) => {
            let msg = e.to_string();
            warn!("{}: failed: {msg}", spec.run_id);
            if let Err(w) = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join(FAILED), format!("{msg}\n"))) {
                warn!("{}: could not write failure marker: {w}", spec.run_id);
            }
            ManifestEntry {
                info,
                status: RunStatus::Failed,
                error: Some(msg),
            }
        }
    }
}

struct MetricWriters {
    jsonl: BufWriter<File>,
    csv: csv::Writer<File>,
}

impl MetricWriters {
    fn create(dir: &Path) -> Result<Self, CliError> {
        let open = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map_err(|e| CliError::io(&p, e))
        };
        Ok(Self {
            jsonl: BufWriter::new(open(METRICS_JSONL)?),
            csv: csv::Writer::from_writer(open(METRICS_CSV)?),
        })
    }

    fn write(&mut self, m: &MetricRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.jsonl, m)?;
        self.jsonl.write_all(b"\n")?;
        self.jsonl.flush()?;
        self.csv.serialize(m).map_err(std::io::Error::other)?;
        self.csv.flush()
    }
}

fn execute(spec: &RunSpec, info: &RunInfo, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for stale in [FAILED, CHECKPOINT] {
        let p = dir.join(stale);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| CliError::io(&p, e))?;
        }
    }
    let write = |name: &str, text: String| {
        let p: PathBuf = dir.join(name);
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    };
    write(RUN_INFO, serde_json::to_string_pretty(info).expect("run info serializes") + "\n")?;
    let snapshot = toml::to_string(&spec.config).map_err(|e| CliError::Runtime(e.to_string()))?;
    write(CONFIG, snapshot)?;

    let mut writers = MetricWriters::create(dir)?;
    let mut trainer = Trainer::new(spec.config.clone())
        .map_err(|e| CliError::Runtime(e.to_string()))?
        .with_run_id(spec.run_id.clone());
    trainer
        .run(&mut |m| {
            writers.write(m).map_err(|e| cdqlab::Error::Aborted {
                step: m.step,
                reason: format!("writing metrics: {e}"),
            })
        })
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let p = dir.join(CHECKPOINT);
    let mut f = BufWriter::new(File::create(&p).map_err(|e| CliError::io(&p, e))?);
    trainer.checkpoint().write_to(&mut f).map_err(|e| CliError::Runtime(e.to_string()))?;
    f.flush().map_err(|e| CliError::io(&p, e))
}
