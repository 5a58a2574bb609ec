//! Batch runner behind the `cdqlab` binary: experiment files, run
//! directories, and cross-seed summaries.

pub mod error;
pub mod experiment;
pub mod runner;
pub mod summarize;

pub use error::CliError;
pub use experiment::{Experiment, ExperimentFile, RunSpec};
pub use runner::{run_all, Manifest, ManifestEntry, RunFilter, RunInfo, RunStatus};
pub use summarize::{summarize, write_summary, SummaryRow};

/// Human-readable validation report: every resolved field of every
/// experiment, then the problems found. The flag is `true` when there are none.
pub fn validation_report(file: &ExperimentFile) -> (String, bool) {
    use std::fmt::Write;
    let mut s = String::new();
    for e in &file.experiments {
        let _ = writeln!(s, "[{}] seeds {}..{}", e.name, e.seeds.start, e.seeds.end);
        for (k, v) in e.config.resolved() {
            if k != "seed" {
                let _ = writeln!(s, "  {k} = {v}");
            }
        }
    }
    let issues = file.issues();
    if issues.is_empty() {
        let runs: usize = file.experiments.iter().map(|e| e.seeds.clone().count()).sum();
        let _ = writeln!(s, "ok: {} experiment(s), {runs} run(s)", file.experiments.len());
    } else {
        for (name, issue) in &issues {
            let _ = writeln!(s, "error: [{name}] {issue}");
        }
    }
    (s, issues.is_empty())
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/experiments.md")]
mod book_experiments {}
