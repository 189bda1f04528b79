//! Aggregates round logs into a strategy × round table.
//!
//! Means and standard deviations are over runs (population standard
//! deviation, so a single run gives 0). A round only some runs reached is
//! averaged over those runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nerloop_core::active::{parse_jsonl, RoundRecord};
use nerloop_core::query::StrategyId;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub strategy: StrategyId,
    pub round: usize,
    pub runs: usize,
    pub labeled_mean: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub corrections_mean: f64,
    pub corrections_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Rows ordered by strategy, then round.
pub fn aggregate<'a>(runs: impl IntoIterator<Item = &'a [RoundRecord]>) -> Vec<ReportRow> {
    let mut cells: BTreeMap<(StrategyId, usize), Vec<&RoundRecord>> = BTreeMap::new();
    for run in runs {
        for r in run {
            cells.entry((r.strategy, r.round)).or_default().push(r);
        }
    }
    cells
        .into_iter()
        .map(|((strategy, round), rs)| {
            let f1: Vec<f64> = rs.iter().map(|r| r.exclusive.f1).collect();
            let corr: Vec<f64> = rs.iter().map(|r| r.cumulative_corrections as f64).collect();
            let labeled: Vec<f64> = rs.iter().map(|r| r.labeled_count as f64).collect();
            let (f1_mean, f1_std) = mean_std(&f1);
            let (corrections_mean, corrections_std) = mean_std(&corr);
            ReportRow {
                strategy,
                round,
                runs: rs.len(),
                labeled_mean: mean_std(&labeled).0,
                f1_mean,
                f1_std,
                corrections_mean,
                corrections_std,
            }
        })
        .collect()
}

/// Reads every `*.jsonl` file in `dir`.
pub fn read_logs(dir: &Path) -> Result<Vec<Vec<RoundRecord>>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let path = e.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "jsonl") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(CliError::NoLogs(dir.to_path_buf()));
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            parse_jsonl(&text).map_err(|e| CliError::Log {
                path: p.clone(),
                line: e.line(),
                message: e.to_string(),
            })
        })
        .collect()
}

pub const REPORT_HEADER: &str = "strategy\tround\truns\tlabeled\tf1_mean\tf1_std\tcorrections_mean\tcorrections_std";

pub fn render(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.1}\t{:.4}\t{:.4}\t{:.2}\t{:.2}",
            r.strategy, r.round, r.runs, r.labeled_mean, r.f1_mean, r.f1_std, r.corrections_mean, r.corrections_std
        );
    }
    out
}

/// The table for a log directory.
pub fn report_dir(dir: &Path) -> Result<String, CliError> {
    let runs = read_logs(dir)?;
    Ok(render(&aggregate(runs.iter().map(Vec::as_slice))))
}
