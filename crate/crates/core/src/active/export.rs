//! Round logs as newline-delimited JSON and learning curves as TSV.

use serde::{Deserialize, Serialize};

use super::RoundRecord;
use crate::query::StrategyId;

/// One record per line, in order.
pub fn to_jsonl(records: &[RoundRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("round records serialize") + "\n")
        .collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<RoundRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// One learning-curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: StrategyId,
    pub seed: u64,
    pub round: usize,
    pub labeled: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub cumulative_corrections: usize,
}

impl CurveRow {
    pub fn from_record(r: &RoundRecord) -> Self {
        Self {
            strategy: r.strategy,
            seed: r.rng_seed,
            round: r.round,
            labeled: r.labeled_count,
            precision: r.exclusive.precision,
            recall: r.exclusive.recall,
            f1: r.exclusive.f1,
            cumulative_corrections: r.cumulative_corrections,
        }
    }
}

pub const CURVE_HEADER: &str = "strategy\tseed\tround\tlabeled\tprecision\trecall\tf1\tcumulative_corrections";

/// Tab-separated learning curve with a header line.
pub fn learning_curve_tsv<'a>(runs: impl IntoIterator<Item = &'a [RoundRecord]>) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for run in runs {
        for r in run {
            let c = CurveRow::from_record(r);
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                c.strategy, c.seed, c.round, c.labeled, c.precision, c.recall, c.f1, c.cumulative_corrections
            ));
        }
    }
    out
}

/// First round whose test F1 reaches `target`.
pub fn rounds_to_reach(records: &[RoundRecord], target: f64) -> Option<usize> {
    records.iter().find(|r| r.exclusive.f1 >= target).map(|r| r.round)
}
