//! Simulation matrices: one oracle-annotated loop run per (strategy, seed).
//!
//! Output directory layout:
//! - `<strategy>-seed<seed>.jsonl`: the run's round records, one per line;
//! - `learning_curve.tsv`: every completed run's per-round test metrics;
//! - `summary.tsv`: per run, final F1, the full-data reference and the
//!   first round reaching the target fraction of it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use nerloop_core::active::{learning_curve_tsv, rounds_to_reach, run_simulation_from, to_jsonl, LoopConfig, train_full_data, RoundRecord, StopReason};
use nerloop_core::metrics::evaluate;
use nerloop_core::query::StrategyId;
use nerloop_core::CorpusSplit;
use rayon::prelude::*;

use crate::{CliError, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub strategy: StrategyId,
    pub seed: u64,
}

impl RunSpec {
    pub fn log_name(&self) -> String {
        format!("{}-seed{}.jsonl", self.strategy, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub spec: RunSpec,
    pub records: Vec<RoundRecord>,
    pub stop_reason: StopReason,
    pub full_data_f1: Option<f64>,
    pub rounds_to_target: Option<usize>,
}

impl RunSummary {
    pub fn final_f1(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.exclusive.f1)
    }
}

#[derive(Debug)]
pub struct MatrixOutcome {
    pub completed: Vec<RunSummary>,
    pub failed: Vec<(RunSpec, String)>,
}

/// Runs in matrix order: strategies outer, seeds inner.
pub fn plan(cfg: &ExperimentConfig, seed_override: Option<u64>) -> Result<Vec<RunSpec>, CliError> {
    let strategies = cfg.strategies()?;
    let seeds = seed_override.map_or_else(|| cfg.seeds(), |s| vec![s]);
    Ok(strategies
        .iter()
        .flat_map(|&strategy| seeds.iter().map(move |&seed| RunSpec { strategy, seed }))
        .collect())
}

/// Test F1 of a model trained on every labeled instance, per seed.
fn full_data_reference(cfg: &ExperimentConfig, split: &CorpusSplit, seed: u64) -> Result<f64, CliError> {
    let lc = LoopConfig {
        rng_seed: seed,
        ..cfg.loop_config.clone()
    };
    let initial = lc.fresh_model(cfg.corpus.model_scheme());
    let model = train_full_data(&lc, split, initial)?;
    Ok(evaluate(&model, &split.test)?.f1)
}

fn run_one(cfg: &ExperimentConfig, split: &CorpusSplit, spec: RunSpec) -> Result<(Vec<RoundRecord>, StopReason), CliError> {
    let lc = LoopConfig {
        strategy: spec.strategy,
        rng_seed: spec.seed,
        ..cfg.loop_config.clone()
    };
    let initial = lc.fresh_model(cfg.corpus.model_scheme());
    let out = run_simulation_from(&lc, split.clone(), initial)?;
    Ok((out.records, out.stop_reason))
}

/// Runs the matrix on `parallel` worker threads (0 picks one per core) and
/// writes the logs, curve and summary into `out`. Failed runs are reported
/// in the outcome rather than aborting the others.
pub fn run_matrix(cfg: &ExperimentConfig, out: &Path, parallel: usize, seed_override: Option<u64>) -> Result<MatrixOutcome, CliError> {
    let specs = plan(cfg, seed_override)?;
    let split = cfg.corpus.load_split()?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;

    let mut seeds: Vec<u64> = specs.iter().map(|s| s.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let (references, results) = pool.install(|| {
        rayon::join(
            || {
                if !cfg.matrix.full_data {
                    return Vec::new();
                }
                seeds
                    .par_iter()
                    .map(|&s| (s, full_data_reference(cfg, &split, s)))
                    .collect::<Vec<_>>()
            },
            || {
                specs
                    .par_iter()
                    .map(|&spec| {
                        let r = run_one(cfg, &split, spec);
                        info!("{} seed {} finished", spec.strategy, spec.seed);
                        (spec, r)
                    })
                    .collect::<Vec<_>>()
            },
        )
    });

    let mut outcome = MatrixOutcome {
        completed: Vec::new(),
        failed: Vec::new(),
    };
    for (spec, r) in results {
        let reference = references.iter().find(|(s, _)| *s == spec.seed).map(|(_, r)| r);
        let full_data_f1 = match reference {
            Some(Err(e)) => {
                outcome.failed.push((spec, format!("full-data reference: {e}")));
                continue;
            }
            Some(Ok(f)) => Some(*f),
            None => None,
        };
        match r {
            Ok((records, stop_reason)) => {
                let path = out.join(spec.log_name());
                std::fs::write(&path, to_jsonl(&records)).map_err(|e| CliError::io(&path, e))?;
                let rounds_to_target = full_data_f1.and_then(|f| rounds_to_reach(&records, cfg.matrix.target_fraction * f));
                outcome.completed.push(RunSummary {
                    spec,
                    records,
                    stop_reason,
                    full_data_f1,
                    rounds_to_target,
                });
            }
            Err(e) => outcome.failed.push((spec, e.to_string())),
        }
    }

    let curve = learning_curve_tsv(outcome.completed.iter().map(|r| r.records.as_slice()));
    write(out.join("learning_curve.tsv"), &curve)?;
    write(out.join("summary.tsv"), &summary_tsv(&outcome.completed, cfg.matrix.target_fraction))?;
    Ok(outcome)
}

fn write(path: PathBuf, text: &str) -> Result<(), CliError> {
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

pub const SUMMARY_HEADER: &str = "strategy\tseed\trounds\tstop_reason\tfinal_f1\tfull_data_f1\ttarget_f1\trounds_to_target";

/// One row per run; unknown values are written as `-`.
pub fn summary_tsv(runs: &[RunSummary], target_fraction: f64) -> String {
    let dash = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in runs {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.spec.strategy,
            r.spec.seed,
            r.records.len().saturating_sub(1),
            r.stop_reason,
            r.final_f1(),
            dash(r.full_data_f1.map(|f| f.to_string())),
            dash(r.full_data_f1.map(|f| (target_fraction * f).to_string())),
            dash(r.rounds_to_target.map(|n| n.to_string())),
        );
    }
    out
}
