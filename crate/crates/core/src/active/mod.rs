//! The pool → query → annotate → retrain controller.
//!
//! [`LoopState`] is a single-writer state machine shared by simulation and
//! live annotation. A round opens by scoring the pool and fixing a batch
//! with the current model's suggestions; it closes once annotations for the
//! whole batch arrive, after which the model is retrained (warm-started by
//! default), evaluated and a [`RoundRecord`] appended. Retraining is split
//! into [`LoopState::prepare_retrain`], [`RetrainJob::run`] and
//! [`LoopState::finish_round`] so it can run off the state's thread.

mod export;
mod human;
mod transfer;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{AnnotationError, AnnotationRecord};
use crate::corpus::{CorpusError, CorpusSplit, LabelScheme, Pool, Tag, TokenSequence};
use crate::crf::{train, CrfError, CrfModel, FeatureEncoder, FeatureTemplate, TrainConfig};
use crate::metrics::{evaluate, inclusive_metrics, EntityMetrics, InclusiveMetrics};
use crate::query::{build_similarity, select_batch, QueryConfig, QueryError, QueryScore, SimilarityMatrix, StrategyId};

pub use export::{learning_curve_tsv, parse_jsonl, rounds_to_reach, to_jsonl, CurveRow};
pub use human::{compute_consistency, workload_report, ConsistencyReport, InstanceWorkload, WorkloadReport};
pub use transfer::{
    all_outside_baseline, few_shot_finetune, pretrain_source, run_transfer, select_shots, zero_shot_eval, TransferConfig, TransferOutcome,
};

/// Annotator id used for oracle annotations in simulation.
pub const ORACLE_ANNOTATOR: &str = "oracle";

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("invalid loop configuration: {0}")]
    InvalidConfig(String),
    #[error("instance `{0}` is not in the current batch")]
    NotQueried(String),
    #[error("no annotation for queried instance `{0}`")]
    MissingAnnotation(String),
    #[error("no round is open")]
    NoOpenRound,
    #[error("a round is already open")]
    RoundOpen,
    #[error("no overlap")]
    NoOverlap,
    #[error("no gold labels for `{0}`")]
    NoGold(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StoppingRule {
    /// Run until the round or instance budget is spent.
    Budget,
    /// Also stop once held-out F1 changed by less than `epsilon` in each of
    /// the last `patience` rounds.
    Plateau { epsilon: f64, patience: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Plateau,
    PoolExhausted,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Budget => "budget",
            StopReason::Plateau => "plateau",
            StopReason::PoolExhausted => "pool_exhausted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub strategy: StrategyId,
    pub batch_size: usize,
    /// Maximum number of query rounds.
    pub rounds: usize,
    /// Maximum number of queried instances; `rounds * batch_size` if unset.
    pub budget: Option<usize>,
    /// Number of seed instances used; all of them if unset.
    pub seed_size: Option<usize>,
    pub passes: usize,
    pub beta: f64,
    pub id_base: StrategyId,
    pub bald_token_averaged: bool,
    /// Feature dropout rate used by the stochastic strategies.
    pub dropout_rate: f64,
    /// Epochs when training on the seed set and when retraining from scratch.
    pub initial_epochs: usize,
    /// Epochs of each warm-started retrain.
    pub epochs: usize,
    /// Continue from the previous weights instead of retraining from scratch.
    pub warm_start: bool,
    pub stopping: StoppingRule,
    pub train: TrainConfig,
    pub templates: Vec<FeatureTemplate>,
    pub rng_seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyId::Ltp,
            batch_size: 10,
            rounds: 20,
            budget: None,
            seed_size: None,
            passes: 10,
            beta: 1.0,
            id_base: StrategyId::Ltp,
            bald_token_averaged: false,
            dropout_rate: 0.3,
            initial_epochs: 10,
            epochs: 5,
            warm_start: true,
            stopping: StoppingRule::Budget,
            train: TrainConfig::default(),
            templates: FeatureTemplate::ALL.to_vec(),
            rng_seed: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        let bad = |m: &str| Err(LoopError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if matches!(self.strategy, StrategyId::Bald | StrategyId::BatchBald) && self.passes == 0 {
            return bad("passes must be at least 1");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if let StoppingRule::Plateau { epsilon, patience } = self.stopping {
            if !(epsilon > 0.0) {
                return bad("plateau epsilon must be positive");
            }
            if patience == 0 {
                return bad("plateau patience must be at least 1");
            }
        }
        Ok(())
    }

    /// Instance budget.
    pub fn instance_budget(&self) -> usize {
        self.budget.unwrap_or(self.rounds.saturating_mul(self.batch_size))
    }

    fn mixed_seed(&self, round: usize) -> u64 {
        self.rng_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((round as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
    }

    fn query_config(&self, round: usize) -> QueryConfig {
        QueryConfig {
            strategy: self.strategy,
            passes: self.passes,
            beta: self.beta,
            id_base: self.id_base,
            bald_token_averaged: self.bald_token_averaged,
            rng_seed: self.mixed_seed(round),
        }
    }

    fn train_config(&self, round: usize, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            seed: self.train.seed ^ self.mixed_seed(round),
            ..self.train.clone()
        }
    }

    /// An untrained model for `scheme` with this configuration's encoder.
    pub fn fresh_model(&self, scheme: LabelScheme) -> CrfModel {
        CrfModel::new(scheme, FeatureEncoder::new(self.templates.clone(), self.dropout_rate), true)
    }
}

/// One completed round. Round 0 is the model trained on the seed set only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub strategy: StrategyId,
    pub rng_seed: u64,
    pub theta_version: u64,
    pub labeled_count: usize,
    pub queried_ids: Vec<String>,
    pub scores: Vec<QueryScore>,
    pub annotations: Vec<AnnotationRecord>,
    pub workload: WorkloadReport,
    pub cumulative_corrections: usize,
    /// Entity-level metrics on the test set.
    pub exclusive: EntityMetrics,
    pub validation: Option<EntityMetrics>,
    /// Joint human/model corpus quality; absent without gold for the pool.
    pub inclusive: Option<InclusiveMetrics>,
    /// Wall-clock retrain time; not recorded in simulation.
    pub retrain_seconds: Option<f64>,
}

/// The model's suggestion for a queried instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub tags: Vec<Tag>,
    pub theta_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenBatch {
    pub round: usize,
    pub scores: Vec<QueryScore>,
    pub suggestions: BTreeMap<String, Suggestion>,
}

impl OpenBatch {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.scores.iter().map(|q| q.instance_id.as_str())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.suggestions.contains_key(id)
    }
}

/// Training work detached from the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainJob {
    pub round: usize,
    pub base: CrfModel,
    pub data: Vec<TokenSequence>,
    pub train: TrainConfig,
}

impl RetrainJob {
    pub fn run(&self) -> Result<CrfModel, CrfError> {
        Ok(train(&self.base, &self.data, &self.train)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    config: LoopConfig,
    model: CrfModel,
    labeled: Vec<TokenSequence>,
    pool: Pool,
    /// The pool as first loaded, in order; similarity is computed over it.
    origin: Vec<TokenSequence>,
    validation: Vec<TokenSequence>,
    test: Vec<TokenSequence>,
    queried_total: usize,
    cumulative_corrections: usize,
    batch: Option<OpenBatch>,
    history: Vec<RoundRecord>,
    stop: Option<StopReason>,
    plateau: bool,
    halt_on_plateau: bool,
    #[serde(skip)]
    similarity: Option<SimilarityMatrix>,
}

impl LoopState {
    /// Trains `initial` on the seed set (when non-empty), evaluates it and
    /// records round 0.
    pub fn new(config: LoopConfig, split: CorpusSplit, initial: CrfModel, halt_on_plateau: bool) -> Result<Self, LoopError> {
        config.validate()?;
        let CorpusSplit {
            labeled_seed,
            unlabeled_pool,
            validation,
            test,
        } = split;
        let mut labeled = labeled_seed;
        if let Some(n) = config.seed_size {
            labeled.truncate(n);
        }
        if let Some(s) = labeled.iter().find(|s| s.gold_tags().is_none()) {
            return Err(LoopError::NoGold(s.id().to_string()));
        }
        let mut model = initial;
        model.set_dropout_rate(config.dropout_rate);
        if !labeled.is_empty() && config.initial_epochs > 0 {
            model = train(&model, &labeled, &config.train_config(0, config.initial_epochs))?.0;
        }
        let mut state = Self {
            origin: unlabeled_pool.instances().to_vec(),
            config,
            model,
            labeled,
            pool: unlabeled_pool,
            validation,
            test,
            queried_total: 0,
            cumulative_corrections: 0,
            batch: None,
            history: Vec::new(),
            stop: None,
            plateau: false,
            halt_on_plateau,
            similarity: None,
        };
        let record = state.evaluate_round(0, Vec::new(), Vec::new(), WorkloadReport::default(), None)?;
        state.history.push(record);
        state.update_stop();
        Ok(state)
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn model(&self) -> &CrfModel {
        &self.model
    }

    pub fn labeled(&self) -> &[TokenSequence] {
        &self.labeled
    }

    pub fn pool(&self) -> &Pool {
        &self.pool
    }

    pub fn test(&self) -> &[TokenSequence] {
        &self.test
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    pub fn open_batch(&self) -> Option<&OpenBatch> {
        self.batch.as_ref()
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    /// Whether the plateau rule is currently satisfied.
    pub fn plateau_reached(&self) -> bool {
        self.plateau
    }

    /// Query rounds completed.
    pub fn rounds_completed(&self) -> usize {
        self.history.len().saturating_sub(1)
    }

    pub fn queried_total(&self) -> usize {
        self.queried_total
    }

    pub fn budget_remaining(&self) -> usize {
        self.config.instance_budget().saturating_sub(self.queried_total)
    }

    /// Looks up an instance of the batch, pool or labeled set.
    pub fn instance(&self, id: &str) -> Option<&TokenSequence> {
        self.pool.get(id).or_else(|| self.labeled.iter().find(|s| s.id() == id))
    }

    fn similarity(&mut self) -> &SimilarityMatrix {
        if self.similarity.is_none() {
            self.similarity = Some(build_similarity(&self.origin, self.config.beta));
        }
        self.similarity.as_ref().unwrap()
    }

    fn update_stop(&mut self) {
        if self.stop.is_some() {
            return;
        }
        if let StoppingRule::Plateau { epsilon, patience } = self.config.stopping {
            let f1s: Vec<f64> = self
                .history
                .iter()
                .map(|r| r.validation.map_or(r.exclusive.f1, |v| v.f1))
                .collect();
            self.plateau = f1s.len() > patience
                && f1s[f1s.len() - patience - 1..].windows(2).all(|w| (w[1] - w[0]).abs() < epsilon);
        }
        let rounds_done = self.rounds_completed();
        if rounds_done >= self.config.rounds || self.queried_total >= self.config.instance_budget() {
            self.stop = Some(StopReason::Budget);
        } else if self.plateau && self.halt_on_plateau {
            self.stop = Some(StopReason::Plateau);
        } else if self.pool.is_empty() {
            self.stop = Some(StopReason::PoolExhausted);
        }
    }

    /// Scores the pool and fixes the next batch with the current model's
    /// suggestions. Returns `None` once the loop has stopped.
    pub fn open_round(&mut self) -> Result<Option<&OpenBatch>, LoopError> {
        if self.batch.is_some() {
            return Err(LoopError::RoundOpen);
        }
        if self.stop.is_some() {
            return Ok(None);
        }
        let round = self.history.len();
        let b = self.config.batch_size.min(self.budget_remaining()).min(self.pool.len());
        let qcfg = self.config.query_config(round);
        let sim = if self.config.strategy == StrategyId::Id {
            Some(self.similarity().clone())
        } else {
            None
        };
        let scores = select_batch(&self.model, self.pool.instances(), b, &qcfg, sim.as_ref())?;
        let mut suggestions = BTreeMap::new();
        for q in &scores {
            let seq = self.pool.get(&q.instance_id).expect("selected from pool");
            suggestions.insert(
                q.instance_id.clone(),
                Suggestion {
                    tags: self.model.viterbi_decode(seq)?.best_path,
                    theta_version: self.model.theta_version(),
                },
            );
        }
        self.batch = Some(OpenBatch {
            round,
            scores,
            suggestions,
        });
        Ok(self.batch.as_ref())
    }

    /// Checks a single annotation against the open batch and the scheme.
    pub fn check_annotation(&self, record: &AnnotationRecord) -> Result<(), LoopError> {
        let batch = self.batch.as_ref().ok_or(LoopError::NoOpenRound)?;
        if !batch.contains(&record.instance_id) {
            return Err(LoopError::NotQueried(record.instance_id.clone()));
        }
        let seq = self.pool.get(&record.instance_id).expect("batch instances stay in the pool");
        record.validate(seq, self.model.scheme())?;
        Ok(())
    }

    /// The first annotation per queried instance, in batch order.
    fn primary_annotations<'a>(&self, annotations: &'a [AnnotationRecord]) -> Result<Vec<&'a AnnotationRecord>, LoopError> {
        let batch = self.batch.as_ref().ok_or(LoopError::NoOpenRound)?;
        for a in annotations {
            self.check_annotation(a)?;
        }
        batch
            .ids()
            .map(|id| {
                annotations
                    .iter()
                    .find(|a| a.instance_id == id)
                    .ok_or_else(|| LoopError::MissingAnnotation(id.to_string()))
            })
            .collect()
    }

    fn training_data(&self, primary: &[&AnnotationRecord]) -> Result<Vec<TokenSequence>, LoopError> {
        let mut data = self.labeled.clone();
        for a in primary {
            let seq = self.pool.get(&a.instance_id).expect("batch instances stay in the pool");
            data.push(seq.with_word_tags(&a.final_tags)?);
        }
        Ok(data)
    }

    /// Builds the retraining job for a complete set of batch annotations.
    pub fn prepare_retrain(&self, annotations: &[AnnotationRecord]) -> Result<RetrainJob, LoopError> {
        let primary = self.primary_annotations(annotations)?;
        let round = self.batch.as_ref().map_or(0, |b| b.round);
        let data = self.training_data(&primary)?;
        let (base, epochs) = if self.config.warm_start {
            (self.model.clone(), self.config.epochs)
        } else {
            let mut fresh = self.config.fresh_model(self.model.scheme().clone());
            fresh.set_dropout_rate(self.config.dropout_rate);
            (fresh, self.config.initial_epochs)
        };
        Ok(RetrainJob {
            round,
            base,
            data,
            train: self.config.train_config(round, epochs),
        })
    }

    /// Closes the open round with the retrained model.
    pub fn finish_round(
        &mut self,
        annotations: Vec<AnnotationRecord>,
        mut model: CrfModel,
        retrain_seconds: Option<f64>,
    ) -> Result<&RoundRecord, LoopError> {
        let primary: Vec<AnnotationRecord> = self.primary_annotations(&annotations)?.into_iter().cloned().collect();
        let data = self.training_data(&primary.iter().collect::<Vec<_>>())?;
        let batch = self.batch.take().expect("checked by primary_annotations");
        let workload = workload_report(&annotations, &batch.suggestions);
        let ids: BTreeSet<String> = batch.suggestions.keys().cloned().collect();
        self.pool.take(&ids);
        self.labeled = data;
        self.queried_total += batch.scores.len();
        self.cumulative_corrections += workload.total_corrections;
        // Theta versions stay monotone even when retraining from scratch.
        while model.theta_version() <= self.model.theta_version() {
            model.bump_version();
        }
        self.model = model;
        let queried: Vec<String> = batch.ids().map(str::to_string).collect();
        let record = self.evaluate_round(batch.round, queried, batch.scores, workload, retrain_seconds)?;
        let record = RoundRecord { annotations, ..record };
        self.history.push(record);
        self.update_stop();
        Ok(self.history.last().unwrap())
    }

    fn evaluate_round(
        &self,
        round: usize,
        queried_ids: Vec<String>,
        scores: Vec<QueryScore>,
        workload: WorkloadReport,
        retrain_seconds: Option<f64>,
    ) -> Result<RoundRecord, LoopError> {
        let exclusive = evaluate(&self.model, &self.test)?;
        let validation = if self.validation.is_empty() {
            None
        } else {
            Some(evaluate(&self.model, &self.validation)?)
        };
        Ok(RoundRecord {
            round,
            strategy: self.config.strategy,
            rng_seed: self.config.rng_seed,
            theta_version: self.model.theta_version(),
            labeled_count: self.labeled.len(),
            queried_ids,
            scores,
            annotations: Vec::new(),
            workload,
            cumulative_corrections: self.cumulative_corrections,
            exclusive,
            validation,
            inclusive: self.inclusive()?,
            retrain_seconds,
        })
    }

    /// Human labels for the labeled set, model predictions for the pool,
    /// both scored against gold; `None` if any pool gold is hidden.
    fn inclusive(&self) -> Result<Option<InclusiveMetrics>, LoopError> {
        let mut human = Vec::with_capacity(self.labeled.len());
        for s in &self.labeled {
            let assigned = s.word_tags().expect("labeled set carries tags");
            let gold = match self.pool.reveal(s.id()) {
                Some(g) => g.to_vec(),
                None => assigned.clone(),
            };
            human.push((gold, assigned));
        }
        let mut model = Vec::with_capacity(self.pool.len());
        for s in self.pool.instances() {
            let Some(gold) = self.pool.reveal(s.id()) else {
                return Ok(None);
            };
            model.push((gold.to_vec(), self.model.viterbi_decode(s)?.best_path));
        }
        Ok(Some(inclusive_metrics(&human, &model)))
    }
}

/// One closed live round: validate, retrain, time the retrain, evaluate.
pub fn run_live_round(state: &mut LoopState, annotations: Vec<AnnotationRecord>) -> Result<RoundRecord, LoopError> {
    let job = state.prepare_retrain(&annotations)?;
    let t0 = Instant::now();
    let model = job.run()?;
    let seconds = t0.elapsed().as_secs_f64();
    Ok(state.finish_round(annotations, model, Some(seconds))?.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub records: Vec<RoundRecord>,
    pub stop_reason: StopReason,
    pub final_model: CrfModel,
}

/// Oracle annotations for the open batch: gold tags under the oracle id.
pub fn oracle_annotations(state: &LoopState) -> Result<Vec<AnnotationRecord>, LoopError> {
    let batch = state.open_batch().ok_or(LoopError::NoOpenRound)?;
    batch
        .ids()
        .map(|id| {
            let gold = state.pool().reveal(id).ok_or_else(|| LoopError::NoGold(id.to_string()))?;
            Ok(AnnotationRecord::new(id, ORACLE_ANNOTATOR, gold.to_vec(), batch.suggestions[id].theta_version))
        })
        .collect()
}

/// Runs the loop with oracle annotations from a given starting model until
/// the stopping rule fires. Deterministic in the configuration and split.
pub fn run_simulation_from(config: &LoopConfig, split: CorpusSplit, initial: CrfModel) -> Result<SimulationOutcome, LoopError> {
    let mut state = LoopState::new(config.clone(), split, initial, true)?;
    while state.open_round()?.is_some() {
        let annotations = oracle_annotations(&state)?;
        let job = state.prepare_retrain(&annotations)?;
        let model = job.run()?;
        state.finish_round(annotations, model, None)?;
    }
    let stop_reason = state.stop_reason().expect("loop ends only when stopped");
    Ok(SimulationOutcome {
        records: state.history,
        stop_reason,
        final_model: state.model,
    })
}

/// [`run_simulation_from`] with an untrained model over the joint scheme.
pub fn run_simulation(config: &LoopConfig, split: CorpusSplit) -> Result<SimulationOutcome, LoopError> {
    let model = config.fresh_model(LabelScheme::joint());
    run_simulation_from(config, split, model)
}

/// Model trained from scratch on the seed set and the whole revealed pool,
/// with the same training settings as the loop's initial model.
pub fn train_full_data(config: &LoopConfig, split: &CorpusSplit, initial: CrfModel) -> Result<CrfModel, LoopError> {
    let mut data: Vec<TokenSequence> = split.labeled_seed.clone();
    if let Some(n) = config.seed_size {
        data.truncate(n);
    }
    for s in split.unlabeled_pool.instances() {
        let gold = split.unlabeled_pool.reveal(s.id()).ok_or_else(|| LoopError::NoGold(s.id().to_string()))?;
        data.push(s.with_word_tags(gold)?);
    }
    let mut model = initial;
    model.set_dropout_rate(config.dropout_rate);
    Ok(train(&model, &data, &config.train_config(0, config.initial_epochs))?.0)
}
