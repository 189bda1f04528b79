//! Source-to-target transfer: supervised pretraining on a mapped source
//! corpus, zero-shot evaluation and few-shot fine-tuning.

use serde::{Deserialize, Serialize};

use super::LoopError;
use crate::corpus::{map_labels, CorpusSplit, LabelScheme, Pool, Tag, TokenSequence};
use crate::crf::{train, train_anchored, CrfModel, FeatureEncoder, FeatureTemplate, TrainConfig};
use crate::metrics::{entity_metrics, evaluate, EntityMetrics};
use crate::query::{build_similarity, select_batch, QueryConfig, StrategyId};

/// Trains on the source corpus after mapping its labels through `scheme`.
/// An empty source leaves the model unchanged.
pub fn pretrain_source(model: &CrfModel, source: &[TokenSequence], scheme: &LabelScheme, cfg: &TrainConfig) -> Result<CrfModel, LoopError> {
    let mapped = source
        .iter()
        .map(|s| map_labels(s, scheme))
        .collect::<Result<Vec<_>, _>>()?;
    if mapped.is_empty() {
        return Ok(model.clone());
    }
    Ok(train(model, &mapped, cfg)?.0)
}

/// Entity-level metrics on target data without any target training.
pub fn zero_shot_eval(model: &CrfModel, target_test: &[TokenSequence]) -> Result<EntityMetrics, LoopError> {
    Ok(evaluate(model, target_test)?)
}

/// Continues training from `model` on `shots` labeled target instances,
/// with `cfg.l2` pulling the weights toward those of `model` rather than
/// toward zero. No shots leave the model unchanged.
pub fn few_shot_finetune(model: &CrfModel, shots: &[TokenSequence], cfg: &TrainConfig) -> Result<CrfModel, LoopError> {
    if shots.is_empty() {
        return Ok(model.clone());
    }
    Ok(train_anchored(model, shots, cfg)?.0)
}

/// Metrics of predicting `O` everywhere.
pub fn all_outside_baseline(test: &[TokenSequence]) -> Result<EntityMetrics, LoopError> {
    let pairs = test
        .iter()
        .map(|s| {
            let gold = s.word_tags().ok_or_else(|| LoopError::NoGold(s.id().to_string()))?;
            let none = vec![Tag::Outside; gold.len()];
            Ok((gold, none))
        })
        .collect::<Result<Vec<_>, LoopError>>()?;
    Ok(entity_metrics(pairs.iter().map(|(g, p)| (g.as_slice(), p.as_slice()))))
}

/// Chooses `k` target instances to label with the zero-shot model, the way
/// the first round of the loop would, and returns them with gold labels.
pub fn select_shots(model: &CrfModel, pool: &Pool, k: usize, query: &QueryConfig) -> Result<Vec<TokenSequence>, LoopError> {
    let instances = pool.instances();
    let sim = (query.strategy == StrategyId::Id).then(|| build_similarity(instances, query.beta));
    let picked = select_batch(model, instances, k, query, sim.as_ref())?;
    picked
        .iter()
        .map(|p| {
            let seq = instances.iter().find(|s| s.id() == p.instance_id).expect("selected from pool");
            let tags = pool.reveal(seq.id()).ok_or_else(|| LoopError::NoGold(seq.id().to_string()))?;
            Ok(seq.with_word_tags(tags)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub shots: usize,
    pub shot_strategy: StrategyId,
    pub passes: usize,
    pub dropout_rate: f64,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub templates: Vec<FeatureTemplate>,
    pub rng_seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            shots: 10,
            shot_strategy: StrategyId::Ltp,
            passes: 10,
            dropout_rate: 0.3,
            pretrain: TrainConfig::default(),
            finetune: TrainConfig {
                l2: 1.0,
                ..TrainConfig::default()
            },
            templates: FeatureTemplate::ALL.to_vec(),
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub all_outside: EntityMetrics,
    pub zero_shot: EntityMetrics,
    pub few_shot: EntityMetrics,
    pub shot_ids: Vec<String>,
}

/// Pretrains on the whole labeled source (seed and revealed pool), then
/// scores the target test set before and after fine-tuning on `cfg.shots`
/// selected target instances.
pub fn run_transfer(cfg: &TransferConfig, source: &CorpusSplit, target: &CorpusSplit) -> Result<(TransferOutcome, CrfModel), LoopError> {
    let scheme = LabelScheme::joint();
    let fresh = CrfModel::new(scheme.clone(), FeatureEncoder::new(cfg.templates.clone(), cfg.dropout_rate), true);
    let mut src = source.labeled_seed.clone();
    for s in source.unlabeled_pool.instances() {
        let tags = source.unlabeled_pool.reveal(s.id()).ok_or_else(|| LoopError::NoGold(s.id().to_string()))?;
        src.push(s.with_word_tags(tags)?);
    }
    let pretrained = pretrain_source(&fresh, &src, &scheme, &TrainConfig { seed: cfg.rng_seed, ..cfg.pretrain.clone() })?;
    let zero_shot = zero_shot_eval(&pretrained, &target.test)?;
    let query = QueryConfig {
        strategy: cfg.shot_strategy,
        passes: cfg.passes,
        rng_seed: cfg.rng_seed,
        ..QueryConfig::default()
    };
    let shots = select_shots(&pretrained, &target.unlabeled_pool, cfg.shots, &query)?;
    let tuned = few_shot_finetune(&pretrained, &shots, &TrainConfig { seed: cfg.rng_seed, ..cfg.finetune.clone() })?;
    let outcome = TransferOutcome {
        all_outside: all_outside_baseline(&target.test)?,
        zero_shot,
        few_shot: evaluate(&tuned, &target.test)?,
        shot_ids: shots.iter().map(|s| s.id().to_string()).collect(),
    };
    Ok((outcome, tuned))
}
