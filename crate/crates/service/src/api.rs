//! Request and response payloads. Every response type rejects unknown
//! fields on the way back in, so clients can round-trip them strictly.

use nerloop_core::active::{ConsistencyReport, RoundRecord, StopReason, StoppingRule};
use nerloop_core::metrics::{EntityMetrics, InclusiveMetrics};
use nerloop_core::{QueryScore, Tag};
use serde::{Deserialize, Serialize};

/// Which evaluation the model-inspection panel leads with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    /// Held-out test set, model predictions only.
    #[default]
    Exclusive,
    /// Human labels where annotated, model predictions elsewhere.
    Inclusive,
}

/// Occlusion saliency for the tag suggested at one word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Saliency {
    pub target_word: usize,
    pub target_subtoken: usize,
    /// One value per word.
    pub values: Vec<f64>,
}

/// Everything the sample-review panel shows for one leased instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleView {
    pub round: usize,
    pub instance_id: String,
    pub words: Vec<String>,
    pub subtokens: Vec<String>,
    pub word_index: Vec<usize>,
    pub suggested_tags: Vec<Tag>,
    pub theta_version: u64,
    /// Marginal probability of the suggested tag, per word.
    pub confidences: Vec<f64>,
    /// Per-word distributions over `tag_set`.
    pub token_marginals: Vec<Vec<f64>>,
    pub tag_set: Vec<Tag>,
    /// Explains the least confident suggested tag.
    pub saliency: Saliency,
    pub query: QueryScore,
    /// Milliseconds since the Unix epoch.
    pub lease_expires_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case", deny_unknown_fields)]
pub enum NextSample {
    Sample(Box<SampleView>),
    /// Every instance of the round is leased or done for this annotator.
    RoundDrained { round: usize },
    /// The batch is complete and the model is being retrained.
    Retraining { round: usize },
    Finished { reason: StopReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitAck {
    /// Journal sequence number of the stored record.
    pub seq: u64,
    pub instance_id: String,
    pub annotator_id: String,
    pub round: usize,
    /// The record was made against an older model than the one that
    /// produced the current suggestion.
    pub stale: bool,
    /// Words changed from the suggestion.
    pub corrections: usize,
    /// The annotator's corrections over all rounds, this record included.
    pub annotator_corrections: usize,
    pub retraining_started: bool,
}

/// One round as shown by the model-inspection panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectionRound {
    pub round: usize,
    pub theta_version: u64,
    pub labeled_count: usize,
    pub queried: usize,
    pub corrections: usize,
    pub cumulative_corrections: usize,
    pub exclusive: EntityMetrics,
    pub validation: Option<EntityMetrics>,
    pub inclusive: Option<InclusiveMetrics>,
    pub retrain_seconds: Option<f64>,
}

impl From<&RoundRecord> for InspectionRound {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            theta_version: r.theta_version,
            labeled_count: r.labeled_count,
            queried: r.queried_ids.len(),
            corrections: r.workload.total_corrections,
            cumulative_corrections: r.cumulative_corrections,
            exclusive: r.exclusive,
            validation: r.validation,
            inclusive: r.inclusive,
            retrain_seconds: r.retrain_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelInspection {
    pub mode: MetricMode,
    /// The model trained on the seed set alone.
    pub baseline: Option<InspectionRound>,
    /// Query rounds, oldest first.
    pub rounds: Vec<InspectionRound>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopStatus {
    Running,
    /// The plateau rule holds; annotation may continue.
    StopRecommended,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingView {
    pub rule: StoppingRule,
    pub status: StopStatus,
    pub reason: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchProgress {
    pub round: usize,
    pub size: usize,
    /// Annotations required per instance.
    pub redundancy: usize,
    pub submissions: usize,
    pub completed_instances: usize,
    pub active_leases: usize,
    pub retraining: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorTotals {
    pub annotator_id: String,
    pub submissions: usize,
    pub corrections: usize,
    /// Total time over records that carry both timestamps.
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskOverview {
    pub rounds_completed: usize,
    pub budget_remaining: usize,
    pub pool_remaining: usize,
    /// Instances still to be queried: the budget, capped by the pool.
    pub estimated_remaining_instances: usize,
    pub stopping: StoppingView,
    pub batch: Option<BatchProgress>,
    pub annotators: Vec<AnnotatorTotals>,
    /// Present when at least two annotators labeled a common instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<Vec<ConsistencyReport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeRequest {
    pub mode: MetricMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
