//! A live annotation project: the loop state plus leases, acknowledged
//! submissions and the store behind them.
//!
//! Every acknowledged submission is in the journal before the
//! acknowledgment is returned. Opening a project replays the journal on top
//! of the last snapshot, so a complete batch whose retrain never finished
//! shows up again as a pending retrain.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use log::info;
use nerloop_core::active::{compute_consistency, LoopError, LoopState, RetrainJob};
use nerloop_core::crf::{explain_occlusion, CrfError};
use nerloop_core::{AnnotationRecord, CrfModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::*;
use crate::store::{Store, StoreError};

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error("`{annotator}` holds no lease on `{instance}`")]
    NoLease { instance: String, annotator: String },
    #[error("`{instance}` is leased to another annotator")]
    LeasedToOther { instance: String },
    #[error("`{0}` already has all the annotations it needs")]
    InstanceComplete(String),
    #[error("redundancy must be at least 1")]
    ZeroRedundancy,
}

/// Persisted per-project settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectSettings {
    /// Distinct annotators required per queried instance.
    pub redundancy: usize,
    pub metric_mode: MetricMode,
}

impl Default for ProjectSettings {
    fn default() -> Self {
        Self {
            redundancy: 1,
            metric_mode: MetricMode::Exclusive,
        }
    }
}

#[derive(Serialize)]
struct ProjectFileRef<'a> {
    settings: &'a ProjectSettings,
    state: &'a LoopState,
    pending: &'a [AnnotationRecord],
    acks: &'a [SubmitAck],
    next_seq: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectFile {
    settings: ProjectSettings,
    state: LoopState,
    pending: Vec<AnnotationRecord>,
    acks: Vec<SubmitAck>,
    next_seq: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Submitted { record: AnnotationRecord, ack: SubmitAck },
    MetricMode { mode: MetricMode },
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    seq: u64,
    #[serde(flatten)]
    event: Event,
}

#[derive(Debug, Clone)]
struct Lease {
    annotator: String,
    expires_at: u64,
}

pub const DEFAULT_LEASE_MS: u64 = 10 * 60 * 1000;

pub struct Project {
    store: Store,
    settings: ProjectSettings,
    state: LoopState,
    /// Acknowledged records of the open round, in acknowledgment order.
    pending: Vec<AnnotationRecord>,
    /// Every acknowledgment ever given.
    acks: Vec<SubmitAck>,
    ack_index: BTreeMap<(String, String), usize>,
    next_seq: u64,
    leases: BTreeMap<String, Lease>,
    lease_ms: u64,
    retrain_in_flight: bool,
    retrain_failed: bool,
}

impl Project {
    /// Starts a project in an empty directory from a loop state, opening the
    /// first round if none is open.
    pub fn create(dir: impl Into<PathBuf>, mut state: LoopState, settings: ProjectSettings) -> Result<Self, ProjectError> {
        if settings.redundancy == 0 {
            return Err(ProjectError::ZeroRedundancy);
        }
        let store = Store::create(dir)?;
        if state.open_batch().is_none() {
            state.open_round()?;
        }
        let project = Self::assemble(store, settings, state, Vec::new(), Vec::new(), 0);
        project.store.write_model(project.state.model())?;
        project.store.write_snapshot(&project.file())?;
        Ok(project)
    }

    /// Loads the snapshot and replays the journal on top of it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ProjectError> {
        let mut store = Store::open(dir)?;
        let file: ProjectFile = store.read_snapshot()?;
        let entries: Vec<Entry> = store.read_journal()?;
        let mut project = Self::assemble(store, file.settings, file.state, file.pending, file.acks, file.next_seq);
        let mut replayed = 0;
        for entry in entries {
            if entry.seq < project.next_seq {
                continue;
            }
            if entry.seq != project.next_seq {
                return Err(StoreError::Integrity {
                    path: project.store.journal_path(),
                    detail: format!("expected entry {}, found {}", project.next_seq, entry.seq),
                }
                .into());
            }
            project.apply(entry.event);
            project.next_seq += 1;
            replayed += 1;
        }
        if replayed > 0 {
            info!("replayed {replayed} journal entries");
        }
        Ok(project)
    }

    fn assemble(
        store: Store,
        settings: ProjectSettings,
        state: LoopState,
        pending: Vec<AnnotationRecord>,
        acks: Vec<SubmitAck>,
        next_seq: u64,
    ) -> Self {
        let ack_index = acks
            .iter()
            .enumerate()
            .map(|(i, a)| ((a.instance_id.clone(), a.annotator_id.clone()), i))
            .collect();
        Self {
            store,
            settings,
            state,
            pending,
            acks,
            ack_index,
            next_seq,
            leases: BTreeMap::new(),
            lease_ms: DEFAULT_LEASE_MS,
            retrain_in_flight: false,
            retrain_failed: false,
        }
    }

    fn file(&self) -> ProjectFileRef<'_> {
        ProjectFileRef {
            settings: &self.settings,
            state: &self.state,
            pending: &self.pending,
            acks: &self.acks,
            next_seq: self.next_seq,
        }
    }

    fn apply(&mut self, event: Event) {
        match event {
            Event::Submitted { record, ack } => {
                self.leases.remove(&record.instance_id);
                self.ack_index
                    .insert((ack.instance_id.clone(), ack.annotator_id.clone()), self.acks.len());
                self.acks.push(ack);
                self.pending.push(record);
            }
            Event::MetricMode { mode } => self.settings.metric_mode = mode,
        }
    }

    fn log(&mut self, event: Event) -> Result<(), ProjectError> {
        let entry = Entry {
            seq: self.next_seq,
            event,
        };
        self.store.append(&entry)?;
        self.next_seq += 1;
        self.apply(entry.event);
        Ok(())
    }

    /// Writes a snapshot and empties the journal it supersedes.
    pub fn save(&mut self) -> Result<(), ProjectError> {
        self.store.write_snapshot(&self.file())?;
        self.store.clear_journal()?;
        Ok(())
    }

    /// The bytes [`Project::save`] would write.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        crate::store::encode_snapshot(&self.file())
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn state(&self) -> &LoopState {
        &self.state
    }

    pub fn settings(&self) -> &ProjectSettings {
        &self.settings
    }

    pub fn pending(&self) -> &[AnnotationRecord] {
        &self.pending
    }

    pub fn set_lease_ms(&mut self, ms: u64) {
        self.lease_ms = ms;
    }

    fn submitters(&self, instance: &str) -> BTreeSet<&str> {
        self.pending
            .iter()
            .filter(|r| r.instance_id == instance)
            .map(|r| r.annotator_id.as_str())
            .collect()
    }

    /// Whether every instance of the open batch has all its annotations.
    pub fn batch_complete(&self) -> bool {
        self.state
            .open_batch()
            .is_some_and(|b| b.ids().all(|id| self.submitters(id).len() >= self.settings.redundancy))
    }

    pub fn retrain_in_flight(&self) -> bool {
        self.retrain_in_flight
    }

    /// Leases the next instance to `annotator`, or repeats the lease it
    /// already holds.
    pub fn next_sample(&mut self, annotator: &str, now: u64) -> Result<NextSample, ProjectError> {
        let Some(batch) = self.state.open_batch() else {
            return Ok(match self.state.stop_reason() {
                Some(reason) => NextSample::Finished { reason },
                None => NextSample::Retraining {
                    round: self.state.history().len(),
                },
            });
        };
        let round = batch.round;
        if self.batch_complete() {
            return Ok(NextSample::Retraining { round });
        }
        let held = self
            .leases
            .iter()
            .find(|(_, l)| l.annotator == annotator && l.expires_at > now)
            .map(|(id, l)| (id.clone(), l.expires_at));
        let chosen = held.or_else(|| {
            batch
                .ids()
                .find(|id| {
                    let done = self.submitters(id);
                    done.len() < self.settings.redundancy
                        && !done.contains(annotator)
                        && !self.leases.get(*id).is_some_and(|l| l.expires_at > now)
                })
                .map(|id| (id.to_string(), now + self.lease_ms))
        });
        let Some((id, expires_at)) = chosen else {
            return Ok(NextSample::RoundDrained { round });
        };
        self.leases.insert(
            id.clone(),
            Lease {
                annotator: annotator.to_string(),
                expires_at,
            },
        );
        Ok(NextSample::Sample(Box::new(self.sample_view(&id, expires_at)?)))
    }

    /// The review payload for one instance of the open batch.
    pub fn sample_view(&self, id: &str, lease_expires_at: u64) -> Result<SampleView, ProjectError> {
        let batch = self.state.open_batch().ok_or(LoopError::NoOpenRound)?;
        let suggestion = batch
            .suggestions
            .get(id)
            .ok_or_else(|| LoopError::NotQueried(id.to_string()))?;
        let seq = self.state.instance(id).expect("batch instances are in the pool");
        let model = self.state.model();
        let scheme = model.scheme();
        let token_marginals = model.token_marginals(seq)?;
        let confidences: Vec<f64> = suggestion
            .tags
            .iter()
            .zip(&token_marginals)
            .map(|(t, row)| scheme.tag_index(t).map_or(0.0, |k| row[k]))
            .collect();
        let target_word = confidences
            .iter()
            .enumerate()
            .fold(0, |best, (i, c)| if *c < confidences[best] { i } else { best });
        let target_subtoken = seq.word_starts()[target_word];
        let values = explain_occlusion(model, seq, target_subtoken)?;
        let query = batch
            .scores
            .iter()
            .find(|q| q.instance_id == id)
            .expect("every batch instance was scored")
            .clone();
        Ok(SampleView {
            round: batch.round,
            instance_id: id.to_string(),
            words: seq.words(),
            subtokens: seq.subtokens().to_vec(),
            word_index: seq.word_index().to_vec(),
            suggested_tags: suggestion.tags.clone(),
            theta_version: suggestion.theta_version,
            confidences,
            token_marginals,
            tag_set: scheme.tags(),
            saliency: Saliency {
                target_word,
                target_subtoken,
                values,
            },
            query,
            lease_expires_at,
        })
    }

    /// Validates, journals and acknowledges one annotation. A repeated
    /// submission by the same annotator for the same instance returns the
    /// first acknowledgment and changes nothing.
    pub fn submit(&mut self, record: AnnotationRecord, now: u64) -> Result<SubmitAck, ProjectError> {
        let key = (record.instance_id.clone(), record.annotator_id.clone());
        if let Some(&i) = self.ack_index.get(&key) {
            return Ok(self.acks[i].clone());
        }
        self.state.check_annotation(&record)?;
        let id = record.instance_id.as_str();
        if self.submitters(id).len() >= self.settings.redundancy {
            return Err(ProjectError::InstanceComplete(id.to_string()));
        }
        match self.leases.get(id) {
            Some(l) if l.annotator == record.annotator_id => {}
            Some(l) if l.expires_at > now => return Err(ProjectError::LeasedToOther { instance: id.to_string() }),
            _ => {
                return Err(ProjectError::NoLease {
                    instance: id.to_string(),
                    annotator: record.annotator_id.clone(),
                })
            }
        }
        let batch = self.state.open_batch().expect("checked by check_annotation");
        let suggestion = &batch.suggestions[id];
        let corrections = record.corrections(&suggestion.tags);
        let prior = self
            .annotator_totals()
            .into_iter()
            .find(|t| t.annotator_id == record.annotator_id)
            .map_or(0, |t| t.corrections);
        let complete_after = batch.ids().all(|other| {
            let n = self.submitters(other).len() + usize::from(other == id);
            n >= self.settings.redundancy
        });
        let ack = SubmitAck {
            seq: self.next_seq,
            instance_id: record.instance_id.clone(),
            annotator_id: record.annotator_id.clone(),
            round: batch.round,
            stale: record.suggestion_theta_version != suggestion.theta_version,
            corrections,
            annotator_corrections: prior + corrections,
            retraining_started: complete_after,
        };
        self.log(Event::Submitted {
            record,
            ack: ack.clone(),
        })?;
        Ok(ack)
    }

    /// Hands out the retraining job for a complete batch, once.
    pub fn take_retrain_job(&mut self) -> Result<Option<RetrainJob>, ProjectError> {
        if self.retrain_in_flight || self.retrain_failed || !self.batch_complete() {
            return Ok(None);
        }
        let job = self.state.prepare_retrain(&self.pending)?;
        self.retrain_in_flight = true;
        Ok(Some(job))
    }

    /// Records a retrain that could not complete; no new attempt is made
    /// until the project is reopened.
    pub fn retrain_failed(&mut self) {
        self.retrain_in_flight = false;
        self.retrain_failed = true;
    }

    /// Closes the round with the retrained model, opens the next one and
    /// writes a snapshot.
    pub fn complete_retrain(&mut self, model: CrfModel, seconds: Option<f64>) -> Result<(), ProjectError> {
        self.retrain_in_flight = false;
        let annotations = std::mem::take(&mut self.pending);
        if let Err(e) = self.state.finish_round(annotations.clone(), model, seconds) {
            self.pending = annotations;
            return Err(e.into());
        }
        self.leases.clear();
        self.state.open_round()?;
        self.store.write_model(self.state.model())?;
        self.save()?;
        info!(
            "round {} closed, model v{}",
            self.state.rounds_completed(),
            self.state.model().theta_version()
        );
        Ok(())
    }

    /// Runs a pending retrain on the calling thread.
    pub fn retrain_now(&mut self) -> Result<bool, ProjectError> {
        let Some(job) = self.take_retrain_job()? else {
            return Ok(false);
        };
        let t0 = std::time::Instant::now();
        match job.run() {
            Ok(model) => {
                self.complete_retrain(model, Some(t0.elapsed().as_secs_f64()))?;
                Ok(true)
            }
            Err(e) => {
                self.retrain_failed();
                Err(e.into())
            }
        }
    }

    pub fn set_metric_mode(&mut self, mode: MetricMode) -> Result<(), ProjectError> {
        if mode != self.settings.metric_mode {
            self.log(Event::MetricMode { mode })?;
        }
        Ok(())
    }

    pub fn inspection(&self) -> ModelInspection {
        let history = self.state.history();
        ModelInspection {
            mode: self.settings.metric_mode,
            baseline: history.first().map(InspectionRound::from),
            rounds: history.iter().skip(1).map(InspectionRound::from).collect(),
        }
    }

    /// Closed-round annotations followed by those of the open round.
    pub fn all_annotations(&self) -> Vec<AnnotationRecord> {
        self.state
            .history()
            .iter()
            .flat_map(|r| r.annotations.iter().cloned())
            .chain(self.pending.iter().cloned())
            .collect()
    }

    pub fn annotator_totals(&self) -> Vec<AnnotatorTotals> {
        let mut totals: BTreeMap<String, AnnotatorTotals> = BTreeMap::new();
        let mut add = |annotator: &str, corrections: usize, seconds: Option<f64>| {
            let t = totals.entry(annotator.to_string()).or_insert_with(|| AnnotatorTotals {
                annotator_id: annotator.to_string(),
                submissions: 0,
                corrections: 0,
                seconds: None,
            });
            t.submissions += 1;
            t.corrections += corrections;
            if let Some(s) = seconds {
                t.seconds = Some(t.seconds.unwrap_or(0.0) + s);
            }
        };
        for r in self.state.history() {
            for w in &r.workload.instances {
                add(&w.annotator_id, w.corrections, w.seconds);
            }
        }
        for r in &self.pending {
            let ack = &self.acks[self.ack_index[&(r.instance_id.clone(), r.annotator_id.clone())]];
            add(&r.annotator_id, ack.corrections, r.duration_seconds());
        }
        totals.into_values().collect()
    }

    pub fn overview(&self, now: u64) -> TaskOverview {
        let state = &self.state;
        let reason = state.stop_reason();
        let status = match reason {
            Some(_) => StopStatus::Stopped,
            None if state.plateau_reached() => StopStatus::StopRecommended,
            None => StopStatus::Running,
        };
        let batch = state.open_batch().map(|b| BatchProgress {
            round: b.round,
            size: b.scores.len(),
            redundancy: self.settings.redundancy,
            submissions: self.pending.len(),
            completed_instances: b
                .ids()
                .filter(|id| self.submitters(id).len() >= self.settings.redundancy)
                .count(),
            active_leases: self.leases.values().filter(|l| l.expires_at > now).count(),
            retraining: self.retrain_in_flight,
        });
        // Open-batch instances count as remaining until their round closes.
        let budget_remaining = state.budget_remaining();
        TaskOverview {
            rounds_completed: state.rounds_completed(),
            budget_remaining,
            pool_remaining: state.pool().len(),
            estimated_remaining_instances: budget_remaining.min(state.pool().len()),
            stopping: StoppingView {
                rule: state.config().stopping,
                status,
                reason,
            },
            batch,
            annotators: self.annotator_totals(),
            consistency: compute_consistency(&self.all_annotations()).ok(),
        }
    }

    /// The model version that produced suggestions of a given version.
    pub fn stored_model(&self, version: u64) -> Result<CrfModel, ProjectError> {
        Ok(self.store.read_model(version)?)
    }
}

