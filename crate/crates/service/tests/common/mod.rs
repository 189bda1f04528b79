#![allow(dead_code)]

use nerloop_core::active::{LoopConfig, LoopState};
use nerloop_core::corpus::synthetic::{generate_synthetic_corpus, SyntheticConfig};
use nerloop_core::query::StrategyId;
use nerloop_core::{AnnotationRecord, CorpusSplit, LabelScheme};
use nerloop_service::api::{NextSample, SampleView};
use nerloop_service::{Project, ProjectSettings};

pub fn split(seed: u64) -> CorpusSplit {
    let cfg = SyntheticConfig {
        seed_sentences: 8,
        pool_sentences: 60,
        validation_sentences: 0,
        test_sentences: 30,
        ..Default::default()
    };
    generate_synthetic_corpus(&cfg, seed).unwrap()
}

pub fn loop_config() -> LoopConfig {
    LoopConfig {
        strategy: StrategyId::Ltp,
        batch_size: 3,
        rounds: 5,
        initial_epochs: 3,
        epochs: 2,
        ..Default::default()
    }
}

pub fn state_with(cfg: LoopConfig) -> LoopState {
    LoopState::new(cfg.clone(), split(3), cfg.fresh_model(LabelScheme::joint()), false).unwrap()
}

pub fn project(dir: &std::path::Path, redundancy: usize) -> Project {
    Project::create(dir, state_with(loop_config()), ProjectSettings { redundancy, ..Default::default() }).unwrap()
}

pub fn sample(next: NextSample) -> SampleView {
    match next {
        NextSample::Sample(v) => *v,
        other => panic!("expected a sample, got {other:?}"),
    }
}

/// Accepts the suggestion as is.
pub fn accept(view: &SampleView, annotator: &str) -> AnnotationRecord {
    AnnotationRecord::new(&view.instance_id, annotator, view.suggested_tags.clone(), view.theta_version)
}

/// Leases and accepts every instance of the open round as `annotator`.
pub fn annotate_round(p: &mut Project, annotator: &str, now: u64) -> Vec<AnnotationRecord> {
    let mut done = Vec::new();
    while let NextSample::Sample(v) = p.next_sample(annotator, now).unwrap() {
        let rec = accept(&v, annotator);
        p.submit(rec.clone(), now).unwrap();
        done.push(rec);
    }
    done
}
