//! Annotation workload and inter-annotator consistency.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LoopError, Suggestion};
use crate::annotation::AnnotationRecord;
use crate::corpus::Tag;
use crate::metrics::cohen_kappa;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceWorkload {
    pub instance_id: String,
    pub annotator_id: String,
    /// Words whose tag the annotator changed from the suggestion.
    pub corrections: usize,
    pub words: usize,
    /// Time spent, when the record carries timestamps.
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkloadReport {
    pub instances: Vec<InstanceWorkload>,
    pub total_corrections: usize,
    pub total_seconds: Option<f64>,
}

/// Corrections of every annotation against the suggestion it was made from.
pub fn workload_report(annotations: &[AnnotationRecord], suggestions: &BTreeMap<String, Suggestion>) -> WorkloadReport {
    let instances: Vec<InstanceWorkload> = annotations
        .iter()
        .map(|a| InstanceWorkload {
            instance_id: a.instance_id.clone(),
            annotator_id: a.annotator_id.clone(),
            corrections: suggestions.get(&a.instance_id).map_or(a.final_tags.len(), |s| a.corrections(&s.tags)),
            words: a.final_tags.len(),
            seconds: a.duration_seconds(),
        })
        .collect();
    let timed: Vec<f64> = instances.iter().filter_map(|w| w.seconds).collect();
    WorkloadReport {
        total_corrections: instances.iter().map(|w| w.corrections).sum(),
        total_seconds: if timed.is_empty() { None } else { Some(timed.iter().sum()) },
        instances,
    }
}

/// Agreement of one annotator pair over the instances both annotated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub annotator_a: String,
    pub annotator_b: String,
    pub overlap_instances: usize,
    pub positions: usize,
    pub raw_agreement: f64,
    pub kappa: f64,
}

/// Pairwise Cohen's kappa over word tags of shared instances, for every
/// annotator pair with overlap. A later record by the same annotator for the
/// same instance replaces the earlier one.
pub fn compute_consistency(records: &[AnnotationRecord]) -> Result<Vec<ConsistencyReport>, LoopError> {
    let mut by_annotator: BTreeMap<&str, BTreeMap<&str, &[Tag]>> = BTreeMap::new();
    for r in records {
        by_annotator
            .entry(&r.annotator_id)
            .or_default()
            .insert(&r.instance_id, &r.final_tags);
    }
    let annotators: Vec<_> = by_annotator.iter().collect();
    let mut reports = Vec::new();
    for (i, (a, ta)) in annotators.iter().enumerate() {
        for (b, tb) in &annotators[i + 1..] {
            let (mut la, mut lb, mut overlap) = (Vec::new(), Vec::new(), 0);
            for (inst, tags_a) in ta.iter() {
                if let Some(tags_b) = tb.get(inst) {
                    if tags_a.len() != tags_b.len() {
                        continue;
                    }
                    overlap += 1;
                    la.extend(tags_a.iter());
                    lb.extend(tags_b.iter());
                }
            }
            if overlap == 0 {
                continue;
            }
            let (raw_agreement, kappa) = cohen_kappa(&la, &lb);
            reports.push(ConsistencyReport {
                annotator_a: a.to_string(),
                annotator_b: b.to_string(),
                overlap_instances: overlap,
                positions: la.len(),
                raw_agreement,
                kappa,
            });
        }
    }
    if reports.is_empty() {
        return Err(LoopError::NoOverlap);
    }
    Ok(reports)
}
