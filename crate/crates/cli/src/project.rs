//! Creating a served project from an experiment file and exporting what
//! annotators produced.

use std::path::Path;

use nerloop_core::active::LoopState;
use nerloop_core::corpus::{write_corpus, CorpusFormat};
use nerloop_service::{Project, ProjectSettings};

use crate::{CliError, ExperimentConfig};

/// Trains the seed model, opens the first round and writes the project into
/// `dir`, which must not already hold one. The strategy is the loop's own.
pub fn import_corpus(cfg: &ExperimentConfig, dir: &Path) -> Result<Project, CliError> {
    let split = cfg.corpus.load_split()?;
    let initial = cfg.loop_config.fresh_model(cfg.corpus.model_scheme());
    let state = LoopState::new(cfg.loop_config.clone(), split, initial, false)?;
    let settings = ProjectSettings {
        redundancy: cfg.service.redundancy,
        ..ProjectSettings::default()
    };
    Ok(Project::create(dir, state, settings)?)
}

/// Every annotation received so far as JSON lines: closed rounds first,
/// then the open round.
pub fn export_annotations(project: &Project) -> String {
    project
        .all_annotations()
        .iter()
        .map(|a| serde_json::to_string(a).expect("annotation records serialize") + "\n")
        .collect()
}

/// The labeled set the model is trained on (seed plus completed rounds).
pub fn export_labeled(project: &Project, format: CorpusFormat) -> String {
    write_corpus(project.state().labeled(), format)
}
