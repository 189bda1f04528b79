//! The experiment file: corpus, loop settings, the simulation matrix and the
//! server section, in one TOML document.
//!
//! ```toml
//! [corpus]
//! format = "subtoken"
//! seed = "data/synthetic/seed.txt"
//! pool = "data/synthetic/pool.txt"
//! test = "data/synthetic/test.txt"
//!
//! [loop]
//! batch_size = 10
//! rounds = 20
//!
//! [matrix]
//! strategies = ["random", "ltp", "id", "bald"]
//! seeds = [0, 1, 2, 3, 4]
//!
//! [service]
//! lease_seconds = 600
//! ```
//!
//! Relative corpus paths are resolved against the directory of the file.

use std::path::{Path, PathBuf};

use nerloop_core::active::LoopConfig;
use nerloop_core::corpus::synthetic::{generate_synthetic_corpus, SyntheticConfig};
use nerloop_core::corpus::{map_labels, read_corpus, CorpusFormat, SubwordSplitter};
use nerloop_core::query::StrategyId;
use nerloop_core::{CorpusSplit, LabelScheme, TokenSequence};
use nerloop_service::ServiceConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    #[serde(default, rename = "loop")]
    pub loop_config: LoopConfig,
    #[serde(default)]
    pub matrix: Matrix,
    #[serde(default)]
    pub service: ServiceConfig,
}

/// Either corpus files or a generated synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Target inventory plus mapping rules for corpus-native labels.
    #[serde(default)]
    pub scheme: LabelScheme,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    pub seed: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Subword vocabulary for the word format, one piece per line.
    pub vocab: Option<PathBuf>,
    pub synthetic: Option<SyntheticSource>,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Subtoken
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub config: SyntheticConfig,
}

/// Strategies and seeds to cross. Empty lists fall back to the loop's own
/// strategy and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Matrix {
    pub strategies: Vec<String>,
    pub seeds: Vec<u64>,
    /// Also train on all labeled data per seed and report rounds to reach
    /// `target_fraction` of its test F1.
    pub full_data: bool,
    pub target_fraction: f64,
}

impl Default for Matrix {
    fn default() -> Self {
        Self {
            strategies: Vec::new(),
            seeds: Vec::new(),
            full_data: true,
            target_fraction: 0.9,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.loop_config.validate()?;
        cfg.service.validate()?;
        Ok(cfg)
    }

    /// Reads the file and resolves relative corpus paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.corpus.resolve(base);
        Ok(cfg)
    }

    /// Matrix strategies, parsed.
    pub fn strategies(&self) -> Result<Vec<StrategyId>, CliError> {
        if self.matrix.strategies.is_empty() {
            return Ok(vec![self.loop_config.strategy]);
        }
        self.matrix
            .strategies
            .iter()
            .map(|s| s.parse().map_err(CliError::Strategy))
            .collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.matrix.seeds.is_empty() {
            vec![self.loop_config.rng_seed]
        } else {
            self.matrix.seeds.clone()
        }
    }
}

impl CorpusConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.seed, &mut self.pool, &mut self.validation, &mut self.test, &mut self.vocab]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// The entity inventory models are built over, without mapping rules.
    pub fn model_scheme(&self) -> LabelScheme {
        LabelScheme::new(self.scheme.entity_types().iter().cloned()).expect("scheme was validated on load")
    }

    /// Loads or generates the split, with labels mapped into the scheme.
    pub fn load_split(&self) -> Result<CorpusSplit, CliError> {
        if let Some(syn) = &self.synthetic {
            if self.pool.is_some() || self.test.is_some() || self.seed.is_some() || self.validation.is_some() {
                return Err(CliError::Config("corpus: give either files or [corpus.synthetic], not both".into()));
            }
            return Ok(generate_synthetic_corpus(&syn.config, syn.rng_seed)?);
        }
        let (Some(pool), Some(test)) = (&self.pool, &self.test) else {
            return Err(CliError::Config("corpus: `pool` and `test` are required".into()));
        };
        let splitter = match &self.vocab {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                SubwordSplitter::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
            }
            None => SubwordSplitter::identity(),
        };
        let read = |p: &Option<PathBuf>| -> Result<Vec<TokenSequence>, CliError> {
            let Some(p) = p else { return Ok(Vec::new()) };
            read_corpus(p, self.format, &self.scheme, &splitter)
                .map_err(|e| CliError::Corpus {
                    path: p.clone(),
                    source: e,
                })?
                .iter()
                .map(|s| map_labels(s, &self.scheme).map_err(Into::into))
                .collect()
        };
        Ok(CorpusSplit::new(
            read(&self.seed)?,
            read(&Some(pool.clone()))?,
            read(&self.validation)?,
            read(&Some(test.clone()))?,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("[corpus]\npool = \"p.txt\"\ntest = \"t.txt\"\n").unwrap();
        assert_eq!(cfg.loop_config, LoopConfig::default());
        assert_eq!(cfg.strategies().unwrap(), vec![StrategyId::Ltp]);
        assert_eq!(cfg.seeds(), vec![0]);
        assert_eq!(cfg.corpus.format, CorpusFormat::Subtoken);
        assert_eq!(cfg.corpus.scheme, LabelScheme::joint());
    }

    #[test]
    fn bad_strategy_lists_valid_ids() {
        let cfg = ExperimentConfig::from_toml("[corpus]\n[matrix]\nstrategies = [\"ltp\", \"entropy\"]\n").unwrap();
        let msg = cfg.strategies().unwrap_err().to_string();
        assert!(msg.contains("entropy"), "{msg}");
        assert!(msg.contains("lc, ltp, bald, batchbald, id, random"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[corpus]\n[matrix]\nseed = [1]\n").is_err());
        assert!(ExperimentConfig::from_toml("[corpus]\n[service]\nport = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[corpus]\n[loop]\nbatch_size = 0\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let mut c = CorpusConfig {
            scheme: LabelScheme::joint(),
            format: CorpusFormat::Word,
            seed: None,
            pool: Some("a/pool.txt".into()),
            validation: None,
            test: Some("/abs/test.txt".into()),
            vocab: None,
            synthetic: None,
        };
        c.resolve(Path::new("/exp"));
        assert_eq!(c.pool.unwrap(), PathBuf::from("/exp/a/pool.txt"));
        assert_eq!(c.test.unwrap(), PathBuf::from("/abs/test.txt"));
    }
}
