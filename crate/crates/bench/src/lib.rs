//! Shared inputs for the benchmarks: a small synthetic corpus and a model
//! trained on it.

use nerloop_core::active::LoopConfig;
use nerloop_core::corpus::synthetic::{generate_synthetic_corpus, SyntheticConfig};
use nerloop_core::crf::train;
use nerloop_core::{CorpusSplit, CrfModel, LabelScheme, TokenSequence};

pub struct Fixture {
    pub split: CorpusSplit,
    pub train: Vec<TokenSequence>,
    pub model: CrfModel,
}

/// 200 labeled sentences for training, a 200-sentence pool and 100 test
/// sentences, with a model after `epochs` passes.
pub fn fixture(epochs: usize) -> Fixture {
    let cfg = SyntheticConfig {
        seed_sentences: 200,
        pool_sentences: 200,
        validation_sentences: 0,
        test_sentences: 100,
        ..Default::default()
    };
    let split = generate_synthetic_corpus(&cfg, 7).expect("default generator settings are valid");
    let lc = LoopConfig::default();
    let fresh = lc.fresh_model(LabelScheme::joint());
    let tc = nerloop_core::TrainConfig {
        epochs,
        ..lc.train.clone()
    };
    let model = train(&fresh, &split.labeled_seed, &tc).expect("seed set is labeled").0;
    Fixture {
        train: split.labeled_seed.clone(),
        split,
        model,
    }
}
