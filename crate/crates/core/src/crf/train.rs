//! Mini-batch SGD on the L2-regularized negative conditional log-likelihood.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CrfError, CrfModel};
use crate::corpus::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Strength of the `l2 / 2 * ||w||^2` penalty.
    pub l2: f64,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.1,
            l2: 1e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean regularized objective seen during each epoch.
    pub epoch_losses: Vec<f64>,
    /// Ids of sequences left out of training.
    pub skipped: Vec<String>,
}

/// Dense gradient with the same layout as the model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub emissions: Vec<f64>,
    pub transitions: Vec<f64>,
}

struct Example {
    feats: Vec<Vec<u32>>,
    gold: Vec<usize>,
}

/// Negative log-likelihood of one example, reporting `d NLL / d w` entries
/// through the two callbacks as `(flat weight index, value)`.
fn example_gradient(
    model: &CrfModel,
    ex: &Example,
    mut emission: impl FnMut(usize, f64),
    mut transition: impl FnMut(usize, f64),
) -> Result<f64, CrfError> {
    let k = model.num_tags();
    let n = k + 2;
    let (start, stop) = (model.start_slot(), model.stop_slot());
    let pot = model.potentials(&ex.feats);
    let fb = pot.forward_backward()?;
    let nll = fb.log_partition() - pot.path_score(&ex.gold);
    let t = ex.feats.len();
    for i in 0..t {
        for (j, p) in (0..k).map(|j| (j, fb.marginal(i, j))) {
            let d = p - if ex.gold[i] == j { 1.0 } else { 0.0 };
            if d == 0.0 {
                continue;
            }
            for &f in &ex.feats[i] {
                emission(f as usize * k + j, d);
            }
            if i == 0 {
                transition(start * n + j, d);
            }
            if i == t - 1 {
                transition(j * n + stop, d);
            }
        }
    }
    for i in 1..t {
        for a in 0..k {
            for b in 0..k {
                let mut d = fb.pairwise(&pot, i, a, b);
                if ex.gold[i - 1] == a && ex.gold[i] == b {
                    d -= 1.0;
                }
                if d != 0.0 {
                    transition(a * n + b, d);
                }
            }
        }
    }
    Ok(nll)
}

fn examples(model: &CrfModel, data: &[TokenSequence], grow: Option<&mut CrfModel>) -> Result<(Vec<Example>, Vec<String>), CrfError> {
    let mut out = Vec::with_capacity(data.len());
    let mut skipped = Vec::new();
    let mut grow = grow;
    for seq in data {
        let tags = seq.gold_tags().ok_or_else(|| CrfError::Unlabeled(seq.id().to_string()))?;
        if seq.word_count() == 0 || tags.iter().all(|t| t.is_excluded()) {
            warn!("skipping `{}`: no word-initial positions", seq.id());
            skipped.push(seq.id().to_string());
            continue;
        }
        let gold = model.tag_indices(seq, tags)?;
        let feats = match grow.as_deref_mut() {
            Some(m) => m.encode_growing(seq),
            None => model.encode(seq),
        };
        out.push(Example { feats, gold });
    }
    Ok((out, skipped))
}

fn l2_norm_sq(model: &CrfModel) -> f64 {
    model.emissions.iter().chain(&model.transitions).map(|w| w * w).sum()
}

/// Mean NLL over `data` plus `l2 / 2 * ||w||^2`, using the forward pass only.
/// Features outside the model vocabulary are ignored.
pub fn objective(model: &CrfModel, data: &[TokenSequence], l2: f64) -> Result<f64, CrfError> {
    let (exs, _) = examples(model, data, None)?;
    if exs.is_empty() {
        return Err(CrfError::EmptyData);
    }
    let mut total = 0.0;
    for ex in &exs {
        let pot = model.potentials(&ex.feats);
        total += pot.forward_backward()?.log_partition() - pot.path_score(&ex.gold);
    }
    Ok(total / exs.len() as f64 + 0.5 * l2 * l2_norm_sq(model))
}

/// [`objective`] together with its analytic gradient.
pub fn objective_gradient(model: &CrfModel, data: &[TokenSequence], l2: f64) -> Result<(f64, Gradient), CrfError> {
    let (exs, _) = examples(model, data, None)?;
    if exs.is_empty() {
        return Err(CrfError::EmptyData);
    }
    let scale = 1.0 / exs.len() as f64;
    let mut g = Gradient {
        emissions: model.emissions.iter().map(|w| l2 * w).collect(),
        transitions: model.transitions.iter().map(|w| l2 * w).collect(),
    };
    let mut total = 0.0;
    for ex in &exs {
        let (ge, gt) = (&mut g.emissions, &mut g.transitions);
        total += example_gradient(model, ex, |i, d| ge[i] += scale * d, |i, d| gt[i] += scale * d)?;
    }
    Ok((total * scale + 0.5 * l2 * l2_norm_sq(model), g))
}

/// Trains a copy of `model` on labeled data and returns it with a loss report.
///
/// The vocabulary grows with the training data unless frozen. Each step
/// applies `w <- (w - lr * g) / (1 + lr * l2)` with `g` the mean NLL gradient
/// of the batch. Zero epochs return the model untouched; otherwise
/// `theta_version` advances by one.
pub fn train(model: &CrfModel, data: &[TokenSequence], cfg: &TrainConfig) -> Result<(CrfModel, TrainReport), CrfError> {
    fit(model, data, cfg, false)
}

/// Like [`train`], but the penalty is `l2 / 2 * ||w - w0||^2` with `w0` the
/// starting weights (zero for features first seen in `data`), so a small
/// sample adapts the model without washing out what it already knows.
pub fn train_anchored(model: &CrfModel, data: &[TokenSequence], cfg: &TrainConfig) -> Result<(CrfModel, TrainReport), CrfError> {
    fit(model, data, cfg, true)
}

fn fit(model: &CrfModel, data: &[TokenSequence], cfg: &TrainConfig, anchored: bool) -> Result<(CrfModel, TrainReport), CrfError> {
    if data.is_empty() {
        return Err(CrfError::EmptyData);
    }
    if cfg.epochs == 0 {
        return Ok((model.clone(), TrainReport::default()));
    }
    let mut m = model.clone();
    let (exs, skipped) = {
        let probe = model.clone();
        examples(&probe, data, Some(&mut m))?
    };
    if exs.is_empty() {
        return Err(CrfError::EmptyData);
    }
    let (anchor_em, anchor_tr) = if anchored {
        let mut em = model.emissions.clone();
        em.resize(m.emissions.len(), 0.0);
        (em, model.transitions.clone())
    } else {
        (vec![0.0; m.emissions.len()], vec![0.0; m.transitions.len()])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..exs.len()).collect();
    let batch = cfg.batch_size.max(1);
    let decay = 1.0 / (1.0 + cfg.learning_rate * cfg.l2);
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        skipped,
    };
    let mut em_updates: Vec<(usize, f64)> = Vec::new();
    let mut tr_updates: Vec<(usize, f64)> = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut nll_sum = 0.0;
        for chunk in order.chunks(batch) {
            em_updates.clear();
            tr_updates.clear();
            for &idx in chunk {
                nll_sum += example_gradient(
                    &m,
                    &exs[idx],
                    |i, d| em_updates.push((i, d)),
                    |i, d| tr_updates.push((i, d)),
                )?;
            }
            let step = cfg.learning_rate / chunk.len() as f64;
            let (em, tr) = m.weights_mut();
            for &(i, d) in &em_updates {
                em[i] -= step * d;
            }
            for &(i, d) in &tr_updates {
                tr[i] -= step * d;
            }
            if decay != 1.0 {
                for (w, a) in em.iter_mut().zip(&anchor_em).chain(tr.iter_mut().zip(&anchor_tr)) {
                    *w = a + (*w - a) * decay;
                }
            }
        }
        let drift: f64 = m
            .emissions
            .iter()
            .zip(&anchor_em)
            .chain(m.transitions.iter().zip(&anchor_tr))
            .map(|(w, a)| (w - a) * (w - a))
            .sum();
        let loss = nll_sum / exs.len() as f64 + 0.5 * cfg.l2 * drift;
        if !loss.is_finite() {
            return Err(CrfError::NonFinite("training loss"));
        }
        report.epoch_losses.push(loss);
    }
    m.bump_version();
    Ok((m, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{apply_subtoken_rule, LabelScheme, SubwordSplitter, Tag};
    use crate::crf::FeatureEncoder;

    fn labeled(id: &str, words: &[(&str, &str)]) -> TokenSequence {
        let pairs: Vec<(&str, Tag)> = words.iter().map(|(w, t)| (*w, t.parse().unwrap())).collect();
        apply_subtoken_rule(id, &pairs, &SubwordSplitter::new(["as", "##pir", "##in"])).unwrap()
    }

    fn scheme() -> LabelScheme {
        LabelScheme::new(["Drug", "Route"]).unwrap()
    }

    fn sentence() -> TokenSequence {
        labeled(
            "s",
            &[("take", "O"), ("aspirin", "B-Drug"), ("by", "O"), ("mouth", "B-Route"), ("daily", "O")],
        )
    }

    #[test]
    fn memorizes_a_repeated_sentence() {
        let data = vec![sentence(); 50];
        let model = CrfModel::new(scheme(), FeatureEncoder::default(), true);
        let cfg = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        let (trained, report) = train(&model, &data, &cfg).unwrap();
        let p = trained.viterbi_decode(&data[0]).unwrap();
        assert_eq!(p.best_path, data[0].word_tags().unwrap());
        assert_eq!(trained.theta_version(), 1);
        assert!(report.epoch_losses.first() > report.epoch_losses.last());
    }

    #[test]
    fn zero_epochs_leaves_model_unchanged() {
        let model = CrfModel::new(scheme(), FeatureEncoder::default(), true);
        let (out, _) = train(&model, &[sentence()], &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
        assert_eq!(out, model);
        assert_eq!(out.theta_version(), 0);
    }

    #[test]
    fn huge_l2_pins_weights_to_zero() {
        let model = CrfModel::new(scheme(), FeatureEncoder::default(), true);
        let cfg = TrainConfig {
            epochs: 5,
            l2: 1e6,
            ..Default::default()
        };
        let (out, _) = train(&model, &vec![sentence(); 10], &cfg).unwrap();
        assert!(out.emission_weights().iter().chain(out.transition_weights()).all(|w| w.abs() < 1e-3));
    }

    #[test]
    fn anchored_training_stays_at_the_start_point() {
        let base = train(&CrfModel::new(scheme(), FeatureEncoder::default(), true), &[sentence()], &TrainConfig::default())
            .unwrap()
            .0;
        let other = labeled("t", &[("give", "O"), ("aspirin", "B-Drug")]);
        let cfg = TrainConfig {
            epochs: 5,
            l2: 1e6,
            ..Default::default()
        };
        let (out, _) = train_anchored(&base, &vec![other; 10], &cfg).unwrap();
        let known = base.emission_weights().len();
        assert!(out.emission_weights().len() > known);
        for (a, b) in out.emission_weights().iter().zip(base.emission_weights()) {
            assert!((a - b).abs() < 1e-3);
        }
        assert!(out.emission_weights()[known..].iter().all(|w| w.abs() < 1e-3));
        assert_eq!(out.theta_version(), base.theta_version() + 1);
    }

    #[test]
    fn empty_and_unlabeled_data_are_errors() {
        let model = CrfModel::new(scheme(), FeatureEncoder::default(), true);
        assert!(matches!(train(&model, &[], &TrainConfig::default()), Err(CrfError::EmptyData)));
        let unlabeled = sentence().without_gold();
        assert!(matches!(
            train(&model, &[unlabeled], &TrainConfig::default()),
            Err(CrfError::Unlabeled(_))
        ));
    }

    #[test]
    fn deterministic_under_seed() {
        let data = vec![sentence(), labeled("t", &[("mouth", "B-Route"), ("pain", "O")])];
        let model = CrfModel::new(scheme(), FeatureEncoder::default(), true);
        let cfg = TrainConfig { seed: 3, ..Default::default() };
        let a = train(&model, &data, &cfg).unwrap().0;
        let b = train(&model, &data, &cfg).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let data = vec![sentence(), labeled("t", &[("mouth", "B-Route"), ("aspirin", "B-Drug")])];
        let mut model = CrfModel::new(scheme(), FeatureEncoder::default(), true);
        model.extend_vocab(&data);
        // move off the symmetric zero point
        let (model, _) = train(&model, &data, &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
        let l2 = 0.01;
        let (_, g) = objective_gradient(&model, &data, l2).unwrap();
        let h = 1e-5;
        for idx in (0..model.emission_weights().len()).step_by(7) {
            let mut plus = model.clone();
            plus.weights_mut().0[idx] += h;
            let mut minus = model.clone();
            minus.weights_mut().0[idx] -= h;
            let fd = (objective(&plus, &data, l2).unwrap() - objective(&minus, &data, l2).unwrap()) / (2.0 * h);
            let a = g.emissions[idx];
            assert!((a - fd).abs() / a.abs().max(fd.abs()).max(1e-4) < 1e-4, "idx {idx}: {a} vs {fd}");
        }
    }
}
