//! Per-word attributions for a single predicted tag.

use super::{CrfError, CrfModel, UNKNOWN_WORD};
use crate::corpus::TokenSequence;

fn target_word(seq: &TokenSequence, position: usize) -> Result<usize, CrfError> {
    if position >= seq.len() {
        return Err(CrfError::OutOfRange(position));
    }
    if !seq.is_word_initial()[position] {
        return Err(CrfError::NotWordInitial(position));
    }
    Ok(seq.word_index()[position])
}

/// Occlusion saliency for the tag predicted at subtoken `target_position`.
///
/// `saliency[j] = P(y_t = ŷ_t | x) - P(y_t = ŷ_t | x with word j unknown)`,
/// where `ŷ_t` is the Viterbi tag and probabilities are token marginals.
pub fn explain_occlusion(model: &CrfModel, seq: &TokenSequence, target_position: usize) -> Result<Vec<f64>, CrfError> {
    let t = target_word(seq, target_position)?;
    let words = seq.words();
    let pot = model.potentials(&model.encoder.encode(&words));
    let yhat = pot.viterbi().0[t];
    let base = pot.forward_backward()?.marginal(t, yhat);
    (0..words.len())
        .map(|j| {
            let mut occluded = words.clone();
            occluded[j] = UNKNOWN_WORD.to_string();
            let p = model
                .potentials(&model.encoder.encode(&occluded))
                .forward_backward()?
                .marginal(t, yhat);
            Ok(base - p)
        })
        .collect()
}

/// Predicted tag index at word `t` and `d log P(y_t = ŷ_t | x) / d e[j][k]`
/// for every word `j` and tag `k`, where `e` are the emission scores.
///
/// The derivative equals `P(y_j = k | y_t = ŷ_t, x) - P(y_j = k | x)`, so it
/// comes from a second forward-backward pass with position `t` clamped.
/// By the chain rule `d log P / d W[f][k]` is the sum of `e`-gradients over
/// the positions where feature `f` is active.
pub fn target_log_marginal_gradient(
    model: &CrfModel,
    feats: &[Vec<u32>],
    t: usize,
) -> Result<(usize, Vec<Vec<f64>>), CrfError> {
    let pot = model.potentials(feats);
    let yhat = pot.viterbi().0[t];
    let free = pot.forward_backward()?;
    let mut clamped_pot = pot.clone();
    clamped_pot.clamp(t, yhat);
    let clamped = clamped_pot.forward_backward()?;
    let k = model.num_tags();
    let grad = (0..feats.len())
        .map(|j| (0..k).map(|c| clamped.marginal(j, c) - free.marginal(j, c)).collect())
        .collect();
    Ok((yhat, grad))
}

/// Gradient-times-input saliency for the tag predicted at `target_position`.
///
/// `saliency[j] = sum over active features f of word j, sum over tags k, of
/// W[f][k] * d log P(y_t = ŷ_t | x) / d e[j][k]`: the derivative of the
/// target log-marginal with respect to word `j`'s feature indicators,
/// contracted with those indicators. Exact for the linear encoder.
pub fn explain_gradient(model: &CrfModel, seq: &TokenSequence, target_position: usize) -> Result<Vec<f64>, CrfError> {
    let t = target_word(seq, target_position)?;
    let feats = model.encode(seq);
    let (_, grad) = target_log_marginal_gradient(model, &feats, t)?;
    let k = model.num_tags();
    Ok(feats
        .iter()
        .zip(&grad)
        .map(|(fs, g)| {
            fs.iter()
                .map(|&f| (0..k).map(|c| model.emission_weight(f, c) * g[c]).sum::<f64>())
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_unlabeled, LabelScheme, SubwordSplitter, Tag};
    use crate::crf::{FeatureEncoder, FeatureTemplate};

    fn seq(words: &[&str]) -> TokenSequence {
        split_unlabeled("s", words, &SubwordSplitter::new(["ab", "##c"])).unwrap()
    }

    fn model() -> CrfModel {
        CrfModel::new(LabelScheme::new(["E"]).unwrap(), FeatureEncoder::default(), true)
    }

    #[test]
    fn zero_model_gives_zero_occlusion_and_equal_gradient_saliency() {
        let m = model();
        let s = seq(&["a", "b", "c"]);
        for target in 0..3 {
            for v in explain_occlusion(&m, &s, target).unwrap() {
                assert!(v.abs() < 1e-12);
            }
            let g = explain_gradient(&m, &s, target).unwrap();
            assert!(g.iter().all(|v| (v - g[0]).abs() < 1e-12));
        }
    }

    #[test]
    fn single_word_occlusion_is_difference_with_unknown() {
        let mut m = CrfModel::new(LabelScheme::new(["E"]).unwrap(), FeatureEncoder::new(vec![FeatureTemplate::Word], 0.0), false);
        m.set_feature_weight("w=fever", &Tag::Begin("E".into()), 1.5).unwrap();
        let s = seq(&["fever"]);
        let sal = explain_occlusion(&m, &s, 0).unwrap();
        // P(B|x) = e^1.5 / (e^1.5 + 2); unknown word is uniform over 3 tags.
        let p = 1.5f64.exp() / (1.5f64.exp() + 2.0);
        assert!((sal[0] - (p - 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn continuation_target_is_rejected() {
        let s = seq(&["abc", "x"]);
        assert!(matches!(explain_occlusion(&model(), &s, 1), Err(CrfError::NotWordInitial(1))));
        assert!(matches!(explain_gradient(&model(), &s, 9), Err(CrfError::OutOfRange(9))));
    }
}
