//! Analytic training gradients against central finite differences.

mod common;

use common::{enumerate, random_model, random_sentence};
use nerloop_core::crf::{objective, objective_gradient};
use nerloop_core::{CrfModel, TokenSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Labels each sentence with a random well-formed path the model allows.
fn labeled(rng: &mut ChaCha8Rng, model: &CrfModel, n: usize) -> Vec<TokenSequence> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=5);
            let seq = random_sentence(rng, &format!("s{i}"), len);
            let paths = enumerate(model, &seq).paths;
            loop {
                let pick = &paths[rng.random_range(0..paths.len())];
                let tags: Vec<_> = pick.0.iter().map(|&k| model.scheme().tag(k)).collect();
                // Unconstrained models also score ill-formed BIO paths; gold must be well formed.
                if let (true, Ok(s)) = (pick.1.is_finite(), seq.with_word_tags(&tags)) {
                    break s;
                }
            }
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..60 {
        let constrained = rng.random_bool(0.5);
        let types = rng.random_range(1..=2);
        let model = random_model(&mut rng, types, constrained, 1.0);
        let data = labeled(&mut rng, &model, 4);
        let l2 = if case % 2 == 0 { 0.0 } else { 0.1 };
        let (_, g) = objective_gradient(&model, &data, l2).unwrap();
        let k = model.num_tags();
        for f in 0..model.num_features() as u32 {
            for t in 0..k {
                let w = model.emission_weight(f, t);
                let mut plus = model.clone();
                plus.set_emission_weight(f, t, w + H);
                let mut minus = model.clone();
                minus.set_emission_weight(f, t, w - H);
                let fd = (objective(&plus, &data, l2).unwrap() - objective(&minus, &data, l2).unwrap()) / (2.0 * H);
                let a = g.emissions[f as usize * k + t];
                assert!(rel_err(a, fd) < 1e-4, "case {case}: emission ({f},{t}) analytic {a} fd {fd}");
            }
        }
        let slots = k + 2;
        for from in 0..slots {
            for to in 0..slots {
                let w = model.transition_weight(from, to);
                let mut plus = model.clone();
                plus.set_transition_weight(from, to, w + H);
                let mut minus = model.clone();
                minus.set_transition_weight(from, to, w - H);
                let fd = (objective(&plus, &data, l2).unwrap() - objective(&minus, &data, l2).unwrap()) / (2.0 * H);
                let a = g.transitions[from * slots + to];
                assert!(rel_err(a, fd) < 1e-4, "case {case}: transition ({from},{to}) analytic {a} fd {fd}");
            }
        }
    }
}
