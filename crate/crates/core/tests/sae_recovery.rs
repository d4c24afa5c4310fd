//! A top-K SAE trained on sparse nonnegative combinations of a random
//! dictionary should rediscover most of that dictionary.

use repscope_core::sae::{reconstruction_r2, sae_train, SaeConfig};
use repscope_core::scalar::cosine;
use repscope_core::synth::sparse_dictionary_data;
use repscope_core::{Matrix64, SaeModel64};

/// One-to-one greedy matching of true atoms to learned atoms by |cosine|.
fn greedy_matches(truth: &Matrix64, model: &SaeModel64, threshold: f64) -> usize {
    let mut pairs = Vec::new();
    for t in 0..truth.nrows() {
        for j in 0..model.m_dict() {
            pairs.push((cosine(truth.row(t), &model.atom(j)).unwrap().abs(), t, j));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used_truth = vec![false; truth.nrows()];
    let mut used_learned = vec![false; model.m_dict()];
    let mut matched = 0;
    for (c, t, j) in pairs {
        if c < threshold {
            break;
        }
        if !used_truth[t] && !used_learned[j] {
            used_truth[t] = true;
            used_learned[j] = true;
            matched += 1;
        }
    }
    matched
}

#[test]
fn planted_dictionary_is_recovered() {
    let (all, truth) = sparse_dictionary_data(22_000, 8, 64, 2, 3).unwrap();
    let train = all.select_rows(&(0..20_000).collect::<Vec<_>>());
    let test = all.select_rows(&(20_000..22_000).collect::<Vec<_>>());
    let cfg = SaeConfig {
        m_dict: Some(512),
        k: 2,
        epochs: 60,
        lr: 1e-3,
        batch_size: 64,
        seed: 0,
    };
    let (model, log) = sae_train(&train, &cfg).unwrap();
    assert_eq!(log.len(), 60);
    assert!(log.iter().all(|e| e.decoder_norm_error < 1e-4));
    let matched = greedy_matches(&truth, &model, 0.9);
    assert!(matched * 5 >= 64 * 4, "matched {matched} of 64");
    let r2 = reconstruction_r2(&model, &test).unwrap();
    assert!(r2 >= 0.9, "held-out R^2 {r2}");
}
