use super::*;
use crate::policy::{Capacity, Role, Vocabulary};
use crate::rng::rng_from_seed;
use crate::train::check_gradients;

fn cfg(l: usize, d: usize, c: usize) -> ProbeConfig {
    ProbeConfig::for_model(l, d, c)
}

use rand::RngExt as _;

fn random_stack(l: usize, d: usize, rng: &mut crate::rng::Rng) -> Vec<Vec<f64>> {
    (0..l)
        .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .collect()
}

#[test]
fn zeroed_final_affine_gives_uniform() {
    let cfg = cfg(4, 16, 5);
    let mut params = build_predictor(&cfg).unwrap();
    for w in params.b3_w.iter_mut() {
        *w = 0.0;
    }
    for b in params.b3_b.iter_mut() {
        *b = 0.0;
    }
    let mut rng = rng_from_seed(1);
    let hidden = random_stack(4, 16, &mut rng);
    let probs = predictor_forward(&params, &hidden).unwrap();
    for p in &probs {
        assert!((p - 0.2).abs() < 1e-15);
    }
}

#[test]
fn outputs_are_distributions() {
    let cfg = cfg(4, 16, 3);
    let params = build_predictor(&cfg).unwrap();
    let mut rng = rng_from_seed(2);
    for _ in 0..100 {
        let hidden = random_stack(4, 16, &mut rng);
        let probs = predictor_forward(&params, &hidden).unwrap();
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(probs.iter().all(|p| *p >= 0.0));
    }
}

#[test]
fn all_zero_hidden_with_zero_biases_is_uniform() {
    let cfg = cfg(4, 16, 4);
    let params = build_predictor(&cfg).unwrap(); // biases start at zero
    let hidden = vec![vec![0.0; 16]; 4];
    let probs = predictor_forward(&params, &hidden).unwrap();
    for p in &probs {
        assert!((p - 0.25).abs() < 1e-12);
    }
}

#[test]
fn parameter_count_matches_closed_form() {
    for topology in [
        ProbeTopology::LayerAxis,
        ProbeTopology::PerLayer,
        ProbeTopology::SingleLayer,
    ] {
        let mut c = cfg(8, 32, 4);
        c.topology = topology;
        if topology == ProbeTopology::SingleLayer {
            c.num_layers = 1;
        }
        let params = build_predictor(&c).unwrap();
        assert_eq!(
            params.param_count(),
            expected_param_count(&c),
            "{topology:?}"
        );
    }
}

#[test]
fn positive_scaling_of_hidden_does_not_change_output() {
    let cfg = cfg(4, 16, 3);
    let params = build_predictor(&cfg).unwrap();
    let mut rng = rng_from_seed(5);
    let hidden = random_stack(4, 16, &mut rng);
    let scaled: Vec<Vec<f64>> = hidden
        .iter()
        .map(|row| row.iter().map(|v| v * 37.5).collect())
        .collect();
    let a = predictor_forward(&params, &hidden).unwrap();
    let b = predictor_forward(&params, &scaled).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn shape_mismatch_rejected() {
    let cfg = cfg(4, 16, 3);
    let params = build_predictor(&cfg).unwrap();
    let short = vec![vec![0.0; 16]; 3];
    assert!(matches!(
        predictor_forward(&params, &short),
        Err(ProbeError::ShapeMismatch(_))
    ));
    let narrow = vec![vec![0.0; 8]; 4];
    assert!(matches!(
        predictor_forward(&params, &narrow),
        Err(ProbeError::ShapeMismatch(_))
    ));
}

#[test]
fn ce_gradients_pass_finite_differences_all_topologies() {
    let mut rng = rng_from_seed(7);
    for topology in [
        ProbeTopology::LayerAxis,
        ProbeTopology::PerLayer,
        ProbeTopology::SingleLayer,
    ] {
        let mut c = cfg(4, 12, 3);
        c.topology = topology;
        if topology == ProbeTopology::SingleLayer {
            c.num_layers = 1;
        }
        let params = build_predictor(&c).unwrap();
        let hidden = random_stack(c.num_layers, 12, &mut rng);
        let (_, grads) = ce_grad(&params, &hidden, 1, 1.0).unwrap();
        let report = check_gradients(&params, &grads.flat(), 200, 1e-5, 1e-8, 11, |p| {
            ce_grad(p, &hidden, 1, 1.0).unwrap().0
        });
        assert!(
            report.max_rel_err <= 1e-4,
            "{topology:?}: {}",
            report.max_rel_err
        );
    }
}

#[test]
fn random_labels_probe_near_chance() {
    // Statistical oracle: labels independent of the hidden states give
    // held-out accuracy within binomial noise of 1/C.
    let c = 4;
    let mut config = cfg(2, 16, c);
    config.epochs = 60;
    let mut rng = rng_from_seed(13);
    let examples: Vec<ProbeExample> = (0..400)
        .map(|_| ProbeExample {
            hidden: random_stack(2, 16, &mut rng),
            label: rng.random_range(0..c),
        })
        .collect();
    let (_, acc) = train_probe(&examples, &config, 0.8).unwrap();
    let n_val = 80.0;
    let p = 1.0 / c as f64;
    let sigma = (p * (1.0 - p) / n_val).sqrt();
    assert!(
        (acc - p).abs() <= 3.0 * sigma + 0.05,
        "accuracy {acc} too far from chance {p}"
    );
}

#[test]
fn separable_hiddens_probe_perfectly() {
    // Each class plants a distinct strong direction in one layer.
    let c = 3;
    let mut config = cfg(4, 16, c);
    config.epochs = 300;
    config.learning_rate = 0.05;
    let mut rng = rng_from_seed(17);
    let examples: Vec<ProbeExample> = (0..150)
        .map(|i| {
            let label = i % c;
            let mut hidden = random_stack(4, 16, &mut rng);
            for row in hidden.iter_mut() {
                row[label] += 10.0;
            }
            ProbeExample { hidden, label }
        })
        .collect();
    let (_, acc) = train_probe(&examples, &config, 0.8).unwrap();
    assert_eq!(acc, 1.0, "accuracy {acc}");
}

#[test]
fn probe_training_is_deterministic() {
    let c = 3;
    let config = cfg(2, 16, c);
    let mut rng = rng_from_seed(23);
    let examples: Vec<ProbeExample> = (0..60)
        .map(|i| ProbeExample {
            hidden: random_stack(2, 16, &mut rng),
            label: i % c,
        })
        .collect();
    let (p1, a1) = train_probe(&examples, &config, 0.75).unwrap();
    let (p2, a2) = train_probe(&examples, &config, 0.75).unwrap();
    assert_eq!(a1, a2);
    assert_eq!(p1, p2);
}

#[test]
fn insufficient_data_detected() {
    let config = cfg(2, 16, 3);
    let mut rng = rng_from_seed(29);
    // class 2 has a single example
    let mut examples: Vec<ProbeExample> = (0..8)
        .map(|i| ProbeExample {
            hidden: random_stack(2, 16, &mut rng),
            label: i % 2,
        })
        .collect();
    examples.push(ProbeExample {
        hidden: random_stack(2, 16, &mut rng),
        label: 2,
    });
    assert!(matches!(
        train_probe(&examples, &config, 0.8),
        Err(ProbeError::InsufficientData(_))
    ));
}

#[test]
fn layerwise_profile_has_one_entry_per_layer() {
    let vocab = Vocabulary::new(["a", "b", "c", "d"].map(String::from)).unwrap();
    let model = PolicyModel::init(Capacity::Weak, vocab, Role::Expert, 3);
    let mut rng = rng_from_seed(31);
    let items: Vec<(Vec<crate::policy::TokenId>, usize)> = (0..48)
        .map(|i| {
            let len = rng.random_range(1..6);
            let prompt: Vec<crate::policy::TokenId> = (0..len)
                .map(|_| crate::policy::TokenId(rng.random_range(3..7)))
                .collect();
            (prompt, i % 2)
        })
        .collect();
    let examples = export_examples(&model, &items).unwrap();
    let mut config = cfg(model.num_layers(), model.embed_dim(), 2);
    config.epochs = 20;
    let profile = layerwise_probe(&examples, &config, 0.75).unwrap();
    assert_eq!(profile.len(), model.num_layers());
    for acc in &profile {
        assert!((0.0..=1.0).contains(acc));
    }
}

#[test]
fn untrained_model_probes_near_chance_per_layer() {
    // Labels drawn independently of the prompts: every layer should hover
    // near 1/C.
    let vocab = Vocabulary::new(["a", "b", "c", "d"].map(String::from)).unwrap();
    let model = PolicyModel::init(Capacity::Weak, vocab, Role::Expert, 5);
    let mut rng = rng_from_seed(37);
    let items: Vec<(Vec<crate::policy::TokenId>, usize)> = (0..300)
        .map(|_| {
            let len = rng.random_range(1..6);
            let prompt: Vec<crate::policy::TokenId> = (0..len)
                .map(|_| crate::policy::TokenId(rng.random_range(3..7)))
                .collect();
            (prompt, rng.random_range(0..3usize))
        })
        .collect();
    let examples = export_examples(&model, &items).unwrap();
    let mut config = cfg(model.num_layers(), model.embed_dim(), 3);
    config.epochs = 40;
    let profile = layerwise_probe(&examples, &config, 0.8).unwrap();
    let p: f64 = 1.0 / 3.0;
    let sigma = (p * (1.0 - p) / 60.0).sqrt();
    for (l, acc) in profile.iter().enumerate() {
        assert!(
            (acc - p).abs() <= 3.0 * sigma + 0.1,
            "layer {l}: accuracy {acc}"
        );
    }
}

#[test]
fn example_container_round_trips() {
    let mut rng = rng_from_seed(41);
    let examples: Vec<ProbeExample> = (0..10)
        .map(|i| ProbeExample {
            hidden: random_stack(3, 6, &mut rng),
            label: i % 4,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("examples.bin");
    save_examples(&examples, &path).unwrap();
    let loaded = load_examples(&path).unwrap();
    assert_eq!(examples, loaded);
}
