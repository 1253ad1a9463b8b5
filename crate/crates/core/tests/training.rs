use regnet::encoder::{Activation, EncoderParams, Layer};
use regnet::episodes::{sample_episode, split_classes, synth_gaussian, Episode, SynthSpec, BENCHMARK_SPLIT};
use regnet::evaluator::{evaluate, EpisodeClassifier, EvalSpec};
use regnet::heads::{HeadKind, Hyper};
use regnet::rng::{indexed_seed, seeded};
use regnet::tensor::Tensor;
use regnet::trainer::{episode_gradient, fit, fit_from, EncoderSpec, TrainConfig};
use regnet::Result;

fn linear_identity(dim: usize) -> EncoderParams {
    EncoderParams::from_layers(vec![Layer {
        weight: Tensor::identity(dim),
        bias: Tensor::zeros(dim, 1),
        activation: Activation::None,
    }])
    .unwrap()
}

#[test]
fn penalty_leaves_gradients_alone_for_orthogonal_classes() {
    // Class c lives on coordinates {2c, 2c+1}, so embedded supports are
    // mutually orthogonal under the identity encoder.
    let mut rows = Vec::new();
    for c in 0..3 {
        for i in 0..6 {
            let mut x = vec![0.0; 6];
            x[2 * c] = 1.0 + 0.1 * i as f64;
            x[2 * c + 1] = 0.5 - 0.07 * i as f64;
            rows.push((format!("c{c}"), x));
        }
    }
    let ds = regnet::episodes::Dataset::from_labeled("axes", rows).unwrap();
    let params = linear_identity(6);
    let ep = sample_episode(&ds, 3, 2, 2, &mut seeded(4)).unwrap();
    let plain = episode_gradient(&params, &ep, HeadKind::Regression, Hyper { lambda1: 1e-3, lambda2: 0.0 }).unwrap();
    let penalized = episode_gradient(&params, &ep, HeadKind::Regression, Hyper { lambda1: 1e-3, lambda2: 0.5 }).unwrap();
    assert_eq!(plain.loss, penalized.loss);
    for (a, b) in plain.grads.iter().zip(&penalized.grads) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-15, "{x} vs {y}");
        }
    }
}

#[test]
fn default_training_stays_finite() {
    for seed in 0..10 {
        let ds = SynthSpec::benchmark(seed).generate().unwrap();
        let (train, _, _) = split_classes(&ds, BENCHMARK_SPLIT, seed).unwrap();
        let cfg = TrainConfig {
            seed,
            threads: 4,
            ..TrainConfig::default()
        };
        let r = fit(&train, None, &cfg).unwrap();
        assert_eq!(r.history.len(), 2000);
        assert!(r
            .history
            .iter()
            .all(|h| h.train_loss.is_finite() && h.train_acc.is_finite()));
    }
}

#[test]
fn separable_training_classes_are_learned() {
    let ds = SynthSpec::benchmark(5).generate().unwrap();
    let (train, _, _) = split_classes(&ds, BENCHMARK_SPLIT, 5).unwrap();
    let cfg = TrainConfig {
        seed: 5,
        threads: 4,
        ..TrainConfig::default()
    };
    let r = fit(&train, None, &cfg).unwrap();
    let tail = &r.history[r.history.len() - 100..];
    let acc = tail.iter().map(|h| h.train_acc).sum::<f64>() / tail.len() as f64;
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn validation_beats_chance_after_500_episodes() {
    let ds = synth_gaussian(3, 25, 30, 32, 1.0, 0.2).unwrap();
    let (train, val, _) = split_classes(&ds, (0.8, 0.2, 0.0), 3).unwrap();
    assert_eq!((train.num_classes(), val.num_classes()), (20, 5));
    let cfg = TrainConfig {
        episodes: 500,
        seed: 3,
        threads: 4,
        ..TrainConfig::default()
    };
    let r = fit(&train, Some(&val), &cfg).unwrap();
    let last = r.history.last().unwrap().val_acc.unwrap();
    assert!(last > 20.0, "val accuracy {last}");
}

#[test]
fn duplicated_support_drives_loss_to_floor() {
    // within_std = 0: every query is a copy of a support point.
    let ds = synth_gaussian(6, 3, 4, 4, 1.0, 0.0).unwrap();
    let ep = sample_episode(&ds, 3, 1, 2, &mut seeded(1)).unwrap();
    let cfg = TrainConfig {
        n: 3,
        k: 1,
        q: 2,
        episodes: 1500,
        lr: 1e-2,
        hyper: Hyper { lambda1: 1e-3, lambda2: 0.0 },
        encoder: EncoderSpec {
            hidden: vec![],
            embed_dim: 4,
            activation: Activation::None,
        },
        val_interval: 10_000,
        ..TrainConfig::default()
    };
    // The one-episode dataset makes every sampled episode identical up to
    // class order.
    let one = regnet::episodes::Dataset::from_labeled(
        "dup",
        ep.classes
            .iter()
            .flat_map(|&c| {
                let x = ds.examples()[ds.class_examples(c)[0]].features.clone();
                vec![(format!("c{c}"), x.clone()), (format!("c{c}"), x.clone()), (format!("c{c}"), x)]
            })
            .collect(),
    )
    .unwrap();
    let start = episode_gradient(&linear_identity(4), &ep, HeadKind::Regression, cfg.hyper).unwrap().loss;
    let r = fit_from(linear_identity(4), &one, None, &cfg).unwrap();
    let end = r.history.last().unwrap().train_loss;
    assert!(end < start / 10.0 && end < 0.05, "loss {start} -> {end}");
}

/// Pseudo-random predictions derived from the query ids: accuracy near 1/N
/// with genuine spread across episodes.
struct Coin;

impl EpisodeClassifier for Coin {
    fn name(&self) -> String {
        "coin".into()
    }
    fn describe(&self) -> String {
        "coin".into()
    }
    fn posteriors(&self, ep: &Episode) -> Result<Vec<Vec<f64>>> {
        Ok(ep
            .query_ids
            .iter()
            .map(|&id| {
                let pick = (indexed_seed(5, "coin", id as u64 ^ ep.support_ids[0] as u64) % ep.n as u64) as usize;
                (0..ep.n).map(|c| if c == pick { 1.0 } else { 0.0 }).collect()
            })
            .collect())
    }
}

#[test]
fn interval_shrinks_with_root_of_episode_count() {
    let ds = synth_gaussian(2, 20, 30, 4, 1.0, 0.5).unwrap();
    let spec = |episodes| EvalSpec {
        n: 5,
        k: 5,
        q: 16,
        episodes,
        seed: 77,
        threads: 4,
    };
    let small = evaluate(&Coin, &ds, None, &spec(150)).unwrap();
    let large = evaluate(&Coin, &ds, None, &spec(600)).unwrap();
    assert!((small.mean - 20.0).abs() < 3.0, "{}", small.mean);
    let ratio = large.ci95 / small.ci95;
    assert!((ratio - 0.5).abs() <= 0.1, "ratio {ratio}");
}
