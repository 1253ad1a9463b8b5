use std::collections::HashSet;

use proptest::prelude::*;
use regnet::autodiff::Tape;
use regnet::encoder::{mlp_spec, Activation, EncoderParams};
use regnet::episodes::{sample_episode, split_classes, synth_gaussian};
use regnet::heads::{
    argmax, argmin, build_subspace, ortho_penalty, posterior_from_distances, regression_distance, ClassSubspace,
};
use regnet::rng::seeded;
use regnet::tensor::Tensor;
use regnet::trainer::{adam_update, AdamState};

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::random_normal(rows, cols, 1.0, &mut seeded(seed))
}

fn distance(s: &Tensor, e: &Tensor, lambda: f64) -> f64 {
    let mut tape = Tape::new();
    let (sv, ev) = (tape.constant(s.clone()), tape.constant(e.clone()));
    let sub = build_subspace(&mut tape, 0, sv, lambda).unwrap();
    let d = regression_distance(&mut tape, ev, &sub).unwrap();
    tape.value(d).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embedding_commutes_with_column_permutation(seed in any::<u64>(), cols in 1usize..8) {
        let params = EncoderParams::init(seed, &mlp_spec(5, &[7], 3, Activation::Relu)).unwrap();
        let x = random(5, cols, seed ^ 1);
        let mut perm: Vec<usize> = (0..cols).collect();
        perm.rotate_left(seed as usize % cols);
        let columns: Vec<Vec<f64>> = perm.iter().map(|&j| x.column(j).into_data()).collect();
        let refs: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
        let xp = Tensor::from_columns(&refs).unwrap();
        let y = params.forward(&x).unwrap();
        let yp = params.forward(&xp).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            prop_assert_eq!(yp.column(i), y.column(j));
        }
    }

    #[test]
    fn distance_is_contractive_and_monotone_in_ridge(seed in any::<u64>(), k in 1usize..6) {
        let s = random(8, k, seed);
        let e = random(8, 1, seed ^ 7);
        let norm = e.l2_norm().unwrap();
        let mut prev = 0.0;
        for lambda in [0.0, 1e-3, 1e-1, 1.0, 10.0] {
            let d = distance(&s, &e, lambda);
            prop_assert!(d <= norm * (1.0 + 1e-12));
            prop_assert!(d >= prev * (1.0 - 1e-12), "{} then {}", prev, d);
            prev = d;
        }
    }

    #[test]
    fn tiny_ridge_approaches_exact_projection(seed in any::<u64>(), k in 1usize..6) {
        let s = random(10, k, seed);
        let e = random(10, 1, seed ^ 3);
        let exact = distance(&s, &e, 0.0);
        let ridge = distance(&s, &e, 1e-9);
        prop_assert!((exact - ridge).abs() / exact < 1e-6);
    }

    #[test]
    fn distance_depends_only_on_column_space(seed in any::<u64>(), k in 1usize..5) {
        let s = random(9, k, seed);
        let e = random(9, 1, seed ^ 5);
        let mut r = random(k, k, seed ^ 9).scale(0.25);
        r.add_assign(&Tensor::identity(k)).unwrap();
        let a = distance(&s, &e, 0.0);
        let b = distance(&s.matmul(&r).unwrap(), &e, 0.0);
        prop_assert!((a - b).abs() / a < 1e-8);
    }

    #[test]
    fn posterior_argmax_is_distance_argmin(d in prop::collection::vec(0.0f64..50.0, 2..12)) {
        let mut tape = Tape::new();
        let vars: Vec<_> = d.iter().map(|&x| tape.constant(Tensor::scalar(x))).collect();
        let p = posterior_from_distances(&mut tape, &vars).unwrap();
        let p = tape.value(p).data().to_vec();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(argmax(&p), argmin(&d));
    }

    #[test]
    fn ortho_penalty_ignores_class_order(seed in any::<u64>(), n in 2usize..5, i in 0usize..5, j in 0usize..5) {
        let (i, j) = (i % n, j % n);
        let s: Vec<Tensor> = (0..n).map(|c| random(6, 2, seed.wrapping_add(c as u64))).collect();
        let penalty = |order: &[usize]| {
            let mut tape = Tape::new();
            let subs: Vec<ClassSubspace> = order
                .iter()
                .map(|&c| {
                    let v = tape.constant(s[c].clone());
                    build_subspace(&mut tape, c, v, 1e-3).unwrap()
                })
                .collect();
            let p = ortho_penalty(&mut tape, &subs).unwrap();
            tape.value(p).item()
        };
        let mut order: Vec<usize> = (0..n).collect();
        let before = penalty(&order);
        order.swap(i, j);
        let after = penalty(&order);
        prop_assert!(before >= 0.0);
        prop_assert!((before - after).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn split_is_a_class_partition(seed in any::<u64>(), classes in 3usize..40) {
        let ds = synth_gaussian(seed, classes, 2, 2, 1.0, 0.1).unwrap();
        let (tr, va, te) = split_classes(&ds, (0.6, 0.2, 0.2), seed).unwrap();
        let names: Vec<&String> = tr.class_names().iter().chain(va.class_names()).chain(te.class_names()).collect();
        let unique: HashSet<_> = names.iter().collect();
        prop_assert_eq!(names.len(), classes);
        prop_assert_eq!(unique.len(), classes);
        prop_assert_eq!(va.num_classes(), (0.2 * classes as f64 + 1e-9).floor() as usize);
    }

    #[test]
    fn adam_matches_reference_update(seed in any::<u64>(), lr in 1e-4f64..1e-1, steps in 1usize..6) {
        let mut params = EncoderParams::init(seed, &mlp_spec(3, &[], 2, Activation::None)).unwrap();
        let mut state = AdamState::new(&params);
        let flat = |p: &EncoderParams| -> Vec<f64> { p.tensors().iter().flat_map(|t| t.data().to_vec()).collect() };
        let mut w = flat(&params);
        let (mut m, mut v) = (vec![0.0; w.len()], vec![0.0; w.len()]);
        let mut r = seeded(seed ^ 11);
        for t in 1..=steps {
            let grads: Vec<Tensor> = params
                .tensors()
                .iter()
                .map(|p| Tensor::random_normal(p.rows(), p.cols(), 1.0, &mut r))
                .collect();
            let g: Vec<f64> = grads.iter().flat_map(|t| t.data().to_vec()).collect();
            adam_update(&mut params, &grads, &mut state, lr).unwrap();
            for i in 0..w.len() {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t as i32));
                let vh = v[i] / (1.0 - 0.999f64.powi(t as i32));
                w[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        for (a, b) in flat(&params).iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn sampled_episodes_are_disjoint_and_relabeled() {
    let ds = synth_gaussian(3, 12, 9, 3, 1.0, 0.2).unwrap();
    let mut r = seeded(8);
    for _ in 0..1000 {
        let ep = sample_episode(&ds, 4, 2, 3, &mut r).unwrap();
        let support: HashSet<_> = ep.support_ids.iter().collect();
        assert!(ep.query_ids.iter().all(|id| !support.contains(id)));
        assert_eq!(support.len() + ep.query_ids.len(), 4 * 5);
        let classes: HashSet<_> = ep.classes.iter().collect();
        assert_eq!(classes.len(), 4);
        for (local, &c) in ep.classes.iter().enumerate() {
            assert_eq!(ep.relabel(c), Some(local));
        }
        assert!(ep.query_labels.iter().all(|&y| y < 4));
    }
}

#[test]
fn class_selection_is_uniform() {
    let ds = synth_gaussian(1, 20, 4, 2, 1.0, 0.1).unwrap();
    let mut r = seeded(2024);
    let mut counts = [0usize; 20];
    let draws = 10_000;
    for _ in 0..draws {
        for &c in &sample_episode(&ds, 5, 1, 1, &mut r).unwrap().classes {
            counts[c] += 1;
        }
    }
    let p = 5.0 / 20.0;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (c, &n) in counts.iter().enumerate() {
        assert!((n as f64 - mean).abs() <= 3.0 * sigma, "class {c} drawn {n} times");
    }
}
