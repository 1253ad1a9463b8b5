//! Self-checks run by the `check` command: closed-form distances against an
//! iterative ridge minimizer, and tape gradients against finite differences.

use crate::autodiff::Tape;
use crate::encoder::{mlp_spec, Activation, EncoderParams};
use crate::episodes::{sample_episode, synth_gaussian};
use crate::error::Result;
use crate::heads::{build_subspace, regression_distance, HeadKind, Hyper};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::trainer::{episode_forward, episode_gradient};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst error seen and the tolerance it was held to.
    pub worst: f64,
    pub tolerance: f64,
}

/// Residual norm `‖e − S·w*‖` where `w*` minimizes `‖e − S·w‖² + λ‖w‖²`,
/// found by gradient descent rather than a factorization.
pub fn iterative_ridge_distance(s: &Tensor, e: &Tensor, lambda: f64) -> Result<f64> {
    let st = s.transpose();
    let gram = st.matmul(s)?;
    let ste = st.matmul(e)?;
    // ‖SᵀS‖_F + λ bounds the largest Hessian eigenvalue.
    let step = 1.0 / (gram.frobenius_norm_sq().sqrt() + lambda);
    let mut w = Tensor::zeros(s.cols(), 1);
    for _ in 0..200_000 {
        // ∇ = SᵀS·w − Sᵀe + λw
        let mut grad = gram.matmul(&w)?.sub(&ste)?;
        grad.add_assign(&w.scale(lambda))?;
        let g = grad.frobenius_norm_sq().sqrt();
        if g <= 1e-15 * (1.0 + ste.frobenius_norm_sq().sqrt()) {
            break;
        }
        w = w.sub(&grad.scale(step))?;
    }
    e.sub(&s.matmul(&w)?)?.l2_norm()
}

/// Closed-form distance of `e` to the subspace of `s`.
pub fn closed_form_distance(s: &Tensor, e: &Tensor, lambda: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let sv = tape.constant(s.clone());
    let ev = tape.constant(e.clone());
    let sub = build_subspace(&mut tape, 0, sv, lambda)?;
    let d = regression_distance(&mut tape, ev, &sub)?;
    Ok(tape.value(d).item())
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::random_normal(rows, cols, 1.0, rng)
}

/// Random ridge and least-squares instances, `M = 16`, `K ∈ {1, 2, 5}`.
pub fn check_ridge_oracle(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut r = rng::seeded(rng::indexed_seed(seed, "ridge", i as u64));
        let k = [1, 2, 5][i % 3];
        let lambda = if i % 2 == 0 { 0.0 } else { 1e-3 };
        let s = normal_matrix(16, k, &mut r);
        let e = normal_matrix(16, 1, &mut r);
        let want = iterative_ridge_distance(&s, &e, lambda)?;
        let got = closed_form_distance(&s, &e, lambda)?;
        worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
    }
    Ok(CheckOutcome {
        name: "ridge oracle".into(),
        passed: worst < 1e-6,
        worst,
        tolerance: 1e-6,
    })
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps coordinates whose
/// gradient is essentially zero from dominating.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between tape gradients and central differences
/// (step `h`) of the full episode loss, over every encoder coordinate.
pub fn gradient_check(seed: u64, h: f64) -> Result<f64> {
    let ds = synth_gaussian(seed, 4, 6, 6, 1.0, 0.5)?;
    let ep = sample_episode(&ds, 2, 2, 3, &mut rng::stream(seed, "episode"))?;
    let params = EncoderParams::init(seed, &mlp_spec(6, &[8], 5, Activation::Tanh))?;
    let hyper = Hyper {
        lambda1: 1e-3,
        lambda2: 0.1,
    };
    let loss_at = |p: &EncoderParams| -> Result<f64> {
        let mut tape = Tape::new();
        let (out, _) = episode_forward(&mut tape, p, &ep, HeadKind::Regression, hyper)?;
        Ok(tape.value(out.loss).item())
    };
    let analytic = episode_gradient(&params, &ep, HeadKind::Regression, hyper)?.grads;

    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[t].data_mut()[j] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].data_mut()[j] -= h;
            let numeric = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
            worst = worst.max(relative_error(grad.data()[j], numeric, 1e-6));
        }
    }
    Ok(worst)
}

pub fn check_gradients(seeds: usize, seed: u64) -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    for i in 0..seeds {
        worst = worst.max(gradient_check(rng::indexed_seed(seed, "gradcheck", i as u64), 1e-4)?);
    }
    Ok(CheckOutcome {
        name: "gradient check".into(),
        passed: worst < 1e-4,
        worst,
        tolerance: 1e-4,
    })
}

/// Every self-check, in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![check_ridge_oracle(200, seed)?, check_gradients(20, seed)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iterative_minimizer_solves_simple_cases() {
        // e already in the span: distance 0.
        let s = Tensor::from_columns(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]).unwrap();
        let e = Tensor::vector(&[2.0, -1.0, 0.0]);
        assert!(iterative_ridge_distance(&s, &e, 0.0).unwrap() < 1e-12);
        let e = Tensor::vector(&[0.0, 0.0, 3.0]);
        assert!((iterative_ridge_distance(&s, &e, 0.0).unwrap() - 3.0).abs() < 1e-12);
        // One-column ridge: w = sᵀe / (sᵀs + λ) = 1 / 2 for s = e = [1].
        let s = Tensor::vector(&[1.0]);
        let e = Tensor::vector(&[1.0]);
        assert!((iterative_ridge_distance(&s, &e, 1.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn checks_pass() {
        let ridge = check_ridge_oracle(30, 5).unwrap();
        assert!(ridge.passed, "{ridge:?}");
        let grads = check_gradients(2, 5).unwrap();
        assert!(grads.passed, "{grads:?}");
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert_eq!(relative_error(2.0, 1.0, 1e-6), 0.5);
        assert_eq!(relative_error(0.0, 1e-9, 1e-6), 1e-3);
    }
}
