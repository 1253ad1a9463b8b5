//! Distance heads: embedded support and query points in, class distances,
//! posteriors and episode losses out.
//!
//! The regression head represents class `n` by the span of its embedded
//! support columns `S_n` (`M × K`) and measures a query `e` by the residual of
//! its ridge projection onto that span:
//!
//! ```text
//! P_n = S_n (S_nᵀ S_n + λ₁ I)⁻¹ S_nᵀ        d(e, S_n) = ‖e − P_n e‖₂
//! ```
//!
//! Posteriors are `softmax(−d)`. The prototype and cosine heads are the usual
//! baselines and share the same loss.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadKind {
    /// Regression-error distance to per-class subspaces.
    Regression,
    /// Euclidean distance to the class mean.
    Proto,
    /// Negated mean cosine similarity to the class support.
    Cosine,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Regression, HeadKind::Proto, HeadKind::Cosine];
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Regression => "regression",
            HeadKind::Proto => "proto",
            HeadKind::Cosine => "cosine",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(HeadKind::Regression),
            "proto" => Ok(HeadKind::Proto),
            "cosine" => Ok(HeadKind::Cosine),
            other => Err(Error::Config(format!(
                "unknown head `{other}` (expected regression, proto or cosine)"
            ))),
        }
    }
}

/// Regularization weights of the regression head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    /// Ridge term added to `SᵀS` before the solve.
    pub lambda1: f64,
    /// Weight of the pairwise orthogonalization penalty.
    pub lambda2: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lambda1: 1e-3,
            lambda2: 0.0,
        }
    }
}

/// A class's embedded support matrix and its projection operator.
#[derive(Debug, Clone, Copy)]
pub struct ClassSubspace {
    pub class: usize,
    /// `M × K`
    pub support: Var,
    /// `M × M`
    pub projection: Var,
}

/// Builds `P = S (SᵀS + λ₁I)⁻¹ Sᵀ` on the tape.
///
/// Fails with [`Error::Conditioning`] when `SᵀS + λ₁I` is not positive
/// definite, which happens for `λ₁ = 0` and rank-deficient `S`.
pub fn build_subspace(tape: &mut Tape, class: usize, support: Var, lambda1: f64) -> Result<ClassSubspace> {
    let (m, k) = support.shape();
    if m < k {
        return Err(Error::Contract(format!(
            "subspace of {k} vectors in {m} dimensions needs M >= K"
        )));
    }
    if !(lambda1 >= 0.0) {
        return Err(Error::Contract(format!("lambda1 must be >= 0, got {lambda1}")));
    }
    let st = tape.transpose(support);
    let gram = tape.matmul(st, support)?;
    let gram = if lambda1 > 0.0 {
        let ridge = tape.constant(Tensor::identity(k).scale(lambda1));
        tape.add(gram, ridge)?
    } else {
        gram
    };
    let coef = tape.solve_spd(gram, st)?;
    let projection = tape.matmul(support, coef)?;
    Ok(ClassSubspace {
        class,
        support,
        projection,
    })
}

/// `‖e − P e‖₂` for a single `M × 1` query.
pub fn regression_distance(tape: &mut Tape, e: Var, sub: &ClassSubspace) -> Result<Var> {
    if e.cols() != 1 {
        return Err(Error::Shape(format!(
            "query must be a column vector, got {}x{}",
            e.rows(),
            e.cols()
        )));
    }
    let pe = tape.matmul(sub.projection, e)?;
    let r = tape.sub(e, pe)?;
    tape.l2_norm(r)
}

/// `softmax(−d)` over the query's distances to each subspace.
pub fn posterior(tape: &mut Tape, query: Var, subs: &[ClassSubspace]) -> Result<Var> {
    if subs.len() < 2 {
        return Err(Error::Contract(format!(
            "posterior needs at least 2 classes, got {}",
            subs.len()
        )));
    }
    let dists = subs
        .iter()
        .map(|s| regression_distance(tape, query, s))
        .collect::<Result<Vec<_>>>()?;
    posterior_from_distances(tape, &dists)
}

/// `softmax(−d)` for `1 × 1` distances `d`.
pub fn posterior_from_distances(tape: &mut Tape, dists: &[Var]) -> Result<Var> {
    let d = tape.vstack(dists)?;
    let neg = tape.neg(d);
    tape.softmax(neg)
}

/// `Σ_{i≠j} ‖SᵢᵀSⱼ‖²_F / (‖Sᵢ‖²_F ‖Sⱼ‖²_F)` over ordered pairs.
pub fn ortho_penalty(tape: &mut Tape, subs: &[ClassSubspace]) -> Result<Var> {
    if subs.len() < 2 {
        return Err(Error::Contract(format!(
            "orthogonalization penalty needs at least 2 classes, got {}",
            subs.len()
        )));
    }
    let mut norms = Vec::with_capacity(subs.len());
    let mut transposed = Vec::with_capacity(subs.len());
    for s in subs {
        let n = tape.frobenius_norm_sq(s.support);
        if tape.value(n).item() == 0.0 {
            return Err(Error::DegenerateSubspace { class: s.class });
        }
        norms.push(n);
        transposed.push(tape.transpose(s.support));
    }
    let mut terms = Vec::with_capacity(subs.len() * (subs.len() - 1));
    for i in 0..subs.len() {
        for j in 0..subs.len() {
            if i == j {
                continue;
            }
            let cross = tape.matmul(transposed[i], subs[j].support)?;
            let num = tape.frobenius_norm_sq(cross);
            let t = tape.div_scalar(num, norms[i])?;
            terms.push(tape.div_scalar(t, norms[j])?);
        }
    }
    tape.add_all(&terms)
}

fn mean_column_weights(tape: &mut Tape, k: usize) -> Var {
    tape.constant(Tensor::filled(k, 1, 1.0 / k as f64))
}

/// `‖e − mean(columns)‖₂`.
pub fn proto_distance(tape: &mut Tape, e: Var, support: Var) -> Result<Var> {
    let w = mean_column_weights(tape, support.cols());
    let proto = tape.matmul(support, w)?;
    let r = tape.sub(e, proto)?;
    tape.l2_norm(r)
}

/// Support columns scaled to unit length, stacked as rows (`K × M`).
fn unit_rows(tape: &mut Tape, support: Var) -> Result<Var> {
    let rows = (0..support.cols())
        .map(|j| {
            let c = tape.column(support, j)?;
            let n = tape.l2_norm(c)?;
            let u = tape.div_scalar(c, n)?;
            Ok(tape.transpose(u))
        })
        .collect::<Result<Vec<_>>>()?;
    tape.vstack(&rows)
}

fn cosine_with_units(tape: &mut Tape, e: Var, units: Var) -> Result<Var> {
    let w = tape.constant(Tensor::filled(1, units.rows(), 1.0 / units.rows() as f64));
    let dots = tape.matmul(units, e)?;
    let mean = tape.matmul(w, dots)?;
    let n = tape.l2_norm(e)?;
    tape.div_scalar(mean, n)
}

/// Mean cosine similarity between `e` and the support columns, in `[−1, 1]`.
pub fn cosine_score(tape: &mut Tape, e: Var, support: Var) -> Result<Var> {
    let units = unit_rows(tape, support)?;
    cosine_with_units(tape, e, units)
}

/// Embedded support (one `M × K` value per class) and queries of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeEmbeddings {
    pub support: Vec<Var>,
    /// `M × (N·Q)`
    pub query: Var,
    /// Class index in `0..N` of every query column.
    pub labels: Vec<usize>,
}

/// Loss of one episode plus the distances it was computed from.
#[derive(Debug, Clone)]
pub struct EpisodeLoss {
    /// Base loss plus the weighted penalty.
    pub loss: Var,
    /// Mean negative log-posterior of the true class.
    pub base: Var,
    pub penalty: Option<Var>,
    /// `distances[j][n]`: query `j` to class `n`.
    pub distances: Vec<Vec<f64>>,
}

impl EpisodeLoss {
    /// Fraction of queries whose nearest class is the true one.
    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        let hits = self
            .distances
            .iter()
            .zip(labels)
            .filter(|(d, &y)| argmin(d) == y)
            .count();
        hits as f64 / labels.len().max(1) as f64
    }
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `distances[j][n]` as tape values, for every query `j` and class `n`.
pub fn head_distances(
    tape: &mut Tape,
    head: HeadKind,
    emb: &EpisodeEmbeddings,
    lambda1: f64,
) -> Result<(Vec<Vec<Var>>, Vec<ClassSubspace>)> {
    let n_classes = emb.support.len();
    let n_queries = emb.query.cols();
    let mut per_class: Vec<Vec<Var>> = Vec::with_capacity(n_classes);
    let mut subs = Vec::new();
    for (class, &support) in emb.support.iter().enumerate() {
        if support.rows() != emb.query.rows() {
            return Err(Error::Shape(format!(
                "support of class {class} has {} rows, queries have {}",
                support.rows(),
                emb.query.rows()
            )));
        }
        let column_dists = match head {
            HeadKind::Regression => {
                // P is built once per class and applied to all queries at once.
                let sub = build_subspace(tape, class, support, lambda1)?;
                let pe = tape.matmul(sub.projection, emb.query)?;
                let resid = tape.sub(emb.query, pe)?;
                subs.push(sub);
                (0..n_queries)
                    .map(|j| {
                        let c = tape.column(resid, j)?;
                        tape.l2_norm(c)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            HeadKind::Proto => {
                let w = mean_column_weights(tape, support.cols());
                let proto = tape.matmul(support, w)?;
                let neg = tape.neg(proto);
                let resid = tape.add_column(emb.query, neg)?;
                (0..n_queries)
                    .map(|j| {
                        let c = tape.column(resid, j)?;
                        tape.l2_norm(c)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            HeadKind::Cosine => {
                let units = unit_rows(tape, support)?;
                (0..n_queries)
                    .map(|j| {
                        let e = tape.column(emb.query, j)?;
                        let s = cosine_with_units(tape, e, units)?;
                        Ok(tape.neg(s))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        per_class.push(column_dists);
    }
    let by_query = (0..n_queries)
        .map(|j| per_class.iter().map(|c| c[j]).collect())
        .collect();
    Ok((by_query, subs))
}

/// Mean over queries of `−log p(true class)`, plus `λ₂ · penalty` for the
/// regression head.
pub fn episode_loss(tape: &mut Tape, head: HeadKind, emb: &EpisodeEmbeddings, hyper: Hyper) -> Result<EpisodeLoss> {
    let n_classes = emb.support.len();
    if n_classes < 2 {
        return Err(Error::Contract(format!(
            "an episode needs at least 2 classes, got {n_classes}"
        )));
    }
    if emb.labels.len() != emb.query.cols() {
        return Err(Error::Contract(format!(
            "{} labels for {} queries",
            emb.labels.len(),
            emb.query.cols()
        )));
    }
    if let Some(bad) = emb.labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Contract(format!(
            "query label {bad} outside 0..{n_classes}"
        )));
    }
    let (dists, subs) = head_distances(tape, head, emb, hyper.lambda1)?;

    let mut terms = Vec::with_capacity(dists.len());
    for (row, &y) in dists.iter().zip(&emb.labels) {
        let d = tape.vstack(row)?;
        let neg = tape.neg(d);
        let lse = tape.logsumexp(neg)?;
        terms.push(tape.add(row[y], lse)?);
    }
    let total = tape.add_all(&terms)?;
    let base = tape.scale(total, 1.0 / terms.len() as f64);

    let penalty = if head == HeadKind::Regression && hyper.lambda2 != 0.0 {
        Some(ortho_penalty(tape, &subs)?)
    } else {
        None
    };
    let loss = match penalty {
        Some(p) => {
            let weighted = tape.scale(p, hyper.lambda2);
            tape.add(base, weighted)?
        }
        None => base,
    };
    let distances = dists
        .iter()
        .map(|row| row.iter().map(|&v| tape.value(v).item()).collect())
        .collect();
    Ok(EpisodeLoss {
        loss,
        base,
        penalty,
        distances,
    })
}
