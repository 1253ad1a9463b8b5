//! Test-episode evaluation, confidence intervals and the comparison
//! pipelines built on top of it (λ₂ ablation, domain shift, head table).

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::autodiff::{softmax, Tape};
use crate::encoder::EncoderParams;
use crate::episodes::{sample_episode, Dataset, Episode};
use crate::error::{Error, Result};
use crate::heads::{argmax, head_distances, EpisodeEmbeddings, HeadKind};
use crate::parallel::Pool;
use crate::rng;
use crate::trainer::{fit, FitResult, TrainConfig};

/// Anything that maps an episode to per-query class posteriors.
pub trait EpisodeClassifier: Sync {
    /// Short name shown in reports.
    fn name(&self) -> String;

    /// Every setting that affects predictions, folded into the config
    /// fingerprint.
    fn describe(&self) -> String;

    /// `posteriors[j][n]` for query column `j` and episode class `n`.
    fn posteriors(&self, episode: &Episode) -> Result<Vec<Vec<f64>>>;
}

/// A trained encoder followed by one of the distance heads.
#[derive(Debug, Clone)]
pub struct EncoderClassifier<'a> {
    params: &'a EncoderParams,
    head: HeadKind,
    lambda1: f64,
    training: Option<String>,
}

impl<'a> EncoderClassifier<'a> {
    pub fn new(params: &'a EncoderParams, head: HeadKind, lambda1: f64) -> Self {
        Self {
            params,
            head,
            lambda1,
            training: None,
        }
    }

    /// Attaches the training configuration so it becomes part of the
    /// fingerprint.
    pub fn trained_with(mut self, config: &TrainConfig) -> Self {
        self.training = Some(config.describe());
        self
    }
}

impl EpisodeClassifier for EncoderClassifier<'_> {
    fn name(&self) -> String {
        self.head.to_string()
    }

    fn describe(&self) -> String {
        format!(
            "head={};lambda1={:e};train=[{}]",
            self.head,
            self.lambda1,
            self.training.as_deref().unwrap_or("")
        )
    }

    fn posteriors(&self, episode: &Episode) -> Result<Vec<Vec<f64>>> {
        // Nothing is differentiated here, so embed without a tape.
        let es = self.params.forward(&episode.support)?;
        let eq = self.params.forward(&episode.query)?;
        let mut tape = Tape::new();
        let support = (0..episode.n)
            .map(|c| tape.constant(es.columns(c * episode.k, (c + 1) * episode.k)))
            .collect();
        let query = tape.constant(eq);
        let emb = EpisodeEmbeddings {
            support,
            query,
            labels: episode.query_labels.clone(),
        };
        let (dists, _) = head_distances(&mut tape, self.head, &emb, self.lambda1)?;
        Ok(dists
            .iter()
            .map(|row| {
                let neg: Vec<f64> = row.iter().map(|&d| -tape.value(d).item()).collect();
                softmax(&neg)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub n: usize,
    pub k: usize,
    pub q: usize,
    /// Number of test episodes.
    pub episodes: usize,
    pub seed: u64,
    pub threads: usize,
}

impl EvalSpec {
    /// Test-time settings matching a training configuration, with episodes
    /// drawn from the `test` stream of its seed.
    pub fn for_config(config: &TrainConfig, episodes: usize) -> Self {
        Self {
            n: config.n,
            k: config.k,
            q: config.q,
            episodes,
            seed: rng::derive_seed(config.seed, "test"),
            threads: config.threads,
        }
    }

    fn describe(&self) -> String {
        format!(
            "n={};k={};q={};episodes={};seed={}",
            self.n, self.k, self.q, self.episodes, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub head: String,
    pub train_domain: String,
    pub test_domain: String,
    pub n: usize,
    pub k: usize,
    pub q: usize,
    pub episodes: usize,
    /// Mean accuracy in percent.
    pub mean: f64,
    /// 95% confidence half-width in percent.
    pub ci95: f64,
    pub per_episode: Vec<f64>,
    /// Hash of every setting and seed that produced the report.
    pub config_fingerprint: String,
    /// Hash of the sampled test episodes only.
    pub episode_fingerprint: String,
}

impl EvalReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("reports always serialize")
    }
}

/// Mean and `1.96·s/√E` half-width, `s` the sample standard deviation.
pub fn mean_ci95(xs: &[f64]) -> Result<(f64, f64)> {
    let e = xs.len();
    if e < 2 {
        return Err(Error::CiUndefined(e));
    }
    let mean = xs.iter().sum::<f64>() / e as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (e - 1) as f64;
    Ok((mean, 1.96 * var.sqrt() / (e as f64).sqrt()))
}

/// Percentage of queries whose posterior argmax is the true label.
pub fn episode_accuracy(posteriors: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if posteriors.len() != labels.len() || labels.is_empty() {
        return Err(Error::Contract(format!(
            "{} posterior rows for {} labels",
            posteriors.len(),
            labels.len()
        )));
    }
    let hits = posteriors
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// The test episodes `evaluate` would draw for `spec`.
pub fn sample_test_episodes(test: &Dataset, spec: &EvalSpec) -> Result<Vec<Episode>> {
    (0..spec.episodes)
        .map(|i| {
            let mut r = rng::seeded(rng::indexed_seed(spec.seed, "episode", i as u64));
            sample_episode(test, spec.n, spec.k, spec.q, &mut r)
        })
        .collect()
}

fn episode_fingerprint(test: &Dataset, episodes: &[Episode]) -> String {
    let mut text = format!("{}|{}|", test.name(), test.split());
    for ep in episodes {
        let _ = write!(text, "{:?}{:?}{:?};", ep.classes, ep.support_ids, ep.query_ids);
    }
    hex_digest(text.as_bytes())
}

/// Accuracy over `spec.episodes` sampled test episodes.
///
/// Episode `i` is drawn from its own seed, so results do not depend on the
/// thread count. When `train` is given and shares the dataset name with
/// `test`, the two must have no class in common.
pub fn evaluate(
    classifier: &dyn EpisodeClassifier,
    test: &Dataset,
    train: Option<&Dataset>,
    spec: &EvalSpec,
) -> Result<EvalReport> {
    if spec.episodes < 2 {
        return Err(Error::CiUndefined(spec.episodes));
    }
    if let Some(train) = train {
        if train.name() == test.name() && !train.classes_disjoint(test) {
            return Err(Error::Contract(format!(
                "test classes of {} overlap the training classes",
                test.name()
            )));
        }
    }
    let episodes = sample_test_episodes(test, spec)?;
    let accs = Pool::new(spec.threads)
        .map(&episodes, |_, ep| {
            episode_accuracy(&classifier.posteriors(ep)?, &ep.query_labels)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (mean, ci95) = mean_ci95(&accs)?;
    let train_domain = train.map_or("unknown".to_string(), |d| d.name().to_string());
    let config_fingerprint = hex_digest(
        format!(
            "{}|{}|{}|{}",
            classifier.describe(),
            spec.describe(),
            train_domain,
            test.name()
        )
        .as_bytes(),
    );
    Ok(EvalReport {
        head: classifier.name(),
        train_domain,
        test_domain: test.name().to_string(),
        n: spec.n,
        k: spec.k,
        q: spec.q,
        episodes: spec.episodes,
        mean,
        ci95,
        per_episode: accs,
        config_fingerprint,
        episode_fingerprint: episode_fingerprint(test, &episodes),
    })
}

/// Fixed-width table of reports, one row each.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<20} {:<20} {:>3} {:>3} {:>3} {:>6} {:>16}",
        "head", "train", "test", "N", "K", "Q", "E", "accuracy (%)"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<12} {:<20} {:<20} {:>3} {:>3} {:>3} {:>6} {:>8.2} ± {:<5.2}",
            r.head, r.train_domain, r.test_domain, r.n, r.k, r.q, r.episodes, r.mean, r.ci95
        );
    }
    out
}

/// Trains with `config` and evaluates the selected checkpoint.
pub fn train_and_evaluate(
    train: &Dataset,
    val: Option<&Dataset>,
    test: &Dataset,
    config: &TrainConfig,
    test_episodes: usize,
) -> Result<(FitResult, EvalReport)> {
    let fitted = fit(train, val, config)?;
    let clf = EncoderClassifier::new(&fitted.best, config.head, config.hyper.lambda1).trained_with(config);
    let report = evaluate(&clf, test, Some(train), &EvalSpec::for_config(config, test_episodes))?;
    Ok((fitted, report))
}

/// Per-episode accuracy difference of one run against a baseline run on the
/// same test episodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedDelta {
    pub lambda2: f64,
    /// `accuracy − baseline accuracy`, per episode, in points.
    pub per_episode: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ablation {
    pub lambdas: Vec<f64>,
    pub reports: Vec<EvalReport>,
    /// Deltas of every later λ₂ against the first one.
    pub deltas: Vec<PairedDelta>,
}

/// Paired difference `b − a`; both reports must cover the same episodes.
pub fn paired_delta(a: &EvalReport, b: &EvalReport) -> Result<(Vec<f64>, f64, f64)> {
    if a.episode_fingerprint != b.episode_fingerprint {
        return Err(Error::Contract(
            "paired reports were evaluated on different test episodes".into(),
        ));
    }
    let d: Vec<f64> = b.per_episode.iter().zip(&a.per_episode).map(|(y, x)| y - x).collect();
    let (mean, ci) = mean_ci95(&d)?;
    Ok((d, mean, ci))
}

/// One model per λ₂, all other settings and seeds shared, all evaluated on
/// the same test episodes.
pub fn ablate_lambda2(
    train: &Dataset,
    val: Option<&Dataset>,
    test: &Dataset,
    config: &TrainConfig,
    lambdas: &[f64],
    test_episodes: usize,
) -> Result<Ablation> {
    if lambdas.is_empty() {
        return Err(Error::Config("no lambda2 values to compare".into()));
    }
    let mut reports = Vec::with_capacity(lambdas.len());
    for &l2 in lambdas {
        let mut cfg = config.clone();
        cfg.hyper.lambda2 = l2;
        reports.push(train_and_evaluate(train, val, test, &cfg, test_episodes)?.1);
    }
    let deltas = lambdas
        .iter()
        .zip(&reports)
        .skip(1)
        .map(|(&l2, r)| {
            let (per_episode, mean, ci95) = paired_delta(&reports[0], r)?;
            Ok(PairedDelta {
                lambda2: l2,
                per_episode,
                mean,
                ci95,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ablation {
        lambdas: lambdas.to_vec(),
        reports,
        deltas,
    })
}

/// Trains on domain A (selecting on A's validation classes) and evaluates on
/// domain B's test classes.
pub fn domain_shift(
    a_train: &Dataset,
    a_val: Option<&Dataset>,
    b_test: &Dataset,
    config: &TrainConfig,
    test_episodes: usize,
) -> Result<EvalReport> {
    if a_train.dim() != b_test.dim() {
        return Err(Error::Shape(format!(
            "domain {} has {} features, domain {} has {}",
            a_train.name(),
            a_train.dim(),
            b_test.name(),
            b_test.dim()
        )));
    }
    Ok(train_and_evaluate(a_train, a_val, b_test, config, test_episodes)?.1)
}

/// One encoder trained per head, all evaluated on the same test episodes.
pub fn compare_heads(
    train: &Dataset,
    val: Option<&Dataset>,
    test: &Dataset,
    config: &TrainConfig,
    heads: &[HeadKind],
    test_episodes: usize,
) -> Result<Vec<EvalReport>> {
    heads
        .iter()
        .map(|&head| {
            let cfg = TrainConfig {
                head,
                ..config.clone()
            };
            Ok(train_and_evaluate(train, val, test, &cfg, test_episodes)?.1)
        })
        .collect()
}
