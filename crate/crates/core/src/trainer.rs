//! Episodic training: per-episode loss, summed batch gradients, Adam updates
//! and validation-based checkpoint selection.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::autodiff::Tape;
use crate::encoder::{mlp_spec, Activation, BoundEncoder, EncoderParams, LayerSpec};
use crate::episodes::{sample_episode, Dataset, Episode};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EncoderClassifier, EvalSpec};
use crate::heads::{episode_loss, EpisodeEmbeddings, EpisodeLoss, HeadKind, Hyper};
use crate::parallel::Pool;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    /// Plain `φ ← φ − α∇φ`.
    Sgd,
}

/// Shape of the embedding MLP; the input width comes from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            embed_dim: 16,
            activation: Activation::Relu,
        }
    }
}

impl EncoderSpec {
    pub fn layers(&self, input_dim: usize) -> Vec<LayerSpec> {
        mlp_spec(input_dim, &self.hidden, self.embed_dim, self.activation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n: usize,
    pub k: usize,
    pub q: usize,
    /// Episodes per parameter update.
    pub batch: usize,
    /// Total training episodes.
    pub episodes: usize,
    pub lr: f64,
    pub hyper: Hyper,
    pub head: HeadKind,
    pub optimizer: OptimizerKind,
    pub encoder: EncoderSpec,
    /// Validate every this many episodes (and once at the end).
    pub val_interval: usize,
    pub val_episodes: usize,
    pub seed: u64,
    /// 1 runs everything on the calling thread.
    pub threads: usize,
    /// Adds elapsed seconds to history records. Off by default so logs are
    /// reproducible byte for byte.
    pub record_wall_time: bool,
}

/// Orthogonalization weight used for a given shot count: 10⁻³ for one shot,
/// 10⁻² otherwise.
pub fn default_lambda2(k: usize) -> f64 {
    if k == 1 {
        1e-3
    } else {
        1e-2
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 5,
            k: 5,
            q: 16,
            batch: 1,
            episodes: 2000,
            lr: 1e-3,
            hyper: Hyper {
                lambda1: 1e-3,
                lambda2: default_lambda2(5),
            },
            head: HeadKind::Regression,
            optimizer: OptimizerKind::Adam,
            encoder: EncoderSpec::default(),
            val_interval: 250,
            val_episodes: 100,
            seed: 0,
            threads: 1,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        if self.k == 0 || self.q == 0 {
            return bad(format!("k and q must be positive, got k={} q={}", self.k, self.q));
        }
        if self.batch == 0 || self.episodes == 0 || self.val_episodes == 0 || self.val_interval == 0 {
            return bad("batch, episodes, val_interval and val_episodes must be at least 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.hyper.lambda1 >= 0.0) || !(self.hyper.lambda2 >= 0.0) {
            return bad(format!(
                "lambda1 and lambda2 must be >= 0, got {} and {}",
                self.hyper.lambda1, self.hyper.lambda2
            ));
        }
        if self.encoder.embed_dim < self.k {
            return bad(format!(
                "embedding dimension {} is smaller than the shot count {}",
                self.encoder.embed_dim, self.k
            ));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Canonical `key=value` listing of every field that affects results.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "n={};k={};q={};batch={};episodes={};lr={:e};lambda1={:e};lambda2={:e};head={};optimizer={:?};hidden={:?};embed_dim={};activation={};val_interval={};val_episodes={};seed={}",
            self.n,
            self.k,
            self.q,
            self.batch,
            self.episodes,
            self.lr,
            self.hyper.lambda1,
            self.hyper.lambda2,
            self.head,
            self.optimizer,
            self.encoder.hidden,
            self.encoder.embed_dim,
            self.encoder.activation,
            self.val_interval,
            self.val_episodes,
            self.seed
        );
        s
    }

    /// Encoder parameters before any training, drawn from the `init` stream.
    pub fn initial_params(&self, input_dim: usize) -> Result<EncoderParams> {
        EncoderParams::init_with(
            &mut rng::stream(self.seed, "init"),
            &self.encoder.layers(input_dim),
        )
    }
}

/// First and second moment estimates of every parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        let zeros = |t: &&Tensor| Tensor::zeros(t.rows(), t.cols());
        let tensors = params.tensors();
        Self {
            m: tensors.iter().map(zeros).collect(),
            v: tensors.iter().map(zeros).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_update(params: &mut EncoderParams, grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    let mut tensors = params.tensors_mut();
    if grads.len() != tensors.len() || state.m.len() != tensors.len() {
        return Err(Error::Shape(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            tensors.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (i, p) in tensors.iter_mut().enumerate() {
        let g = &grads[i];
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!("gradient {i} does not match its parameter")));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.data()[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

pub fn sgd_update(params: &mut EncoderParams, grads: &[Tensor], lr: f64) -> Result<()> {
    let mut tensors = params.tensors_mut();
    if grads.len() != tensors.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            tensors.len()
        )));
    }
    for (p, g) in tensors.iter_mut().zip(grads) {
        for (w, gj) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * gj;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &EncoderParams) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params)),
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    pub fn apply(&mut self, params: &mut EncoderParams, grads: &[Tensor], lr: f64) -> Result<()> {
        match self {
            Optimizer::Adam(state) => adam_update(params, grads, state, lr),
            Optimizer::Sgd => sgd_update(params, grads, lr),
        }
    }
}

/// Records one episode's forward pass on `tape`.
pub fn episode_forward(
    tape: &mut Tape,
    params: &EncoderParams,
    episode: &Episode,
    head: HeadKind,
    hyper: Hyper,
) -> Result<(EpisodeLoss, BoundEncoder)> {
    let enc = params.bind(tape);
    let xs = tape.constant(episode.support.clone());
    let xq = tape.constant(episode.query.clone());
    let es = enc.embed(tape, xs)?;
    let query = enc.embed(tape, xq)?;
    let support = (0..episode.n)
        .map(|c| tape.columns(es, c * episode.k, (c + 1) * episode.k))
        .collect::<Result<Vec<_>>>()?;
    let emb = EpisodeEmbeddings {
        support,
        query,
        labels: episode.query_labels.clone(),
    };
    let loss = episode_loss(tape, head, &emb, hyper)?;
    Ok((loss, enc))
}

/// Loss value and parameter gradients of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeGrad {
    pub loss: f64,
    pub accuracy: f64,
    pub grads: Vec<Tensor>,
}

pub fn episode_gradient(params: &EncoderParams, episode: &Episode, head: HeadKind, hyper: Hyper) -> Result<EpisodeGrad> {
    let mut tape = Tape::new();
    let (out, enc) = episode_forward(&mut tape, params, episode, head, hyper)?;
    let loss = tape.value(out.loss).item();
    let accuracy = out.accuracy(&episode.query_labels);
    if !loss.is_finite() {
        return Err(Error::Divergence { episode: 0 });
    }
    let grads = tape.backward(out.loss)?;
    Ok(EpisodeGrad {
        loss,
        accuracy,
        grads: enc.gradients(&grads),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Mean episode loss over the batch.
    pub loss: f64,
    /// Mean query accuracy over the batch, in `[0, 1]`.
    pub accuracy: f64,
}

/// One update on the summed loss of `batch`.
///
/// A non-finite loss fails with [`Error::Divergence`] carrying the index of
/// the offending episode within `batch`.
pub fn train_step(
    params: &mut EncoderParams,
    batch: &[Episode],
    config: &TrainConfig,
    optimizer: &mut Optimizer,
) -> Result<StepMetrics> {
    train_step_in(&Pool::new(config.threads), params, batch, config, optimizer)
}

fn train_step_in(
    pool: &Pool,
    params: &mut EncoderParams,
    batch: &[Episode],
    config: &TrainConfig,
    optimizer: &mut Optimizer,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    for (i, ep) in batch.iter().enumerate() {
        if (ep.n, ep.k, ep.q) != (config.n, config.k, config.q) {
            return Err(Error::Contract(format!(
                "episode {i} is {}-way {}-shot {}-query, config expects {}/{}/{}",
                ep.n, ep.k, ep.q, config.n, config.k, config.q
            )));
        }
    }
    let shared: &EncoderParams = params;
    let results = pool.map(batch, |_, ep| episode_gradient(shared, ep, config.head, config.hyper));

    let mut total: Option<Vec<Tensor>> = None;
    let (mut loss, mut acc) = (0.0, 0.0);
    // Summed in episode order so the result does not depend on scheduling.
    for (i, r) in results.into_iter().enumerate() {
        let r = r.map_err(|e| match e {
            Error::Divergence { .. } => Error::Divergence { episode: i },
            other => other,
        })?;
        loss += r.loss;
        acc += r.accuracy;
        match &mut total {
            None => total = Some(r.grads),
            Some(t) => {
                for (a, g) in t.iter_mut().zip(&r.grads) {
                    a.add_assign(g)?;
                }
            }
        }
    }
    let grads = total.expect("batch is non-empty");
    optimizer.apply(params, &grads, config.lr)?;
    let b = batch.len() as f64;
    Ok(StepMetrics {
        loss: loss / b,
        accuracy: acc / b,
    })
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRecord {
    /// Number of training episodes consumed so far.
    pub episode: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl HistoryRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("history records always serialize")
    }
}

/// Renders a history as newline-terminated JSON objects.
pub fn history_jsonl(history: &[HistoryRecord]) -> String {
    let mut out = String::new();
    for r in history {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters with the highest validation accuracy (earliest on ties).
    pub best: EncoderParams,
    pub best_episode: usize,
    /// Validation accuracy of `best` in percent; `None` without a validation set.
    pub best_val_acc: Option<f64>,
    pub last: EncoderParams,
    pub history: Vec<HistoryRecord>,
}

/// Runs the configured number of training episodes from a fresh encoder.
pub fn fit(train: &Dataset, val: Option<&Dataset>, config: &TrainConfig) -> Result<FitResult> {
    config.validate()?;
    let params = config.initial_params(train.dim())?;
    fit_from(params, train, val, config)
}

/// Like [`fit`] but starting from the given parameters.
pub fn fit_from(mut params: EncoderParams, train: &Dataset, val: Option<&Dataset>, config: &TrainConfig) -> Result<FitResult> {
    config.validate()?;
    if params.input_dim() != train.dim() {
        return Err(Error::Shape(format!(
            "encoder takes {} features, training data has {}",
            params.input_dim(),
            train.dim()
        )));
    }
    let pool = Pool::new(config.threads);
    let mut optimizer = Optimizer::new(config.optimizer, &params);
    let mut sampler = rng::stream(config.seed, "sample");
    let val_spec = EvalSpec {
        n: config.n,
        k: config.k,
        q: config.q,
        episodes: config.val_episodes,
        seed: rng::derive_seed(config.seed, "val"),
        threads: config.threads,
    };
    let started = Instant::now();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, EncoderParams)> = None;
    let mut done = 0;
    let mut next_val = config.val_interval;
    while done < config.episodes {
        let size = config.batch.min(config.episodes - done);
        let batch = (0..size)
            .map(|_| sample_episode(train, config.n, config.k, config.q, &mut sampler))
            .collect::<Result<Vec<_>>>()?;
        let metrics = train_step_in(&pool, &mut params, &batch, config, &mut optimizer).map_err(|e| match e {
            Error::Divergence { episode } => Error::Divergence {
                episode: done + episode,
            },
            other => other,
        })?;
        done += size;

        let mut val_acc = None;
        if let Some(val) = val {
            if done >= next_val || done == config.episodes {
                while next_val <= done {
                    next_val += config.val_interval;
                }
                let clf = EncoderClassifier::new(&params, config.head, config.hyper.lambda1);
                let report = evaluate(&clf, val, Some(train), &val_spec)?;
                if best.as_ref().is_none_or(|(acc, _, _)| report.mean > *acc) {
                    best = Some((report.mean, done, params.clone()));
                }
                val_acc = Some(report.mean);
            }
        }
        history.push(HistoryRecord {
            episode: done,
            train_loss: metrics.loss,
            train_acc: metrics.accuracy,
            val_acc,
            wall_time: config
                .record_wall_time
                .then(|| started.elapsed().as_secs_f64()),
        });
    }

    let (best_val_acc, best_episode, best_params) = match best {
        Some((acc, ep, p)) => (Some(acc), ep, p),
        None => (None, done, params.clone()),
    };
    Ok(FitResult {
        best: best_params,
        best_episode,
        best_val_acc,
        last: params,
        history,
    })
}
