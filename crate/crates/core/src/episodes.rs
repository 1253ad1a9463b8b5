//! Labeled datasets and N-way K-shot episode sampling.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    All,
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::All => "all",
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    /// Index into [`Dataset::class_names`].
    pub class: usize,
}

/// A labeled feature-vector collection. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    split: Split,
    class_names: Vec<String>,
    examples: Vec<Example>,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, dim: usize, class_names: Vec<String>, examples: Vec<Example>) -> Result<Self> {
        let mut by_class = vec![Vec::new(); class_names.len()];
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != dim {
                return Err(Error::Shape(format!(
                    "example {i} has {} features, dataset dimension is {dim}",
                    ex.features.len()
                )));
            }
            let slot = by_class.get_mut(ex.class).ok_or_else(|| {
                Error::Contract(format!("example {i} has unknown class {}", ex.class))
            })?;
            slot.push(i);
        }
        Ok(Self {
            name: name.into(),
            dim,
            split: Split::All,
            class_names,
            examples,
            by_class,
        })
    }

    /// Builds a dataset from `(label, features)` rows; classes are numbered in
    /// order of first appearance.
    pub fn from_labeled(name: impl Into<String>, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.1.len());
        let mut class_names: Vec<String> = Vec::new();
        let mut examples = Vec::with_capacity(rows.len());
        for (label, features) in rows {
            let class = match class_names.iter().position(|c| *c == label) {
                Some(c) => c,
                None => {
                    class_names.push(label);
                    class_names.len() - 1
                }
            };
            examples.push(Example { features, class });
        }
        Self::new(name, dim, class_names, examples)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Example indices of class `c`.
    pub fn class_examples(&self, c: usize) -> &[usize] {
        &self.by_class[c]
    }

    /// Whether no class name appears in both datasets.
    pub fn classes_disjoint(&self, other: &Dataset) -> bool {
        !self
            .class_names
            .iter()
            .any(|c| other.class_names.contains(c))
    }

    /// A dataset with only the given classes, renumbered in the given order.
    pub fn subset(&self, classes: &[usize], split: Split) -> Dataset {
        let mut examples = Vec::new();
        let mut by_class = Vec::with_capacity(classes.len());
        for (new_c, &c) in classes.iter().enumerate() {
            let mut ids = Vec::with_capacity(self.by_class[c].len());
            for &i in &self.by_class[c] {
                ids.push(examples.len());
                examples.push(Example {
                    features: self.examples[i].features.clone(),
                    class: new_c,
                });
            }
            by_class.push(ids);
        }
        Dataset {
            name: self.name.clone(),
            dim: self.dim,
            split,
            class_names: classes.iter().map(|&c| self.class_names[c].clone()).collect(),
            examples,
            by_class,
        }
    }

    /// Reads `label,feat_1,…,feat_D` rows after one header line.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
        Self::read_csv(file, name)
    }

    pub fn read_csv(reader: impl std::io::Read, name: impl Into<String>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header_len = match rdr.headers() {
            Ok(h) if h.is_empty() || (h.len() == 1 && h[0].is_empty()) => {
                return Err(Error::Format("empty CSV file".into()))
            }
            Ok(h) => h.len(),
            Err(e) => return Err(Error::Format(format!("unreadable CSV header: {e}"))),
        };
        if header_len < 2 {
            return Err(Error::Format("CSV needs a label column and at least one feature".into()));
        }
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::Parse {
                    line,
                    msg: e.to_string(),
                }
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() == 1 && record[0].is_empty() {
                continue;
            }
            if record.len() != header_len {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {header_len} fields, found {}", record.len()),
                });
            }
            let features = record
                .iter()
                .skip(1)
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        msg: format!("`{f}` is not a number"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((record[0].to_string(), features));
        }
        if rows.is_empty() {
            return Err(Error::Format("CSV file has a header but no examples".into()));
        }
        Self::from_labeled(name, rows)
    }

    /// Writes the dataset in the format [`Dataset::load_csv`] reads, with
    /// round-trip exact values.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |e| Error::io(path, e);
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        let mut line = String::from("label");
        for d in 1..=self.dim {
            line.push_str(&format!(",f{d}"));
        }
        writeln!(out, "{line}").map_err(io_err)?;
        for ex in &self.examples {
            line.clear();
            line.push_str(&self.class_names[ex.class]);
            for v in &ex.features {
                line.push_str(&format!(",{v}"));
            }
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Parameters of the isotropic Gaussian class generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Centers are uniform in `[−spread, spread]^D`.
    pub spread: f64,
    pub within_std: f64,
    /// Added to every center coordinate after drawing; a nonzero value gives a
    /// translated copy of the same domain.
    pub shift: f64,
}

/// Class fractions giving 20 train, 5 val and 5 test classes out of 30.
pub const BENCHMARK_SPLIT: (f64, f64, f64) = (20.0 / 30.0, 5.0 / 30.0, 5.0 / 30.0);

impl SynthSpec {
    /// The default desk-scale benchmark: 30 classes of 50 examples in 32
    /// dimensions, split with [`BENCHMARK_SPLIT`].
    pub fn benchmark(seed: u64) -> Self {
        Self {
            seed,
            classes: 30,
            per_class: 50,
            dim: 32,
            spread: 1.0,
            within_std: 0.3,
            shift: 0.0,
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "synthetic data needs at least 2 classes, got {}",
                self.classes
            )));
        }
        let mut rng = rng::stream(self.seed, "synth");
        let centers = self.draw_centers(&mut rng);
        let mut examples = Vec::with_capacity(self.classes * self.per_class);
        for (class, center) in centers.iter().enumerate() {
            for _ in 0..self.per_class {
                let features = center
                    .iter()
                    .map(|&c| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        c + self.within_std * z
                    })
                    .collect();
                examples.push(Example { features, class });
            }
        }
        let name = if self.shift == 0.0 {
            format!("synth-{}", self.seed)
        } else {
            format!("synth-{}-shift{}", self.seed, self.shift)
        };
        let class_names = (0..self.classes).map(|c| format!("c{c}")).collect();
        Dataset::new(name, self.dim, class_names, examples)
    }

    /// Class centers as the generator draws them (before noise).
    pub fn centers(&self) -> Vec<Vec<f64>> {
        self.draw_centers(&mut rng::stream(self.seed, "synth"))
    }

    fn draw_centers(&self, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|_| {
                Tensor::random_uniform(self.dim, 1, -self.spread, self.spread, rng)
                    .into_data()
                    .into_iter()
                    .map(|c| c + self.shift)
                    .collect()
            })
            .collect()
    }
}

/// Gaussian clusters around uniformly drawn centers; deterministic in `seed`.
pub fn synth_gaussian(
    seed: u64,
    n_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    within_std: f64,
) -> Result<Dataset> {
    SynthSpec {
        seed,
        classes: n_classes,
        per_class,
        dim,
        spread,
        within_std,
        shift: 0.0,
    }
    .generate()
}

/// Class-level split into train/val/test.
///
/// Val and test get `floor(fraction · C)` classes each and train takes the
/// remainder. Class order is shuffled with a stream derived from `seed`.
pub fn split_classes(dataset: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be in [0, 1] and sum to 1, got ({ft}, {fv}, {fs})"
        )));
    }
    let c = dataset.num_classes();
    // The small epsilon keeps products like 0.29·100 = 28.999… from losing a class.
    let n_val = (fv * c as f64 + 1e-9).floor() as usize;
    let n_test = (fs * c as f64 + 1e-9).floor() as usize;
    let n_train = c - n_val - n_test;
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut rng::stream(seed, "split"));
    let part = |range: std::ops::Range<usize>, split| {
        let mut classes = order[range].to_vec();
        classes.sort_unstable();
        dataset.subset(&classes, split)
    };
    Ok((
        part(0..n_train, Split::Train),
        part(n_train..n_train + n_val, Split::Val),
        part(n_train + n_val..c, Split::Test),
    ))
}

/// One N-way K-shot task. Columns are grouped by class: class `n` owns
/// support columns `n·K..(n+1)·K` and query columns `n·Q..(n+1)·Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub n: usize,
    pub k: usize,
    pub q: usize,
    /// Dataset class index of every episode class; the inverse of the
    /// relabeling to `0..N`.
    pub classes: Vec<usize>,
    /// `D × (N·K)`
    pub support: Tensor,
    /// `D × (N·Q)`
    pub query: Tensor,
    /// Episode class of every query column.
    pub query_labels: Vec<usize>,
    pub support_ids: Vec<usize>,
    pub query_ids: Vec<usize>,
}

impl Episode {
    /// Support columns of episode class `n`.
    pub fn class_support(&self, n: usize) -> Tensor {
        self.support.columns(n * self.k, (n + 1) * self.k)
    }

    /// Episode label (`0..N`) of a dataset class, if it is in the episode.
    pub fn relabel(&self, dataset_class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == dataset_class)
    }
}

/// Samples `n` classes without replacement, then `k + q` distinct examples of
/// each, the first `k` as support and the rest as queries.
pub fn sample_episode(dataset: &Dataset, n: usize, k: usize, q: usize, rng: &mut Rng) -> Result<Episode> {
    if n == 0 || k == 0 || q == 0 {
        return Err(Error::Sampling(format!(
            "episode shape must be positive, got N={n} K={k} Q={q}"
        )));
    }
    let eligible: Vec<usize> = (0..dataset.num_classes())
        .filter(|&c| dataset.class_examples(c).len() >= k + q)
        .collect();
    if eligible.len() < n {
        return Err(Error::Sampling(format!(
            "{n}-way episodes need {n} classes with at least {} examples; `{}` ({}) has {}",
            k + q,
            dataset.name(),
            dataset.split(),
            eligible.len()
        )));
    }
    let chosen: Vec<usize> = index::sample(rng, eligible.len(), n)
        .into_iter()
        .map(|i| eligible[i])
        .collect();

    let d = dataset.dim();
    let mut support = Tensor::zeros(d, n * k);
    let mut query = Tensor::zeros(d, n * q);
    let mut support_ids = Vec::with_capacity(n * k);
    let mut query_ids = Vec::with_capacity(n * q);
    let mut query_labels = Vec::with_capacity(n * q);
    for (local, &c) in chosen.iter().enumerate() {
        let pool = dataset.class_examples(c);
        let picks = index::sample(rng, pool.len(), k + q);
        for (slot, i) in picks.into_iter().enumerate() {
            let id = pool[i];
            let features = &dataset.examples()[id].features;
            if slot < k {
                let col = local * k + slot;
                for (r, v) in features.iter().enumerate() {
                    support.set(r, col, *v);
                }
                support_ids.push(id);
            } else {
                let col = local * q + (slot - k);
                for (r, v) in features.iter().enumerate() {
                    query.set(r, col, *v);
                }
                query_ids.push(id);
                query_labels.push(local);
            }
        }
    }
    Ok(Episode {
        n,
        k,
        q,
        classes: chosen,
        support,
        query,
        query_labels,
        support_ids,
        query_ids,
    })
}
