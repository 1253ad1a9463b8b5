//! Command-line front end: option merging (defaults, then config file, then
//! flags) and the train / eval / ablate / shift / compare / check commands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};

use crate::encoder::{Activation, EncoderParams};
use crate::episodes::{split_classes, Dataset, SynthSpec, BENCHMARK_SPLIT};
use crate::error::Error;
use crate::evaluator::{
    ablate_lambda2, compare_heads, domain_shift, evaluate, format_table, EncoderClassifier, EvalReport, EvalSpec,
};
use crate::heads::{HeadKind, Hyper};
use crate::trainer::{default_lambda2, fit, history_jsonl, EncoderSpec, OptimizerKind, TrainConfig};
use crate::verify;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_CHECK_FAILED: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Train an encoder, save the selected checkpoint and the history log.
    Train,
    /// Evaluate a saved checkpoint on the test classes.
    Eval,
    /// Train one model per λ₂ and compare them on shared test episodes.
    Ablate,
    /// Train on one domain and evaluate on another.
    Shift,
    /// Train one encoder per head and tabulate the results.
    Compare,
    /// Run the gradient and closed-form self-checks.
    Check,
}

#[derive(Debug, Parser)]
#[command(name = "regnet", version, about = "Few-shot classification by regression onto class subspaces")]
#[command(allow_negative_numbers = true)]
struct Cli {
    command: Command,
    /// `key = value` file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `synth` for the built-in benchmark, or a CSV file.
    #[arg(long)]
    dataset: Option<String>,
    /// Test domain for `shift`: `synth` (the source generator, translated) or a CSV file.
    #[arg(long)]
    target: Option<String>,
    /// Translation of the synthetic target domain.
    #[arg(long)]
    target_shift: Option<f64>,
    /// Seed of data generation and class splits; defaults to `--seed`.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    within_std: Option<f64>,
    /// Train, val and test class fractions, comma separated.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    /// Episodes per update.
    #[arg(long)]
    batch: Option<usize>,
    /// Training episodes.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    /// Defaults to 0.001 for one shot and 0.01 otherwise.
    #[arg(long)]
    lambda2: Option<f64>,
    /// λ₂ values for `ablate`, comma separated.
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long)]
    head: Option<HeadKind>,
    #[arg(long)]
    optimizer: Option<String>,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    val_interval: Option<usize>,
    #[arg(long)]
    val_episodes: Option<usize>,
    #[arg(long)]
    test_episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// 1 keeps every run bitwise reproducible.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to load (`eval`) or save (`train`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Add elapsed seconds to history records.
    #[arg(long)]
    wall_time: bool,
}

/// Keys accepted in config files; flags use the same names.
const KEYS: &[&str] = &[
    "dataset",
    "target",
    "target-shift",
    "data-seed",
    "classes",
    "per-class",
    "dim",
    "spread",
    "within-std",
    "split",
    "n",
    "k",
    "q",
    "batch",
    "episodes",
    "lr",
    "lambda1",
    "lambda2",
    "lambdas",
    "head",
    "optimizer",
    "hidden",
    "embed-dim",
    "activation",
    "val-interval",
    "val-episodes",
    "test-episodes",
    "seed",
    "threads",
    "out",
    "checkpoint",
    "wall-time",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth(SynthSpec),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub dataset: DataSource,
    pub target: Option<DataSource>,
    pub data_seed: u64,
    pub split: (f64, f64, f64),
    pub train: TrainConfig,
    pub test_episodes: usize,
    pub lambdas: Vec<f64>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// Help, version or a malformed command line, rendered by clap.
    Clap(clap::Error),
    Usage(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) => match e {
                Error::Io { .. } | Error::Parse { .. } | Error::Format(_) => EXIT_IO,
                Error::Divergence { .. } => EXIT_DIVERGENCE,
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_OTHER,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Clap(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(usage(format!("config line {}: unknown key `{key}`", i + 1)));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn flag_values(cli: &Cli) -> Vec<(&'static str, String)> {
    fn put<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, v: &Option<T>) {
        if let Some(v) = v {
            out.push((key, v.to_string()));
        }
    }
    let mut out = Vec::new();
    put(&mut out, "dataset", &cli.dataset);
    put(&mut out, "target", &cli.target);
    put(&mut out, "target-shift", &cli.target_shift);
    put(&mut out, "data-seed", &cli.data_seed);
    put(&mut out, "classes", &cli.classes);
    put(&mut out, "per-class", &cli.per_class);
    put(&mut out, "dim", &cli.dim);
    put(&mut out, "spread", &cli.spread);
    put(&mut out, "within-std", &cli.within_std);
    put(&mut out, "split", &cli.split);
    put(&mut out, "n", &cli.n);
    put(&mut out, "k", &cli.k);
    put(&mut out, "q", &cli.q);
    put(&mut out, "batch", &cli.batch);
    put(&mut out, "episodes", &cli.episodes);
    put(&mut out, "lr", &cli.lr);
    put(&mut out, "lambda1", &cli.lambda1);
    put(&mut out, "lambda2", &cli.lambda2);
    put(&mut out, "lambdas", &cli.lambdas);
    put(&mut out, "head", &cli.head);
    put(&mut out, "optimizer", &cli.optimizer);
    put(&mut out, "hidden", &cli.hidden);
    put(&mut out, "embed-dim", &cli.embed_dim);
    put(&mut out, "activation", &cli.activation);
    put(&mut out, "val-interval", &cli.val_interval);
    put(&mut out, "val-episodes", &cli.val_episodes);
    put(&mut out, "test-episodes", &cli.test_episodes);
    put(&mut out, "seed", &cli.seed);
    put(&mut out, "threads", &cli.threads);
    put(&mut out, "out", &cli.out.as_ref().map(|p| p.display()));
    put(&mut out, "checkpoint", &cli.checkpoint.as_ref().map(|p| p.display()));
    if cli.wall_time {
        out.push(("wall-time", "true".into()));
    }
    out
}

/// Typed lookup into the merged settings; errors name the offending key.
struct Settings(BTreeMap<String, String>);

impl Settings {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("invalid value `{raw}` for --{key}: {e}"))),
        }
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| usage(format!("invalid value `{raw}` for --{key}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }
}

fn data_source(spec: &str, synth: SynthSpec) -> DataSource {
    if spec == "synth" {
        DataSource::Synth(synth)
    } else {
        DataSource::Csv(PathBuf::from(spec))
    }
}

/// Parses a full argument vector, program name included.
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(CliError::Clap)?;
    let mut merged = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Run(Error::io(path, e)))?;
            parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };
    for (key, value) in flag_values(&cli) {
        merged.insert(key.to_string(), value);
    }
    build_config(cli.command, Settings(merged))
}

fn build_config(command: Command, s: Settings) -> Result<RunConfig, CliError> {
    let d = TrainConfig::default();
    let seed: u64 = s.or("seed", d.seed)?;
    let data_seed: u64 = s.or("data-seed", seed)?;
    let k: usize = s.or("k", d.k)?;

    let bench = SynthSpec::benchmark(data_seed);
    let synth = SynthSpec {
        classes: s.or("classes", bench.classes)?,
        per_class: s.or("per-class", bench.per_class)?,
        dim: s.or("dim", bench.dim)?,
        spread: s.or("spread", bench.spread)?,
        within_std: s.or("within-std", bench.within_std)?,
        ..bench
    };
    let dataset = data_source(&s.or("dataset", "synth".to_string())?, synth.clone());
    let target = match s.get::<String>("target")? {
        None => None,
        Some(t) => Some(data_source(
            &t,
            SynthSpec {
                shift: s.or("target-shift", 1.0)?,
                ..synth
            },
        )),
    };
    let split = match s.list::<f64>("split")? {
        None => BENCHMARK_SPLIT,
        Some(v) if v.len() == 3 => (v[0], v[1], v[2]),
        Some(_) => return Err(usage("--split takes three comma-separated fractions")),
    };
    let optimizer = match s.or("optimizer", "adam".to_string())?.as_str() {
        "adam" => OptimizerKind::Adam,
        "sgd" => OptimizerKind::Sgd,
        other => return Err(usage(format!("invalid value `{other}` for --optimizer: expected adam or sgd"))),
    };
    let lambda2 = s.or("lambda2", default_lambda2(k))?;
    let train = TrainConfig {
        n: s.or("n", d.n)?,
        k,
        q: s.or("q", d.q)?,
        batch: s.or("batch", d.batch)?,
        episodes: s.or("episodes", d.episodes)?,
        lr: s.or("lr", d.lr)?,
        hyper: Hyper {
            lambda1: s.or("lambda1", d.hyper.lambda1)?,
            lambda2,
        },
        head: s.or("head", d.head)?,
        optimizer,
        encoder: EncoderSpec {
            hidden: s.list("hidden")?.unwrap_or(d.encoder.hidden),
            embed_dim: s.or("embed-dim", d.encoder.embed_dim)?,
            activation: s.or("activation", d.encoder.activation)?,
        },
        val_interval: s.or("val-interval", d.val_interval)?,
        val_episodes: s.or("val-episodes", d.val_episodes)?,
        seed,
        threads: s.or("threads", d.threads)?,
        record_wall_time: s.or("wall-time", false)?,
    };
    train.validate().map_err(|e| usage(e.to_string()))?;

    let config = RunConfig {
        command,
        dataset,
        target,
        data_seed,
        split,
        train,
        test_episodes: s.or("test-episodes", 600)?,
        lambdas: s.list("lambdas")?.unwrap_or_else(|| vec![0.0, lambda2]),
        out: s.get::<String>("out")?.map(PathBuf::from),
        checkpoint: s.get::<String>("checkpoint")?.map(PathBuf::from),
    };
    match command {
        Command::Train if config.out.is_none() && config.checkpoint.is_none() => {
            Err(usage("train needs --out or --checkpoint"))
        }
        Command::Eval if config.checkpoint.is_none() => Err(usage("eval needs --checkpoint")),
        _ => Ok(config),
    }
}

fn load(source: &DataSource) -> Result<Dataset, Error> {
    match source {
        DataSource::Synth(spec) => spec.generate(),
        DataSource::Csv(path) => Dataset::load_csv(path),
    }
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn splits(config: &RunConfig, source: &DataSource) -> Result<Splits, Error> {
    let (train, val, test) = split_classes(&load(source)?, config.split, config.data_seed)?;
    Ok(Splits { train, val, test })
}

fn create_parent(path: &Path) -> Result<(), Error> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_reports(config: &RunConfig, reports: &[EvalReport]) -> Result<(), Error> {
    print!("{}", format_table(reports));
    if let Some(out) = &config.out {
        let text: String = reports.iter().map(|r| r.to_json_line() + "\n").collect();
        write_file(&out.join("report.jsonl"), &text)?;
    }
    Ok(())
}

fn val_set(s: &Splits) -> Option<&Dataset> {
    (!s.val.is_empty()).then_some(&s.val)
}

/// Executes a parsed configuration and returns the process exit status.
pub fn run(config: &RunConfig) -> Result<i32, CliError> {
    let tc = &config.train;
    match config.command {
        Command::Train => {
            let s = splits(config, &config.dataset)?;
            let fitted = fit(&s.train, val_set(&s), tc)?;
            let checkpoint = config
                .checkpoint
                .clone()
                .unwrap_or_else(|| config.out.as_ref().expect("checked in parsing").join("checkpoint.txt"));
            create_parent(&checkpoint)?;
            fitted.best.save(&checkpoint)?;
            if let Some(out) = &config.out {
                write_file(&out.join("history.jsonl"), &history_jsonl(&fitted.history))?;
            }
            match fitted.best_val_acc {
                Some(acc) => println!(
                    "selected episode {} with validation accuracy {:.2}%; saved {}",
                    fitted.best_episode,
                    acc,
                    checkpoint.display()
                ),
                None => println!("saved {}", checkpoint.display()),
            }
        }
        Command::Eval => {
            let s = splits(config, &config.dataset)?;
            let params = EncoderParams::load(config.checkpoint.as_ref().expect("checked in parsing"))?;
            let clf = EncoderClassifier::new(&params, tc.head, tc.hyper.lambda1);
            let report = evaluate(&clf, &s.test, Some(&s.train), &EvalSpec::for_config(tc, config.test_episodes))?;
            write_reports(config, &[report])?;
        }
        Command::Ablate => {
            let s = splits(config, &config.dataset)?;
            let ab = ablate_lambda2(&s.train, val_set(&s), &s.test, tc, &config.lambdas, config.test_episodes)?;
            write_reports(config, &ab.reports)?;
            for d in &ab.deltas {
                println!(
                    "lambda2 {} vs {}: paired delta {:+.2} ± {:.2} points",
                    d.lambda2, ab.lambdas[0], d.mean, d.ci95
                );
            }
            if let Some(out) = &config.out {
                let text = serde_json::to_string(&ab.deltas).expect("deltas serialize") + "\n";
                write_file(&out.join("deltas.json"), &text)?;
            }
        }
        Command::Shift => {
            let target = config
                .target
                .as_ref()
                .ok_or_else(|| usage("shift needs --target"))?;
            let a = splits(config, &config.dataset)?;
            let b = splits(config, target)?;
            let report = domain_shift(&a.train, val_set(&a), &b.test, tc, config.test_episodes)?;
            write_reports(config, &[report])?;
        }
        Command::Compare => {
            let s = splits(config, &config.dataset)?;
            let reports = compare_heads(&s.train, val_set(&s), &s.test, tc, &HeadKind::ALL, config.test_episodes)?;
            write_reports(config, &reports)?;
        }
        Command::Check => {
            let outcomes = verify::run_all(tc.seed)?;
            let mut stdout = std::io::stdout().lock();
            for o in &outcomes {
                let _ = writeln!(
                    stdout,
                    "{} {}: worst {:.3e} (tolerance {:.0e})",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.worst,
                    o.tolerance
                );
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            let _ = writeln!(stdout, "{} passed, {} failed", outcomes.len() - failed, failed);
            if failed > 0 {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
    }
    Ok(0)
}

/// Parses `argv`, runs it and reports errors on stderr.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let result = parse_args(argv).and_then(|c| run(&c));
    match result {
        Ok(code) => code,
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<RunConfig, CliError> {
        parse_args(std::iter::once("regnet").chain(args.iter().copied()))
    }

    #[test]
    fn flags_override_defaults() {
        let c = parse(&["train", "--seed", "7", "--k", "5", "--out", "x"]).unwrap();
        assert_eq!(c.command, Command::Train);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.train.k, 5);
        let d = TrainConfig::default();
        assert_eq!((c.train.n, c.train.q, c.train.lr, c.train.episodes), (d.n, d.q, d.lr, d.episodes));
        assert_eq!(c.data_seed, 7);
        assert_eq!(c.train.hyper.lambda2, 1e-2);
        assert_eq!(c.test_episodes, 600);
    }

    #[test]
    fn one_shot_uses_smaller_lambda2() {
        let c = parse(&["check", "--k", "1"]).unwrap();
        assert_eq!(c.train.hyper.lambda2, 1e-3);
        assert_eq!(c.lambdas, vec![0.0, 1e-3]);
    }

    #[test]
    fn negative_count_names_the_flag() {
        let err = parse(&["train", "--k", "-1", "--out", "x"]).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        assert!(err.to_string().contains("--k"), "{err}");
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let err = parse(&["train", "--bogus", "1"]).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        assert!(err.to_string().contains("--bogus"));
    }

    #[test]
    fn missing_paths_are_usage_errors() {
        let err = parse(&["eval"]).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        assert!(err.to_string().contains("--checkpoint"));
        assert!(parse(&["train"]).is_err());
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "# few-shot run\nk = 1\nlambda1=0.01  # ridge\nhead = proto\n").unwrap();
        let p = path.to_str().unwrap();
        let c = parse(&["check", "--config", p]).unwrap();
        assert_eq!((c.train.k, c.train.hyper.lambda1, c.train.head), (1, 0.01, HeadKind::Proto));
        let c = parse(&["check", "--config", p, "--k", "5"]).unwrap();
        assert_eq!(c.train.k, 5);
        assert_eq!(c.train.hyper.lambda1, 0.01);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let err = parse_config_file("k = 5\nshots = 3\n").unwrap_err();
        assert!(err.to_string().contains("shots"));
        assert_eq!(err.exit_code(), EXIT_USAGE);
        assert!(parse_config_file("just words").is_err());
        let m = parse_config_file("embed_dim = 8").unwrap();
        assert_eq!(m["embed-dim"], "8");
    }

    #[test]
    fn bad_file_value_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "q = many\n").unwrap();
        let err = parse(&["check", "--config", path.to_str().unwrap()]).unwrap_err();
        assert!(err.to_string().contains("--q"), "{err}");
    }

    #[test]
    fn lists_and_sources() {
        let c = parse(&[
            "shift", "--hidden", "32,16", "--lambdas", "0,0.1,1", "--dataset", "a.csv", "--target", "synth",
            "--split", "0.5,0.25,0.25",
        ])
        .unwrap();
        assert_eq!(c.train.encoder.hidden, vec![32, 16]);
        assert_eq!(c.lambdas, vec![0.0, 0.1, 1.0]);
        assert_eq!(c.dataset, DataSource::Csv("a.csv".into()));
        match c.target {
            Some(DataSource::Synth(s)) => assert_eq!(s.shift, 1.0),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.split, (0.5, 0.25, 0.25));
    }

    #[test]
    fn invalid_ranges_are_usage_errors() {
        for args in [
            &["check", "--lr", "0"][..],
            &["check", "--n", "1"],
            &["check", "--k", "20"],
            &["check", "--optimizer", "rmsprop"],
            &["check", "--split", "0.5,0.5"],
        ] {
            let err = parse(args).unwrap_err();
            assert_eq!(err.exit_code(), EXIT_USAGE, "{args:?}");
        }
    }

    #[test]
    fn error_codes_are_distinct() {
        let io = CliError::Run(Error::io("x", std::io::Error::other("gone")));
        let div = CliError::Run(Error::Divergence { episode: 3 });
        let other = CliError::Run(Error::Contract("x".into()));
        let codes = [usage("x").exit_code(), io.exit_code(), div.exit_code(), other.exit_code(), EXIT_CHECK_FAILED];
        let mut sorted = codes.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), codes.len());
    }
}
