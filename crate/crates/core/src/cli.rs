//! `gradharm` command line: `train`, `harmonize` and `analyze`.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical abort during
//! training, 1 for I/O failures while writing results.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{histogram, load_trace, post_harmonization_trace, Histogram};
use crate::error::{Error, Result};
use crate::harmonizer::{harmonize, GradientPair, HarmonizeMethod, MethodKind, DEFAULT_LAMBDA};
use crate::par::{self, Execution};
use crate::scenario::{load_csv, make_blobs, BlobSpec, Dataset, DatasetMeta};
use crate::trainer::{TrainConfig, TrainRun, Trainer};
use crate::vecmath::ParamVector;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NumericalAbort { .. } => EXIT_NUMERICAL,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "gradharm", version, about = "Gradient harmonization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured method on one dataset and write reports.
    Train {
        config: PathBuf,
        /// Run the methods concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Harmonize one gradient pair read from `{"g1": [...], "g2": [...]}`.
    Harmonize {
        input: PathBuf,
        #[arg(long, default_value = "gh")]
        method: MethodKind,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
    },
    /// Inner-product histogram of a gradient trace.
    Analyze {
        trace: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Also replay this method on full-gradient entries.
        #[arg(long)]
        method: Option<MethodKind>,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        /// Write the histogram (or the replayed one, with --method) as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Results go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train { config, parallel } => cmd_train(&config, parallel).and_then(|s| print_json(out, &s)),
        Command::Harmonize { input, method, lambda } => {
            cmd_harmonize(&input, method, lambda).and_then(|r| print_json(out, &r))
        }
        Command::Analyze { trace, bins, method, lambda, csv } => {
            cmd_analyze(&trace, bins, method, lambda, csv.as_deref()).and_then(|r| print_json(out, &r))
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    out.write_all(s.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Experiment description for `train`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Seeds the dataset, initialization and batching streams.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSource,
    /// Training settings shared by every method; `method` and `seed` are
    /// filled in per run.
    pub train: TrainConfig,
    pub methods: Vec<HarmonizeMethod>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Blobs(BlobSpec),
    Csv(PathBuf),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    #[serde(default)]
    seed: u64,
    output_dir: PathBuf,
    #[serde(default)]
    scenario: Option<Value>,
    #[serde(default)]
    csv: Option<PathBuf>,
    #[serde(default)]
    train: Option<Value>,
    methods: Vec<Value>,
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{field}: {msg}"))
}

fn forbid(v: &Value, section: &str, keys: &[&str]) -> Result<()> {
    for k in keys {
        if v.get(k).is_some() {
            return Err(field_err(&format!("{section}.{k}"), "set this at the top level instead"));
        }
    }
    Ok(())
}

/// A method is either a name (`"gh"`) or `{"kind": "...", "lambda": x}`.
fn parse_method(v: &Value, field: &str) -> Result<HarmonizeMethod> {
    match v {
        Value::String(s) => s.parse::<MethodKind>().map(HarmonizeMethod::of).map_err(|e| field_err(field, e)),
        Value::Object(_) => serde_json::from_value(v.clone()).map_err(|e| field_err(field, e)),
        _ => Err(field_err(field, "expected a method name or {\"kind\", \"lambda\"} object")),
    }
}

impl RunConfig {
    pub fn from_json(v: Value) -> Result<Self> {
        let raw: RawRunConfig = serde_json::from_value(v).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if raw.methods.is_empty() {
            return Err(field_err("methods", "at least one method is required"));
        }
        let methods = raw
            .methods
            .iter()
            .enumerate()
            .map(|(i, m)| parse_method(m, &format!("methods[{i}]")))
            .collect::<Result<Vec<_>>>()?;

        let data = match (raw.scenario, raw.csv) {
            (Some(_), Some(_)) => return Err(field_err("csv", "give either `scenario` or `csv`, not both")),
            (None, Some(p)) => DataSource::Csv(p),
            (s, None) => {
                let s = s.unwrap_or_else(|| Value::Object(Default::default()));
                forbid(&s, "scenario", &["seed"])?;
                let spec: BlobSpec = serde_json::from_value(s).map_err(|e| field_err("scenario", e))?;
                DataSource::Blobs(BlobSpec { seed: raw.seed, ..spec })
            }
        };

        let t = raw.train.unwrap_or_else(|| Value::Object(Default::default()));
        forbid(&t, "train", &["seed", "method"])?;
        let train: TrainConfig = serde_json::from_value(t).map_err(|e| field_err("train", e))?;
        let train = TrainConfig { seed: raw.seed, ..train };
        train.validate().map_err(|e| field_err("train", e))?;

        let cfg = Self { seed: raw.seed, output_dir: raw.output_dir, data, train, methods };
        let mut labels: Vec<String> = cfg.methods.iter().map(|m| method_label(*m)).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(field_err("methods", format!("`{}` is listed twice", w[0])));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(read_json(path)?)?;
        // relative paths in the config are relative to the config file
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let DataSource::Csv(p) = &mut cfg.data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Blobs(spec) => make_blobs(spec),
            DataSource::Csv(p) => load_csv(p),
        }
    }
}

/// File-name label of a method: its name, plus lambda where it matters.
pub fn method_label(m: HarmonizeMethod) -> String {
    if m.kind.uses_lambda() {
        format!("{}-{}", m.kind.name(), m.lambda)
    } else {
        m.kind.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: MethodKind,
    pub lambda: Option<f64>,
    pub label: String,
    pub seed: u64,
    pub iterations: usize,
    pub final_accuracy: Option<f64>,
    pub obtuse_fraction: f64,
    pub final_loss_dom: f64,
    pub final_loss_cls: f64,
    pub final_mmd: Option<f64>,
    pub final_jw: Option<f64>,
    pub report: String,
    pub trace: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub dataset: DatasetMeta,
    pub dataset_csv: String,
    pub runs: Vec<MethodSummary>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn summarize(m: HarmonizeMethod, cfg: &TrainConfig, run: &TrainRun, trace: Option<String>) -> MethodSummary {
    let r = &run.report;
    let last = r.records.last().expect("at least one iteration");
    MethodSummary {
        method: m.kind,
        lambda: m.kind.uses_lambda().then_some(m.lambda),
        label: method_label(m),
        seed: cfg.seed,
        iterations: r.records.len(),
        final_accuracy: r.final_accuracy,
        obtuse_fraction: r.obtuse_fraction,
        final_loss_dom: last.loss_dom,
        final_loss_cls: last.loss_cls,
        final_mmd: last.mmd,
        final_jw: last.jw,
        report: format!("report_{}.jsonl", method_label(m)),
        trace,
    }
}

/// Trains every configured method on one dataset and writes
/// `dataset.csv`, `report_<label>.jsonl`, `summary_<label>.json`,
/// optional `trace_<label>.jsonl`, and `summary.json`.
pub fn cmd_train(config_path: &Path, parallel: bool) -> Result<RunSummary> {
    let cfg = RunConfig::load(config_path)?;
    let data = cfg.dataset()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let out = &cfg.output_dir;
    data.write_csv(out.join("dataset.csv"))?;

    let exec = if parallel { Execution::Parallel } else { Execution::Sequential };
    let runs = par::try_map(exec, &cfg.methods, |&m| {
        let tc = TrainConfig { method: m, ..cfg.train.clone() };
        Trainer::new(tc, &data)?.run()
    })?;

    let mut summaries = Vec::with_capacity(runs.len());
    for (m, run) in cfg.methods.iter().zip(&runs) {
        let label = method_label(*m);
        let mut buf = Vec::new();
        run.report.write_jsonl(&mut buf)?;
        write_file(&out.join(format!("report_{label}.jsonl")), &buf)?;
        let trace = match &run.trace {
            Some(t) => {
                let name = format!("trace_{label}.jsonl");
                let mut buf = Vec::new();
                t.write_jsonl(&mut buf)?;
                write_file(&out.join(&name), &buf)?;
                Some(name)
            }
            None => None,
        };
        let s = summarize(*m, &cfg.train, run, trace);
        write_json(&out.join(format!("summary_{label}.json")), &s)?;
        summaries.push(s);
    }
    let summary = RunSummary { seed: cfg.seed, dataset: data.meta.clone(), dataset_csv: "dataset.csv".into(), runs: summaries };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairInput {
    g1: ParamVector,
    g2: ParamVector,
}

pub fn cmd_harmonize(input: &Path, method: MethodKind, lambda: f64) -> Result<crate::harmonizer::HarmonizeResult> {
    let v = read_json(input)?;
    let p: PairInput = serde_json::from_value(v).map_err(|e| Error::parse(input, 1, e.to_string()))?;
    let pair = GradientPair::new(p.g1, p.g2)?;
    harmonize(HarmonizeMethod::new(method, lambda)?, &pair)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOutput {
    pub histogram: Histogram,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub post_harmonization: Option<Histogram>,
}

pub fn cmd_analyze(
    trace_path: &Path,
    bins: usize,
    method: Option<MethodKind>,
    lambda: f64,
    csv: Option<&Path>,
) -> Result<AnalyzeOutput> {
    let trace = load_trace(trace_path)?;
    if trace.is_empty() {
        return Err(Error::parse(trace_path, 1, "trace has no entries"));
    }
    let h = histogram(&trace, bins)?;
    let post = match method {
        Some(kind) => Some(histogram(&post_harmonization_trace(&trace, HarmonizeMethod::new(kind, lambda)?)?, bins)?),
        None => None,
    };
    if let Some(path) = csv {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        post.as_ref().unwrap_or(&h).write_csv(file)?;
    }
    Ok(AnalyzeOutput { histogram: h, method, post_harmonization: post })
}
