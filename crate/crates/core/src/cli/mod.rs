//! Command-line front end: flag and config parsing, seeding, output files,
//! manifests and plots.
//!
//! Parameter precedence, lowest first: built-in defaults, the global seed
//! (filled into every seed field), the config file's `[params]` table, then
//! subcommand flags. A run's `manifest.toml` is itself a valid `--config`
//! file and reproduces the run.

mod commands;
mod svg;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use commands::{AkgVerifyParams, FeatAdaptParams, NthrParams, TwoGramParams};
pub use svg::{emit_svg, load_plot_data, plot_to_file, render_svg, DataRef, PlotData, PlotKind, PlotSpec, Series};

use crate::error::{LabError, Result};
use crate::filterkd::FilterKdExperiment;
use crate::finetune_dyn::SqueezeTrials;
use crate::simplicity::Toy256Config;
use crate::training::PathExperiment;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const OUT_ENV: &str = "FORCE_LAB_OUT";
const DEFAULT_OUT: &str = "forcelab-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Parser, Debug)]
#[command(name = "forcelab", version, about = "Learning-dynamics experiments on toy models", arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overridden by the FORCE_LAB_OUT environment variable.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// TOML file with top-level run keys and a [params] table.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// First-order check of the one-step decomposition and force time series.
    AkgVerify {
        #[arg(long)]
        triples: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Per-example learning paths on Toy-Gaussian data.
    ToygaussPaths {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// EMA coefficient for the smoothed paths.
        #[arg(long)]
        ema: Option<f64>,
    },
    /// Distillation from the filtered teacher table against ESKD and one-hot.
    FilterKd {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        noise_ratio: Option<f64>,
        #[arg(long, value_delimiter = ',', value_parser = ["filterkd", "eskd", "oht"])]
        mode: Option<Vec<String>>,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Random negative-gradient steps and their squeezing guarantees.
    Squeeze {
        /// Vocabulary size.
        #[arg(long)]
        v: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Accumulated updates on a 2-gram corpus.
    TwoGram {
        #[arg(long, value_parser = ["pos_only", "paired", "sft_both_then_dpo", "sft_pos_then_dpo"])]
        mode: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        length: Option<usize>,
    },
    /// Negative-token influence scores and masking on synthetic rollouts.
    Nthr {
        /// Number of rollout groups (questions).
        #[arg(long)]
        groups: Option<usize>,
        /// Threshold quantile of each group's negative-token scores.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        topk: Option<Vec<usize>>,
    },
    /// Closed-form probe-output sweep and probe-length sweep.
    FeatAdapt {
        /// Input and hidden width, as `input,hidden`.
        #[arg(long, value_delimiter = ',', num_args = 1)]
        dims: Option<Vec<usize>>,
        /// Grid points on [0, 1].
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        tau_list: Option<Vec<usize>>,
        #[arg(long)]
        eta_hp: Option<f64>,
    },
    /// Learning speed of all 256 Toy256 mappings.
    Toy256 {
        #[arg(long, value_parser = ["oht2", "oht3"])]
        encoding: Option<String>,
        #[arg(long, value_parser = ["ce", "mse"])]
        loss: Option<String>,
        #[arg(long, value_parser = ["sgd", "adam"])]
        optimizer: Option<String>,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long)]
        seeds: Option<u64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::AkgVerify { .. } => "akg-verify",
            Command::ToygaussPaths { .. } => "toygauss-paths",
            Command::FilterKd { .. } => "filter-kd",
            Command::Squeeze { .. } => "squeeze",
            Command::TwoGram { .. } => "two-gram",
            Command::Nthr { .. } => "nthr",
            Command::FeatAdapt { .. } => "feat-adapt",
            Command::Toy256 { .. } => "toy256",
        }
    }

    /// Flag values as dotted parameter paths.
    fn overrides(&self, seed: u64) -> Result<Vec<(&'static str, toml::Value)>> {
        use toml::Value as V;
        let int = |v: usize| V::Integer(v as i64);
        let seeds = |k: u64| V::Array((seed..seed + k).map(|s| V::Integer(s as i64)).collect());
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: Option<V>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        match self {
            Command::AkgVerify { triples, epochs } => {
                put("triples", triples.map(int));
                put("train.epochs", epochs.map(int));
            }
            Command::ToygaussPaths { n, epochs, ema } => {
                put("data.n", n.map(int));
                put("train.epochs", epochs.map(int));
                put("ema_alpha", ema.map(V::Float));
            }
            Command::FilterKd { alpha, noise_ratio, mode, seeds: k } => {
                put("alpha", alpha.map(V::Float));
                put("noise_ratio", noise_ratio.map(V::Float));
                put("modes", mode.as_ref().map(|m| V::Array(m.iter().cloned().map(V::String).collect())));
                put("seeds", k.map(seeds));
            }
            Command::Squeeze { v, trials, eta } => {
                put("vocab", v.map(int));
                put("trials", trials.map(int));
                put("eta", eta.map(V::Float));
            }
            Command::TwoGram { mode, steps, length } => {
                put("mode", mode.clone().map(V::String));
                put("steps", steps.map(int));
                put("data.length", length.map(int));
            }
            Command::Nthr { groups, tau, beta, topk } => {
                put("questions", groups.map(int));
                put("tau_quantile", tau.map(V::Float));
                put("beta", beta.map(V::Float));
                put("topk", topk.as_ref().map(|k| V::Array(k.iter().map(|&k| int(k)).collect())));
            }
            Command::FeatAdapt { dims, grid, tau_list, eta_hp } => {
                if let Some(d) = dims {
                    let [input, hidden] = d[..] else {
                        return Err(LabError::Config(format!("--dims takes input,hidden; got {} values", d.len())));
                    };
                    put("opm.input_dim", Some(int(input)));
                    put("opm.hidden", Some(int(hidden)));
                    put("adapt.data.dim", Some(int(input)));
                    put("adapt.hidden", Some(int(hidden)));
                }
                put("grid", grid.map(int));
                put("taus", tau_list.as_ref().map(|t| V::Array(t.iter().map(|&t| int(t)).collect())));
                put("eta_hp", eta_hp.map(V::Float));
            }
            Command::Toy256 { encoding, loss, optimizer, seeds: k } => {
                put("encoding", encoding.clone().map(V::String));
                put("loss", loss.clone().map(V::String));
                put("optimizer", optimizer.clone().map(V::String));
                put("seeds", k.map(seeds));
            }
        }
        Ok(out)
    }
}

/// Parameter fields filled from the global seed. A `seeds` list becomes
/// consecutive seeds, as many as the default list holds.
fn seed_fields(command: &str) -> &'static [&'static str] {
    match command {
        "akg-verify" | "toygauss-paths" | "two-gram" => &["data.seed"],
        "filter-kd" | "toy256" => &["seeds"],
        "squeeze" | "nthr" => &["seed"],
        "feat-adapt" => &["opm.seed", "adapt.data.seed"],
        _ => &[],
    }
}

/// Resolved run settings; `params` holds the user-supplied parameter keys
/// (config file plus flags) before defaults are filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: String,
    pub seed: u64,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub format: Format,
    pub params: toml::Table,
}

/// Top-level keys of a config file (a manifest adds `code_version`).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    command: Option<String>,
    code_version: Option<String>,
    seed: Option<u64>,
    jobs: Option<usize>,
    out_dir: Option<PathBuf>,
    format: Option<Format>,
    #[serde(default)]
    params: toml::Table,
}

#[derive(Serialize)]
struct Manifest<'a, P> {
    command: &'a str,
    code_version: &'a str,
    seed: u64,
    format: Format,
    params: &'a P,
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let (head, rest) = match path.split_once('.') {
        Some((h, r)) => (h, Some(r)),
        None => (path, None),
    };
    match rest {
        None => {
            table.insert(head.into(), value);
            Ok(())
        }
        Some(rest) => match table.entry(head).or_insert_with(|| toml::Value::Table(toml::Table::new())) {
            toml::Value::Table(t) => set_path(t, rest, value),
            _ => Err(LabError::Config(format!("parameter {head:?} is not a table"))),
        },
    }
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Every key of `given` must survive a round trip through the parameter
/// struct, otherwise it was silently ignored by deserialization.
fn check_keys(given: &toml::Table, resolved: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in given {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (resolved.get(k), v) {
            (None, _) => return Err(LabError::Config(format!("unknown parameter {path:?}"))),
            (Some(toml::Value::Table(r)), toml::Value::Table(g)) => check_keys(g, r, &path)?,
            _ => {}
        }
    }
    Ok(())
}

fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    toml::Table::try_from(value).map_err(|e| LabError::Config(format!("cannot serialize parameters: {e}")))
}

/// Defaults, then seed fields, then user keys; unknown keys are rejected.
fn resolve<T: Serialize + DeserializeOwned + Default>(cfg: &ExperimentConfig) -> Result<T> {
    let mut table = to_table(&T::default())?;
    for &field in seed_fields(&cfg.command) {
        let seeded = if field == "seeds" {
            let n = match table.get("seeds") {
                Some(toml::Value::Array(a)) => a.len() as u64,
                _ => 1,
            };
            toml::Value::Array((cfg.seed..cfg.seed + n).map(|s| toml::Value::Integer(s as i64)).collect())
        } else {
            toml::Value::Integer(cfg.seed as i64)
        };
        set_path(&mut table, field, seeded)?;
    }
    merge(&mut table, &cfg.params);
    let params: T = table.try_into().map_err(|e: toml::de::Error| LabError::Config(e.message().to_string()))?;
    check_keys(&cfg.params, &to_table(&params)?, "")?;
    Ok(params)
}

/// Result files of one run, written in the chosen format.
pub struct Output {
    dir: PathBuf,
    format: Format,
    files: Vec<PathBuf>,
}

/// Converts CSV text to an array of objects, typing each cell.
fn csv_to_json(bytes: &[u8]) -> Result<serde_json::Value> {
    let mut reader = csv::Reader::from_reader(bytes);
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let obj: serde_json::Map<String, serde_json::Value> = header
            .iter()
            .zip(rec.iter())
            .map(|(h, cell)| {
                let v = if cell.is_empty() {
                    serde_json::Value::Null
                } else if let Ok(b) = cell.parse::<bool>() {
                    b.into()
                } else if let Ok(i) = cell.parse::<i64>() {
                    i.into()
                } else if let Ok(f) = cell.parse::<f64>() {
                    serde_json::Number::from_f64(f).map_or(serde_json::Value::Null, serde_json::Value::Number)
                } else {
                    cell.into()
                };
                (h.clone(), v)
            })
            .collect();
        rows.push(serde_json::Value::Object(obj));
    }
    Ok(serde_json::Value::Array(rows))
}

impl Output {
    pub fn new(dir: &Path, format: Format) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), format, files: Vec::new() })
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn write(&mut self, name: String, bytes: &[u8]) -> Result<String> {
        let path = self.dir.join(&name);
        std::fs::write(&path, bytes)?;
        self.files.push(path);
        Ok(name)
    }

    /// A result table produced by a CSV writer; stored as CSV or as a JSON
    /// array with the same column names. Returns the file name.
    pub fn table(&mut self, stem: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        match self.format {
            Format::Csv => self.write(format!("{stem}.csv"), &buf),
            Format::Json => {
                let mut text = serde_json::to_vec_pretty(&csv_to_json(&buf)?)?;
                text.push(b'\n');
                self.write(format!("{stem}.json"), &text)
            }
        }
    }

    pub fn json<T: Serialize>(&mut self, stem: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.write(format!("{stem}.json"), &text).map(drop)
    }

    pub fn raw_json(&mut self, stem: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        buf.push(b'\n');
        self.write(format!("{stem}.json"), &buf).map(drop)
    }

    /// Renders `spec`, whose data file is relative to the output directory.
    pub fn plot(&mut self, stem: &str, spec: PlotSpec) -> Result<()> {
        let spec = PlotSpec { data: DataRef { file: self.dir.join(&spec.data.file), ..spec.data }, ..spec };
        let svg = render_svg(&spec, &load_plot_data(&spec)?)?;
        self.write(format!("{stem}.svg"), svg.as_bytes()).map(drop)
    }
}

fn run_with<T, F>(cfg: &ExperimentConfig, body: F) -> Result<Output>
where
    T: Serialize + DeserializeOwned + Default,
    F: FnOnce(&T, &mut Output) -> Result<()> + Send,
    T: Sync,
{
    let params: T = resolve(cfg)?;
    let mut out = Output::new(&cfg.out_dir, cfg.format)?;
    let manifest = Manifest { command: &cfg.command, code_version: CODE_VERSION, seed: cfg.seed, format: cfg.format, params: &params };
    let text = toml::to_string(&manifest).map_err(|e| LabError::Config(format!("cannot write manifest: {e}")))?;
    std::fs::write(cfg.out_dir.join("manifest.toml"), text)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build().map_err(|e| LabError::Config(e.to_string()))?;
    pool.install(|| body(&params, &mut out))?;
    Ok(out)
}

/// Runs one experiment; returns the written result files (manifest excluded).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let out = match cfg.command.as_str() {
        "akg-verify" => run_with::<AkgVerifyParams, _>(cfg, commands::akg_verify),
        "toygauss-paths" => run_with::<PathExperiment, _>(cfg, commands::toygauss_paths),
        "filter-kd" => run_with::<FilterKdExperiment, _>(cfg, commands::filter_kd),
        "squeeze" => run_with::<SqueezeTrials, _>(cfg, commands::squeeze),
        "two-gram" => run_with::<TwoGramParams, _>(cfg, commands::two_gram),
        "nthr" => run_with::<NthrParams, _>(cfg, commands::nthr),
        "feat-adapt" => run_with::<FeatAdaptParams, _>(cfg, commands::feat_adapt),
        "toy256" => run_with::<Toy256Config, _>(cfg, commands::toy256),
        other => Err(LabError::Config(format!("unknown subcommand {other:?}"))),
    }?;
    Ok(out.files().to_vec())
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let file: ConfigFile = match &cli.global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| LabError::Config(format!("{}: {}", path.display(), e.message())))?
        }
        None => ConfigFile::default(),
    };
    let command = cli.command.name();
    if let Some(c) = &file.command {
        if c != command {
            return Err(LabError::Config(format!("config is for {c:?}, not {command:?}")));
        }
    }
    if let Some(v) = &file.code_version {
        if v != CODE_VERSION {
            eprintln!("warning: config written by version {v}, running {CODE_VERSION}");
        }
    }
    let seed = cli.global.seed.or(file.seed).unwrap_or(0);
    let out_dir = match std::env::var_os(OUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => cli.global.out_dir.clone().or(file.out_dir).unwrap_or_else(|| DEFAULT_OUT.into()),
    };
    let mut params = file.params;
    for (path, value) in cli.command.overrides(seed)? {
        set_path(&mut params, path, value)?;
    }
    Ok(ExperimentConfig {
        command: command.into(),
        seed,
        jobs: cli.global.jobs.or(file.jobs).unwrap_or(0),
        out_dir,
        format: cli.global.format.or(file.format).unwrap_or(Format::Csv),
        params,
    })
}

/// Parses `args` (without the program name), runs the subcommand and
/// returns the process exit code: 0 on success, 1 for usage or validation
/// errors, 2 when the computation diverged.
pub fn dispatch(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(std::iter::once("forcelab".to_string()).chain(args.iter().cloned())) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = build_config(&cli).and_then(|cfg| run_experiment(&cfg));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() { 2 } else { 1 }
        }
    }
}
