//! Command-line front end: `check`, `train`, `eval`, `ablate`, `sweep`.
//!
//! Runs are described by a flat TOML file holding every [`TrainConfig`]
//! key plus data paths; command-line flags override file values. Each run
//! command prints the fully resolved config between
//! [`CONFIG_BEGIN`]/[`CONFIG_END`] marker comments so the block can be saved
//! and replayed. Exit codes: 0 success, 1 domain or validation failure,
//! 2 usage or parse failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::error::{Error, Result};
use crate::experiments::{
    ablation_run, evaluate, lr_sweep, train_and_evaluate, EncoderKind, Task, TrainConfig,
};
use crate::ingest::{
    check_dataset, load_dataset, load_relation_info, read_embedding_store, split_dataset, Dataset,
    EmbeddingStore, SplitSpec,
};
use crate::model::RelationInfo;
use crate::report::{
    published_validation_references, render_ablation, render_report, render_sweep, ReportRow,
};
use crate::synthetic::{token_task, TokenTaskSpec};

pub const CONFIG_BEGIN: &str = "# --- resolved config ---";
pub const CONFIG_END: &str = "# --- end config ---";

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskSource {
    /// FewRel-format files named by `data`, `eval_data` and `relinfo`.
    #[default]
    Dataset,
    /// Generated token task (relation ids `S000`, `S001`, ...). Training
    /// and evaluation share its relations unless a split is configured.
    Synthetic,
}

/// Contents of a run config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub task: TaskSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relinfo: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub train_relations: Vec<String>,
    pub eval_relations: Vec<String>,
    pub synthetic_relations: usize,
    pub synthetic_instances: usize,
    pub synthetic_vocab: usize,
    pub rates: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for CliConfig {
    fn default() -> Self {
        let synth = TokenTaskSpec::default();
        CliConfig {
            train: TrainConfig::default(),
            task: TaskSource::Dataset,
            data: None,
            eval_data: None,
            relinfo: None,
            store: None,
            checkpoint: None,
            out: None,
            train_relations: Vec::new(),
            eval_relations: Vec::new(),
            synthetic_relations: synth.relations,
            synthetic_instances: synth.instances_per_relation,
            synthetic_vocab: synth.vocab_per_relation,
            rates: Vec::new(),
            threads: None,
        }
    }
}

impl CliConfig {
    /// Parses a config document, rejecting keys that do not exist.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: CliConfig = table
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let known: toml::Table =
            toml::Table::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(unknown) = table.keys().find(|k| !known.contains_key(*k)) {
            return Err(Error::Config(format!("unknown config key `{unknown}`")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.task == TaskSource::Dataset {
            if self.data.is_none() {
                return Err(Error::Config(
                    "`data` is required for task = \"dataset\"".into(),
                ));
            }
            if self.relinfo.is_none() {
                return Err(Error::Config(
                    "`relinfo` is required for task = \"dataset\"".into(),
                ));
            }
        }
        if self.train.encoder == EncoderKind::Precomputed && self.store.is_none() {
            return Err(Error::Config(
                "`store` is required for encoder = \"precomputed\"".into(),
            ));
        }
        Ok(())
    }

    fn token_spec(&self) -> TokenTaskSpec {
        TokenTaskSpec {
            relations: self.synthetic_relations,
            instances_per_relation: self.synthetic_instances,
            vocab_per_relation: self.synthetic_vocab,
            ..TokenTaskSpec::default()
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "protofuse",
    version,
    about = "Few-shot relation classification with relation-fused prototypes"
)]
pub struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset file (and optionally a relation info file).
    Check {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        relinfo: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint.
    Train(RunArgs),
    /// Evaluate a checkpoint.
    Eval(RunArgs),
    /// Train and evaluate every fusion rule on the same episode streams.
    Ablate(RunArgs),
    /// Train and evaluate once per learning rate.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated learning rates, e.g. `5e-6,9e-6`.
        #[arg(long, value_delimiter = ',')]
        rates: Vec<f64>,
    },
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub relinfo: Option<PathBuf>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl RunArgs {
    fn resolve(&self, threads: Option<usize>) -> Result<CliConfig> {
        let mut cfg = match &self.config {
            Some(p) => CliConfig::load(p)?,
            None => CliConfig::default(),
        };
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                slot.clone_from(v);
            }
        };
        set(&mut cfg.data, &self.data);
        set(&mut cfg.relinfo, &self.relinfo);
        set(&mut cfg.store, &self.store);
        set(&mut cfg.checkpoint, &self.checkpoint);
        set(&mut cfg.out, &self.out);
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if threads.is_some() {
            cfg.threads = threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Datasets, descriptions and store a run needs.
pub struct LoadedData {
    pub train: Dataset,
    pub eval: Dataset,
    pub relations: BTreeMap<String, RelationInfo>,
    pub store: Option<EmbeddingStore>,
}

impl LoadedData {
    pub fn train_task(&self) -> Task<'_> {
        Task::new(&self.train, &self.relations)
    }

    pub fn eval_task(&self) -> Task<'_> {
        Task::new(&self.eval, &self.relations)
    }
}

pub fn load_data(cfg: &CliConfig) -> Result<LoadedData> {
    let store = match (&cfg.store, cfg.train.encoder) {
        (Some(p), EncoderKind::Precomputed) => Some(read_embedding_store(p)?),
        _ => None,
    };
    let (full, eval_file, relations) = match cfg.task {
        TaskSource::Synthetic => {
            let (ds, info) = token_task(cfg.train.seed, cfg.token_spec())?;
            (ds, None, info)
        }
        TaskSource::Dataset => {
            let data = cfg
                .data
                .as_deref()
                .ok_or_else(|| Error::Config("`data` is required".into()))?;
            let relinfo = cfg
                .relinfo
                .as_deref()
                .ok_or_else(|| Error::Config("`relinfo` is required".into()))?;
            let eval_file = cfg.eval_data.as_deref().map(load_dataset).transpose()?;
            (load_dataset(data)?, eval_file, load_relation_info(relinfo)?)
        }
    };
    let (train, eval) = if !cfg.train_relations.is_empty() || !cfg.eval_relations.is_empty() {
        let spec = SplitSpec::new(
            cfg.train_relations.iter().cloned(),
            cfg.eval_relations.iter().cloned(),
        )?;
        split_dataset(&full, &spec)?
    } else if let Some(eval) = eval_file {
        (full, eval)
    } else {
        if cfg.task == TaskSource::Dataset {
            log::warn!("no eval split configured; evaluating on the training relations");
        }
        (full.clone(), full)
    };
    Ok(LoadedData {
        train,
        eval,
        relations,
        store,
    })
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn echo_config(out: &mut dyn Write, cfg: &CliConfig) -> Result<()> {
    emit(
        out,
        &format!("{CONFIG_BEGIN}\n{}{CONFIG_END}\n", cfg.to_toml()?),
    )
}

fn write_report(out: &mut dyn Write, cfg: &CliConfig, report: &str) -> Result<()> {
    emit(out, report)?;
    if let Some(path) = &cfg.out {
        fs::write(path, report).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_check(out: &mut dyn Write, data: &Path, relinfo: Option<&Path>) -> Result<i32> {
    let report = check_dataset(data)?;
    let mut text = format!(
        "relations: {}\ninstances: {}\n",
        report.instance_counts.len(),
        report.instance_counts.values().sum::<usize>()
    );
    for (id, n) in &report.instance_counts {
        text.push_str(&format!("  {id}: {n}\n"));
    }
    let mut violations = report.violations;
    if let Some(path) = relinfo {
        let infos = load_relation_info(path)?;
        text.push_str(&format!("relation info entries: {}\n", infos.len()));
        for id in report.instance_counts.keys() {
            if !infos.contains_key(id) {
                violations.push(format!("relation `{id}` has no relation info entry"));
            }
        }
    }
    text.push_str(&format!("violations: {}\n", violations.len()));
    for v in &violations {
        text.push_str(&format!("  {v}\n"));
    }
    emit(out, &text)?;
    Ok(if violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_DOMAIN
    })
}

fn cmd_train(out: &mut dyn Write, cfg: &CliConfig) -> Result<i32> {
    let checkpoint = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("train needs --checkpoint".into()))?;
    echo_config(out, cfg)?;
    let data = load_data(cfg)?;
    let (model, report, results) = train_and_evaluate(
        &cfg.train,
        data.train_task(),
        data.eval_task(),
        data.store.as_ref(),
    )?;
    write_checkpoint(&model, &cfg.train, checkpoint)?;
    let mut text = String::new();
    if let (Some(first), Some(last)) = (report.loss_curve.first(), report.loss_curve.last()) {
        text.push_str(&format!(
            "train loss: {first:.4} -> {last:.4} over {} iterations\n",
            report.loss_curve.len()
        ));
    }
    text.push_str(&format!("checkpoint: {}\n\n", checkpoint.display()));
    text.push_str(&render_report(
        &[ReportRow {
            label: cfg.train.fusion.label().to_string(),
            results,
        }],
        &published_validation_references(),
    ));
    write_report(out, cfg, &text)?;
    Ok(EXIT_OK)
}

fn cmd_eval(out: &mut dyn Write, cfg: &CliConfig) -> Result<i32> {
    let checkpoint = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Config("eval needs --checkpoint".into()))?;
    echo_config(out, cfg)?;
    let data = load_data(cfg)?;
    let (model, _) = read_checkpoint(checkpoint, data.store.as_ref())?;
    let results = cfg
        .train
        .eval_settings()
        .into_iter()
        .map(|s| {
            evaluate(
                &model,
                data.eval_task(),
                s,
                cfg.train.q_query,
                cfg.train.eval_iters,
                cfg.train.seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let report = render_report(
        &[ReportRow {
            label: model.fusion.kind().label().to_string(),
            results,
        }],
        &published_validation_references(),
    );
    write_report(out, cfg, &report)?;
    Ok(EXIT_OK)
}

fn cmd_ablate(out: &mut dyn Write, cfg: &CliConfig) -> Result<i32> {
    echo_config(out, cfg)?;
    let data = load_data(cfg)?;
    let table = ablation_run(
        &cfg.train,
        data.train_task(),
        data.eval_task(),
        data.store.as_ref(),
    )?;
    write_report(out, cfg, &render_ablation(&table))?;
    Ok(EXIT_OK)
}

fn cmd_sweep(out: &mut dyn Write, cfg: &CliConfig) -> Result<i32> {
    echo_config(out, cfg)?;
    let data = load_data(cfg)?;
    let table = lr_sweep(
        &cfg.train,
        &cfg.rates,
        data.train_task(),
        data.eval_task(),
        data.store.as_ref(),
    )?;
    write_report(out, cfg, &render_sweep(&table))?;
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Check { data, relinfo } => cmd_check(out, &data, relinfo.as_deref()),
        Command::Train(args) => cmd_train(out, &args.resolve(cli.threads)?),
        Command::Eval(args) => cmd_eval(out, &args.resolve(cli.threads)?),
        Command::Ablate(args) => cmd_ablate(out, &args.resolve(cli.threads)?),
        Command::Sweep { run, rates } => {
            let mut cfg = run.resolve(cli.threads)?;
            if !rates.is_empty() {
                cfg.rates = rates;
            }
            cmd_sweep(out, &cfg)
        }
    }
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::debug!("thread pool already configured: {e}");
        }
    }
}

/// Runs the CLI on `args` (including the program name), writing normal
/// output to `out` and diagnostics to stderr. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    configure_threads(cli.threads);
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_parse_failure() {
                EXIT_USAGE
            } else {
                EXIT_DOMAIN
            }
        }
    }
}

/// Extracts the resolved-config block from command output.
pub fn extract_resolved_config(output: &str) -> Option<String> {
    let start = output.find(CONFIG_BEGIN)? + CONFIG_BEGIN.len();
    let end = output[start..].find(CONFIG_END)? + start;
    Some(output[start..end].trim_start_matches('\n').to_string())
}
