//! The `dpalign` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid configuration, 3 runtime
//! failure. Flags given on the command line override the matching keys of
//! the configuration file, which override the built-in defaults.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{gain_table_csv, marginal_gains, render_gain_table, GainColumn, ResultCell, ResultsTable};
use crate::config::RunConfig;
use crate::data::{generate_held_out_triples, generate_synthetic_preferences, save_jsonl, GeneratorConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_on_task, pairwise_accuracy, sweep, Evaluation, SweepCurve};
use crate::pipeline::{run_pipeline, PipelineReport};
use crate::privacy::{
    epsilon_for_sigma, phase_budget_report, sigma_for_budget, AccountantConfig, Epsilon, NoiseCalibration,
    PrivacyBudget,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "dpalign", version, about = "Differentially private alignment on tiny policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic preference dataset as JSONL.
    GenerateData(GenerateArgs),
    /// Run one pipeline and write checkpoints plus a JSON report.
    Train(TrainArgs),
    /// Train and evaluate over a grid of epsilons and seeds.
    Sweep(SweepArgs),
    /// Marginal gains of a sweep curve or of rows of a results table.
    Analyze(AnalyzeArgs),
    /// Convert between a privacy budget and a noise multiplier.
    Accountant(AccountantArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = GeneratorConfig::default().n)]
    n: usize,
    #[arg(long, default_value_t = GeneratorConfig::default().vocab_size)]
    vocab: usize,
    #[arg(long, default_value_t = GeneratorConfig::default().prompt_len)]
    prompt_len: usize,
    #[arg(long, default_value_t = GeneratorConfig::default().response_len)]
    response_len: usize,
    #[arg(long, default_value_t = GeneratorConfig::default().held_out_fraction)]
    held_out_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    epsilon: Option<Epsilon>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for `policy.ckpt`, `reward.ckpt` and `report.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated, e.g. `0,1,2,3,4,5,10,inf`.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<Epsilon>>,
    /// A seed count `N` (seeds `0..N`) or a comma-separated list.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    /// Directory for `curve.json` and `results.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// A `curve.json` from `sweep` or a results-table CSV.
    input: PathBuf,
    /// Results-table row selection; defaults to the first row's model.
    #[arg(long)]
    model: Option<String>,
    /// Defaults to the first row's method.
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated optimizers, one column each; defaults to every
    /// optimizer of the selected model and method.
    #[arg(long)]
    optimizers: Option<String>,
    /// Optimizer whose deltas drive the trend column; defaults to the last.
    #[arg(long)]
    trend_from: Option<String>,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AccountantArgs {
    #[arg(long, conflicts_with = "sigma", required_unless_present_any = ["sigma", "phase_epsilons"])]
    epsilon: Option<Epsilon>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 1)]
    epochs: u32,
    /// Per-phase epsilons, comma-separated, to print a composed budget table.
    #[arg(long, value_delimiter = ',')]
    phase_epsilons: Option<Vec<Epsilon>>,
    /// Phases share data, so budgets add instead of taking the maximum.
    #[arg(long)]
    overlapping: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::GenerateData(a) => cmd_generate_data(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Analyze(a) => cmd_analyze(&a, out),
        Command::Accountant(a) => cmd_accountant(&a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn load_config(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let config = RunConfig::parse(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

fn cmd_generate_data(a: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let config = GeneratorConfig {
        n: a.n,
        vocab_size: a.vocab,
        prompt_len: a.prompt_len,
        response_len: a.response_len,
        held_out_fraction: a.held_out_fraction,
        seed: a.seed,
    };
    let v = config.violations();
    if !v.is_empty() {
        return Err(Error::Config(v.into_iter().map(|(k, m)| format!("{k}: {m}")).collect()));
    }
    let dataset = generate_synthetic_preferences(&config)?;
    save_jsonl(&dataset, &a.out)?;
    let _ = writeln!(out, "wrote {} triples to {}", dataset.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    config: RunConfig,
    pipeline: PipelineReport,
    initial: Evaluation,
    sft: Evaluation,
    aligned: Evaluation,
    /// Held-out pairwise accuracy of the trained reward model.
    reward_accuracy: Option<f64>,
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let (mut config, base) = load_config(&a.config)?;
    if let Some(e) = a.epsilon {
        config.epsilon = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let spec = config.pipeline_spec()?;
    let dataset = config.dataset(&base)?;
    let result = run_pipeline(&spec, &dataset)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    result.policy.to_checkpoint()?.save(&a.out.join("policy.ckpt"))?;
    let mut reward_accuracy = None;
    if let Some(rm) = &result.reward_model {
        rm.to_checkpoint()?.save(&a.out.join("reward.ckpt"))?;
        if let Some(meta) = &dataset.metadata {
            let triples = generate_held_out_triples(meta, 2000, config.seed)?;
            reward_accuracy = Some(pairwise_accuracy(rm, &triples)?);
        }
    }
    let report = TrainReport {
        initial: evaluate_on_task(&result.initial_policy, &dataset, &config.eval)?,
        sft: evaluate_on_task(&result.sft_policy, &dataset, &config.eval)?,
        aligned: evaluate_on_task(&result.policy, &dataset, &config.eval)?,
        pipeline: result.report,
        reward_accuracy,
        config,
    };
    write_file(&a.out.join("report.json"), &to_json(&report))?;
    let r = &report.pipeline;
    let _ = writeln!(
        out,
        "{} pipeline, {} phases, partitions {:?} (disjoint: {}), overall epsilon {}{}",
        r.kind.label(),
        r.phases.len(),
        r.partition_sizes,
        r.partitions_disjoint,
        r.budget.overall.epsilon,
        if r.pure_noise { ", pure-noise mode" } else { "" }
    );
    let _ = writeln!(
        out,
        "held-out reward: initial {:.4}, after SFT {:.4}, aligned {:.4}",
        report.initial.mean, report.sft.mean, report.aligned.mean
    );
    if let Some(acc) = report.reward_accuracy {
        let _ = writeln!(out, "reward model pairwise accuracy {acc:.4}");
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let parse = |p: &str| p.trim().parse::<u64>().map_err(|_| format!("cannot parse seed `{p}`"));
    if s.contains(',') {
        s.split(',').map(parse).collect::<std::result::Result<_, _>>().map(Seeds)
    } else {
        Ok(Seeds((0..parse(s)?).collect()))
    }
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let (mut config, base) = load_config(&a.config)?;
    if let Some(e) = &a.epsilons {
        config.sweep.epsilons = e.clone();
    }
    if let Some(s) = &a.seeds {
        config.sweep.seeds = s.0.clone();
    }
    let spec = config.pipeline_spec()?;
    let dataset = config.dataset(&base)?;
    let curve = sweep(&spec, &config.sweep.epsilons, &config.sweep.seeds, &dataset, &config.eval)?;
    let optimizer = spec.phases.last().expect("pipelines have phases").optimizer.variant.label();
    let cells: Vec<ResultCell> = curve
        .points
        .iter()
        .map(|p| ResultCell {
            model: "tiny".into(),
            optimizer: optimizer.into(),
            method: spec.kind.label().into(),
            epsilon: p.epsilon,
            value: p.mean_reward,
        })
        .collect();
    let table = ResultsTable::from_cells(&cells)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    write_file(&a.out.join("curve.json"), &to_json(&curve))?;
    table.save(&a.out.join("results.csv"))?;
    for p in &curve.points {
        let _ = writeln!(
            out,
            "epsilon {:>4}  sigma {:>9.4}{}  reward {:.4} +- {:.4} ({} seeds)",
            p.epsilon.label(),
            p.noise_multiplier,
            if p.pure_noise { " (pure noise)" } else { "" },
            p.mean_reward,
            p.std_err,
            p.seeds
        );
    }
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(&a.input).map_err(io_err(&a.input))?;
    let is_json = text.trim_start().starts_with('{');
    let mut labels = Vec::new();
    let mut reports = Vec::new();
    if is_json {
        let curve: SweepCurve = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: a.input.clone(), line: e.line(), detail: e.to_string() })?;
        labels.push("f".to_string());
        reports.push(marginal_gains(&curve)?);
    } else {
        let table = ResultsTable::parse_csv(&text, &a.input)?;
        let first = table.rows.first().ok_or_else(|| Error::invalid("results table has no rows"))?;
        let model = a.model.clone().unwrap_or_else(|| first.model.clone());
        let method = a.method.clone().unwrap_or_else(|| first.method.clone());
        let optimizers: Vec<String> = match &a.optimizers {
            Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
            None => table
                .rows
                .iter()
                .filter(|r| r.model.eq_ignore_ascii_case(&model) && r.method.eq_ignore_ascii_case(&method))
                .map(|r| r.optimizer.clone())
                .collect(),
        };
        if optimizers.is_empty() {
            return Err(Error::invalid(format!("no rows for model {model}, method {method}")));
        }
        for opt in optimizers {
            let row = table
                .row(&model, &opt, &method)
                .ok_or_else(|| Error::invalid(format!("no row for {model} / {opt} / {method}")))?;
            reports.push(marginal_gains(&table.curve(row)?)?);
            labels.push(row.optimizer.clone());
        }
        let _ = writeln!(out, "{model} / {method}");
    }
    let trend_from = match &a.trend_from {
        None => labels.len() - 1,
        Some(name) => labels
            .iter()
            .position(|l| l.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::invalid(format!("trend column `{name}` is not among {labels:?}")))?,
    };
    let columns: Vec<GainColumn<'_>> = labels
        .iter()
        .zip(&reports)
        .map(|(label, report)| GainColumn { label, report })
        .collect();
    let _ = write!(out, "{}", render_gain_table(&columns, trend_from)?);
    if let Some(path) = &a.out {
        write_file(path, &gain_table_csv(&columns, trend_from)?)?;
    }
    Ok(())
}

fn cmd_accountant(a: &AccountantArgs, out: &mut dyn Write) -> Result<()> {
    let acct = AccountantConfig::new(a.epochs)?;
    if let Some(eps) = a.epsilon {
        let budget = PrivacyBudget::new(eps, a.delta)?;
        match sigma_for_budget(&budget, &acct)? {
            NoiseCalibration::PureNoise => {
                let _ = writeln!(out, "sigma pure-noise (epsilon 0 releases no gradient signal)");
            }
            NoiseCalibration::Multiplier(s) => {
                let _ = writeln!(out, "sigma {s}");
            }
        }
    }
    if let Some(sigma) = a.sigma {
        let eps = if sigma == 0.0 {
            f64::INFINITY
        } else {
            epsilon_for_sigma(sigma, a.delta, &acct)?
        };
        let _ = writeln!(out, "epsilon {}", Epsilon::new(eps)?);
    }
    if let Some(list) = &a.phase_epsilons {
        let budgets = list
            .iter()
            .map(|&e| PrivacyBudget::new(e, a.delta))
            .collect::<Result<Vec<_>>>()?;
        let report = phase_budget_report(&budgets, !a.overlapping)?;
        let _ = write!(out, "{}\n{}", report.to_text(), report.to_csv());
    }
    Ok(())
}
