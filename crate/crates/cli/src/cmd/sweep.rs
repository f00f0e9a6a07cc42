//! Grids over `c` or weight decay; one independent cell per (value, seed).

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use nrc_lab::dataset::{compute_target_stats, RegressionDataset, TargetMatrix};
use nrc_lab::io::format_f64;
use nrc_lab::metrics::{format_maybe, nrc_report, GammaPolicy, NrcReport, Snapshot};
use nrc_lab::objective::fit_residual;
use nrc_lab::trainer::{r_squared, train_mlp, train_ufm_gd, MlpArch, TrainConfig, TrainTrace};
use nrc_lab::ufm::{solve_closed_form, UfmConfig};
use nrc_lab::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{mlp_paths, train_config, MlpTrainArgs};
use crate::config::{self, Format, Global, LayoutArg};
use crate::data::{load_dataset, load_targets};
use crate::error::{CliError, CliResult};

pub const SWEEP_HEADER: &str = "kind,param,value,seed,step,loss,mse,r2,nrc1,nrc2,nrc3,gamma,whiteness,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    /// Closed-form optimum for each `c`.
    ClosedForm,
    /// Gradient descent on the free-feature objective for each `c`.
    Ufm,
    /// MLP training for each weight decay value.
    Mlp,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub kind: Option<SweepKind>,
    /// Comma-separated grid: `c` values, or weight decay values for `mlp`.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Comma-separated seeds (default: the global seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Hold lambda_w fixed and set lambda_h = c / lambda_w (default: balanced).
    #[arg(long)]
    pub lambda_w: Option<f64>,
    /// Feature dimension for `closed-form` and `ufm` (default 8 n).
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub x: Option<PathBuf>,
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<LayoutArg>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub header: Option<bool>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub penultimate_relu: Option<bool>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
    #[arg(skip)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub format: Option<Format>,
}

enum Problem {
    Targets(TargetMatrix),
    Regression(RegressionDataset, MlpArch),
}

struct Cell {
    value: f64,
    seed: u64,
}

fn metric_fields(r: &NrcReport) -> String {
    format!(
        "{},{},{},{},{}",
        format_f64(r.nrc1),
        format_f64(r.nrc2),
        format_maybe(r.nrc3),
        format_maybe(r.gamma_used),
        format_maybe(r.residual_whiteness)
    )
}

fn trace_rows(prefix: &str, trace: &TrainTrace) -> Vec<String> {
    (0..trace.steps.len())
        .map(|i| {
            format!(
                "{prefix},{},{},{},{},{},ok",
                trace.steps[i],
                format_f64(trace.loss[i]),
                format_f64(trace.mse[i]),
                format_f64(trace.r_squared[i]),
                metric_fields(&trace.nrc_reports[i])
            )
        })
        .collect()
}

fn failure_row(prefix: &str, e: &Error) -> String {
    match e {
        Error::Divergence { step, loss, .. } => {
            format!("{prefix},{step},{},NA,NA,NA,NA,NA,NA,NA,diverged", format_f64(*loss))
        }
        other => {
            let kind = other.to_string();
            let kind = kind.split(':').next().unwrap_or("error");
            format!("{prefix},NA,NA,NA,NA,NA,NA,NA,NA,NA,failed:{kind}")
        }
    }
}

fn ufm_config(c: f64, lambda_w: Option<f64>) -> nrc_lab::Result<UfmConfig> {
    match lambda_w {
        Some(w) => UfmConfig::new(c / w, w),
        None => UfmConfig::balanced(c),
    }
}

fn run_cell(kind: SweepKind, problem: &Problem, cell: &Cell, args: &SweepArgs, tc: &TrainConfig) -> Vec<String> {
    let param = if kind == SweepKind::Mlp { "weight_decay" } else { "c" };
    let kind_name = match kind {
        SweepKind::ClosedForm => "closed-form",
        SweepKind::Ufm => "ufm",
        SweepKind::Mlp => "mlp",
    };
    let prefix = format!("{kind_name},{param},{},{}", format_f64(cell.value), cell.seed);
    let tc = TrainConfig { seed: cell.seed, ..tc.clone() };
    let result: nrc_lab::Result<Vec<String>> = (|| match (kind, problem) {
        (SweepKind::ClosedForm, Problem::Targets(y)) => {
            let cfg = ufm_config(cell.value, args.lambda_w)?;
            let stats = compute_target_stats(y)?;
            let sol = solve_closed_form(&stats, &cfg, y, args.d.unwrap_or(8 * y.dim()), cell.seed)?;
            let e = fit_residual(&sol.features, &sol.weights, &sol.bias, y.values());
            let mse = e.norm_squared() / (2.0 * y.samples() as f64);
            let snap = Snapshot::new(&sol.features, &sol.weights).with_fit(&sol.bias, y.values());
            let report = nrc_report(snap, &stats, Some(&cfg), GammaPolicy::ExactC)?;
            Ok(vec![format!(
                "{prefix},0,{},{},{},{},ok",
                format_f64(sol.loss(y)?),
                format_f64(mse),
                format_f64(r_squared(&e, y.values())),
                metric_fields(&report)
            )])
        }
        (SweepKind::Ufm, Problem::Targets(y)) => {
            let cfg = ufm_config(cell.value, args.lambda_w)?;
            let trace = train_ufm_gd(y, &cfg, &tc, args.d)?;
            Ok(trace_rows(&prefix, &trace))
        }
        (SweepKind::Mlp, Problem::Regression(data, arch)) => {
            let tc = TrainConfig { weight_decay: cell.value, ..tc.clone() };
            let trace = train_mlp(data, arch, &tc, None)?;
            Ok(trace_rows(&prefix, &trace))
        }
        _ => unreachable!("problem is built to match the kind"),
    })();
    result.unwrap_or_else(|e| vec![failure_row(&prefix, &e)])
}

fn thread_count(cells: usize) -> CliResult<usize> {
    match std::env::var("NRC_LAB_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| CliError::usage(format!("NRC_LAB_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(cells),
    }
}

fn cell_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("cells").join(format!("cell_{i:04}.csv"))
}

fn rows_to_json(text: &str) -> String {
    let columns: Vec<&str> = SWEEP_HEADER.split(',').collect();
    let rows: Vec<serde_json::Value> = text
        .lines()
        .map(|line| {
            let obj: serde_json::Map<String, serde_json::Value> = columns
                .iter()
                .zip(line.split(','))
                .map(|(k, v)| {
                    let value = match v.parse::<f64>() {
                        Ok(x) if x.is_finite() => serde_json::json!(x),
                        _ => serde_json::Value::String(v.to_string()),
                    };
                    (k.to_string(), value)
                })
                .collect();
            serde_json::Value::Object(obj)
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("plain data") + "\n"
}

pub fn run(mut args: SweepArgs, global: &Global) -> CliResult<()> {
    args.seed = global.seed;
    args.out = global.out.clone();
    args.format = global.format;
    let mut args = config::merge(&args, args.config.as_deref())?;

    let kind = config::require(args.kind, "kind")?;
    let grid = args.grid.clone().unwrap_or_default();
    if grid.len() < 2 {
        return Err(CliError::usage(format!("sweep needs a grid of at least 2 values, got {}", grid.len())));
    }
    if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(CliError::usage("grid values must be finite and non-negative"));
    }
    if kind == SweepKind::ClosedForm && grid.contains(&0.0) {
        return Err(Error::UseNoRegularizationSolver.into());
    }
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![args.seed.unwrap_or(0)]);
    if seeds.is_empty() {
        return Err(CliError::usage("sweep needs at least one seed"));
    }
    let layout = args.layout.unwrap_or_default();
    let header = args.header.unwrap_or(false);
    let format = args.format.unwrap_or_default();
    let penultimate_relu = args.penultimate_relu.unwrap_or(true);
    let tc = train_config(args.lr, args.steps, args.log_every, args.init_scale, 0, 0.0, penultimate_relu)?;

    let problem = match kind {
        SweepKind::ClosedForm | SweepKind::Ufm => {
            Problem::Targets(load_targets(&config::require(args.y.clone(), "y")?, layout, header)?)
        }
        SweepKind::Mlp => {
            let paths = MlpTrainArgs { data: args.data.clone(), x: args.x.clone(), y: args.y.clone(), ..Default::default() };
            let (x, y) = mlp_paths(&paths)?;
            let data = load_dataset(&x, &y, layout, header)?;
            let hidden = args.hidden.clone().unwrap_or_else(|| vec![64, 64]);
            let arch = MlpArch::new(data.inputs.nrows(), hidden, data.targets.dim())?;
            Problem::Regression(data, arch)
        }
    };

    let cells: Vec<Cell> = grid
        .iter()
        .flat_map(|&value| seeds.iter().map(move |&seed| Cell { value, seed }))
        .collect();
    let dir = config::out_dir(&args.out)?;
    std::fs::create_dir_all(dir.join("cells"))?;
    args.kind = Some(kind);
    args.seeds = Some(seeds);
    args.layout = Some(layout);
    args.header = Some(header);
    args.format = Some(format);
    args.penultimate_relu = Some(penultimate_relu);
    args.lr = Some(tc.learning_rate);
    args.steps = Some(tc.steps);
    args.log_every = Some(tc.log_every);
    args.init_scale = Some(tc.init_scale);
    config::write_resolved(&dir, &args)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(cells.len())?)
        .build()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    let written: Vec<std::io::Result<()>> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, cell)| {
                let rows = run_cell(kind, &problem, cell, &args, &tc);
                let mut text = rows.join("\n");
                text.push('\n');
                std::fs::write(cell_path(&dir, i), text)
            })
            .collect()
    });
    for r in written {
        r?;
    }

    let mut body = String::new();
    for i in 0..cells.len() {
        body.push_str(&std::fs::read_to_string(cell_path(&dir, i))?);
    }
    let failures = body.lines().filter(|l| !l.ends_with(",ok")).count();
    match format {
        Format::Csv => std::fs::write(dir.join("sweep.csv"), format!("{SWEEP_HEADER}\n{body}"))?,
        Format::Json => std::fs::write(dir.join("sweep.json"), rows_to_json(&body))?,
    }
    println!("{} cells, {} rows, {failures} failed", cells.len(), body.lines().count());
    Ok(())
}
