use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use nrc_lab::dataset::compute_target_stats;
use nrc_lab::io::format_f64;
use nrc_lab::trainer::{train_mlp, train_ufm_gd, MlpArch, TrainConfig, TrainTrace};
use nrc_lab::ufm::{optimal_loss, save_solution_dir, SolutionMeta, UfmConfig};
use serde::{Deserialize, Serialize};

use super::resolve_ufm;
use crate::config::{self, Format, Global, LayoutArg};
use crate::data::{load_dataset, load_targets};
use crate::error::CliResult;

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    /// Gradient descent on free features, weights and bias.
    Ufm(UfmTrainArgs),
    /// Full-batch training of a ReLU network on (X, Y).
    Mlp(MlpTrainArgs),
}

/// Optimizer settings with library defaults for anything unset.
pub fn train_config(
    lr: Option<f64>,
    steps: Option<usize>,
    log_every: Option<usize>,
    init_scale: Option<f64>,
    seed: u64,
    weight_decay: f64,
    penultimate_relu: bool,
) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let tc = TrainConfig {
        learning_rate: lr.unwrap_or(d.learning_rate),
        steps: steps.unwrap_or(d.steps),
        log_every: log_every.unwrap_or(d.log_every),
        seed,
        init_scale: init_scale.unwrap_or(d.init_scale),
        weight_decay,
        penultimate_relu,
    };
    tc.validate()?;
    Ok(tc)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UfmTrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<LayoutArg>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub header: Option<bool>,
    #[arg(long)]
    pub lambda_h: Option<f64>,
    #[arg(long)]
    pub lambda_w: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Feature dimension (default 8 n).
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Standard deviation of the Gaussian initialization.
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
    #[arg(skip)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpTrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Directory holding `X.csv` and `Y.csv` as written by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Inputs CSV (overrides --data).
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Targets CSV (overrides --data).
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<LayoutArg>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub header: Option<bool>,
    /// Hidden widths, e.g. `64,64`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Weight decay on every parameter.
    #[arg(long)]
    pub wd: Option<f64>,
    /// Feature penalty instead of weight decay (needs --ufm-lambda-w too).
    #[arg(long)]
    pub ufm_lambda_h: Option<f64>,
    #[arg(long)]
    pub ufm_lambda_w: Option<f64>,
    /// Apply ReLU to the last hidden layer (default true).
    #[arg(long)]
    pub penultimate_relu: Option<bool>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Standard deviation of the Gaussian initialization.
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
    #[arg(skip)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub format: Option<Format>,
}

#[derive(Debug, Serialize)]
struct ResolvedUfm<'a> {
    y: &'a PathBuf,
    layout: LayoutArg,
    header: bool,
    lambda_h: f64,
    lambda_w: f64,
    c: f64,
    d: usize,
    train: &'a TrainConfig,
    out: &'a PathBuf,
    format: Format,
}

#[derive(Debug, Serialize)]
struct ResolvedMlp<'a> {
    x: &'a PathBuf,
    y: &'a PathBuf,
    layout: LayoutArg,
    header: bool,
    arch: &'a MlpArch,
    ufm_reg: Option<UfmConfig>,
    train: &'a TrainConfig,
    out: &'a PathBuf,
    format: Format,
}

pub fn run(cmd: TrainCommand, global: &Global) -> CliResult<()> {
    match cmd {
        TrainCommand::Ufm(args) => run_ufm(args, global),
        TrainCommand::Mlp(args) => run_mlp(args, global),
    }
}

/// Trace rows as CSV or a JSON array.
pub fn trace_text(trace: &TrainTrace, format: Format) -> String {
    match format {
        Format::Csv => trace.to_csv(),
        Format::Json => {
            let rows: Vec<serde_json::Value> = (0..trace.steps.len())
                .map(|i| {
                    let mut v = trace.nrc_reports[i].to_json();
                    v["step"] = trace.steps[i].into();
                    v["loss"] = trace.loss[i].into();
                    v["mse"] = trace.mse[i].into();
                    v["r2"] = trace.r_squared[i].into();
                    v
                })
                .collect();
            serde_json::to_string_pretty(&rows).expect("plain data") + "\n"
        }
    }
}

fn trace_file_name(format: Format) -> &'static str {
    match format {
        Format::Csv => "trace.csv",
        Format::Json => "trace.json",
    }
}

fn save_final(dir: &Path, trace: &TrainTrace, cfg: Option<&UfmConfig>, seed: u64) -> CliResult<()> {
    let (h, w, b) = trace.final_state.last_layer();
    let meta = SolutionMeta {
        active_rank: None,
        c: cfg.map_or(0.0, UfmConfig::c),
        lambda_h: cfg.map_or(0.0, UfmConfig::lambda_h),
        lambda_w: cfg.map_or(0.0, UfmConfig::lambda_w),
        rotation_seed: Some(seed),
        loss: trace.final_loss(),
        source: "gradient_descent".into(),
    };
    save_solution_dir(dir.join("final"), w, h, b, &meta)?;
    Ok(())
}

fn run_ufm(mut args: UfmTrainArgs, global: &Global) -> CliResult<()> {
    args.seed = global.seed;
    args.out = global.out.clone();
    args.format = global.format;
    let args = config::merge(&args, args.config.as_deref())?;

    let y_path = config::require(args.y.clone(), "y")?;
    let layout = args.layout.unwrap_or_default();
    let header = args.header.unwrap_or(false);
    let format = args.format.unwrap_or_default();
    let seed = args.seed.unwrap_or(0);
    let cfg = resolve_ufm(args.lambda_h, args.lambda_w, args.c)?;
    let tc = train_config(args.lr, args.steps, args.log_every, args.init_scale, seed, 0.0, true)?;
    let y = load_targets(&y_path, layout, header)?;
    let d = args.d.unwrap_or(8 * y.dim());
    let dir = config::out_dir(&args.out)?;
    config::write_resolved(
        &dir,
        &ResolvedUfm {
            y: &y_path,
            layout,
            header,
            lambda_h: cfg.lambda_h(),
            lambda_w: cfg.lambda_w(),
            c: cfg.c(),
            d,
            train: &tc,
            out: &dir,
            format,
        },
    )?;

    let trace = train_ufm_gd(&y, &cfg, &tc, Some(d))?;
    std::fs::write(dir.join(trace_file_name(format)), trace_text(&trace, format))?;
    save_final(&dir, &trace, Some(&cfg), seed)?;
    let stats = compute_target_stats(&y)?;
    println!("final loss = {}", format_f64(trace.final_loss()));
    println!("optimal_loss = {}", format_f64(optimal_loss(&stats, &cfg)));
    let r = trace.final_report();
    println!("nrc1 = {}, nrc2 = {}, nrc3 = {}", format_f64(r.nrc1), format_f64(r.nrc2), nrc_lab::metrics::format_maybe(r.nrc3));
    Ok(())
}

fn run_mlp(mut args: MlpTrainArgs, global: &Global) -> CliResult<()> {
    args.seed = global.seed;
    args.out = global.out.clone();
    args.format = global.format;
    let args = config::merge(&args, args.config.as_deref())?;

    let (x_path, y_path) = mlp_paths(&args)?;
    let layout = args.layout.unwrap_or_default();
    let header = args.header.unwrap_or(false);
    let format = args.format.unwrap_or_default();
    let seed = args.seed.unwrap_or(0);
    let ufm_reg = match (args.ufm_lambda_h, args.ufm_lambda_w) {
        (None, None) => None,
        (Some(h), Some(w)) => Some(UfmConfig::new(h, w)?),
        _ => return Err(crate::error::CliError::usage("--ufm-lambda-h and --ufm-lambda-w go together")),
    };
    let tc = train_config(
        args.lr,
        args.steps,
        args.log_every,
        args.init_scale,
        seed,
        args.wd.unwrap_or(0.0),
        args.penultimate_relu.unwrap_or(true),
    )?;
    let data = load_dataset(&x_path, &y_path, layout, header)?;
    let hidden = args.hidden.clone().unwrap_or_else(|| vec![64, 64]);
    let arch = MlpArch::new(data.inputs.nrows(), hidden, data.targets.dim())?;
    let dir = config::out_dir(&args.out)?;
    config::write_resolved(
        &dir,
        &ResolvedMlp {
            x: &x_path,
            y: &y_path,
            layout,
            header,
            arch: &arch,
            ufm_reg,
            train: &tc,
            out: &dir,
            format,
        },
    )?;

    let trace = train_mlp(&data, &arch, &tc, ufm_reg)?;
    std::fs::write(dir.join(trace_file_name(format)), trace_text(&trace, format))?;
    if let nrc_lab::trainer::FinalState::Mlp { params, .. } = &trace.final_state {
        params.save(dir.join("params"), &arch, tc.penultimate_relu)?;
    }
    save_final(&dir, &trace, ufm_reg.as_ref(), seed)?;
    let r = trace.final_report();
    println!("final loss = {}", format_f64(trace.final_loss()));
    println!(
        "r2 = {}, nrc1 = {}, nrc2 = {}, nrc3 = {}",
        format_f64(*trace.r_squared.last().expect("non-empty trace")),
        format_f64(r.nrc1),
        format_f64(r.nrc2),
        nrc_lab::metrics::format_maybe(r.nrc3)
    );
    Ok(())
}

pub fn mlp_paths(args: &MlpTrainArgs) -> CliResult<(PathBuf, PathBuf)> {
    let from_dir = |name: &str| args.data.as_ref().map(|d| d.join(name));
    let x = config::require(args.x.clone().or_else(|| from_dir("X.csv")), "x or data")?;
    let y = config::require(args.y.clone().or_else(|| from_dir("Y.csv")), "y or data")?;
    Ok((x, y))
}
