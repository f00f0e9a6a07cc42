use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::{DMatrix, DVector};
use nrc_lab::dataset::compute_target_stats;
use nrc_lab::io::{load_matrix, Layout};
use nrc_lab::metrics::{nrc_report, report_csv_header, report_csv_row, GammaPolicy, NrcReport, Snapshot};
use nrc_lab::ufm::load_solution_dir;
use serde::{Deserialize, Serialize};

use super::{format_report, report_file_name, resolve_ufm};
use crate::config::{self, Format, Global, LayoutArg};
use crate::data::{load_samples, load_targets};
use crate::error::{require_file, CliError, CliResult};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Solution directory with `W.csv`, `H.csv` and `b.csv`.
    #[arg(long)]
    pub solution: Option<PathBuf>,
    /// Features CSV, one sample per row unless --layout cols.
    #[arg(long)]
    pub h: Option<PathBuf>,
    /// Weights CSV, `n` rows by `d` columns.
    #[arg(long)]
    pub w: Option<PathBuf>,
    /// Bias CSV, one value per line.
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Targets CSV.
    #[arg(long)]
    pub y: Option<PathBuf>,
    #[arg(long)]
    pub layout: Option<LayoutArg>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub header: Option<bool>,
    /// `auto`, `exact-c` or a positive number (default auto).
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub lambda_h: Option<f64>,
    #[arg(long)]
    pub lambda_w: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    /// Append one CSV row to this file, writing the header if it is new.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Step value recorded in the log row.
    #[arg(long)]
    pub step: Option<usize>,
    #[arg(skip)]
    pub seed: Option<u64>,
    #[arg(skip)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub format: Option<Format>,
}

fn load_plain(path: &Path) -> CliResult<DMatrix<f64>> {
    require_file(path)?;
    Ok(load_matrix(path, Layout::SamplesAsColumns, false)?.storage)
}

fn append_log(path: &Path, step: usize, report: &NrcReport) -> CliResult<()> {
    let header = report_csv_header(report.evr.len());
    let existing = std::fs::read_to_string(path).unwrap_or_default();
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    match existing.lines().next() {
        None => writeln!(file, "{header}")?,
        Some(first) if first != header => {
            return Err(CliError::usage(format!(
                "log {} has header `{first}`, this report needs `{header}`",
                path.display()
            )))
        }
        Some(_) => {}
    }
    writeln!(file, "{}", report_csv_row(step, report))?;
    Ok(())
}

pub fn run(mut args: MetricsArgs, global: &Global) -> CliResult<()> {
    args.seed = global.seed;
    args.out = global.out.clone();
    args.format = global.format;
    let args = config::merge(&args, args.config.as_deref())?;

    let layout = args.layout.unwrap_or_default();
    let header = args.header.unwrap_or(false);
    let format = args.format.unwrap_or_default();
    let y = load_targets(&config::require(args.y.clone(), "y")?, layout, header)?;
    let (h, w, b): (DMatrix<f64>, DMatrix<f64>, Option<DVector<f64>>) = match &args.solution {
        Some(dir) => {
            require_file(&dir.join("W.csv"))?;
            let (w, h, b, _) = load_solution_dir(dir)?;
            (h, w, Some(b))
        }
        None => {
            let h = load_samples(&config::require(args.h.clone(), "h")?, layout, header)?;
            let w = load_plain(&config::require(args.w.clone(), "w")?)?;
            let b = match &args.b {
                Some(p) => {
                    let m = load_plain(p)?;
                    Some(DVector::from_iterator(m.len(), m.iter().copied()))
                }
                None => None,
            };
            (h, w, b)
        }
    };
    if h.ncols() != y.samples() {
        return Err(CliError::usage(format!(
            "DimensionError: H has {} samples but Y has {}",
            h.ncols(),
            y.samples()
        )));
    }
    if let Some(b) = &b {
        if b.len() != y.dim() {
            return Err(CliError::usage(format!("DimensionError: b has length {} but n = {}", b.len(), y.dim())));
        }
    }
    let cfg = if args.lambda_h.is_none() && args.lambda_w.is_none() && args.c.is_none() {
        None
    } else {
        Some(resolve_ufm(args.lambda_h, args.lambda_w, args.c)?)
    };
    let policy: GammaPolicy = args.gamma.as_deref().unwrap_or("auto").parse()?;
    let stats = compute_target_stats(&y)?;
    let mut snap = Snapshot::new(&h, &w);
    if let Some(b) = &b {
        snap = snap.with_fit(b, y.values());
    }
    let report = nrc_report(snap, &stats, cfg.as_ref(), policy)?;
    let step = args.step.unwrap_or(0);
    let text = format_report(&report, step, format);
    print!("{text}");
    if let Some(log) = &args.log {
        append_log(log, step, &report)?;
    }
    if args.out.is_some() {
        let dir = config::out_dir(&args.out)?;
        std::fs::write(dir.join(report_file_name(format)), &text)?;
        let mut resolved = args.clone();
        resolved.layout = Some(layout);
        resolved.header = Some(header);
        resolved.gamma = Some(args.gamma.clone().unwrap_or_else(|| "auto".into()));
        resolved.step = Some(step);
        resolved.format = Some(format);
        config::write_resolved(&dir, &resolved)?;
    }
    Ok(())
}
