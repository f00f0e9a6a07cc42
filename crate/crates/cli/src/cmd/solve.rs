use std::path::PathBuf;

use clap::Args;
use nalgebra::DVector;
use nrc_lab::dataset::compute_target_stats;
use nrc_lab::io::format_f64;
use nrc_lab::metrics::{nrc_report, GammaPolicy, Snapshot};
use nrc_lab::ufm::{
    optimal_loss, save_solution_dir, solve_closed_form, solve_no_regularization, SolutionMeta, UfmConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{format_report, report_file_name, resolve_ufm};
use crate::config::{self, Format, Global, LayoutArg};
use crate::data::load_targets;
use crate::error::CliResult;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Targets CSV.
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Sample orientation of the CSV.
    #[arg(long)]
    pub layout: Option<LayoutArg>,
    /// Skip a header line.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub header: Option<bool>,
    #[arg(long)]
    pub lambda_h: Option<f64>,
    #[arg(long)]
    pub lambda_w: Option<f64>,
    /// `lambda_h * lambda_w`; alone it means both equal `sqrt(c)`.
    #[arg(long)]
    pub c: Option<f64>,
    /// Feature dimension (default 8 n).
    #[arg(long)]
    pub d: Option<usize>,
    /// `auto`, `exact-c` or a positive number (default exact-c).
    #[arg(long)]
    pub gamma: Option<String>,
    /// Build a zero-loss unregularized solution from a seeded W and Z instead.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_reg: Option<bool>,
    #[arg(skip)]
    pub seed: Option<u64>,
    #[arg(skip)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub format: Option<Format>,
}

#[derive(Debug, Serialize)]
struct Resolved<'a> {
    y: &'a PathBuf,
    layout: LayoutArg,
    header: bool,
    lambda_h: f64,
    lambda_w: f64,
    c: f64,
    d: usize,
    gamma: &'a str,
    no_reg: bool,
    seed: u64,
    out: &'a PathBuf,
    format: Format,
}

pub fn run(mut args: SolveArgs, global: &Global) -> CliResult<()> {
    args.seed = global.seed;
    args.out = global.out.clone();
    args.format = global.format;
    let args = config::merge(&args, args.config.as_deref())?;

    let y_path = config::require(args.y.clone(), "y")?;
    let layout = args.layout.unwrap_or_default();
    let header = args.header.unwrap_or(false);
    let no_reg = args.no_reg.unwrap_or(false);
    let seed = args.seed.unwrap_or(0);
    let format = args.format.unwrap_or_default();
    let gamma_text = args.gamma.clone().unwrap_or_else(|| "exact-c".into());
    let y = load_targets(&y_path, layout, header)?;
    let stats = compute_target_stats(&y)?;
    let n = y.dim();
    let d = args.d.unwrap_or(8 * n);
    let cfg = if no_reg {
        UfmConfig::unregularized()
    } else {
        resolve_ufm(args.lambda_h, args.lambda_w, args.c)?
    };
    let mut policy: GammaPolicy = gamma_text.parse()?;
    if no_reg && policy == GammaPolicy::ExactC {
        policy = GammaPolicy::Auto;
    }
    let dir = config::out_dir(&args.out)?;
    let resolved = Resolved {
        y: &y_path,
        layout,
        header,
        lambda_h: cfg.lambda_h(),
        lambda_w: cfg.lambda_w(),
        c: cfg.c(),
        d,
        gamma: &gamma_text,
        no_reg,
        seed,
        out: &dir,
        format,
    };

    let (w, h, b, meta) = if no_reg {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: usize, c: usize| nalgebra::DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
        let w = draw(n, d);
        let z = draw(d, y.samples());
        let sol = solve_no_regularization(&y, &w, &z)?;
        let loss = sol.fit_loss(&y);
        println!("zero-loss unregularized solution: fit loss = {}", format_f64(loss));
        let meta = SolutionMeta {
            active_rank: None,
            c: 0.0,
            lambda_h: 0.0,
            lambda_w: 0.0,
            rotation_seed: Some(seed),
            loss,
            source: "no_regularization".into(),
        };
        (sol.weights, sol.features, DVector::zeros(n), meta)
    } else {
        let sol = solve_closed_form(&stats, &cfg, &y, d, seed)?;
        let meta = sol.meta(&y)?;
        println!("optimal_loss = {}", format_f64(optimal_loss(&stats, &cfg)));
        println!("loss = {}", format_f64(meta.loss));
        println!("j* = {}", sol.active_rank);
        if sol.is_degenerate() {
            println!("degenerate optimum (W,H,b)=(0,0,ȳ)");
        }
        for w in &sol.warnings {
            eprintln!("warning: {}", serde_json::to_string(w).expect("plain data"));
        }
        (sol.weights, sol.features, sol.bias, meta)
    };

    save_solution_dir(&dir, &w, &h, &b, &meta)?;
    let report_cfg = (!no_reg).then_some(cfg);
    let report = nrc_report(Snapshot::new(&h, &w).with_fit(&b, y.values()), &stats, report_cfg.as_ref(), policy)?;
    let text = format_report(&report, 0, format);
    std::fs::write(dir.join(report_file_name(format)), &text)?;
    print!("{text}");
    config::write_resolved(&dir, &resolved)
}
