use std::path::PathBuf;

use clap::Args;
use nrc_lab::dataset::{generate_synthetic, MapKind, SyntheticSpec};
use nrc_lab::io::{write_json, write_samples, Layout};
use serde::{Deserialize, Serialize};

use crate::config::{self, Format, Global};
use crate::error::{CliError, CliResult};
use crate::sigma::parse_sigma;

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenArgs {
    /// JSON file with any of these settings; flags win.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Target dimension (defaults to the size of --sigma, else 2).
    #[arg(long)]
    pub n: Option<usize>,
    /// Input dimension.
    #[arg(long)]
    pub d_in: Option<usize>,
    /// Number of samples.
    #[arg(long)]
    pub m: Option<usize>,
    /// Target covariance, e.g. `diag:2,1` or `full:1,0.3;0.3,1` (default identity).
    #[arg(long)]
    pub sigma: Option<String>,
    /// `linear` or `mlp-teacher`.
    #[arg(long)]
    pub map: Option<MapKind>,
    /// Standard deviation of Gaussian noise added before recoloring.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
    #[arg(skip)]
    pub out: Option<PathBuf>,
    #[arg(skip)]
    pub format: Option<Format>,
}

#[derive(Debug, Serialize)]
struct Resolved<'a> {
    n: usize,
    d_in: usize,
    m: usize,
    sigma: &'a str,
    map: MapKind,
    noise: f64,
    seed: u64,
    out: &'a PathBuf,
}

pub fn run(mut args: GenArgs, global: &Global) -> CliResult<()> {
    args.seed = global.seed;
    args.out = global.out.clone();
    args.format = global.format;
    let args = config::merge(&args, args.config.as_deref())?;

    let sigma_text = args.sigma.clone();
    let sigma = match &sigma_text {
        Some(s) => parse_sigma(s)?,
        None => nalgebra::DMatrix::identity(args.n.unwrap_or(2), args.n.unwrap_or(2)),
    };
    if !sigma.is_square() {
        return Err(CliError::usage(format!("--sigma must be square, got {:?}", sigma.shape())));
    }
    let n = args.n.unwrap_or(sigma.nrows());
    if n != sigma.nrows() {
        return Err(CliError::usage(format!(
            "DimensionError: --n {n} does not match the {}x{} covariance",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let spec = SyntheticSpec {
        input_dim: args.d_in.unwrap_or(16),
        target_dim: n,
        num_samples: args.m.unwrap_or(1024),
        target_covariance: sigma,
        map_kind: args.map.unwrap_or(MapKind::Linear),
        noise_std: args.noise.unwrap_or(0.0),
        seed: args.seed.unwrap_or(0),
    };
    let data = generate_synthetic(&spec)?;

    let dir = config::out_dir(&args.out)?;
    write_samples(dir.join("X.csv"), &data.inputs, Layout::SamplesAsRows)?;
    write_samples(dir.join("Y.csv"), data.targets.values(), Layout::SamplesAsRows)?;
    write_json(dir.join("spec.json"), &spec)?;
    let sigma_label = sigma_text.unwrap_or_else(|| format!("iso:{n}:1"));
    config::write_resolved(
        &dir,
        &Resolved {
            n,
            d_in: spec.input_dim,
            m: spec.num_samples,
            sigma: &sigma_label,
            map: spec.map_kind,
            noise: spec.noise_std,
            seed: spec.seed,
            out: &dir,
        },
    )?;
    println!("wrote {} samples (D = {}, n = {n}) to {}", spec.num_samples, spec.input_dim, dir.display());
    Ok(())
}
