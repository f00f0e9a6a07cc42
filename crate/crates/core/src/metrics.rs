//! Neural regression collapse metrics.
//!
//! * NRC1: mean squared distance of unit-normalized features to the span of
//!   the top-`n` principal components of `H`.
//! * NRC2: the same distance to the row space of `W`.
//! * NRC3: squared distance between `W W^T` and `Sigma^{1/2} - sqrt(gamma) I`,
//!   both scaled to unit Frobenius norm.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::TargetStats;
use crate::error::{Error, Result, Warning};
use crate::linalg;
use crate::objective::fit_residual;
use crate::ufm::UfmConfig;

/// Basis tolerance for the row space of `W`.
const ROW_SPACE_TOL: f64 = 1e-8;
/// Number of grid points bracketing the gamma search.
pub const GAMMA_GRID: usize = 200;

/// A metric that may be undefined (`None` serializes as `null`).
pub type MaybeMetric = Option<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub value: f64,
    pub warnings: Vec<Warning>,
}

fn unit_columns(h: &DMatrix<f64>) -> (Vec<Option<DVector<f64>>>, usize) {
    let mut zero = 0;
    let cols = h
        .column_iter()
        .map(|c| {
            let norm = c.norm();
            if norm == 0.0 {
                zero += 1;
                None
            } else {
                Some(c / norm)
            }
        })
        .collect();
    (cols, zero)
}

fn mean_projection_residual(h: &DMatrix<f64>, basis: &DMatrix<f64>) -> Metric {
    let (cols, zero) = unit_columns(h);
    let m = h.ncols() as f64;
    let total: f64 = cols
        .iter()
        .flatten()
        .map(|u| linalg::projection_residual_sq(basis, u))
        .sum();
    let warnings = if zero > 0 {
        vec![Warning::ZeroFeature { count: zero }]
    } else {
        Vec::new()
    };
    Metric { value: total / m, warnings }
}

/// Top-`n` left singular vectors of the uncentered `H`.
pub fn principal_subspace(h: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let dec = linalg::svd(h);
    dec.u.columns(0, n).into_owned()
}

pub fn nrc1(h: &DMatrix<f64>, n: usize) -> Result<Metric> {
    let (d, m) = h.shape();
    if n == 0 || n > d.min(m) {
        return Err(Error::Dimension(format!(
            "NRC1 needs 1 <= n <= min(d, M) = {}, got n = {n}",
            d.min(m)
        )));
    }
    if h.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("feature matrix is all zero".into()));
    }
    Ok(mean_projection_residual(h, &principal_subspace(h, n)))
}

pub fn nrc2(h: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<Metric> {
    if w.ncols() != h.nrows() {
        return Err(Error::Dimension(format!(
            "W has {} columns but features have dimension {}",
            w.ncols(),
            h.nrows()
        )));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("weight matrix is zero".into()));
    }
    let basis = linalg::row_space_basis(w, ROW_SPACE_TOL);
    Ok(mean_projection_residual(h, &basis))
}

fn expect_square_n(w: &DMatrix<f64>, stats: &TargetStats) -> Result<()> {
    if w.nrows() != stats.dim() {
        return Err(Error::Dimension(format!(
            "W has {} rows but targets have dimension {}",
            w.nrows(),
            stats.dim()
        )));
    }
    Ok(())
}

/// Normalized NRC3; `None` for univariate targets, where it is trivially zero.
pub fn nrc3(w: &DMatrix<f64>, stats: &TargetStats, gamma: f64) -> Result<MaybeMetric> {
    expect_square_n(w, stats)?;
    if stats.dim() < 2 {
        return Ok(None);
    }
    let gram = w * w.transpose();
    let gram_norm = gram.norm();
    if gram_norm == 0.0 {
        return Err(Error::Degenerate("W W^T is zero".into()));
    }
    let n = stats.dim();
    let target = &stats.sqrt_covariance - DMatrix::identity(n, n) * gamma.sqrt();
    let target_norm = target.norm();
    if target_norm == 0.0 {
        return Err(Error::Degenerate("Sigma^(1/2) - sqrt(gamma) I is zero".into()));
    }
    Ok(Some((gram / gram_norm - target / target_norm).norm_squared()))
}

/// `||W W^T - Sigma^{1/2} + sqrt(gamma) I||_F^2`.
pub fn nrc3_unnormalized(w: &DMatrix<f64>, stats: &TargetStats, gamma: f64) -> f64 {
    let n = stats.dim();
    (w * w.transpose() - &stats.sqrt_covariance + DMatrix::identity(n, n) * gamma.sqrt()).norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSource {
    ClosedForm,
    Search,
    Supplied,
    Na,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaChoice {
    pub gamma: f64,
    pub source: GammaSource,
    pub warnings: Vec<Warning>,
}

/// Closed-form minimizer of the unnormalized NRC3 when
/// `tr(Sigma^{1/2}) > tr(W W^T)`, otherwise a golden-section search of the
/// normalized NRC3 over `(0, lambda_min)`. `None` for univariate targets.
pub fn optimal_gamma(w: &DMatrix<f64>, stats: &TargetStats) -> Result<Option<GammaChoice>> {
    expect_square_n(w, stats)?;
    let n = stats.dim();
    if n < 2 {
        return Ok(None);
    }
    let tr_sqrt = stats.sqrt_covariance.trace();
    let tr_gram = w.norm_squared();
    let lambda_min = stats.lambda_min();
    if tr_sqrt > tr_gram {
        let gamma = ((tr_sqrt - tr_gram) / n as f64).powi(2);
        // relative slack so an exact boundary hit survives rounding
        let warnings = if gamma >= lambda_min * (1.0 - 1e-12) {
            vec![Warning::OutOfRange { gamma, lambda_min }]
        } else {
            Vec::new()
        };
        return Ok(Some(GammaChoice { gamma, source: GammaSource::ClosedForm, warnings }));
    }

    if w.norm() == 0.0 {
        return Err(Error::Degenerate("W is zero".into()));
    }
    let eps = 1e-9 * lambda_min;
    let (lo, hi) = (eps, lambda_min - eps);
    let objective = |g: f64| nrc3(w, stats, g).ok().flatten().unwrap_or(f64::INFINITY);
    let gamma = golden_section_on_grid(objective, lo, hi, GAMMA_GRID);
    Ok(Some(GammaChoice { gamma, source: GammaSource::Search, warnings: Vec::new() }))
}

/// Evaluate on an even grid, then refine by golden section inside the
/// neighbours of the best grid point.
pub fn golden_section_on_grid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    let points = points.max(3);
    let step = (hi - lo) / (points - 1) as f64;
    let grid = |i: usize| lo + step * i as f64;
    let mut best = 0;
    let mut best_val = f(grid(0));
    for i in 1..points {
        let v = f(grid(i));
        if v < best_val {
            best = i;
            best_val = v;
        }
    }
    let mut a = grid(best.saturating_sub(1));
    let mut b = grid((best + 1).min(points - 1));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (a + b);
    if f(mid) <= best_val {
        mid
    } else {
        grid(best)
    }
}

/// Variance ratios of the first `k` principal components of the centered `H`.
pub fn explained_variance_ratio(h: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let (d, m) = h.shape();
    if k == 0 || k > d.min(m) {
        return Err(Error::Dimension(format!(
            "EVR needs 1 <= k <= min(d, M) = {}, got {k}",
            d.min(m)
        )));
    }
    if h.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("feature matrix is all zero".into()));
    }
    let centered = linalg::center_columns(h);
    let s = linalg::svd(&centered).singular_values;
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(Error::Degenerate("features have zero variance".into()));
    }
    let mut out: Vec<f64> = (0..k).map(|i| s.get(i).map_or(0.0, |v| v * v / total)).collect();
    // singular values come out sorted; ties in floating point can still wobble
    for i in 1..out.len() {
        if out[i] > out[i - 1] {
            out[i] = out[i - 1];
        }
    }
    Ok(out)
}

/// How to pick gamma for NRC3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaPolicy {
    Auto,
    Supplied(f64),
    /// `gamma = c` from the supplied config.
    ExactC,
}

impl std::str::FromStr for GammaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(GammaPolicy::Auto),
            "exact-c" | "exact_c" => Ok(GammaPolicy::ExactC),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|g| *g > 0.0 && g.is_finite())
                .map(GammaPolicy::Supplied)
                .ok_or_else(|| Error::InvalidInput(format!("gamma must be auto, exact-c or a positive number, got '{other}'"))),
        }
    }
}

/// What a report is computed from. `bias` and `targets` are only needed for
/// the residual whiteness statistic.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub features: &'a DMatrix<f64>,
    pub weights: &'a DMatrix<f64>,
    pub bias: Option<&'a DVector<f64>>,
    pub targets: Option<&'a DMatrix<f64>>,
}

impl<'a> Snapshot<'a> {
    pub fn new(features: &'a DMatrix<f64>, weights: &'a DMatrix<f64>) -> Self {
        Self { features, weights, bias: None, targets: None }
    }

    pub fn with_fit(mut self, bias: &'a DVector<f64>, targets: &'a DMatrix<f64>) -> Self {
        self.bias = Some(bias);
        self.targets = Some(targets);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NrcReport {
    pub nrc1: f64,
    pub nrc2: f64,
    pub nrc3: MaybeMetric,
    pub gamma_used: MaybeMetric,
    pub gamma_source: GammaSource,
    pub evr: Vec<f64>,
    /// `||M^{-1} E E^T - c I||_F`.
    pub residual_whiteness: MaybeMetric,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Warning>,
}

impl NrcReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report is plain data")
    }
}

/// All metrics for one snapshot.
///
/// Degenerate snapshots (all-zero `H` or `W`) yield `NaN` for the affected
/// metric instead of failing, so training logs stay total.
pub fn nrc_report(
    snap: Snapshot<'_>,
    stats: &TargetStats,
    cfg: Option<&UfmConfig>,
    policy: GammaPolicy,
) -> Result<NrcReport> {
    let (h, w) = (snap.features, snap.weights);
    let n = stats.dim();
    if w.nrows() != n || w.ncols() != h.nrows() {
        return Err(Error::Dimension(format!(
            "W is {}x{}, features are {}x{}, targets have n = {n}",
            w.nrows(),
            w.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    if policy == GammaPolicy::ExactC && cfg.is_none() {
        return Err(Error::ConfigMissing("gamma policy exact_c needs a regularization config".into()));
    }
    let mut warnings = Vec::new();

    let mut take = |r: Result<Metric>| -> Result<f64> {
        match r {
            Ok(m) => {
                for wn in m.warnings {
                    if !warnings.contains(&wn) {
                        warnings.push(wn);
                    }
                }
                Ok(m.value)
            }
            Err(Error::Degenerate(_)) => Ok(f64::NAN),
            Err(e) => Err(e),
        }
    };
    let nrc1_v = take(nrc1(h, n.min(h.nrows()).min(h.ncols())))?;
    let nrc2_v = take(nrc2(h, w))?;

    let (gamma_used, gamma_source) = if n < 2 {
        (None, GammaSource::Na)
    } else {
        match policy {
            GammaPolicy::Supplied(g) => (Some(g), GammaSource::Supplied),
            GammaPolicy::ExactC => (cfg.map(UfmConfig::c), GammaSource::Supplied),
            GammaPolicy::Auto => match optimal_gamma(w, stats) {
                Ok(Some(choice)) => {
                    warnings.extend(choice.warnings);
                    (Some(choice.gamma), choice.source)
                }
                Ok(None) => (None, GammaSource::Na),
                Err(Error::Degenerate(_)) => (None, GammaSource::Na),
                Err(e) => return Err(e),
            },
        }
    };
    let nrc3_v = match gamma_used {
        Some(g) => match nrc3(w, stats, g) {
            Ok(v) => v,
            Err(Error::Degenerate(_)) => Some(f64::NAN),
            Err(e) => return Err(e),
        },
        None => None,
    };

    let k = h.nrows().min(h.ncols());
    let evr = match explained_variance_ratio(h, k) {
        Ok(v) => v,
        Err(Error::Degenerate(_)) => vec![0.0; k],
        Err(e) => return Err(e),
    };

    let residual_whiteness = match (cfg, snap.bias, snap.targets) {
        (Some(cfg), Some(b), Some(y)) => {
            let e = fit_residual(h, w, b, y);
            let m = y.ncols() as f64;
            Some((&e * e.transpose() / m - DMatrix::identity(n, n) * cfg.c()).norm())
        }
        _ => None,
    };

    Ok(NrcReport {
        nrc1: nrc1_v,
        nrc2: nrc2_v,
        nrc3: nrc3_v,
        gamma_used,
        gamma_source,
        evr,
        residual_whiteness,
        warnings,
    })
}

/// Header for the append-mode report log.
pub fn report_csv_header(evr_len: usize) -> String {
    let mut cols = vec!["step".to_string(), "nrc1".into(), "nrc2".into(), "nrc3".into(), "gamma".into()];
    cols.extend((1..=evr_len).map(|i| format!("evr{i}")));
    cols.push("whiteness".into());
    cols.join(",")
}

pub fn format_maybe(v: MaybeMetric) -> String {
    v.map_or_else(|| "NA".to_string(), crate::io::format_f64)
}

pub fn report_csv_row(step: usize, r: &NrcReport) -> String {
    use crate::io::format_f64;
    let mut cols = vec![
        step.to_string(),
        format_f64(r.nrc1),
        format_f64(r.nrc2),
        format_maybe(r.nrc3),
        format_maybe(r.gamma_used),
    ];
    cols.extend(r.evr.iter().map(|&v| format_f64(v)));
    cols.push(format_maybe(r.residual_whiteness));
    cols.join(",")
}
