//! Global minima of the unconstrained feature model.
//!
//! With `c = lambda_h * lambda_w > 0` every global minimum is built in the
//! eigenbasis `U` of the target covariance:
//!
//! ```text
//! d_i = (sqrt(lambda_i) - sqrt(c))_+
//! W   = (lambda_h / lambda_w)^{1/4} U diag(sqrt(d_i)) R
//! H   = sqrt(lambda_w / lambda_h) W^T Sigma^{-1/2} (Y - Ybar)
//! b   = ybar
//! ```
//!
//! for any semi-orthogonal `R`. Directions with `lambda_i <= c` are switched
//! off by the clamp, so the active rank is the number of eigenvalues above `c`.
//! With `c = 0` the minima are `H = W^+ Y + (I - W^+ W) Z` for any full-rank `W`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{TargetMatrix, TargetStats};
use crate::error::{Error, Result, Warning};
use crate::io::{self, Layout};
use crate::linalg;
use crate::objective::{check_shapes, fit_residual, ufm_gradients, ufm_loss};

/// Relative tolerance for the numerical rank of `W`.
pub const W_RANK_TOL: f64 = 1e-8;
/// Singular values at or below this fraction of the largest are not inverted.
pub const PINV_CUTOFF: f64 = 1e-12;
/// `|c - lambda_i| <= BOUNDARY_TOL * lambda_i` raises [`Warning::BoundaryC`].
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Regularization pair; `c` is always their product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct UfmConfig {
    lambda_h: f64,
    lambda_w: f64,
}

#[derive(Serialize, Deserialize)]
struct RawConfig {
    lambda_h: f64,
    lambda_w: f64,
    #[serde(default, skip_deserializing)]
    c: f64,
}

impl TryFrom<RawConfig> for UfmConfig {
    type Error = Error;
    fn try_from(raw: RawConfig) -> Result<Self> {
        UfmConfig::new(raw.lambda_h, raw.lambda_w)
    }
}

impl From<UfmConfig> for RawConfig {
    fn from(cfg: UfmConfig) -> Self {
        RawConfig {
            lambda_h: cfg.lambda_h,
            lambda_w: cfg.lambda_w,
            c: cfg.c(),
        }
    }
}

impl UfmConfig {
    pub fn new(lambda_h: f64, lambda_w: f64) -> Result<Self> {
        if !(lambda_h.is_finite() && lambda_w.is_finite() && lambda_h >= 0.0 && lambda_w >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "regularization constants must be finite and non-negative, got ({lambda_h}, {lambda_w})"
            )));
        }
        Ok(Self { lambda_h, lambda_w })
    }

    /// `lambda_h = lambda_w = sqrt(c)`.
    pub fn balanced(c: f64) -> Result<Self> {
        let r = c.sqrt();
        Self::new(r, r)
    }

    /// No regularization at all.
    pub fn unregularized() -> Self {
        Self { lambda_h: 0.0, lambda_w: 0.0 }
    }

    pub fn lambda_h(&self) -> f64 {
        self.lambda_h
    }

    pub fn lambda_w(&self) -> f64 {
        self.lambda_w
    }

    pub fn c(&self) -> f64 {
        self.lambda_h * self.lambda_w
    }
}

/// A closed-form global minimum together with how it was built.
#[derive(Debug, Clone)]
pub struct UfmSolution {
    /// `n x d`.
    pub weights: DMatrix<f64>,
    /// `d x M`.
    pub features: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// `n x d` with `R R^T = I`.
    pub rotation: DMatrix<f64>,
    pub active_rank: usize,
    /// `(sqrt(lambda_i) - sqrt(c))_+`, aligned with the descending eigenvalues.
    pub shrunk_spectrum: DVector<f64>,
    pub config: UfmConfig,
    pub rotation_seed: u64,
    pub warnings: Vec<Warning>,
}

impl UfmSolution {
    /// True when `c > lambda_max` and the optimum is `(0, 0, ybar)`.
    pub fn is_degenerate(&self) -> bool {
        self.active_rank == 0
    }

    pub fn loss(&self, y: &TargetMatrix) -> Result<f64> {
        ufm_loss(&self.features, &self.weights, &self.bias, y.values(), &self.config)
    }

    pub fn meta(&self, y: &TargetMatrix) -> Result<SolutionMeta> {
        Ok(SolutionMeta {
            active_rank: Some(self.active_rank),
            c: self.config.c(),
            lambda_h: self.config.lambda_h(),
            lambda_w: self.config.lambda_w(),
            rotation_seed: Some(self.rotation_seed),
            loss: self.loss(y)?,
            source: "closed_form".into(),
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>, y: &TargetMatrix) -> Result<()> {
        save_solution_dir(dir, &self.weights, &self.features, &self.bias, &self.meta(y)?)
    }
}

/// Contents of `meta.json` in a solution directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMeta {
    /// `j*`; absent for gradient-descent endpoints.
    pub active_rank: Option<usize>,
    pub c: f64,
    pub lambda_h: f64,
    pub lambda_w: f64,
    pub rotation_seed: Option<u64>,
    pub loss: f64,
    pub source: String,
}

/// Writes `W.csv` (n x d), `H.csv` (one sample per row), `b.csv` (one value per line)
/// and `meta.json`.
pub fn save_solution_dir(
    dir: impl AsRef<Path>,
    w: &DMatrix<f64>,
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    meta: &SolutionMeta,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    io::write_matrix(dir.join("W.csv"), w)?;
    io::write_samples(dir.join("H.csv"), h, Layout::SamplesAsRows)?;
    io::write_matrix(dir.join("b.csv"), &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    io::write_json(dir.join("meta.json"), meta)
}

/// `(W, H, b, meta)` as stored in a solution directory.
pub type SolutionParts = (DMatrix<f64>, DMatrix<f64>, DVector<f64>, SolutionMeta);

/// Reads back what [`save_solution_dir`] wrote.
pub fn load_solution_dir(
    dir: impl AsRef<Path>,
) -> Result<SolutionParts> {
    let dir = dir.as_ref();
    let w = io::load_matrix(dir.join("W.csv"), Layout::SamplesAsColumns, false)?.storage;
    let h = io::load_matrix(dir.join("H.csv"), Layout::SamplesAsRows, false)?.into_columns();
    let b_storage = io::load_matrix(dir.join("b.csv"), Layout::SamplesAsColumns, false)?.storage;
    let b = DVector::from_iterator(b_storage.len(), b_storage.iter().copied());
    let meta = io::read_json(dir.join("meta.json"))?;
    Ok((w, h, b, meta))
}

/// Seeded `n x d` matrix with orthonormal rows.
pub fn sample_semi_orthogonal(n: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 || n > d {
        return Err(Error::Dimension(format!(
            "semi-orthogonal matrix needs 1 <= n <= d, got n = {n}, d = {d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = crate::dataset::gaussian_matrix(&mut rng, d, n, 1.0);
    let q = g.qr().q();
    Ok(q.transpose())
}

fn check_stats_match(stats: &TargetStats, y: &TargetMatrix) -> Result<()> {
    if stats.dim() != y.dim() {
        return Err(Error::Dimension(format!(
            "stats are for n = {}, targets have n = {}",
            stats.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Build the closed-form global minimum with `d` feature dimensions.
pub fn solve_closed_form(
    stats: &TargetStats,
    cfg: &UfmConfig,
    y: &TargetMatrix,
    feature_dim: usize,
    rotation_seed: u64,
) -> Result<UfmSolution> {
    check_stats_match(stats, y)?;
    let c = cfg.c();
    if c == 0.0 {
        return Err(Error::UseNoRegularizationSolver);
    }
    let n = stats.dim();
    let rotation = sample_semi_orthogonal(n, feature_dim, rotation_seed)?;
    let sqrt_c = c.sqrt();

    let mut warnings = Vec::new();
    for (i, &lambda) in stats.eigenvalues.iter().enumerate() {
        if (c - lambda).abs() <= BOUNDARY_TOL * lambda {
            warnings.push(Warning::BoundaryC { index: i, eigenvalue: lambda, c });
        }
    }
    let shrunk = stats.eigenvalues.map(|l| (l.sqrt() - sqrt_c).max(0.0));
    let active_rank = shrunk.iter().filter(|&&s| s > 0.0).count();

    let m = y.samples();
    let bias = stats.mean.clone();
    if active_rank == 0 {
        return Ok(UfmSolution {
            weights: DMatrix::zeros(n, feature_dim),
            features: DMatrix::zeros(feature_dim, m),
            bias,
            rotation,
            active_rank,
            shrunk_spectrum: shrunk,
            config: *cfg,
            rotation_seed,
            warnings,
        });
    }

    let scale = (cfg.lambda_h() / cfg.lambda_w()).powf(0.25);
    let mut basis = stats.eigenvectors.clone();
    for (j, mut col) in basis.column_iter_mut().enumerate() {
        col *= shrunk[j].sqrt() * scale;
    }
    let weights = basis * &rotation;
    let centered = linalg::center_columns(y.values());
    let whitened = &stats.inv_sqrt_covariance * centered;
    let features = weights.tr_mul(&whitened) * (cfg.lambda_w() / cfg.lambda_h()).sqrt();

    Ok(UfmSolution {
        weights,
        features,
        bias,
        rotation,
        active_rank,
        shrunk_spectrum: shrunk,
        config: *cfg,
        rotation_seed,
        warnings,
    })
}

/// Minimal value of the objective:
/// `sum_{lambda_i >= c} [c/2 + sqrt(c)(sqrt(lambda_i) - sqrt(c))] + sum_{lambda_i < c} lambda_i / 2`.
pub fn optimal_loss(stats: &TargetStats, cfg: &UfmConfig) -> f64 {
    let c = cfg.c();
    let sqrt_c = c.sqrt();
    stats
        .eigenvalues
        .iter()
        .map(|&l| {
            if l >= c {
                c / 2.0 + sqrt_c * (l.sqrt() - sqrt_c)
            } else {
                l / 2.0
            }
        })
        .sum()
}

/// The fit residual `W H + b 1^T - Y` of a closed-form optimum, checked against
/// `-sqrt(c) Sigma^{-1/2} (Y - Ybar)` and `M^{-1} E E^T = c I`.
pub fn residual(
    sol: &UfmSolution,
    y: &TargetMatrix,
    stats: &TargetStats,
    cfg: &UfmConfig,
) -> Result<DMatrix<f64>> {
    check_stats_match(stats, y)?;
    let c = cfg.c();
    if !(c > 0.0 && c < stats.lambda_min()) {
        return Err(Error::Regime { c, lambda_min: stats.lambda_min() });
    }
    let e = fit_residual(&sol.features, &sol.weights, &sol.bias, y.values());
    let centered = linalg::center_columns(y.values());
    let expected = &stats.inv_sqrt_covariance * &centered * (-c.sqrt());

    // W H reproduces Y - Ybar up to a sqrt(c) correction, so E carries
    // cancellation error on the order of eps * ||Y - Ybar||.
    let cancel = 1e-12 * centered.norm();
    let deviation = (&e - &expected).norm();
    if deviation > 1e-9 * expected.norm() + cancel {
        return Err(Error::Numerical(format!(
            "residual deviates from -sqrt(c) Sigma^(-1/2)(Y - Ybar) by {deviation:e}"
        )));
    }
    let n = y.dim();
    let m = y.samples() as f64;
    let white = (&e * e.transpose() / m - DMatrix::identity(n, n) * c).norm();
    let white_tol = 1e-9 * c * (n as f64).sqrt() + (2.0 * expected.norm() + cancel) * cancel / m;
    if white > white_tol {
        return Err(Error::Numerical(format!(
            "residual covariance deviates from c I by {white:e}"
        )));
    }
    Ok(e)
}

/// A zero-loss solution of the unregularized problem.
#[derive(Debug, Clone)]
pub struct NoRegSolution {
    pub weights: DMatrix<f64>,
    pub pseudo_inverse: DMatrix<f64>,
    pub null_component: DMatrix<f64>,
    pub features: DMatrix<f64>,
}

impl NoRegSolution {
    /// `(1/2M)||W H - Y||^2`.
    pub fn fit_loss(&self, y: &TargetMatrix) -> f64 {
        let m = y.samples() as f64;
        (&self.weights * &self.features - y.values()).norm_squared() / (2.0 * m)
    }
}

/// `H = W^+ Y + (I - W^+ W) Z` for a full-rank `W`.
pub fn solve_no_regularization(
    y: &TargetMatrix,
    w: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<NoRegSolution> {
    let (n, d) = w.shape();
    if n != y.dim() || d < n || z.shape() != (d, y.samples()) {
        return Err(Error::Dimension(format!(
            "need W n x d with d >= n and Z d x M; got W {n}x{d}, Z {}x{}, Y {}x{}",
            z.nrows(),
            z.ncols(),
            y.dim(),
            y.samples()
        )));
    }
    let rank = linalg::numerical_rank(w, W_RANK_TOL);
    if rank < n {
        return Err(Error::RankDeficientW { rank, required: n });
    }
    let pinv = linalg::pseudo_inverse(w, PINV_CUTOFF);
    let null_proj = DMatrix::identity(d, d) - &pinv * w;
    let features = &pinv * y.values() + null_proj * z;
    Ok(NoRegSolution {
        weights: w.clone(),
        pseudo_inverse: pinv,
        null_component: z.clone(),
        features,
    })
}

/// Frobenius norms of the three gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientResiduals {
    pub grad_h_norm: f64,
    pub grad_w_norm: f64,
    pub grad_b_norm: f64,
}

impl GradientResiduals {
    pub fn max(&self) -> f64 {
        self.grad_h_norm.max(self.grad_w_norm).max(self.grad_b_norm)
    }
}

pub fn verify_critical_point(
    h: &DMatrix<f64>,
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    y: &DMatrix<f64>,
    cfg: &UfmConfig,
) -> Result<GradientResiduals> {
    check_shapes(h, w, b, y)?;
    let g = ufm_gradients(h, w, b, y, cfg)?;
    Ok(GradientResiduals {
        grad_h_norm: g.h.norm(),
        grad_w_norm: g.w.norm(),
        grad_b_norm: g.b.norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{compute_target_stats, generate_synthetic, MapKind, SyntheticSpec};

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn targets(cov: DMatrix<f64>, m: usize, seed: u64) -> TargetMatrix {
        let n = cov.nrows();
        let spec = SyntheticSpec {
            input_dim: n + 2,
            target_dim: n,
            num_samples: m,
            target_covariance: cov,
            map_kind: MapKind::Linear,
            noise_std: 0.0,
            seed,
        };
        generate_synthetic(&spec).unwrap().targets
    }

    #[test]
    fn semi_orthogonal_small_cases() {
        let r = sample_semi_orthogonal(1, 1, 42).unwrap();
        assert!((r[(0, 0)].abs() - 1.0).abs() < 1e-15);
        let r = sample_semi_orthogonal(2, 5, 3).unwrap();
        assert!((r.row(0).norm() - 1.0).abs() < 1e-12);
        assert!((r.row(1).norm() - 1.0).abs() < 1e-12);
        assert!(r.row(0).dot(&r.row(1)).abs() < 1e-12);
        assert!(matches!(sample_semi_orthogonal(3, 2, 0), Err(Error::Dimension(_))));
        assert_eq!(sample_semi_orthogonal(3, 7, 9).unwrap(), sample_semi_orthogonal(3, 7, 9).unwrap());
    }

    #[test]
    fn univariate_weight_norm() {
        let y = targets(diag(&[4.0]), 32, 1);
        let stats = compute_target_stats(&y).unwrap();
        let cfg = UfmConfig::new(0.01, 0.01).unwrap();
        let sol = solve_closed_form(&stats, &cfg, &y, 3, 5).unwrap();
        // lambda_h (sigma / sqrt(c) - 1) = 0.01 * (2 / 0.01 - 1)
        assert!((sol.weights.norm_squared() - 1.99).abs() < 1e-12);
        assert!((&sol.bias - &stats.mean).norm() < 1e-15);
        assert_eq!(sol.active_rank, 1);
    }

    #[test]
    fn heavy_regularization_gives_zero_solution() {
        let y = targets(diag(&[1.0]), 16, 2);
        let stats = compute_target_stats(&y).unwrap();
        let cfg = UfmConfig::new(2.0, 2.0).unwrap();
        let sol = solve_closed_form(&stats, &cfg, &y, 4, 0).unwrap();
        assert!(sol.is_degenerate());
        assert_eq!(sol.weights.norm(), 0.0);
        assert_eq!(sol.features.norm(), 0.0);
        assert_eq!(sol.bias, stats.mean);
        let g = verify_critical_point(&sol.features, &sol.weights, &sol.bias, y.values(), &cfg).unwrap();
        assert!(g.max() <= 1e-12);
    }

    #[test]
    fn truncated_regime_gram() {
        let y = targets(diag(&[4.0, 0.01]), 64, 3);
        let stats = compute_target_stats(&y).unwrap();
        let cfg = UfmConfig::new(0.1, 0.4).unwrap();
        let sol = solve_closed_form(&stats, &cfg, &y, 6, 1).unwrap();
        assert_eq!(sol.active_rank, 1);
        assert_eq!(linalg::numerical_rank(&sol.weights, W_RANK_TOL), 1);
        let u = &stats.eigenvectors;
        let expected = u * diag(&[1.8, 0.0]) * u.transpose() * (0.1f64 / 0.4).sqrt();
        assert!(linalg::rel_frobenius(&(&sol.weights * sol.weights.transpose()), &expected) < 1e-12);
    }

    #[test]
    fn zero_c_is_routed() {
        let y = targets(diag(&[1.0]), 8, 4);
        let stats = compute_target_stats(&y).unwrap();
        let cfg = UfmConfig::new(0.0, 1.0).unwrap();
        assert!(matches!(
            solve_closed_form(&stats, &cfg, &y, 2, 0),
            Err(Error::UseNoRegularizationSolver)
        ));
    }

    #[test]
    fn boundary_c_warns() {
        let y = targets(diag(&[4.0, 1.0]), 32, 5);
        let stats = compute_target_stats(&y).unwrap();
        let cfg = UfmConfig::new(stats.lambda_min(), 1.0).unwrap();
        let sol = solve_closed_form(&stats, &cfg, &y, 4, 0).unwrap();
        assert!(sol.warnings.iter().any(|w| matches!(w, Warning::BoundaryC { index: 1, .. })));
        assert_eq!(sol.active_rank, 1);
    }

    #[test]
    fn optimal_loss_cases() {
        let y = targets(diag(&[4.0]), 16, 6);
        let stats = compute_target_stats(&y).unwrap();
        let val = optimal_loss(&stats, &UfmConfig::new(0.01, 0.01).unwrap());
        assert!((val - 0.01995).abs() < 1e-12);

        let y = targets(diag(&[2.0, 1.0]), 16, 7);
        let stats = compute_target_stats(&y).unwrap();
        assert!((optimal_loss(&stats, &UfmConfig::new(3.0, 3.0).unwrap()) - 1.5).abs() < 1e-12);
        assert_eq!(optimal_loss(&stats, &UfmConfig::unregularized()), 0.0);
    }

    #[test]
    fn residual_two_samples() {
        let y = TargetMatrix::new(DMatrix::from_row_slice(1, 2, &[3.0, -1.0])).unwrap();
        let stats = compute_target_stats(&y).unwrap();
        let cfg = UfmConfig::new(0.01, 0.01).unwrap();
        let sol = solve_closed_form(&stats, &cfg, &y, 2, 11).unwrap();
        let e = residual(&sol, &y, &stats, &cfg).unwrap();
        assert!((e[(0, 0)] + 0.01).abs() < 1e-12);
        assert!((e[(0, 1)] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn residual_vanishes_for_tiny_c() {
        let y = targets(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]), 40, 8);
        let stats = compute_target_stats(&y).unwrap();
        let cfg = UfmConfig::balanced(1e-16).unwrap();
        let sol = solve_closed_form(&stats, &cfg, &y, 5, 1).unwrap();
        let e = residual(&sol, &y, &stats, &cfg).unwrap();
        assert!(e.norm() < 1e-6);
    }

    #[test]
    fn residual_rejects_strong_regularization() {
        let y = targets(diag(&[4.0, 0.01]), 32, 9);
        let stats = compute_target_stats(&y).unwrap();
        let cfg = UfmConfig::balanced(0.04).unwrap();
        let sol = solve_closed_form(&stats, &cfg, &y, 4, 0).unwrap();
        assert!(matches!(residual(&sol, &y, &stats, &cfg), Err(Error::Regime { .. })));
    }

    #[test]
    fn no_regularization_projection_block() {
        let y = targets(diag(&[1.0, 0.5]), 10, 10);
        let mut w = DMatrix::zeros(2, 4);
        w[(0, 0)] = 1.0;
        w[(1, 1)] = 1.0;
        let sol = solve_no_regularization(&y, &w, &DMatrix::zeros(4, 10)).unwrap();
        assert!((sol.features.rows(0, 2) - y.values()).norm() < 1e-14);
        assert!(sol.features.rows(2, 2).norm() < 1e-14);
        assert!(sol.fit_loss(&y) < 1e-28);
    }

    #[test]
    fn no_regularization_rejects_duplicated_rows() {
        let y = targets(diag(&[1.0, 0.5]), 10, 11);
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(matches!(
            solve_no_regularization(&y, &w, &DMatrix::zeros(3, 10)),
            Err(Error::RankDeficientW { rank: 1, required: 2 })
        ));
    }

    #[test]
    fn config_serializes_with_c() {
        let cfg = UfmConfig::new(0.5, 0.25).unwrap();
        let v = serde_json::to_value(cfg).unwrap();
        assert_eq!(v["c"], 0.125);
        let back: UfmConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<UfmConfig>(r#"{"lambda_h": -1, "lambda_w": 1}"#).is_err());
    }

    #[test]
    fn solution_dir_round_trip() {
        let y = targets(diag(&[2.0, 1.0]), 12, 12);
        let stats = compute_target_stats(&y).unwrap();
        let cfg = UfmConfig::new(0.01, 0.02).unwrap();
        let sol = solve_closed_form(&stats, &cfg, &y, 4, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        sol.save(dir.path(), &y).unwrap();
        let (w, h, b, meta) = load_solution_dir(dir.path()).unwrap();
        assert_eq!(w, sol.weights);
        assert_eq!(h, sol.features);
        assert_eq!(b, sol.bias);
        assert_eq!(meta.active_rank, Some(2));
        assert_eq!(meta.rotation_seed, Some(3));
    }
}
