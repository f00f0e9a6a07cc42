//! Target matrices, their spectral statistics, and synthetic regression data.

// negated comparisons below also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{matrix_rows, serde_matrix};
use crate::linalg::{self, Eigensystem};

/// Full-rank detection threshold: `lambda_min <= RANK_TOL * lambda_max` is rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// `n x M` targets, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix(DMatrix<f64>);

impl TargetMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (n, m) = values.shape();
        if n == 0 || m < 2 {
            return Err(Error::Dimension(format!(
                "targets need n >= 1 and M >= 2, got {n}x{m}"
            )));
        }
        if n > m {
            return Err(Error::Dimension(format!(
                "target dimension n = {n} exceeds sample count M = {m}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("targets contain non-finite entries".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `n`.
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `M`.
    pub fn samples(&self) -> usize {
        self.0.ncols()
    }
}

/// Mean, covariance and eigensystem of a target matrix.
#[derive(Debug, Clone)]
pub struct TargetStats {
    pub mean: DVector<f64>,
    /// `M^{-1} (Y - Ybar)(Y - Ybar)^T`.
    pub covariance: DMatrix<f64>,
    pub sqrt_covariance: DMatrix<f64>,
    pub inv_sqrt_covariance: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// Pairwise correlations in `(0,1), (0,2), .., (1,2), ..` order.
    pub pearson: Vec<f64>,
}

impl TargetStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn eigensystem(&self) -> Eigensystem {
        Eigensystem {
            values: self.eigenvalues.clone(),
            vectors: self.eigenvectors.clone(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mean": self.mean.iter().copied().collect::<Vec<_>>(),
            "covariance": matrix_rows(&self.covariance),
            "sqrt_covariance": matrix_rows(&self.sqrt_covariance),
            "eigenvalues": self.eigenvalues.iter().copied().collect::<Vec<_>>(),
            "pearson": self.pearson,
        })
    }
}

pub fn covariance(y: &DMatrix<f64>) -> DMatrix<f64> {
    let centered = linalg::center_columns(y);
    let m = y.ncols() as f64;
    linalg::symmetrize(&(&centered * centered.transpose() / m))
}

pub fn compute_target_stats(y: &TargetMatrix) -> Result<TargetStats> {
    let values = y.values();
    let mean = linalg::column_mean(values);
    let cov = covariance(values);
    let eig = linalg::sym_eigen(&cov)?;
    let lambda_max = eig.values[0];
    let lambda_min = eig.values[eig.values.len() - 1];
    if !(lambda_min > RANK_TOL * lambda_max) || lambda_max <= 0.0 {
        return Err(Error::RankDeficientTargets {
            lambda_min,
            lambda_max,
        });
    }
    let sqrt_covariance = linalg::spectral_map(&eig, f64::sqrt);
    let inv_sqrt_covariance = linalg::spectral_map(&eig, |v| 1.0 / v.sqrt());
    let n = cov.nrows();
    let mut pearson = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pearson.push(cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt());
        }
    }
    Ok(TargetStats {
        mean,
        covariance: cov,
        sqrt_covariance,
        inv_sqrt_covariance,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        pearson,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    Linear,
    MlpTeacher,
}

impl std::str::FromStr for MapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(MapKind::Linear),
            "mlp-teacher" => Ok(MapKind::MlpTeacher),
            other => Err(Error::InvalidInput(format!("unknown map kind '{other}'"))),
        }
    }
}

/// Recipe for a synthetic regression problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub input_dim: usize,
    pub target_dim: usize,
    pub num_samples: usize,
    #[serde(with = "serde_matrix")]
    pub target_covariance: DMatrix<f64>,
    pub map_kind: MapKind,
    pub noise_std: f64,
    pub seed: u64,
}

/// Inputs `D x M` and targets `n x M`, columns paired.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub inputs: DMatrix<f64>,
    pub targets: TargetMatrix,
}

impl RegressionDataset {
    pub fn new(inputs: DMatrix<f64>, targets: TargetMatrix) -> Result<Self> {
        if inputs.ncols() != targets.samples() {
            return Err(Error::Dimension(format!(
                "inputs have {} samples, targets have {}",
                inputs.ncols(),
                targets.samples()
            )));
        }
        Ok(Self { inputs, targets })
    }
}

/// Hidden width of the random teacher network.
const TEACHER_WIDTH: usize = 32;

pub(crate) fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    // column-major fill order is part of the determinism contract
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

fn validate_spec(spec: &SyntheticSpec) -> Result<()> {
    let n = spec.target_dim;
    if spec.input_dim == 0 || n == 0 || spec.num_samples < 2 {
        return Err(Error::InvalidInput(
            "input_dim and target_dim must be positive and num_samples >= 2".into(),
        ));
    }
    if n > spec.input_dim.min(spec.num_samples) {
        return Err(Error::Dimension(format!(
            "target_dim {n} must not exceed min(input_dim, num_samples) = {}",
            spec.input_dim.min(spec.num_samples)
        )));
    }
    if spec.target_covariance.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "target covariance must be {n}x{n}, got {:?}",
            spec.target_covariance.shape()
        )));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::InvalidInput("noise_std must be finite and >= 0".into()));
    }
    Ok(())
}

/// Draw a dataset whose empirical target covariance equals `spec.target_covariance`.
///
/// Raw targets are produced by a seeded linear map or a random tanh teacher,
/// then centered, whitened with their empirical inverse square root and
/// recolored with the requested covariance's square root.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<RegressionDataset> {
    validate_spec(spec)?;
    let target_eig = linalg::sym_eigen(&spec.target_covariance)?;
    let smallest = target_eig.values[target_eig.values.len() - 1];
    if smallest <= 0.0 {
        return Err(Error::NotPsd { eigenvalue: smallest });
    }
    let target_sqrt = linalg::spectral_map(&target_eig, f64::sqrt);

    let (d_in, n, m) = (spec.input_dim, spec.target_dim, spec.num_samples);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let inputs = gaussian_matrix(&mut rng, d_in, m, 1.0);
    let mut raw = match spec.map_kind {
        MapKind::Linear => {
            let a = gaussian_matrix(&mut rng, n, d_in, 1.0 / (d_in as f64).sqrt());
            a * &inputs
        }
        MapKind::MlpTeacher => {
            let w1 = gaussian_matrix(&mut rng, TEACHER_WIDTH, d_in, 1.5 / (d_in as f64).sqrt());
            let b1 = gaussian_matrix(&mut rng, TEACHER_WIDTH, 1, 0.5);
            let w2 = gaussian_matrix(&mut rng, n, TEACHER_WIDTH, 1.0 / (TEACHER_WIDTH as f64).sqrt());
            let mut hidden = w1 * &inputs;
            for mut col in hidden.column_iter_mut() {
                col += &b1.column(0);
                col.apply(|v| *v = v.tanh());
            }
            w2 * hidden
        }
    };
    if spec.noise_std > 0.0 {
        raw += gaussian_matrix(&mut rng, n, m, spec.noise_std);
    }

    let centered = linalg::center_columns(&raw);
    let emp_eig = linalg::sym_eigen(&covariance(&raw))?;
    let emp_min = emp_eig.values[n - 1];
    if !(emp_min > RANK_TOL * emp_eig.values[0]) {
        return Err(Error::RankDeficientTargets {
            lambda_min: emp_min,
            lambda_max: emp_eig.values[0],
        });
    }
    let whiten = linalg::spectral_map(&emp_eig, |v| 1.0 / v.sqrt());
    let targets = target_sqrt * whiten * centered;
    RegressionDataset::new(inputs, TargetMatrix::new(targets)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    fn spec(n: usize, m: usize, cov: DMatrix<f64>, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            input_dim: 4,
            target_dim: n,
            num_samples: m,
            target_covariance: cov,
            map_kind: MapKind::Linear,
            noise_std: 0.0,
            seed,
        }
    }

    #[test]
    fn two_point_scalar_targets() {
        let y = TargetMatrix::new(DMatrix::from_row_slice(1, 2, &[1.0, -1.0])).unwrap();
        let s = compute_target_stats(&y).unwrap();
        assert_eq!(s.mean[0], 0.0);
        assert!((s.covariance[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((s.lambda_min() - 1.0).abs() < 1e-15);
        assert!((s.sqrt_covariance[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(s.pearson.is_empty());
    }

    #[test]
    fn orthogonal_construction() {
        let y = TargetMatrix::new(DMatrix::from_row_slice(
            2,
            4,
            &[1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0],
        ))
        .unwrap();
        let s = compute_target_stats(&y).unwrap();
        assert!(s.mean.norm() < 1e-15);
        assert!((&s.covariance - diag(&[0.5, 0.5])).norm() < 1e-15);
        assert!((&s.sqrt_covariance - diag(&[0.5f64.sqrt(), 0.5f64.sqrt()])).norm() < 1e-14);
        assert_eq!(s.pearson, vec![0.0]);
    }

    #[test]
    fn collinear_rows_are_rank_deficient() {
        let y = TargetMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 2.0, -2.0])).unwrap();
        assert!(matches!(
            compute_target_stats(&y),
            Err(Error::RankDeficientTargets { .. })
        ));
    }

    #[test]
    fn target_matrix_rejects_bad_shapes() {
        assert!(TargetMatrix::new(DMatrix::zeros(3, 2)).is_err());
        assert!(TargetMatrix::new(DMatrix::zeros(1, 1)).is_err());
        assert!(TargetMatrix::new(DMatrix::from_element(1, 3, f64::NAN)).is_err());
    }

    #[test]
    fn stats_json_keys() {
        let y = TargetMatrix::new(DMatrix::from_row_slice(1, 2, &[1.0, -1.0])).unwrap();
        let v = compute_target_stats(&y).unwrap().to_json();
        for key in ["mean", "covariance", "sqrt_covariance", "eigenvalues", "pearson"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = SyntheticSpec { target_dim: 1, ..spec(1, 1000, diag(&[1.0]), 7) };
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generated_covariance_matches_request() {
        let s = spec(2, 5000, diag(&[2.0, 1.0]), 1);
        let data = generate_synthetic(&s).unwrap();
        let stats = compute_target_stats(&data.targets).unwrap();
        assert!(linalg::rel_frobenius(&stats.covariance, &diag(&[2.0, 1.0])) < 0.1);
        // recoloring makes it exact up to rounding
        assert!(linalg::rel_frobenius(&stats.covariance, &diag(&[2.0, 1.0])) < 1e-12);
    }

    #[test]
    fn mlp_teacher_with_noise_matches_request() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let s = SyntheticSpec {
            input_dim: 6,
            map_kind: MapKind::MlpTeacher,
            noise_std: 0.1,
            ..spec(2, 1000, cov.clone(), 3)
        };
        let data = generate_synthetic(&s).unwrap();
        assert_eq!(data.inputs.shape(), (6, 1000));
        let stats = compute_target_stats(&data.targets).unwrap();
        assert!(linalg::rel_frobenius(&stats.covariance, &cov) < 1e-12);
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let s = spec(2, 100, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 0);
        assert!(matches!(generate_synthetic(&s), Err(Error::NotPsd { .. })));
    }

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian_matrix(&mut rng, n, n, 1.0);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn sqrt_squares_back(n in 1usize..=8, seed in any::<u64>()) {
            let s = random_spd(n, seed);
            let r = linalg::symmetric_psd_sqrt(&s).unwrap();
            prop_assert!(linalg::rel_frobenius(&(&r * &r), &s) < 1e-9);
        }

        #[test]
        fn stats_invariants(n in 1usize..=4, m in 8usize..40, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = TargetMatrix::new(gaussian_matrix(&mut rng, n, m, 1.0)).unwrap();
            let s = compute_target_stats(&y).unwrap();
            prop_assert!(s.lambda_min() > 0.0);
            for i in 1..n {
                prop_assert!(s.eigenvalues[i - 1] >= s.eigenvalues[i]);
            }
            let u = &s.eigenvectors;
            prop_assert!((u.transpose() * u - DMatrix::<f64>::identity(n, n)).norm() < 1e-10);
            prop_assert!(linalg::rel_frobenius(&s.eigensystem().reconstruct(), &s.covariance) < 1e-10);
            prop_assert!(linalg::rel_frobenius(&(&s.sqrt_covariance * &s.sqrt_covariance), &s.covariance) < 1e-10);

            let shift = gaussian_matrix(&mut rng, n, 1, 3.0);
            let mut shifted = y.values().clone();
            for mut col in shifted.column_iter_mut() {
                col += &shift.column(0);
            }
            let s2 = compute_target_stats(&TargetMatrix::new(shifted).unwrap()).unwrap();
            prop_assert!((&s2.covariance - &s.covariance).amax() < 1e-12 * (1.0 + s.covariance.amax()));
        }

        #[test]
        fn generated_targets_are_full_rank(n in 1usize..=3, seed in any::<u64>()) {
            let s = SyntheticSpec { input_dim: 5, ..spec(n, 50, random_spd(n, seed), seed) };
            let data = generate_synthetic(&s).unwrap();
            let stats = compute_target_stats(&data.targets).unwrap();
            prop_assert!(stats.lambda_min() > 0.0);
        }
    }
}
