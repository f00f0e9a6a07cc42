#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nrc_lab::dataset::{compute_target_stats, generate_synthetic, MapKind, SyntheticSpec, TargetMatrix, TargetStats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// `A A^T / n + floor I` with `A` Gaussian.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let a = gaussian(rng, n, n);
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

pub fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

/// Linear-map targets whose empirical covariance is exactly `sigma`.
pub fn targets(sigma: &DMatrix<f64>, m: usize, seed: u64) -> (TargetMatrix, TargetStats) {
    let spec = SyntheticSpec {
        input_dim: 4,
        target_dim: sigma.nrows(),
        num_samples: m,
        target_covariance: sigma.clone(),
        map_kind: MapKind::Linear,
        noise_std: 0.0,
        seed,
    };
    let y = generate_synthetic(&spec).unwrap().targets;
    let stats = compute_target_stats(&y).unwrap();
    (y, stats)
}

pub struct GdResult {
    pub loss: f64,
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Plain gradient descent on the regularized least-squares objective, written
/// out directly so it shares no code with the library trainer.
pub fn gd_oracle(y: &DMatrix<f64>, lh: f64, lw: f64, d: usize, seed: u64, lr: f64, steps: usize) -> GdResult {
    let (n, m) = y.shape();
    let mf = m as f64;
    let mut r = rng(seed);
    let mut w = gaussian(&mut r, n, d) * 0.1;
    let mut h = gaussian(&mut r, d, m) * 0.1;
    let mut b = DVector::zeros(n);
    let loss_of = |w: &DMatrix<f64>, h: &DMatrix<f64>, b: &DVector<f64>| {
        let mut e = w * h - y;
        for mut col in e.column_iter_mut() {
            col += b;
        }
        (e.norm_squared() + lh * h.norm_squared()) / (2.0 * mf) + 0.5 * lw * w.norm_squared()
    };
    for _ in 0..steps {
        let mut e = &w * &h - y;
        for mut col in e.column_iter_mut() {
            col += &b;
        }
        let gh = (w.transpose() * &e + &h * lh) / mf;
        let gw = &e * h.transpose() / mf + &w * lw;
        let gb = e.column_sum() / mf;
        h -= gh * lr;
        w -= gw * lr;
        b -= gb * lr;
    }
    GdResult { loss: loss_of(&w, &h, &b), w, h, b }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
