use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_divergence, r_squared, FinalState, TrainConfig, TrainTrace};
use crate::dataset::{compute_target_stats, gaussian_matrix, TargetMatrix};
use crate::error::{Error, Result};
use crate::metrics::{nrc_report, GammaPolicy, Snapshot};
use crate::ufm::UfmConfig;

/// Gradient descent on the UFM objective over free `(H, W, b)`.
///
/// `feature_dim` defaults to `8 n`. Initialization draws `W`, `H`, `b` (in that
/// order) from `N(0, init_scale^2)`.
pub fn train_ufm_gd(
    y: &TargetMatrix,
    cfg: &UfmConfig,
    tc: &TrainConfig,
    feature_dim: Option<usize>,
) -> Result<TrainTrace> {
    tc.validate()?;
    let n = y.dim();
    let d = feature_dim.unwrap_or(8 * n);
    if d == 0 {
        return Err(Error::Dimension("feature dimension must be positive".into()));
    }
    let stats = compute_target_stats(y)?;
    let targets = y.values();
    let m = y.samples();
    let inv_m = 1.0 / m as f64;
    let (lh, lw) = (cfg.lambda_h(), cfg.lambda_w());
    let policy = if cfg.c() > 0.0 { GammaPolicy::ExactC } else { GammaPolicy::Auto };

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut w = gaussian_matrix(&mut rng, n, d, tc.init_scale);
    let mut h = gaussian_matrix(&mut rng, d, m, tc.init_scale);
    let mut b: DVector<f64> = gaussian_matrix(&mut rng, n, 1, tc.init_scale).column(0).into_owned();

    let mut e = DMatrix::zeros(n, m);
    let mut gh = DMatrix::zeros(d, m);
    let mut gw = DMatrix::zeros(n, d);
    let mut trace = TrainTrace {
        steps: Vec::new(),
        loss: Vec::new(),
        mse: Vec::new(),
        r_squared: Vec::new(),
        nrc_reports: Vec::new(),
        final_state: FinalState::Ufm {
            features: DMatrix::zeros(0, 0),
            weights: DMatrix::zeros(0, 0),
            bias: DVector::zeros(0),
        },
    };
    let mut last_finite = None;

    for step in 0..=tc.steps {
        e.gemm(1.0, &w, &h, 0.0);
        for mut col in e.column_iter_mut() {
            col += &b;
        }
        e -= targets;
        let fit = 0.5 * inv_m * e.norm_squared();
        let loss = fit + 0.5 * inv_m * lh * h.norm_squared() + 0.5 * lw * w.norm_squared();
        check_divergence(step, loss, last_finite)?;
        last_finite = Some(step);

        if tc.should_log(step) {
            let report = nrc_report(
                Snapshot::new(&h, &w).with_fit(&b, targets),
                &stats,
                Some(cfg),
                policy,
            )?;
            trace.steps.push(step);
            trace.loss.push(loss);
            trace.mse.push(fit);
            trace.r_squared.push(r_squared(&e, targets));
            trace.nrc_reports.push(report);
        }
        if step == tc.steps {
            break;
        }

        // gH = (W^T E + lh H) / M
        gh.copy_from(&h);
        gh.gemm_tr(inv_m, &w, &e, lh * inv_m);
        // gW = E H^T / M + lw W
        gw.copy_from(&w);
        gw.gemm(inv_m, &e, &h.transpose(), lw);
        let gb = e.column_sum() * inv_m;

        let lr = tc.learning_rate;
        h.zip_apply(&gh, |p, g| *p -= lr * g);
        w.zip_apply(&gw, |p, g| *p -= lr * g);
        b.axpy(-lr, &gb, 1.0);
    }

    trace.final_state = FinalState::Ufm { features: h, weights: w, bias: b };
    Ok(trace)
}
