//! The regularized UFM objective
//! `(1/2M)||W H + b 1^T - Y||^2 + (lambda_h/2M)||H||^2 + (lambda_w/2)||W||^2`
//! and its analytic gradients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ufm::UfmConfig;

pub(crate) fn check_shapes(
    h: &DMatrix<f64>,
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    y: &DMatrix<f64>,
) -> Result<()> {
    let (n, d) = w.shape();
    let (dh, m) = h.shape();
    if dh != d || y.shape() != (n, m) || b.len() != n {
        return Err(Error::Dimension(format!(
            "inconsistent shapes: W {n}x{d}, H {dh}x{m}, b {}, Y {}x{}",
            b.len(),
            y.nrows(),
            y.ncols()
        )));
    }
    Ok(())
}

/// `W H + b 1^T - Y`.
pub fn fit_residual(h: &DMatrix<f64>, w: &DMatrix<f64>, b: &DVector<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut e = w * h;
    for mut col in e.column_iter_mut() {
        col += b;
    }
    e - y
}

pub fn ufm_loss(
    h: &DMatrix<f64>,
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    y: &DMatrix<f64>,
    cfg: &UfmConfig,
) -> Result<f64> {
    check_shapes(h, w, b, y)?;
    let m = y.ncols() as f64;
    let e = fit_residual(h, w, b, y);
    Ok(e.norm_squared() / (2.0 * m)
        + cfg.lambda_h() / (2.0 * m) * h.norm_squared()
        + cfg.lambda_w() / 2.0 * w.norm_squared())
}

/// Gradients of [`ufm_loss`] with respect to `H`, `W` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct UfmGradients {
    pub h: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

pub fn ufm_gradients(
    h: &DMatrix<f64>,
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    y: &DMatrix<f64>,
    cfg: &UfmConfig,
) -> Result<UfmGradients> {
    check_shapes(h, w, b, y)?;
    let m = y.ncols() as f64;
    let e = fit_residual(h, w, b, y);
    let gh = (w.tr_mul(&e) + h * cfg.lambda_h()) / m;
    let gw = &e * h.transpose() / m + w * cfg.lambda_w();
    let gb = e.column_sum() / m;
    Ok(UfmGradients { h: gh, w: gw, b: gb })
}
