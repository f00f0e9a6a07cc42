//! Central finite-difference checks of the analytic gradients.

use nalgebra::{DMatrix, DVector};

use super::mlp::{forward_pass, mlp_backward, mlp_loss, MlpArch, MlpParams, MlpRegularization};
use crate::error::{Error, Result};
use crate::objective::{ufm_gradients, ufm_loss};
use crate::ufm::UfmConfig;

const DENOM_FLOOR: f64 = 1e-12;

fn check_step(step: f64) -> Result<()> {
    if !(1e-8..=1e-2).contains(&step) {
        return Err(Error::InvalidInput(format!("finite-difference step {step} outside [1e-8, 1e-2]")));
    }
    Ok(())
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
    (analytic - numeric).abs() / denom
}

fn central(f: impl Fn(f64) -> Result<f64>, x: f64, step: f64) -> Result<f64> {
    let plus = f(x + step)?;
    let minus = f(x - step)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::Numerical("non-finite loss at a perturbed point".into()));
    }
    Ok((plus - minus) / (2.0 * step))
}

/// Max relative error between [`ufm_gradients`] and central differences of
/// [`ufm_loss`] over every coordinate of `(H, W, b)`.
pub fn finite_diff_check_ufm(
    h: &DMatrix<f64>,
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    y: &DMatrix<f64>,
    cfg: &UfmConfig,
    step: f64,
) -> Result<f64> {
    check_step(step)?;
    let g = ufm_gradients(h, w, b, y, cfg)?;
    let mut worst = 0.0_f64;

    for i in 0..h.len() {
        let num = central(
            |v| {
                let mut t = h.clone();
                t.as_mut_slice()[i] = v;
                ufm_loss(&t, w, b, y, cfg)
            },
            h.as_slice()[i],
            step,
        )?;
        worst = worst.max(rel_error(g.h.as_slice()[i], num));
    }
    for i in 0..w.len() {
        let num = central(
            |v| {
                let mut t = w.clone();
                t.as_mut_slice()[i] = v;
                ufm_loss(h, &t, b, y, cfg)
            },
            w.as_slice()[i],
            step,
        )?;
        worst = worst.max(rel_error(g.w.as_slice()[i], num));
    }
    for i in 0..b.len() {
        let num = central(
            |v| {
                let mut t = b.clone();
                t[i] = v;
                ufm_loss(h, w, &t, y, cfg)
            },
            b[i],
            step,
        )?;
        worst = worst.max(rel_error(g.b[i], num));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpGradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation flipped a ReLU.
    pub excluded: usize,
    /// Smallest `|pre-activation|` among ReLU units at the base point.
    pub kink_margin: f64,
}

fn relu_masks(arch: &MlpArch, params: &MlpParams, x: &DMatrix<f64>, penultimate_relu: bool) -> Result<Vec<Vec<bool>>> {
    let pass = forward_pass(arch, params, x, penultimate_relu)?;
    Ok(pass.pre.iter().map(|z| z.iter().map(|&v| v > 0.0).collect()).collect())
}

/// Central differences of [`mlp_loss`] against [`mlp_backward`].
///
/// Coordinates whose perturbation changes any ReLU on/off pattern are not
/// compared; their count is reported.
pub fn finite_diff_check_mlp(
    arch: &MlpArch,
    params: &MlpParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    reg: &MlpRegularization,
    penultimate_relu: bool,
    step: f64,
) -> Result<MlpGradCheck> {
    check_step(step)?;
    let analytic = mlp_backward(arch, params, x, y, reg, penultimate_relu)?.flatten();
    let base_pass = forward_pass(arch, params, x, penultimate_relu)?;
    let num_hidden = base_pass.pre.len();
    let kink_margin = base_pass
        .pre
        .iter()
        .enumerate()
        .filter(|(i, _)| i + 1 < num_hidden || penultimate_relu)
        .flat_map(|(_, z)| z.iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min);
    let base_masks = relu_masks(arch, params, x, penultimate_relu)?;

    let flat = params.flatten();
    let mut probe = params.clone();
    let mut worst = 0.0_f64;
    let (mut checked, mut excluded) = (0, 0);
    for i in 0..flat.len() {
        let mut perturbed = flat.clone();
        let mut eval = |v: f64| -> Result<(f64, bool)> {
            perturbed[i] = v;
            probe.set_flat(&perturbed);
            let (loss, _) = mlp_loss(arch, &probe, x, y, reg, penultimate_relu)?;
            let same = relu_masks(arch, &probe, x, penultimate_relu)? == base_masks;
            Ok((loss, same))
        };
        let (plus, same_plus) = eval(flat[i] + step)?;
        let (minus, same_minus) = eval(flat[i] - step)?;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numerical("non-finite loss at a perturbed point".into()));
        }
        if !(same_plus && same_minus) {
            excluded += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        worst = worst.max(rel_error(analytic[i], numeric));
        checked += 1;
    }
    Ok(MlpGradCheck { max_rel_error: worst, checked, excluded, kink_margin })
}
