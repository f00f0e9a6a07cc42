//! Full-batch gradient descent: free-feature UFM training and a small ReLU MLP.

mod gradcheck;
mod mlp;
mod ufm_gd;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::format_f64;
use crate::metrics::{format_maybe, NrcReport};

pub use crate::objective::{fit_residual, ufm_gradients, ufm_loss, UfmGradients};
pub use gradcheck::{finite_diff_check_mlp, finite_diff_check_ufm, MlpGradCheck};
pub use mlp::{
    init_mlp, mlp_backward, mlp_forward, mlp_loss, train_mlp, Activation, DenseLayer, ForwardPass,
    MlpArch, MlpParams, MlpRegularization,
};
pub use ufm_gd::train_ufm_gd;

/// Loss above this (or non-finite) aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub log_every: usize,
    pub seed: u64,
    /// Standard deviation of the entrywise Gaussian initialization.
    pub init_scale: f64,
    /// Uniform L2 penalty on every MLP parameter.
    pub weight_decay: f64,
    /// Apply ReLU to the last hidden layer.
    pub penultimate_relu: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            steps: 10_000,
            log_every: 100,
            seed: 0,
            init_scale: 0.1,
            weight_decay: 0.0,
            penultimate_relu: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) || !positive(self.init_scale) {
            return Err(Error::InvalidInput(
                "learning_rate and init_scale must be positive".into(),
            ));
        }
        if self.steps == 0 || self.log_every == 0 {
            return Err(Error::InvalidInput("steps and log_every must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidInput("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub(crate) fn should_log(&self, step: usize) -> bool {
        step.is_multiple_of(self.log_every) || step == self.steps
    }
}

/// Parameters at the end of a run.
#[derive(Debug, Clone, PartialEq)]
pub enum FinalState {
    Ufm {
        features: DMatrix<f64>,
        weights: DMatrix<f64>,
        bias: DVector<f64>,
    },
    Mlp {
        params: MlpParams,
        /// Training-set features of the final model.
        features: DMatrix<f64>,
    },
}

impl FinalState {
    /// `(H, W, b)` of the last layer.
    pub fn last_layer(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DVector<f64>) {
        match self {
            FinalState::Ufm { features, weights, bias } => (features, weights, bias),
            FinalState::Mlp { params, features } => (features, &params.head.weight, &params.head.bias),
        }
    }
}

/// Logged series; all vectors have one entry per logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub steps: Vec<usize>,
    pub loss: Vec<f64>,
    /// Unregularized fit term `(1/2M)||prediction - Y||^2`.
    pub mse: Vec<f64>,
    pub r_squared: Vec<f64>,
    pub nrc_reports: Vec<NrcReport>,
    pub final_state: FinalState,
}

pub const TRACE_HEADER: &str = "step,loss,mse,r2,nrc1,nrc2,nrc3,gamma,whiteness";

impl TrainTrace {
    pub fn final_loss(&self) -> f64 {
        *self.loss.last().expect("trace has at least one entry")
    }

    pub fn final_report(&self) -> &NrcReport {
        self.nrc_reports.last().expect("trace has at least one entry")
    }

    pub fn csv_row(&self, i: usize) -> String {
        let r = &self.nrc_reports[i];
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.steps[i],
            format_f64(self.loss[i]),
            format_f64(self.mse[i]),
            format_f64(self.r_squared[i]),
            format_f64(r.nrc1),
            format_f64(r.nrc2),
            format_maybe(r.nrc3),
            format_maybe(r.gamma_used),
            format_maybe(r.residual_whiteness),
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{TRACE_HEADER}").unwrap();
        for i in 0..self.steps.len() {
            writeln!(out, "{}", self.csv_row(i)).unwrap();
        }
        out
    }
}

/// `1 - ||residual||^2 / ||Y - Ybar||^2`, pooled over all target dimensions.
pub fn r_squared(residual: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let spread = crate::linalg::center_columns(y).norm_squared();
    1.0 - residual.norm_squared() / spread
}

pub(crate) fn check_divergence(step: usize, loss: f64, last_finite: Option<usize>) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Divergence {
            step,
            loss,
            last_finite_step: last_finite,
        });
    }
    Ok(())
}
