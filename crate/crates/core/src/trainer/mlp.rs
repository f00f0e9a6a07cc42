//! A small fully connected ReLU regressor `f(x) = W h(x) + b` trained by
//! hand-written backpropagation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_divergence, r_squared, FinalState, TrainConfig, TrainTrace};
use crate::dataset::{compute_target_stats, gaussian_matrix, RegressionDataset};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{nrc_report, GammaPolicy, Snapshot};
use crate::ufm::UfmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub target_dim: usize,
    pub activation: Activation,
}

impl MlpArch {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, target_dim: usize) -> Result<Self> {
        let arch = Self { input_dim, hidden_dims, target_dim, activation: Activation::Relu };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidInput("hidden_dims must be non-empty and positive".into()));
        }
        if self.input_dim == 0 || self.target_dim == 0 {
            return Err(Error::InvalidInput("input and target dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Width of the last hidden layer (`d`).
    pub fn feature_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl DenseLayer {
    fn zeros(out: usize, inp: usize) -> Self {
        Self { weight: DMatrix::zeros(out, inp), bias: DVector::zeros(out) }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.weight * x;
        for mut col in z.column_iter_mut() {
            col += &self.bias;
        }
        z
    }

    fn norm_squared(&self) -> f64 {
        self.weight.norm_squared() + self.bias.norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hidden: Vec<DenseLayer>,
    /// The linear regressor `(W, b)`.
    pub head: DenseLayer,
}

impl MlpParams {
    pub fn zeros(arch: &MlpArch) -> Self {
        let mut inp = arch.input_dim;
        let hidden = arch
            .hidden_dims
            .iter()
            .map(|&out| {
                let l = DenseLayer::zeros(out, inp);
                inp = out;
                l
            })
            .collect();
        Self { hidden, head: DenseLayer::zeros(arch.target_dim, inp) }
    }

    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.hidden.iter().chain(std::iter::once(&self.head))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.hidden.iter_mut().chain(std::iter::once(&mut self.head))
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat view in layer order, weights (column-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for l in self.layers_mut() {
            let nw = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
    }

    fn axpy(&mut self, alpha: f64, other: &MlpParams) {
        for (l, g) in self.layers_mut().zip(other.layers()) {
            l.weight.zip_apply(&g.weight, |p, v| *p += alpha * v);
            l.bias.axpy(alpha, &g.bias, 1.0);
        }
    }

    /// Writes `layer_<i>.csv` as `[weight | bias]` for each layer (the head last)
    /// and `arch.json`.
    pub fn save(&self, dir: impl AsRef<Path>, arch: &MlpArch, penultimate_relu: bool) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (i, l) in self.layers().enumerate() {
            let combined = DMatrix::from_fn(l.weight.nrows(), l.weight.ncols() + 1, |r, c| {
                if c < l.weight.ncols() { l.weight[(r, c)] } else { l.bias[r] }
            });
            io::write_matrix(dir.join(format!("layer_{i}.csv")), &combined)?;
        }
        io::write_json(
            dir.join("arch.json"),
            &serde_json::json!({ "arch": arch, "penultimate_relu": penultimate_relu }),
        )
    }

    pub fn load(dir: impl AsRef<Path>, arch: &MlpArch) -> Result<Self> {
        let dir = dir.as_ref();
        let mut params = MlpParams::zeros(arch);
        for (i, l) in params.layers_mut().enumerate() {
            let m = io::load_matrix(dir.join(format!("layer_{i}.csv")), io::Layout::SamplesAsColumns, false)?.storage;
            if m.shape() != (l.weight.nrows(), l.weight.ncols() + 1) {
                return Err(Error::Dimension(format!("layer_{i}.csv has shape {:?}", m.shape())));
            }
            l.weight.copy_from(&m.columns(0, l.weight.ncols()));
            l.bias.copy_from(&m.column(l.weight.ncols()));
        }
        Ok(params)
    }
}

/// Gaussian weights with standard deviation `scale`, zero biases.
pub fn init_mlp(arch: &MlpArch, scale: f64, seed: u64) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::zeros(arch);
    for l in params.layers_mut() {
        l.weight = gaussian_matrix(&mut rng, l.weight.nrows(), l.weight.ncols(), scale);
    }
    params
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Pre-activations of each hidden layer.
    pub pre: Vec<DMatrix<f64>>,
    /// Outputs of each hidden layer; the last one is `H`.
    pub post: Vec<DMatrix<f64>>,
    pub predictions: DMatrix<f64>,
}

impl ForwardPass {
    pub fn features(&self) -> &DMatrix<f64> {
        self.post.last().expect("at least one hidden layer")
    }
}

fn check_params(arch: &MlpArch, params: &MlpParams) -> Result<()> {
    let expected = MlpParams::zeros(arch);
    let ok = params.hidden.len() == expected.hidden.len()
        && params.layers().zip(expected.layers()).all(|(a, b)| {
            a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len()
        });
    if !ok {
        return Err(Error::Dimension("parameters do not match architecture".into()));
    }
    Ok(())
}

fn relu_applied(layer: usize, num_hidden: usize, penultimate_relu: bool) -> bool {
    layer + 1 < num_hidden || penultimate_relu
}

pub(crate) fn forward_pass(
    arch: &MlpArch,
    params: &MlpParams,
    x: &DMatrix<f64>,
    penultimate_relu: bool,
) -> Result<ForwardPass> {
    check_params(arch, params)?;
    if x.nrows() != arch.input_dim {
        return Err(Error::Dimension(format!(
            "inputs have dimension {}, architecture expects {}",
            x.nrows(),
            arch.input_dim
        )));
    }
    let num_hidden = params.hidden.len();
    let mut pre = Vec::with_capacity(num_hidden);
    let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(num_hidden);
    for (i, layer) in params.hidden.iter().enumerate() {
        let input = if i == 0 { x } else { &post[i - 1] };
        let z = layer.apply(input);
        let a = if relu_applied(i, num_hidden, penultimate_relu) {
            z.map(|v| v.max(0.0))
        } else {
            z.clone()
        };
        pre.push(z);
        post.push(a);
    }
    let predictions = params.head.apply(&post[num_hidden - 1]);
    Ok(ForwardPass { pre, post, predictions })
}

/// `(predictions n x M, features d x M)`.
pub fn mlp_forward(
    arch: &MlpArch,
    params: &MlpParams,
    x: &DMatrix<f64>,
    penultimate_relu: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut pass = forward_pass(arch, params, x, penultimate_relu)?;
    let features = pass.post.pop().expect("at least one hidden layer");
    Ok((pass.predictions, features))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MlpRegularization {
    /// `(lambda_wd / 2) ||theta||^2` over every parameter, biases included.
    WeightDecay(f64),
    /// `(lambda_h / 2M)||H||^2 + (lambda_w / 2)||W||^2` on the last layer only.
    Ufm(UfmConfig),
}

impl MlpRegularization {
    fn penalty(&self, params: &MlpParams, features: &DMatrix<f64>) -> f64 {
        let m = features.ncols() as f64;
        match self {
            MlpRegularization::WeightDecay(wd) => {
                0.5 * wd * params.layers().map(DenseLayer::norm_squared).sum::<f64>()
            }
            MlpRegularization::Ufm(cfg) => {
                0.5 * cfg.lambda_h() / m * features.norm_squared()
                    + 0.5 * cfg.lambda_w() * params.head.weight.norm_squared()
            }
        }
    }
}

/// `(total loss, fit term)`.
pub fn mlp_loss(
    arch: &MlpArch,
    params: &MlpParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    reg: &MlpRegularization,
    penultimate_relu: bool,
) -> Result<(f64, f64)> {
    let pass = forward_pass(arch, params, x, penultimate_relu)?;
    check_targets(&pass.predictions, y)?;
    let m = y.ncols() as f64;
    let fit = 0.5 / m * (&pass.predictions - y).norm_squared();
    Ok((fit + reg.penalty(params, pass.features()), fit))
}

fn check_targets(pred: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if pred.shape() != y.shape() {
        return Err(Error::Dimension(format!(
            "predictions are {:?}, targets are {:?}",
            pred.shape(),
            y.shape()
        )));
    }
    Ok(())
}

fn backward_from(
    params: &MlpParams,
    pass: &ForwardPass,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    reg: &MlpRegularization,
    penultimate_relu: bool,
) -> MlpParams {
    let m = y.ncols() as f64;
    let num_hidden = params.hidden.len();
    let mut grads = MlpParams {
        hidden: params.hidden.iter().map(|l| DenseLayer::zeros(l.weight.nrows(), l.weight.ncols())).collect(),
        head: DenseLayer::zeros(params.head.weight.nrows(), params.head.weight.ncols()),
    };

    let d_pred = (&pass.predictions - y) / m;
    let features = pass.features();
    grads.head.weight = &d_pred * features.transpose();
    grads.head.bias = d_pred.column_sum();
    let mut d_act = params.head.weight.tr_mul(&d_pred);
    if let MlpRegularization::Ufm(cfg) = reg {
        grads.head.weight += &params.head.weight * cfg.lambda_w();
        d_act += features * (cfg.lambda_h() / m);
    }

    for i in (0..num_hidden).rev() {
        let mut d_pre = d_act;
        if relu_applied(i, num_hidden, penultimate_relu) {
            d_pre.zip_apply(&pass.pre[i], |g, z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let input = if i == 0 { x } else { &pass.post[i - 1] };
        grads.hidden[i].weight = &d_pre * input.transpose();
        grads.hidden[i].bias = d_pre.column_sum();
        d_act = params.hidden[i].weight.tr_mul(&d_pre);
    }

    if let MlpRegularization::WeightDecay(wd) = reg {
        if *wd > 0.0 {
            grads.axpy(*wd, params);
        }
    }
    grads
}

/// Gradient of [`mlp_loss`] by backpropagation (ReLU derivative taken as 0 at 0).
pub fn mlp_backward(
    arch: &MlpArch,
    params: &MlpParams,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    reg: &MlpRegularization,
    penultimate_relu: bool,
) -> Result<MlpParams> {
    let pass = forward_pass(arch, params, x, penultimate_relu)?;
    check_targets(&pass.predictions, y)?;
    Ok(backward_from(params, &pass, x, y, reg, penultimate_relu))
}

/// Full-batch gradient descent on the regularized squared loss.
///
/// Without `ufm_reg` the penalty is weight decay `tc.weight_decay` on every
/// parameter; with it, weight decay must be zero and only `H` and `W` are
/// penalized. NRC reports use an automatically chosen gamma in the first
/// mode and `gamma = c` in the second.
pub fn train_mlp(
    data: &RegressionDataset,
    arch: &MlpArch,
    tc: &TrainConfig,
    ufm_reg: Option<UfmConfig>,
) -> Result<TrainTrace> {
    tc.validate()?;
    arch.validate()?;
    let reg = match ufm_reg {
        Some(cfg) => {
            if tc.weight_decay != 0.0 {
                return Err(Error::InvalidInput(
                    "UFM regularization and weight decay are mutually exclusive".into(),
                ));
            }
            MlpRegularization::Ufm(cfg)
        }
        None => MlpRegularization::WeightDecay(tc.weight_decay),
    };
    let x = &data.inputs;
    let y = data.targets.values();
    if x.nrows() != arch.input_dim || y.nrows() != arch.target_dim {
        return Err(Error::Dimension(format!(
            "dataset is {}->{}, architecture is {}->{}",
            x.nrows(),
            y.nrows(),
            arch.input_dim,
            arch.target_dim
        )));
    }
    let stats = compute_target_stats(&data.targets)?;
    let (policy, report_cfg) = match reg {
        MlpRegularization::Ufm(cfg) => (GammaPolicy::ExactC, Some(cfg)),
        MlpRegularization::WeightDecay(_) => (GammaPolicy::Auto, None),
    };
    let m = y.ncols() as f64;

    let mut params = init_mlp(arch, tc.init_scale, tc.seed);
    let mut trace = TrainTrace {
        steps: Vec::new(),
        loss: Vec::new(),
        mse: Vec::new(),
        r_squared: Vec::new(),
        nrc_reports: Vec::new(),
        final_state: FinalState::Mlp { params: params.clone(), features: DMatrix::zeros(0, 0) },
    };
    let mut last_finite = None;

    for step in 0..=tc.steps {
        let pass = forward_pass(arch, &params, x, tc.penultimate_relu)?;
        let residual = &pass.predictions - y;
        let fit = 0.5 / m * residual.norm_squared();
        let loss = fit + reg.penalty(&params, pass.features());
        check_divergence(step, loss, last_finite)?;
        last_finite = Some(step);

        if tc.should_log(step) {
            let report = nrc_report(
                Snapshot::new(pass.features(), &params.head.weight).with_fit(&params.head.bias, y),
                &stats,
                report_cfg.as_ref(),
                policy,
            )?;
            trace.steps.push(step);
            trace.loss.push(loss);
            trace.mse.push(fit);
            trace.r_squared.push(r_squared(&residual, y));
            trace.nrc_reports.push(report);
        }
        if step == tc.steps {
            let features = pass.post.last().expect("hidden layer").clone();
            trace.final_state = FinalState::Mlp { params, features };
            break;
        }
        let grads = backward_from(&params, &pass, x, y, &reg, tc.penultimate_relu);
        params.axpy(-tc.learning_rate, &grads);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let arch = MlpArch::new(3, vec![4, 5], 2).unwrap();
        let x = DMatrix::from_fn(3, 6, |r, c| r as f64 - c as f64);
        let (pred, feat) = mlp_forward(&arch, &MlpParams::zeros(&arch), &x, true).unwrap();
        assert_eq!(pred, DMatrix::zeros(2, 6));
        assert_eq!(feat, DMatrix::zeros(5, 6));
    }

    #[test]
    fn identity_layer_is_relu_of_inputs() {
        let arch = MlpArch::new(3, vec![3], 1).unwrap();
        let mut params = MlpParams::zeros(&arch);
        params.hidden[0].weight = DMatrix::identity(3, 3);
        let x = DMatrix::from_row_slice(3, 2, &[-1.0, 2.0, 0.5, -0.5, 0.0, -3.0]);
        let (_, feat) = mlp_forward(&arch, &params, &x, true).unwrap();
        assert_eq!(feat, x.map(|v| v.max(0.0)));
        let (_, linear) = mlp_forward(&arch, &params, &x, false).unwrap();
        assert_eq!(linear, x);
    }

    #[test]
    fn batches_concatenate_bitwise() {
        let arch = MlpArch::new(4, vec![7, 5], 2).unwrap();
        let params = init_mlp(&arch, 0.5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = gaussian_matrix(&mut rng, 4, 10, 1.0);
        let (full_p, full_h) = mlp_forward(&arch, &params, &x, true).unwrap();
        let (p1, h1) = mlp_forward(&arch, &params, &x.columns(0, 5).into_owned(), true).unwrap();
        let (p2, h2) = mlp_forward(&arch, &params, &x.columns(5, 5).into_owned(), true).unwrap();
        assert_eq!(full_p.columns(0, 5), p1);
        assert_eq!(full_p.columns(5, 5), p2);
        assert_eq!(full_h.columns(0, 5), h1);
        assert_eq!(full_h.columns(5, 5), h2);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let arch = MlpArch::new(3, vec![4], 2).unwrap();
        let params = MlpParams::zeros(&arch);
        assert!(matches!(
            mlp_forward(&arch, &params, &DMatrix::zeros(2, 5), true),
            Err(Error::Dimension(_))
        ));
        let other = MlpArch::new(3, vec![5], 2).unwrap();
        assert!(mlp_forward(&other, &params, &DMatrix::zeros(3, 5), true).is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let arch = MlpArch::new(2, vec![3], 2).unwrap();
        let params = init_mlp(&arch, 1.0, 1);
        let mut other = MlpParams::zeros(&arch);
        other.set_flat(&params.flatten());
        assert_eq!(other, params);
        assert_eq!(params.num_params(), 2 * 3 + 3 + 3 * 2 + 2);
    }

    #[test]
    fn params_save_and_load() {
        let arch = MlpArch::new(2, vec![3, 4], 2).unwrap();
        let params = init_mlp(&arch, 1.0, 1);
        let dir = tempfile::tempdir().unwrap();
        params.save(dir.path(), &arch, true).unwrap();
        assert_eq!(MlpParams::load(dir.path(), &arch).unwrap(), params);
        assert!(dir.path().join("arch.json").exists());
    }

    #[test]
    fn modes_are_exclusive() {
        let arch = MlpArch::new(2, vec![3], 1).unwrap();
        let y = crate::dataset::TargetMatrix::new(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, -1.0])).unwrap();
        let data = RegressionDataset::new(DMatrix::zeros(2, 3), y).unwrap();
        let tc = TrainConfig { weight_decay: 1e-3, steps: 1, ..TrainConfig::default() };
        let r = train_mlp(&data, &arch, &tc, Some(UfmConfig::balanced(1e-4).unwrap()));
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }
}
