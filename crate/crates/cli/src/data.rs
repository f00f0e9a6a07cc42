use std::path::Path;

use nalgebra::DMatrix;
use nrc_lab::dataset::{RegressionDataset, TargetMatrix};
use nrc_lab::io::load_matrix;

use crate::config::LayoutArg;
use crate::error::{require_file, CliResult};

/// A sample matrix as `dim x M`.
pub fn load_samples(path: &Path, layout: LayoutArg, header: bool) -> CliResult<DMatrix<f64>> {
    require_file(path)?;
    Ok(load_matrix(path, layout.into(), header)?.into_columns())
}

pub fn load_targets(path: &Path, layout: LayoutArg, header: bool) -> CliResult<TargetMatrix> {
    Ok(TargetMatrix::new(load_samples(path, layout, header)?)?)
}

pub fn load_dataset(x: &Path, y: &Path, layout: LayoutArg, header: bool) -> CliResult<RegressionDataset> {
    let inputs = load_samples(x, layout, header)?;
    Ok(RegressionDataset::new(inputs, load_targets(y, layout, header)?)?)
}
