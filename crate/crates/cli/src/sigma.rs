//! `--sigma` grammar: `diag:a,b,..`, `full:r11,r12;r21,r22`, `iso:n:v` or `file:path.csv`.

use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, CliResult};

fn numbers(list: &str) -> CliResult<Vec<f64>> {
    list.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::usage(format!("bad number '{t}' in --sigma")))
        })
        .collect()
}

pub fn parse_sigma(s: &str) -> CliResult<DMatrix<f64>> {
    let (kind, body) = s
        .split_once(':')
        .ok_or_else(|| CliError::usage(format!("--sigma must look like diag:a,b or full:..; got '{s}'")))?;
    match kind {
        "diag" => Ok(DMatrix::from_diagonal(&DVector::from_vec(numbers(body)?))),
        "iso" => {
            let (n, v) = body
                .split_once(':')
                .ok_or_else(|| CliError::usage("--sigma iso form is iso:n:value"))?;
            let n: usize = n.trim().parse().map_err(|_| CliError::usage(format!("bad size '{n}' in --sigma")))?;
            let v = numbers(v)?;
            if v.len() != 1 {
                return Err(CliError::usage("--sigma iso form takes a single value"));
            }
            Ok(DMatrix::identity(n, n) * v[0])
        }
        "full" => {
            let rows: Vec<Vec<f64>> = body.split(';').map(numbers).collect::<CliResult<_>>()?;
            Ok(nrc_lab::io::matrix_from_rows(&rows)?)
        }
        "file" => {
            let path = std::path::Path::new(body);
            crate::error::require_file(path)?;
            Ok(nrc_lab::io::load_matrix(path, nrc_lab::io::Layout::SamplesAsColumns, false)?.storage)
        }
        other => Err(CliError::usage(format!("unknown --sigma form '{other}'"))),
    }
}
