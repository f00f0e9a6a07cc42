pub mod gen;
pub mod metrics;
pub mod solve;
pub mod sweep;
pub mod train;

use nrc_lab::metrics::{report_csv_header, report_csv_row, NrcReport};
use nrc_lab::ufm::UfmConfig;

use crate::config::Format;
use crate::error::{CliError, CliResult};

/// `(lambda_h, lambda_w)` from any consistent subset of the two and `c`.
pub fn resolve_ufm(lambda_h: Option<f64>, lambda_w: Option<f64>, c: Option<f64>) -> CliResult<UfmConfig> {
    let cfg = match (lambda_h, lambda_w, c) {
        (Some(h), Some(w), None) => UfmConfig::new(h, w)?,
        (Some(h), Some(w), Some(c)) => {
            if (h * w - c).abs() > 1e-12 * c.abs().max(1e-300) {
                return Err(CliError::usage(format!("lambda_h * lambda_w = {} disagrees with c = {c}", h * w)));
            }
            UfmConfig::new(h, w)?
        }
        (None, None, Some(c)) => UfmConfig::balanced(c)?,
        (Some(h), None, Some(c)) if h > 0.0 => UfmConfig::new(h, c / h)?,
        (None, Some(w), Some(c)) if w > 0.0 => UfmConfig::new(c / w, w)?,
        _ => {
            return Err(CliError::usage(
                "give lambda_h and lambda_w, or c (optionally with one of them)",
            ))
        }
    };
    Ok(cfg)
}

pub fn format_report(report: &NrcReport, step: usize, format: Format) -> String {
    match format {
        Format::Json => {
            let mut v = report.to_json();
            v["step"] = step.into();
            serde_json::to_string_pretty(&v).expect("report is plain data") + "\n"
        }
        Format::Csv => format!("{}\n{}\n", report_csv_header(report.evr.len()), report_csv_row(step, report)),
    }
}

pub fn report_file_name(format: Format) -> &'static str {
    match format {
        Format::Json => "report.json",
        Format::Csv => "report.csv",
    }
}
