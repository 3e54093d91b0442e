use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::channel::{count_overhead, ratio_percent, OverheadScheme, SerPoint};
use crate::error::{Error, Result};
use crate::harness::eval::{symbols_per_image, EvalReport};
use crate::mae::ModelConfig;
use crate::training::csv_error;

pub const EVAL_HEADER: &str = "variant,channel,snr_db,epsilon,clean_acc,adv_acc,index_error_rate,symbols_per_image";
pub const OVERHEAD_HEADER: &str = "scheme,symbols_per_image,ratio_to_reference";
pub const SER_HEADER: &str = "snr_db,symbols,symbol_errors,ser,index_error_rate";

pub const OVERHEAD_FILE: &str = "table1_overhead.csv";
pub const SER_FILE: &str = "ser_sweep.csv";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverheadRow {
    pub scheme: String,
    pub symbols_per_image: u64,
    pub ratio_to_reference: String,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the report to its figure file under `dir` and returns the path.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<PathBuf> {
    report.validate()?;
    if report.records.is_empty() {
        return Err(Error::contract("report has no records"));
    }
    let path = dir.join(report.kind.file_name());
    write_rows(&path, &report.records)?;
    Ok(path)
}

/// The reference rows, then the codebook and raw-feature schemes of `model`.
pub fn overhead_rows(model: &ModelConfig) -> Result<Vec<OverheadRow>> {
    let reference = count_overhead(&OverheadScheme::jpeg_ldpc_reference())?;
    let row = |scheme: &str, symbols: u64| OverheadRow {
        scheme: scheme.to_string(),
        symbols_per_image: symbols,
        ratio_to_reference: ratio_percent(symbols, reference),
    };
    let raw = ModelConfig {
        codebook_size: 0,
        ..model.clone()
    };
    let coded = ModelConfig {
        codebook_size: model.codebook_size.max(2),
        ..model.clone()
    };
    Ok(vec![
        row("jpeg_ldpc_reference", reference),
        row("mae_codebook", count_overhead(&OverheadScheme::full_codebook())?),
        row("desk_mae_codebook", symbols_per_image(&coded)?),
        row("desk_raw_features", symbols_per_image(&raw)?),
    ])
}

pub fn emit_overhead(model: &ModelConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(OVERHEAD_FILE);
    write_rows(&path, &overhead_rows(model)?)?;
    Ok(path)
}

pub fn emit_ser(points: &[SerPoint], dir: &Path) -> Result<PathBuf> {
    let path = dir.join(SER_FILE);
    write_rows(&path, points)?;
    Ok(path)
}
