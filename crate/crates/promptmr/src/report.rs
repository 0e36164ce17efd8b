//! Metric rows, CSV output and the aggregate table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use promptmr_core::metrics::{nmse, psnr, ssim, Aggregate, MetricReport, MetricRow};
use promptmr_core::Tensor;

use crate::error::{AppError, AppResult};

pub const ZERO_FILLED: &str = "zero_filled";

/// One row of metrics for a reconstruction against its target.
pub fn score(case: &str, task: &str, accel: usize, model: &str, stage: &str, pred: &Tensor, target: &Tensor) -> AppResult<MetricRow> {
    Ok(MetricRow {
        case: case.into(),
        task: task.into(),
        accel,
        model: model.into(),
        stage: stage.into(),
        nmse: nmse(pred, target)?,
        psnr: psnr(pred, target)?,
        ssim: ssim(pred, target)?,
    })
}

pub fn write_csv(report: &MetricReport, path: &Path) -> AppResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    for r in &report.rows {
        w.serialize(r).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_csv(path: &Path) -> AppResult<MetricReport> {
    let mut r = csv::Reader::from_path(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    let rows = r
        .deserialize()
        .collect::<Result<Vec<MetricRow>, _>>()
        .map_err(|e| AppError::Data(format!("{}: {e}", path.display())))?;
    Ok(MetricReport { rows })
}

/// Aggregates as a fixed-width text table; NMSE is shown ×10⁻².
pub fn table(aggs: &[Aggregate]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>5} {:<16} {:<7} {:>5} {:>12} {:>9} {:>7}",
        "task", "accel", "model", "stage", "cases", "NMSE(1e-2)", "PSNR", "SSIM"
    );
    for a in aggs {
        let k = &a.key;
        let _ = write!(
            s,
            "{:<10} {:>5} {:<16} {:<7} {:>5} {:>12.4} {:>9.3} {:>7.4}",
            k.task,
            format!("x{}", k.accel),
            k.model,
            k.stage,
            a.cases,
            a.nmse * 100.0,
            a.psnr,
            a.ssim
        );
        if a.psnr_excluded > 0 {
            let _ = write!(s, "  ({} exact, excluded from PSNR)", a.psnr_excluded);
        }
        s.push('\n');
    }
    s
}

pub fn write_report(report: &MetricReport, dir: &Path) -> AppResult<Vec<Aggregate>> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    write_csv(report, &dir.join("report.csv"))?;
    let aggs = report.aggregate();
    for a in &aggs {
        if a.psnr_excluded > 0 {
            log::warn!("{:?}: {} exact reconstructions excluded from mean PSNR", a.key, a.psnr_excluded);
        }
    }
    let p = dir.join("report.txt");
    fs::write(&p, table(&aggs)).map_err(|e| AppError::io(&p, e))?;
    Ok(aggs)
}
