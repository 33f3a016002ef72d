//! Batch evaluation: match prediction/ground-truth/trimap files by stem, run
//! the four metrics per sample, and write a JSON report plus a text table.

use std::path::{Path, PathBuf};

use crate::error::{MatteError, Result};
use crate::imaging::{load_alpha, AlphaMatte};
use crate::metrics::{evaluate, report_from_rows, MetricReport};
use crate::trimap::{load_trimap_png, Trimap};

use super::data::list_pngs;
use super::thread_cap;

pub struct EvalOutcome {
    pub report: MetricReport,
    /// Ground-truth stems without a matching prediction or trimap; a
    /// non-empty list means a nonzero exit code.
    pub skipped: Vec<String>,
    pub report_path: PathBuf,
}

pub fn eval(pred_dir: &Path, gt_dir: &Path, trimap_dir: &Path, out_dir: &Path) -> Result<EvalOutcome> {
    let gts = list_pngs(gt_dir)?;
    if gts.is_empty() {
        return Err(MatteError::Data(format!(
            "no ground-truth mattes in {}",
            gt_dir.display()
        )));
    }
    let mut samples: Vec<(String, AlphaMatte, AlphaMatte, Trimap)> = Vec::new();
    let mut skipped = Vec::new();
    for (stem, gt_path) in gts {
        let pred_path = pred_dir.join(format!("{stem}.png"));
        let trimap_path = trimap_dir.join(format!("{stem}.png"));
        if !pred_path.exists() || !trimap_path.exists() {
            log::warn!("skipping {stem}: missing prediction or trimap");
            skipped.push(stem);
            continue;
        }
        let gt = load_alpha(&gt_path)?;
        let pred = load_alpha(&pred_path)?;
        let trimap = load_trimap_png(&trimap_path)?;
        if gt.height != pred.height
            || gt.width != pred.width
            || gt.height != trimap.height
            || gt.width != trimap.width
        {
            return Err(MatteError::Data(format!(
                "{stem}: matte/trimap sizes differ ({}x{} vs {}x{} vs {}x{})",
                gt.height, gt.width, pred.height, pred.width, trimap.height, trimap.width
            )));
        }
        samples.push((stem, gt, pred, trimap));
    }
    if samples.is_empty() {
        return Err(MatteError::Data("no evaluable sample pairs".into()));
    }

    let report = evaluate_parallel(&samples)?;

    std::fs::create_dir_all(out_dir).map_err(|e| MatteError::io(out_dir, e))?;
    let report_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| MatteError::Data(format!("report serialization: {e}")))?;
    std::fs::write(&report_path, json).map_err(|e| MatteError::io(&report_path, e))?;
    let table_path = out_dir.join("report.txt");
    std::fs::write(&table_path, report.format_table()).map_err(|e| MatteError::io(&table_path, e))?;

    Ok(EvalOutcome {
        report,
        skipped,
        report_path,
    })
}

/// Per-sample metrics are independent; chunks run on up to `thread_cap()`
/// threads and the rows are re-sorted before assembly, so the report is
/// identical regardless of worker count.
fn evaluate_parallel(samples: &[(String, AlphaMatte, AlphaMatte, Trimap)]) -> Result<MetricReport> {
    let workers = thread_cap().min(samples.len());
    if workers <= 1 {
        return evaluate(samples);
    }
    let chunk_size = samples.len().div_ceil(workers);
    let results: Vec<Result<MetricReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = samples
            .chunks(chunk_size)
            .map(|chunk| scope.spawn(move || evaluate(chunk)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut rows = Vec::with_capacity(samples.len());
    for r in results {
        rows.extend(r?.samples);
    }
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(report_from_rows(rows))
}
