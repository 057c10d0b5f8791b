//! CSV plumbing for the command layer: query matrices in, predictions,
//! traces, and benchmark reports out. All numeric output uses the shortest
//! round-trip float encoding, so identical runs produce identical bytes.

use std::path::Path;

use nalgebra::DMatrix;

use dlgp::metrics::{BenchmarkReport, REFERENCE_NMSE};
use dlgp::model::PosteriorPrediction;
use dlgp::{Error, Result};

/// Error if an input file is absent, with the path spelled out.
pub fn existing(path: std::path::PathBuf) -> Result<std::path::PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Input(format!("file not found: {}", path.display())))
    }
}

/// Create the parent directory of an output file if needed.
pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn parse_field(text: &str, line: usize, column: usize) -> Result<f64> {
    let value: f64 = text.trim().parse().map_err(|_| {
        Error::Input(format!("line {line}: column {column}: expected a number, found {text:?}"))
    })?;
    if !value.is_finite() {
        return Err(Error::Input(format!(
            "line {line}: column {column}: non-finite value {value}"
        )));
    }
    Ok(value)
}

/// Read a header-plus-numbers CSV into a dense matrix. Header names are not
/// interpreted; every data cell must be a finite number.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let width = reader.headers()?.len();
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record?;
        if record.len() != width {
            return Err(Error::Input(format!(
                "line {line}: expected {width} fields, found {}",
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            values.push(parse_field(cell, line, c + 1)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Input(format!(
            "{}: no data rows after the header",
            path.display()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, width, &values))
}

/// One row per query; `y_<i>_mean, y_<i>_lo, y_<i>_hi` per output.
pub fn write_predictions_csv(path: &Path, preds: &[PosteriorPrediction]) -> Result<()> {
    ensure_parent(path)?;
    let mut writer = csv::Writer::from_path(path)?;
    let p = preds.first().map(|pr| pr.mean.len()).unwrap_or(0);
    let mut header = Vec::with_capacity(3 * p);
    for i in 1..=p {
        header.push(format!("y_{i}_mean"));
        header.push(format!("y_{i}_lo"));
        header.push(format!("y_{i}_hi"));
    }
    writer.write_record(&header)?;
    for pred in preds {
        let mut row = Vec::with_capacity(3 * p);
        for i in 0..p {
            row.push(pred.mean[i].to_string());
            row.push(pred.lo[i].to_string());
            row.push(pred.hi[i].to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Tidy dump of each query's predictive covariance: `query,row,col,value`,
/// all indices zero-based, values on the destandardized output scale.
pub fn write_covariance_csv(path: &Path, preds: &[PosteriorPrediction]) -> Result<()> {
    ensure_parent(path)?;
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["query", "row", "col", "value"])?;
    for (k, pred) in preds.iter().enumerate() {
        let p = pred.covariance.nrows();
        for i in 0..p {
            for j in 0..p {
                writer.write_record([
                    k.to_string(),
                    i.to_string(),
                    j.to_string(),
                    pred.covariance[(i, j)].to_string(),
                ])?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Likelihood trace: one row per gradient step.
pub fn write_trace_csv(path: &Path, trace: &[(usize, f64)]) -> Result<()> {
    ensure_parent(path)?;
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["step", "log_likelihood"])?;
    for (step, value) in trace {
        writer.write_record([step.to_string(), value.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-split rows, then `mean`/`sd` aggregate rows per model, then external
/// reference rows for the same protocol.
pub fn write_benchmark_csv(path: &Path, report: &BenchmarkReport) -> Result<()> {
    ensure_parent(path)?;
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["model", "split_id", "nmse", "nlpd", "nlpd_std", "coverage90"])?;
    for o in &report.outcomes {
        writer.write_record([
            o.model.clone(),
            o.split.to_string(),
            o.nmse.to_string(),
            opt(o.nlpd),
            opt(o.nlpd_std),
            o.coverage90.to_string(),
        ])?;
    }
    for s in &report.summaries {
        writer.write_record([
            s.model.clone(),
            "mean".into(),
            s.nmse_mean.to_string(),
            opt(s.nlpd_mean),
            opt(s.nlpd_std_mean),
            s.coverage90_mean.to_string(),
        ])?;
        writer.write_record([
            s.model.clone(),
            "sd".into(),
            s.nmse_sd.to_string(),
            opt(s.nlpd_sd),
            opt(s.nlpd_std_sd),
            String::new(),
        ])?;
    }
    for (model, mean, sd) in REFERENCE_NMSE {
        writer.write_record([
            format!("reference:{model}"),
            "mean".into(),
            mean.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
        writer.write_record([
            format!("reference:{model}"),
            "sd".into(),
            sd.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn pm(mean: Option<f64>, sd: Option<f64>) -> String {
    match (mean, sd) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "n/a".into(),
    }
}

/// Human-readable summary for standard output.
pub fn render_benchmark_table(report: &BenchmarkReport, n_splits: usize) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:>6} {:>18} {:>18} {:>18} {:>11}\n",
        "model", "splits", "nmse", "nlpd", "nlpd_std", "coverage90"
    ));
    for s in &report.summaries {
        out.push_str(&format!(
            "{:<10} {:>6} {:>18} {:>18} {:>18} {:>11.3}\n",
            s.model,
            format!("{}/{}", s.n_ok, n_splits),
            pm(Some(s.nmse_mean), Some(s.nmse_sd)),
            pm(s.nlpd_mean, s.nlpd_sd),
            pm(s.nlpd_std_mean, s.nlpd_std_sd),
            s.coverage90_mean,
        ));
    }
    out.push_str("reference nmse (300-split protocol): ");
    let refs: Vec<String> = REFERENCE_NMSE
        .iter()
        .map(|(m, mean, sd)| format!("{m} {mean:.2} ± {sd:.2}"))
        .collect();
    out.push_str(&refs.join(", "));
    out.push('\n');
    out
}
