//! File emission helpers: RFC-4180 CSVs with one-line headers, JSON stats,
//! and the mean-field curve round trip.

use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use lysim_core::spinal::MeanFieldCurve;
use serde::Serialize;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::WriterBuilder::new().from_writer(file))
}

/// Export the curve as CSV; the convergence metadata rides along as columns
/// so the file is self-describing and importable.
pub fn write_mean_field_csv(path: &Path, curve: &MeanFieldCurve) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "time",
        "value",
        "converged",
        "iterations",
        "residual",
        "exploded",
    ])?;
    for (t, v) in curve.times.iter().zip(&curve.values) {
        w.write_record([
            t.to_string(),
            v.to_string(),
            curve.converged.to_string(),
            curve.iterations.to_string(),
            curve.residual.to_string(),
            curve.exploded.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Import a curve written by [`write_mean_field_csv`]; exercised by the
/// round-trip test that pins the file format.
#[cfg(test)]
fn read_mean_field_csv(path: &Path) -> Result<MeanFieldCurve> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut curve = MeanFieldCurve {
        times: vec![],
        values: vec![],
        converged: false,
        iterations: 0,
        residual: f64::INFINITY,
        exploded: false,
    };
    for record in r.records() {
        let record = record?;
        curve.times.push(record[0].parse()?);
        curve.values.push(record[1].parse()?);
        curve.converged = record[2].parse()?;
        curve.iterations = record[3].parse()?;
        curve.residual = record[4].parse()?;
        curve.exploded = record[5].parse()?;
    }
    anyhow::ensure!(!curve.times.is_empty(), "empty mean-field curve");
    Ok(curve)
}
