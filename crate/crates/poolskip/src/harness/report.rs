//! CSV emission: UTF-8, LF line endings, mandatory header row, and an "NA"
//! sentinel for undefined metrics so downstream plots fail loudly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::diagnostics::LayerDiagnostics;
use crate::error::Result;

pub const RESULTS_HEADER: &str = "seed,epoch,train_loss,top1_error";
pub const DIAGNOSTICS_HEADER: &str =
    "seed,step,layer,l2_l1,dead_fraction,zero_weight_count,inert_fraction";
pub const AGGREGATE_HEADER: &str = "metric,mean,std";

/// One results row per (seed, epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub top1_error: f64,
}

pub fn fmt_f64(v: f64) -> String {
    // Rust's default Display prints the shortest representation that
    // round-trips, which keeps CSVs byte-deterministic and lossless.
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => fmt_f64(v),
        None => "NA".to_string(),
    }
}

/// Incremental CSV writer; rows are flushed as they are appended so partial
/// results survive an aborted run.
pub struct CsvFile {
    out: BufWriter<File>,
}

impl CsvFile {
    pub fn create(path: &Path, header: &str) -> Result<CsvFile> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(header.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(CsvFile { out })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.out.write_all(fields.join(",").as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn results_row(row: &EpochRow) -> Vec<String> {
    vec![
        row.seed.to_string(),
        row.epoch.to_string(),
        fmt_f64(row.train_loss),
        fmt_f64(row.top1_error),
    ]
}

pub fn diagnostics_row(seed: u64, d: &LayerDiagnostics) -> Vec<String> {
    vec![
        seed.to_string(),
        d.step.to_string(),
        d.layer.clone(),
        fmt_opt(d.l2_l1),
        fmt_f64(d.dead_fraction),
        d.zero_weight_count.to_string(),
        fmt_f64(d.inert_fraction),
    ]
}

/// Sample mean and standard deviation (n-1 denominator, matching the
/// mean +/- std reporting convention; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_basics() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert!((m - 5.0).abs() < 1e-12);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        let (m, s) = mean_std(&[3.0]);
        assert_eq!((m, s), (3.0, 0.0));
    }

    #[test]
    fn na_sentinel() {
        assert_eq!(fmt_opt(None), "NA");
        assert_eq!(fmt_opt(Some(0.5)), "0.5");
    }

    #[test]
    fn csv_rows_have_lf_endings() {
        let dir = std::env::temp_dir().join("poolskip_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        let mut f = CsvFile::create(&path, "a,b").unwrap();
        f.row(&["1".into(), "2".into()]).unwrap();
        f.flush().unwrap();
        drop(f);
        let text = std::fs::read(&path).unwrap();
        assert_eq!(text, b"a,b\n1,2\n");
        std::fs::remove_file(&path).unwrap();
    }
}
