//! Per-iteration training records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One optimizer step. Loss components that a stage does not use stay 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub loss: f64,
    pub det: f64,
    pub det_masked: f64,
    pub reg: f64,
    pub hard_ema: f64,
    pub hard_static: f64,
    pub soft_static: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub pseudo_labels: f64,
    /// Target AP50, on iterations where evaluation was scheduled.
    pub eval_ap50: Option<f64>,
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_fixed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![
            MetricsRow { iteration: 0, loss: 1.5, ..Default::default() },
            MetricsRow { iteration: 1, eval_ap50: Some(0.25), ..Default::default() },
        ];
        write_metrics(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "iteration,loss,det,det_masked,reg,hard_ema,hard_static,soft_static,w3,w4,w5,pseudo_labels,eval_ap50\n"
        ));
        assert_eq!(read_metrics(&path).unwrap(), rows);
    }
}
