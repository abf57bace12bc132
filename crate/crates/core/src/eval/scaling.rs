use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport};
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub params: u64,
    pub task: String,
    pub accuracy: f64,
    pub baseline: f64,
}

/// One row per report, sorted by parameter count. Equal counts keep their
/// input order.
pub fn scaling_report(entries: &[(u64, EvalReport)]) -> Vec<ScalingRow> {
    let mut rows: Vec<ScalingRow> = entries
        .iter()
        .map(|(params, r)| ScalingRow {
            params: *params,
            task: r.task.clone(),
            accuracy: r.accuracy,
            baseline: r.random_baseline,
        })
        .collect();
    rows.sort_by_key(|r| r.params);
    rows
}

pub fn write_scaling_csv(path: &Path, rows: &[ScalingRow]) -> Result<(), EvalError> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        if rows.is_empty() {
            w.write_record(["params", "task", "accuracy", "baseline"])?;
        }
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    write_atomic(path, |w| w.write_all(&buf))?;
    Ok(())
}
