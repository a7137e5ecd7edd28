use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const METRICS_HEADER: &str =
    "epoch,train_loss,train_acc,val_loss,val_acc,alpha_t,beta_t,lambda_t,scale_t,wall_seconds";

/// One line of the metrics CSV. Validation fields are empty on epochs without evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub alpha_t: f64,
    pub beta_t: f64,
    pub lambda_t: f64,
    pub scale_t: f64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    /// Floats use the shortest decimal that parses back to the same value.
    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            opt(self.val_loss),
            opt(self.val_acc),
            self.alpha_t,
            self.beta_t,
            self.lambda_t,
            self.scale_t,
            self.wall_seconds
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv_line());
    }
    out
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    std::fs::write(path, metrics_csv(rows))?;
    Ok(())
}
