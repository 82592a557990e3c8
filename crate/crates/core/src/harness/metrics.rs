use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_CSV_HEADER: &str = "epoch,train_acc,test_acc,train_loss,test_loss,pristine_acc,pristine_loss,corrupt_acc,corrupt_loss,lr,wall_ms";

/// One row per epoch. Pristine/corrupt fields are `None` when the
/// corresponding evaluation subset is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub pristine_acc: Option<f64>,
    pub pristine_loss: Option<f64>,
    pub corrupt_acc: Option<f64>,
    pub corrupt_loss: Option<f64>,
    pub lr: f64,
    /// Zero unless wall-time recording was requested.
    pub wall_ms: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.train_acc,
            self.test_acc,
            self.train_loss,
            self.test_loss,
            opt(self.pristine_acc),
            opt(self.pristine_loss),
            opt(self.corrupt_acc),
            opt(self.corrupt_loss),
            self.lr,
            self.wall_ms
        )
    }

    pub fn gap(&self) -> f64 {
        self.train_acc - self.test_acc
    }
}

pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(METRICS_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Data(format!("metrics csv line {line}: bad field {s:?}")))
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, line).map(Some)
    }
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_CSV_HEADER => {}
        other => {
            return Err(Error::Data(format!(
                "metrics csv: unexpected header {other:?}"
            )))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 2;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 11 {
                return Err(Error::Data(format!("metrics csv line {line}: {} fields", f.len())));
            }
            Ok(MetricsRecord {
                epoch: parse_field(f[0], line)?,
                train_acc: parse_field(f[1], line)?,
                test_acc: parse_field(f[2], line)?,
                train_loss: parse_field(f[3], line)?,
                test_loss: parse_field(f[4], line)?,
                pristine_acc: parse_opt(f[5], line)?,
                pristine_loss: parse_opt(f[6], line)?,
                corrupt_acc: parse_opt(f[7], line)?,
                corrupt_loss: parse_opt(f[8], line)?,
                lr: parse_field(f[9], line)?,
                wall_ms: parse_field(f[10], line)?,
            })
        })
        .collect()
}

/// Append-only CSV sink: header at creation, one flushed row per epoch.
pub struct MetricsCsv<W: Write> {
    out: W,
}

impl<W: Write> MetricsCsv<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{METRICS_CSV_HEADER}")?;
        out.flush()?;
        Ok(MetricsCsv { out })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.out, "{}", record.csv_row())?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Train-minus-test accuracy at the final epoch and at the epoch of best
/// test accuracy (first such epoch on ties).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub final_epoch: usize,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub final_gap: f64,
    pub best_test_epoch: usize,
    pub best_test_acc: f64,
    pub gap_at_best_test: f64,
}

pub fn gap_summary(records: &[MetricsRecord]) -> Option<GapSummary> {
    let last = records.last()?;
    let best = records
        .iter()
        .fold(&records[0], |b, r| if r.test_acc > b.test_acc { r } else { b });
    Some(GapSummary {
        final_epoch: last.epoch,
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        final_gap: last.gap(),
        best_test_epoch: best.epoch,
        best_test_acc: best.test_acc,
        gap_at_best_test: best.gap(),
    })
}

/// First epoch whose value reaches `threshold`.
pub fn first_epoch_reaching(
    records: &[MetricsRecord],
    threshold: f64,
    field: impl Fn(&MetricsRecord) -> Option<f64>,
) -> Option<usize> {
    records
        .iter()
        .find(|r| field(r).is_some_and(|v| v >= threshold))
        .map(|r| r.epoch)
}
