//! Line-delimited JSON metrics stream.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Result;

/// Bump when the record shape changes; readers check it per line.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricRecord {
    pub schema: u32,
    pub step: usize,
    pub split: String,
    pub loss: f64,
    pub ppl: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub route_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lr: Option<f64>,
}

impl MetricRecord {
    pub fn new(step: usize, split: &str, loss: f64) -> Self {
        MetricRecord {
            schema: METRICS_SCHEMA_VERSION,
            step,
            split: split.to_string(),
            loss,
            ppl: loss.exp(),
            route_fraction: None,
            lr: None,
        }
    }
}

/// Appends one JSON record per line; flushed after every write so partial
/// runs still leave a readable stream.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MetricsWriter {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &MetricRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_records_with_and_without_optionals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.jsonl");
        let mut w = MetricsWriter::create(&path).unwrap();
        let mut a = MetricRecord::new(0, "train", 2.0);
        a.lr = Some(1e-3);
        a.route_fraction = Some(0.75);
        let b = MetricRecord::new(10, "eval/forget", 0.5);
        w.append(&a).unwrap();
        w.append(&b).unwrap();
        drop(w);

        let back = read_metrics(&path).unwrap();
        assert_eq!(back, vec![a.clone(), b.clone()]);
        assert_eq!(back[0].schema, METRICS_SCHEMA_VERSION);
        assert!((back[1].ppl - 0.5f64.exp()).abs() < 1e-15);
    }
}
