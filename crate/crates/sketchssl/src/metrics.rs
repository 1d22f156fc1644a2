//! Metric logs: NDJSON (one object per record) plus a long-format CSV.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sketchssl_core::trainer::{MetricRecord, MetricSink};

pub const NDJSON: &str = "metrics.ndjson";
pub const CSV: &str = "metrics.csv";

/// One logged line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub phase: String,
    pub step: u64,
    pub cycle: u64,
    pub values: serde_json::Map<String, serde_json::Value>,
    /// Seconds since the writer was opened.
    pub wall_time: f64,
}

impl LogLine {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).and_then(|v| v.as_f64())
    }
}

/// Appends records to `metrics.ndjson` and `metrics.csv` in a directory.
pub struct FileSink {
    ndjson: BufWriter<File>,
    csv: BufWriter<File>,
    start: Instant,
    error: Option<std::io::Error>,
    echo: bool,
}

impl FileSink {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let open = |p: PathBuf| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(&p)
                .with_context(|| format!("opening {}", p.display()))
        };
        let csv_path = dir.join(CSV);
        let fresh = !csv_path.exists();
        let mut csv = BufWriter::new(open(csv_path)?);
        if fresh {
            writeln!(csv, "phase,step,cycle,key,value,wall_time")?;
        }
        Ok(Self {
            ndjson: BufWriter::new(open(dir.join(NDJSON))?),
            csv,
            start: Instant::now(),
            error: None,
            echo: false,
        })
    }

    /// Also log each record at info level.
    pub fn with_echo(mut self) -> Self {
        self.echo = true;
        self
    }

    fn write(&mut self, r: &MetricRecord) -> std::io::Result<()> {
        let wall = self.start.elapsed().as_secs_f64();
        let mut values = serde_json::Map::new();
        for (k, v) in &r.values {
            // non-finite values have no JSON form; they are logged as null
            values.insert(
                k.clone(),
                serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into),
            );
            writeln!(
                self.csv,
                "{},{},{},{},{},{:.3}",
                r.phase.name(),
                r.step,
                r.cycle,
                k,
                v,
                wall
            )?;
        }
        let line = LogLine {
            phase: r.phase.name().into(),
            step: r.step,
            cycle: r.cycle,
            values,
            wall_time: wall,
        };
        writeln!(self.ndjson, "{}", serde_json::to_string(&line)?)?;
        if self.echo {
            log::info!(
                "{} step {} cycle {}: {:?}",
                r.phase.name(),
                r.step,
                r.cycle,
                r.values
            );
        }
        Ok(())
    }

    /// Flush both files, reporting the first write error seen.
    pub fn flush(&mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e.into());
        }
        self.ndjson.flush()?;
        self.csv.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.flush()
    }
}

impl MetricSink for FileSink {
    fn record(&mut self, record: MetricRecord) {
        if self.error.is_none() {
            if let Err(e) = self.write(&record) {
                self.error = Some(e);
            }
        }
    }
}

/// Forwards to two sinks.
pub struct Tee<'a>(pub &'a mut dyn MetricSink, pub &'a mut dyn MetricSink);

impl MetricSink for Tee<'_> {
    fn record(&mut self, record: MetricRecord) {
        self.0.record(record.clone());
        self.1.record(record);
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// Log lines with wall time removed, for run-to-run comparison.
pub fn without_wall_time(lines: &[LogLine]) -> Vec<LogLine> {
    lines
        .iter()
        .map(|l| LogLine {
            wall_time: 0.0,
            ..l.clone()
        })
        .collect()
}
