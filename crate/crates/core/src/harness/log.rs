use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{Condition, SessionConfig};
use crate::sim::PerturbationEvent;
use crate::{Error, Result};

pub const LOG_VERSION: u32 = 1;

/// First line of every log: the full configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub config: SessionConfig,
    /// Digest of the frozen parameter file, when one was loaded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_digest: Option<String>,
}

/// One tick. Position and velocity are the plant state after the tick;
/// `sensor` is the reading the controller acted on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub motor: Vec<f64>,
    pub sensor: Vec<f64>,
    pub ds: Vec<f64>,
    pub xi: Vec<f64>,
    pub tipi: f64,
    pub xi_norm: f64,
    pub condition: Condition,
    /// The window held enough history for deviations this tick.
    pub warm: bool,
    pub learned: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<PerturbationEvent>,
}

impl StepRecord {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Last line: how the session ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogSummary {
    pub steps: u64,
    pub digest_start: String,
    pub digest_end: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort: Option<String>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LineRef<'a> {
    Header(&'a LogHeader),
    Step(&'a StepRecord),
    Summary(&'a LogSummary),
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(LogHeader),
    Step(StepRecord),
    Summary(LogSummary),
}

/// A session trajectory, stored as JSON Lines: header, one line per step,
/// summary.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub steps: Vec<StepRecord>,
    pub summary: Option<LogSummary>,
}

impl TrajectoryLog {
    pub fn header_line(header: &LogHeader) -> String {
        serde_json::to_string(&LineRef::Header(header)).expect("header serializes")
    }

    pub fn step_line(step: &StepRecord) -> String {
        serde_json::to_string(&LineRef::Step(step)).expect("step serializes")
    }

    pub fn summary_line(summary: &LogSummary) -> String {
        serde_json::to_string(&LineRef::Summary(summary)).expect("summary serializes")
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::header_line(&self.header))?;
        for s in &self.steps {
            writeln!(w, "{}", Self::step_line(s))?;
        }
        if let Some(summary) = &self.summary {
            writeln!(w, "{}", Self::summary_line(summary))?;
        }
        w.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn from_reader<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut summary = None;
        for (no, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Config(format!("log line {}: {e}", no + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("log line {}: {e}", no + 1)))?;
            match parsed {
                Line::Header(h) if no == 0 => header = Some(h),
                Line::Header(_) => {
                    return Err(Error::Config(format!("log line {}: second header", no + 1)))
                }
                Line::Step(s) => steps.push(s),
                Line::Summary(s) => summary = Some(s),
            }
        }
        let header = header.ok_or_else(|| Error::Config("log has no header line".into()))?;
        if header.version != LOG_VERSION {
            return Err(Error::Config(format!(
                "log version {} not supported",
                header.version
            )));
        }
        Ok(TrajectoryLog {
            header,
            steps,
            summary,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file))
    }

    /// Logged deviations of the warm steps, as `(ds, xi)` pairs.
    pub fn deviations(&self) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        self.steps
            .iter()
            .filter(|s| s.warm)
            .map(|s| {
                (
                    DVector::from_column_slice(&s.ds),
                    DVector::from_column_slice(&s.xi),
                )
            })
            .unzip()
    }

    /// Root mean square of the prediction error norm over warm steps.
    pub fn rms_xi(&self) -> f64 {
        let warm: Vec<f64> = self.steps.iter().filter(|s| s.warm).map(|s| s.xi_norm).collect();
        if warm.is_empty() {
            return 0.0;
        }
        (warm.iter().map(|v| v * v).sum::<f64>() / warm.len() as f64).sqrt()
    }
}
