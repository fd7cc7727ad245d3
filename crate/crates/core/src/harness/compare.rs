use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Condition, TrajectoryLog};
use crate::metrics::{median, occupancy_entropy, quartiles, running_tipi};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "condition,seed,steps,mean_tipi,occupancy_entropy,rms_xi";

/// Groups with fewer logs than this get a warning in the report.
const SMALL_SAMPLE: usize = 5;
const OCCUPANCY_GRID: usize = 20;

/// Per-log metrics, one CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct LogSummaryRow {
    pub condition: Condition,
    pub seed: u64,
    pub steps: u64,
    /// Mean of the windowed TiPI series.
    pub mean_tipi: f64,
    /// Proxy for behavioral variety, nats over a 20x20 grid.
    pub occupancy_entropy: f64,
    pub rms_xi: f64,
}

/// Metrics of one log. The TiPI window shrinks to the number of warm steps
/// for short logs.
pub fn summarize_log(log: &TrajectoryLog, window: usize) -> Result<LogSummaryRow> {
    let cfg = &log.header.config;
    let (ds, xi) = log.deviations();
    let window = window.min(ds.len());
    let series = running_tipi(&ds, &xi, window, cfg.controller.ridge)?;
    if series.is_empty() {
        return Err(Error::Config(format!(
            "log for seed {} has too few steps for a TiPI estimate",
            cfg.seed
        )));
    }
    let mean_tipi = series.iter().sum::<f64>() / series.len() as f64;
    let positions: Vec<[f64; 2]> = log.steps.iter().map(|s| s.position()).collect();
    Ok(LogSummaryRow {
        condition: cfg.condition,
        seed: cfg.seed,
        steps: log.steps.len() as u64,
        mean_tipi,
        occupancy_entropy: occupancy_entropy(&positions, OCCUPANCY_GRID, cfg.plant.table.radius)?,
        rms_xi: log.rms_xi(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats {
    pub condition: Condition,
    pub count: usize,
    pub mean_tipi: (f64, f64, f64),
    pub occupancy_entropy: (f64, f64, f64),
    pub rms_xi: (f64, f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<LogSummaryRow>,
    pub groups: Vec<GroupStats>,
    pub small_sample: bool,
}

/// Median with quartiles as `(q1, median, q3)`.
fn spread(values: &[f64]) -> (f64, f64, f64) {
    let m = median(values).unwrap_or(f64::NAN);
    let (q1, q3) = quartiles(values).unwrap_or((f64::NAN, f64::NAN));
    (q1, m, q3)
}

/// Summarizes logs per condition. Logs must share one plant configuration.
pub fn compare(logs: &[TrajectoryLog], window: usize) -> Result<CompareReport> {
    let Some(first) = logs.first() else {
        return Err(Error::Config("no logs to compare".into()));
    };
    let plant = first.header.config.plant;
    if let Some(other) = logs.iter().find(|l| l.header.config.plant != plant) {
        return Err(Error::Config(format!(
            "refusing to compare logs with different plant configs: seed {} ({}) differs from seed {} ({})",
            other.header.config.seed,
            other.header.config.condition,
            first.header.config.seed,
            first.header.config.condition
        )));
    }
    let mut rows = logs
        .iter()
        .map(|l| summarize_log(l, window))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| (r.condition, r.seed));

    let mut by_condition: BTreeMap<Condition, Vec<&LogSummaryRow>> = BTreeMap::new();
    for r in &rows {
        by_condition.entry(r.condition).or_default().push(r);
    }
    let groups: Vec<GroupStats> = by_condition
        .into_iter()
        .map(|(condition, rs)| {
            let col = |f: fn(&LogSummaryRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            GroupStats {
                condition,
                count: rs.len(),
                mean_tipi: spread(&col(|r| r.mean_tipi)),
                occupancy_entropy: spread(&col(|r| r.occupancy_entropy)),
                rms_xi: spread(&col(|r| r.rms_xi)),
            }
        })
        .collect();
    let small_sample = groups.iter().any(|g| g.count < SMALL_SAMPLE);
    Ok(CompareReport {
        rows,
        groups,
        small_sample,
    })
}

impl CompareReport {
    pub fn group(&self, condition: Condition) -> Option<&GroupStats> {
        self.groups.iter().find(|g| g.condition == condition)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.condition.tag(),
                r.seed,
                r.steps,
                r.mean_tipi,
                r.occupancy_entropy,
                r.rms_xi
            );
        }
        out
    }

    /// Median differences, ADA minus balanced-REA, when both are present.
    pub fn median_differences(&self) -> Option<(f64, f64, f64)> {
        let a = self.group(Condition::Ada)?;
        let r = self.group(Condition::BalancedRea)?;
        Some((
            a.mean_tipi.1 - r.mean_tipi.1,
            a.occupancy_entropy.1 - r.occupancy_entropy.1,
            a.rms_xi.1 - r.rms_xi.1,
        ))
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>5}  {:>28}  {:>28}  {:>28}",
            "condition", "seeds", "running TiPI [q1 med q3]", "occupancy* [q1 med q3]", "rms xi [q1 med q3]"
        );
        let fmt = |(q1, m, q3): (f64, f64, f64)| format!("{q1:.4} {m:.4} {q3:.4}");
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{:<14} {:>5}  {:>28}  {:>28}  {:>28}",
                g.condition.to_string(),
                g.count,
                fmt(g.mean_tipi),
                fmt(g.occupancy_entropy),
                fmt(g.rms_xi)
            );
        }
        if let Some((dt, dh, dx)) = self.median_differences() {
            let _ = writeln!(
                out,
                "median difference ADA - balanced-REA: TiPI {dt:+.4}, occupancy {dh:+.4}, rms xi {dx:+.4}"
            );
        }
        let _ = writeln!(
            out,
            "* occupancy entropy over a {OCCUPANCY_GRID}x{OCCUPANCY_GRID} grid, a proxy for behavioral variety"
        );
        if self.small_sample {
            let _ = writeln!(
                out,
                "warning: small sample, some condition has fewer than {SMALL_SAMPLE} logs"
            );
        }
        out
    }
}
