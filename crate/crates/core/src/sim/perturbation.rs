//! Scripted nudges and blocks.
//!
//! A schedule is a JSON array of step-stamped events. Blocks are identified
//! by an integer id; a `block_on` without an explicit id takes the next free
//! one, and a `block_off` names its block by `id` or by repeating the
//! `segment`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PlantConfig, Vec2};
use crate::harness::Condition;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Nudge,
    BlockOn,
    BlockOff,
    /// Switches the behavior condition. Emitted by interactive sessions so
    /// their command timeline can be replayed as a schedule.
    SetCondition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationEvent {
    pub t: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impulse: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

impl PerturbationEvent {
    pub fn nudge(t: u64, impulse: Vec2, point: Option<Vec2>) -> Self {
        PerturbationEvent {
            t,
            kind: EventKind::Nudge,
            point: point.map(|p| [p.x, p.y]),
            impulse: Some([impulse.x, impulse.y]),
            segment: None,
            id: None,
            condition: None,
        }
    }

    pub fn block_on(t: u64, id: u32, start: Vec2, end: Vec2) -> Self {
        PerturbationEvent {
            t,
            kind: EventKind::BlockOn,
            point: None,
            impulse: None,
            segment: Some([[start.x, start.y], [end.x, end.y]]),
            id: Some(id),
            condition: None,
        }
    }

    pub fn block_off(t: u64, id: u32) -> Self {
        PerturbationEvent {
            t,
            kind: EventKind::BlockOff,
            point: None,
            impulse: None,
            segment: None,
            id: Some(id),
            condition: None,
        }
    }

    pub fn set_condition(t: u64, condition: Condition) -> Self {
        PerturbationEvent {
            t,
            kind: EventKind::SetCondition,
            point: None,
            impulse: None,
            segment: None,
            id: None,
            condition: Some(condition),
        }
    }
}

/// An impulse delivered during one step. `point` is the contact location as
/// reported by the operator; contact on a sphere acts through its center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nudge {
    pub point: Option<Vec2>,
    pub impulse: Vec2,
}

/// A straight obstacle the sphere cannot pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Block {
    pub id: u32,
    pub start: Vec2,
    pub end: Vec2,
}

/// Perturbations acting during one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActiveSet {
    pub nudges: Vec<Nudge>,
    pub blocks: Vec<Block>,
}

impl ActiveSet {
    pub fn is_empty(&self) -> bool {
        self.nudges.is_empty() && self.blocks.is_empty()
    }
}

/// Checks a nudge impulse against the plant limit.
pub fn check_impulse(impulse: Vec2, cfg: &PlantConfig) -> Result<()> {
    let mag = impulse.norm();
    if !mag.is_finite() || mag > cfg.max_impulse {
        return Err(Error::RejectedInput(format!(
            "impulse magnitude {mag} exceeds limit {}",
            cfg.max_impulse
        )));
    }
    Ok(())
}

/// Checks that both segment endpoints lie on the table.
pub fn check_segment(start: Vec2, end: Vec2, cfg: &PlantConfig) -> Result<()> {
    for p in [start, end] {
        if !(p.norm() <= cfg.table.radius) {
            return Err(Error::RejectedInput(format!(
                "block endpoint ({}, {}) lies off the table",
                p.x, p.y
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
struct BlockInterval {
    block: Block,
    on: u64,
    off: Option<u64>,
}

/// A validated, time-ordered perturbation schedule.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schedule {
    events: Vec<PerturbationEvent>,
    blocks: Vec<BlockInterval>,
}

impl Schedule {
    pub fn empty() -> Self {
        Schedule::default()
    }

    /// Validates events against the plant limits, assigns block ids and
    /// pairs every `block_off` with its `block_on`.
    pub fn new(events: Vec<PerturbationEvent>, cfg: &PlantConfig) -> Result<Self> {
        if events.windows(2).any(|w| w[0].t > w[1].t) {
            return Err(Error::Config("perturbation schedule is not sorted by t".into()));
        }
        let mut events = events;
        let mut intervals: Vec<BlockInterval> = Vec::new();
        let mut open: BTreeMap<u32, usize> = BTreeMap::new();
        let mut next_id = 0u32;
        for ev in events.iter_mut() {
            match ev.kind {
                EventKind::Nudge => {
                    let [jx, jy] = ev.impulse.ok_or_else(|| {
                        Error::Config(format!("nudge at t={} has no impulse", ev.t))
                    })?;
                    check_impulse(Vec2::new(jx, jy), cfg).map_err(config_err)?;
                }
                EventKind::BlockOn => {
                    let [a, b] = ev.segment.ok_or_else(|| {
                        Error::Config(format!("block_on at t={} has no segment", ev.t))
                    })?;
                    let (start, end) = (Vec2::new(a[0], a[1]), Vec2::new(b[0], b[1]));
                    check_segment(start, end, cfg).map_err(config_err)?;
                    let id = match ev.id {
                        Some(id) => id,
                        None => {
                            while open.contains_key(&next_id)
                                || intervals.iter().any(|i| i.block.id == next_id)
                            {
                                next_id += 1;
                            }
                            next_id
                        }
                    };
                    if open.contains_key(&id) {
                        return Err(Error::Config(format!("block {id} switched on twice")));
                    }
                    ev.id = Some(id);
                    open.insert(id, intervals.len());
                    intervals.push(BlockInterval {
                        block: Block { id, start, end },
                        on: ev.t,
                        off: None,
                    });
                }
                EventKind::BlockOff => {
                    let id = match (ev.id, ev.segment) {
                        (Some(id), _) => id,
                        (None, Some(seg)) => *open
                            .iter()
                            .find(|(_, &ix)| {
                                let b = &intervals[ix].block;
                                [[b.start.x, b.start.y], [b.end.x, b.end.y]] == seg
                            })
                            .map(|(id, _)| id)
                            .ok_or_else(|| {
                                Error::Config(format!(
                                    "block_off at t={} matches no block that is on",
                                    ev.t
                                ))
                            })?,
                        (None, None) => {
                            return Err(Error::Config(format!(
                                "block_off at t={} names neither id nor segment",
                                ev.t
                            )))
                        }
                    };
                    let ix = open.remove(&id).ok_or_else(|| {
                        Error::Config(format!(
                            "block_off for block {id} at t={} precedes its block_on",
                            ev.t
                        ))
                    })?;
                    ev.id = Some(id);
                    intervals[ix].off = Some(ev.t);
                }
                EventKind::SetCondition => {
                    if ev.condition.is_none() {
                        return Err(Error::Config(format!(
                            "set_condition at t={} has no condition",
                            ev.t
                        )));
                    }
                }
            }
        }
        Ok(Schedule {
            events,
            blocks: intervals,
        })
    }

    pub fn from_json(text: &str, cfg: &PlantConfig) -> Result<Self> {
        let events: Vec<PerturbationEvent> = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("perturbation schedule: {e}")))?;
        Schedule::new(events, cfg)
    }

    pub fn read(path: &Path, cfg: &PlantConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schedule::from_json(&text, cfg)
    }

    pub fn events(&self) -> &[PerturbationEvent] {
        &self.events
    }

    /// Events stamped with step `t`, in schedule order.
    pub fn events_at(&self, t: u64) -> &[PerturbationEvent] {
        let lo = self.events.partition_point(|e| e.t < t);
        let hi = self.events.partition_point(|e| e.t <= t);
        &self.events[lo..hi]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.events).expect("events serialize")
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::RejectedInput(msg) => Error::Config(msg),
        other => other,
    }
}

/// Nudges firing exactly at `t` and blocks with `on <= t < off`.
pub fn apply_perturbation_schedule(schedule: &Schedule, t: u64) -> ActiveSet {
    let nudges = schedule
        .events_at(t)
        .iter()
        .filter(|e| e.kind == EventKind::Nudge)
        .filter_map(|e| {
            e.impulse.map(|[jx, jy]| Nudge {
                point: e.point.map(|[x, y]| Vec2::new(x, y)),
                impulse: Vec2::new(jx, jy),
            })
        })
        .collect();
    let blocks = schedule
        .blocks
        .iter()
        .filter(|b| b.on <= t && b.off.is_none_or(|off| t < off))
        .map(|b| b.block)
        .collect();
    ActiveSet { nudges, blocks }
}

/// A nudge every `interval` steps (first at `interval`), uniformly random
/// direction and fixed magnitude, up to but excluding step `duration`.
pub fn default_nudge_schedule<R: Rng + ?Sized>(
    duration: u64,
    interval: u64,
    magnitude: f64,
    rng: &mut R,
) -> Vec<PerturbationEvent> {
    if interval == 0 {
        return Vec::new();
    }
    (1..)
        .map(|k| k * interval)
        .take_while(|t| *t < duration)
        .map(|t| {
            let angle = rng.random_range(0.0..TAU);
            PerturbationEvent::nudge(t, Vec2::new(libm::cos(angle), libm::sin(angle)) * magnitude, None)
        })
        .collect()
}
