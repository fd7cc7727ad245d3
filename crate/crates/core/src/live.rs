//! Interactive sessions: client commands, the wire state and segment logs.
//!
//! A [`LiveSession`] wraps one [`Session`]. Commands are stamped with the
//! next tick and applied there, so the applied-command timeline replays
//! through [`run_session_with_timeline`](crate::harness::run_session_with_timeline)
//! to the same log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::harness::{Condition, Session, SessionConfig, StepRecord, TrajectoryLog};
use crate::sim::{Block, PerturbationEvent, Vec2};
use crate::{Error, Result};

/// Messages a client may send.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientCommand {
    /// Impulse `(jx, jy)` in N s applied at contact point `(x, y)`.
    Nudge { x: f64, y: f64, jx: f64, jy: f64 },
    BlockOn { x1: f64, y1: f64, x2: f64, y2: f64 },
    BlockOff { id: u32 },
    SetCondition { condition: Condition },
    Pause,
    Resume,
    /// Restarts from `t = 0`, with a new seed if given.
    Reset {
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl ClientCommand {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::RejectedInput(format!("bad command: {e}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireBlock {
    pub id: u32,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<&Block> for WireBlock {
    fn from(b: &Block) -> Self {
        WireBlock {
            id: b.id,
            x1: b.start.x,
            y1: b.start.y,
            x2: b.end.x,
            y2: b.end.y,
        }
    }
}

/// Broadcast after every tick. `t` counts completed ticks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "state")]
pub struct WireState {
    pub t: u64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
    pub condition: Condition,
    pub tipi: f64,
    pub xi_norm: f64,
    pub blocks: Vec<WireBlock>,
}

impl WireState {
    pub fn of(session: &Session) -> Self {
        let s = session.state();
        let (tipi, xi_norm) = session
            .last_record()
            .map_or((0.0, 0.0), |r| (r.tipi, r.xi_norm));
        WireState {
            t: session.t(),
            x: s.pos.x,
            y: s.pos.y,
            heading: s.heading,
            vx: s.lin_vel.x,
            vy: s.lin_vel.y,
            condition: session.condition(),
            tipi,
            xi_norm,
            blocks: session.active_blocks().iter().map(WireBlock::from).collect(),
        }
    }
}

/// Log file of segment `k` and its command timeline.
pub fn segment_paths(dir: &Path, k: u32) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("live_{k:03}.jsonl")),
        dir.join(format!("live_{k:03}_timeline.json")),
    )
}

struct SegmentWriter {
    log: BufWriter<File>,
    log_path: PathBuf,
    timeline_path: PathBuf,
}

impl SegmentWriter {
    fn open(dir: &Path, k: u32, session: &Session) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (log_path, timeline_path) = segment_paths(dir, k);
        let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut w = SegmentWriter {
            log: BufWriter::new(file),
            log_path,
            timeline_path,
        };
        w.line(&TrajectoryLog::header_line(&session.header()))?;
        Ok(w)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.log, "{text}").map_err(|e| Error::io(&self.log_path, e))
    }

    fn close(mut self, session: &Session, abort: Option<String>) -> Result<()> {
        self.line(&TrajectoryLog::summary_line(&session.summary(abort)))?;
        self.log.flush().map_err(|e| Error::io(&self.log_path, e))?;
        let timeline =
            serde_json::to_string_pretty(session.timeline()).expect("events serialize") + "\n";
        std::fs::write(&self.timeline_path, timeline).map_err(|e| Error::io(&self.timeline_path, e))
    }
}

/// One interactive session, logged in segments: every reset closes the
/// current log and opens the next.
pub struct LiveSession {
    base: SessionConfig,
    session: Session,
    paused: bool,
    finished: bool,
    segment: u32,
    writer: Option<SegmentWriter>,
}

impl LiveSession {
    /// Logs go to `config.output` when set.
    pub fn new(config: SessionConfig) -> Result<Self> {
        let session = Session::new(config.clone())?;
        let writer = match &config.output {
            Some(dir) => Some(SegmentWriter::open(dir, 0, &session)?),
            None => None,
        };
        Ok(LiveSession {
            base: config,
            session,
            paused: false,
            finished: false,
            segment: 0,
            writer,
        })
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn config(&self) -> &SessionConfig {
        self.session.config()
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    /// The session reached its duration or aborted; only reset continues.
    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn segment(&self) -> u32 {
        self.segment
    }

    pub fn snapshot(&self) -> WireState {
        WireState::of(&self.session)
    }

    /// Applies a control command now, or queues a perturbation for the next
    /// tick. A rejected command leaves the session untouched.
    pub fn apply(&mut self, cmd: ClientCommand) -> Result<()> {
        let event = match cmd {
            ClientCommand::Nudge { x, y, jx, jy } => {
                PerturbationEvent::nudge(0, Vec2::new(jx, jy), Some(Vec2::new(x, y)))
            }
            ClientCommand::BlockOn { x1, y1, x2, y2 } => PerturbationEvent {
                id: None,
                ..PerturbationEvent::block_on(0, 0, Vec2::new(x1, y1), Vec2::new(x2, y2))
            },
            ClientCommand::BlockOff { id } => PerturbationEvent::block_off(0, id),
            ClientCommand::SetCondition { condition } => {
                PerturbationEvent::set_condition(0, condition)
            }
            ClientCommand::Pause => {
                self.paused = true;
                return Ok(());
            }
            ClientCommand::Resume => {
                self.paused = false;
                return Ok(());
            }
            ClientCommand::Reset { seed } => return self.reset(seed),
        };
        if self.finished {
            return Err(Error::RejectedInput("session finished, reset to continue".into()));
        }
        self.session.inject(event).map(|_| ())
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<()> {
        let mut config = self.base.clone();
        if let Some(seed) = seed {
            config.seed = seed;
        }
        let session = Session::new(config.clone())?;
        self.close_segment(None)?;
        self.segment += 1;
        self.writer = match &config.output {
            Some(dir) => Some(SegmentWriter::open(dir, self.segment, &session)?),
            None => None,
        };
        self.session = session;
        self.finished = false;
        Ok(())
    }

    fn close_segment(&mut self, abort: Option<String>) -> Result<()> {
        match self.writer.take() {
            Some(w) => w.close(&self.session, abort),
            None => Ok(()),
        }
    }

    /// Advances one tick unless paused or finished. Returns the record of
    /// the tick taken.
    pub fn step(&mut self) -> Result<Option<StepRecord>> {
        if self.paused || self.finished {
            return Ok(None);
        }
        match self.session.tick() {
            Ok(record) => {
                if let Some(w) = self.writer.as_mut() {
                    w.line(&TrajectoryLog::step_line(&record))?;
                }
                if self.session.t() >= self.session.config().duration_steps {
                    self.finished = true;
                    self.close_segment(None)?;
                }
                Ok(Some(record))
            }
            Err(e @ Error::NumericAbort { .. }) => {
                self.finished = true;
                self.close_segment(Some(e.to_string()))?;
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    /// Closes the open log segment, if any.
    pub fn shutdown(&mut self) -> Result<()> {
        self.close_segment(None)
    }
}

impl Drop for LiveSession {
    fn drop(&mut self) {
        let _ = self.close_segment(None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::PerturbationConfig;

    fn cfg() -> SessionConfig {
        SessionConfig {
            duration_steps: 100,
            perturbations: PerturbationConfig::none(),
            ..SessionConfig::default()
        }
    }

    #[test]
    fn command_parsing() {
        let c = ClientCommand::parse(r#"{"type":"nudge","x":0.1,"y":0,"jx":0.01,"jy":0}"#).unwrap();
        assert_eq!(c, ClientCommand::Nudge { x: 0.1, y: 0.0, jx: 0.01, jy: 0.0 });
        let c = ClientCommand::parse(r#"{"type":"set_condition","condition":"rea"}"#).unwrap();
        assert_eq!(c, ClientCommand::SetCondition { condition: Condition::BalancedRea });
        assert_eq!(
            ClientCommand::parse(r#"{"type":"reset","seed":4}"#).unwrap(),
            ClientCommand::Reset { seed: Some(4) }
        );
        assert!(ClientCommand::parse(r#"{"type":"explode"}"#).is_err());
        assert!(ClientCommand::parse(r#"{"type":"block_off","id":1,"extra":1}"#).is_err());
        assert!(ClientCommand::parse("not json").is_err());
    }

    #[test]
    fn wire_state_schema() {
        let live = LiveSession::new(cfg()).unwrap();
        let v = serde_json::to_value(live.snapshot()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in ["type", "t", "x", "y", "heading", "vx", "vy", "condition", "tipi", "xi_norm", "blocks"] {
            assert!(keys.contains(&k), "missing {k}");
        }
        assert_eq!(v["type"], "state");
        assert_eq!(v["condition"], "ada");
    }

    #[test]
    fn pause_freezes_time() {
        let mut live = LiveSession::new(cfg()).unwrap();
        live.step().unwrap();
        live.apply(ClientCommand::Pause).unwrap();
        for _ in 0..5 {
            assert!(live.step().unwrap().is_none());
        }
        assert_eq!(live.snapshot().t, 1);
        assert_eq!(live.snapshot(), live.snapshot());
        live.apply(ClientCommand::Resume).unwrap();
        live.step().unwrap();
        assert_eq!(live.snapshot().t, 2);
    }

    #[test]
    fn reset_returns_to_origin() {
        let mut live = LiveSession::new(cfg()).unwrap();
        live.apply(ClientCommand::Nudge { x: 0.0, y: 0.0, jx: 0.1, jy: 0.0 }).unwrap();
        for _ in 0..10 {
            live.step().unwrap();
        }
        assert!(live.snapshot().x > 0.0);
        live.apply(ClientCommand::Reset { seed: Some(8) }).unwrap();
        let s = live.snapshot();
        assert_eq!((s.t, s.x, s.y), (0, 0.0, 0.0));
        assert_eq!(live.config().seed, 8);
        assert_eq!(live.segment(), 1);
    }

    #[test]
    fn oversized_nudge_rejected() {
        let mut live = LiveSession::new(cfg()).unwrap();
        let before = live.snapshot();
        let err = live.apply(ClientCommand::Nudge { x: 0.0, y: 0.0, jx: 1.0, jy: 0.0 });
        assert!(matches!(err, Err(Error::RejectedInput(_))));
        live.step().unwrap();
        assert!(live.session().timeline().is_empty());
        assert_eq!(before.t, 0);
    }

    #[test]
    fn stops_at_duration() {
        let mut live = LiveSession::new(cfg()).unwrap();
        while live.step().unwrap().is_some() {}
        assert!(live.is_finished());
        assert_eq!(live.snapshot().t, 100);
    }
}
