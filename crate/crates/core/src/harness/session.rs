use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;

use super::log::{LogHeader, LogSummary, StepRecord, TrajectoryLog, LOG_VERSION};
use super::{ada_controller, Condition, SessionConfig};
use crate::baseline::{FrozenParams, ReactiveController};
use crate::controller::{Diagnostics, MotorVector, TipiController};
use crate::sim::perturbation::{check_impulse, check_segment};
use crate::sim::{
    apply_perturbation_schedule, default_nudge_schedule, seeded_stream, Block, EventKind, Nudge,
    PerturbationEvent, Plant, RobotState, Schedule, Stream, Vec2,
};
use crate::{Error, Result};

/// One running session. The only place simulation state is mutated:
/// scheduled events and injected commands are both applied at tick
/// boundaries, so the trajectory is a function of the config and the
/// step-stamped command sequence.
#[derive(Clone, Debug)]
pub struct Session {
    config: SessionConfig,
    plant: Plant,
    schedule: Schedule,
    ada: TipiController,
    rea: Option<ReactiveController>,
    frozen_digest: Option<String>,
    condition: Condition,
    t: u64,
    pending: Vec<PerturbationEvent>,
    live_blocks: BTreeMap<u32, Block>,
    next_block_id: u32,
    timeline: Vec<PerturbationEvent>,
    active_blocks: Vec<Block>,
    digest_start: String,
    last: Option<StepRecord>,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let plant = Plant::new(config.plant, config.seed)?;
        let schedule = match &config.perturbations.schedule {
            Some(path) => Schedule::read(path, &config.plant)?,
            None => {
                let p = &config.perturbations;
                let events = default_nudge_schedule(
                    config.duration_steps,
                    config.nudge_interval_steps(),
                    p.nudge_magnitude,
                    &mut seeded_stream(config.seed, Stream::Schedule),
                );
                Schedule::new(events, &config.plant)?
            }
        };
        let frozen = match &config.frozen_params {
            Some(path) => Some(FrozenParams::read(path).map_err(|e| {
                Error::Startup(format!("frozen params {}: {e}", path.display()))
            })?),
            None => None,
        };
        let wants_rea = config.condition == Condition::BalancedRea
            || schedule
                .events()
                .iter()
                .any(|e| e.condition == Some(Condition::BalancedRea));
        if wants_rea && frozen.is_none() {
            return Err(Error::Startup(
                "the reactive condition needs a frozen_params file".into(),
            ));
        }
        let frozen_digest = frozen.as_ref().map(|f| f.digest());
        let rea = frozen
            .map(|f| ReactiveController::new(f, config.balance))
            .transpose()?;
        let ada = ada_controller(&config.plant, &config.controller, &config.init, config.seed)?;
        let next_block_id = schedule
            .events()
            .iter()
            .filter_map(|e| e.id)
            .max()
            .map_or(0, |id| id + 1);
        let mut session = Session {
            condition: config.condition,
            config,
            plant,
            schedule,
            ada,
            rea,
            frozen_digest,
            t: 0,
            pending: Vec::new(),
            live_blocks: BTreeMap::new(),
            next_block_id,
            timeline: Vec::new(),
            active_blocks: Vec::new(),
            digest_start: String::new(),
            last: None,
        };
        session.digest_start = session.digest();
        Ok(session)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Index of the next tick.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn state(&self) -> &RobotState {
        self.plant.state()
    }

    pub fn last_record(&self) -> Option<&StepRecord> {
        self.last.as_ref()
    }

    /// Blocks that acted during the last tick.
    pub fn active_blocks(&self) -> &[Block] {
        &self.active_blocks
    }

    /// Every injected command that has been applied, stamped with its tick.
    pub fn timeline(&self) -> &[PerturbationEvent] {
        &self.timeline
    }

    pub fn has_reactive(&self) -> bool {
        self.rea.is_some()
    }

    pub fn ada(&self) -> &TipiController {
        &self.ada
    }

    /// Digest of the parameters driving the robot under the current
    /// condition.
    pub fn digest(&self) -> String {
        match self.condition {
            Condition::Ada => self.ada.snapshot().digest(),
            Condition::BalancedRea => self
                .frozen_digest
                .clone()
                .expect("reactive condition has frozen params"),
        }
    }

    pub fn header(&self) -> LogHeader {
        LogHeader {
            version: LOG_VERSION,
            config: self.config.clone(),
            frozen_digest: self.frozen_digest.clone(),
        }
    }

    pub fn summary(&self, abort: Option<String>) -> LogSummary {
        LogSummary {
            steps: self.t,
            digest_start: self.digest_start.clone(),
            digest_end: self.digest(),
            abort,
        }
    }

    /// Queues a command for the next tick and returns it as stamped. Block
    /// ids are assigned here when missing.
    pub fn inject(&mut self, mut ev: PerturbationEvent) -> Result<PerturbationEvent> {
        let cfg = &self.config.plant;
        match ev.kind {
            EventKind::Nudge => {
                let [jx, jy] = ev
                    .impulse
                    .ok_or_else(|| Error::RejectedInput("nudge without impulse".into()))?;
                check_impulse(Vec2::new(jx, jy), cfg)?;
                if let Some([x, y]) = ev.point {
                    if !(x.is_finite() && y.is_finite()) {
                        return Err(Error::RejectedInput("nudge point is not finite".into()));
                    }
                }
            }
            EventKind::BlockOn => {
                let [a, b] = ev
                    .segment
                    .ok_or_else(|| Error::RejectedInput("block_on without segment".into()))?;
                check_segment(Vec2::new(a[0], a[1]), Vec2::new(b[0], b[1]), cfg)?;
                let id = ev.id.unwrap_or(self.next_block_id);
                if self.block_is_live(id) {
                    return Err(Error::RejectedInput(format!("block {id} is already on")));
                }
                self.next_block_id = self.next_block_id.max(id + 1);
                ev.id = Some(id);
            }
            EventKind::BlockOff => {
                let id = ev
                    .id
                    .ok_or_else(|| Error::RejectedInput("block_off without id".into()))?;
                if !self.block_is_live(id) {
                    return Err(Error::RejectedInput(format!("no live block with id {id}")));
                }
            }
            EventKind::SetCondition => {
                let c = ev
                    .condition
                    .ok_or_else(|| Error::RejectedInput("set_condition without condition".into()))?;
                if c == Condition::BalancedRea && self.rea.is_none() {
                    return Err(Error::RejectedInput(
                        "no frozen params loaded for the reactive condition".into(),
                    ));
                }
            }
        }
        ev.t = self.t;
        self.pending.push(ev.clone());
        Ok(ev)
    }

    /// Live or pending-on, and not pending-off.
    fn block_is_live(&self, id: u32) -> bool {
        let mut live = self.live_blocks.contains_key(&id);
        for ev in &self.pending {
            if ev.id == Some(id) {
                match ev.kind {
                    EventKind::BlockOn => live = true,
                    EventKind::BlockOff => live = false,
                    _ => {}
                }
            }
        }
        live
    }

    fn switch_to(&mut self, condition: Condition) {
        if condition == self.condition {
            return;
        }
        match condition {
            Condition::Ada => self.ada.restart_window(),
            Condition::BalancedRea => {
                let heading = self.plant.state().heading;
                if let Some(rea) = self.rea.as_mut() {
                    rea.hold_heading(heading);
                }
            }
        }
        self.condition = condition;
    }

    /// Runs one control period: apply events, sense, act, integrate.
    pub fn tick(&mut self) -> Result<StepRecord> {
        let t = self.t;
        let mut events: Vec<PerturbationEvent> = self.schedule.events_at(t).to_vec();
        let mut active = apply_perturbation_schedule(&self.schedule, t);
        for ev in std::mem::take(&mut self.pending) {
            match ev.kind {
                EventKind::Nudge => {
                    let [jx, jy] = ev.impulse.expect("checked on inject");
                    active.nudges.push(Nudge {
                        point: ev.point.map(|[x, y]| Vec2::new(x, y)),
                        impulse: Vec2::new(jx, jy),
                    });
                }
                EventKind::BlockOn => {
                    let [a, b] = ev.segment.expect("checked on inject");
                    let id = ev.id.expect("assigned on inject");
                    self.live_blocks.insert(
                        id,
                        Block {
                            id,
                            start: Vec2::new(a[0], a[1]),
                            end: Vec2::new(b[0], b[1]),
                        },
                    );
                }
                EventKind::BlockOff => {
                    self.live_blocks.remove(&ev.id.expect("checked on inject"));
                }
                EventKind::SetCondition => {}
            }
            self.timeline.push(ev.clone());
            events.push(ev);
        }
        for ev in &events {
            if let (EventKind::SetCondition, Some(c)) = (ev.kind, ev.condition) {
                self.switch_to(c);
            }
        }
        active.blocks.extend(self.live_blocks.values().copied());

        let abort = |e: Error| match e {
            Error::NumericDomain(reason) => Error::NumericAbort { step: t, reason },
            other => other,
        };
        let raw = self.plant.sense().map_err(abort)?;
        let s = self.config.scale_sensors(&raw)?;
        let (motor, diag): (MotorVector, Diagnostics) = match self.condition {
            Condition::Ada => self.ada.step(&s).map_err(abort)?,
            Condition::BalancedRea => {
                let rea = self.rea.as_mut().expect("reactive condition has frozen params");
                let (y, _, d) = rea.step(&s, self.plant.state()).map_err(abort)?;
                (y, d)
            }
        };
        self.plant.advance(&motor, &active).map_err(abort)?;

        let st = self.plant.state();
        let record = StepRecord {
            t,
            x: st.pos.x,
            y: st.pos.y,
            heading: st.heading,
            vx: st.lin_vel.x,
            vy: st.lin_vel.y,
            motor: motor.to_vec(),
            sensor: s.to_vec(),
            ds: diag.ds_t.iter().copied().collect(),
            xi: diag.xi_tm1.iter().copied().collect(),
            tipi: diag.tipi,
            xi_norm: diag.xi_norm,
            condition: self.condition,
            warm: diag.warm,
            learned: diag.learned,
            events,
        };
        self.active_blocks = active.blocks;
        self.t += 1;
        self.last = Some(record.clone());
        Ok(record)
    }
}

/// File name of a batch log inside the output directory.
pub fn log_file_name(cfg: &SessionConfig) -> String {
    format!("{}_seed{}.jsonl", cfg.condition.tag(), cfg.seed)
}

/// Runs a full session with generated or scheduled perturbations.
pub fn run_session(cfg: &SessionConfig) -> Result<TrajectoryLog> {
    run_session_with_timeline(cfg, &[], None)
}

/// Runs a session, injecting `timeline` commands at their ticks the way an
/// interactive session does, and stops after `max_steps` if given. With the
/// timeline and step count of an interactive session this reproduces its
/// log.
///
/// On a numeric abort the partial log, with the abort reason in its
/// summary, is still written before the error is returned.
pub fn run_session_with_timeline(
    cfg: &SessionConfig,
    timeline: &[PerturbationEvent],
    max_steps: Option<u64>,
) -> Result<TrajectoryLog> {
    if timeline.windows(2).any(|w| w[0].t > w[1].t) {
        return Err(Error::Config("command timeline is not sorted by t".into()));
    }
    let mut session = Session::new(cfg.clone())?;
    let steps = max_steps.map_or(cfg.duration_steps, |n| n.min(cfg.duration_steps));
    let mut records = Vec::with_capacity(steps as usize);
    let mut next = 0;
    let mut failure = None;
    while session.t() < steps {
        while next < timeline.len() && timeline[next].t == session.t() {
            session.inject(timeline[next].clone()).map_err(|e| {
                Error::Config(format!("timeline command at t={}: {e}", timeline[next].t))
            })?;
            next += 1;
        }
        match session.tick() {
            Ok(r) => records.push(r),
            Err(e @ Error::NumericAbort { .. }) => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let log = TrajectoryLog {
        header: session.header(),
        steps: records,
        summary: Some(session.summary(failure.as_ref().map(|e| e.to_string()))),
    };
    if let Some(dir) = &cfg.output {
        log.write(&output_path(dir, cfg))?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(log),
    }
}

fn output_path(dir: &std::path::Path, cfg: &SessionConfig) -> PathBuf {
    dir.join(log_file_name(cfg))
}

/// Runs independent sessions in parallel; results keep the input order.
pub fn run_batch(cfgs: &[SessionConfig]) -> Vec<Result<TrajectoryLog>> {
    cfgs.par_iter().map(run_session).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::PerturbationConfig;

    fn short(seed: u64) -> SessionConfig {
        SessionConfig {
            duration_steps: 300,
            seed,
            perturbations: PerturbationConfig {
                nudge_interval_s: 2.0,
                ..PerturbationConfig::default()
            },
            ..SessionConfig::default()
        }
    }

    #[test]
    fn same_seed_same_log() {
        let a = run_session(&short(3)).unwrap().to_jsonl();
        let b = run_session(&short(3)).unwrap().to_jsonl();
        assert_eq!(a, b);
        let c = run_session(&short(4)).unwrap().to_jsonl();
        assert_ne!(a, c);
    }

    #[test]
    fn log_shape() {
        let log = run_session(&short(1)).unwrap();
        assert_eq!(log.steps.len(), 300);
        assert_eq!(log.summary.as_ref().unwrap().steps, 300);
        assert!(log.steps.iter().enumerate().all(|(i, s)| s.t == i as u64));
        assert!(!log.steps[1].warm && log.steps[2].warm);
        // one generated nudge every 40 ticks
        let nudges = log.steps.iter().filter(|s| !s.events.is_empty()).count();
        assert_eq!(nudges, 7);
    }

    #[test]
    fn reactive_without_frozen_params_is_a_startup_error() {
        let cfg = SessionConfig {
            condition: Condition::BalancedRea,
            ..short(0)
        };
        assert!(matches!(Session::new(cfg), Err(Error::Startup(_))));
    }

    #[test]
    fn injected_commands_apply_next_tick_and_are_recorded() {
        let mut s = Session::new(short(0)).unwrap();
        for _ in 0..5 {
            s.tick().unwrap();
        }
        let ev = s
            .inject(PerturbationEvent::nudge(0, Vec2::new(0.1, 0.0), None))
            .unwrap();
        assert_eq!(ev.t, 5);
        let before = s.state().lin_vel.x;
        let r = s.tick().unwrap();
        assert_eq!(r.events, vec![ev.clone()]);
        assert!(r.vx - before > 0.3);
        assert_eq!(s.timeline(), &[ev]);
    }

    #[test]
    fn oversized_nudge_rejected_state_unchanged() {
        let mut s = Session::new(short(0)).unwrap();
        s.tick().unwrap();
        let before = s.clone();
        let err = s.inject(PerturbationEvent::nudge(0, Vec2::new(5.0, 0.0), None));
        assert!(matches!(err, Err(Error::RejectedInput(_))));
        assert_eq!(s.state(), before.state());
        assert!(s.timeline().is_empty());
        assert_eq!(s.t(), 1);
    }

    #[test]
    fn live_blocks_get_ids_and_can_be_removed() {
        let mut s = Session::new(short(0)).unwrap();
        let on = s
            .inject(PerturbationEvent {
                id: None,
                ..PerturbationEvent::block_on(0, 0, Vec2::new(0.1, -0.1), Vec2::new(0.1, 0.1))
            })
            .unwrap();
        assert_eq!(on.id, Some(0));
        s.tick().unwrap();
        assert_eq!(s.active_blocks().len(), 1);
        assert!(s.inject(PerturbationEvent::block_off(0, 7)).is_err());
        s.inject(PerturbationEvent::block_off(0, 0)).unwrap();
        s.tick().unwrap();
        assert!(s.active_blocks().is_empty());
    }

    #[test]
    fn timeline_replay_is_exact() {
        let cfg = short(9);
        let mut live = Session::new(cfg.clone()).unwrap();
        let mut records = Vec::new();
        for t in 0..120u64 {
            if t == 17 {
                live.inject(PerturbationEvent::nudge(0, Vec2::new(0.0, 0.08), None))
                    .unwrap();
            }
            if t == 40 {
                live.inject(PerturbationEvent::block_on(
                    0,
                    3,
                    Vec2::new(-0.2, 0.0),
                    Vec2::new(0.0, 0.2),
                ))
                .unwrap();
            }
            records.push(live.tick().unwrap());
        }
        let interactive = TrajectoryLog {
            header: live.header(),
            steps: records,
            summary: Some(live.summary(None)),
        };
        let replay = run_session_with_timeline(&cfg, live.timeline(), Some(120)).unwrap();
        assert_eq!(replay.to_jsonl(), interactive.to_jsonl());
    }
}
