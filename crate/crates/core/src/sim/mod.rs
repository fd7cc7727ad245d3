//! Fixed-step planar physics of a differential-drive sphere on a walled
//! circular table.
//!
//! Each step runs in a fixed order: servo lag, traction-limited coupling of
//! the body to the wheels, nudge impulses, position integration, wall
//! contact, block contact.

pub mod perturbation;
pub mod sensors;

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use perturbation::{
    apply_perturbation_schedule, default_nudge_schedule, ActiveSet, Block, EventKind, Nudge,
    PerturbationEvent, Schedule,
};
pub use sensors::{read_sensors, SensorNoise, SENSOR_CHANNELS};

use crate::controller::{MotorVector, SensorVector};
use crate::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Sensor channel indices.
pub mod channel {
    pub const ACCEL_FORWARD: usize = 0;
    pub const ACCEL_LATERAL: usize = 1;
    pub const GYRO_YAW: usize = 2;
    pub const WHEEL_LEFT: usize = 3;
    pub const WHEEL_RIGHT: usize = 4;
}

pub const MOTOR_LEFT: usize = 0;
pub const MOTOR_RIGHT: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableGeometry {
    /// Table radius in m.
    pub radius: f64,
    pub wall_restitution: f64,
    /// Coulomb traction coefficient between shell and table.
    pub surface_friction: f64,
}

impl Default for TableGeometry {
    fn default() -> Self {
        TableGeometry {
            radius: 0.455,
            wall_restitution: 0.4,
            surface_friction: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotBody {
    pub sphere_radius: f64,
    pub mass: f64,
    pub track_width: f64,
    pub max_wheel_speed: f64,
    /// Servo first-order lag time constant in s.
    pub actuation_tau: f64,
}

impl Default for RobotBody {
    fn default() -> Self {
        RobotBody {
            sphere_radius: 0.037,
            mass: 0.2,
            track_width: 0.05,
            max_wheel_speed: 1.0,
            actuation_tau: 0.15,
        }
    }
}

impl RobotBody {
    /// Solid-sphere moment of inertia about the vertical axis.
    pub fn inertia(&self) -> f64 {
        0.4 * self.mass * self.sphere_radius * self.sphere_radius
    }
}

/// Everything that shapes the plant dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    /// Control period in s.
    pub dt: f64,
    pub gravity: f64,
    /// Upper bound on a single nudge impulse in N s.
    pub max_impulse: f64,
    pub table: TableGeometry,
    pub body: RobotBody,
    pub noise: SensorNoise,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            dt: 0.05,
            gravity: 9.81,
            max_impulse: 0.2,
            table: TableGeometry::default(),
            body: RobotBody::default(),
            noise: SensorNoise::default(),
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.body;
        let positive = [
            ("dt", self.dt),
            ("gravity", self.gravity),
            ("max_impulse", self.max_impulse),
            ("table.radius", self.table.radius),
            ("body.sphere_radius", b.sphere_radius),
            ("body.mass", b.mass),
            ("body.track_width", b.track_width),
            ("body.max_wheel_speed", b.max_wheel_speed),
            ("body.actuation_tau", b.actuation_tau),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.table.wall_restitution) {
            return Err(Error::Config("table.wall_restitution must lie in [0, 1]".into()));
        }
        if !(self.table.surface_friction >= 0.0 && self.table.surface_friction.is_finite()) {
            return Err(Error::Config("table.surface_friction must be >= 0".into()));
        }
        if self.table.radius <= b.sphere_radius {
            return Err(Error::Config("table must be larger than the robot".into()));
        }
        if b.track_width >= 2.0 * b.sphere_radius {
            return Err(Error::Config("track width must fit inside the sphere".into()));
        }
        self.noise.validate()
    }

    /// Largest distance of the sphere center from the table center.
    pub fn reach(&self) -> f64 {
        self.table.radius - self.body.sphere_radius
    }
}

/// Simulated plant state. Positions in m from the table center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pos: Vec2,
    pub heading: f64,
    pub lin_vel: Vec2,
    pub ang_vel: f64,
    /// Actual wheel surface speeds `(left, right)` in m/s.
    pub wheel_actual: [f64; 2],
}

impl Default for RobotState {
    fn default() -> Self {
        RobotState {
            pos: Vec2::zeros(),
            heading: 0.0,
            lin_vel: Vec2::zeros(),
            ang_vel: 0.0,
            wheel_actual: [0.0, 0.0],
        }
    }
}

impl RobotState {
    pub fn kinetic_energy(&self, body: &RobotBody) -> f64 {
        0.5 * body.mass * self.lin_vel.norm_squared()
            + 0.5 * body.inertia() * self.ang_vel * self.ang_vel
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(self.lin_vel.iter()).all(|v| v.is_finite())
            && self.heading.is_finite()
            && self.ang_vel.is_finite()
            && self.wheel_actual.iter().all(|v| v.is_finite())
    }

    pub fn heading_vector(&self) -> Vec2 {
        Vec2::new(libm::cos(self.heading), libm::sin(self.heading))
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    // in range already: return it untouched, the round trip through
    // rem_euclid can move it by an ulp
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

fn limit(v: f64, bound: f64) -> f64 {
    v.clamp(-bound, bound)
}

/// Advances the plant by `dt` under motor command `cmd` and the active
/// perturbations.
pub fn step_physics(
    state: &RobotState,
    cmd: &MotorVector,
    dt: f64,
    active: &ActiveSet,
    cfg: &PlantConfig,
) -> Result<RobotState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::RejectedInput(format!("dt must be positive, got {dt}")));
    }
    if cmd.len() != 2 {
        return Err(Error::RejectedInput(format!(
            "sphere takes 2 motor commands, got {}",
            cmd.len()
        )));
    }
    let body = &cfg.body;
    let mut s = *state;

    let lag = 1.0 - libm::exp(-dt / body.actuation_tau);
    for (wheel, c) in s.wheel_actual.iter_mut().zip(cmd.as_vector().iter()) {
        *wheel += (c * body.max_wheel_speed - *wheel) * lag;
    }
    let [left, right] = s.wheel_actual;
    let drive_speed = 0.5 * (left + right);
    let drive_turn = (right - left) / body.track_width;

    // traction caps the body acceleration at mu g
    let max_dv = cfg.table.surface_friction * cfg.gravity * dt;
    let mut dv = s.heading_vector() * drive_speed - s.lin_vel;
    let dv_norm = dv.norm();
    if dv_norm > max_dv {
        dv *= max_dv / dv_norm;
    }
    s.lin_vel += dv;
    let max_dw = max_dv * 2.0 / body.track_width;
    s.ang_vel += limit(drive_turn - s.ang_vel, max_dw);

    for nudge in &active.nudges {
        s.lin_vel += nudge.impulse / body.mass;
    }

    s.pos += s.lin_vel * dt;
    s.heading = wrap_angle(s.heading + s.ang_vel * dt);

    resolve_wall(&mut s, cfg);
    for block in &active.blocks {
        resolve_block(&mut s, block, cfg);
    }
    // a block pushed against the wall may push the sphere outward
    let reach = cfg.reach();
    let d = s.pos.norm();
    if d > reach {
        s.pos *= reach / d;
    }

    if !s.is_finite() {
        return Err(Error::NumericDomain("plant state became non-finite".into()));
    }
    Ok(s)
}

fn resolve_wall(s: &mut RobotState, cfg: &PlantConfig) {
    let reach = cfg.reach();
    let d = s.pos.norm();
    if d <= reach {
        return;
    }
    let normal = s.pos / d;
    s.pos = normal * reach;
    let vn = s.lin_vel.dot(&normal);
    if vn > 0.0 {
        s.lin_vel -= normal * ((1.0 + cfg.table.wall_restitution) * vn);
    }
}

fn resolve_block(s: &mut RobotState, block: &Block, cfg: &PlantConfig) {
    let r = cfg.body.sphere_radius;
    let seg = block.end - block.start;
    let len2 = seg.norm_squared();
    let u = if len2 > 0.0 {
        ((s.pos - block.start).dot(&seg) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let closest = block.start + seg * u;
    let offset = s.pos - closest;
    let d = offset.norm();
    if d >= r {
        return;
    }
    let normal = if d > 0.0 {
        offset / d
    } else if len2 > 0.0 {
        Vec2::new(-seg.y, seg.x) / len2.sqrt()
    } else {
        Vec2::new(1.0, 0.0)
    };
    s.pos = closest + normal * r;
    let vn = s.lin_vel.dot(&normal);
    if vn < 0.0 {
        s.lin_vel -= normal * ((1.0 + cfg.table.wall_restitution) * vn);
    }
}

/// The plant together with its sensor noise stream: the unit that the
/// session loop senses from and drives.
#[derive(Clone, Debug)]
pub struct Plant {
    config: PlantConfig,
    prev: RobotState,
    state: RobotState,
    rng: ChaCha8Rng,
}

impl Plant {
    pub fn new(config: PlantConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Plant {
            config,
            prev: RobotState::default(),
            state: RobotState::default(),
            rng: seeded_stream(seed, Stream::SensorNoise),
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    /// Sensor reading for the current state.
    pub fn sense(&mut self) -> Result<SensorVector> {
        read_sensors(
            &self.prev,
            &self.state,
            self.config.dt,
            &self.config.body,
            &self.config.noise,
            &mut self.rng,
        )
    }

    pub fn advance(&mut self, cmd: &MotorVector, active: &ActiveSet) -> Result<()> {
        let next = step_physics(&self.state, cmd, self.config.dt, active, &self.config)?;
        self.prev = std::mem::replace(&mut self.state, next);
        Ok(())
    }
}

/// Independent random streams derived from one session seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    SensorNoise = 0,
    Schedule = 1,
    Init = 2,
}

pub fn seeded_stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
