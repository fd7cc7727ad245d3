//! Batch sessions: configuration, the session loop, trajectory logs and
//! condition comparison.

mod compare;
mod config;
mod log;
mod session;

pub use compare::{compare, summarize_log, CompareReport, GroupStats, LogSummaryRow, CSV_HEADER};
pub use config::{Condition, InitConfig, PerturbationConfig, SessionConfig};
pub use log::{LogHeader, LogSummary, StepRecord, TrajectoryLog, LOG_VERSION};
pub use session::{log_file_name, run_batch, run_session, run_session_with_timeline, Session};

use crate::controller::{ControllerConfig, NetworkParams, TipiController};
use crate::sim::{seeded_stream, PlantConfig, Stream, MOTOR_LEFT, MOTOR_RIGHT, SENSOR_CHANNELS};
use crate::sim::channel::{WHEEL_LEFT, WHEEL_RIGHT};
use crate::Result;

/// Adaptive controller for the sphere: each servo starts out following its
/// own wheel-speed reading, the forward model starts small and random.
pub fn ada_controller(
    plant: &PlantConfig,
    controller: &ControllerConfig,
    init: &InitConfig,
    seed: u64,
) -> Result<TipiController> {
    plant.validate()?;
    let params = NetworkParams::tweaked(
        SENSOR_CHANNELS,
        2,
        &[(MOTOR_LEFT, WHEEL_LEFT), (MOTOR_RIGHT, WHEEL_RIGHT)],
        init.self_coupling,
        init.model_scale,
        &mut seeded_stream(seed, Stream::Init),
    )?;
    TipiController::new(params, *controller, seed)
}
