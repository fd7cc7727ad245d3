use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{RobotState, RobotBody};
use crate::controller::SensorVector;
use crate::{Error, Result};

pub const SENSOR_CHANNELS: usize = 5;

/// Additive Gaussian noise levels per channel group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    /// m/s^2
    pub accel: f64,
    /// rad/s
    pub gyro: f64,
    /// normalized wheel speed
    pub wheel: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        SensorNoise {
            accel: 0.05,
            gyro: 0.02,
            wheel: 0.01,
        }
    }
}

impl SensorNoise {
    pub fn zero() -> Self {
        SensorNoise {
            accel: 0.0,
            gyro: 0.0,
            wheel: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.accel, self.gyro, self.wheel]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config("sensor noise levels must be >= 0".into()));
        }
        Ok(())
    }
}

/// Synthesizes the sensor vector from two consecutive plant states.
///
/// Accelerations are the finite difference of the world-frame velocity,
/// rotated into the body frame of `cur`. Five normal deviates are drawn per
/// call whatever the noise levels, so the stream stays aligned across
/// configurations.
pub fn read_sensors<R: Rng + ?Sized>(
    prev: &RobotState,
    cur: &RobotState,
    dt: f64,
    body: &RobotBody,
    noise: &SensorNoise,
    rng: &mut R,
) -> Result<SensorVector> {
    if !(dt > 0.0) {
        return Err(Error::RejectedInput(format!("dt must be positive, got {dt}")));
    }
    let accel = (cur.lin_vel - prev.lin_vel) / dt;
    let (sin, cos) = (libm::sin(cur.heading), libm::cos(cur.heading));
    let clean = [
        accel.x * cos + accel.y * sin,
        -accel.x * sin + accel.y * cos,
        cur.ang_vel,
        cur.wheel_actual[0] / body.max_wheel_speed,
        cur.wheel_actual[1] / body.max_wheel_speed,
    ];
    let sigma = [noise.accel, noise.accel, noise.gyro, noise.wheel, noise.wheel];
    let mut values = [0.0; SENSOR_CHANNELS];
    for i in 0..SENSOR_CHANNELS {
        let z: f64 = rng.sample(StandardNormal);
        values[i] = clean[i] + sigma[i] * z;
    }
    SensorVector::from_slice(&values)
}
