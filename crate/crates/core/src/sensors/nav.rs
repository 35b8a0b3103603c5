//! Proprioceptive sensors: DVL, IMU with optional compass, and depth.

use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian;
use crate::geometry::wrap_angle;
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavNoise {
    /// m/s per axis.
    pub dvl: f64,
    pub gyro: f64,
    pub accel: f64,
    /// Roll/pitch from the gravity vector, rad.
    pub tilt: f64,
    pub compass: f64,
    pub depth: f64,
    /// Compass bias random walk, rad per square-root second.
    pub compass_walk: f64,
    pub compass_drift: bool,
}

impl Default for NavNoise {
    fn default() -> Self {
        // 0.5 deg expected bias magnitude after one minute.
        let walk = 0.5 * PI / 180.0 / 60f64.sqrt();
        Self {
            dvl: 0.01,
            gyro: 0.002,
            accel: 0.02,
            tilt: 0.005,
            compass: 0.02,
            depth: 0.02,
            compass_walk: walk,
            compass_drift: false,
        }
    }
}

impl NavNoise {
    pub fn noiseless() -> Self {
        Self {
            dvl: 0.0,
            gyro: 0.0,
            accel: 0.0,
            tilt: 0.0,
            compass: 0.0,
            depth: 0.0,
            compass_walk: 0.0,
            compass_drift: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvlMeasurement {
    pub t: f64,
    /// Body-frame velocity over ground, m/s.
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuMeasurement {
    pub t: f64,
    pub rates: [f64; 3],
    /// Body-frame acceleration (gravity removed), m/s².
    pub accel: [f64; 3],
    /// (roll, pitch) from the accelerometers.
    pub tilt: Option<[f64; 2]>,
    /// Magnetic heading in the world frame, including any drift bias.
    pub heading: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMeasurement {
    pub t: f64,
    /// Depth below the surface, m.
    pub z: f64,
}

/// Slowly wandering compass bias.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompassDrift {
    pub bias: f64,
}

impl CompassDrift {
    pub fn advance<R: Rng + ?Sized>(&mut self, noise: &NavNoise, dt: f64, rng: &mut R) {
        if noise.compass_drift {
            self.bias += gaussian(rng, noise.compass_walk * dt.sqrt());
        }
    }
}

pub fn sample_dvl<R: Rng + ?Sized>(
    s: &VehicleState,
    noise: &NavNoise,
    rng: &mut R,
) -> DvlMeasurement {
    let v = &s.velocity;
    DvlMeasurement {
        t: s.t,
        velocity: [
            v.u + gaussian(rng, noise.dvl),
            v.v + gaussian(rng, noise.dvl),
            v.w + gaussian(rng, noise.dvl),
        ],
    }
}

/// `accel` is the true body-frame acceleration over the last step.
pub fn sample_imu<R: Rng + ?Sized>(
    s: &VehicleState,
    accel: [f64; 3],
    drift: &CompassDrift,
    with_heading: bool,
    noise: &NavNoise,
    rng: &mut R,
) -> ImuMeasurement {
    let v = &s.velocity;
    let rates = [
        v.p + gaussian(rng, noise.gyro),
        v.q + gaussian(rng, noise.gyro),
        v.r + gaussian(rng, noise.gyro),
    ];
    let accel = [
        accel[0] + gaussian(rng, noise.accel),
        accel[1] + gaussian(rng, noise.accel),
        accel[2] + gaussian(rng, noise.accel),
    ];
    let tilt = [gaussian(rng, noise.tilt), gaussian(rng, noise.tilt)];
    let heading = if with_heading {
        Some(wrap_angle(
            s.yaw + drift.bias + gaussian(rng, noise.compass),
        ))
    } else {
        None
    };
    ImuMeasurement {
        t: s.t,
        rates,
        accel,
        tilt: Some(tilt),
        heading,
    }
}

pub fn sample_depth<R: Rng + ?Sized>(
    s: &VehicleState,
    noise: &NavNoise,
    rng: &mut R,
) -> DepthMeasurement {
    DepthMeasurement {
        t: s.t,
        z: s.position[2] + gaussian(rng, noise.depth),
    }
}
