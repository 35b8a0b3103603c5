//! Guidance, navigation and docking simulation core for a resident mini-ROV.
//!
//! The crate is `no_std` (with `alloc`) and holds the pure pieces of the
//! system: frames and transforms, the ground-truth vehicle model, sensor
//! models including geometric fiducial detection, the 15-state EKF,
//! waypoint guidance, the mission state machine and the closed-loop trial
//! runner. File formats, batch execution and the command-line interface
//! live in the `rovdock` companion crate.
//!
//! Conventions: NED world frame, body frame x forward / y right / z down,
//! Z-Y-X Euler angles, angles in radians, SI units throughout.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
    }};
}

pub mod estimation;
pub mod geometry;
pub mod guidance;
pub mod layout;
pub mod mission;
pub mod scenario;
pub mod sensors;
pub mod vehicle;

pub use geometry::{wrap_angle, BodyVelocity, FrameId, Pose};
pub use mission::{run_mission, MissionPhase};
pub use scenario::{ScenarioConfig, TrialResult};
