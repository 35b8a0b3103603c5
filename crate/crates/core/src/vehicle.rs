//! Ground-truth 4-DOF vehicle dynamics, currents and the magnetic latch.
//!
//! Surge, sway, heave and yaw are integrated independently with linear plus
//! quadratic damping acting on the velocity relative to the water. Roll and
//! pitch are passively stable and held at zero.

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Aabb, BodyVelocity, FrameId, FrameMismatch, Pose};

/// Current magnitudes above this are rejected as configuration errors.
pub const CURRENT_CEILING: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VehicleError {
    #[error("vehicle state became non-finite at t = {t:.3} s")]
    NonfiniteState { t: f64 },
    #[error("time step {0} outside (0, 0.1] s")]
    BadTimeStep(f64),
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(&'static str),
    #[error("current speed {0:.3} m/s exceeds the {CURRENT_CEILING} m/s ceiling")]
    CurrentTooStrong(f64),
}

/// Hydrodynamic and actuator parameters, per axis `[surge, sway, heave, yaw]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub added_mass: [f64; 4],
    pub linear_damping: [f64; 4],
    pub quadratic_damping: [f64; 4],
    /// Maximum force, `[surge, sway, heave]`, N.
    pub max_thrust: [f64; 3],
    pub max_yaw_moment: f64,
    /// Speed envelope used by config validation and sensors, m/s.
    pub max_speed: f64,
    /// Fraction of surge force leaking into sway.
    pub sway_coupling: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        // Terminal surge speed at full thrust: 40 v² + 5 v = 26  =>  v ≈ 0.75 m/s.
        Self {
            mass: 10.0,
            yaw_inertia: 0.25,
            added_mass: [5.0, 8.0, 8.0, 0.15],
            linear_damping: [5.0, 8.0, 8.0, 0.6],
            quadratic_damping: [40.0, 60.0, 60.0, 0.8],
            max_thrust: [26.0, 18.0, 15.0],
            max_yaw_moment: 2.0,
            max_speed: 1.5,
            sway_coupling: 0.05,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        if !(self.mass > 0.0) || !(self.yaw_inertia > 0.0) {
            return Err(VehicleError::InvalidParams(
                "mass and inertia must be positive",
            ));
        }
        if self.added_mass.iter().any(|m| !(*m >= 0.0)) {
            return Err(VehicleError::InvalidParams(
                "added mass must be non-negative",
            ));
        }
        if self
            .linear_damping
            .iter()
            .chain(self.quadratic_damping.iter())
            .any(|d| !(*d >= 0.0))
        {
            return Err(VehicleError::InvalidParams("damping must be non-negative"));
        }
        if self.max_thrust.iter().any(|f| !(*f > 0.0)) || !(self.max_yaw_moment > 0.0) {
            return Err(VehicleError::InvalidParams(
                "saturation limits must be positive",
            ));
        }
        if !(self.max_speed > 0.0) {
            return Err(VehicleError::InvalidParams(
                "speed envelope must be positive",
            ));
        }
        Ok(())
    }

    fn inertia(&self, axis: usize) -> f64 {
        if axis == 3 {
            self.yaw_inertia + self.added_mass[3]
        } else {
            self.mass + self.added_mass[axis]
        }
    }

    /// Steady speed reached under constant force `f` with no current.
    pub fn terminal_speed(&self, axis: usize, f: f64) -> f64 {
        let (dl, dq) = (self.linear_damping[axis], self.quadratic_damping[axis]);
        if dq > 0.0 {
            (-dl + (dl * dl + 4.0 * dq * f.abs()).sqrt()) / (2.0 * dq) * f.signum()
        } else {
            f / dl
        }
    }
}

/// Body-frame force/moment command.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ThrustCommand {
    pub surge: f64,
    pub sway: f64,
    pub heave: f64,
    pub yaw: f64,
}

impl ThrustCommand {
    pub fn saturate(&self, params: &VehicleParams) -> ThrustCommand {
        let clamp = |v: f64, lim: f64| {
            if v.is_finite() {
                v.clamp(-lim, lim)
            } else {
                0.0
            }
        };
        ThrustCommand {
            surge: clamp(self.surge, params.max_thrust[0]),
            sway: clamp(self.sway, params.max_thrust[1]),
            heave: clamp(self.heave, params.max_thrust[2]),
            yaw: clamp(self.yaw, params.max_yaw_moment),
        }
    }
}

/// Long-period surface-wave orbital velocity, decaying with depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSurge {
    /// Orbital velocity amplitude at the surface, m/s.
    pub amplitude: f64,
    pub period: f64,
    /// Propagation direction, rad from North.
    pub direction: f64,
    /// e-folding depth, m.
    pub decay_depth: f64,
}

/// Water current model around the station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurrentField {
    /// Steady (north, east) velocity, m/s.
    pub steady_ne: [f64; 2],
    /// Optional `(depth m, scale)` breakpoints, linearly interpolated.
    pub depth_profile: Vec<[f64; 2]>,
    /// Fraction of the current blocked inside the station volume.
    pub shielding: f64,
    /// Shielded volume in station coordinates.
    pub station_box: Aabb,
    /// Station origin in the world frame.
    pub station_origin: [f64; 3],
    pub station_yaw: f64,
    pub wave: Option<WaveSurge>,
}

impl Default for CurrentField {
    fn default() -> Self {
        Self {
            steady_ne: [0.0, 0.0],
            depth_profile: Vec::new(),
            shielding: 0.9,
            station_box: Aabb::new([-0.5, -1.0, -1.0], [0.5, 1.0, 1.0]),
            station_origin: [0.0, 0.0, 90.0],
            station_yaw: 0.0,
            wave: None,
        }
    }
}

impl CurrentField {
    pub fn still() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        let speed = self.steady_ne[0].hypot(self.steady_ne[1]);
        if !(speed <= CURRENT_CEILING) {
            return Err(VehicleError::CurrentTooStrong(speed));
        }
        if !(0.0..=1.0).contains(&self.shielding) {
            return Err(VehicleError::InvalidParams("shielding must lie in [0, 1]"));
        }
        Ok(())
    }

    fn depth_scale(&self, depth: f64) -> f64 {
        let prof = &self.depth_profile;
        match prof.len() {
            0 => 1.0,
            1 => prof[0][1],
            _ => {
                if depth <= prof[0][0] {
                    return prof[0][1];
                }
                for w in prof.windows(2) {
                    let (d0, s0, d1, s1) = (w[0][0], w[0][1], w[1][0], w[1][1]);
                    if depth <= d1 {
                        let f = if d1 > d0 {
                            (depth - d0) / (d1 - d0)
                        } else {
                            1.0
                        };
                        return s0 + f * (s1 - s0);
                    }
                }
                prof[prof.len() - 1][1]
            }
        }
    }

    pub fn in_station(&self, p_world: &Vector3<f64>) -> bool {
        let o = Vector3::from(self.station_origin);
        let local =
            Rotation3::from_axis_angle(&Vector3::z_axis(), -self.station_yaw) * (p_world - o);
        self.station_box.contains(&local)
    }

    /// World-frame water velocity at `p_world` and time `t`.
    pub fn velocity_at(&self, p_world: &Vector3<f64>, t: f64) -> Vector3<f64> {
        let depth = p_world.z.max(0.0);
        let s = self.depth_scale(depth);
        let mut c = Vector3::new(self.steady_ne[0] * s, self.steady_ne[1] * s, 0.0);
        if let Some(w) = &self.wave {
            let mag = w.amplitude * (-depth / w.decay_depth).exp() * (TAU * t / w.period).sin();
            c += Vector3::new(w.direction.cos() * mag, w.direction.sin() * mag, 0.0);
        }
        if self.in_station(p_world) {
            c *= 1.0 - self.shielding;
        }
        c
    }
}

/// Ground-truth vehicle state. Roll and pitch are identically zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub t: f64,
    /// NED position, m.
    pub position: [f64; 3],
    pub yaw: f64,
    /// Body-frame velocity (p, q stay zero).
    pub velocity: BodyVelocity,
}

impl VehicleState {
    pub fn at_rest(position: [f64; 3], yaw: f64) -> Self {
        Self {
            t: 0.0,
            position,
            yaw: wrap_angle(yaw),
            velocity: BodyVelocity::default(),
        }
    }

    pub fn pose(&self) -> Pose {
        let p = self.position;
        Pose::from_xyz_yaw(p[0], p[1], p[2], self.yaw, FrameId::WorldNed)
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.position.iter().all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.velocity.is_finite()
    }

    /// Kinetic energy including added mass.
    pub fn kinetic_energy(&self, params: &VehicleParams) -> f64 {
        let v = &self.velocity;
        0.5 * (params.inertia(0) * v.u * v.u
            + params.inertia(1) * v.v * v.v
            + params.inertia(2) * v.w * v.w
            + params.inertia(3) * v.r * v.r)
    }

    /// World-frame linear velocity.
    pub fn world_velocity(&self) -> Vector3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw) * self.velocity.linear()
    }
}

/// Advances the vehicle by `dt` with semi-implicit Euler integration.
pub fn step(
    params: &VehicleParams,
    state: &VehicleState,
    cmd: &ThrustCommand,
    env: &CurrentField,
    dt: f64,
) -> Result<VehicleState, VehicleError> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(VehicleError::BadTimeStep(dt));
    }
    let cmd = cmd.saturate(params);
    let pos = Vector3::from(state.position);
    let to_body = Rotation3::from_axis_angle(&Vector3::z_axis(), -state.yaw);
    let current_b = to_body * env.velocity_at(&pos, state.t);

    let vel = &state.velocity;
    let rel = [
        vel.u - current_b.x,
        vel.v - current_b.y,
        vel.w - current_b.z,
        vel.r,
    ];
    let tau = [
        cmd.surge,
        cmd.sway + params.sway_coupling * cmd.surge,
        cmd.heave,
        cmd.yaw,
    ];
    let mut next = [vel.u, vel.v, vel.w, vel.r];
    for axis in 0..4 {
        let damping = params.linear_damping[axis] * rel[axis]
            + params.quadratic_damping[axis] * rel[axis] * rel[axis].abs();
        next[axis] += dt * (tau[axis] - damping) / params.inertia(axis);
    }

    let yaw = wrap_angle(state.yaw + dt * next[3]);
    let to_world = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
    let new_pos = pos + to_world * Vector3::new(next[0], next[1], next[2]) * dt;

    let out = VehicleState {
        t: state.t + dt,
        position: [new_pos.x, new_pos.y, new_pos.z],
        yaw,
        velocity: BodyVelocity {
            u: next[0],
            v: next[1],
            w: next[2],
            p: 0.0,
            q: 0.0,
            r: next[3],
        },
    };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(VehicleError::NonfiniteState { t: out.t })
    }
}

/// Magnetic latch at the dock point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatchParams {
    pub capture_radius: f64,
    pub heading_tolerance: f64,
    /// Combined surge/heave command magnitude needed to pull free, N.
    pub breakaway_thrust: f64,
}

impl Default for LatchParams {
    fn default() -> Self {
        let vp = VehicleParams::default();
        Self {
            capture_radius: 0.1,
            heading_tolerance: 10.0 * PI / 180.0,
            breakaway_thrust: 1.5 * vp.max_thrust[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatchState {
    pub latched: bool,
    pub params: LatchParams,
    /// Dock point and docked heading, station frame.
    pub dock: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatchEvent {
    None,
    Captured,
    Released,
}

impl LatchState {
    pub fn new(params: LatchParams, dock: Pose) -> Self {
        Self {
            latched: false,
            params,
            dock,
        }
    }

    /// Applies stickiness and breakaway. `vehicle_pose` is in the station frame.
    pub fn update(
        &mut self,
        vehicle_pose: &Pose,
        cmd: &ThrustCommand,
    ) -> Result<LatchEvent, FrameMismatch> {
        if self.latched {
            let pull = cmd.surge.hypot(cmd.heave);
            if pull > self.params.breakaway_thrust {
                self.latched = false;
                return Ok(LatchEvent::Released);
            }
            return Ok(LatchEvent::None);
        }
        if latch_check(vehicle_pose, self)? {
            self.latched = true;
            Ok(LatchEvent::Captured)
        } else {
            Ok(LatchEvent::None)
        }
    }
}

/// Capture gate: vehicle within `capture_radius` of the dock point and its
/// heading within `heading_tolerance` of the docked heading.
pub fn latch_check(vehicle_pose: &Pose, latch: &LatchState) -> Result<bool, FrameMismatch> {
    FrameMismatch::check(FrameId::Station, vehicle_pose.frame)?;
    FrameMismatch::check(FrameId::Station, latch.dock.frame)?;
    let dist = (vehicle_pose.position - latch.dock.position).norm();
    let heading_err = wrap_angle(vehicle_pose.yaw() - latch.dock.yaw()).abs();
    Ok(dist <= latch.params.capture_radius && heading_err <= latch.params.heading_tolerance)
}
