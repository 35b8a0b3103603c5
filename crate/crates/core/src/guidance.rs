//! Waypoints, the acceptance gate, loop and inspection paths, and the
//! per-axis feedback controller.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{rotation, EkfState15, ATT, POS, VEL};
use crate::geometry::{wrap_angle, FrameId, FrameMismatch, Pose};
use crate::layout::{MarkerLayout, StationGeometry};
use crate::vehicle::ThrustCommand;

/// Default heading gate, ±5°.
pub const HEADING_TOLERANCE: f64 = 5.0 * PI / 180.0;
pub const DEFAULT_RADIUS: f64 = 0.25;
pub const FUNNEL_RADIUS: f64 = 0.1;
/// Distance in front of the entry of the funnel-entry waypoint, m.
pub const FUNNEL_LEAD: f64 = 0.35;
pub const MIN_STAND_OFF: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GuidanceError {
    #[error("stand-off {0} m is below the {MIN_STAND_OFF} m minimum")]
    StandOffTooSmall(f64),
    #[error("waypoint {0} lies inside the station volume")]
    InsideStation(usize),
    #[error(transparent)]
    Frame(#[from] FrameMismatch),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: [f64; 3],
    pub frame: FrameId,
    pub heading: f64,
    pub radius: f64,
    pub heading_tolerance: f64,
}

impl Waypoint {
    pub fn new(position: [f64; 3], heading: f64, radius: f64, frame: FrameId) -> Self {
        Self {
            position,
            frame,
            heading: wrap_angle(heading),
            radius,
            heading_tolerance: HEADING_TOLERANCE,
        }
    }

    pub fn pos(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }

    pub fn pose(&self) -> Pose {
        let p = self.position;
        Pose::from_xyz_yaw(p[0], p[1], p[2], self.heading, self.frame)
    }

    /// Re-expresses the waypoint through `t` (`t.frame` becomes the new frame).
    pub fn transformed(&self, t: &Pose) -> Waypoint {
        let p = t.compose(&self.pose());
        Waypoint {
            position: [p.position.x, p.position.y, p.position.z],
            frame: t.frame,
            heading: p.yaw(),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PathKind {
    LeftLoop,
    RightLoop,
    InspectionLeft,
    InspectionRight,
    HomingDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPath {
    pub kind: PathKind,
    pub waypoints: Vec<Waypoint>,
    pub stand_off: f64,
}

impl WaypointPath {
    /// Total polyline length, m.
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1].pos() - w[0].pos()).norm())
            .sum()
    }

    /// Consecutive acceptance spheres must not overlap.
    pub fn spheres_disjoint(&self) -> bool {
        self.waypoints
            .windows(2)
            .all(|w| (w[1].pos() - w[0].pos()).norm() > w[0].radius + w[1].radius)
    }

    pub fn transformed(&self, t: &Pose) -> WaypointPath {
        WaypointPath {
            kind: self.kind,
            waypoints: self.waypoints.iter().map(|w| w.transformed(t)).collect(),
            stand_off: self.stand_off,
        }
    }
}

/// Closed acceptance sphere plus the heading gate.
pub fn waypoint_reached(estimate: &Pose, wp: &Waypoint) -> Result<bool, FrameMismatch> {
    FrameMismatch::check(wp.frame, estimate.frame)?;
    let dist = (estimate.position - wp.pos()).norm();
    let heading_err = wrap_angle(estimate.yaw() - wp.heading).abs();
    Ok(dist <= wp.radius && heading_err <= wp.heading_tolerance)
}

/// Steering target for the leg `from -> to`: the position of `to` with a
/// heading blended from `from.heading` to `to.heading` by progress along the
/// leg, reaching `to.heading` at the edge of the acceptance sphere. Keeps
/// the camera on the station through turns.
pub fn leg_reference(from: &Waypoint, to: &Waypoint, position: &Vector3<f64>) -> Waypoint {
    let len = (to.pos() - from.pos()).norm() - to.radius;
    let remaining = ((position - to.pos()).norm() - to.radius).max(0.0);
    let s = if len > 0.0 {
        (1.0 - remaining / len).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let dh = wrap_angle(to.heading - from.heading);
    Waypoint {
        heading: wrap_angle(from.heading + s * dh),
        ..*to
    }
}

/// Globally closest waypoint over both loops. Ties prefer the right loop,
/// then the lower index.
pub fn select_initial_waypoint<'a>(
    estimate: &Pose,
    left: &'a WaypointPath,
    right: &'a WaypointPath,
) -> (&'a WaypointPath, usize) {
    let mut best: Option<(&WaypointPath, usize, f64)> = None;
    for path in [right, left] {
        for (i, wp) in path.waypoints.iter().enumerate() {
            let d = (estimate.position - wp.pos()).norm();
            if best.is_none_or(|(_, _, bd)| d < bd) {
                best = Some((path, i, d));
            }
        }
    }
    let (p, i, _) = best.expect("loops have waypoints");
    (p, i)
}

/// U-shaped docking loops in the station frame.
///
/// Right loop: lateral start abeam the right face, the front-right corner,
/// frontal alignment on the entry axis, the funnel entry and the dock point.
/// The left loop mirrors it.
pub fn build_loops_station(
    g: &StationGeometry,
    stand_off: f64,
) -> Result<(WaypointPath, WaypointPath), GuidanceError> {
    if !(stand_off >= MIN_STAND_OFF) {
        return Err(GuidanceError::StandOffTooSmall(stand_off));
    }
    let fx = g.front_x();
    let hy = g.width / 2.0;
    let z = g.lane_z();
    let f = FrameId::Station;
    let d = g.dock_point;
    let side = |sign: f64, kind| {
        let wps = alloc::vec![
            Waypoint::new(
                [0.0, sign * (hy + stand_off), z],
                -sign * FRAC_PI_2,
                DEFAULT_RADIUS,
                f
            ),
            Waypoint::new(
                [fx - stand_off, sign * (hy + stand_off), z],
                -sign * FRAC_PI_4,
                DEFAULT_RADIUS,
                f,
            ),
            Waypoint::new([fx - stand_off, 0.0, z], 0.0, DEFAULT_RADIUS, f),
            Waypoint::new([fx - FUNNEL_LEAD, 0.0, z], 0.0, FUNNEL_RADIUS, f),
            Waypoint::new(d, g.dock_heading, FUNNEL_RADIUS, f),
        ];
        WaypointPath {
            kind,
            waypoints: wps,
            stand_off,
        }
    };
    let left = side(-1.0, PathKind::LeftLoop);
    let right = side(1.0, PathKind::RightLoop);
    // The funnel entry and dock point are meant to be inside the box.
    for p in [&left, &right] {
        if let Some(i) = (0..3).find(|&i| g.bounds().contains(&p.waypoints[i].pos())) {
            return Err(GuidanceError::InsideStation(i));
        }
    }
    Ok((left, right))
}

/// Docking loops expressed in the tag* frame.
pub fn build_loops(
    layout: &MarkerLayout,
    stand_off: f64,
) -> Result<(WaypointPath, WaypointPath), GuidanceError> {
    let (l, r) = build_loops_station(&layout.station, stand_off)?;
    let t = layout.tag_star_pose().inverse(FrameId::TagStar);
    Ok((l.transformed(&t), r.transformed(&t)))
}

/// Inspection circuits in the station frame: from the front centre around
/// one side to the rear centre and back the same way, always facing the
/// station.
pub fn build_inspection_station(
    g: &StationGeometry,
    stand_off: f64,
) -> (WaypointPath, WaypointPath) {
    let fx = g.front_x();
    let rx = g.depth / 2.0;
    let hy = g.width / 2.0;
    let z = g.lane_z();
    let f = FrameId::Station;
    let s = stand_off;
    let side = |sign: f64, kind| {
        let out = [
            ([fx - s, 0.0], 0.0),
            ([fx - s, sign * (hy + s)], -sign * FRAC_PI_4),
            ([0.0, sign * (hy + s)], -sign * FRAC_PI_2),
            ([rx + s, sign * (hy + s)], -sign * 3.0 * FRAC_PI_4),
            ([rx + s, 0.0], PI),
        ];
        let mut wps: Vec<Waypoint> = out
            .iter()
            .map(|(p, h)| Waypoint::new([p[0], p[1], z], *h, DEFAULT_RADIUS, f))
            .collect();
        let back: Vec<Waypoint> = wps[..4].iter().rev().copied().collect();
        wps.extend(back);
        WaypointPath {
            kind,
            waypoints: wps,
            stand_off: s,
        }
    };
    (
        side(1.0, PathKind::InspectionRight),
        side(-1.0, PathKind::InspectionLeft),
    )
}

/// Inspection circuits `(right, left)` in the tag* frame.
pub fn build_inspection(layout: &MarkerLayout, stand_off: f64) -> (WaypointPath, WaypointPath) {
    let (r, l) = build_inspection_station(&layout.station, stand_off);
    let t = layout.tag_star_pose().inverse(FrameId::TagStar);
    (r.transformed(&t), l.transformed(&t))
}

/// Per-axis gains, indexed `[surge, sway, heave, yaw]`.
///
/// Each axis is a PID on position (heading) error with the derivative taken
/// on the measured velocity. The proportional velocity demand is clamped to
/// `speed_limit`, which sets the cruise speed, and the force to
/// `output_clamp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    pub p: [f64; 4],
    pub i: [f64; 4],
    pub d: [f64; 4],
    pub integral_clamp: [f64; 4],
    pub output_clamp: [f64; 4],
    pub speed_limit: [f64; 4],
}

impl ControllerGains {
    /// Slow, careful gains for the docking loops.
    pub fn docking() -> Self {
        Self {
            p: [0.4, 0.4, 0.6, 0.8],
            i: [0.3, 0.3, 0.3, 0.05],
            d: [40.0, 50.0, 50.0, 3.0],
            integral_clamp: [1.0, 1.0, 1.0, 0.5],
            output_clamp: [20.0, 15.0, 12.0, 1.5],
            speed_limit: [0.045, 0.045, 0.1, 0.15],
        }
    }

    /// Faster transit gains for the inspection circuits.
    pub fn inspection() -> Self {
        Self {
            speed_limit: [0.16, 0.16, 0.1, 0.2],
            ..Self::docking()
        }
    }

    /// Open-water transit at the surface.
    pub fn transit() -> Self {
        Self {
            p: [0.3, 0.3, 0.6, 0.8],
            i: [0.05, 0.05, 0.3, 0.05],
            d: [40.0, 50.0, 50.0, 3.0],
            integral_clamp: [1.0, 1.0, 1.0, 0.5],
            output_clamp: [26.0, 18.0, 15.0, 2.0],
            speed_limit: [0.5, 0.3, 0.4, 0.3],
        }
    }

    /// Vertical descent holding the horizontal position.
    pub fn descent() -> Self {
        Self {
            p: [0.4, 0.4, 0.6, 0.8],
            speed_limit: [0.15, 0.15, 0.8, 0.2],
            ..Self::transit()
        }
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        let pos = |a: &[f64; 4]| a.iter().all(|v| *v > 0.0);
        if !pos(&self.p)
            || !pos(&self.integral_clamp)
            || !pos(&self.output_clamp)
            || !pos(&self.speed_limit)
        {
            return Err("controller gains and clamps must be positive");
        }
        if self.i.iter().chain(self.d.iter()).any(|v| *v < 0.0) {
            return Err("controller I and D gains must be non-negative");
        }
        Ok(())
    }
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self::docking()
    }
}

/// PID integrator state, owned by whoever runs the loop.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Controller {
    pub integral: [f64; 4],
}

impl Controller {
    pub fn reset(&mut self) {
        self.integral = [0.0; 4];
    }

    /// Thrust towards `target` from the filter estimate. Translation error
    /// is rotated into the body frame; heading follows `target.heading`
    /// independently of the bearing, so lateral legs are flown crabbing.
    pub fn control(
        &mut self,
        estimate: &EkfState15,
        frame: FrameId,
        target: &Waypoint,
        gains: &ControllerGains,
        dt: f64,
    ) -> Result<ThrustCommand, FrameMismatch> {
        FrameMismatch::check(target.frame, frame)?;
        let r = rotation(estimate[ATT], estimate[ATT + 1], estimate[ATT + 2]);
        let e_nav =
            target.pos() - Vector3::new(estimate[POS], estimate[POS + 1], estimate[POS + 2]);
        let e_body = r.transpose() * e_nav;
        let err = [
            e_body.x,
            e_body.y,
            e_body.z,
            wrap_angle(target.heading - estimate[ATT + 2]),
        ];
        let vel = [
            estimate[VEL],
            estimate[VEL + 1],
            estimate[VEL + 2],
            estimate[11],
        ];
        let mut out = [0.0; 4];
        for k in 0..4 {
            self.integral[k] = (self.integral[k] + err[k] * dt)
                .clamp(-gains.integral_clamp[k], gains.integral_clamp[k]);
            let v_ref = (gains.p[k] * err[k]).clamp(-gains.speed_limit[k], gains.speed_limit[k]);
            let u = gains.d[k] * (v_ref - vel[k]) + gains.i[k] * self.integral[k];
            out[k] = u.clamp(-gains.output_clamp[k], gains.output_clamp[k]);
        }
        Ok(ThrustCommand {
            surge: out[0],
            sway: out[1],
            heave: out[2],
            yaw: out[3],
        })
    }
}

/// Stateless single-shot control with a fresh integrator.
pub fn control(
    estimate: &EkfState15,
    frame: FrameId,
    target: &Waypoint,
    gains: &ControllerGains,
) -> Result<ThrustCommand, FrameMismatch> {
    Controller::default().control(estimate, frame, target, gains, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{step, CurrentField, VehicleParams, VehicleState};

    fn wp(p: [f64; 3], h: f64) -> Waypoint {
        Waypoint::new(p, h, 0.25, FrameId::TagStar)
    }

    #[test]
    fn gate_examples() {
        let deg = PI / 180.0;
        let w = wp([1.0, 2.0, 0.5], 0.3);
        let at =
            |dh: f64, off: f64| Pose::from_xyz_yaw(1.0 + off, 2.0, 0.5, 0.3 + dh, FrameId::TagStar);
        assert!(waypoint_reached(&at(4.0 * deg, 0.0), &w).unwrap());
        assert!(!waypoint_reached(&at(6.0 * deg, 0.0), &w).unwrap());
        assert!(waypoint_reached(&at(0.0, 0.25), &w).unwrap());
        assert!(!waypoint_reached(&at(0.0, 0.2500001), &w).unwrap());
        let wrong = Pose::identity(FrameId::Station);
        assert!(waypoint_reached(&wrong, &w).is_err());
    }

    #[test]
    fn gate_across_heading_seam() {
        let w = wp([0.0; 3], PI);
        let p = Pose::from_xyz_yaw(0.0, 0.0, 0.0, -PI + 0.03, FrameId::TagStar);
        assert!(waypoint_reached(&p, &w).unwrap());
    }

    #[test]
    fn default_loops_start_abeam_funnel() {
        let g = StationGeometry::default();
        let (left, right) = build_loops_station(&g, 1.5).unwrap();
        let start = right.waypoints[0].pos();
        // 2.5 m to the right of the funnel axis.
        assert_close!(start.y, 2.5, 1e-12);
        assert_close!(left.waypoints[0].position[1], -2.5, 1e-12);
        assert_eq!(right.waypoints[0].heading, -FRAC_PI_2);
        assert_eq!(right.waypoints[2..], left.waypoints[2..]);
        assert!(right.spheres_disjoint() && left.spheres_disjoint());
    }

    #[test]
    fn larger_stand_off_moves_corners_out() {
        let g = StationGeometry::default();
        let (_, base) = build_loops_station(&g, 1.5).unwrap();
        let (_, wide) = build_loops_station(&g, 2.0).unwrap();
        let c0 = base.waypoints[1].pos();
        let c1 = wide.waypoints[1].pos();
        assert!(c1.x < c0.x && c1.y > c0.y);
    }

    #[test]
    fn tiny_stand_off_rejected() {
        let g = StationGeometry::default();
        assert_eq!(
            build_loops_station(&g, 0.3).unwrap_err(),
            GuidanceError::StandOffTooSmall(0.3)
        );
    }

    #[test]
    fn loops_in_tag_star_frame() {
        let layout = MarkerLayout::reconstructed_deep_site();
        let (_, right) = build_loops(&layout, 1.5).unwrap();
        let dock = right.waypoints[4];
        assert_eq!(dock.frame, FrameId::TagStar);
        // tag* is the front tag at (-0.5, 0, -0.87) with no rotation.
        assert_close!(dock.position[0], 0.6, 1e-12);
        assert_close!(dock.position[2], 0.42, 1e-12);
    }

    #[test]
    fn select_examples() {
        let layout = MarkerLayout::reconstructed_deep_site();
        let (left, right) = build_loops(&layout, 1.5).unwrap();
        let at = |p: Vector3<f64>| Pose::new(p, Default::default(), FrameId::TagStar);

        let start = right.waypoints[0].pos() + Vector3::new(0.1, 0.05, 0.0);
        let (p, i) = select_initial_waypoint(&at(start), &left, &right);
        assert_eq!((p.kind, i), (PathKind::RightLoop, 0));

        // On the entry axis, equidistant from both lateral starts.
        let mid = (left.waypoints[0].pos() + right.waypoints[0].pos()) / 2.0;
        let (p, _) = select_initial_waypoint(&at(mid + Vector3::new(0.0, 0.0, 5.0)), &left, &right);
        assert_eq!(p.kind, PathKind::RightLoop);

        let pre = right.waypoints[3].pos();
        let (p, i) = select_initial_waypoint(&at(pre), &left, &right);
        assert_eq!((p.kind, i), (PathKind::RightLoop, 3));
    }

    #[test]
    fn control_examples() {
        let g = ControllerGains::docking();
        let x = EkfState15::zeros();
        let c = control(&x, FrameId::TagStar, &wp([0.0; 3], 0.0), &g).unwrap();
        assert_eq!(c, ThrustCommand::default());

        let c = control(&x, FrameId::TagStar, &wp([1.0, 0.0, 0.0], 0.0), &g).unwrap();
        assert!(c.surge > 0.0 && c.sway.abs() < 1e-12 && c.yaw.abs() < 1e-12);

        // Port is -y in the body frame.
        let c = control(&x, FrameId::TagStar, &wp([0.0, -1.0, 0.0], 0.0), &g).unwrap();
        assert!(c.sway < 0.0 && c.sway.abs() > c.surge.abs() && c.yaw.abs() < 1e-12);
    }

    #[test]
    fn crabs_to_port_target_without_turning() {
        let params = VehicleParams {
            sway_coupling: 0.0,
            ..VehicleParams::default()
        };
        let env = CurrentField::still();
        let gains = ControllerGains::docking();
        let target = Waypoint::new([0.0, -1.0, 50.0], 0.0, 0.25, FrameId::WorldNed);
        let mut s = VehicleState::at_rest([0.0, 0.0, 50.0], 0.0);
        let mut ctl = Controller::default();
        let mut max_yaw = 0.0_f64;
        for _ in 0..1200 {
            let mut x = EkfState15::zeros();
            x[0] = s.position[0];
            x[1] = s.position[1];
            x[2] = s.position[2];
            x[5] = s.yaw;
            x[6] = s.velocity.u;
            x[7] = s.velocity.v;
            x[8] = s.velocity.w;
            x[11] = s.velocity.r;
            if waypoint_reached(&s.pose(), &target).unwrap() {
                break;
            }
            let cmd = ctl
                .control(&x, FrameId::WorldNed, &target, &gains, 0.05)
                .unwrap();
            s = step(&params, &s, &cmd, &env, 0.05).unwrap();
            max_yaw = max_yaw.max(s.yaw.abs());
        }
        assert!(waypoint_reached(&s.pose(), &target).unwrap());
        assert!(max_yaw < 1e-9);
    }

    #[test]
    fn inspection_circuits() {
        let g = StationGeometry::default();
        let (right, left) = build_inspection_station(&g, 1.5);
        for c in [&right, &left] {
            assert_eq!(c.waypoints.first(), c.waypoints.last());
            assert!(c.spheres_disjoint());
            assert_close!(c.length(), 18.0, 1e-9);
        }
        assert!(right.waypoints.iter().all(|w| w.position[1] >= 0.0));
        assert!(left.waypoints.iter().all(|w| w.position[1] <= 0.0));
    }
}
