use nalgebra::{Matrix6, UnitQuaternion, Vector3};
use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rovdock_core::estimation::{
    min_eigenvalue, Ekf, EkfConfig, EkfState15, MeasurementPacket, ATT, POS, RATE, VEL,
};
use rovdock_core::geometry::{invert, wrap_angle, FrameId, Pose};
use rovdock_core::guidance::{
    build_loops_station, select_initial_waypoint, waypoint_reached, Controller, ControllerGains,
    Waypoint,
};
use rovdock_core::layout::{coverage_map, survey_path, Face, MarkerLayout};
use rovdock_core::sensors::camera::{visible, CameraModel};
use rovdock_core::sensors::occlusion::Occluder;
use rovdock_core::vehicle::{
    step, CurrentField, LatchParams, LatchState, ThrustCommand, VehicleParams, VehicleState,
};

fn pose_strategy(frame: FrameId) -> impl Strategy<Value = Pose> {
    (
        prop::array::uniform3(-20.0f64..20.0),
        -1.4f64..1.4,
        -1.4f64..1.4,
        -PI..PI,
    )
        .prop_map(move |(p, r, q, y)| Pose::from_euler(Vector3::from(p), r, q, y, frame))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn compose_with_inverse_is_identity(p in pose_strategy(FrameId::Station)) {
        let back = p.compose(&invert(&p, FrameId::Body));
        prop_assert!(back.position.norm() < 1e-9);
        prop_assert!(back.orientation.angle() < 1e-9);
        let fwd = invert(&p, FrameId::Body).compose(&p);
        prop_assert!(fwd.position.norm() < 1e-9);
    }

    #[test]
    fn wrap_is_idempotent(a in -1.0e4f64..1.0e4) {
        let w = wrap_angle(a);
        prop_assert_eq!(wrap_angle(w), w);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
    }

    #[test]
    fn euler_round_trip_keeps_heading(r in -1.5f64..1.5, p in -1.48f64..1.48, y in -PI..PI) {
        let pose = Pose::from_euler(Vector3::zeros(), r, p, y, FrameId::Body);
        let q = UnitQuaternion::from_euler_angles(r, p, y);
        let (r2, p2, y2) = pose.euler();
        prop_assert!(wrap_angle(y2 - y).abs() < 1e-9);
        prop_assert!((r2 - r).abs() < 1e-9 && (p2 - p).abs() < 1e-9);
        prop_assert!(pose.orientation.angle_to(&q) < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    /// Gate against a direct recomputation from the rotation matrices.
    #[test]
    fn waypoint_gate_matches_brute_force(
        est in pose_strategy(FrameId::TagStar),
        wx in -20.0f64..20.0, wy in -20.0f64..20.0, wz in -20.0f64..20.0,
        heading in -PI..PI, radius in 0.01f64..3.0,
        near in any::<bool>(),
    ) {
        let mut est = est;
        if near {
            // Pull half the cases close to the sphere and heading boundary.
            est.position = Vector3::new(wx, wy, wz) + est.position.normalize() * radius * 1.1 * (est.position.x.abs() / 20.0);
            est.orientation = UnitQuaternion::from_euler_angles(0.0, 0.0, heading + (est.position.y / 20.0) * 0.2);
        }
        let wp = Waypoint::new([wx, wy, wz], heading, radius, FrameId::TagStar);
        let got = waypoint_reached(&est, &wp).unwrap();
        let dx = est.position.x - wx;
        let dy = est.position.y - wy;
        let dz = est.position.z - wz;
        let dist = (dx * dx + dy * dy + dz * dz).sqrt();
        let m = est.orientation.to_rotation_matrix();
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        let mut d = (yaw - heading) % (2.0 * std::f64::consts::PI);
        if d > std::f64::consts::PI { d -= 2.0 * std::f64::consts::PI; }
        if d <= -std::f64::consts::PI { d += 2.0 * std::f64::consts::PI; }
        let expected = dist <= radius && d.abs() <= 5f64.to_radians();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn gate_is_invariant_under_rigid_motion(
        est in pose_strategy(FrameId::TagStar),
        g in pose_strategy(FrameId::TagStar),
        radius in 0.1f64..30.0,
    ) {
        // Level rigid motions keep the heading comparison meaningful.
        let g = Pose::from_xyz_yaw(g.position.x, g.position.y, g.position.z, g.yaw(), FrameId::TagStar);
        let est = Pose::from_xyz_yaw(est.position.x, est.position.y, est.position.z, est.yaw(), FrameId::TagStar);
        let wp = Waypoint::new([1.0, 2.0, 0.5], 0.3, radius, FrameId::TagStar);
        let moved = wp.transformed(&g);
        let est2 = g.compose(&est);
        prop_assert_eq!(
            waypoint_reached(&est, &wp).unwrap(),
            waypoint_reached(&est2, &moved).unwrap()
        );
    }
}

#[test]
fn initial_waypoint_is_the_global_argmin() {
    let layout = MarkerLayout::reconstructed_deep_site();
    let (left, right) = build_loops_station(&layout.station, 1.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let p = Pose::from_xyz_yaw(
            rng.random_range(-6.0..4.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-2.0..1.0),
            0.0,
            FrameId::Station,
        );
        let (path, i) = select_initial_waypoint(&p, &left, &right);
        let chosen = (p.position - path.waypoints[i].pos()).norm();
        let best = left
            .waypoints
            .iter()
            .chain(right.waypoints.iter())
            .map(|w| (p.position - w.pos()).norm())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(chosen, best);
    }
}

fn nav_state(s: &VehicleState) -> EkfState15 {
    let mut x = EkfState15::zeros();
    for i in 0..3 {
        x[POS + i] = s.position[i];
    }
    x[ATT + 2] = s.yaw;
    x[VEL] = s.velocity.u;
    x[VEL + 1] = s.velocity.v;
    x[VEL + 2] = s.velocity.w;
    x[RATE + 2] = s.velocity.r;
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn closed_loop_reaches_every_loop_waypoint(
        dist in 0.0f64..3.0, bearing in -PI..PI, dz in -0.5f64..0.5,
        yaw in -PI..PI, right in any::<bool>(),
    ) {
        let layout = MarkerLayout::reconstructed_deep_site();
        let (l, r) = build_loops_station(&layout.station, 1.5).unwrap();
        let path = if right { r } else { l };
        let params = VehicleParams::default();
        let gains = ControllerGains::inspection();
        let env = CurrentField::still();
        let w0 = path.waypoints[0].pos();
        let mut s = VehicleState::at_rest(
            [w0.x + dist * bearing.cos(), w0.y + dist * bearing.sin(), w0.z + dz],
            yaw,
        );
        let dt = 0.05;
        let mut prev: Option<Waypoint> = None;
        for wp in &path.waypoints {
            let mut ctl = Controller::default();
            let mut reached = false;
            for _ in 0..(60.0 / dt) as usize {
                let est = Pose::from_xyz_yaw(s.position[0], s.position[1], s.position[2], s.yaw, FrameId::Station);
                if waypoint_reached(&est, wp).unwrap() {
                    reached = true;
                    break;
                }
                let target = match &prev {
                    Some(p) => rovdock_core::guidance::leg_reference(p, wp, &est.position),
                    None => *wp,
                };
                let cmd = ctl.control(&nav_state(&s), FrameId::Station, &target, &gains, dt).unwrap();
                s = step(&params, &s, &cmd, &env, dt).unwrap();
            }
            prop_assert!(reached, "waypoint {:?} not reached from {:?}", wp.position, s.position);
            prev = Some(*wp);
        }
    }

    #[test]
    fn coasting_never_gains_energy(u in -1.0f64..1.0, v in -1.0f64..1.0, w in -1.0f64..1.0, r in -1.0f64..1.0) {
        let params = VehicleParams::default();
        let env = CurrentField::still();
        let mut s = VehicleState::at_rest([0.0, 0.0, 20.0], 0.0);
        s.velocity.u = u;
        s.velocity.v = v;
        s.velocity.w = w;
        s.velocity.r = r;
        let mut e = s.kinetic_energy(&params);
        for _ in 0..400 {
            s = step(&params, &s, &ThrustCommand::default(), &env, 0.05).unwrap();
            let e2 = s.kinetic_energy(&params);
            prop_assert!(e2 <= e + 1e-12);
            e = e2;
        }
    }

    #[test]
    fn saturated_commands_stay_inside_limits(a in -1e3f64..1e3, b in -1e3f64..1e3, c in -1e3f64..1e3, d in -1e3f64..1e3) {
        let params = VehicleParams::default();
        let cmd = ThrustCommand { surge: a, sway: b, heave: c, yaw: d }.saturate(&params);
        prop_assert!(cmd.surge.abs() <= params.max_thrust[0]);
        prop_assert!(cmd.sway.abs() <= params.max_thrust[1]);
        prop_assert!(cmd.heave.abs() <= params.max_thrust[2]);
        prop_assert!(cmd.yaw.abs() <= params.max_yaw_moment);
    }

    #[test]
    fn vehicle_stepping_is_deterministic(cmds in prop::collection::vec(prop::array::uniform4(-30.0f64..30.0), 1..200)) {
        let params = VehicleParams::default();
        let mut env = CurrentField::default();
        env.steady_ne = [0.1, -0.05];
        let run = || {
            let mut s = VehicleState::at_rest([-3.0, 1.0, 89.0], 0.2);
            let mut out = Vec::new();
            for c in &cmds {
                let cmd = ThrustCommand { surge: c[0], sway: c[1], heave: c[2], yaw: c[3] };
                s = step(&params, &s, &cmd, &env, 0.05).unwrap();
                out.push(s);
            }
            out
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn latched_vehicle_stays_put_without_pull(surge in -10.0f64..10.0, heave in -10.0f64..10.0) {
        let layout = MarkerLayout::reconstructed_deep_site();
        let dock = layout.station.dock_pose();
        let mut latch = LatchState::new(LatchParams::default(), dock);
        prop_assert!(latch.update(&dock, &ThrustCommand::default()).unwrap() == rovdock_core::vehicle::LatchEvent::Captured);
        let cmd = ThrustCommand { surge, heave, ..ThrustCommand::default() };
        for _ in 0..1000 {
            latch.update(&dock, &ThrustCommand::default()).unwrap();
            latch.update(&dock, &cmd).unwrap();
        }
        prop_assert!(latch.latched);
    }

    #[test]
    fn visibility_is_monotone(
        x in -8.0f64..-0.6, y in -3.0f64..3.0, z in -1.5f64..0.5, yaw in -1.0f64..1.0,
        shrink in 0.05f64..1.0, fish_r in 0.05f64..0.5, fish_d in 0.2f64..2.0,
    ) {
        let layout = MarkerLayout::reconstructed_deep_site();
        let mut cam = CameraModel::default();
        cam.attenuation_length = 1.5;
        let far = Pose::from_xyz_yaw(x, y, z, yaw, FrameId::Station);
        let fish = Occluder::CameraSphere { center: [fish_d, 0.0, 0.0], radius: fish_r };
        for tag in &layout.tags {
            let c = tag.center();
            let near_pos = c + (far.position - c) * shrink;
            let near = Pose::new(near_pos, far.orientation, FrameId::Station);
            let v_far = visible(tag, &far, &cam, &layout.station, &layout.masks, &[]);
            let v_far_fish = visible(tag, &far, &cam, &layout.station, &layout.masks, &[fish]);
            // Dropping an occluder never hides a tag.
            prop_assert!(!v_far_fish || v_far);
            // Moving straight towards the tag keeps it visible unless it
            // leaves the frustum.
            if v_far {
                let p_cam = near.inverse_transform_point(&c);
                let in_view = p_cam.x > 0.0
                    && p_cam.y.abs() <= p_cam.x * (0.5 * cam.hfov).tan()
                    && p_cam.z.abs() <= p_cam.x * (0.5 * cam.vfov).tan();
                if in_view {
                    prop_assert!(visible(tag, &near, &cam, &layout.station, &layout.masks, &[]));
                }
            }
        }
    }
}

#[test]
fn funnel_interior_is_the_densest_face() {
    let layout = MarkerLayout::reconstructed_deep_site();
    let funnel = layout.face_density(Face::FunnelInterior);
    for f in Face::ALL {
        if f != Face::FunnelInterior {
            assert!(funnel > layout.face_density(f), "{f:?}");
        }
    }
}

#[test]
fn coverage_is_repeatable_and_front_heavy() {
    let layout = MarkerLayout::reconstructed_deep_site();
    let mut cam = CameraModel::default();
    cam.attenuation_length = 1.5;
    let survey = survey_path(&layout.station, 1.2, 40);
    let poses: Vec<Pose> = survey.iter().map(|(_, p)| *p).collect();
    let a = coverage_map(&poses, &layout, &cam, &[]);
    assert_eq!(a, coverage_map(&poses, &layout, &cam, &[]));
    let mean = |face: Face| {
        let v: Vec<usize> = survey
            .iter()
            .zip(&a)
            .filter(|((f, _), _)| *f == face)
            .map(|(_, c)| *c)
            .collect();
        v.iter().sum::<usize>() as f64 / v.len() as f64
    };
    assert!(mean(Face::Front) > mean(Face::Rear));
    let blind = Occluder::CameraSphere {
        center: [0.0; 3],
        radius: 0.5,
    };
    assert!(coverage_map(&poses, &layout, &cam, &[blind])
        .iter()
        .all(|c| *c == 0));
}

fn marker(t: f64, x: &EkfState15, sigma: f64) -> MeasurementPacket {
    let mut cov = Matrix6::identity() * (sigma * sigma);
    cov[(5, 5)] = sigma * sigma;
    MeasurementPacket::MarkerPose {
        t,
        pose: Pose::from_euler(
            Vector3::new(x[0], x[1], x[2]),
            x[3],
            x[4],
            x[5],
            FrameId::TagStar,
        ),
        covariance: cov,
    }
}

#[test]
fn covariance_stays_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ekf = Ekf::new(
        EkfConfig::default(),
        FrameId::TagStar,
        &Pose::from_xyz_yaw(-3.0, 0.5, 0.4, 0.1, FrameId::TagStar),
        0.0,
    )
    .unwrap();
    let mut t = 0.0;
    let mut ops = 0;
    while ops < 100_000 {
        t += rng.random_range(0.001..0.5);
        let mut truth = ekf.x;
        for i in 0..6 {
            truth[i] += rng.random_range(-0.05..0.05);
        }
        let pkt = match rng.random_range(0..5) {
            0 => marker(t, &truth, rng.random_range(1e-3..0.2)),
            1 => MeasurementPacket::Dvl {
                t,
                velocity: [
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    0.0,
                ],
                sigma: rng.random_range(1e-3..0.05),
            },
            2 => MeasurementPacket::Depth {
                t,
                z: truth[2],
                sigma: rng.random_range(1e-3..0.05),
            },
            3 => MeasurementPacket::Imu {
                t,
                rates: [0.0, 0.0, rng.random_range(-0.2..0.2)],
                accel: [0.0; 3],
                gyro_sigma: 1e-3,
                accel_sigma: 1e-2,
                tilt: Some([0.0, 0.0]),
                tilt_sigma: 1e-2,
                heading: Some(truth[5]),
                heading_sigma: 0.05,
            },
            _ => {
                ekf.predict_to(t).unwrap();
                ops += 1;
                assert!(min_eigenvalue(&ekf.p) > 1e-12);
                continue;
            }
        };
        ekf.process(&pkt).unwrap();
        ops += 2;
        assert!(min_eigenvalue(&ekf.p) > 1e-12, "after {ops} operations");
    }
}

#[test]
fn noiseless_markers_pull_in_a_half_metre_error() {
    let truth = Pose::from_xyz_yaw(-2.0, 0.3, 0.4, 0.2, FrameId::TagStar);
    let start = Pose::new(
        truth.position + Vector3::new(0.3, -0.3, 0.26),
        truth.orientation,
        FrameId::TagStar,
    );
    assert!(((start.position - truth.position).norm() - 0.5).abs() < 0.01);
    let mut ekf = Ekf::new(EkfConfig::default(), FrameId::TagStar, &start, 0.0).unwrap();
    let mut x = EkfState15::zeros();
    x[0] = truth.position.x;
    x[1] = truth.position.y;
    x[2] = truth.position.z;
    x[5] = truth.yaw();
    for k in 1..=50 {
        let t = k as f64 * 0.2;
        ekf.process(&marker(t, &x, 1e-3)).unwrap();
        ekf.process(&MeasurementPacket::Dvl {
            t,
            velocity: [0.0; 3],
            sigma: 1e-3,
        })
        .unwrap();
    }
    assert!((ekf.position() - truth.position).norm() < 0.01);
}
