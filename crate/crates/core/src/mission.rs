//! Mission phases, transition rules and the closed-loop trial runner.

use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Matrix6, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{nees_subset, Ekf, EkfError, EkfState15, MeasurementPacket, ATT, POS, VEL};
use crate::geometry::{wrap_angle, FrameId, FrameMismatch, Pose};
use crate::guidance::{
    build_inspection, build_loops, leg_reference, select_initial_waypoint, waypoint_reached,
    Controller, GuidanceError, PathKind, Waypoint, WaypointPath, FUNNEL_LEAD,
};
use crate::layout::{Face, LayoutError};
use crate::scenario::{PhaseEvent, ScenarioConfig, TrialMode, TrialResult};
use crate::sensors::camera::{detect_markers, pose_from_detections, FusedPose};
use crate::sensors::gaussian;
use crate::sensors::nav::{sample_depth, sample_dvl, sample_imu, CompassDrift};
use crate::sensors::occlusion::{FishSchedule, Occluder};
use crate::sensors::usbl::sample_usbl;
use crate::vehicle::{step, LatchEvent, LatchState, ThrustCommand, VehicleError, VehicleState};

/// Version stamped into every log header.
pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Hold time at the dock before an inspection undock, s.
const DOCKED_HOLD: f64 = 2.0;
/// Depth band counted as having reached the docking depth, m.
const DEPTH_TOLERANCE: f64 = 0.05;
/// Marker pose variance floor, m² and rad².
const MARKER_VARIANCE_FLOOR: f64 = 1e-6;
/// Sensor sigma floor so zero-noise profiles keep a proper likelihood.
const SIGMA_FLOOR: f64 = 1e-3;
/// Observed docking-filter sub-state used for NEES: position, attitude, body velocity.
pub const NEES_INDICES: [usize; 9] = [0, 1, 2, 3, 4, 5, 6, 7, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MissionPhase {
    SurfaceTransit,
    AcousticHoming,
    Descent,
    VisualDocking,
    Latched,
    Undock,
    Inspection,
    Abort,
}

impl MissionPhase {
    /// Edges of the transition graph. VISUAL_DOCKING may re-enter itself
    /// for a re-attempt; ABORT is reachable from everywhere else and leads
    /// nowhere.
    pub fn can_transition(self, to: MissionPhase) -> bool {
        use MissionPhase::*;
        if self == Abort {
            return false;
        }
        if to == Abort {
            return true;
        }
        matches!(
            (self, to),
            (SurfaceTransit, AcousticHoming)
                | (AcousticHoming, Descent)
                | (Descent, VisualDocking)
                | (VisualDocking, Latched)
                | (VisualDocking, VisualDocking)
                | (Latched, Undock)
                | (Undock, Inspection)
                | (Inspection, VisualDocking)
        )
    }
}

/// Validates an externally forced transition.
pub fn force_transition(
    from: MissionPhase,
    to: MissionPhase,
) -> Result<MissionPhase, MissionError> {
    if from.can_transition(to) {
        Ok(to)
    } else {
        Err(MissionError::IllegalTransition { from, to })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AbortReason {
    MarkerLoss,
    PhaseTimeout,
    DurationCap,
    /// The trial crashed; set by the batch harness.
    Runtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentExit {
    DepthReached,
    MarkerDetected,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MissionError {
    #[error("illegal phase transition {from:?} -> {to:?}")]
    IllegalTransition {
        from: MissionPhase,
        to: MissionPhase,
    },
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Ekf(#[from] EkfError),
    #[error(transparent)]
    Frame(#[from] FrameMismatch),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomingConfig {
    /// Valid fixes needed inside one window to engage homing.
    pub fix_count: usize,
    /// Window length, s. Inclusive.
    pub fix_window: f64,
    pub target_radius: f64,
    /// Offset from the USBL centre, `[north, east]`, m.
    pub offset_ne: [f64; 2],
    /// World depth at which the descent ends, m.
    pub docking_depth: f64,
    pub descent_heading: f64,
    /// Depth held at the surface, m.
    pub surface_depth: f64,
}

impl Default for HomingConfig {
    fn default() -> Self {
        Self {
            fix_count: 3,
            fix_window: 10.0,
            target_radius: 1.0,
            offset_ne: [-1.0, 0.0],
            docking_depth: 89.55,
            descent_heading: 0.0,
            surface_depth: 0.5,
        }
    }
}

impl HomingConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.fix_count == 0 {
            return Err("homing needs at least one fix");
        }
        if !(self.fix_window > 0.0) || !(self.target_radius > 0.0) {
            return Err("homing window and target radius must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbortRules {
    /// Longest tolerated gap between marker detections in VISUAL_DOCKING, s.
    pub marker_loss_timeout: f64,
    /// Longest time in any phase except LATCHED, s.
    pub phase_timeout: f64,
    pub max_reattempts: usize,
}

impl Default for AbortRules {
    fn default() -> Self {
        Self {
            marker_loss_timeout: 10.0,
            phase_timeout: 300.0,
            max_reattempts: 1,
        }
    }
}

impl AbortRules {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.marker_loss_timeout > 0.0 && self.phase_timeout > 0.0) {
            return Err("abort timeouts must be positive");
        }
        Ok(())
    }
}

/// True once `fix_count` valid fixes fall inside one window.
/// `fix_times` must be sorted.
pub fn homing_engaged(fix_times: &[f64], cfg: &HomingConfig) -> bool {
    let n = cfg.fix_count;
    if n == 0 || fix_times.len() < n {
        return false;
    }
    fix_times
        .windows(n)
        .any(|w| w[n - 1] - w[0] <= cfg.fix_window)
}

/// Homing waypoint: the USBL centre plus the configured offset, at the
/// surface, facing the descent heading.
pub fn homing_target(center_ne: [f64; 2], cfg: &HomingConfig) -> Waypoint {
    Waypoint::new(
        [
            center_ne[0] + cfg.offset_ne[0],
            center_ne[1] + cfg.offset_ne[1],
            cfg.surface_depth,
        ],
        cfg.descent_heading,
        cfg.target_radius,
        FrameId::WorldNed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", content = "detail", rename_all = "snake_case")]
pub enum MissionEvent {
    HomingEngaged,
    DescentStarted,
    DockingStarted(DescentExit),
    Reattempt,
    Latched,
    UndockStarted,
    InspectionStarted,
    RedockStarted,
    Aborted(AbortReason),
}

/// Everything the phase logic looks at on one tick.
#[derive(Debug, Clone)]
pub struct TickInput<'a> {
    pub t: f64,
    pub phase_entered: f64,
    pub fix_times: &'a [f64],
    pub markers_detected: bool,
    /// Time of the last marker detection (or of entering the phase).
    pub last_marker: f64,
    /// Navigation estimate in the frame of the active filter.
    pub estimate: Option<Pose>,
    pub homing_target: Option<Waypoint>,
    pub latched: bool,
    pub undock_commanded: bool,
    pub clear_of_funnel: bool,
    pub circuit_complete: bool,
    pub reattempts: usize,
}

/// One step of the phase machine.
pub fn tick(
    phase: MissionPhase,
    input: &TickInput<'_>,
    homing: &HomingConfig,
    rules: &AbortRules,
) -> Result<(MissionPhase, Option<MissionEvent>), MissionError> {
    use MissionPhase::*;
    let stay = Ok((phase, None));
    if phase == Abort {
        return stay;
    }
    let go = |to: MissionPhase, ev: MissionEvent| -> Result<_, MissionError> {
        Ok((force_transition(phase, to)?, Some(ev)))
    };
    if phase != Latched && input.t - input.phase_entered > rules.phase_timeout {
        return go(Abort, MissionEvent::Aborted(AbortReason::PhaseTimeout));
    }
    match phase {
        SurfaceTransit => {
            if homing_engaged(input.fix_times, homing) {
                return go(AcousticHoming, MissionEvent::HomingEngaged);
            }
        }
        AcousticHoming => {
            if let (Some(est), Some(target)) = (&input.estimate, &input.homing_target) {
                if waypoint_reached(est, target)? {
                    return go(Descent, MissionEvent::DescentStarted);
                }
            }
        }
        Descent => {
            if input.markers_detected {
                return go(
                    VisualDocking,
                    MissionEvent::DockingStarted(DescentExit::MarkerDetected),
                );
            }
            if let Some(est) = &input.estimate {
                if est.position.z >= homing.docking_depth - DEPTH_TOLERANCE {
                    return go(
                        VisualDocking,
                        MissionEvent::DockingStarted(DescentExit::DepthReached),
                    );
                }
            }
        }
        VisualDocking => {
            if input.latched {
                return go(Latched, MissionEvent::Latched);
            }
            if input.t - input.last_marker > rules.marker_loss_timeout {
                if input.reattempts < rules.max_reattempts {
                    return go(VisualDocking, MissionEvent::Reattempt);
                }
                return go(Abort, MissionEvent::Aborted(AbortReason::MarkerLoss));
            }
        }
        Latched => {
            if input.undock_commanded {
                return go(Undock, MissionEvent::UndockStarted);
            }
        }
        Undock => {
            if input.clear_of_funnel {
                return go(Inspection, MissionEvent::InspectionStarted);
            }
        }
        Inspection => {
            if input.circuit_complete {
                return go(VisualDocking, MissionEvent::RedockStarted);
            }
        }
        Abort => {}
    }
    stay
}

/// `[x, y, z, yaw]` of a pose.
fn xyzy(p: &Pose) -> [f64; 4] {
    [p.position.x, p.position.y, p.position.z, p.yaw()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavSample {
    pub frame: FrameId,
    pub truth: [f64; 4],
    pub estimate: [f64; 4],
    pub position_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub phase: MissionPhase,
    /// World `[north, east, down, yaw]`.
    pub truth: [f64; 4],
    pub nav: Option<NavSample>,
    pub detections: usize,
    /// `[surge, sway, heave, yaw]`.
    pub command: [f64; 4],
}

/// One line of the trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        schema_version: u32,
        seed: u64,
        config: ScenarioConfig,
    },
    Phase {
        t: f64,
        from: Option<MissionPhase>,
        to: MissionPhase,
        event: Option<MissionEvent>,
    },
    Waypoint {
        t: f64,
        path: PathKind,
        index: usize,
        waypoint: Waypoint,
    },
    Step(StepRecord),
    Measurement {
        t: f64,
        filter: FrameId,
        packet: MeasurementPacket,
    },
    Result(TrialResult),
}

impl LogRecord {
    pub fn t(&self) -> Option<f64> {
        match self {
            LogRecord::Phase { t, .. }
            | LogRecord::Waypoint { t, .. }
            | LogRecord::Measurement { t, .. } => Some(*t),
            LogRecord::Step(s) => Some(s.t),
            LogRecord::Header { .. } | LogRecord::Result(_) => None,
        }
    }
}

fn steps_per(period: f64, dt: f64) -> usize {
    let k = (period / dt).round();
    if k < 1.0 {
        1
    } else {
        k as usize
    }
}

struct ActivePath {
    path: WaypointPath,
    idx: usize,
    /// Previous waypoint once the first one has been passed.
    leg_start: Option<Waypoint>,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    seed: u64,
    rng: ChaCha8Rng,
    fish: FishSchedule,
    station: Pose,
    station_inv: Pose,
    /// World depth of the tag* origin.
    nav_depth_offset: f64,
    /// World yaw of the tag* x axis.
    nav_yaw_offset: f64,
    truth: VehicleState,
    accel: [f64; 3],
    latch: LatchState,
    compass: CompassDrift,
    phase: MissionPhase,
    phase_entered: f64,
    timeline: Vec<PhaseEvent>,
    homing_ekf: Option<Ekf>,
    dock_ekf: Option<Ekf>,
    fix_times: Vec<f64>,
    homing_wp: Waypoint,
    loops: (WaypointPath, WaypointPath),
    circuits: (WaypointPath, WaypointPath),
    active: Option<ActivePath>,
    controller: Controller,
    last_marker: f64,
    markers_now: bool,
    last_fused: Option<FusedPose>,
    detections_now: usize,
    reattempts: usize,
    redocks: usize,
    circuits_done: usize,
    circuit_complete: bool,
    waypoints_reached: usize,
    inspection_durations: Vec<f64>,
    faces: [bool; 5],
    docking_start: Option<f64>,
    docking_duration: Option<f64>,
    descent_exit: Option<DescentExit>,
    descent_env: Option<[f64; 2]>,
    abort_reason: Option<AbortReason>,
    nees_sum: f64,
    nees_n: usize,
    max_detections: usize,
    steps: usize,
    every: [usize; 4],
    done: bool,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, seed: u64) -> Result<Self, MissionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fish_rng = ChaCha8Rng::seed_from_u64(seed);
        fish_rng.set_stream(1);
        let fish = FishSchedule::generate(
            &cfg.fish,
            cfg.camera.half_fov(),
            cfg.duration_cap,
            &mut fish_rng,
        );
        let layout = &cfg.layout;
        let station = cfg.station_pose();
        let station_inv = station.inverse(FrameId::Station);
        let tag_star = layout.tag_star_pose();
        let nav_depth_offset = station.position.z + tag_star.position.z;
        let nav_yaw_offset = wrap_angle(station.yaw() + tag_star.yaw());
        let dock = layout.station.dock_pose();
        let loops = build_loops(layout, cfg.stand_off)?;
        let circuits = build_inspection(layout, cfg.inspection_stand_off);
        let origin = cfg.current.station_origin;
        let homing_wp = homing_target([origin[0], origin[1]], &cfg.homing);

        let (truth, phase, latched) = match cfg.mode {
            TrialMode::FullMission => {
                let s = cfg.surface_start;
                let yaw = (origin[1] - s[1]).atan2(origin[0] - s[0]);
                (
                    VehicleState::at_rest([s[0], s[1], cfg.homing.surface_depth], yaw),
                    MissionPhase::SurfaceTransit,
                    false,
                )
            }
            TrialMode::Docking => {
                let a = cfg.approach_start();
                let w = station.compose(&Pose::from_xyz_yaw(
                    a[0],
                    a[1],
                    a[2],
                    a[3],
                    FrameId::Station,
                ));
                (
                    VehicleState::at_rest([w.position.x, w.position.y, w.position.z], w.yaw()),
                    MissionPhase::VisualDocking,
                    false,
                )
            }
            TrialMode::Inspection => {
                let w = station.compose(&dock);
                (
                    VehicleState::at_rest([w.position.x, w.position.y, w.position.z], w.yaw()),
                    MissionPhase::Latched,
                    true,
                )
            }
        };
        let mut latch = LatchState::new(cfg.latch.clone(), dock);
        latch.latched = latched;

        let mut sim = Sim {
            cfg,
            seed,
            rng: {
                rng.set_stream(0);
                rng
            },
            fish,
            station,
            station_inv,
            nav_depth_offset,
            nav_yaw_offset,
            truth,
            accel: [0.0; 3],
            latch,
            compass: CompassDrift::default(),
            phase,
            phase_entered: 0.0,
            timeline: alloc::vec![PhaseEvent { t: 0.0, phase }],
            homing_ekf: None,
            dock_ekf: None,
            fix_times: Vec::new(),
            homing_wp,
            loops,
            circuits,
            active: None,
            controller: Controller::default(),
            last_marker: 0.0,
            markers_now: false,
            last_fused: None,
            detections_now: 0,
            reattempts: 0,
            redocks: 0,
            circuits_done: 0,
            circuit_complete: false,
            waypoints_reached: 0,
            inspection_durations: Vec::new(),
            faces: [false; 5],
            docking_start: None,
            docking_duration: None,
            descent_exit: None,
            descent_env: None,
            abort_reason: None,
            nees_sum: 0.0,
            nees_n: 0,
            max_detections: 0,
            steps: 0,
            every: [
                steps_per(1.0 / cfg.rates.camera_hz, cfg.dt),
                steps_per(1.0 / cfg.rates.dvl_hz, cfg.dt),
                steps_per(1.0 / cfg.rates.depth_hz, cfg.dt),
                steps_per(cfg.usbl.ping_period, cfg.dt),
            ],
            done: false,
        };
        match cfg.mode {
            TrialMode::FullMission => {
                let pose = sim.perturbed(&sim.truth.pose());
                sim.homing_ekf = Some(Ekf::new(cfg.ekf.clone(), FrameId::WorldNed, &pose, 0.0)?);
            }
            TrialMode::Docking => {
                let pose = sim.perturbed(&sim.truth_nav());
                sim.dock_ekf = Some(Ekf::new(cfg.ekf.clone(), FrameId::TagStar, &pose, 0.0)?);
            }
            TrialMode::Inspection => {
                // Docked, so the pose is known from the latch geometry.
                let mut ekf = Ekf::new(cfg.ekf.clone(), FrameId::TagStar, &sim.truth_nav(), 0.0)?;
                for i in 0..6 {
                    ekf.p[(i, i)] = 1e-4;
                }
                sim.dock_ekf = Some(ekf);
            }
        }
        Ok(sim)
    }

    /// Initial estimate error drawn from the configured initial sigmas.
    fn perturbed(&mut self, p: &Pose) -> Pose {
        if !self.cfg.perturb_initial_estimate {
            return *p;
        }
        let s = self.cfg.ekf.initial_sigma;
        let d = Vector3::new(
            gaussian(&mut self.rng, s[0]),
            gaussian(&mut self.rng, s[0]),
            gaussian(&mut self.rng, s[0]),
        );
        let dyaw = gaussian(&mut self.rng, s[1]);
        Pose::from_xyz_yaw(
            p.position.x + d.x,
            p.position.y + d.y,
            p.position.z + d.z,
            p.yaw() + dyaw,
            p.frame,
        )
    }

    fn truth_station(&self) -> Pose {
        self.station_inv.compose(&self.truth.pose())
    }

    fn truth_nav(&self) -> Pose {
        self.cfg.layout.station_to_tag_star(&self.truth_station())
    }

    fn truth_nav_state(&self) -> EkfState15 {
        let p = self.truth_nav();
        let mut x = EkfState15::zeros();
        x[POS] = p.position.x;
        x[POS + 1] = p.position.y;
        x[POS + 2] = p.position.z;
        let (r, pi, y) = p.euler();
        x[ATT] = r;
        x[ATT + 1] = pi;
        x[ATT + 2] = y;
        let v = self.truth.velocity;
        x[VEL] = v.u;
        x[VEL + 1] = v.v;
        x[VEL + 2] = v.w;
        x
    }

    fn t(&self) -> f64 {
        self.truth.t
    }

    fn due(&self, k: usize) -> bool {
        self.steps.is_multiple_of(self.every[k])
    }

    fn feed(
        ekf: &mut Option<Ekf>,
        packet: MeasurementPacket,
        log: bool,
        sink: &mut dyn FnMut(LogRecord),
    ) -> Result<(), MissionError> {
        if let Some(f) = ekf {
            f.process(&packet)?;
            if log {
                sink(LogRecord::Measurement {
                    t: packet.t(),
                    filter: f.frame,
                    packet,
                });
            }
        }
        Ok(())
    }

    fn sense(&mut self, sink: &mut dyn FnMut(LogRecord)) -> Result<(), MissionError> {
        let cfg = self.cfg;
        let t = self.t();
        let log = cfg.log_measurements;
        let noise = &cfg.nav_noise;
        self.compass.advance(noise, cfg.dt, &mut self.rng);

        let homing_active = matches!(
            self.phase,
            MissionPhase::SurfaceTransit | MissionPhase::AcousticHoming | MissionPhase::Descent
        );
        if !homing_active {
            self.homing_ekf = None;
        }

        if homing_active && self.due(3) {
            let origin = cfg.current.station_origin;
            if let Some(fix) = sample_usbl(self.truth.position, origin, &cfg.usbl, t, &mut self.rng)
            {
                self.fix_times.push(t);
                let packet = MeasurementPacket::UsblPosition {
                    t,
                    north: origin[0] + fix.north,
                    east: origin[1] + fix.east,
                    sigma: cfg.usbl.sigma.max(SIGMA_FLOOR),
                };
                Self::feed(&mut self.homing_ekf, packet, log, sink)?;
            }
        }

        self.markers_now = false;
        self.last_fused = None;
        self.detections_now = 0;
        if self.due(0) {
            let cam_pose = cfg.camera.camera_pose(&self.truth_station());
            let mut occ: Vec<Occluder> = self.fish.active_at(t).copied().collect();
            occ.extend(
                cfg.occlusions
                    .iter()
                    .filter(|w| w.start <= t && t < w.end)
                    .map(|w| w.occluder),
            );
            let dets = detect_markers(
                &cam_pose,
                &cfg.layout,
                &cfg.camera,
                &occ,
                &cfg.detection_noise,
                &mut self.rng,
            );
            self.detections_now = dets.len();
            self.max_detections = self.max_detections.max(dets.len());
            for d in &dets {
                if let Some(tag) = cfg.layout.tag(d.tag_id) {
                    if let Some(i) = Face::ALL.iter().position(|f| *f == tag.face) {
                        self.faces[i] = true;
                    }
                }
            }
            if !dets.is_empty() {
                self.markers_now = true;
                self.last_marker = t;
                if let Some(fused) = pose_from_detections(&dets, &cfg.layout, &cfg.camera)? {
                    let mut cov: Matrix6<f64> = fused.covariance;
                    for i in 0..6 {
                        cov[(i, i)] = cov[(i, i)].max(MARKER_VARIANCE_FLOOR);
                    }
                    let packet = MeasurementPacket::MarkerPose {
                        t,
                        pose: fused.pose,
                        covariance: cov,
                    };
                    Self::feed(&mut self.dock_ekf, packet, log, sink)?;
                    self.last_fused = Some(fused);
                }
            }
        }

        if self.due(1) {
            let m = sample_dvl(&self.truth, noise, &mut self.rng);
            let sigma = noise.dvl.max(SIGMA_FLOOR);
            let packet = MeasurementPacket::Dvl {
                t,
                velocity: m.velocity,
                sigma,
            };
            Self::feed(&mut self.homing_ekf, packet.clone(), log, sink)?;
            Self::feed(&mut self.dock_ekf, packet, log, sink)?;
        }
        if self.due(2) {
            let m = sample_depth(&self.truth, noise, &mut self.rng);
            let sigma = noise.depth.max(SIGMA_FLOOR);
            Self::feed(
                &mut self.homing_ekf,
                MeasurementPacket::Depth { t, z: m.z, sigma },
                log,
                sink,
            )?;
            Self::feed(
                &mut self.dock_ekf,
                MeasurementPacket::Depth {
                    t,
                    z: m.z - self.nav_depth_offset,
                    sigma,
                },
                log,
                sink,
            )?;
        }
        let imu = sample_imu(
            &self.truth,
            self.accel,
            &self.compass,
            true,
            noise,
            &mut self.rng,
        );
        let imu_packet = |heading: Option<f64>| MeasurementPacket::Imu {
            t,
            rates: imu.rates,
            accel: imu.accel,
            gyro_sigma: noise.gyro.max(SIGMA_FLOOR),
            accel_sigma: noise.accel.max(SIGMA_FLOOR),
            tilt: imu.tilt,
            tilt_sigma: noise.tilt.max(SIGMA_FLOOR),
            heading,
            heading_sigma: noise.compass.max(SIGMA_FLOOR),
        };
        Self::feed(&mut self.homing_ekf, imu_packet(imu.heading), log, sink)?;
        let nav_heading = imu.heading.map(|h| wrap_angle(h - self.nav_yaw_offset));
        Self::feed(&mut self.dock_ekf, imu_packet(nav_heading), log, sink)?;
        Ok(())
    }

    fn estimate(&self) -> Option<Pose> {
        match self.phase {
            MissionPhase::SurfaceTransit | MissionPhase::AcousticHoming | MissionPhase::Descent => {
                self.homing_ekf.as_ref().map(|e| e.pose())
            }
            _ => self.dock_ekf.as_ref().map(|e| e.pose()),
        }
    }

    fn estimate_station(&self) -> Option<Pose> {
        self.dock_ekf
            .as_ref()
            .map(|e| self.cfg.layout.tag_star_to_station(&e.pose()))
    }

    fn enter(
        &mut self,
        to: MissionPhase,
        event: MissionEvent,
        sink: &mut dyn FnMut(LogRecord),
    ) -> Result<(), MissionError> {
        let t = self.t();
        let from = self.phase;
        self.phase = to;
        self.phase_entered = t;
        self.timeline.push(PhaseEvent { t, phase: to });
        self.controller.reset();
        sink(LogRecord::Phase {
            t,
            from: Some(from),
            to,
            event: Some(event),
        });
        match event {
            MissionEvent::DockingStarted(exit) => {
                self.descent_exit = Some(exit);
                self.start_docking_filter()?;
                self.begin_docking(false);
            }
            MissionEvent::Reattempt => {
                self.reattempts += 1;
                self.begin_docking(true);
            }
            MissionEvent::RedockStarted => self.begin_docking(false),
            MissionEvent::Latched => {
                if self.docking_duration.is_none() {
                    self.docking_duration = self.docking_start.map(|s| t - s);
                }
                if self.cfg.mode == TrialMode::Inspection {
                    self.redocks += 1;
                }
                self.active = None;
            }
            MissionEvent::UndockStarted => self.active = None,
            MissionEvent::InspectionStarted => {
                let path = if self.circuits_done == 0 {
                    self.circuits.0.clone()
                } else {
                    self.circuits.1.clone()
                };
                self.active = Some(ActivePath {
                    path,
                    idx: 0,
                    leg_start: None,
                });
                self.circuit_complete = false;
            }
            MissionEvent::Aborted(r) => {
                self.abort_reason = Some(r);
                self.active = None;
            }
            MissionEvent::HomingEngaged | MissionEvent::DescentStarted => {}
        }
        Ok(())
    }

    /// Hands navigation from the homing filter to a tag*-frame filter.
    fn start_docking_filter(&mut self) -> Result<(), MissionError> {
        let t = self.t();
        let cfg = self.cfg;
        let (pose, vel) = match (&self.last_fused, &self.homing_ekf) {
            (Some(f), h) => (f.pose, h.as_ref().map(|e| e.body_velocity())),
            (None, Some(h)) => {
                let st = self.station_inv.compose(&h.pose());
                (cfg.layout.station_to_tag_star(&st), Some(h.body_velocity()))
            }
            (None, None) => (self.perturbed(&self.truth_nav()), None),
        };
        let mut ekf = Ekf::new(cfg.ekf.clone(), FrameId::TagStar, &pose, t)?;
        if let Some(v) = vel {
            for i in 0..3 {
                ekf.x[VEL + i] = v[i];
            }
        }
        self.dock_ekf = Some(ekf);
        self.homing_ekf = None;
        Ok(())
    }

    fn begin_docking(&mut self, restart: bool) {
        let t = self.t();
        self.last_marker = t;
        if self.docking_start.is_none() {
            self.docking_start = Some(t);
        }
        let Some(est) = self.estimate() else {
            return;
        };
        let (left, right) = &self.loops;
        let (path, idx) = if restart {
            let dl = (est.position - left.waypoints[0].pos()).norm();
            let dr = (est.position - right.waypoints[0].pos()).norm();
            if dl < dr {
                (left, 0)
            } else {
                (right, 0)
            }
        } else {
            select_initial_waypoint(&est, left, right)
        };
        self.active = Some(ActivePath {
            path: path.clone(),
            idx,
            leg_start: None,
        });
    }

    fn advance_waypoints(&mut self, sink: &mut dyn FnMut(LogRecord)) -> Result<(), MissionError> {
        let Some(est) = self.estimate() else {
            return Ok(());
        };
        let t = self.t();
        if let Some(a) = &mut self.active {
            while a.idx < a.path.waypoints.len() {
                let wp = a.path.waypoints[a.idx];
                if !waypoint_reached(&est, &wp)? {
                    break;
                }
                sink(LogRecord::Waypoint {
                    t,
                    path: a.path.kind,
                    index: a.idx,
                    waypoint: wp,
                });
                self.waypoints_reached += 1;
                a.leg_start = Some(wp);
                a.idx += 1;
                if self.phase == MissionPhase::Inspection && a.idx == a.path.waypoints.len() {
                    self.circuit_complete = true;
                }
            }
        }
        Ok(())
    }

    fn mission_tick(&mut self, sink: &mut dyn FnMut(LogRecord)) -> Result<(), MissionError> {
        let cfg = self.cfg;
        let t = self.t();
        let undock_commanded = cfg.mode == TrialMode::Inspection
            && self.phase == MissionPhase::Latched
            && self.circuits_done < 2
            && t - self.phase_entered >= DOCKED_HOLD;
        let clear_of_funnel = self.phase == MissionPhase::Undock
            && !self.latch.latched
            && self
                .estimate_station()
                .is_some_and(|p| p.position.x <= cfg.layout.station.front_x() - FUNNEL_LEAD);
        let input = TickInput {
            t,
            phase_entered: self.phase_entered,
            fix_times: &self.fix_times,
            markers_detected: self.markers_now,
            last_marker: self.last_marker,
            estimate: self.estimate(),
            homing_target: Some(self.homing_wp),
            latched: self.latch.latched,
            undock_commanded,
            clear_of_funnel,
            circuit_complete: self.circuit_complete,
            reattempts: self.reattempts,
        };
        let (next, event) = tick(self.phase, &input, &cfg.homing, &cfg.abort)?;
        if let Some(ev) = event {
            if ev == MissionEvent::RedockStarted {
                self.inspection_durations.push(t - self.phase_entered);
                self.circuits_done += 1;
            }
            self.enter(next, ev, sink)?;
        }
        Ok(())
    }

    fn command(&mut self) -> Result<ThrustCommand, MissionError> {
        let cfg = self.cfg;
        let dt = cfg.dt;
        let g = &cfg.layout.station;
        let cmd = match self.phase {
            MissionPhase::SurfaceTransit | MissionPhase::AcousticHoming => {
                let ekf = self.homing_ekf.as_ref().expect("homing filter active");
                self.controller.control(
                    &ekf.x,
                    ekf.frame,
                    &self.homing_wp,
                    &cfg.transit_gains,
                    dt,
                )?
            }
            MissionPhase::Descent => {
                let ekf = self.homing_ekf.as_ref().expect("homing filter active");
                let mut wp = self.homing_wp;
                wp.position[2] = cfg.homing.docking_depth;
                self.controller
                    .control(&ekf.x, ekf.frame, &wp, &cfg.descent_gains, dt)?
            }
            MissionPhase::VisualDocking | MissionPhase::Inspection => {
                let ekf = self.dock_ekf.as_ref().expect("docking filter active");
                let gains = if self.phase == MissionPhase::Inspection {
                    &cfg.inspection_gains
                } else {
                    &cfg.docking_gains
                };
                match &self.active {
                    Some(a) => {
                        let last = a.path.waypoints.len() - 1;
                        let mut wp = a.path.waypoints[a.idx.min(last)];
                        if let (Some(from), true) = (&a.leg_start, a.idx <= last) {
                            wp = leg_reference(from, &wp, &ekf.position());
                        }
                        self.controller.control(&ekf.x, ekf.frame, &wp, gains, dt)?
                    }
                    None => ThrustCommand::default(),
                }
            }
            MissionPhase::Latched => ThrustCommand::default(),
            MissionPhase::Undock => {
                if self.latch.latched {
                    ThrustCommand {
                        surge: -cfg.vehicle.max_thrust[0],
                        ..ThrustCommand::default()
                    }
                } else {
                    let ekf = self.dock_ekf.as_ref().expect("docking filter active");
                    let back = Pose::from_xyz_yaw(
                        g.front_x() - FUNNEL_LEAD - 0.25,
                        0.0,
                        g.lane_z(),
                        g.dock_heading,
                        FrameId::Station,
                    );
                    let p = cfg.layout.station_to_tag_star(&back);
                    let wp = Waypoint::new(
                        [p.position.x, p.position.y, p.position.z],
                        p.yaw(),
                        0.1,
                        FrameId::TagStar,
                    );
                    self.controller
                        .control(&ekf.x, ekf.frame, &wp, &cfg.docking_gains, dt)?
                }
            }
            MissionPhase::Abort => ThrustCommand::default(),
        };
        Ok(cmd)
    }

    fn record_step(&mut self, cmd: &ThrustCommand, sink: &mut dyn FnMut(LogRecord)) {
        if !self.steps.is_multiple_of(self.cfg.log_stride) {
            return;
        }
        let nav = match self.estimate() {
            Some(est) => {
                let (truth, sigma) = if est.frame == FrameId::TagStar {
                    (
                        self.truth_nav(),
                        self.dock_ekf.as_ref().map_or(0.0, |e| e.position_sigma()),
                    )
                } else {
                    (
                        self.truth.pose(),
                        self.homing_ekf.as_ref().map_or(0.0, |e| e.position_sigma()),
                    )
                };
                Some(NavSample {
                    frame: est.frame,
                    truth: xyzy(&truth),
                    estimate: xyzy(&est),
                    position_sigma: sigma,
                })
            }
            None => None,
        };
        sink(LogRecord::Step(StepRecord {
            t: self.t(),
            phase: self.phase,
            truth: xyzy(&self.truth.pose()),
            nav,
            detections: self.detections_now,
            command: [cmd.surge, cmd.sway, cmd.heave, cmd.yaw],
        }));
    }

    fn bookkeeping(&mut self) {
        if self.phase == MissionPhase::Descent {
            let Some(est) = self.homing_ekf.as_ref().map(|e| e.pose()) else {
                return;
            };
            let p = est.position;
            let off = (p[0] - self.homing_wp.position[0]).hypot(p[1] - self.homing_wp.position[1]);
            let herr = wrap_angle(est.yaw() - self.cfg.homing.descent_heading).abs();
            let env = self.descent_env.get_or_insert([0.0, 0.0]);
            env[0] = env[0].max(off);
            env[1] = env[1].max(herr);
        }
        if self.phase == MissionPhase::VisualDocking {
            if let Some(e) = &self.dock_ekf {
                let truth = self.truth_nav_state();
                let v = nees_subset(&e.x, &e.p, &truth, &NEES_INDICES);
                if v.is_finite() {
                    self.nees_sum += v;
                    self.nees_n += 1;
                }
            }
        }
    }

    fn finished(&self) -> bool {
        match self.phase {
            MissionPhase::Abort => true,
            MissionPhase::Latched => match self.cfg.mode {
                TrialMode::FullMission | TrialMode::Docking => true,
                TrialMode::Inspection => self.circuits_done >= 2,
            },
            _ => false,
        }
    }

    fn step(&mut self, sink: &mut dyn FnMut(LogRecord)) -> Result<(), MissionError> {
        let cfg = self.cfg;
        if self.t() >= cfg.duration_cap - 1e-9 {
            let ev = MissionEvent::Aborted(AbortReason::DurationCap);
            self.enter(MissionPhase::Abort, ev, sink)?;
            self.done = true;
            return Ok(());
        }
        self.sense(sink)?;
        if self.steps == 0 && self.phase == MissionPhase::VisualDocking {
            // The first waypoint is chosen after the first camera frame.
            self.begin_docking(false);
        }
        self.mission_tick(sink)?;
        self.advance_waypoints(sink)?;
        if self.finished() {
            self.done = true;
            self.record_step(&ThrustCommand::default(), sink);
            return Ok(());
        }
        let cmd = self.command()?.saturate(&cfg.vehicle);
        self.bookkeeping();
        self.record_step(&cmd, sink);

        let station_pose = self.truth_station();
        if self.latch.latched || self.phase == MissionPhase::VisualDocking {
            if self.latch.update(&station_pose, &cmd)? == LatchEvent::Captured {
                // The magnets pull the vehicle onto the dock point.
                let d = self.station.compose(&self.latch.dock);
                self.truth.position = [d.position.x, d.position.y, d.position.z];
                self.truth.yaw = d.yaw();
            }
        }
        let prev = self.truth.velocity;
        if self.latch.latched {
            let mut s = self.truth;
            s.t += cfg.dt;
            s.velocity = Default::default();
            self.truth = s;
        } else {
            self.truth = step(&cfg.vehicle, &self.truth, &cmd, &cfg.current, cfg.dt)?;
        }
        self.steps += 1;
        self.truth.t = self.steps as f64 * cfg.dt;
        let v = self.truth.velocity;
        self.accel = [
            (v.u - prev.u) / cfg.dt,
            (v.v - prev.v) / cfg.dt,
            (v.w - prev.w) / cfg.dt,
        ];
        Ok(())
    }

    fn result(&self) -> TrialResult {
        let cfg = self.cfg;
        let latched = self.latch.latched && self.abort_reason.is_none();
        let success = match cfg.mode {
            TrialMode::Inspection => latched && self.redocks >= 2,
            _ => latched,
        };
        let dock = Vector3::from(cfg.layout.station.dock_point);
        let final_pose_error = (self.truth_station().position - dock).norm();
        TrialResult {
            seed: self.seed,
            approach: cfg.approach,
            mode: cfg.mode,
            success,
            docking_duration: if success { self.docking_duration } else { None },
            abort_reason: if success {
                None
            } else {
                Some(self.abort_reason.unwrap_or(AbortReason::DurationCap))
            },
            phase_timeline: self.timeline.clone(),
            final_pose_error,
            waypoints_reached: self.waypoints_reached,
            reattempts: self.reattempts,
            redocks: self.redocks,
            inspection_durations: self.inspection_durations.clone(),
            faces_observed: Face::ALL
                .iter()
                .zip(self.faces.iter())
                .filter(|(_, seen)| **seen)
                .map(|(f, _)| *f)
                .collect(),
            descent_exit: self.descent_exit,
            descent_envelope: self.descent_env,
            nees_mean: if self.nees_n > 0 {
                Some(self.nees_sum / self.nees_n as f64)
            } else {
                None
            },
            max_detections: self.max_detections,
            sim_time: self.t(),
        }
    }
}

/// Runs one trial, discarding the log.
pub fn run_mission(scenario: &ScenarioConfig, seed: u64) -> Result<TrialResult, MissionError> {
    run_mission_logged(scenario, seed, &mut |_| {})
}

/// Runs one trial at fixed `dt`, passing every log record to `sink` in
/// time order: header, then phase, waypoint, measurement and step records,
/// then the result.
pub fn run_mission_logged(
    scenario: &ScenarioConfig,
    seed: u64,
    sink: &mut dyn FnMut(LogRecord),
) -> Result<TrialResult, MissionError> {
    scenario.validate().map_err(MissionError::Config)?;
    sink(LogRecord::Header {
        schema_version: LOG_SCHEMA_VERSION,
        seed,
        config: scenario.clone(),
    });
    let mut sim = Sim::new(scenario, seed)?;
    sink(LogRecord::Phase {
        t: 0.0,
        from: None,
        to: sim.phase,
        event: None,
    });
    while !sim.done {
        sim.step(sink)?;
    }
    let result = sim.result();
    sink(LogRecord::Result(result.clone()));
    Ok(result)
}

/// True when consecutive timeline entries follow the transition graph and
/// time never runs backwards.
pub fn timeline_is_legal(timeline: &[PhaseEvent]) -> bool {
    timeline
        .windows(2)
        .all(|w| w[1].t >= w[0].t && w[0].phase.can_transition(w[1].phase))
}
