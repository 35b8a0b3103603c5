//! Trial configuration and per-trial outcome record.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::estimation::EkfConfig;
use crate::geometry::{FrameId, Pose};
use crate::guidance::ControllerGains;
use crate::layout::{Face, MarkerLayout};
use crate::mission::{AbortReason, AbortRules, DescentExit, HomingConfig, MissionPhase};
use crate::sensors::camera::{CameraModel, DetectionNoise};
use crate::sensors::nav::NavNoise;
use crate::sensors::occlusion::{FishParams, Occluder};
use crate::sensors::usbl::UsblParams;
use crate::vehicle::{CurrentField, LatchParams, VehicleParams, WaveSurge};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SiteProfile {
    ShallowTbs,
    #[serde(rename = "DEEP_90M")]
    Deep90m,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Front,
    Left,
    Right,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Front, Approach::Left, Approach::Right];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Front => "front",
            Approach::Left => "left",
            Approach::Right => "right",
        }
    }
}

/// Which part of the mission a trial exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    /// Surface transit, homing, descent and visual docking.
    FullMission,
    /// Visual docking from an approach start pose near the station.
    Docking,
    /// Start latched, inspect the right side, redock, inspect the left side,
    /// redock.
    Inspection,
}

/// A transient occluder active over `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionWindow {
    pub start: f64,
    pub end: f64,
    pub occluder: Occluder,
}

impl OcclusionWindow {
    /// Blocks every line of sight for the whole window.
    pub fn blackout(start: f64, end: f64) -> Self {
        Self {
            start,
            end,
            occluder: Occluder::CameraSphere {
                center: [0.0; 3],
                radius: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorRates {
    pub camera_hz: f64,
    pub dvl_hz: f64,
    pub depth_hz: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        Self {
            camera_hz: 5.0,
            dvl_hz: 5.0,
            depth_hz: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub site: SiteProfile,
    pub mode: TrialMode,
    pub approach: Approach,
    pub seed: u64,
    pub dt: f64,
    pub duration_cap: f64,
    pub vehicle: VehicleParams,
    pub latch: LatchParams,
    pub current: CurrentField,
    pub camera: CameraModel,
    pub detection_noise: DetectionNoise,
    pub nav_noise: NavNoise,
    pub usbl: UsblParams,
    pub rates: SensorRates,
    pub ekf: EkfConfig,
    /// Lateral clearance of the docking loops, m.
    pub stand_off: f64,
    pub inspection_stand_off: f64,
    pub transit_gains: ControllerGains,
    pub docking_gains: ControllerGains,
    pub inspection_gains: ControllerGains,
    pub descent_gains: ControllerGains,
    pub homing: HomingConfig,
    pub abort: AbortRules,
    pub fish: FishParams,
    pub occlusions: Vec<OcclusionWindow>,
    /// Overrides the approach start: station-frame `[x, y, z, yaw]`.
    pub start: Option<[f64; 4]>,
    /// Surface start for full missions, world `[north, east]`.
    pub surface_start: [f64; 2],
    /// Write a step record every this many steps.
    pub log_stride: usize,
    pub log_measurements: bool,
    /// Draw the initial filter error from the initial covariance.
    pub perturb_initial_estimate: bool,
    pub layout: MarkerLayout,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::for_profile(SiteProfile::Deep90m)
    }
}

impl ScenarioConfig {
    /// Site defaults. The deep site has no waves, a drifting compass that is
    /// kept out of the filter and no external light, which shortens every
    /// detection range. The shallow pier has clear water, a usable compass
    /// and wave-driven surge.
    pub fn for_profile(site: SiteProfile) -> Self {
        let mut c = Self {
            site,
            mode: TrialMode::Docking,
            approach: Approach::Front,
            seed: 0,
            dt: 0.05,
            duration_cap: 900.0,
            vehicle: VehicleParams::default(),
            latch: LatchParams::default(),
            current: CurrentField::default(),
            camera: CameraModel::default(),
            detection_noise: DetectionNoise::default(),
            nav_noise: NavNoise::default(),
            usbl: UsblParams::default(),
            rates: SensorRates::default(),
            ekf: EkfConfig::default(),
            stand_off: 1.5,
            inspection_stand_off: 1.5,
            transit_gains: ControllerGains::transit(),
            docking_gains: ControllerGains::docking(),
            inspection_gains: ControllerGains::inspection(),
            descent_gains: ControllerGains::descent(),
            homing: HomingConfig::default(),
            abort: AbortRules::default(),
            fish: FishParams::default(),
            occlusions: Vec::new(),
            start: None,
            surface_start: [-30.0, 20.0],
            log_stride: 10,
            log_measurements: false,
            perturb_initial_estimate: true,
            layout: MarkerLayout::reconstructed_deep_site(),
        };
        match site {
            SiteProfile::Deep90m => {
                c.current.steady_ne = [0.03, 0.02];
                c.current.wave = None;
                c.camera.attenuation_length = 1.5;
                c.ekf.compass_enabled = false;
                c.nav_noise.compass_drift = true;
                c.set_station_depth(90.0);
            }
            SiteProfile::ShallowTbs => {
                c.current.steady_ne = [0.05, 0.0];
                c.current.wave = Some(WaveSurge {
                    amplitude: 0.1,
                    period: 7.0,
                    direction: 0.0,
                    decay_depth: 4.0,
                });
                c.camera.attenuation_length = 5.0;
                c.ekf.compass_enabled = true;
                c.nav_noise.compass_drift = false;
                c.set_station_depth(10.0);
            }
        }
        c
    }

    pub fn set_station_depth(&mut self, depth: f64) {
        self.current.station_origin[2] = depth;
        self.usbl.station_depth = depth;
        self.homing.docking_depth = depth + self.layout.station.lane_z();
    }

    pub fn station_depth(&self) -> f64 {
        self.current.station_origin[2]
    }

    /// Every noise source and random disturbance switched off.
    pub fn noiseless(mut self) -> Self {
        self.detection_noise = DetectionNoise::noiseless();
        self.nav_noise = NavNoise::noiseless();
        self.usbl.sigma = 0.0;
        self.usbl.dropout = 0.0;
        self.fish.enabled = false;
        self.current.steady_ne = [0.0, 0.0];
        self.current.wave = None;
        self.perturb_initial_estimate = false;
        self
    }

    pub fn with_mode(mut self, mode: TrialMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_approach(mut self, approach: Approach) -> Self {
        self.approach = approach;
        self
    }

    /// Station pose in the world frame.
    pub fn station_pose(&self) -> Pose {
        let o = self.current.station_origin;
        Pose::from_xyz_yaw(
            o[0],
            o[1],
            o[2],
            self.current.station_yaw,
            FrameId::WorldNed,
        )
    }

    /// Approach start in the station frame `[x, y, z, yaw]`.
    pub fn approach_start(&self) -> [f64; 4] {
        if let Some(s) = self.start {
            return s;
        }
        let g = &self.layout.station;
        let z = g.lane_z();
        let side = g.width / 2.0 + 1.5;
        match self.approach {
            Approach::Front => [g.front_x() - 5.0, 0.3, z, 0.0],
            Approach::Right => [0.0, side, z, -FRAC_PI_2],
            Approach::Left => [0.0, -side, z, FRAC_PI_2],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        use alloc::string::ToString;
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(alloc::format!("dt {} outside (0, 0.1]", self.dt));
        }
        if !(self.duration_cap > 0.0) {
            return Err("duration cap must be positive".to_string());
        }
        if self.log_stride == 0 {
            return Err("log stride must be at least 1".to_string());
        }
        if !(self.rates.camera_hz > 0.0 && self.rates.dvl_hz > 0.0 && self.rates.depth_hz > 0.0) {
            return Err("sensor rates must be positive".to_string());
        }
        self.vehicle.validate().map_err(|e| e.to_string())?;
        self.current.validate().map_err(|e| e.to_string())?;
        self.camera.validate().map_err(|e| e.to_string())?;
        self.usbl.validate().map_err(|e| e.to_string())?;
        self.ekf.validate().map_err(|e| e.to_string())?;
        self.homing.validate().map_err(|e| e.to_string())?;
        self.abort.validate().map_err(|e| e.to_string())?;
        for g in [
            &self.transit_gains,
            &self.docking_gains,
            &self.inspection_gains,
            &self.descent_gains,
        ] {
            g.validate().map_err(|e| e.to_string())?;
        }
        self.layout.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub t: f64,
    pub phase: MissionPhase,
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub approach: Approach,
    pub mode: TrialMode,
    /// Latched before any abort and within the duration cap. Inspection
    /// trials also need every redock to succeed.
    pub success: bool,
    /// First docking start to first latch, s.
    pub docking_duration: Option<f64>,
    pub abort_reason: Option<AbortReason>,
    pub phase_timeline: Vec<PhaseEvent>,
    /// Distance from the dock point at the end of the trial, m.
    pub final_pose_error: f64,
    pub waypoints_reached: usize,
    pub reattempts: usize,
    pub redocks: usize,
    /// Duration of each inspection circuit, s.
    pub inspection_durations: Vec<f64>,
    /// Faces with at least one tag detected during inspection.
    pub faces_observed: Vec<Face>,
    pub descent_exit: Option<DescentExit>,
    /// Largest estimated horizontal offset from the descent target and
    /// largest estimated heading error seen during DESCENT.
    pub descent_envelope: Option<[f64; 2]>,
    /// Mean docking-filter NEES over the pose and velocity states.
    pub nees_mean: Option<f64>,
    pub max_detections: usize,
    pub sim_time: f64,
}
