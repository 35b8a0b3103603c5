//! Line-of-sight blockers: static equipment and passing fish.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{segment_hits_sphere, Aabb, Pose};

/// A volume that blocks the view of any tag behind (or inside) it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Occluder {
    /// Box fixed to the station.
    StationBox(Aabb),
    /// Sphere fixed to the station.
    StationSphere { center: [f64; 3], radius: f64 },
    /// Sphere that moves with the camera (a fish in front of the lens).
    CameraSphere { center: [f64; 3], radius: f64 },
}

impl Occluder {
    /// True if the sight line from `camera_pose` (station frame) to `target`
    /// passes through this volume.
    pub fn blocks(&self, camera_pose: &Pose, target: &Vector3<f64>) -> bool {
        let eye = camera_pose.position;
        match self {
            Occluder::StationBox(b) => b.segment_interval(&eye, target).is_some(),
            Occluder::StationSphere { center, radius } => {
                segment_hits_sphere(&eye, target, &Vector3::from(*center), *radius)
            }
            Occluder::CameraSphere { center, radius } => {
                let c = camera_pose.transform_point(&Vector3::from(*center));
                segment_hits_sphere(&eye, target, &c, *radius)
            }
        }
    }
}

/// Poisson fish-crossing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FishParams {
    pub enabled: bool,
    /// Mean arrivals per second.
    pub rate: f64,
    /// Event duration range, s.
    pub duration: [f64; 2],
    /// Distance in front of the lens, m.
    pub distance: [f64; 2],
    /// Body radius, m.
    pub radius: [f64; 2],
}

impl Default for FishParams {
    fn default() -> Self {
        Self {
            enabled: false,
            rate: 0.02,
            duration: [1.0, 3.0],
            distance: [0.3, 0.8],
            radius: [0.1, 0.3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FishEvent {
    pub start: f64,
    pub end: f64,
    pub occluder: Occluder,
}

/// Pre-drawn fish events for one trial, sorted by start time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FishSchedule {
    pub events: Vec<FishEvent>,
}

impl FishSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    /// Draws arrivals over `[0, horizon)`. Each fish sits at a random bearing
    /// inside the camera's field of view.
    pub fn generate<R: Rng + ?Sized>(
        params: &FishParams,
        half_fov: (f64, f64),
        horizon: f64,
        rng: &mut R,
    ) -> Self {
        let mut events = Vec::new();
        if !params.enabled || !(params.rate > 0.0) {
            return Self { events };
        }
        let mut t = 0.0;
        loop {
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / params.rate;
            if t >= horizon {
                break;
            }
            let dur = rng.random_range(params.duration[0]..=params.duration[1]);
            let dist = rng.random_range(params.distance[0]..=params.distance[1]);
            let radius = rng.random_range(params.radius[0]..=params.radius[1]);
            let az = rng.random_range(-half_fov.0..=half_fov.0);
            let el = rng.random_range(-half_fov.1..=half_fov.1);
            let center = [dist, dist * az.tan(), dist * el.tan()];
            events.push(FishEvent {
                start: t,
                end: t + dur,
                occluder: Occluder::CameraSphere { center, radius },
            });
        }
        Self { events }
    }

    pub fn active_at(&self, t: f64) -> impl Iterator<Item = &Occluder> + '_ {
        self.events
            .iter()
            .filter(move |e| e.start <= t && t < e.end)
            .map(|e| &e.occluder)
    }
}
