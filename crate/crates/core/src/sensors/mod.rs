//! Measurement models. Every draw comes from the trial's generator, so equal
//! seeds give equal measurement streams.

pub mod camera;
pub mod nav;
pub mod occlusion;
pub mod usbl;

pub use camera::{
    detect_markers, max_detection_range, pose_from_detections, visible, CameraModel,
    DetectionNoise, FusedPose, MarkerDetection,
};
pub use nav::{CompassDrift, DepthMeasurement, DvlMeasurement, ImuMeasurement, NavNoise};
pub use occlusion::{FishEvent, FishParams, FishSchedule, Occluder};
pub use usbl::{sample_usbl, UsblFix, UsblParams};

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        z * sigma
    } else {
        0.0
    }
}
