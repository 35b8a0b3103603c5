//! Geometric fiducial-detection model.
//!
//! Detection is decided by geometry alone: the tag centre must be in the
//! frustum, within the range a pinhole camera can resolve its cells (capped by
//! water attenuation), seen at a viewing angle the bit pattern tolerates, and
//! not hidden behind the station walls or an occluder. Camera axes coincide
//! with body axes (x along the optical axis).

use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Matrix6, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{FrameId, Pose};
use crate::layout::{Face, LayoutError, MarkerLayout, StationGeometry, TagSpec};
use crate::sensors::occlusion::Occluder;

/// Camera intrinsics and detection limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraModel {
    pub hfov: f64,
    pub vfov: f64,
    pub width_px: f64,
    /// Pixels each tag cell must span to decode.
    pub min_cell_px: f64,
    /// Extra decode margin per density, indexed `[4x4, 5x5, 6x6, 7x7]`.
    /// Small dictionaries have little Hamming distance to spare and give up
    /// earlier as cells blur.
    pub cell_px_scale: [f64; 4],
    /// Viewing-angle limit per density, rad, indexed as above.
    pub max_view_angles: [f64; 4],
    /// Contrast e-folding length in water, m.
    pub attenuation_length: f64,
    /// Contrast fraction below which a tag is lost.
    pub contrast_threshold: f64,
    /// Extra range factor for tags inside the dark funnel.
    pub interior_range_scale: f64,
    /// Camera position in the body frame, m.
    pub mount: [f64; 3],
}

impl Default for CameraModel {
    fn default() -> Self {
        let deg = PI / 180.0;
        Self {
            hfov: 80.0 * deg,
            vfov: 50.0 * deg,
            width_px: 1920.0,
            min_cell_px: 4.0,
            cell_px_scale: [1.35, 1.0, 1.0, 1.0],
            max_view_angles: [70.0 * deg, 60.0 * deg, 55.0 * deg, 50.0 * deg],
            attenuation_length: 5.0,
            contrast_threshold: 0.05,
            interior_range_scale: 1.0,
            mount: [0.25, 0.0, 0.0],
        }
    }
}

impl CameraModel {
    pub fn focal_px(&self) -> f64 {
        0.5 * self.width_px / (0.5 * self.hfov).tan()
    }

    fn density_index(density: u8) -> usize {
        (density.clamp(4, 7) - 4) as usize
    }

    pub fn max_view_angle(&self, density: u8) -> f64 {
        self.max_view_angles[Self::density_index(density)]
    }

    /// Range beyond which contrast drops under the threshold, m.
    pub fn attenuation_limit(&self) -> f64 {
        self.attenuation_length * (1.0 / self.contrast_threshold).ln()
    }

    pub fn mount_pose(&self) -> Pose {
        let m = self.mount;
        Pose::from_translation(m[0], m[1], m[2], FrameId::Body)
    }

    /// Camera pose from a body pose (same frame as `body`).
    pub fn camera_pose(&self, body: &Pose) -> Pose {
        body.compose(&self.mount_pose())
    }

    pub fn half_fov(&self) -> (f64, f64) {
        (0.5 * self.hfov, 0.5 * self.vfov)
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.hfov > 0.0 && self.hfov < PI && self.vfov > 0.0 && self.vfov < PI) {
            return Err("camera field of view must lie in (0, pi)");
        }
        if !(self.attenuation_length > 0.0) {
            return Err("attenuation length must be positive");
        }
        if !(self.contrast_threshold > 0.0 && self.contrast_threshold < 1.0) {
            return Err("contrast threshold must lie in (0, 1)");
        }
        if !(self.min_cell_px > 0.0 && self.width_px > 0.0) {
            return Err("pixel limits must be positive");
        }
        Ok(())
    }
}

/// `min(pinhole cell-resolution limit, attenuation limit)`.
///
/// The pinhole limit is the range at which one of the `density + 2` cells
/// across the tag (border included) still spans the minimum pixel count.
pub fn max_detection_range(tag: &TagSpec, cam: &CameraModel) -> f64 {
    let cells = f64::from(tag.density) + 2.0;
    let cell_px = cam.min_cell_px * cam.cell_px_scale[CameraModel::density_index(tag.density)];
    let pinhole = (tag.size / cells) * cam.focal_px() / cell_px;
    let mut limit = cam.attenuation_limit();
    if tag.face == Face::FunnelInterior {
        limit *= cam.interior_range_scale;
    }
    pinhole.min(limit).max(0.0)
}

/// Angle between the tag's outward normal and the direction to the camera.
pub fn view_angle(tag: &TagSpec, camera_pos: &Vector3<f64>) -> f64 {
    let to_cam = camera_pos - tag.center();
    let n = to_cam.norm();
    if n == 0.0 {
        return 0.0;
    }
    (tag.normal().dot(&to_cam) / n).clamp(-1.0, 1.0).acos()
}

fn in_frustum(p_cam: &Vector3<f64>, cam: &CameraModel) -> bool {
    p_cam.x > 0.0
        && p_cam.y.abs() <= p_cam.x * (0.5 * cam.hfov).tan()
        && p_cam.z.abs() <= p_cam.x * (0.5 * cam.vfov).tan()
}

/// Interior tags are only seen through the entry opening.
fn through_entry(tag: &TagSpec, eye: &Vector3<f64>, station: &StationGeometry) -> bool {
    if tag.face != Face::FunnelInterior {
        return true;
    }
    let comp = station.compartment();
    if comp.contains(eye) {
        return true;
    }
    let fx = station.front_x();
    let target = tag.center();
    if eye.x >= fx || target.x <= fx {
        return false;
    }
    let s = (fx - eye.x) / (target.x - eye.x);
    let hit = eye + (target - eye) * s;
    hit.y.abs() <= station.entry_half_width
        && hit.z >= station.entry_z[0]
        && hit.z <= station.entry_z[1]
}

/// Visibility predicate. `camera_pose` is in the station frame; `masks` are
/// the layout's static occluders and `occlusions` any transient ones.
pub fn visible(
    tag: &TagSpec,
    camera_pose: &Pose,
    cam: &CameraModel,
    station: &StationGeometry,
    masks: &[Occluder],
    occlusions: &[Occluder],
) -> bool {
    let target = tag.center();
    let p_cam = camera_pose.inverse_transform_point(&target);
    if !in_frustum(&p_cam, cam) {
        return false;
    }
    if p_cam.norm() > max_detection_range(tag, cam) {
        return false;
    }
    if view_angle(tag, &camera_pose.position) > cam.max_view_angle(tag.density) {
        return false;
    }
    if !through_entry(tag, &camera_pose.position, station) {
        return false;
    }
    !masks
        .iter()
        .chain(occlusions.iter())
        .any(|o| o.blocks(camera_pose, &target))
}

/// Detection noise: standard deviations grow linearly with range and
/// inversely with the quality score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionNoise {
    /// Translation sigma per metre of range, m/m.
    pub position_per_m: f64,
    /// Rotation sigma per metre of range, rad/m.
    pub attitude_per_m: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        Self {
            position_per_m: 0.005,
            attitude_per_m: 0.004,
        }
    }
}

impl DetectionNoise {
    pub fn noiseless() -> Self {
        Self {
            position_per_m: 0.0,
            attitude_per_m: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerDetection {
    pub tag_id: u8,
    /// Tag pose in the camera frame.
    pub relative: Pose,
    /// Resolution score in (0, 1].
    pub quality: f64,
    pub position_sigma: f64,
    pub attitude_sigma: f64,
}

impl MarkerDetection {
    pub fn range(&self) -> f64 {
        self.relative.position.norm()
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        z * sigma
    } else {
        0.0
    }
}

/// One detection per visible tag. `camera_pose` is the true camera pose in
/// the station frame.
pub fn detect_markers<R: Rng + ?Sized>(
    camera_pose: &Pose,
    layout: &MarkerLayout,
    cam: &CameraModel,
    occlusions: &[Occluder],
    noise: &DetectionNoise,
    rng: &mut R,
) -> Vec<MarkerDetection> {
    let cam_inv = camera_pose.inverse(FrameId::Camera);
    let mut out = Vec::new();
    for tag in &layout.tags {
        if !visible(
            tag,
            camera_pose,
            cam,
            &layout.station,
            &layout.masks,
            occlusions,
        ) {
            continue;
        }
        let truth = cam_inv.compose(&tag.pose);
        let range = truth.position.norm();
        let quality = (1.0 - range / max_detection_range(tag, cam)).clamp(0.05, 1.0);
        let position_sigma = noise.position_per_m * range / quality;
        let attitude_sigma = noise.attitude_per_m * range / quality;
        let dp = Vector3::new(
            gaussian(rng, position_sigma),
            gaussian(rng, position_sigma),
            gaussian(rng, position_sigma),
        );
        let dr = Vector3::new(
            gaussian(rng, attitude_sigma),
            gaussian(rng, attitude_sigma),
            gaussian(rng, attitude_sigma),
        );
        let relative = Pose::new(
            truth.position + dp,
            truth.orientation * UnitQuaternion::from_scaled_axis(dr),
            FrameId::Camera,
        );
        out.push(MarkerDetection {
            tag_id: tag.id,
            relative,
            quality,
            position_sigma,
            attitude_sigma,
        });
    }
    out
}

/// Vehicle pose in the tag* frame recovered from one detection.
pub fn body_pose_from_detection(
    det: &MarkerDetection,
    layout: &MarkerLayout,
    cam: &CameraModel,
) -> Result<Pose, LayoutError> {
    let tag = layout
        .tag(det.tag_id)
        .ok_or(LayoutError::InconsistentLayout(det.tag_id))?;
    // station <- camera = (station <- tag) (camera <- tag)^-1
    let cam_in_station = tag.pose.compose(&det.relative.inverse(FrameId::Camera));
    let body_in_station = cam_in_station.compose(&cam.mount_pose().inverse(FrameId::Camera));
    Ok(layout.station_to_tag_star(&body_in_station))
}

/// Inverse-variance fusion of single-tag estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPose {
    /// Body pose in the tag* frame.
    pub pose: Pose,
    /// Covariance of `[x, y, z, roll, pitch, yaw]`.
    pub covariance: Matrix6<f64>,
    pub tags_used: usize,
}

/// Variance floor so zero-noise detections still give an invertible
/// covariance.
const VARIANCE_FLOOR: f64 = 1e-12;

pub fn pose_from_detections(
    detections: &[MarkerDetection],
    layout: &MarkerLayout,
    cam: &CameraModel,
) -> Result<Option<FusedPose>, LayoutError> {
    if detections.is_empty() {
        return Ok(None);
    }
    let lever = Vector3::from(cam.mount).norm();
    let mut pos_acc = Vector3::zeros();
    let mut pos_w = 0.0;
    let mut att_w = 0.0;
    let mut q_acc = nalgebra::Vector4::zeros();
    let mut q_ref: Option<nalgebra::Vector4<f64>> = None;
    for det in detections {
        let est = body_pose_from_detection(det, layout, cam)?;
        let r = det.range();
        let var_p = det.position_sigma.powi(2) + ((r + lever) * det.attitude_sigma).powi(2);
        let var_a = det.attitude_sigma.powi(2);
        let wp = 1.0 / var_p.max(VARIANCE_FLOOR);
        let wa = 1.0 / var_a.max(VARIANCE_FLOOR);
        pos_acc += est.position * wp;
        pos_w += wp;
        let mut q = est.orientation.into_inner().coords;
        let reference = *q_ref.get_or_insert(q);
        if q.dot(&reference) < 0.0 {
            q = -q;
        }
        q_acc += q * wa;
        att_w += wa;
    }
    let position = pos_acc / pos_w;
    let orientation = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q_acc / att_w));
    let mut covariance = Matrix6::zeros();
    for i in 0..3 {
        covariance[(i, i)] = 1.0 / pos_w;
        covariance[(i + 3, i + 3)] = 1.0 / att_w;
    }
    Ok(Some(FusedPose {
        pose: Pose::new(position, orientation, FrameId::TagStar),
        covariance,
        tags_used: detections.len(),
    }))
}
