//! Marker layout registry and the design-study analyses built on it.
//!
//! A layout is the surveyed product: station geometry, every tag's pose in
//! the station frame, the designated tag* and static equipment masks. Tag
//! frames use +x pointing into the mounting surface, so a camera looking
//! straight at a tag has the same orientation as the tag.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, FrameId, Pose};
use crate::sensors::camera::{max_detection_range, view_angle, visible, CameraModel};
use crate::sensors::occlusion::Occluder;

/// Highest tag id in use (the first 21 ids of the 5×5 dictionary).
pub const MAX_TAG_ID: u8 = 20;
/// Tag edge lengths available for printing, m.
pub const SIZE_PALETTE: [f64; 4] = [0.07, 0.15, 0.22, 0.25];
/// Size of the long-range tag required on every outer face, m.
pub const LARGE_TAG: f64 = 0.22;
const SURFACE_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Face {
    Front,
    Left,
    Right,
    Rear,
    FunnelInterior,
}

impl Face {
    pub const OUTER: [Face; 4] = [Face::Front, Face::Left, Face::Right, Face::Rear];
    pub const ALL: [Face; 5] = [
        Face::Front,
        Face::Left,
        Face::Right,
        Face::Rear,
        Face::FunnelInterior,
    ];

    /// Direction a camera must look along to see this face head-on,
    /// station frame.
    pub fn viewing_axis(self) -> Vector3<f64> {
        match self {
            Face::Front | Face::FunnelInterior => Vector3::new(1.0, 0.0, 0.0),
            Face::Rear => Vector3::new(-1.0, 0.0, 0.0),
            Face::Right => Vector3::new(0.0, -1.0, 0.0),
            Face::Left => Vector3::new(0.0, 1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSpec {
    pub id: u8,
    /// Edge length, m.
    pub size: f64,
    /// Bit pattern is `density × density`.
    pub density: u8,
    /// Tag pose in the station frame.
    pub pose: Pose,
    pub face: Face,
}

impl TagSpec {
    pub fn new(id: u8, size: f64, density: u8, pose: Pose, face: Face) -> Self {
        Self {
            id,
            size,
            density,
            pose,
            face,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.position
    }

    /// Outward surface normal, station frame.
    pub fn normal(&self) -> Vector3<f64> {
        -(self.pose.orientation * Vector3::x())
    }
}

/// The station box and its docking compartment.
///
/// Station frame: origin at the box centre, x from the front face towards the
/// rear, y to the right when facing the front, z down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationGeometry {
    /// Extent along x (front to rear), m.
    pub depth: f64,
    /// Extent along y, m.
    pub width: f64,
    /// Extent along z, m.
    pub height: f64,
    /// Half-width of the entry opening in the front face, m.
    pub entry_half_width: f64,
    /// z range `[top, bottom]` of the entry opening.
    pub entry_z: [f64; 2],
    /// x of the compartment back wall.
    pub compartment_back: f64,
    /// Latch point, station frame.
    pub dock_point: [f64; 3],
    pub dock_heading: f64,
}

impl Default for StationGeometry {
    fn default() -> Self {
        Self {
            depth: 1.0,
            width: 2.0,
            height: 2.0,
            entry_half_width: 0.35,
            entry_z: [-0.75, -0.15],
            compartment_back: 0.35,
            dock_point: [0.1, 0.0, -0.45],
            dock_heading: 0.0,
        }
    }
}

impl StationGeometry {
    pub fn bounds(&self) -> Aabb {
        let (hx, hy, hz) = (self.depth / 2.0, self.width / 2.0, self.height / 2.0);
        Aabb::new([-hx, -hy, -hz], [hx, hy, hz])
    }

    pub fn front_x(&self) -> f64 {
        -self.depth / 2.0
    }

    pub fn compartment(&self) -> Aabb {
        Aabb::new(
            [self.front_x(), -self.entry_half_width, self.entry_z[0]],
            [
                self.compartment_back,
                self.entry_half_width,
                self.entry_z[1],
            ],
        )
    }

    pub fn dock_pose(&self) -> Pose {
        let d = self.dock_point;
        Pose::from_xyz_yaw(d[0], d[1], d[2], self.dock_heading, FrameId::Station)
    }

    /// Height of the docking lane (entry centre), station z.
    pub fn lane_z(&self) -> f64 {
        0.5 * (self.entry_z[0] + self.entry_z[1])
    }

    /// True if `p` is in the solid part of the station (inside the box but
    /// not in the open compartment).
    pub fn is_solid(&self, p: &Vector3<f64>) -> bool {
        self.bounds().contains(p) && !self.compartment().contains(p)
    }

    pub fn face_area(&self, face: Face) -> f64 {
        match face {
            Face::Front | Face::Rear => self.width * self.height,
            Face::Left | Face::Right => self.depth * self.height,
            Face::FunnelInterior => {
                2.0 * self.entry_half_width * (self.entry_z[1] - self.entry_z[0])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerLayout {
    pub tags: Vec<TagSpec>,
    pub station: StationGeometry,
    pub tag_star_id: u8,
    /// Static equipment masks (station frame).
    pub masks: Vec<Occluder>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("layout validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("detection references tag {0}, which is not in the layout")]
    InconsistentLayout(u8),
}

impl MarkerLayout {
    pub fn tag(&self, id: u8) -> Option<&TagSpec> {
        self.tags.iter().find(|t| t.id == id)
    }

    /// Pose of tag* in the station frame.
    pub fn tag_star_pose(&self) -> Pose {
        self.tag(self.tag_star_id)
            .map(|t| t.pose)
            .unwrap_or_else(|| Pose::identity(FrameId::Station))
    }

    /// Re-expresses a station-frame pose in the tag* frame.
    pub fn station_to_tag_star(&self, p: &Pose) -> Pose {
        self.tag_star_pose().inverse(FrameId::TagStar).compose(p)
    }

    /// Re-expresses a tag*-frame pose in the station frame.
    pub fn tag_star_to_station(&self, p: &Pose) -> Pose {
        self.tag_star_pose().compose(p)
    }

    /// Tags per square metre on `face`.
    pub fn face_density(&self, face: Face) -> f64 {
        let n = self.tags.iter().filter(|t| t.face == face).count();
        n as f64 / self.station.face_area(face)
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), LayoutError> {
        let mut errs = Vec::new();
        let mut seen = BTreeSet::new();
        for t in &self.tags {
            if !seen.insert(t.id) {
                errs.push(format!("duplicate tag id {}", t.id));
            }
            if t.id > MAX_TAG_ID {
                errs.push(format!("tag {} outside id range 0..={}", t.id, MAX_TAG_ID));
            }
            if !SIZE_PALETTE.iter().any(|s| (s - t.size).abs() < 1e-9) {
                errs.push(format!("tag {} size {} m not in palette", t.id, t.size));
            }
            if !(4..=7).contains(&t.density) {
                errs.push(format!(
                    "tag {} bit density {} outside 4..=7",
                    t.id, t.density
                ));
            }
            if !t.pose.is_finite() || t.pose.frame != FrameId::Station {
                errs.push(format!(
                    "tag {} pose must be finite and in the station frame",
                    t.id
                ));
                continue;
            }
            if let Err(e) = self.check_on_surface(t) {
                errs.push(e);
            }
        }
        for face in Face::OUTER {
            let has_large = self
                .tags
                .iter()
                .any(|t| t.face == face && (t.size - LARGE_TAG).abs() < 1e-9);
            if !has_large {
                errs.push(format!("face {:?} has no {} m tag", face, LARGE_TAG));
            }
        }
        match self.tag(self.tag_star_id) {
            None => errs.push(format!("tag* id {} not present", self.tag_star_id)),
            Some(t) if t.face != Face::Front => {
                errs.push(format!("tag* {} must be on the front face", t.id))
            }
            _ => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(LayoutError::Validation(errs))
        }
    }

    fn check_on_surface(&self, t: &TagSpec) -> Result<(), String> {
        let g = &self.station;
        let b = g.bounds();
        let p = t.center();
        let tol = SURFACE_TOLERANCE;
        let within = |v: f64, lo: f64, hi: f64| v >= lo - tol && v <= hi + tol;
        let on_surface = match t.face {
            Face::Front => {
                (p.x - b.min[0]).abs() <= tol
                    && within(p.y, b.min[1], b.max[1])
                    && within(p.z, b.min[2], b.max[2])
                    && !g.compartment().contains(&p)
            }
            Face::Rear => {
                (p.x - b.max[0]).abs() <= tol
                    && within(p.y, b.min[1], b.max[1])
                    && within(p.z, b.min[2], b.max[2])
            }
            Face::Right => {
                (p.y - b.max[1]).abs() <= tol
                    && within(p.x, b.min[0], b.max[0])
                    && within(p.z, b.min[2], b.max[2])
            }
            Face::Left => {
                (p.y - b.min[1]).abs() <= tol
                    && within(p.x, b.min[0], b.max[0])
                    && within(p.z, b.min[2], b.max[2])
            }
            Face::FunnelInterior => {
                let c = g.compartment();
                (p.x - c.max[0]).abs() <= tol
                    && within(p.y, c.min[1], c.max[1])
                    && within(p.z, c.min[2], c.max[2])
            }
        };
        if !on_surface {
            return Err(format!(
                "tag {} at ({:.3}, {:.3}, {:.3}) is not on its {:?} surface",
                t.id, p.x, p.y, p.z, t.face
            ));
        }
        let facing = (t.pose.orientation * Vector3::x()).dot(&t.face.viewing_axis());
        if facing < 0.9 {
            return Err(format!(
                "tag {} does not face out of its {:?} surface",
                t.id, t.face
            ));
        }
        Ok(())
    }

    /// Reconstructed deep-site layout: one 22 cm tag per outer face, small
    /// tags clustered around the entry and inside the funnel, rigging masks
    /// over part of the rear and right faces.
    pub fn reconstructed_deep_site() -> MarkerLayout {
        let station = StationGeometry::default();
        let fx = station.front_x();
        let rx = station.depth / 2.0;
        let hy = station.width / 2.0;
        let back = station.compartment_back;
        let front = |id: u8, size: f64, y: f64, z: f64| {
            TagSpec::new(
                id,
                size,
                5,
                Pose::from_xyz_yaw(fx, y, z, 0.0, FrameId::Station),
                Face::Front,
            )
        };
        let interior = |id: u8, y: f64, z: f64| {
            TagSpec::new(
                id,
                0.07,
                5,
                Pose::from_xyz_yaw(back, y, z, 0.0, FrameId::Station),
                Face::FunnelInterior,
            )
        };
        let right = |id: u8, size: f64, x: f64, z: f64| {
            TagSpec::new(
                id,
                size,
                5,
                Pose::from_xyz_yaw(x, hy, z, -PI / 2.0, FrameId::Station),
                Face::Right,
            )
        };
        let left = |id: u8, size: f64, x: f64, z: f64| {
            TagSpec::new(
                id,
                size,
                5,
                Pose::from_xyz_yaw(x, -hy, z, PI / 2.0, FrameId::Station),
                Face::Left,
            )
        };
        let rear = |id: u8, size: f64, y: f64, z: f64| {
            TagSpec::new(
                id,
                size,
                5,
                Pose::from_xyz_yaw(rx, y, z, PI, FrameId::Station),
                Face::Rear,
            )
        };
        let tags = alloc::vec![
            front(0, 0.15, 0.0, -0.87),
            front(1, 0.22, 0.6, 0.45),
            front(2, 0.07, -0.5, -0.87),
            front(3, 0.07, 0.5, -0.87),
            front(4, 0.07, -0.5, -0.45),
            front(5, 0.07, 0.5, -0.45),
            front(6, 0.07, -0.5, -0.05),
            front(7, 0.07, 0.5, -0.05),
            front(8, 0.07, -0.22, -0.05),
            front(9, 0.07, 0.22, -0.05),
            front(10, 0.15, -0.6, 0.45),
            interior(11, -0.15, -0.6),
            interior(12, 0.15, -0.6),
            interior(13, -0.15, -0.3),
            interior(14, 0.15, -0.3),
            right(15, 0.22, 0.0, -0.45),
            right(16, 0.07, -0.3, -0.85),
            left(17, 0.22, 0.0, -0.45),
            left(18, 0.07, -0.3, -0.85),
            rear(19, 0.22, 0.0, -0.45),
            rear(20, 0.15, -0.6, 0.3),
        ];
        let masks = alloc::vec![
            // Rigging on the rear face.
            Occluder::StationBox(Aabb::new([0.45, -0.8, 0.1], [0.7, -0.4, 0.5])),
            // Cable run on the right face.
            Occluder::StationBox(Aabb::new([-0.45, 0.95, -0.95], [-0.15, 1.1, -0.7])),
        ];
        MarkerLayout {
            tags,
            station,
            tag_star_id: 0,
            masks,
        }
    }
}

/// Noise-free visible-tag count at each camera pose (station frame).
pub fn coverage_map(
    path: &[Pose],
    layout: &MarkerLayout,
    cam: &CameraModel,
    occlusions: &[Occluder],
) -> Vec<usize> {
    path.iter()
        .map(|pose| {
            layout
                .tags
                .iter()
                .filter(|t| visible(t, pose, cam, &layout.station, &layout.masks, occlusions))
                .count()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitPatternRow {
    pub size: f64,
    pub density: u8,
    /// Model range limit, m.
    pub max_range: f64,
    /// Longest range at which the tag was detected along the path, m.
    pub max_detected_range: f64,
    /// Fraction of path poses with a detection.
    pub detection_rate: f64,
    /// Viewing-angle limit, rad.
    pub max_view_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitPatternReport {
    pub rows: Vec<BitPatternRow>,
}

impl BitPatternReport {
    pub fn row(&self, size: f64, density: u8) -> Option<&BitPatternRow> {
        self.rows
            .iter()
            .find(|r| r.density == density && (r.size - size).abs() < 1e-12)
    }

    /// Densities for `size` sorted by descending detection rate (ties by
    /// ascending density).
    pub fn ranking(&self, size: f64) -> Vec<u8> {
        let mut rows: Vec<&BitPatternRow> = self
            .rows
            .iter()
            .filter(|r| (r.size - size).abs() < 1e-12)
            .collect();
        rows.sort_by(|a, b| {
            b.detection_rate
                .partial_cmp(&a.detection_rate)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.density.cmp(&b.density))
        });
        rows.into_iter().map(|r| r.density).collect()
    }
}

/// Single-tag study: one tag at the origin facing the approach, evaluated
/// over `path` (camera poses in the station frame).
pub fn compare_bit_patterns(
    sizes: &[f64],
    densities: &[u8],
    cam: &CameraModel,
    path: &[Pose],
) -> BitPatternReport {
    let station = StationGeometry::default();
    let mut rows = Vec::new();
    for &size in sizes {
        for &density in densities {
            let tag = TagSpec::new(
                0,
                size,
                density,
                Pose::identity(FrameId::Station),
                Face::Front,
            );
            let mut hits = 0usize;
            let mut max_detected = 0.0_f64;
            for pose in path {
                if visible(&tag, pose, cam, &station, &[], &[]) {
                    hits += 1;
                    max_detected = max_detected.max((pose.position - tag.center()).norm());
                }
            }
            rows.push(BitPatternRow {
                size,
                density,
                max_range: max_detection_range(&tag, cam),
                max_detected_range: max_detected,
                detection_rate: if path.is_empty() {
                    0.0
                } else {
                    hits as f64 / path.len() as f64
                },
                max_view_angle: cam.max_view_angle(density),
            });
        }
    }
    BitPatternReport { rows }
}

/// Straight frontal approach towards a tag at the station origin, with a
/// slow lateral weave so oblique views are sampled too.
pub fn frontal_approach_path(start: f64, end: f64, samples: usize, weave: f64) -> Vec<Pose> {
    let n = samples.max(2);
    (0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            let range = start + (end - start) * f;
            let lateral = weave * (f * 6.0 * PI).sin();
            let yaw = (lateral / range).atan();
            Pose::from_xyz_yaw(-range, lateral, 0.0, yaw, FrameId::Station)
        })
        .collect()
}

/// Camera poses circling the station at `clearance` from its faces, each
/// looking straight at the face it passes, labelled with that face. The
/// survey starts at the front exit on the entry axis, runs along the front
/// to the right, round the rear and the left, and back to the entry axis.
pub fn survey_path(
    station: &StationGeometry,
    clearance: f64,
    samples_per_side: usize,
) -> Vec<(Face, Pose)> {
    let b = station.bounds();
    let z = station.lane_z();
    let (x0, x1) = (b.min[0] - clearance, b.max[0] + clearance);
    let (y0, y1) = (b.min[1] - clearance, b.max[1] + clearance);
    let n = samples_per_side.max(2);
    let mut out = Vec::new();
    let leg = |face: Face, from: [f64; 2], to: [f64; 2], yaw: f64, out: &mut Vec<(Face, Pose)>| {
        for i in 0..n {
            let f = i as f64 / n as f64;
            let x = from[0] + (to[0] - from[0]) * f;
            let y = from[1] + (to[1] - from[1]) * f;
            out.push((face, Pose::from_xyz_yaw(x, y, z, yaw, FrameId::Station)));
        }
    };
    leg(Face::Front, [x0, 0.0], [x0, y1], 0.0, &mut out);
    leg(Face::Right, [x0, y1], [x1, y1], -PI / 2.0, &mut out);
    leg(Face::Rear, [x1, y1], [x1, y0], PI, &mut out);
    leg(Face::Left, [x1, y0], [x0, y0], PI / 2.0, &mut out);
    leg(Face::Front, [x0, y0], [x0, 0.0], 0.0, &mut out);
    out
}

/// Largest visible-tag count and its pose index.
pub fn peak_coverage(counts: &[usize]) -> Option<(usize, usize)> {
    counts
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(i, c)| (c, i))
}

/// Tag ids visible from `pose`.
pub fn visible_ids(
    pose: &Pose,
    layout: &MarkerLayout,
    cam: &CameraModel,
    occlusions: &[Occluder],
) -> Vec<u8> {
    layout
        .tags
        .iter()
        .filter(|t| visible(t, pose, cam, &layout.station, &layout.masks, occlusions))
        .map(|t| t.id)
        .collect()
}

/// Viewing angle of `tag` from `camera_pos`, rad.
pub fn tag_view_angle(tag: &TagSpec, camera_pos: &Vector3<f64>) -> f64 {
    view_angle(tag, camera_pos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_validates() {
        let l = MarkerLayout::reconstructed_deep_site();
        assert_eq!(l.tags.len(), 21);
        l.validate().unwrap();
        assert_eq!(l.tag_star_id, 0);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut l = MarkerLayout::reconstructed_deep_site();
        l.tags[3].id = 2;
        match l.validate() {
            Err(LayoutError::Validation(v)) => assert!(v.iter().any(|m| m.contains("duplicate"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn floating_tag_rejected() {
        let mut l = MarkerLayout::reconstructed_deep_site();
        l.tags[5].pose.position.x -= 1.0;
        let Err(LayoutError::Validation(v)) = l.validate() else {
            panic!("expected validation failure");
        };
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("tag 5"));
    }

    #[test]
    fn reports_every_violation() {
        let mut l = MarkerLayout::reconstructed_deep_site();
        l.tags[1].size = 0.3;
        l.tags[2].density = 9;
        l.tag_star_id = 15;
        let Err(LayoutError::Validation(v)) = l.validate() else {
            panic!();
        };
        // bad size, bad density, front face loses its large tag, tag* not on front
        assert_eq!(v.len(), 4, "{v:?}");
    }

    #[test]
    fn funnel_is_densest() {
        let l = MarkerLayout::reconstructed_deep_site();
        let funnel = l.face_density(Face::FunnelInterior);
        for f in Face::OUTER {
            assert!(funnel > l.face_density(f));
        }
    }

    #[test]
    fn tag_star_round_trip() {
        let l = MarkerLayout::reconstructed_deep_site();
        let p = Pose::from_xyz_yaw(-2.0, 1.0, -0.4, 0.3, FrameId::Station);
        let back = l.tag_star_to_station(&l.station_to_tag_star(&p));
        let (dp, dr) = back.distance_to(&p);
        assert!(dp < 1e-12 && dr < 1e-12);
        assert_eq!(l.station_to_tag_star(&p).frame, FrameId::TagStar);
    }
}
