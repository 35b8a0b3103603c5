//! Layout documents: the station geometry, every tag and the equipment
//! masks as TOML.
//!
//! ```toml
//! schema_version = 1
//! tag_star_id = 0
//!
//! [station]
//! depth = 1.0
//! width = 2.0
//! height = 2.0
//! entry_half_width = 0.35
//! entry_z = [-0.75, -0.15]
//! compartment_back = 0.35
//! dock_point = [0.1, 0.0, -0.45]
//! dock_heading = 0.0
//!
//! [[tags]]
//! id = 0
//! size = 0.15          # edge length, m
//! density = 5          # 5x5 bits
//! position = [-0.5, 0.0, -0.87]        # station frame, m
//! orientation = [1.0, 0.0, 0.0, 0.0]   # quaternion w, x, y, z
//! face = "FRONT"
//!
//! [[masks]]
//! kind = "station_box"
//! min = [0.45, -0.8, 0.1]
//! max = [0.7, -0.4, 0.5]
//! ```

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rovdock_core::geometry::{FrameId, Pose};
use rovdock_core::layout::{Face, LayoutError, MarkerLayout, StationGeometry, TagSpec};
use rovdock_core::sensors::occlusion::Occluder;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const LAYOUT_SCHEMA_VERSION: u32 = 1;

/// The shipped deep-site layout document.
pub const DEEP_STATION: &str = include_str!("../data/deep_station.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagEntry {
    pub id: u8,
    pub size: f64,
    pub density: u8,
    pub position: [f64; 3],
    pub orientation: [f64; 4],
    pub face: Face,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutDocument {
    pub schema_version: u32,
    pub tag_star_id: u8,
    pub station: StationGeometry,
    pub tags: Vec<TagEntry>,
    #[serde(default)]
    pub masks: Vec<Occluder>,
}

impl LayoutDocument {
    pub fn from_layout(layout: &MarkerLayout) -> Self {
        let tags = layout
            .tags
            .iter()
            .map(|t| {
                let q = t.pose.orientation.quaternion();
                let p = t.pose.position;
                TagEntry {
                    id: t.id,
                    size: t.size,
                    density: t.density,
                    position: [p.x, p.y, p.z],
                    orientation: [q.w, q.i, q.j, q.k],
                    face: t.face,
                }
            })
            .collect();
        Self {
            schema_version: LAYOUT_SCHEMA_VERSION,
            tag_star_id: layout.tag_star_id,
            station: layout.station.clone(),
            tags,
            masks: layout.masks.clone(),
        }
    }

    /// Converts and validates, collecting every problem found.
    pub fn into_layout(self) -> Result<MarkerLayout> {
        if self.schema_version != LAYOUT_SCHEMA_VERSION {
            return Err(HarnessError::SchemaMismatch(format!(
                "layout version {}, expected {LAYOUT_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        let mut errs = Vec::new();
        let mut tags = Vec::with_capacity(self.tags.len());
        for t in self.tags {
            let [w, x, y, z] = t.orientation;
            let q = Quaternion::new(w, x, y, z);
            let n = q.norm();
            if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                errs.push(format!(
                    "tag {} orientation is not a unit quaternion (norm {n})",
                    t.id
                ));
                continue;
            }
            let orientation = if (n - 1.0).abs() < 1e-12 {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::from_quaternion(q)
            };
            let pose = Pose::new(Vector3::from(t.position), orientation, FrameId::Station);
            tags.push(TagSpec::new(t.id, t.size, t.density, pose, t.face));
        }
        let layout = MarkerLayout {
            tags,
            station: self.station,
            tag_star_id: self.tag_star_id,
            masks: self.masks,
        };
        if let Err(LayoutError::Validation(more)) = layout.validate() {
            errs.extend(more);
        }
        if errs.is_empty() {
            Ok(layout)
        } else {
            Err(LayoutError::Validation(errs).into())
        }
    }
}

pub fn load_layout(text: &str) -> Result<MarkerLayout> {
    let doc: LayoutDocument =
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    doc.into_layout()
}

pub fn load_layout_file(path: &Path) -> Result<MarkerLayout> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    load_layout(&text)
}

pub fn layout_to_toml(layout: &MarkerLayout) -> Result<String> {
    toml::to_string(&LayoutDocument::from_layout(layout))
        .map_err(|e| HarnessError::Config(e.to_string()))
}

/// The shipped default layout.
pub fn default_layout() -> MarkerLayout {
    load_layout(DEEP_STATION).expect("shipped layout is valid")
}
