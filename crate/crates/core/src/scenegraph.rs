//! The distilled scene graph: persistent object nodes, road/sidewalk ground
//! nodes and the sky node, with a canonical JSON encoding.
//!
//! `scenegraph.json` has four top-level keys:
//!
//! - `meta`: `source_id`, `frame_count`, optional `provenance`
//! - `objects`: object nodes in `node_id` order (`node_id` = array index)
//! - `grounds`: at most one `road` and one `sidewalk` node, in that order
//! - `sky`: `{ "crops": [{ "frame_id", "hist": [512 floats] }] }`

use std::collections::HashSet;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::color::HsvHistogram;
use crate::embed;
use crate::geometry::{OrientedBox, PointCloud, Vec3};
use crate::provenance::Provenance;
use crate::raster::Patch;

/// Tolerance on embedding norms accepted on load.
pub const UNIT_TOL: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
}

impl GraphError {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        GraphError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropDescriptor {
    pub frame_id: u32,
    pub semantic_embed: Vec<f64>,
    pub appearance_embed: Vec<f64>,
    pub pixel_patch: Option<Patch>,
}

impl CropDescriptor {
    /// Normalizes both embeddings on the way in.
    pub fn new(
        frame_id: u32,
        semantic_embed: Vec<f64>,
        appearance_embed: Vec<f64>,
        pixel_patch: Option<Patch>,
    ) -> Self {
        Self {
            frame_id,
            semantic_embed: embed::normalized(semantic_embed),
            appearance_embed: embed::normalized(appearance_embed),
            pixel_patch,
        }
    }

    pub fn ground(frame_id: u32, patch: Patch) -> Self {
        Self {
            frame_id,
            semantic_embed: Vec::new(),
            appearance_embed: Vec::new(),
            pixel_patch: Some(patch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectNode {
    pub node_id: u32,
    pub category: String,
    pub centroid: Vec3,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    /// Full facing direction; agrees with `bbox.yaw` modulo 90 degrees.
    pub heading: f64,
    pub crops: Vec<CropDescriptor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundKind {
    Road,
    Sidewalk,
}

impl GroundKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GroundKind::Road => "road",
            GroundKind::Sidewalk => "sidewalk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundNode {
    pub kind: GroundKind,
    pub cloud: PointCloud,
    pub crops: Vec<CropDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkyCrop {
    pub frame_id: u32,
    pub hist: HsvHistogram,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkyNode {
    pub crops: Vec<SkyCrop>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphMeta {
    pub source_id: String,
    pub frame_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGraph {
    pub meta: GraphMeta,
    pub objects: Vec<ObjectNode>,
    pub grounds: Vec<GroundNode>,
    pub sky: SkyNode,
}

impl SceneGraph {
    pub fn object(&self, node_id: u32) -> Option<&ObjectNode> {
        self.objects.get(node_id as usize).filter(|o| o.node_id == node_id)
    }

    pub fn ground(&self, kind: GroundKind) -> Option<&GroundNode> {
        self.grounds.iter().find(|g| g.kind == kind)
    }

    /// Checks every structural invariant; errors name the offending field.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut sem_dim = None;
        let mut app_dim = None;
        for (i, o) in self.objects.iter().enumerate() {
            let at = |f: &str| format!("objects[{i}].{f}");
            if o.node_id as usize != i {
                return Err(GraphError::schema(at("node_id"), format!("expected {i}, got {}", o.node_id)));
            }
            if o.category.is_empty() {
                return Err(GraphError::schema(at("category"), "empty label"));
            }
            if !o.bbox.is_valid() {
                return Err(GraphError::schema(at("box"), "dims must be positive and finite"));
            }
            if o.centroid != o.bbox.center {
                return Err(GraphError::schema(at("centroid"), "must equal box.center"));
            }
            if !(o.heading > -PI && o.heading <= PI) {
                return Err(GraphError::schema(at("heading"), "must lie in (-pi, pi]"));
            }
            let r = (o.heading - o.bbox.yaw).rem_euclid(FRAC_PI_2);
            if r.min(FRAC_PI_2 - r) > 1e-6 {
                return Err(GraphError::schema(at("heading"), "must agree with box.yaw modulo 90 degrees"));
            }
            if o.crops.is_empty() {
                return Err(GraphError::schema(at("crops"), "at least one crop required"));
            }
            for (j, c) in o.crops.iter().enumerate() {
                let at = |f: &str| format!("objects[{i}].crops[{j}].{f}");
                check_embed(&c.semantic_embed, &mut sem_dim, &at("semantic_embed"))?;
                check_embed(&c.appearance_embed, &mut app_dim, &at("appearance_embed"))?;
            }
        }

        let mut seen = HashSet::new();
        let mut last = None;
        for (i, g) in self.grounds.iter().enumerate() {
            let at = |f: &str| format!("grounds[{i}].{f}");
            if !seen.insert(g.kind) {
                return Err(GraphError::schema(at("kind"), format!("duplicate {} node", g.kind.as_str())));
            }
            if last.is_some_and(|k| k > g.kind) {
                return Err(GraphError::schema(at("kind"), "grounds must be ordered road, sidewalk"));
            }
            last = Some(g.kind);
            if g.cloud.is_empty() || !g.cloud.is_finite() {
                return Err(GraphError::schema(at("cloud"), "must be non-empty and finite"));
            }
            for (j, c) in g.crops.iter().enumerate() {
                for (name, e) in [("semantic_embed", &c.semantic_embed), ("appearance_embed", &c.appearance_embed)] {
                    if !e.is_empty() && !embed::is_unit(e, UNIT_TOL) {
                        return Err(GraphError::schema(
                            format!("grounds[{i}].crops[{j}].{name}"),
                            "embedding not unit length",
                        ));
                    }
                }
            }
        }

        let mut prev_frame = None;
        for (i, k) in self.sky.crops.iter().enumerate() {
            if !k.hist.is_well_formed() {
                return Err(GraphError::schema(format!("sky.crops[{i}].hist"), "expected 512 non-negative bins"));
            }
            if prev_frame.is_some_and(|p| p >= k.frame_id) {
                return Err(GraphError::schema(format!("sky.crops[{i}].frame_id"), "frame ids must be strictly increasing"));
            }
            prev_frame = Some(k.frame_id);
        }
        Ok(())
    }
}

fn check_embed(e: &[f64], dim: &mut Option<usize>, path: &str) -> Result<(), GraphError> {
    if e.is_empty() {
        return Err(GraphError::schema(path, "empty embedding"));
    }
    match *dim {
        Some(d) if d != e.len() => {
            return Err(GraphError::schema(path, format!("dimension {} differs from {d}", e.len())))
        }
        None => *dim = Some(e.len()),
        _ => {}
    }
    if !embed::is_unit(e, UNIT_TOL) {
        return Err(GraphError::schema(path, "embedding not unit length"));
    }
    Ok(())
}

pub fn to_json(graph: &SceneGraph) -> Result<String, GraphError> {
    graph.validate()?;
    canonical::to_canonical_string(graph).map_err(|e| GraphError::schema("$", e.to_string()))
}

pub fn from_json(bytes: &[u8]) -> Result<SceneGraph, GraphError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let graph: SceneGraph = serde_path_to_error::deserialize(de)
        .map_err(|e| GraphError::schema(e.path().to_string(), e.inner().to_string()))?;
    graph.validate()?;
    Ok(graph)
}

pub fn save_graph(graph: &SceneGraph, path: &Path) -> Result<(), GraphError> {
    let text = to_json(graph)?;
    std::fs::write(path, text).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_graph(path: &Path) -> Result<SceneGraph, GraphError> {
    let bytes = std::fs::read(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&bytes)
}
