//! Scene assembly: a scene graph plus a cousin selection become `k`
//! engine-neutral scene descriptions, one per cousin rank.
//!
//! `scene_<source>_c<i>.json` carries `scene_id`, `cousin_index`,
//! `grounds` (horizontal planes with convex boundaries and material ids),
//! `sky_id`, `placements` (pose, footprint and physics per object) and
//! `provenance`.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::geometry::polygon::{self, convex_hull};
use crate::geometry::{wrap_angle, OrientedBox, Vec2, Vec3};
use crate::provenance::Provenance;
use crate::retrieval::{Catalog, CousinSelection};
use crate::scenegraph::{GroundKind, GroundNode, SceneGraph};

/// Sidewalk height above the road plane, meters.
pub const SIDEWALK_ELEVATION: f64 = 0.15;

#[derive(Debug, thiserror::Error)]
pub enum AssemblyError {
    #[error("scene graph has no road ground node")]
    NoGround,
    #[error("selection has no entry for node {0}")]
    SelectionMissingNode(u32),
    #[error("selected asset {0} not in catalog")]
    UnknownAsset(String),
    #[error("selection has no {0} material")]
    MissingMaterial(&'static str),
    #[error("selection has no sky")]
    MissingSky,
    #[error("cousin index {index} out of range for k={k}")]
    CousinIndex { index: usize, k: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblyConfig {
    /// Extra clearance added when pushing overlapping footprints apart, meters.
    pub margin: f64,
    pub max_sweeps: usize,
    /// Fraction of ground points discarded as height outliers.
    pub trim_fraction: f64,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self {
            margin: 0.01,
            max_sweeps: 100,
            trim_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundPlane {
    pub kind: GroundKind,
    pub z: f64,
    pub boundary: Vec<Vec2>,
    pub material_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub mass: f64,
    pub static_friction: f64,
    pub dynamic_friction: f64,
    pub restitution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub node_id: u32,
    pub asset_id: String,
    pub category: String,
    pub position: Vec3,
    /// Asset rotation about +z: node heading minus the asset's canonical front.
    pub yaw: f64,
    /// World facing direction of the placed object.
    pub heading: f64,
    /// Appearance similarity of the chosen asset.
    pub score: f64,
    pub physics: Physics,
    pub footprint: OrientedBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneProvenance {
    pub source_graph: String,
    pub selection_hash: String,
    /// Nodes dropped because their overlaps could not be resolved.
    pub dropped_nodes: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub scene_id: String,
    pub cousin_index: usize,
    pub grounds: Vec<GroundPlane>,
    pub sky_id: String,
    pub placements: Vec<Placement>,
    pub provenance: SceneProvenance,
}

/// Mean height after discarding the `trim` fraction of points farthest
/// from the median height.
pub fn trimmed_mean_z(zs: &[f64], trim: f64) -> f64 {
    if zs.is_empty() {
        return 0.0;
    }
    let mut sorted = zs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let drop = ((trim * n as f64).floor() as usize).min(n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        (zs[a] - median)
            .abs()
            .total_cmp(&(zs[b] - median).abs())
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; n];
    for &i in &idx[..n - drop] {
        keep[i] = true;
    }
    let (sum, count) = zs
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .fold((0.0, 0usize), |(s, c), (z, _)| (s + z, c + 1));
    sum / count as f64
}

fn rank_pick<T>(list: &[T], cousin_index: usize) -> Option<&T> {
    (!list.is_empty()).then(|| &list[cousin_index % list.len()])
}

/// Horizontal road and sidewalk planes. The sidewalk always sits exactly
/// [`SIDEWALK_ELEVATION`] above the road.
pub fn fit_ground_planes(
    grounds: &[GroundNode],
    selection: &CousinSelection,
    cousin_index: usize,
    cfg: &AssemblyConfig,
) -> Result<Vec<GroundPlane>, AssemblyError> {
    let road = grounds
        .iter()
        .find(|g| g.kind == GroundKind::Road)
        .ok_or(AssemblyError::NoGround)?;
    let zs: Vec<f64> = road.cloud.points.iter().map(|p| p.z).collect();
    let road_z = trimmed_mean_z(&zs, cfg.trim_fraction);

    let mut planes = Vec::new();
    for kind in [GroundKind::Road, GroundKind::Sidewalk] {
        let Some(g) = grounds.iter().find(|g| g.kind == kind) else {
            continue;
        };
        let material_id = selection
            .grounds
            .get(&kind)
            .and_then(|l| rank_pick(l, cousin_index))
            .ok_or(AssemblyError::MissingMaterial(kind.as_str()))?
            .material_id
            .clone();
        let xy: Vec<Vec2> = g.cloud.points.iter().map(|p| p.xy()).collect();
        planes.push(GroundPlane {
            kind,
            z: match kind {
                GroundKind::Road => road_z,
                GroundKind::Sidewalk => road_z + SIDEWALK_ELEVATION,
            },
            boundary: convex_hull(&xy),
            material_id,
        });
    }
    Ok(planes)
}

/// The plane an object at `xy` rests on: the sidewalk when `xy` is inside
/// its boundary, otherwise the road.
pub fn supporting_plane<'a>(planes: &'a [GroundPlane], xy: &Vec2) -> Option<&'a GroundPlane> {
    planes
        .iter()
        .find(|p| p.kind == GroundKind::Sidewalk && polygon::contains(&p.boundary, xy, 1e-9))
        .or_else(|| planes.iter().find(|p| p.kind == GroundKind::Road))
}

/// If footprints `a` and `b` overlap, the shortest distance `b` must travel
/// along `dir` to stop overlapping.
fn separation_along(a: &OrientedBox, b: &OrientedBox, dir: &Vec2) -> Option<f64> {
    let d = b.center.xy() - a.center.xy();
    let (a0, a1) = a.bev_axes();
    let (b0, b1) = b.bev_axes();
    let radius = |bx: &OrientedBox, x: &Vec2, y: &Vec2, n: &Vec2| {
        0.5 * bx.dims.x * x.dot(n).abs() + 0.5 * bx.dims.y * y.dot(n).abs()
    };
    let mut best = f64::INFINITY;
    for n in [a0, a1, b0, b1] {
        let overlap = radius(a, &a0, &a1, &n) + radius(b, &b0, &b1, &n) - d.dot(&n).abs();
        if overlap <= 0.0 {
            return None;
        }
        let along = dir.dot(&n).abs();
        if along > 1e-12 {
            best = best.min(overlap / along);
        }
    }
    Some(best)
}

pub fn footprints_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    separation_along(a, b, &Vec2::new(1.0, 0.0)).is_some()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Displacement {
    pub node_id: u32,
    pub distance: f64,
    /// Sum of the two footprint diagonals involved in this move.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementReport {
    pub placements: Vec<Placement>,
    pub dropped: Vec<u32>,
    pub moves: Vec<Displacement>,
}

/// Places the rank-`cousin_index` asset of every node, pushes overlapping
/// footprints apart and rests each object on its supporting plane.
///
/// Overlaps are resolved in sweeps over the objects in descending
/// footprint area: for each overlapping pair the smaller footprint moves
/// along the line of centers by the minimum separating distance plus the
/// margin. Objects still overlapping after `max_sweeps` are dropped.
pub fn place_objects(
    graph: &SceneGraph,
    selection: &CousinSelection,
    cousin_index: usize,
    planes: &[GroundPlane],
    catalog: &Catalog,
    cfg: &AssemblyConfig,
) -> Result<PlacementReport, AssemblyError> {
    place_objects_excluding(graph, selection, cousin_index, planes, catalog, cfg, &BTreeSet::new())
}

/// [`place_objects`] with the nodes in `exclude` dropped up front.
pub fn place_objects_excluding(
    graph: &SceneGraph,
    selection: &CousinSelection,
    cousin_index: usize,
    planes: &[GroundPlane],
    catalog: &Catalog,
    cfg: &AssemblyConfig,
    exclude: &BTreeSet<u32>,
) -> Result<PlacementReport, AssemblyError> {
    let mut placements = Vec::with_capacity(graph.objects.len());
    for node in graph.objects.iter().filter(|n| !exclude.contains(&n.node_id)) {
        let sel = selection
            .object(node.node_id)
            .ok_or(AssemblyError::SelectionMissingNode(node.node_id))?;
        let pick = rank_pick(&sel.candidates, cousin_index)
            .ok_or(AssemblyError::SelectionMissingNode(node.node_id))?;
        let asset = catalog
            .get(&pick.asset_id)
            .ok_or_else(|| AssemblyError::UnknownAsset(pick.asset_id.clone()))?;
        let yaw = wrap_angle(node.heading - asset.front_yaw);
        let position = Vec3::new(node.centroid.x, node.centroid.y, 0.0);
        placements.push(Placement {
            node_id: node.node_id,
            asset_id: asset.asset_id.clone(),
            category: asset.category.clone(),
            position,
            yaw,
            heading: node.heading,
            score: pick.appearance,
            physics: Physics {
                mass: asset.mass,
                static_friction: asset.static_friction,
                dynamic_friction: asset.dynamic_friction,
                restitution: asset.restitution,
            },
            footprint: OrientedBox::new(position, asset.dims, yaw),
        });
    }

    let mut order: Vec<usize> = (0..placements.len()).collect();
    order.sort_by(|&a, &b| {
        placements[b]
            .footprint
            .bev_area()
            .total_cmp(&placements[a].footprint.bev_area())
            .then(placements[a].node_id.cmp(&placements[b].node_id))
    });

    let mut moves = Vec::new();
    for _ in 0..cfg.max_sweeps {
        let mut moved = false;
        for ai in 0..order.len() {
            for bi in (ai + 1)..order.len() {
                let (i, j) = (order[ai], order[bi]);
                let (fa, fb) = (placements[i].footprint, placements[j].footprint);
                let d = fb.center.xy() - fa.center.xy();
                let dir = if d.norm() > 1e-12 { d.normalize() } else { Vec2::new(1.0, 0.0) };
                if let Some(t) = separation_along(&fa, &fb, &dir) {
                    let step = dir * (t + cfg.margin);
                    let p = &mut placements[j];
                    p.position.x += step.x;
                    p.position.y += step.y;
                    p.footprint.center = p.position;
                    moves.push(Displacement {
                        node_id: p.node_id,
                        distance: step.norm(),
                        bound: fa.bev_diagonal() + fb.bev_diagonal(),
                    });
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }

    let mut dropped = HashSet::new();
    for ai in 0..order.len() {
        if dropped.contains(&order[ai]) {
            continue;
        }
        for bi in (ai + 1)..order.len() {
            let (i, j) = (order[ai], order[bi]);
            if !dropped.contains(&j) && footprints_overlap(&placements[i].footprint, &placements[j].footprint) {
                warn!("dropping node {}: overlap unresolved", placements[j].node_id);
                dropped.insert(j);
            }
        }
    }

    let mut kept = Vec::with_capacity(placements.len());
    let mut dropped_ids: Vec<u32> = exclude.iter().copied().collect();
    for (i, mut p) in placements.into_iter().enumerate() {
        if dropped.contains(&i) {
            dropped_ids.push(p.node_id);
            continue;
        }
        let plane = supporting_plane(planes, &p.position.xy()).ok_or(AssemblyError::NoGround)?;
        p.position.z = plane.z + 0.5 * p.footprint.dims.z;
        p.footprint.center = p.position;
        kept.push(p);
    }
    dropped_ids.sort_unstable();
    Ok(PlacementReport {
        placements: kept,
        dropped: dropped_ids,
        moves,
    })
}

/// `s` with every character outside `[A-Za-z0-9._-]` replaced by `_`.
pub fn safe_file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

pub fn scene_file_name(source_id: &str, cousin_index: usize) -> String {
    format!("scene_{}_c{}.json", safe_file_stem(source_id), cousin_index)
}

/// Builds the cousin scene of rank `cousin_index` and, when `out_path` is
/// given, writes it as canonical JSON.
pub fn emit_scene(
    graph: &SceneGraph,
    selection: &CousinSelection,
    catalog: &Catalog,
    cousin_index: usize,
    cfg: &AssemblyConfig,
    out_path: Option<&Path>,
) -> Result<SceneSpec, AssemblyError> {
    emit_scene_excluding(graph, selection, catalog, cousin_index, cfg, out_path, &BTreeSet::new())
}

fn emit_scene_excluding(
    graph: &SceneGraph,
    selection: &CousinSelection,
    catalog: &Catalog,
    cousin_index: usize,
    cfg: &AssemblyConfig,
    out_path: Option<&Path>,
    exclude: &BTreeSet<u32>,
) -> Result<SceneSpec, AssemblyError> {
    if cousin_index >= selection.k.max(1) {
        return Err(AssemblyError::CousinIndex {
            index: cousin_index,
            k: selection.k,
        });
    }
    let planes = fit_ground_planes(&graph.grounds, selection, cousin_index, cfg)?;
    let report = place_objects_excluding(graph, selection, cousin_index, &planes, catalog, cfg, exclude)?;
    let sky_id = rank_pick(&selection.sky, cousin_index)
        .ok_or(AssemblyError::MissingSky)?
        .sky_id
        .clone();
    let selection_hash = canonical::canonical_hash(selection).map_err(|e| AssemblyError::Io {
        path: "<selection>".into(),
        source: std::io::Error::other(e),
    })?;
    let scene = SceneSpec {
        scene_id: format!("scene_{}_c{}", safe_file_stem(&graph.meta.source_id), cousin_index),
        cousin_index,
        grounds: planes,
        sky_id,
        placements: report.placements,
        provenance: SceneProvenance {
            source_graph: graph.meta.source_id.clone(),
            selection_hash,
            dropped_nodes: report.dropped,
            run: None,
        },
    };
    if let Some(path) = out_path {
        write_scene(&scene, path)?;
    }
    Ok(scene)
}

pub fn write_scene(scene: &SceneSpec, path: &Path) -> Result<(), AssemblyError> {
    canonical::write_canonical(scene, path).map_err(|source| AssemblyError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_scene(path: &Path) -> Result<SceneSpec, AssemblyError> {
    let io = |source| AssemblyError::Io {
        path: path.display().to_string(),
        source,
    };
    let bytes = std::fs::read(path).map_err(io)?;
    serde_json::from_slice(&bytes).map_err(|e| io(std::io::Error::other(e)))
}

/// One scene per cousin rank `0..selection.k`, written to
/// `out_dir/scene_<source>_c<i>.json` when `out_dir` is given.
///
/// A node dropped from any cousin is dropped from all of them, so every
/// cousin carries the same node set.
pub fn generate_cousins(
    graph: &SceneGraph,
    selection: &CousinSelection,
    catalog: &Catalog,
    cfg: &AssemblyConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<SceneSpec>, AssemblyError> {
    let mut exclude = BTreeSet::new();
    loop {
        let scenes: Vec<SceneSpec> = (0..selection.k)
            .into_par_iter()
            .map(|i| emit_scene_excluding(graph, selection, catalog, i, cfg, None, &exclude))
            .collect::<Result<_, _>>()?;
        let union: BTreeSet<u32> = scenes
            .iter()
            .flat_map(|s| s.provenance.dropped_nodes.iter().copied())
            .collect();
        if union == exclude {
            if let Some(dir) = out_dir {
                scenes.par_iter().try_for_each(|s| {
                    write_scene(s, &dir.join(scene_file_name(&graph.meta.source_id, s.cousin_index)))
                })?;
            }
            return Ok(scenes);
        }
        exclude = union;
    }
}
