//! Digital-cousin retrieval.
//!
//! Each object node goes through three stages: pick the best-matching
//! catalog category from semantic embeddings, keep the `top_n` assets of
//! that category with the least bounding-box distortion, then re-rank the
//! survivors by appearance similarity and keep `k`. Ground nodes are
//! matched to materials by pixel MSE and the sky node to sky assets by
//! HSV-histogram L1 distance.
//!
//! Every ranking is a total order: equal scores fall back to ascending id.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::color::HsvHistogram;
use crate::embed;
use crate::geometry::Vec3;
use crate::provenance::Provenance;
use crate::raster::Patch;
use crate::scenegraph::{GroundKind, GroundNode, ObjectNode, SceneGraph, SkyNode, UNIT_TOL};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_TOP_N: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("asset catalog is empty")]
    EmptyCatalog,
    #[error("dimensions must be positive: {0:?}")]
    NonPositiveDims([f64; 3]),
    #[error("node has no crops")]
    NoCrops,
    #[error("ground node has no pixel patches")]
    NoPatches,
    #[error("no {0} materials in catalog")]
    NoMaterialsOfKind(&'static str),
    #[error("sky node has no crops")]
    EmptySky,
    #[error("sky catalog is empty")]
    NoSkies,
    #[error("invalid record {id}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("node {node_id}: {source}")]
    Node {
        node_id: u32,
        #[source]
        source: Box<RetrievalError>,
    },
    #[error("{kind} ground: {source}")]
    Ground {
        kind: &'static str,
        #[source]
        source: Box<RetrievalError>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetRecord {
    pub asset_id: String,
    pub category: String,
    /// Metric bounding dims (x along the canonical front).
    pub dims: Vec3,
    pub front_yaw: f64,
    pub mass: f64,
    pub static_friction: f64,
    pub dynamic_friction: f64,
    pub restitution: f64,
    /// Open annotated attribute map; only the physics subset above is checked.
    #[serde(default)]
    pub attributes: BTreeMap<String, serde_json::Value>,
    pub category_embed: Vec<f64>,
    pub thumbnail_embed: Vec<f64>,
}

impl AssetRecord {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: &str| {
            Err(RetrievalError::InvalidRecord {
                id: self.asset_id.clone(),
                message: m.to_string(),
            })
        };
        if self.asset_id.is_empty() || self.category.is_empty() {
            return bad("asset_id and category must be non-empty");
        }
        if !self.dims.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return bad("dims must be positive");
        }
        if !self.front_yaw.is_finite() {
            return bad("front_yaw must be finite");
        }
        for (name, v) in [
            ("mass", self.mass),
            ("static_friction", self.static_friction),
            ("dynamic_friction", self.dynamic_friction),
            ("restitution", self.restitution),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        if self.restitution > 1.0 {
            return bad("restitution must lie in [0, 1]");
        }
        if !embed::is_unit(&self.category_embed, UNIT_TOL) {
            return bad("category_embed must be unit length");
        }
        if !embed::is_unit(&self.thumbnail_embed, UNIT_TOL) {
            return bad("thumbnail_embed must be unit length");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundMaterial {
    pub material_id: String,
    pub kind: GroundKind,
    pub thumb: Patch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkyAsset {
    pub sky_id: String,
    pub hsv_hist: HsvHistogram,
}

/// Validated, id-sorted asset catalog with a per-category index.
#[derive(Debug, Clone)]
pub struct Catalog {
    assets: Vec<AssetRecord>,
    by_id: HashMap<String, usize>,
    by_category: BTreeMap<String, Vec<usize>>,
}

impl Catalog {
    pub fn new(mut assets: Vec<AssetRecord>) -> Result<Self, RetrievalError> {
        assets.sort_by(|a, b| a.asset_id.cmp(&b.asset_id));
        let mut by_id = HashMap::with_capacity(assets.len());
        let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, a) in assets.iter().enumerate() {
            a.validate()?;
            if by_id.insert(a.asset_id.clone(), i).is_some() {
                return Err(RetrievalError::DuplicateId(a.asset_id.clone()));
            }
            by_category.entry(a.category.clone()).or_default().push(i);
        }
        Ok(Self {
            assets,
            by_id,
            by_category,
        })
    }

    pub fn assets(&self) -> &[AssetRecord] {
        &self.assets
    }

    pub fn get(&self, asset_id: &str) -> Option<&AssetRecord> {
        self.by_id.get(asset_id).map(|&i| &self.assets[i])
    }

    pub fn in_category(&self, category: &str) -> Vec<&AssetRecord> {
        self.by_category
            .get(category)
            .map(|ix| ix.iter().map(|&i| &self.assets[i]).collect())
            .unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }
}

/// Reads one JSON record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RetrievalError> {
    let p = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| RetrievalError::Parse {
        path: p.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_jsonl(std::io::BufReader::new(file), &p)
}

pub fn parse_jsonl<T: DeserializeOwned, R: BufRead>(reader: R, name: &str) -> Result<Vec<T>, RetrievalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RetrievalError::Parse {
            path: name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let rec = serde_path_to_error::deserialize(de).map_err(|e| RetrievalError::Parse {
            path: name.to_string(),
            line: i + 1,
            message: format!("{}: {}", e.path(), e.inner()),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn mean_embedding<'a>(vs: impl IntoIterator<Item = &'a [f64]>) -> Option<Vec<f64>> {
    embed::mean(vs)
}

/// The catalog category whose assets' category embeddings best match the
/// mean semantic embedding of the node's crops. A category scores the best
/// cosine over its assets; ties go to the lexicographically smallest name.
pub fn semantic_match(node: &ObjectNode, catalog: &Catalog) -> Result<(String, f64), RetrievalError> {
    if catalog.is_empty() {
        return Err(RetrievalError::EmptyCatalog);
    }
    let query = mean_embedding(node.crops.iter().map(|c| c.semantic_embed.as_slice()))
        .ok_or(RetrievalError::NoCrops)?;
    let mut best: Option<(&str, f64)> = None;
    for (cat, ix) in &catalog.by_category {
        let score = ix
            .iter()
            .map(|&i| embed::cosine(&query, &catalog.assets[i].category_embed))
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((cat, score));
        }
    }
    let (cat, score) = best.ok_or(RetrievalError::EmptyCatalog)?;
    Ok((cat.to_string(), score))
}

/// Minimal bounding-box distortion: the mean absolute log-ratio of the
/// three dims, minimized over the two horizontal axis assignments.
pub fn mbbd(query_dims: &Vec3, asset_dims: &Vec3) -> Result<f64, RetrievalError> {
    for d in [query_dims, asset_dims] {
        if !d.iter().all(|x| *x > 0.0 && x.is_finite()) {
            return Err(RetrievalError::NonPositiveDims([d.x, d.y, d.z]));
        }
    }
    let cost = |ax: f64, ay: f64| {
        ((ax / query_dims.x).ln().abs() + (ay / query_dims.y).ln().abs()
            + (asset_dims.z / query_dims.z).ln().abs())
            / 3.0
    };
    Ok(cost(asset_dims.x, asset_dims.y).min(cost(asset_dims.y, asset_dims.x)))
}

/// Assets sorted by ascending distortion against `query_dims` (ties by
/// id), truncated to `top_n`.
pub fn geometry_filter<'a>(
    query_dims: &Vec3,
    assets: &[&'a AssetRecord],
    top_n: usize,
) -> Result<Vec<(&'a AssetRecord, f64)>, RetrievalError> {
    let mut scored = assets
        .iter()
        .map(|a| Ok((*a, mbbd(query_dims, &a.dims)?)))
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    scored.sort_by(|(a, sa), (b, sb)| sa.total_cmp(sb).then_with(|| a.asset_id.cmp(&b.asset_id)));
    scored.truncate(top_n);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredAsset {
    pub asset_id: String,
    pub semantic: f64,
    pub mbbd: f64,
    pub appearance: f64,
}

/// Mean over the node's crops of cosine(appearance crop, thumbnail), best
/// first, top `k`.
pub fn appearance_rank(
    node: &ObjectNode,
    candidates: &[(&AssetRecord, f64)],
    k: usize,
) -> Result<Vec<ScoredAsset>, RetrievalError> {
    if node.crops.is_empty() {
        return Err(RetrievalError::NoCrops);
    }
    let n = node.crops.len() as f64;
    let mut scored: Vec<ScoredAsset> = candidates
        .iter()
        .map(|(a, distortion)| {
            let sum: f64 = node
                .crops
                .iter()
                .map(|c| embed::cosine(&c.appearance_embed, &a.thumbnail_embed))
                .sum();
            ScoredAsset {
                asset_id: a.asset_id.clone(),
                semantic: 0.0,
                mbbd: *distortion,
                appearance: sum / n,
            }
        })
        .collect();
    scored.sort_by(|a, b| {
        b.appearance
            .total_cmp(&a.appearance)
            .then_with(|| a.asset_id.cmp(&b.asset_id))
    });
    scored.truncate(k);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredMaterial {
    pub material_id: String,
    pub mse: f64,
}

/// Materials of the ground's kind ranked by mean pixel MSE against the
/// ground's patches.
pub fn match_ground_material(
    ground: &GroundNode,
    materials: &[GroundMaterial],
    k: usize,
) -> Result<Vec<ScoredMaterial>, RetrievalError> {
    let patches: Vec<&Patch> = ground.crops.iter().filter_map(|c| c.pixel_patch.as_ref()).collect();
    if patches.is_empty() {
        return Err(RetrievalError::NoPatches);
    }
    let mut scored: Vec<ScoredMaterial> = materials
        .iter()
        .filter(|m| m.kind == ground.kind)
        .map(|m| ScoredMaterial {
            material_id: m.material_id.clone(),
            mse: patches.iter().map(|p| p.mse(&m.thumb)).sum::<f64>() / patches.len() as f64,
        })
        .collect();
    if scored.is_empty() {
        return Err(RetrievalError::NoMaterialsOfKind(ground.kind.as_str()));
    }
    scored.sort_by(|a, b| a.mse.total_cmp(&b.mse).then_with(|| a.material_id.cmp(&b.material_id)));
    scored.truncate(k);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredSky {
    pub sky_id: String,
    pub distance: f64,
}

/// Sky assets ranked by L1 distance to the mean sky-crop histogram.
pub fn match_sky(sky: &SkyNode, skies: &[SkyAsset], k: usize) -> Result<Vec<ScoredSky>, RetrievalError> {
    let mean = HsvHistogram::mean(sky.crops.iter().map(|c| &c.hist)).ok_or(RetrievalError::EmptySky)?;
    if skies.is_empty() {
        return Err(RetrievalError::NoSkies);
    }
    let mut scored: Vec<ScoredSky> = skies
        .iter()
        .map(|s| ScoredSky {
            sky_id: s.sky_id.clone(),
            distance: mean.l1(&s.hsv_hist),
        })
        .collect();
    scored.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.sky_id.cmp(&b.sky_id)));
    scored.truncate(k);
    Ok(scored)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSelection {
    pub node_id: u32,
    pub category: String,
    /// Number of assets that survived geometry filtering.
    pub survivors: usize,
    pub candidates: Vec<ScoredAsset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub top_n: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            top_n: DEFAULT_TOP_N,
        }
    }
}

/// Ranked cousins for every node of one scene graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CousinSelection {
    pub source_id: String,
    pub k: usize,
    pub objects: Vec<ObjectSelection>,
    pub grounds: BTreeMap<GroundKind, Vec<ScoredMaterial>>,
    pub sky: Vec<ScoredSky>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl CousinSelection {
    pub fn object(&self, node_id: u32) -> Option<&ObjectSelection> {
        self.objects.iter().find(|o| o.node_id == node_id)
    }
}

pub fn select_for_node(
    node: &ObjectNode,
    catalog: &Catalog,
    cfg: &RetrievalConfig,
) -> Result<ObjectSelection, RetrievalError> {
    let (category, _) = semantic_match(node, catalog)?;
    let pool = catalog.in_category(&category);
    let survivors = geometry_filter(&node.bbox.dims, &pool, cfg.top_n)?;
    let mut ranked = appearance_rank(node, &survivors, cfg.k)?;
    let query = mean_embedding(node.crops.iter().map(|c| c.semantic_embed.as_slice()))
        .ok_or(RetrievalError::NoCrops)?;
    for r in &mut ranked {
        let a = catalog.get(&r.asset_id).expect("ranked asset comes from catalog");
        r.semantic = embed::cosine(&query, &a.category_embed);
    }
    Ok(ObjectSelection {
        node_id: node.node_id,
        category,
        survivors: survivors.len(),
        candidates: ranked,
    })
}

/// Runs all three object stages per node plus ground and sky matching.
/// Nodes are processed in parallel; output order follows node ids.
pub fn materialize(
    graph: &SceneGraph,
    catalog: &Catalog,
    materials: &[GroundMaterial],
    skies: &[SkyAsset],
    cfg: &RetrievalConfig,
) -> Result<CousinSelection, RetrievalError> {
    let objects = graph
        .objects
        .par_iter()
        .map(|node| {
            select_for_node(node, catalog, cfg).map_err(|e| RetrievalError::Node {
                node_id: node.node_id,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut grounds = BTreeMap::new();
    for g in &graph.grounds {
        let ranked = match_ground_material(g, materials, cfg.k).map_err(|e| RetrievalError::Ground {
            kind: g.kind.as_str(),
            source: Box::new(e),
        })?;
        grounds.insert(g.kind, ranked);
    }
    let sky = match_sky(&graph.sky, skies, cfg.k)?;
    Ok(CousinSelection {
        source_id: graph.meta.source_id.clone(),
        k: cfg.k,
        objects,
        grounds,
        sky,
        provenance: None,
    })
}
