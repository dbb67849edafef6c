//! Distillation: per-frame detections, ground masks and frames become a
//! [`SceneGraph`].
//!
//! Two detections are linked when their semantic embeddings have cosine
//! similarity at least `semantic_threshold` *and* their voxelized clouds
//! overlap by at least `overlap_threshold`. Object nodes are the
//! connected components of that relation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::HsvHistogram;
use crate::embed;
use crate::geometry::{
    fit_oriented_box, lift_mask, voxel_downsample, wrap_angle, CameraFrame, GeometryError,
    PointCloud, Vec2, VoxelSet, DEFAULT_VOXEL,
};
use crate::mask::{MaskError, Rle};
use crate::raster::{Patch, RgbImage};
use crate::scenegraph::{
    CropDescriptor, GraphMeta, GroundKind, GroundNode, ObjectNode, SceneGraph, SkyCrop, SkyNode,
};

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("detection ({frame_id}, {det_id}) references unknown frame")]
    UnknownFrame { frame_id: u32, det_id: u32 },
    #[error("duplicate detection ({frame_id}, {det_id})")]
    DuplicateDetection { frame_id: u32, det_id: u32 },
    #[error("detection ({frame_id}, {det_id}): {message}")]
    InvalidDetection {
        frame_id: u32,
        det_id: u32,
        message: String,
    },
    #[error("mask in frame {frame_id}: {source}")]
    Mask {
        frame_id: u32,
        #[source]
        source: MaskError,
    },
    #[error("frame {frame_id}: {source}")]
    Geometry {
        frame_id: u32,
        #[source]
        source: GeometryError,
    },
    #[error("no image for frame {0}")]
    MissingImage(u32),
    #[error("image for frame {frame_id} is {got_w}x{got_h}, frame is {want_w}x{want_h}")]
    ImageSize {
        frame_id: u32,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("invalid fusion config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame_id: u32,
    pub det_id: u32,
    pub label: String,
    pub score: f64,
    pub mask: Rle,
    pub semantic_embed: Vec<f64>,
    pub appearance_embed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundMaskRecord {
    pub frame_id: u32,
    pub kind: GroundKind,
    pub mask: Rle,
    pub patch: Patch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub frame_stride: usize,
    pub semantic_threshold: f64,
    pub overlap_threshold: f64,
    pub voxel: f64,
    pub min_points: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            frame_stride: 3,
            semantic_threshold: 0.80,
            overlap_threshold: 0.30,
            voxel: DEFAULT_VOXEL,
            min_points: 20,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.frame_stride == 0 {
            return Err(FusionError::Config("frame_stride must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.semantic_threshold) {
            return Err(FusionError::Config("semantic_threshold must lie in [-1, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            return Err(FusionError::Config("overlap_threshold must lie in [0, 1]".into()));
        }
        if !(self.voxel > 0.0 && self.voxel.is_finite()) {
            return Err(FusionError::Config("voxel must be positive".into()));
        }
        Ok(())
    }
}

/// Ids of the frames kept by stride sampling: every `stride`-th frame of
/// the id-sorted sequence, starting with the first.
pub fn sampled_frame_ids(frames: &[CameraFrame], stride: usize) -> BTreeSet<u32> {
    let ids: BTreeSet<u32> = frames.iter().map(|f| f.frame_id).collect();
    ids.into_iter().step_by(stride.max(1)).collect()
}

struct LiftedDetection {
    cloud: PointCloud,
    voxels: VoxelSet,
    camera_xy: Vec2,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// The smaller index always becomes the root.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Pairwise merge predicate between two lifted detections.
fn should_merge(
    a: (&DetectionRecord, &LiftedDetection),
    b: (&DetectionRecord, &LiftedDetection),
    cfg: &FusionConfig,
) -> bool {
    if embed::cosine(&a.0.semantic_embed, &b.0.semantic_embed) < cfg.semantic_threshold {
        return false;
    }
    match a.1.voxels.overlap(&b.1.voxels) {
        Ok(o) => o >= cfg.overlap_threshold,
        Err(_) => false,
    }
}

struct Grouping<'a> {
    order: Vec<&'a DetectionRecord>,
    lifted: Vec<LiftedDetection>,
    /// Member indices into `order`, each ascending, groups ordered by
    /// their first member.
    groups: Vec<Vec<usize>>,
}

fn group_detections<'a>(
    frames: &[CameraFrame],
    dets: &'a [DetectionRecord],
    cfg: &FusionConfig,
) -> Result<Grouping<'a>, FusionError> {
    cfg.validate()?;
    let by_id: HashMap<u32, &CameraFrame> = frames.iter().map(|f| (f.frame_id, f)).collect();

    let mut order: Vec<&DetectionRecord> = dets.iter().collect();
    order.sort_by_key(|d| (d.frame_id, d.det_id));
    for w in order.windows(2) {
        if (w[0].frame_id, w[0].det_id) == (w[1].frame_id, w[1].det_id) {
            return Err(FusionError::DuplicateDetection {
                frame_id: w[0].frame_id,
                det_id: w[0].det_id,
            });
        }
    }
    for d in &order {
        if !by_id.contains_key(&d.frame_id) {
            return Err(FusionError::UnknownFrame {
                frame_id: d.frame_id,
                det_id: d.det_id,
            });
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(FusionError::InvalidDetection {
                frame_id: d.frame_id,
                det_id: d.det_id,
                message: format!("score {} outside [0, 1]", d.score),
            });
        }
    }

    let lifted: Vec<LiftedDetection> = order
        .par_iter()
        .map(|d| lift_detection(by_id[&d.frame_id], d, cfg.voxel))
        .collect::<Result<_, _>>()?;

    let n = order.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if should_merge((order[i], &lifted[i]), (order[j], &lifted[j]), cfg) {
                uf.union(i, j);
            }
        }
    }

    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let r = uf.find(i);
        by_root.entry(r).or_default().push(i);
    }
    Ok(Grouping {
        order,
        lifted,
        groups: by_root.into_values().collect(),
    })
}

/// Groups of `(frame_id, det_id)` that fusion merges, before any group is
/// dropped for size or degeneracy. Groups are the connected components of
/// the pairwise merge predicate.
pub fn partition_detections(
    frames: &[CameraFrame],
    dets: &[DetectionRecord],
    cfg: &FusionConfig,
) -> Result<Vec<Vec<(u32, u32)>>, FusionError> {
    let g = group_detections(frames, dets, cfg)?;
    Ok(g.groups
        .iter()
        .map(|m| m.iter().map(|&i| (g.order[i].frame_id, g.order[i].det_id)).collect())
        .collect())
}

/// Fuses detections across frames into persistent object nodes.
///
/// Output is independent of the order of `dets`: detections are processed
/// in ascending `(frame_id, det_id)` order and node ids follow the first
/// member of each group in that order.
pub fn fuse_objects(
    frames: &[CameraFrame],
    dets: &[DetectionRecord],
    cfg: &FusionConfig,
) -> Result<Vec<ObjectNode>, FusionError> {
    let Grouping { order, lifted, groups } = group_detections(frames, dets, cfg)?;

    let mut nodes = Vec::new();
    for members in &groups {
        let total: usize = members.iter().map(|&i| lifted[i].cloud.len()).sum();
        if total < cfg.min_points {
            continue;
        }
        let mut cloud = PointCloud::default();
        for &i in members {
            cloud.extend_from(&lifted[i].cloud);
        }
        let bbox = match fit_oriented_box(&cloud) {
            Ok(b) => b,
            Err(e) => {
                let d = order[members[0]];
                warn!("dropping group led by ({}, {}): {e}", d.frame_id, d.det_id);
                continue;
            }
        };

        let mut toward_cameras = Vec2::zeros();
        for &i in members {
            toward_cameras += lifted[i].camera_xy - bbox.center.xy();
        }
        let facing = Vec2::new(bbox.yaw.cos(), bbox.yaw.sin());
        let heading = if facing.dot(&toward_cameras) >= 0.0 {
            bbox.yaw
        } else {
            wrap_angle(bbox.yaw + std::f64::consts::PI)
        };

        let crops = members
            .iter()
            .map(|&i| {
                let d = order[i];
                CropDescriptor::new(
                    d.frame_id,
                    d.semantic_embed.clone(),
                    d.appearance_embed.clone(),
                    None,
                )
            })
            .collect();

        nodes.push(ObjectNode {
            node_id: nodes.len() as u32,
            category: modal_label(members.iter().map(|&i| order[i].label.as_str())),
            centroid: bbox.center,
            bbox,
            heading,
            crops,
        });
    }
    Ok(nodes)
}

fn lift_detection(
    frame: &CameraFrame,
    det: &DetectionRecord,
    voxel: f64,
) -> Result<LiftedDetection, FusionError> {
    let mask = det.mask.decode().map_err(|source| FusionError::Mask {
        frame_id: det.frame_id,
        source,
    })?;
    let cloud = match lift_mask(frame, &mask) {
        Ok(c) => c,
        Err(GeometryError::EmptyCloud) => PointCloud::default(),
        Err(source) => {
            return Err(FusionError::Geometry {
                frame_id: det.frame_id,
                source,
            })
        }
    };
    let voxels = VoxelSet::from_cloud(&cloud, voxel).map_err(|source| FusionError::Geometry {
        frame_id: det.frame_id,
        source,
    })?;
    Ok(LiftedDetection {
        cloud,
        voxels,
        camera_xy: frame.pose.translation().xy(),
    })
}

/// Most frequent label; ties go to the lexicographically smallest.
pub fn modal_label<'a>(labels: impl IntoIterator<Item = &'a str>) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    counts
        .into_iter()
        .find(|(_, c)| *c == best)
        .map(|(l, _)| l.to_string())
        .unwrap_or_default()
}

/// Lifts and fuses road and sidewalk masks into one voxel-downsampled
/// cloud per kind. Kinds without any valid pixel are absent.
pub fn fuse_ground(
    frames: &[CameraFrame],
    masks: &[GroundMaskRecord],
    cfg: &FusionConfig,
) -> Result<Vec<GroundNode>, FusionError> {
    cfg.validate()?;
    let by_id: HashMap<u32, &CameraFrame> = frames.iter().map(|f| (f.frame_id, f)).collect();
    let mut sorted: Vec<&GroundMaskRecord> = masks.iter().collect();
    sorted.sort_by_key(|m| (m.kind, m.frame_id));

    let mut nodes = Vec::new();
    for kind in [GroundKind::Road, GroundKind::Sidewalk] {
        let mut cloud = PointCloud::default();
        let mut crops = Vec::new();
        for m in sorted.iter().filter(|m| m.kind == kind) {
            let frame = by_id.get(&m.frame_id).ok_or(FusionError::UnknownFrame {
                frame_id: m.frame_id,
                det_id: u32::MAX,
            })?;
            let mask = m.mask.decode().map_err(|source| FusionError::Mask {
                frame_id: m.frame_id,
                source,
            })?;
            match lift_mask(frame, &mask) {
                Ok(c) => cloud.extend_from(&c),
                Err(GeometryError::EmptyCloud) => {}
                Err(source) => {
                    return Err(FusionError::Geometry {
                        frame_id: m.frame_id,
                        source,
                    })
                }
            }
            crops.push(CropDescriptor::ground(m.frame_id, m.patch.clone()));
        }
        if cloud.is_empty() {
            continue;
        }
        let cloud = voxel_downsample(&cloud, cfg.voxel).map_err(|source| FusionError::Geometry {
            frame_id: 0,
            source,
        })?;
        nodes.push(GroundNode { kind, cloud, crops });
    }
    Ok(nodes)
}

/// One HSV histogram of the upper image half per frame, in frame order.
pub fn extract_sky(
    frames: &[CameraFrame],
    images: &BTreeMap<u32, RgbImage>,
) -> Result<SkyNode, FusionError> {
    let mut ids: Vec<&CameraFrame> = frames.iter().collect();
    ids.sort_by_key(|f| f.frame_id);
    let mut crops = Vec::with_capacity(ids.len());
    for f in ids {
        let img = images.get(&f.frame_id).ok_or(FusionError::MissingImage(f.frame_id))?;
        if img.width != f.width() || img.height != f.height() {
            return Err(FusionError::ImageSize {
                frame_id: f.frame_id,
                got_w: img.width,
                got_h: img.height,
                want_w: f.width(),
                want_h: f.height(),
            });
        }
        crops.push(SkyCrop {
            frame_id: f.frame_id,
            hist: HsvHistogram::from_pixels(img.upper_half()),
        });
    }
    Ok(SkyNode { crops })
}

/// Everything distillation consumes for one clip.
#[derive(Debug, Clone, Default)]
pub struct DistillInput {
    pub source_id: String,
    pub frames: Vec<CameraFrame>,
    pub detections: Vec<DetectionRecord>,
    pub ground_masks: Vec<GroundMaskRecord>,
    pub images: BTreeMap<u32, RgbImage>,
}

/// Full distillation: stride sampling, object fusion, ground fusion and
/// sky extraction. Records from frames dropped by the stride are ignored.
pub fn distill(input: &DistillInput, cfg: &FusionConfig) -> Result<SceneGraph, FusionError> {
    cfg.validate()?;
    let kept = sampled_frame_ids(&input.frames, cfg.frame_stride);
    let frames: Vec<CameraFrame> = input
        .frames
        .iter()
        .filter(|f| kept.contains(&f.frame_id))
        .cloned()
        .collect();
    let known: BTreeSet<u32> = input.frames.iter().map(|f| f.frame_id).collect();
    for d in &input.detections {
        if !known.contains(&d.frame_id) {
            return Err(FusionError::UnknownFrame {
                frame_id: d.frame_id,
                det_id: d.det_id,
            });
        }
    }
    let dets: Vec<DetectionRecord> = input
        .detections
        .iter()
        .filter(|d| kept.contains(&d.frame_id))
        .cloned()
        .collect();
    let grounds_in: Vec<GroundMaskRecord> = input
        .ground_masks
        .iter()
        .filter(|m| kept.contains(&m.frame_id))
        .cloned()
        .collect();

    let objects = fuse_objects(&frames, &dets, cfg)?;
    let grounds = fuse_ground(&frames, &grounds_in, cfg)?;
    let sky = extract_sky(&frames, &input.images)?;
    Ok(SceneGraph {
        meta: GraphMeta {
            source_id: input.source_id.clone(),
            frame_count: frames.len() as u32,
            provenance: None,
        },
        objects,
        grounds,
        sky,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DepthMap, Intrinsics, Pose, Vec3};
    use crate::mask::BinaryMask;

    fn frame(id: u32, depth: f32) -> CameraFrame {
        CameraFrame::new(
            id,
            Intrinsics { fx: 10.0, fy: 10.0, cx: 5.0, cy: 5.0 },
            Pose::identity(),
            DepthMap::filled(10, 10, depth),
        )
        .unwrap()
    }

    fn det(frame_id: u32, det_id: u32, label: &str, mask: &BinaryMask, sem: Vec<f64>) -> DetectionRecord {
        DetectionRecord {
            frame_id,
            det_id,
            label: label.into(),
            score: 0.9,
            mask: mask.to_rle(),
            semantic_embed: sem,
            appearance_embed: vec![1.0, 0.0],
        }
    }

    fn cfg() -> FusionConfig {
        FusionConfig { min_points: 3, ..FusionConfig::default() }
    }

    #[test]
    fn perfect_duplicate_merges() {
        // Stepped depth so the lifted cloud has volume.
        let mut depth = DepthMap::filled(10, 10, 5.0);
        for v in 0..10 {
            depth.set(v, v, 5.5);
        }
        let f0 = CameraFrame { frame_id: 0, ..frame(0, 5.0) };
        let f0 = CameraFrame { depth: depth.clone(), ..f0 };
        let f1 = CameraFrame { frame_id: 1, depth, ..frame(1, 5.0) };
        let m = BinaryMask::from_fn(10, 10, |_, _| true);
        let dets = vec![det(0, 0, "bench", &m, vec![1.0, 0.0]), det(1, 0, "bench", &m, vec![1.0, 0.0])];
        let nodes = fuse_objects(&[f0, f1], &dets, &cfg()).unwrap();
        assert_eq!(nodes.len(), 1);
        assert_eq!(nodes[0].crops.len(), 2);
        assert_eq!(nodes[0].category, "bench");
    }

    #[test]
    fn disjoint_clouds_never_merge() {
        let mut d = DepthMap::filled(10, 10, 5.0);
        for v in 0..10 {
            d.set(v, v, 6.0);
        }
        let f0 = CameraFrame { depth: d.clone(), ..frame(0, 5.0) };
        let f1 = CameraFrame { depth: d, ..frame(1, 5.0) };
        let left = BinaryMask::from_fn(10, 10, |u, _| u < 4);
        let right = BinaryMask::from_fn(10, 10, |u, _| u >= 6);
        let dets = vec![det(0, 0, "bench", &left, vec![1.0, 0.0]), det(1, 0, "bench", &right, vec![1.0, 0.0])];
        let nodes = fuse_objects(&[f0, f1], &dets, &cfg()).unwrap();
        assert_eq!(nodes.len(), 2);
    }

    #[test]
    fn unknown_frame_and_empty_input() {
        let m = BinaryMask::from_fn(10, 10, |_, _| true);
        let err = fuse_objects(&[frame(0, 1.0)], &[det(7, 0, "x", &m, vec![1.0])], &cfg()).unwrap_err();
        assert!(matches!(err, FusionError::UnknownFrame { frame_id: 7, .. }));
        assert!(fuse_objects(&[frame(0, 1.0)], &[], &cfg()).unwrap().is_empty());
    }

    #[test]
    fn modal_label_ties() {
        assert_eq!(modal_label(["car", "bus", "car", "bus"]), "bus");
        assert_eq!(modal_label(["tree", "car", "tree"]), "tree");
    }

    #[test]
    fn stride_sampling() {
        let frames: Vec<_> = (0..7).map(|i| frame(i * 2, 1.0)).collect();
        let kept: Vec<u32> = sampled_frame_ids(&frames, 3).into_iter().collect();
        assert_eq!(kept, vec![0, 6, 12]);
    }

    #[test]
    fn ground_absent_kind_and_plane() {
        // Camera 2 m above the ground looking straight down.
        let down = nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let pose = Pose::new(down, Vec3::new(0.0, 0.0, 2.0)).unwrap();
        let f = CameraFrame { pose, ..frame(0, 2.0) };
        let full = BinaryMask::from_fn(10, 10, |_, _| true).to_rle();
        let masks = vec![GroundMaskRecord { frame_id: 0, kind: GroundKind::Road, mask: full, patch: Patch::filled([9, 9, 9]) }];
        let g = fuse_ground(&[f], &masks, &FusionConfig::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].kind, GroundKind::Road);
        assert!(g[0].cloud.points.iter().all(|p| p.z.abs() < 1e-6));
        assert_eq!(g[0].crops.len(), 1);
    }

    #[test]
    fn sky_histograms() {
        let f0 = frame(0, 1.0);
        let f1 = frame(1, 1.0);
        let mut images = BTreeMap::new();
        let mut img = RgbImage::filled(10, 10, [0, 0, 0]);
        for v in 0..5 {
            for u in 0..10 {
                img.put(u, v, [255, 0, 0]);
            }
        }
        images.insert(0, img.clone());
        images.insert(1, img);
        let sky = extract_sky(&[f1.clone(), f0.clone()], &images).unwrap();
        assert_eq!(sky.crops.len(), 2);
        assert_eq!(sky.crops[0].frame_id, 0);
        assert_eq!(sky.crops[0].hist.0[63], 1.0);

        images.remove(&1);
        assert!(matches!(extract_sky(&[f0, f1], &images), Err(FusionError::MissingImage(1))));
    }
}
