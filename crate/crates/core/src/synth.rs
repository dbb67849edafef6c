//! Seeded synthetic fixtures: asset catalogs, ground materials, sky maps,
//! random scene graphs, slalom obstacle courses, and a planted street scene
//! rendered analytically into depth, masks, images and embeddings.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::color::HsvHistogram;
use crate::embed;
use crate::evaluation::GtObject;
use crate::fusion::{DetectionRecord, DistillInput, GroundMaskRecord};
use crate::geometry::{CameraFrame, DepthMap, Intrinsics, OrientedBox, PointCloud, Pose, Vec2, Vec3};
use crate::mask::BinaryMask;
use crate::raster::{Patch, RgbImage, PATCH_BYTES};
use crate::retrieval::{AssetRecord, GroundMaterial, SkyAsset};
use crate::scenegraph::{
    CropDescriptor, GraphMeta, GroundKind, GroundNode, ObjectNode, SceneGraph, SkyCrop, SkyNode,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Category name and nominal (long, short, height) size in meters.
pub const CATEGORIES: [(&str, [f64; 3]); 10] = [
    ("car", [4.5, 1.8, 1.5]),
    ("bench", [1.8, 0.6, 0.9]),
    ("trash_bin", [0.8, 0.55, 1.0]),
    ("street_lamp", [0.6, 0.35, 4.0]),
    ("bicycle", [1.7, 0.5, 1.0]),
    ("hydrant", [0.55, 0.4, 0.8]),
    ("mailbox", [0.7, 0.45, 1.2]),
    ("planter", [1.5, 0.8, 0.7]),
    ("bollard", [0.4, 0.25, 1.0]),
    ("scooter", [1.2, 0.4, 1.1]),
];

pub const SEMANTIC_DIM: usize = 16;
pub const APPEARANCE_DIM: usize = 32;

pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: Vec<f64> = (0..dim).map(|_| n.sample(rng)).collect();
        if embed::norm(&v) > 1e-6 {
            return embed::normalized(v);
        }
    }
}

/// `v` plus isotropic Gaussian noise, renormalized.
pub fn jitter<R: Rng>(rng: &mut R, v: &[f64], std: f64) -> Vec<f64> {
    if std <= 0.0 {
        return v.to_vec();
    }
    let n = Normal::new(0.0, std).expect("finite std");
    embed::normalized(v.iter().map(|x| x + n.sample(rng)).collect())
}

/// Per-category semantic embedding, shared by every asset of the category.
pub fn category_embeds<R: Rng>(rng: &mut R) -> BTreeMap<String, Vec<f64>> {
    CATEGORIES
        .iter()
        .map(|(c, _)| (c.to_string(), random_unit(rng, SEMANTIC_DIM)))
        .collect()
}

/// `n` assets spread round-robin over [`CATEGORIES`]. Sizes scale the
/// nominal ones by 0.8..1.25 per axis, keeping the long axis at least 1.2
/// times the short one; fronts face +x or -x.
pub fn random_catalog<R: Rng>(rng: &mut R, n: usize) -> Vec<AssetRecord> {
    let cats = category_embeds(rng);
    (0..n)
        .map(|i| {
            let (cat, nominal) = CATEGORIES[i % CATEGORIES.len()];
            let mut d: Vec<f64> = nominal.iter().map(|x| x * rng.random_range(0.8..1.25)).collect();
            if d[0] < 1.2 * d[1] {
                d[0] = 1.2 * d[1] + rng.random_range(0.0..0.2);
            }
            let mut attributes = BTreeMap::new();
            attributes.insert("material".into(), serde_json::json!(["metal", "wood", "plastic"][i % 3]));
            AssetRecord {
                asset_id: format!("asset_{i:05}"),
                category: cat.to_string(),
                dims: Vec3::new(d[0], d[1], d[2]),
                front_yaw: if rng.random_bool(0.5) { 0.0 } else { PI },
                mass: rng.random_range(1.0..1500.0),
                static_friction: rng.random_range(0.3..0.9),
                dynamic_friction: rng.random_range(0.2..0.7),
                restitution: rng.random_range(0.0..0.5),
                attributes,
                category_embed: cats[cat].clone(),
                thumbnail_embed: random_unit(rng, APPEARANCE_DIM),
            }
        })
        .collect()
}

pub fn noisy_patch<R: Rng>(rng: &mut R, base: [u8; 3], amplitude: u8) -> Patch {
    let bytes: Vec<u8> = (0..PATCH_BYTES)
        .map(|i| {
            let c = base[i % 3] as i32;
            let a = amplitude as i32;
            (c + rng.random_range(-a..=a)).clamp(0, 255) as u8
        })
        .collect();
    Patch::from_bytes(&bytes).expect("patch size")
}

fn random_rgb<R: Rng>(rng: &mut R) -> [u8; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// `per_kind` road and `per_kind` sidewalk materials with noisy solid
/// thumbnails.
pub fn random_materials<R: Rng>(rng: &mut R, per_kind: usize) -> Vec<GroundMaterial> {
    let mut out = Vec::new();
    for kind in [GroundKind::Road, GroundKind::Sidewalk] {
        for i in 0..per_kind {
            let base = random_rgb(rng);
            out.push(GroundMaterial {
                material_id: format!("{}_{i:03}", kind.as_str()),
                kind,
                thumb: noisy_patch(rng, base, 6),
            });
        }
    }
    out
}

pub fn random_histogram<R: Rng>(rng: &mut R) -> HsvHistogram {
    let pixels: Vec<[u8; 3]> = {
        let a = random_rgb(rng);
        let b = random_rgb(rng);
        (0..256).map(|i| if i % 3 == 0 { a } else { b }).collect()
    };
    HsvHistogram::from_pixels(pixels)
}

pub fn random_skies<R: Rng>(rng: &mut R, n: usize) -> Vec<SkyAsset> {
    (0..n)
        .map(|i| SkyAsset {
            sky_id: format!("sky_{i:03}"),
            hsv_hist: random_histogram(rng),
        })
        .collect()
}

fn grid_cloud<R: Rng>(rng: &mut R, x: [f64; 2], y: [f64; 2], z: f64, step: f64, z_noise: f64) -> PointCloud {
    let mut pts = Vec::new();
    let nx = ((x[1] - x[0]) / step).round() as usize;
    let ny = ((y[1] - y[0]) / step).round() as usize;
    for i in 0..=nx {
        for j in 0..=ny {
            let dz = if z_noise > 0.0 { rng.random_range(-z_noise..z_noise) } else { 0.0 };
            pts.push(Vec3::new(x[0] + i as f64 * step, y[0] + j as f64 * step, z + dz));
        }
    }
    PointCloud::new(pts)
}

/// Random valid scene graph: `n_objects` nodes drawn from `catalog` at
/// random positions in a 20 m square (overlaps are likely), a road, a
/// sidewalk strip and a few sky crops. Crop embeddings are jittered copies
/// of the source asset's.
pub fn random_graph<R: Rng>(rng: &mut R, catalog: &[AssetRecord], n_objects: usize, source_id: &str) -> SceneGraph {
    let objects = (0..n_objects)
        .map(|i| {
            let a = &catalog[rng.random_range(0..catalog.len())];
            let yaw = rng.random_range(-PI / 2.0..PI / 2.0);
            let heading = if rng.random_bool(0.5) { yaw } else { crate::geometry::wrap_angle(yaw + PI) };
            let center = Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), a.dims.z / 2.0);
            let bbox = OrientedBox::new(center, a.dims, yaw);
            let crops = (0..rng.random_range(1..=3))
                .map(|f| {
                    CropDescriptor::new(
                        f,
                        jitter(rng, &a.category_embed, 0.01),
                        jitter(rng, &a.thumbnail_embed, 0.01),
                        None,
                    )
                })
                .collect();
            ObjectNode {
                node_id: i as u32,
                category: a.category.clone(),
                centroid: center,
                bbox,
                heading,
                crops,
            }
        })
        .collect();
    let road_z = rng.random_range(-0.05..0.05);
    let road = GroundNode {
        kind: GroundKind::Road,
        cloud: grid_cloud(rng, [-15.0, 15.0], [-15.0, 15.0], road_z, 1.0, 0.01),
        crops: vec![CropDescriptor::ground(0, noisy_patch(rng, [90, 90, 95], 8))],
    };
    let sidewalk = GroundNode {
        kind: GroundKind::Sidewalk,
        cloud: grid_cloud(rng, [-15.0, 15.0], [4.0, 9.0], 0.12, 0.5, 0.01),
        crops: vec![CropDescriptor::ground(0, noisy_patch(rng, [180, 160, 130], 8))],
    };
    let sky = SkyNode {
        crops: (0..3).map(|f| SkyCrop { frame_id: f, hist: random_histogram(rng) }).collect(),
    };
    SceneGraph {
        meta: GraphMeta { source_id: source_id.into(), frame_count: 3, provenance: None },
        objects,
        grounds: vec![road, sidewalk],
        sky,
    }
}

/// Obstacle course along +x: six boxes alternating left and right of the
/// x axis between x = 4 and x = 24, their inner edges 0.15 m to 0.9 m from
/// the axis, so a disc agent driving along the axis sometimes grazes them.
pub fn slalom_obstacles<R: Rng>(rng: &mut R) -> Vec<(u32, OrientedBox)> {
    (0..6)
        .map(|i| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            let dims = Vec3::new(rng.random_range(1.0..2.0), rng.random_range(0.6..1.0), 1.0);
            let yaw: f64 = rng.random_range(-0.2..0.2);
            let half_y = 0.5 * dims.x * yaw.sin().abs() + 0.5 * dims.y * yaw.cos().abs();
            let inner = rng.random_range(0.15..0.9);
            let c = Vec3::new(4.0 + 4.0 * i as f64 + rng.random_range(-0.5..0.5), side * (inner + half_y), 0.5);
            (i as u32, OrientedBox::new(c, dims, yaw))
        })
        .collect()
}

/// Layout and camera parameters of the planted street scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub n_objects: usize,
    pub n_frames: usize,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub ring_radius: f64,
    pub camera_height: f64,
    /// Ground pixels are labeled on a grid with this pixel pitch.
    pub ground_pitch: u32,
    pub embed_noise: f64,
    pub catalog_size: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_objects: 15,
            n_frames: 24,
            width: 480,
            height: 360,
            focal: 360.0,
            ring_radius: 28.0,
            camera_height: 14.0,
            ground_pitch: 6,
            embed_noise: 0.02,
            catalog_size: 200,
        }
    }
}

pub const ROAD_HALF: f64 = 30.0;
pub const ROAD_RGB: [u8; 3] = [88, 88, 94];
pub const SIDEWALK_RGB: [u8; 3] = [176, 160, 132];
/// Sidewalk strip, (x range, y range), raised 15 cm above the road.
pub const SIDEWALK_RECT: ([f64; 2], [f64; 2]) = ([-22.0, 22.0], [5.0, 11.0]);
pub const SIDEWALK_Z: f64 = 0.15;

/// A street scene with known ground truth, ready for distillation.
#[derive(Debug, Clone)]
pub struct PlantedScene {
    pub input: DistillInput,
    pub catalog: Vec<AssetRecord>,
    pub materials: Vec<GroundMaterial>,
    pub skies: Vec<SkyAsset>,
    pub gt: Vec<GtObject>,
    pub road_material: String,
    pub sidewalk_material: String,
}

fn in_sidewalk(x: f64, y: f64) -> bool {
    let (sx, sy) = SIDEWALK_RECT;
    (sx[0]..=sx[1]).contains(&x) && (sy[0]..=sy[1]).contains(&y)
}

/// Entry distance of the ray `o + t d` into box `b`, if it hits.
fn ray_box(o: &Vec3, d: &Vec3, b: &OrientedBox) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    let rel = o - b.center;
    let lo = Vec3::new(c * rel.x + s * rel.y, -s * rel.x + c * rel.y, rel.z);
    let ld = Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z);
    let half = b.dims / 2.0;
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if ld[k].abs() < 1e-15 {
            if lo[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let a = (-half[k] - lo[k]) / ld[k];
        let bb = (half[k] - lo[k]) / ld[k];
        t0 = t0.max(a.min(bb));
        t1 = t1.min(a.max(bb));
    }
    (t0 <= t1 && t0 > 1e-9).then_some(t0)
}

#[derive(Clone, Copy, PartialEq)]
enum Hit {
    Sky,
    Object(usize),
    Road,
    Sidewalk,
    /// Road surface under the sidewalk footprint: the curb face.
    Curb,
}

struct Render {
    depth: Vec<f32>,
    hits: Vec<Hit>,
    image: RgbImage,
}

fn render(pose: &Pose, k: &Intrinsics, w: u32, h: u32, boxes: &[OrientedBox], colors: &[[u8; 3]]) -> Render {
    let origin = *pose.translation();
    let rot = *pose.rotation();
    let n = (w * h) as usize;
    let mut depth = vec![0.0f32; n];
    let mut hits = vec![Hit::Sky; n];
    let mut image = RgbImage::filled(w, h, [0, 0, 0]);
    for v in 0..h {
        for u in 0..w {
            let ray = Vec3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
            let d = rot * ray;
            let mut best = (f64::INFINITY, Hit::Sky);
            for (i, b) in boxes.iter().enumerate() {
                if let Some(t) = ray_box(&origin, &d, b) {
                    if t < best.0 {
                        best = (t, Hit::Object(i));
                    }
                }
            }
            if d.z < 0.0 {
                let t = (SIDEWALK_Z - origin.z) / d.z;
                let p = origin + d * t;
                if t > 0.0 && t < best.0 && in_sidewalk(p.x, p.y) {
                    best = (t, Hit::Sidewalk);
                }
                let t = -origin.z / d.z;
                let p = origin + d * t;
                if t > 0.0 && t < best.0 && p.x.abs() <= ROAD_HALF && p.y.abs() <= ROAD_HALF {
                    best = (t, if in_sidewalk(p.x, p.y) { Hit::Curb } else { Hit::Road });
                }
            }
            let idx = (v * w + u) as usize;
            hits[idx] = best.1;
            let rgb = match best.1 {
                Hit::Sky => {
                    depth[idx] = 0.0;
                    let g = (v as f64 / h as f64 * 60.0) as u8;
                    [110 + g, 160 + g / 2, 235]
                }
                Hit::Object(i) => colors[i],
                Hit::Road => ROAD_RGB,
                Hit::Sidewalk | Hit::Curb => SIDEWALK_RGB,
            };
            if best.1 != Hit::Sky {
                depth[idx] = best.0 as f32;
            }
            image.put(u, v, rgb);
        }
    }
    Render { depth, hits, image }
}

/// Jittered 5x3 grid of objects, 8 m apart, with the top row on the
/// sidewalk strip. Assets are drawn from `catalog` without replacement.
fn plant_layout<R: Rng>(rng: &mut R, catalog: &[AssetRecord], n: usize) -> Vec<(usize, OrientedBox)> {
    let mut picks: Vec<usize> = (0..catalog.len()).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let j = rng.random_range(i..picks.len());
        picks.swap(i, j);
        let a = &catalog[picks[i]];
        let (col, row) = ((i % 5) as f64, (i / 5 % 3) as f64);
        let x = -16.0 + 8.0 * col + rng.random_range(-1.0..1.0);
        let y = -8.0 + 8.0 * row + rng.random_range(-1.0..1.0);
        let base = if in_sidewalk(x, y) { SIDEWALK_Z } else { 0.0 };
        let yaw = rng.random_range(-PI / 2.0 + 1e-3..PI / 2.0);
        out.push((picks[i], OrientedBox::new(Vec3::new(x, y, base + a.dims.z / 2.0), a.dims, yaw)));
    }
    out
}

/// Renders the planted street scene from a ring of cameras looking at the
/// origin and emits everything distillation needs plus ground truth.
pub fn planted_scene(seed: u64, cfg: &PlantedConfig) -> PlantedScene {
    let mut r = rng(seed);
    let catalog = random_catalog(&mut r, cfg.catalog_size);
    let mut materials = random_materials(&mut r, 6);
    let road_material = "road_planted".to_string();
    let sidewalk_material = "sidewalk_planted".to_string();
    materials.push(GroundMaterial {
        material_id: road_material.clone(),
        kind: GroundKind::Road,
        thumb: Patch::filled(ROAD_RGB),
    });
    materials.push(GroundMaterial {
        material_id: sidewalk_material.clone(),
        kind: GroundKind::Sidewalk,
        thumb: Patch::filled(SIDEWALK_RGB),
    });
    let skies = random_skies(&mut r, 8);

    let layout = plant_layout(&mut r, &catalog, cfg.n_objects);
    let boxes: Vec<OrientedBox> = layout.iter().map(|(_, b)| *b).collect();
    let colors: Vec<[u8; 3]> = layout.iter().map(|_| random_rgb(&mut r)).collect();
    let gt = layout
        .iter()
        .map(|(ai, b)| GtObject {
            category: catalog[*ai].category.clone(),
            bbox: *b,
            gt_asset_id: Some(catalog[*ai].asset_id.clone()),
        })
        .collect();

    let k = Intrinsics {
        fx: cfg.focal,
        fy: cfg.focal,
        cx: (cfg.width as f64 - 1.0) / 2.0,
        cy: (cfg.height as f64 - 1.0) / 2.0,
    };
    let poses: Vec<Pose> = (0..cfg.n_frames)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / cfg.n_frames as f64;
            let eye = Vec3::new(cfg.ring_radius * a.cos(), cfg.ring_radius * a.sin(), cfg.camera_height);
            Pose::look_at(eye, Vec3::new(0.0, 1.0, 0.0)).expect("camera not vertical")
        })
        .collect();
    let renders: Vec<Render> = poses
        .par_iter()
        .map(|p| render(p, &k, cfg.width, cfg.height, &boxes, &colors))
        .collect();

    let mut input = DistillInput { source_id: format!("planted_{seed}"), ..Default::default() };
    for (fi, (pose, rd)) in poses.into_iter().zip(renders).enumerate() {
        let frame_id = fi as u32;
        let depth = DepthMap::new(cfg.width, cfg.height, rd.depth).expect("depth size");
        input.frames.push(CameraFrame::new(frame_id, k, pose, depth).expect("valid camera"));
        input.images.insert(frame_id, rd.image);
        let mut det_id = 0;
        for (oi, (ai, _)) in layout.iter().enumerate() {
            let mask = BinaryMask::from_fn(cfg.width, cfg.height, |u, v| {
                rd.hits[(v * cfg.width + u) as usize] == Hit::Object(oi)
            });
            if mask.count() == 0 {
                continue;
            }
            let a = &catalog[*ai];
            input.detections.push(DetectionRecord {
                frame_id,
                det_id,
                label: a.category.clone(),
                score: 0.9,
                mask: mask.to_rle(),
                semantic_embed: jitter(&mut r, &a.category_embed, cfg.embed_noise),
                appearance_embed: jitter(&mut r, &a.thumbnail_embed, cfg.embed_noise),
            });
            det_id += 1;
        }
        for (kind, want, rgb) in [
            (GroundKind::Road, Hit::Road, ROAD_RGB),
            (GroundKind::Sidewalk, Hit::Sidewalk, SIDEWALK_RGB),
        ] {
            let pitch = cfg.ground_pitch.max(1);
            let mask = BinaryMask::from_fn(cfg.width, cfg.height, |u, v| {
                u % pitch == 0 && v % pitch == 0 && rd.hits[(v * cfg.width + u) as usize] == want
            });
            if mask.count() == 0 {
                continue;
            }
            input.ground_masks.push(GroundMaskRecord {
                frame_id,
                kind,
                mask: mask.to_rle(),
                patch: noisy_patch(&mut r, rgb, 4),
            });
        }
    }
    PlantedScene { input, catalog, materials, skies, gt, road_material, sidewalk_material }
}

/// Straight-line points on the segment `a`..`b`, `n + 1` of them.
pub fn segment_samples(a: &Vec2, b: &Vec2, n: usize) -> Vec<Vec2> {
    (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_hits_box_front_face() {
        let b = OrientedBox::new(Vec3::new(5.0, 0.0, 0.5), Vec3::new(2.0, 1.0, 1.0), 0.0);
        let t = ray_box(&Vec3::new(0.0, 0.0, 0.5), &Vec3::new(1.0, 0.0, 0.0), &b).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        assert!(ray_box(&Vec3::new(0.0, 3.0, 0.5), &Vec3::new(1.0, 0.0, 0.0), &b).is_none());
    }

    #[test]
    fn catalog_is_seeded_and_canonical() {
        let a = random_catalog(&mut rng(1), 30);
        let b = random_catalog(&mut rng(1), 30);
        assert_eq!(a, b);
        for x in &a {
            x.validate().unwrap();
            assert!(x.dims.x >= 1.2 * x.dims.y);
        }
    }

    #[test]
    fn random_graph_validates() {
        let cat = random_catalog(&mut rng(2), 40);
        let g = random_graph(&mut rng(3), &cat, 12, "g");
        g.validate().unwrap();
    }

    #[test]
    fn small_planted_scene_has_detections() {
        let cfg = PlantedConfig { n_objects: 3, n_frames: 3, width: 96, height: 72, focal: 72.0, ..Default::default() };
        let s = planted_scene(5, &cfg);
        assert_eq!(s.input.frames.len(), 3);
        assert!(!s.input.detections.is_empty());
        assert!(s.input.ground_masks.iter().any(|m| m.kind == GroundKind::Road));
        assert_eq!(s.gt.len(), 3);
    }
}
