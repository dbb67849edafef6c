//! Acceptance suite. Each criterion runs against independent oracles and
//! prints one PASS or FAIL line; any failure makes the run exit nonzero.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cousinforge::assembly::{fit_ground_planes, generate_cousins, place_objects, AssemblyConfig, SceneSpec};
use cousinforge::canonical::sha256_hex;
use cousinforge::evaluation::fit_power_law;
use cousinforge::fusion::{fuse_objects, partition_detections, DetectionRecord, FusionConfig};
use cousinforge::geometry::{fit_oriented_box, iou_3d, CameraFrame, DepthMap, Intrinsics, OrientedBox, PointCloud, Pose};
use cousinforge::mask::{BinaryMask, Rle};
use cousinforge::navsim::{
    run_episode, AgentState, EpisodeConfig, NavScene, PolicyKind, RewardWeights, ScriptedPolicy, Termination,
};
use cousinforge::retrieval::{geometry_filter, materialize, AssetRecord, Catalog, RetrievalConfig};
use cousinforge::scenegraph::{CropDescriptor, GroundKind, ObjectNode, SceneGraph, SkyCrop};
use cousinforge::synth::{self, PlantedConfig};
use cousinforge::{Vec2, Vec3};
use cousinforge_cli::bundle::write_bundle;
use cousinforge_cli::commands::{self, GtFile};
use cousinforge_cli::config::PipelineConfig;
use nalgebra::Rotation3;
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- geometry

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

fn inside_box(p: &Vec3, b: &OrientedBox) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let d = p - b.center;
    let lx = c * d.x + s * d.y;
    let ly = -s * d.x + c * d.y;
    lx.abs() <= b.dims.x / 2.0 && ly.abs() <= b.dims.y / 2.0 && d.z.abs() <= b.dims.z / 2.0
}

/// IoU by quasi-Monte-Carlo: Halton points fill box `a` and count how many
/// also fall in `b`.
fn iou_halton(a: &OrientedBox, b: &OrientedBox, n: u64) -> f64 {
    let (s, c) = a.yaw.sin_cos();
    let mut hits = 0u64;
    for i in 1..=n {
        let lx = (radical_inverse(i, 2) - 0.5) * a.dims.x;
        let ly = (radical_inverse(i, 3) - 0.5) * a.dims.y;
        let lz = (radical_inverse(i, 5) - 0.5) * a.dims.z;
        let p = a.center + Vec3::new(c * lx - s * ly, s * lx + c * ly, lz);
        if inside_box(&p, b) {
            hits += 1;
        }
    }
    let va = a.dims.x * a.dims.y * a.dims.z;
    let vb = b.dims.x * b.dims.y * b.dims.z;
    let inter = va * hits as f64 / n as f64;
    inter / (va + vb - inter)
}

fn random_box<R: Rng>(rng: &mut R, around: Vec3, spread: f64) -> OrientedBox {
    let c = around + Vec3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), rng.random_range(-spread..spread) / 2.0);
    let d = Vec3::new(rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.5..3.0));
    OrientedBox::new(c, d, rng.random_range(-PI..PI))
}

fn criterion_geometry() -> Outcome {
    let start = Instant::now();
    let mut rng = synth::rng(101);

    let mut worst_rt: f64 = 0.0;
    for _ in 0..10_000 {
        let rot = Rotation3::from_euler_angles(rng.random_range(-PI..PI), rng.random_range(-PI..PI), rng.random_range(-PI..PI));
        let t = Vec3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let k = Intrinsics {
            fx: rng.random_range(200.0..2000.0),
            fy: rng.random_range(200.0..2000.0),
            cx: rng.random_range(0.0..1000.0),
            cy: rng.random_range(0.0..800.0),
        };
        let f = CameraFrame::new(0, k, Pose::from_rotation(rot, t), DepthMap::filled(1, 1, 1.0)).unwrap();
        let (u, v, d) = (rng.random_range(0.0..1920.0), rng.random_range(0.0..1080.0), rng.random_range(0.1..200.0));
        let (u2, v2, d2) = f.project(&f.unproject(u, v, d));
        worst_rt = worst_rt.max((u - u2).abs()).max((v - v2).abs()).max((d - d2).abs());
    }
    ensure(worst_rt < 1e-6, || format!("projection round trip error {worst_rt:e}"))?;

    let mut worst_iou: f64 = 0.0;
    let mut overlapping = 0;
    for _ in 0..100 {
        let a = random_box(&mut rng, Vec3::zeros(), 1.0);
        let b = random_box(&mut rng, a.center, 1.5);
        let exact = iou_3d(&a, &b);
        let mc = iou_halton(&a, &b, 1_000_000);
        overlapping += usize::from(exact > 0.0);
        worst_iou = worst_iou.max((exact - mc).abs());
    }
    ensure(worst_iou < 1e-3, || format!("iou_3d vs Monte-Carlo max error {worst_iou:e}"))?;

    let mut worst_fit: f64 = 0.0;
    for _ in 0..100 {
        let lx = rng.random_range(0.5..5.0);
        let dims = Vec3::new(lx, lx * rng.random_range(0.2..0.9), rng.random_range(0.3..3.0));
        let yaw = rng.random_range(-PI / 2.0..PI / 2.0);
        let truth = OrientedBox::new(Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(0.0..3.0)), dims, yaw);
        let (s, c) = yaw.sin_cos();
        let mut pts = Vec::new();
        let corner = |sx: f64, sy: f64, sz: f64| {
            let (x, y, z) = (sx * dims.x / 2.0, sy * dims.y / 2.0, sz * dims.z / 2.0);
            truth.center + Vec3::new(c * x - s * y, s * x + c * y, z)
        };
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    pts.push(corner(sx, sy, sz));
                }
            }
        }
        for _ in 0..200 {
            pts.push(corner(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        }
        let fit = fit_oriented_box(&PointCloud::new(pts)).map_err(|e| e.to_string())?;
        let mut dyaw = (fit.yaw - truth.yaw).rem_euclid(PI);
        dyaw = dyaw.min(PI - dyaw);
        let err = (fit.center - truth.center).amax().max((fit.dims - truth.dims).amax()).max(dyaw);
        worst_fit = worst_fit.max(err);
    }
    ensure(worst_fit < 1e-9, || format!("box fit max error {worst_fit:e}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("geometry suite took {elapsed:?}"))?;
    Ok(format!(
        "round-trip max {worst_rt:.1e}, iou max |diff| {worst_iou:.1e} ({overlapping}/100 overlapping), fit max {worst_fit:.1e}, {elapsed:.2?}"
    ))
}

// ------------------------------------------------------------------ fusion

struct FusionInstance {
    frames: Vec<CameraFrame>,
    dets: Vec<DetectionRecord>,
}

fn fusion_instance<R: Rng>(rng: &mut R) -> FusionInstance {
    let (w, h) = (16u32, 12u32);
    let k = Intrinsics { fx: 12.0, fy: 12.0, cx: 7.5, cy: 5.5 };
    let n_frames = rng.random_range(1..=3u32);
    let frames: Vec<CameraFrame> = (0..n_frames)
        .map(|fid| {
            let eye = Vec3::new(rng.random_range(-0.4..0.4), -5.0 + rng.random_range(-0.3..0.3), 1.0 + rng.random_range(-0.2..0.2));
            let pose = Pose::look_at(eye, Vec3::new(0.0, 0.0, 0.5)).unwrap();
            let base = rng.random_range(3.8..4.2);
            let slope = rng.random_range(-0.05..0.05);
            let data = (0..w * h)
                .map(|i| if rng.random_bool(0.05) { 0.0 } else { (base + slope * (i % w) as f64) as f32 })
                .collect();
            CameraFrame::new(fid, k, pose, DepthMap::new(w, h, data).unwrap()).unwrap()
        })
        .collect();
    let protos: Vec<Vec<f64>> = (0..3).map(|_| synth::random_unit(rng, 8)).collect();
    let n = rng.random_range(1..=25usize);
    let mut next_id = vec![0u32; n_frames as usize];
    let dets = (0..n)
        .map(|_| {
            let f = rng.random_range(0..n_frames);
            let (u0, v0) = (rng.random_range(0..w - 2), rng.random_range(0..h - 2));
            let (u1, v1) = (rng.random_range(u0 + 1..=w), rng.random_range(v0 + 1..=h));
            let mask = BinaryMask::from_fn(w, h, |u, v| (u0..u1).contains(&u) && (v0..v1).contains(&v));
            let proto = rng.random_range(0..3);
            let id = next_id[f as usize];
            next_id[f as usize] += 1;
            DetectionRecord {
                frame_id: f,
                det_id: id,
                label: "thing".into(),
                score: 0.5,
                mask: mask.to_rle(),
                semantic_embed: synth::jitter(rng, &protos[proto], 0.3),
                appearance_embed: synth::random_unit(rng, 4),
            }
        })
        .collect();
    FusionInstance { frames, dets }
}

fn decode_rle(r: &Rle) -> Vec<bool> {
    let mut out = Vec::new();
    for (i, &c) in r.counts.iter().enumerate() {
        out.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
    }
    out
}

/// Exhaustive oracle: every pair tested directly, groups are the
/// transitive closure found by breadth-first search.
fn partition_oracle(inst: &FusionInstance, cfg: &FusionConfig) -> BTreeSet<BTreeSet<(u32, u32)>> {
    let voxels: Vec<HashSet<(i64, i64, i64)>> = inst
        .dets
        .iter()
        .map(|d| {
            let f = inst.frames.iter().find(|f| f.frame_id == d.frame_id).unwrap();
            let bits = decode_rle(&d.mask);
            let w = f.width() as usize;
            let (r, t) = (f.pose.rotation(), f.pose.translation());
            bits.iter()
                .enumerate()
                .filter(|(_, b)| **b)
                .filter_map(|(i, _)| {
                    let (u, v) = ((i % w) as f64, (i / w) as f64);
                    let z = f.depth.get((i % w) as u32, (i / w) as u32) as f64;
                    if !(z > 0.0 && z.is_finite()) {
                        return None;
                    }
                    let k = &f.intrinsics;
                    let pc = Vec3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
                    let p = r * pc + t;
                    Some(((p.x / cfg.voxel).floor() as i64, (p.y / cfg.voxel).floor() as i64, (p.z / cfg.voxel).floor() as i64))
                })
                .collect()
        })
        .collect();
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let n = inst.dets.len();
    let linked = |i: usize, j: usize| {
        let small = voxels[i].len().min(voxels[j].len());
        if small == 0 || cos(&inst.dets[i].semantic_embed, &inst.dets[j].semantic_embed) < cfg.semantic_threshold {
            return false;
        }
        let inter = voxels[i].intersection(&voxels[j]).count();
        inter as f64 / small as f64 >= cfg.overlap_threshold
    };
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = vec![s];
        seen[s] = true;
        while let Some(i) = queue.pop() {
            comp.insert((inst.dets[i].frame_id, inst.dets[i].det_id));
            for j in 0..n {
                if !seen[j] && linked(i, j) {
                    seen[j] = true;
                    queue.push(j);
                }
            }
        }
        out.insert(comp);
    }
    out
}

fn as_sets(p: Vec<Vec<(u32, u32)>>) -> BTreeSet<BTreeSet<(u32, u32)>> {
    p.into_iter().map(|g| g.into_iter().collect()).collect()
}

fn criterion_fusion() -> Outcome {
    let mut rng = synth::rng(202);
    let cfg = FusionConfig { min_points: 1, ..Default::default() };
    let mut merged_groups = 0;
    for i in 0..200 {
        let inst = fusion_instance(&mut rng);
        let got = as_sets(partition_detections(&inst.frames, &inst.dets, &cfg).map_err(|e| e.to_string())?);
        let want = partition_oracle(&inst, &cfg);
        ensure(got == want, || format!("instance {i}: partition {got:?} != oracle {want:?}"))?;
        merged_groups += got.iter().filter(|g| g.len() > 1).count();
        if i < 50 {
            let nodes = fuse_objects(&inst.frames, &inst.dets, &cfg).map_err(|e| e.to_string())?;
            let mut shuffled = inst.dets.clone();
            shuffled.shuffle(&mut rng);
            let got2 = as_sets(partition_detections(&inst.frames, &shuffled, &cfg).map_err(|e| e.to_string())?);
            let nodes2 = fuse_objects(&inst.frames, &shuffled, &cfg).map_err(|e| e.to_string())?;
            ensure(got2 == got && nodes2 == nodes, || format!("instance {i}: shuffled detections changed the result"))?;
        }
    }
    Ok(format!("200/200 partitions equal the oracle ({merged_groups} multi-detection groups), 50/50 shuffles invariant"))
}

// --------------------------------------------------------------- retrieval

fn planted_node<R: Rng>(rng: &mut R, id: u32, a: &AssetRecord) -> ObjectNode {
    let swap = rng.random_bool(0.5);
    let dims = if swap { Vec3::new(a.dims.y, a.dims.x, a.dims.z) } else { a.dims };
    let c = Vec3::new(id as f64 * 3.0, 0.0, dims.z / 2.0);
    let bbox = OrientedBox::new(c, dims, 0.0);
    ObjectNode {
        node_id: id,
        category: a.category.clone(),
        centroid: c,
        bbox,
        heading: 0.0,
        crops: (0..2)
            .map(|f| CropDescriptor::new(f, synth::jitter(rng, &a.category_embed, 0.01), synth::jitter(rng, &a.thumbnail_embed, 0.01), None))
            .collect(),
    }
}

fn mbbd_oracle(q: &Vec3, a: &Vec3) -> f64 {
    let straight = ((a.x / q.x).ln().abs() + (a.y / q.y).ln().abs() + (a.z / q.z).ln().abs()) / 3.0;
    let swapped = ((a.y / q.x).ln().abs() + (a.x / q.y).ln().abs() + (a.z / q.z).ln().abs()) / 3.0;
    straight.min(swapped)
}

fn criterion_retrieval() -> Outcome {
    let mut rng = synth::rng(303);
    let assets = synth::random_catalog(&mut rng, 500);
    let catalog = Catalog::new(assets.clone()).map_err(|e| e.to_string())?;
    let sources: Vec<&AssetRecord> = (0..100).map(|_| &assets[rng.random_range(0..assets.len())]).collect();
    let objects = sources.iter().enumerate().map(|(i, a)| planted_node(&mut rng, i as u32, a)).collect();
    let mut graph = SceneGraph { objects, ..Default::default() };
    graph.sky.crops.push(SkyCrop { frame_id: 0, hist: synth::random_histogram(&mut rng) });
    let skies = synth::random_skies(&mut rng, 3);
    let sel = materialize(&graph, &catalog, &[], &skies, &RetrievalConfig::default()).map_err(|e| e.to_string())?;
    let hits = sel
        .objects
        .iter()
        .zip(&sources)
        .filter(|(o, a)| o.candidates.first().map(|c| c.asset_id.as_str()) == Some(a.asset_id.as_str()))
        .count();
    ensure(hits == 100, || format!("source asset ranked first {hits}/100 times"))?;

    let big = synth::random_catalog(&mut rng, 2000);
    let refs: Vec<&AssetRecord> = big.iter().collect();
    let q = Vec3::new(rng.random_range(0.3..4.0), rng.random_range(0.3..2.0), rng.random_range(0.3..3.0));
    let got: Vec<&str> = geometry_filter(&q, &refs, 1000).map_err(|e| e.to_string())?.iter().map(|(a, _)| a.asset_id.as_str()).collect();
    let mut oracle: Vec<(f64, &str)> = big.iter().map(|a| (mbbd_oracle(&q, &a.dims), a.asset_id.as_str())).collect();
    oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    let want: Vec<&str> = oracle.iter().take(1000).map(|x| x.1).collect();
    ensure(got == want, || "geometry_filter top-1000 differs from the full-sort oracle".into())?;
    Ok("100/100 planted nodes retrieve their source asset first; geometry_filter top-1000 equals full sort of 2000".into())
}

// -------------------------------------------------------------- end to end

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) {
    let text: String = items.iter().map(|x| serde_json::to_string(x).unwrap() + "\n").collect();
    std::fs::write(path, text).unwrap();
}

fn library_files(root: &Path, scene: &synth::PlantedScene) {
    write_jsonl(&root.join("assets.jsonl"), &scene.catalog);
    write_jsonl(&root.join("materials.jsonl"), &scene.materials);
    write_jsonl(&root.join("skies.jsonl"), &scene.skies);
    let gt = GtFile { objects: scene.gt.clone() };
    std::fs::write(root.join("gt.json"), serde_json::to_string_pretty(&gt).unwrap()).unwrap();
}

fn criterion_end_to_end() -> Outcome {
    let start = Instant::now();
    let scene = synth::planted_scene(7, &PlantedConfig::default());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    write_bundle(&root.join("clip"), &scene.input).map_err(|e| e.to_string())?;
    library_files(root, &scene);
    let cfg = PipelineConfig::default();
    let e = |e: cousinforge_cli::error::CliError| e.to_json();
    commands::cmd_distill(&root.join("clip"), &root.join("graph.json"), &cfg).map_err(e)?;
    commands::cmd_materialize(
        &root.join("graph.json"),
        &root.join("assets.jsonl"),
        &root.join("materials.jsonl"),
        &root.join("skies.jsonl"),
        &root.join("selection.json"),
        &cfg,
    )
    .map_err(e)?;
    commands::cmd_generate(&root.join("graph.json"), &root.join("selection.json"), &root.join("assets.jsonl"), &root.join("scenes"), &cfg)
        .map_err(e)?;
    let scene_path = root.join("scenes").join(cousinforge::assembly::scene_file_name(&scene.input.source_id, 0));
    let report = commands::cmd_evaluate(&scene_path, &root.join("gt.json"), &root.join("report.json"), &cfg).map_err(e)?;
    let f = report.fidelity;
    let elapsed = start.elapsed();
    let (cat, dist, ori, map) = (f.cat_recovery.unwrap_or(0.0), f.dist_err.unwrap_or(f64::INFINITY), f.ori_err.unwrap_or(f64::INFINITY), f.map25.unwrap_or(0.0));
    ensure(cat == 100.0 && dist <= 0.15 && ori <= 1.0 && map == 1.0, || {
        format!("Cat {cat}%, Dist {dist} m, Ori {ori} deg, mAP25 {map}")
    })?;
    ensure(elapsed < Duration::from_secs(60), || format!("pipeline took {elapsed:?}"))?;
    Ok(format!("Cat {cat}%, Dist {dist:.2e} m, Ori {ori:.2e} deg, mAP25 {map}, {} objects, {elapsed:.2?}", f.n_gt))
}

// ---------------------------------------------------------------- assembly

fn in_convex(poly: &[Vec2], p: &Vec2) -> bool {
    let n = poly.len();
    n >= 3
        && (0..n).all(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            (b - a).perp(&(p - a)) >= -1e-9
        })
}

fn check_scene(scene: &SceneSpec) -> Result<(), String> {
    let road = scene.grounds.iter().find(|g| g.kind == GroundKind::Road).ok_or("no road plane")?;
    let sidewalk = scene.grounds.iter().find(|g| g.kind == GroundKind::Sidewalk);
    if let Some(s) = sidewalk {
        ensure(s.z == road.z + 0.15, || format!("sidewalk {} vs road {}", s.z, road.z))?;
    }
    for (i, a) in scene.placements.iter().enumerate() {
        for b in &scene.placements[i + 1..] {
            let iou = cousinforge::geometry::bev_iou(&a.footprint, &b.footprint);
            ensure(iou == 0.0, || format!("{}: nodes {} and {} overlap, BEV IoU {iou}", scene.scene_id, a.node_id, b.node_id))?;
        }
        let plane = match sidewalk {
            Some(s) if in_convex(&s.boundary, &a.position.xy()) => s,
            _ => road,
        };
        let bottom = a.position.z - a.footprint.dims.z / 2.0;
        ensure((bottom - plane.z).abs() < 1e-6, || format!("{}: node {} floats {}", scene.scene_id, a.node_id, bottom - plane.z))?;
    }
    Ok(())
}

fn criterion_assembly() -> Outcome {
    let mut rng = synth::rng(505);
    let assets = synth::random_catalog(&mut rng, 200);
    let catalog = Catalog::new(assets.clone()).map_err(|e| e.to_string())?;
    let materials = synth::random_materials(&mut rng, 4);
    let skies = synth::random_skies(&mut rng, 6);
    let cfg = AssemblyConfig::default();
    let rcfg = RetrievalConfig::default();
    let (mut scenes_checked, mut moves, mut dropped) = (0, 0, 0);
    for g in 0..100 {
        let n = rng.random_range(5..=25);
        let graph = synth::random_graph(&mut rng, &assets, n, &format!("g{g:03}"));
        let sel = materialize(&graph, &catalog, &materials, &skies, &rcfg).map_err(|e| e.to_string())?;
        let scenes = generate_cousins(&graph, &sel, &catalog, &cfg, None).map_err(|e| e.to_string())?;
        ensure(scenes.len() == rcfg.k, || format!("graph {g}: {} scenes", scenes.len()))?;
        let ids = |s: &SceneSpec| s.placements.iter().map(|p| p.node_id).collect::<Vec<_>>();
        let kinds = |s: &SceneSpec| s.grounds.iter().map(|p| p.kind).collect::<Vec<_>>();
        for s in &scenes {
            check_scene(s)?;
            ensure(ids(s) == ids(&scenes[0]) && kinds(s) == kinds(&scenes[0]) && !s.sky_id.is_empty(), || {
                format!("graph {g}: cousin {} differs structurally", s.cousin_index)
            })?;
            for p in &s.placements {
                let want = &sel.object(p.node_id).unwrap().candidates[s.cousin_index].asset_id;
                ensure(&p.asset_id == want, || format!("graph {g}: placement asset is not rank {}", s.cousin_index))?;
            }
            scenes_checked += 1;
        }
        dropped += scenes[0].provenance.dropped_nodes.len();
        let planes = fit_ground_planes(&graph.grounds, &sel, 0, &cfg).map_err(|e| e.to_string())?;
        let report = place_objects(&graph, &sel, 0, &planes, &catalog, &cfg).map_err(|e| e.to_string())?;
        for m in &report.moves {
            ensure(m.distance <= m.bound, || format!("graph {g}: node {} moved {} > {}", m.node_id, m.distance, m.bound))?;
        }
        moves += report.moves.len();
    }
    Ok(format!(
        "{scenes_checked} scenes penetration-free and grounded, cousins structurally invariant, sidewalk +0.15 exact; {moves} separation moves within bound, {dropped} nodes dropped"
    ))
}

// --------------------------------------------------------------- power law

fn criterion_power_law() -> Outcome {
    let exact: Vec<(f64, f64)> = [10.0, 20.0, 50.0, 100.0, 200.0, 500.0].iter().map(|&n: &f64| (n, 1.0 - 0.8 * n.powf(-0.3))).collect();
    let f = fit_power_law(&exact).map_err(|e| e.to_string())?;
    ensure((f.alpha - 0.3).abs() < 1e-9 && (f.beta - 0.8).abs() < 1e-9 && (f.pearson_r + 1.0).abs() < 1e-9, || {
        format!("exact fit alpha {} beta {} r {}", f.alpha, f.beta, f.pearson_r)
    })?;
    let mut rng = synth::rng(606);
    let noise = rand_distr::Normal::new(0.0, 0.01).unwrap();
    let ns: Vec<f64> = (0..8).map(|i| 10.0 * 2f64.powi(i)).collect();
    let mut good = 0;
    for _ in 0..1000 {
        let pts: Vec<(f64, f64)> = ns
            .iter()
            .map(|&n| (n, 1.0 - 0.8 * n.powf(-0.3) * (1.0 + rand_distr::Distribution::sample(&noise, &mut rng))))
            .collect();
        let fit = fit_power_law(&pts).map_err(|e| e.to_string())?;
        good += usize::from((fit.alpha - 0.3).abs() <= 0.05);
    }
    ensure(good >= 950, || format!("alpha within 0.05 in {good}/1000 trials"))?;
    Ok(format!("exact law recovered (|r+1| {:.1e}); noisy alpha within 0.05 in {good}/1000 trials", (f.pearson_r + 1.0).abs()))
}

// ------------------------------------------------------------------ navsim

fn disc_hits_box(p: &Vec2, r: f64, b: &OrientedBox) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let d = p - b.center.xy();
    let (lx, ly) = (c * d.x + s * d.y, -s * d.x + c * d.y);
    let qx = lx.clamp(-b.dims.x / 2.0, b.dims.x / 2.0);
    let qy = ly.clamp(-b.dims.y / 2.0, b.dims.y / 2.0);
    (lx - qx).hypot(ly - qy) < r
}

fn criterion_navsim() -> Outcome {
    let cfg = EpisodeConfig::default();
    let w = RewardWeights::default();
    let start = AgentState::at_rest(Vec2::zeros(), 0.0);

    let mut pol = ScriptedPolicy::new(PolicyKind::Straight, 0, 0.0);
    let ep = run_episode(&NavScene::default(), start, Vec2::new(20.0, 10.0), &mut pol, &cfg, &w);
    let arrivals = ep.rewards.iter().filter(|r| r.arrive == 2000.0).count();
    ensure(ep.metrics.sr == 1 && ep.metrics.ct == 0 && arrivals == 1, || {
        format!("unobstructed: sr {} ct {} arrivals {arrivals}", ep.metrics.sr, ep.metrics.ct)
    })?;

    let wall: Vec<(u32, OrientedBox)> =
        (0..13).map(|i| (i, OrientedBox::new(Vec3::new(10.0, -6.0 + i as f64, 0.5), Vec3::new(1.0, 1.0, 1.0), 0.0))).collect();
    let mut pol = ScriptedPolicy::new(PolicyKind::Straight, 0, 0.0);
    let ep = run_episode(&NavScene::new(&wall, vec![]), start, Vec2::new(20.0, 0.0), &mut pol, &cfg, &w);
    let last = ep.rewards.last().copied().unwrap_or_default();
    ensure(ep.termination == Termination::Collision && last.collide == -200.0 && ep.metrics.sr == 0 && ep.metrics.ct == 1, || {
        format!("forced collision: {:?}, last collide term {}", ep.termination, last.collide)
    })?;

    let (mut ok, mut hit) = (0, 0);
    for i in 0..50u64 {
        let mut rng = synth::rng(700 + i);
        let obstacles = synth::slalom_obstacles(&mut rng);
        let scene = NavScene::new(&obstacles, vec![]);
        let mut pol = ScriptedPolicy::new(PolicyKind::Waypoint, i, 0.05);
        let ep = run_episode(&scene, start, Vec2::new(28.0, 0.0), &mut pol, &cfg, &w);
        let first_dense_hit = ep.trajectory.windows(2).position(|seg| {
            (0..=10).any(|k| {
                let p = seg[0].position + (seg[1].position - seg[0].position) * (k as f64 / 10.0);
                obstacles.iter().any(|(_, b)| disc_hits_box(&p, cfg.agent_radius, b))
            })
        });
        if ep.metrics.sr == 1 {
            ok += 1;
            ensure(first_dense_hit.is_none(), || format!("slalom {i}: success but dense sampling finds contact at step {first_dense_hit:?}"))?;
        } else if let Some(c) = ep.collisions.first() {
            hit += 1;
            ensure(first_dense_hit.is_none_or(|s| s >= c.step), || {
                format!("slalom {i}: dense contact at step {first_dense_hit:?} before reported step {}", c.step)
            })?;
        }
    }
    ensure(ok > 0 && hit > 0, || format!("slalom set not discriminating: {ok} successes, {hit} collisions"))?;
    Ok(format!("unobstructed SR 1 CT 0 one +2000; wall ends with -200; slalom soundness over 50 scenes ({ok} successes, {hit} collisions)"))
}

// ------------------------------------------------------------- determinism

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cousinforge")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("cousinforge {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn tree_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, sha256_hex(&std::fs::read(&p).unwrap()));
            }
        }
    }
    out
}

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let small = PlantedConfig { n_objects: 4, n_frames: 6, width: 160, height: 120, focal: 120.0, catalog_size: 60, ..Default::default() };
    let a = synth::planted_scene(11, &small);
    let b = synth::planted_scene(12, &small);
    write_bundle(&root.join("clips/a"), &a.input).map_err(|e| e.to_json())?;
    write_bundle(&root.join("clips/b"), &b.input).map_err(|e| e.to_json())?;
    library_files(root, &a);
    std::fs::write(root.join("manifest.json"), r#"{"clips": ["clips/a", "clips/b"]}"#).unwrap();
    std::fs::write(root.join("points.csv"), "N,SR\n10,0.2\n20,0.31\n40,0.42\n80,0.5\n160,1.0\n").unwrap();
    std::fs::write(root.join("config.toml"), "seed = 5\n[retrieval]\nk = 3\n").unwrap();

    let s = |p: PathBuf| p.display().to_string();
    let mut runs = Vec::new();
    for (name, jobs) in [("run1", "1"), ("run2", "3"), ("run3", "2")] {
        let out = root.join(name);
        let cfg = s(root.join("config.toml"));
        let common = ["--config", cfg.as_str(), "--jobs", jobs];
        let graph = s(out.join("graph.json"));
        let sel = s(out.join("selection.json"));
        let scenes = s(out.join("scenes"));
        let scene0 = s(out.join("scenes").join(cousinforge::assembly::scene_file_name(&a.input.source_id, 0)));
        let (assets, mats, skies) = (s(root.join("assets.jsonl")), s(root.join("materials.jsonl")), s(root.join("skies.jsonl")));
        let mut stdout = Vec::new();
        let steps: Vec<Vec<String>> = vec![
            vec!["distill".into(), "--bundle".into(), s(root.join("clips/a")), "-o".into(), graph.clone()],
            vec!["materialize".into(), "--graph".into(), graph.clone(), "--assets".into(), assets.clone(), "--materials".into(), mats.clone(), "--skies".into(), skies.clone(), "-o".into(), sel.clone()],
            vec!["generate".into(), "--graph".into(), graph.clone(), "--selection".into(), sel.clone(), "--assets".into(), assets.clone(), "-o".into(), scenes],
            vec!["build-library".into(), "--manifest".into(), s(root.join("manifest.json")), "--assets".into(), assets, "--materials".into(), mats, "--skies".into(), skies, "-o".into(), s(out.join("library"))],
            vec!["evaluate".into(), "--pred".into(), scene0.clone(), "--gt".into(), s(root.join("gt.json")), "-o".into(), s(out.join("report.json"))],
            vec!["scaling-fit".into(), "--points".into(), s(root.join("points.csv")), "-o".into(), s(out.join("fit.json"))],
            vec!["navsim".into(), "--scene".into(), scene0.clone(), "--policy".into(), "waypoint".into(), "--start".into(), "0,-14,0".into(), "--seed".into(), "7".into(), "-o".into(), s(out.join("episode.json"))],
            vec!["validate".into(), graph],
            vec!["validate".into(), scene0],
        ];
        for step in &steps {
            let mut args: Vec<&str> = common.to_vec();
            args.extend(step.iter().map(String::as_str));
            let o = run_cli(&args)?;
            stdout.push(String::from_utf8_lossy(&o).replace(name, "RUN"));
        }
        runs.push((tree_hashes(&out), stdout));
    }
    let rerun_dir = root.join("run1");
    let cfg = s(root.join("config.toml"));
    run_cli(&["--config", &cfg, "--jobs", "4", "build-library", "--manifest", &s(root.join("manifest.json")), "--assets", &s(root.join("assets.jsonl")), "--materials", &s(root.join("materials.jsonl")), "--skies", &s(root.join("skies.jsonl")), "-o", &s(rerun_dir.join("library"))])?;
    let rerun = tree_hashes(&rerun_dir);

    let files = runs[0].0.len();
    for (i, r) in runs.iter().enumerate().skip(1) {
        ensure(r.0 == runs[0].0, || {
            let diff: Vec<&String> = r.0.iter().filter(|(k, v)| runs[0].0.get(*k) != Some(v)).map(|(k, _)| k).collect();
            format!("run {} differs from run 1 in {diff:?}", i + 1)
        })?;
        ensure(r.1 == runs[0].1, || format!("run {} stdout differs", i + 1))?;
    }
    ensure(rerun == runs[0].0, || "build-library rerun into an existing directory changed outputs".into())?;
    let library = runs[0].0.keys().filter(|k| k.starts_with("library") && k.contains("scene_")).count();
    ensure(library == 6, || format!("library has {library} scenes, want 2 clips x k=3"))?;
    Ok(format!("{files} output files byte-identical across --jobs 1/3/2 and an in-place rerun with --jobs 4"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("geometry suite", criterion_geometry),
        ("fusion oracle equivalence", criterion_fusion),
        ("self-retrieval", criterion_retrieval),
        ("planted-scene fidelity", criterion_end_to_end),
        ("assembly invariants", criterion_assembly),
        ("power-law fit", criterion_power_law),
        ("navsim", criterion_navsim),
        ("determinism", criterion_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match r {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{:.2?}]", i + 1, t.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {why} [{:.2?}]", i + 1, t.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
