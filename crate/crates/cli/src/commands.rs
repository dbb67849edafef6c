//! One function per subcommand. Each reads its inputs, runs the core
//! stage, embeds provenance and writes canonical JSON.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cousinforge::assembly::{generate_cousins, safe_file_stem, scene_file_name, SceneSpec};
use cousinforge::canonical::sha256_hex;
use cousinforge::evaluation::{
    fidelity, fit_power_law_excluding, match_objects, FidelityReport, GtObject, MatchPair, PredObject, ScalingFit,
};
use cousinforge::fusion::distill;
use cousinforge::geometry::Vec2;
use cousinforge::navsim::{run_episode, sample_goal, AgentState, Episode, NavScene, PolicyKind, ScriptedPolicy};
use cousinforge::provenance::Provenance;
use cousinforge::retrieval::{
    materialize, parse_jsonl, AssetRecord, Catalog, CousinSelection, GroundMaterial, SkyAsset,
};
use cousinforge::scenegraph::SceneGraph;
use cousinforge::synth;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::load_bundle;
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult, Stage};
use crate::io::{ensure_dir, parse_json, read_bytes, read_json, write_json};

fn provenance(cfg: &PipelineConfig) -> Provenance {
    Provenance::new(cfg.to_value())
}

fn read_jsonl_hashed<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<(Vec<T>, String)> {
    let bytes = read_bytes(path)?;
    let records = parse_jsonl(bytes.as_slice(), &path.display().to_string()).map_err(|e| CliError::parse(path, e))?;
    Ok((records, sha256_hex(&bytes)))
}

fn read_json_hashed<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<(T, String)> {
    let bytes = read_bytes(path)?;
    Ok((parse_json(path, &bytes)?, sha256_hex(&bytes)))
}

pub fn load_graph(path: &Path) -> CliResult<(SceneGraph, String)> {
    let (g, h): (SceneGraph, String) = read_json_hashed(path)?;
    g.validate().map_err(|e| CliError::new("schema", e.to_string()).with_path(path))?;
    Ok((g, h))
}

/// Asset, material and sky libraries with their file hashes.
pub struct Library {
    pub catalog: Catalog,
    pub materials: Vec<GroundMaterial>,
    pub skies: Vec<SkyAsset>,
    pub hashes: BTreeMap<String, String>,
}

pub fn load_catalog(path: &Path) -> CliResult<(Catalog, String)> {
    let (assets, h) = read_jsonl_hashed::<AssetRecord>(path)?;
    let catalog = Catalog::new(assets).map_err(|e| CliError::new("schema", e.to_string()).with_path(path))?;
    Ok((catalog, h))
}

pub fn load_library(assets: &Path, materials: &Path, skies: &Path) -> CliResult<Library> {
    let (catalog, ha) = load_catalog(assets)?;
    let (materials, hm) = read_jsonl_hashed(materials)?;
    let (skies, hs) = read_jsonl_hashed(skies)?;
    let hashes = BTreeMap::from([("assets".to_string(), ha), ("materials".to_string(), hm), ("skies".to_string(), hs)]);
    Ok(Library { catalog, materials, skies, hashes })
}

pub fn distill_bundle(bundle: &Path, cfg: &PipelineConfig) -> CliResult<SceneGraph> {
    let loaded = load_bundle(bundle)?;
    let mut graph = distill(&loaded.input, &cfg.fusion).stage("distill")?;
    let mut prov = provenance(cfg);
    prov.inputs = loaded.hashes;
    graph.meta.provenance = Some(prov);
    Ok(graph)
}

pub fn cmd_distill(bundle: &Path, out: &Path, cfg: &PipelineConfig) -> CliResult<()> {
    write_json(out, &distill_bundle(bundle, cfg)?)
}

fn select(graph: &SceneGraph, graph_hash: &str, lib: &Library, cfg: &PipelineConfig) -> CliResult<CousinSelection> {
    let mut sel = materialize(graph, &lib.catalog, &lib.materials, &lib.skies, &cfg.retrieval).stage("materialize")?;
    let mut prov = provenance(cfg);
    prov.inputs = lib.hashes.clone();
    prov.inputs.insert("graph".into(), graph_hash.to_string());
    sel.provenance = Some(prov);
    Ok(sel)
}

pub fn cmd_materialize(
    graph: &Path,
    assets: &Path,
    materials: &Path,
    skies: &Path,
    out: &Path,
    cfg: &PipelineConfig,
) -> CliResult<()> {
    let (g, gh) = load_graph(graph)?;
    let lib = load_library(assets, materials, skies)?;
    write_json(out, &select(&g, &gh, &lib, cfg)?)
}

fn cousins(
    graph: &SceneGraph,
    graph_hash: &str,
    selection: &CousinSelection,
    selection_hash: &str,
    catalog: &Catalog,
    assets_hash: &str,
    cfg: &PipelineConfig,
) -> CliResult<Vec<SceneSpec>> {
    let mut scenes = generate_cousins(graph, selection, catalog, &cfg.assembly, None).stage("generate")?;
    let mut prov = provenance(cfg);
    prov.inputs.insert("graph".into(), graph_hash.into());
    prov.inputs.insert("selection".into(), selection_hash.into());
    prov.inputs.insert("assets".into(), assets_hash.into());
    for s in &mut scenes {
        s.provenance.run = Some(prov.clone());
    }
    Ok(scenes)
}

fn write_scenes(dir: &Path, source_id: &str, scenes: &[SceneSpec]) -> CliResult<Vec<PathBuf>> {
    ensure_dir(dir)?;
    scenes
        .iter()
        .map(|s| {
            let p = dir.join(scene_file_name(source_id, s.cousin_index));
            write_json(&p, s).map(|_| p)
        })
        .collect()
}

pub fn cmd_generate(graph: &Path, selection: &Path, assets: &Path, out_dir: &Path, cfg: &PipelineConfig) -> CliResult<()> {
    let (g, gh) = load_graph(graph)?;
    let (sel, sh): (CousinSelection, String) = read_json_hashed(selection)?;
    let (catalog, ah) = load_catalog(assets)?;
    let scenes = cousins(&g, &gh, &sel, &sh, &catalog, &ah, cfg)?;
    write_scenes(out_dir, &g.meta.source_id, &scenes)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Clip bundle directories, relative to the manifest file.
    pub clips: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub source_id: String,
    pub bundle: String,
    pub graph: String,
    pub selection: String,
    pub scenes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryIndex {
    pub k: usize,
    pub clip_count: usize,
    pub scene_count: usize,
    pub clips: Vec<ClipEntry>,
    pub provenance: Provenance,
}

pub const LIBRARY_INDEX: &str = "library.json";

/// Distills, materializes and generates every clip of `manifest` into
/// `out_dir/<source_id>/`, then writes `out_dir/library.json`. Clips run in
/// parallel on the current thread pool; reruns overwrite with identical
/// bytes.
pub fn cmd_build_library(
    manifest: &Path,
    assets: &Path,
    materials: &Path,
    skies: &Path,
    out_dir: &Path,
    cfg: &PipelineConfig,
) -> CliResult<LibraryIndex> {
    let (m, mh): (Manifest, String) = read_json_hashed(manifest)?;
    let lib = load_library(assets, materials, skies)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    ensure_dir(out_dir)?;

    let built = m
        .clips
        .par_iter()
        .map(|clip| -> CliResult<(ClipEntry, BTreeMap<String, String>)> {
            let bundle = load_bundle(&base.join(clip))?;
            let mut graph = distill(&bundle.input, &cfg.fusion)
                .map_err(|e| CliError::new("distill", format!("{clip}: {e}")))?;
            let mut gprov = provenance(cfg);
            gprov.inputs = bundle.hashes.clone();
            graph.meta.provenance = Some(gprov);
            let source = graph.meta.source_id.clone();
            let stem = safe_file_stem(&source);
            let clip_dir = out_dir.join(&stem);
            let graph_path = clip_dir.join("scenegraph.json");
            write_json(&graph_path, &graph)?;
            let gh = sha256_hex(&read_bytes(&graph_path)?);
            let sel = select(&graph, &gh, &lib, cfg)?;
            let sel_path = clip_dir.join("selection.json");
            write_json(&sel_path, &sel)?;
            let sh = sha256_hex(&read_bytes(&sel_path)?);
            let scenes = cousins(&graph, &gh, &sel, &sh, &lib.catalog, &lib.hashes["assets"], cfg)?;
            write_scenes(&clip_dir, &source, &scenes)?;
            let inputs = bundle.hashes.into_iter().map(|(k, v)| (format!("{stem}/{k}"), v)).collect();
            Ok((
                ClipEntry {
                    source_id: source.clone(),
                    bundle: clip.clone(),
                    graph: format!("{stem}/scenegraph.json"),
                    selection: format!("{stem}/selection.json"),
                    scenes: scenes.iter().map(|s| format!("{stem}/{}", scene_file_name(&source, s.cousin_index))).collect(),
                },
                inputs,
            ))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut seen = std::collections::BTreeSet::new();
    for (c, _) in &built {
        if !seen.insert(safe_file_stem(&c.source_id)) {
            return Err(CliError::new("schema", format!("duplicate clip source id {}", c.source_id)).with_path(manifest));
        }
    }
    let mut prov = provenance(cfg);
    prov.inputs = lib.hashes.clone();
    prov.inputs.insert("manifest".into(), mh);
    let clips: Vec<ClipEntry> = built
        .into_iter()
        .map(|(c, inputs)| {
            prov.inputs.extend(inputs);
            c
        })
        .collect();
    let index = LibraryIndex {
        k: cfg.retrieval.k,
        clip_count: clips.len(),
        scene_count: clips.iter().map(|c| c.scenes.len()).sum(),
        clips,
        provenance: prov,
    };
    write_json(&out_dir.join(LIBRARY_INDEX), &index)?;
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtFile {
    pub objects: Vec<GtObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub scene_id: String,
    pub fidelity: FidelityReport,
    /// Matched (placement index, ground-truth index) pairs.
    pub matches: Vec<MatchPair>,
    pub provenance: Provenance,
}

pub fn evaluate_scene(scene: &SceneSpec, gt: &[GtObject], cfg: &PipelineConfig) -> (FidelityReport, Vec<MatchPair>) {
    let pred: Vec<PredObject> = scene.placements.iter().map(PredObject::from).collect();
    let matches = match_objects(&pred, gt, cfg.evaluation.max_dist);
    (fidelity(&pred, gt, &matches), matches)
}

pub fn cmd_evaluate(pred: &Path, gt: &Path, out: &Path, cfg: &PipelineConfig) -> CliResult<EvaluationReport> {
    let (scene, ph): (SceneSpec, String) = read_json_hashed(pred)?;
    let (gt_file, gh): (GtFile, String) = read_json_hashed(gt)?;
    let (fidelity, matches) = evaluate_scene(&scene, &gt_file.objects, cfg);
    let prov = provenance(cfg).with_input_hash("pred", ph).with_input_hash("gt", gh);
    let report = EvaluationReport { scene_id: scene.scene_id, fidelity, matches, provenance: prov };
    write_json(out, &report)?;
    Ok(report)
}

trait WithHash {
    fn with_input_hash(self, role: &str, hash: String) -> Self;
}

impl WithHash for Provenance {
    fn with_input_hash(mut self, role: &str, hash: String) -> Self {
        self.inputs.insert(role.into(), hash);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub fit: ScalingFit,
    /// Zero-based data rows dropped because SR = 1 leaves log error undefined.
    pub excluded: Vec<usize>,
    pub provenance: Provenance,
}

#[derive(Debug, Deserialize)]
struct PointRow {
    #[serde(rename = "N")]
    n: f64,
    #[serde(rename = "SR")]
    sr: f64,
}

pub fn parse_points(path: &Path, bytes: &[u8]) -> CliResult<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    rdr.deserialize::<PointRow>()
        .map(|r| r.map(|p| (p.n, p.sr)).map_err(|e| CliError::parse(path, e)))
        .collect()
}

pub fn cmd_scaling_fit(points: &Path, out: &Path, cfg: &PipelineConfig) -> CliResult<FitReport> {
    let bytes = read_bytes(points)?;
    let pts = parse_points(points, &bytes)?;
    let (fit, excluded) = fit_power_law_excluding(&pts).stage("fit")?;
    let report = FitReport { fit, excluded, provenance: provenance(cfg).with_input_hash("points", sha256_hex(&bytes)) };
    write_json(out, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavsimReport {
    pub scene_id: String,
    pub policy: PolicyKind,
    pub seed: u64,
    pub start: [f64; 3],
    pub episode: Episode,
    pub provenance: Provenance,
}

pub fn cmd_navsim(
    scene_path: &Path,
    policy: PolicyKind,
    start: [f64; 3],
    goal: Option<[f64; 2]>,
    seed: u64,
    out: &Path,
    cfg: &PipelineConfig,
) -> CliResult<NavsimReport> {
    let (scene, sh): (SceneSpec, String) = read_json_hashed(scene_path)?;
    let nav = NavScene::from_scene(&scene);
    let start_state = AgentState::at_rest(Vec2::new(start[0], start[1]), start[2]);
    let goal = match goal {
        Some([x, y]) => Vec2::new(x, y),
        None => sample_goal(&nav, &start_state.position, &cfg.navsim, &mut synth::rng(seed)).stage("navsim")?,
    };
    let mut pol = ScriptedPolicy::new(policy, seed.wrapping_add(1), cfg.policy.noise_std);
    let episode = run_episode(&nav, start_state, goal, &mut pol, &cfg.navsim, &cfg.reward);
    let mut pcfg = cfg.clone();
    pcfg.seed = seed;
    let report = NavsimReport {
        scene_id: scene.scene_id,
        policy,
        seed,
        start,
        episode,
        provenance: provenance(&pcfg).with_input_hash("scene", sh),
    };
    write_json(out, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    Config,
    Frames,
    Detections,
    Groundmasks,
    Graph,
    Selection,
    Scene,
    Assets,
    Materials,
    Skies,
    Manifest,
    Library,
    Gt,
    Report,
    Fit,
    Episode,
}

impl ArtifactKind {
    /// Guess from the file name; `None` when ambiguous.
    pub fn infer(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        let table: [(&str, Self); 16] = [
            (".toml", Self::Config),
            ("frames.json", Self::Frames),
            ("detections", Self::Detections),
            ("groundmask", Self::Groundmasks),
            ("scenegraph", Self::Graph),
            ("graph", Self::Graph),
            ("selection", Self::Selection),
            ("scene_", Self::Scene),
            ("asset", Self::Assets),
            ("material", Self::Materials),
            ("sk", Self::Skies),
            ("manifest", Self::Manifest),
            ("library.json", Self::Library),
            ("gt", Self::Gt),
            ("report", Self::Report),
            ("fit", Self::Fit),
        ];
        if name.contains("episode") {
            return Some(Self::Episode);
        }
        table.iter().find(|(pat, _)| name.contains(pat)).map(|(_, k)| *k)
    }
}

fn check<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> CliResult<T> {
    parse_json(path, bytes)
}

fn check_jsonl<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> CliResult<usize> {
    parse_jsonl::<T, _>(bytes, &path.display().to_string())
        .map(|v| v.len())
        .map_err(|e| CliError::new("schema", e.to_string()).with_path(path))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Validation {
    pub valid: bool,
    pub kind: ArtifactKind,
    pub path: String,
}

/// Schema-checks one artifact. Scene graphs also have their structural
/// invariants checked.
pub fn cmd_validate(path: &Path, kind: Option<ArtifactKind>) -> CliResult<Validation> {
    let kind = kind
        .or_else(|| ArtifactKind::infer(path))
        .ok_or_else(|| CliError::new("usage", "cannot infer artifact kind; pass --kind").with_path(path))?;
    let bytes = read_bytes(path)?;
    match kind {
        ArtifactKind::Config => {
            let text = std::str::from_utf8(&bytes).map_err(|e| CliError::parse(path, e))?;
            PipelineConfig::from_toml(text).map_err(|e| e.with_path(path))?;
        }
        ArtifactKind::Frames => drop(check::<crate::bundle::FramesFile>(path, &bytes)?),
        ArtifactKind::Detections => drop(check_jsonl::<cousinforge::fusion::DetectionRecord>(path, &bytes)?),
        ArtifactKind::Groundmasks => drop(check_jsonl::<cousinforge::fusion::GroundMaskRecord>(path, &bytes)?),
        ArtifactKind::Graph => {
            let g: SceneGraph = check(path, &bytes)?;
            g.validate().map_err(|e| CliError::new("schema", e.to_string()).with_path(path))?;
        }
        ArtifactKind::Selection => drop(check::<CousinSelection>(path, &bytes)?),
        ArtifactKind::Scene => drop(check::<SceneSpec>(path, &bytes)?),
        ArtifactKind::Assets => {
            let assets = parse_jsonl::<AssetRecord, _>(bytes.as_slice(), &path.display().to_string())
                .map_err(|e| CliError::new("schema", e.to_string()).with_path(path))?;
            Catalog::new(assets).map_err(|e| CliError::new("schema", e.to_string()).with_path(path))?;
        }
        ArtifactKind::Materials => drop(check_jsonl::<GroundMaterial>(path, &bytes)?),
        ArtifactKind::Skies => drop(check_jsonl::<SkyAsset>(path, &bytes)?),
        ArtifactKind::Manifest => drop(check::<Manifest>(path, &bytes)?),
        ArtifactKind::Library => drop(check::<LibraryIndex>(path, &bytes)?),
        ArtifactKind::Gt => drop(check::<GtFile>(path, &bytes)?),
        ArtifactKind::Report => drop(check::<EvaluationReport>(path, &bytes)?),
        ArtifactKind::Fit => drop(check::<FitReport>(path, &bytes)?),
        ArtifactKind::Episode => drop(check::<NavsimReport>(path, &bytes)?),
    }
    Ok(Validation { valid: true, kind, path: path.display().to_string() })
}

/// Parses `x,y,theta` or `x,y`.
pub fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers, got `{s}`"));
    }
    let mut out = [0.0f64; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
        if !o.is_finite() {
            return Err(format!("`{p}` is not finite"));
        }
    }
    Ok(out)
}

/// Reads a JSON artifact of a known type; used by tests and tooling.
pub fn read_artifact<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    read_json(path)
}
