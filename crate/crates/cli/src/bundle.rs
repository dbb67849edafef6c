//! Clip bundles: the on-disk form of one clip's upstream outputs.
//!
//! ```text
//! <clip>/frames.json         source id, per-frame intrinsics, pose, depth and image paths
//! <clip>/detections.jsonl    one detection record per line
//! <clip>/groundmasks.jsonl   one ground mask record per line
//! <clip>/depth/*.uvd         UVDEPTH1 little-endian float depth maps
//! <clip>/images/*.png        RGB frames
//! ```
//!
//! Paths inside `frames.json` are relative to the bundle directory.

use std::collections::BTreeMap;
use std::path::Path;

use cousinforge::canonical::{self, sha256_hex};
use cousinforge::fusion::{DetectionRecord, DistillInput, GroundMaskRecord};
use cousinforge::geometry::{CameraFrame, DepthMap, Intrinsics, Pose};
use cousinforge::raster::RgbImage;
use cousinforge::retrieval::parse_jsonl;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{read_bytes, write_bytes};

pub const FRAMES_FILE: &str = "frames.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const GROUNDMASKS_FILE: &str = "groundmasks.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub frame_id: u32,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub depth: String,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesFile {
    pub source_id: String,
    pub frames: Vec<FrameEntry>,
}

/// A loaded bundle plus the SHA-256 of every file read, keyed by its
/// bundle-relative path.
#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub input: DistillInput,
    pub hashes: BTreeMap<String, String>,
}

fn jsonl<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> CliResult<Vec<T>> {
    parse_jsonl(bytes, &path.display().to_string()).map_err(|e| CliError::parse(path, e))
}

pub fn load_bundle(dir: &Path) -> CliResult<LoadedBundle> {
    let mut hashes = BTreeMap::new();
    let mut read = |rel: &str| -> CliResult<Vec<u8>> {
        let bytes = read_bytes(&dir.join(rel))?;
        hashes.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    };
    let frames_path = dir.join(FRAMES_FILE);
    let ff: FramesFile = crate::io::parse_json(&frames_path, &read(FRAMES_FILE)?)?;
    let mut input = DistillInput { source_id: ff.source_id, ..Default::default() };
    for e in ff.frames {
        let depth_path = dir.join(&e.depth);
        let depth = DepthMap::read_from(read(&e.depth)?.as_slice()).map_err(|err| CliError::parse(&depth_path, err))?;
        let image_path = dir.join(&e.image);
        let png = read(&e.image)?;
        let img = image::load_from_memory_with_format(&png, image::ImageFormat::Png)
            .map_err(|err| CliError::parse(&image_path, err))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let rgb = RgbImage::new(w, h, img.into_raw()).expect("decoded buffer matches its size");
        let frame = CameraFrame::new(e.frame_id, e.intrinsics, e.pose, depth)
            .map_err(|err| CliError::new("schema", format!("frame {}: {err}", e.frame_id)).with_path(&frames_path))?;
        if input.images.insert(e.frame_id, rgb).is_some() {
            return Err(CliError::new("schema", format!("duplicate frame_id {}", e.frame_id)).with_path(&frames_path));
        }
        input.frames.push(frame);
    }
    input.detections = jsonl::<DetectionRecord>(&dir.join(DETECTIONS_FILE), &read(DETECTIONS_FILE)?)?;
    input.ground_masks = jsonl::<GroundMaskRecord>(&dir.join(GROUNDMASKS_FILE), &read(GROUNDMASKS_FILE)?)?;
    Ok(LoadedBundle { input, hashes })
}

fn jsonl_text<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Writes `input` as a bundle under `dir`, creating it if needed.
pub fn write_bundle(dir: &Path, input: &DistillInput) -> CliResult<()> {
    for sub in ["depth", "images"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| CliError::io(&dir.join(sub), e))?;
    }
    let mut frames = Vec::with_capacity(input.frames.len());
    for f in &input.frames {
        let depth = format!("depth/{:06}.uvd", f.frame_id);
        let image = format!("images/{:06}.png", f.frame_id);
        let mut buf = Vec::new();
        f.depth.write_to(&mut buf).map_err(|e| CliError::io(&dir.join(&depth), e))?;
        write_bytes(&dir.join(&depth), &buf)?;
        let img = input
            .images
            .get(&f.frame_id)
            .ok_or_else(|| CliError::new("schema", format!("no image for frame {}", f.frame_id)))?;
        let png_path = dir.join(&image);
        let buf = image::RgbImage::from_raw(img.width, img.height, img.data.clone())
            .ok_or_else(|| CliError::new("schema", format!("bad image buffer for frame {}", f.frame_id)))?;
        let mut png = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut png, image::ImageFormat::Png).map_err(|e| CliError::io(&png_path, e))?;
        write_bytes(&png_path, png.get_ref())?;
        frames.push(FrameEntry { frame_id: f.frame_id, intrinsics: f.intrinsics, pose: f.pose, depth, image });
    }
    let ff = FramesFile { source_id: input.source_id.clone(), frames };
    let frames_path = dir.join(FRAMES_FILE);
    canonical::write_canonical(&ff, &frames_path).map_err(|e| CliError::io(&frames_path, e))?;
    write_bytes(&dir.join(DETECTIONS_FILE), jsonl_text(&input.detections).as_bytes())?;
    write_bytes(&dir.join(GROUNDMASKS_FILE), jsonl_text(&input.ground_masks).as_bytes())?;
    Ok(())
}
