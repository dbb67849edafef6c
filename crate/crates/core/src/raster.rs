//! Small 8-bit RGB rasters: full frames for sky parsing and fixed 64x64
//! patches for ground-material matching.

use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const PATCH_SIZE: usize = 64;
pub const PATCH_BYTES: usize = PATCH_SIZE * PATCH_SIZE * 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 3).then_some(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self { width, height, data }
    }

    pub fn pixel(&self, u: u32, v: u32) -> [u8; 3] {
        let i = (v as usize * self.width as usize + u as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, u: u32, v: u32, rgb: [u8; 3]) {
        let i = (v as usize * self.width as usize + u as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Pixels of rows `[0, height / 2)`.
    pub fn upper_half(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        let rows = self.height as usize / 2;
        self.data[..rows * self.width as usize * 3]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
    }
}

/// A 64x64 RGB patch, serialized as base64 of the raw bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct Patch(Box<[u8; PATCH_BYTES]>);

impl Patch {
    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let arr: Box<[u8; PATCH_BYTES]> = bytes.to_vec().into_boxed_slice().try_into().ok()?;
        Some(Self(arr))
    }

    pub fn filled(rgb: [u8; 3]) -> Self {
        let bytes: Vec<u8> = rgb.iter().copied().cycle().take(PATCH_BYTES).collect();
        Self::from_bytes(&bytes).expect("patch size")
    }

    pub fn bytes(&self) -> &[u8] {
        &self.0[..]
    }

    /// Mean squared error with channels scaled to [0, 1].
    pub fn mse(&self, other: &Patch) -> f64 {
        let sum: f64 = self
            .0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| {
                let d = (*a as f64 - *b as f64) / 255.0;
                d * d
            })
            .sum();
        sum / PATCH_BYTES as f64
    }
}

impl std::fmt::Debug for Patch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Patch({} bytes)", PATCH_BYTES)
    }
}

impl Serialize for Patch {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(self.bytes()))
    }
}

impl<'de> Deserialize<'de> for Patch {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text.as_bytes())
            .map_err(serde::de::Error::custom)?;
        let n = bytes.len();
        Patch::from_bytes(&bytes).ok_or_else(|| {
            serde::de::Error::custom(format!("patch must be {PATCH_BYTES} bytes, got {n}"))
        })
    }
}
