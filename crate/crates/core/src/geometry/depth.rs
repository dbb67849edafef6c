use std::io::{Read, Write};
use std::path::Path;

use super::GeometryError;

const MAGIC: &[u8; 8] = b"UVDEPTH1";

/// Dense per-pixel metric depth, row-major. `0` and `NaN` mark holes.
///
/// On disk: the magic `UVDEPTH1`, little-endian `u32` width and height,
/// then `width * height` little-endian `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self, GeometryError> {
        if data.len() != width as usize * height as usize {
            return Err(GeometryError::DepthFormat(format!(
                "expected {} values for {}x{}, got {}",
                width as usize * height as usize,
                width,
                height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, d: f32) {
        self.data[v as usize * self.width as usize + u as usize] = d;
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for d in &self.data {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, GeometryError> {
        let io = |e: std::io::Error| GeometryError::DepthFormat(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(GeometryError::DepthFormat("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(io)?;
        let width = u32::from_le_bytes(word);
        r.read_exact(&mut word).map_err(io)?;
        let height = u32::from_le_bytes(word);
        let n = width as usize * height as usize;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw).map_err(io)?;
        if raw.len() != n * 4 {
            return Err(GeometryError::DepthFormat(format!(
                "expected {} payload bytes, found {}",
                n * 4,
                raw.len()
            )));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let bytes = std::fs::read(path)
            .map_err(|e| GeometryError::DepthFormat(format!("{}: {e}", path.display())))?;
        Self::read_from(bytes.as_slice())
            .map_err(|e| GeometryError::DepthFormat(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let d = DepthMap::new(2, 1, vec![1.5, f32::NAN]).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], b"UVDEPTH1");
        assert_eq!(&buf[8..12], &[2, 0, 0, 0]);
        assert_eq!(&buf[12..16], &[1, 0, 0, 0]);
        assert_eq!(&buf[16..20], &1.5f32.to_le_bytes());
        assert_eq!(buf.len(), 24);
        let back = DepthMap::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.get(0, 0), 1.5);
        assert!(back.get(1, 0).is_nan());
    }

    #[test]
    fn rejects_truncated_payload() {
        let d = DepthMap::filled(3, 3, 1.0);
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        buf.pop();
        assert!(DepthMap::read_from(buf.as_slice()).is_err());
        assert!(DepthMap::read_from(&b"NOTDEPTH"[..]).is_err());
    }
}
