use std::collections::{BTreeMap, HashSet};

use super::{GeometryError, PointCloud, Vec3};

pub const DEFAULT_VOXEL: f64 = 0.10;

pub type VoxelKey = [i64; 3];

/// Voxel index of `p` on the origin-anchored grid.
pub fn voxel_key(p: &Vec3, voxel: f64) -> VoxelKey {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

/// Occupied voxels of a cloud.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VoxelSet {
    keys: HashSet<VoxelKey>,
}

impl VoxelSet {
    pub fn from_cloud(cloud: &PointCloud, voxel: f64) -> Result<Self, GeometryError> {
        if !(voxel > 0.0) {
            return Err(GeometryError::NonPositiveVoxel(voxel));
        }
        Ok(Self {
            keys: cloud.points.iter().map(|p| voxel_key(p, voxel)).collect(),
        })
    }

    pub fn from_keys(keys: impl IntoIterator<Item = VoxelKey>) -> Self {
        Self {
            keys: keys.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn intersection_len(&self, other: &VoxelSet) -> usize {
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        small.keys.iter().filter(|k| large.keys.contains(*k)).count()
    }

    /// `|A ∩ B| / min(|A|, |B|)`.
    pub fn overlap(&self, other: &VoxelSet) -> Result<f64, GeometryError> {
        if self.is_empty() || other.is_empty() {
            return Err(GeometryError::EmptyCloud);
        }
        Ok(self.intersection_len(other) as f64 / self.len().min(other.len()) as f64)
    }
}

/// Fraction of the smaller cloud's occupied voxels that the other cloud
/// also occupies.
pub fn cloud_overlap(a: &PointCloud, b: &PointCloud, voxel: f64) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    VoxelSet::from_cloud(a, voxel)?.overlap(&VoxelSet::from_cloud(b, voxel)?)
}

/// One centroid per occupied voxel, ordered by voxel index. Sums are taken
/// in input order so the output is reproducible bit for bit.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud, GeometryError> {
    if !(voxel > 0.0) {
        return Err(GeometryError::NonPositiveVoxel(voxel));
    }
    let mut acc: BTreeMap<VoxelKey, (Vec3, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let e = acc.entry(voxel_key(p, voxel)).or_insert((Vec3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    Ok(PointCloud::new(
        acc.into_values().map(|(s, n)| s / n as f64).collect(),
    ))
}
