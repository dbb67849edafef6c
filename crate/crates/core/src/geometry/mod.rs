//! Camera math, metric lifting, oriented boxes and overlap primitives.

mod camera;
mod depth;
mod obb;
pub mod polygon;
mod voxel;

pub use camera::{lift_mask, lift_pixel, CameraFrame, Intrinsics, Pose};
pub use depth::DepthMap;
pub use obb::{bev_intersection_area, bev_iou, fit_oriented_box, iou_3d, OrientedBox};
pub use voxel::{cloud_overlap, voxel_downsample, voxel_key, VoxelSet, DEFAULT_VOXEL};

use serde::{Deserialize, Serialize};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Vec2 = nalgebra::Vector2<f64>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid depth at pixel ({u}, {v})")]
    InvalidDepth { u: u32, v: u32 },
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds {
        u: u32,
        v: u32,
        width: u32,
        height: u32,
    },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("degenerate cloud: {0}")]
    DegenerateCloud(&'static str),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("mask is {mask_w}x{mask_h}, frame is {frame_w}x{frame_h}")]
    MaskSizeMismatch {
        mask_w: u32,
        mask_h: u32,
        frame_w: u32,
        frame_h: u32,
    },
    #[error("voxel size must be positive, got {0}")]
    NonPositiveVoxel(f64),
    #[error("depth file: {0}")]
    DepthFormat(String),
}

/// A set of world-frame points in meters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend_from(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}
