use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use super::{DepthMap, GeometryError, PointCloud, Vec3};
use crate::mask::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    /// Row-major.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<PoseRepr> for Pose {
    type Error = GeometryError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        let m = r.rotation;
        let rot = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        Pose::new(rot, Vec3::from(r.translation))
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let r = &p.rotation;
        PoseRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-6 && (det - 1.0).abs() <= 1e-6) {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation not orthonormal (err {ortho:e}, det {det})"
            )));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidCamera("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Camera looking from `eye` toward `target`, image y pointing as close
    /// to world -z as possible (OpenCV convention: x right, y down, z forward).
    pub fn look_at(eye: Vec3, target: Vec3) -> Result<Self, GeometryError> {
        let forward = (target - eye).normalize();
        let down = Vec3::new(0.0, 0.0, -1.0);
        let right = forward.cross(&down);
        if right.norm() < 1e-9 {
            return Err(GeometryError::InvalidCamera("look_at along vertical".into()));
        }
        let right = right.normalize();
        let y = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, y, forward]);
        Pose::new(rotation, eye)
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn to_world(&self, p_cam: &Vec3) -> Vec3 {
        self.rotation * p_cam + self.translation
    }

    pub fn to_camera(&self, p_world: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p_world - self.translation)
    }
}

/// One frame of upstream structure-from-motion output.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub frame_id: u32,
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub depth: DepthMap,
}

impl CameraFrame {
    pub fn new(
        frame_id: u32,
        intrinsics: Intrinsics,
        pose: Pose,
        depth: DepthMap,
    ) -> Result<Self, GeometryError> {
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::InvalidCamera("non-finite principal point".into()));
        }
        Ok(Self {
            frame_id,
            intrinsics,
            pose,
            depth,
        })
    }

    pub fn width(&self) -> u32 {
        self.depth.width()
    }

    pub fn height(&self) -> u32 {
        self.depth.height()
    }

    /// Back-projects continuous pixel coordinates at metric depth `d`.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> Vec3 {
        let k = &self.intrinsics;
        let ray = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        self.pose.to_world(&(ray * d))
    }

    /// Projects a world point to `(u, v, depth)`.
    pub fn project(&self, p_world: &Vec3) -> (f64, f64, f64) {
        let k = &self.intrinsics;
        let pc = self.pose.to_camera(p_world);
        (k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy, pc.z)
    }

    fn valid_depth(&self, u: u32, v: u32) -> Option<f64> {
        let d = self.depth.get(u, v);
        (d.is_finite() && d > 0.0).then_some(d as f64)
    }
}

pub fn lift_pixel(frame: &CameraFrame, u: u32, v: u32) -> Result<Vec3, GeometryError> {
    if u >= frame.width() || v >= frame.height() {
        return Err(GeometryError::OutOfBounds {
            u,
            v,
            width: frame.width(),
            height: frame.height(),
        });
    }
    let d = frame
        .valid_depth(u, v)
        .ok_or(GeometryError::InvalidDepth { u, v })?;
    Ok(frame.unproject(u as f64, v as f64, d))
}

/// Lifts every masked pixel with valid depth, in row-major order. Holes in
/// the depth map are skipped.
pub fn lift_mask(frame: &CameraFrame, mask: &BinaryMask) -> Result<PointCloud, GeometryError> {
    if mask.width() != frame.width() || mask.height() != frame.height() {
        return Err(GeometryError::MaskSizeMismatch {
            mask_w: mask.width(),
            mask_h: mask.height(),
            frame_w: frame.width(),
            frame_h: frame.height(),
        });
    }
    let points: Vec<Vec3> = mask
        .iter_set()
        .filter_map(|(u, v)| {
            frame
                .valid_depth(u, v)
                .map(|d| frame.unproject(u as f64, v as f64, d))
        })
        .collect();
    if points.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    Ok(PointCloud::new(points))
}
