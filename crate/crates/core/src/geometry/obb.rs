use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use super::polygon::{area, clip_convex, convex_hull};
use super::{GeometryError, PointCloud, Vec2, Vec3};

/// A box rotated about world +z. `dims` are full extents along the box
/// frame axes; `yaw` is the angle of the box x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientedBox {
    pub center: Vec3,
    pub dims: Vec3,
    pub yaw: f64,
}

impl OrientedBox {
    pub fn new(center: Vec3, dims: Vec3, yaw: f64) -> Self {
        Self { center, dims, yaw }
    }

    pub fn is_valid(&self) -> bool {
        self.dims.iter().all(|d| *d > 0.0 && d.is_finite())
            && self.center.iter().all(|c| c.is_finite())
            && self.yaw.is_finite()
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    pub fn bev_area(&self) -> f64 {
        self.dims.x * self.dims.y
    }

    pub fn bev_diagonal(&self) -> f64 {
        self.dims.x.hypot(self.dims.y)
    }

    pub fn z_min(&self) -> f64 {
        self.center.z - 0.5 * self.dims.z
    }

    pub fn z_max(&self) -> f64 {
        self.center.z + 0.5 * self.dims.z
    }

    /// Unit x and y axes of the box in the ground plane.
    pub fn bev_axes(&self) -> (Vec2, Vec2) {
        let (s, c) = self.yaw.sin_cos();
        (Vec2::new(c, s), Vec2::new(-s, c))
    }

    /// Footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [Vec2; 4] {
        let (ax, ay) = self.bev_axes();
        let c = self.center.xy();
        let hx = ax * (0.5 * self.dims.x);
        let hy = ay * (0.5 * self.dims.y);
        [c - hx - hy, c + hx - hy, c + hx + hy, c - hx + hy]
    }

    /// Point expressed in the box frame (origin at center, axes rotated by yaw).
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        let (ax, ay) = self.bev_axes();
        let d = p - self.center;
        Vec3::new(d.xy().dot(&ax), d.xy().dot(&ay), d.z)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= 0.5 * self.dims.x && l.y.abs() <= 0.5 * self.dims.y && l.z.abs() <= 0.5 * self.dims.z
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        let a = [self.center.x, self.center.y, self.center.z, self.dims.x, self.dims.y, self.dims.z, self.yaw];
        let b = [other.center.x, other.center.y, other.center.z, other.dims.x, other.dims.y, other.dims.z, other.yaw];
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

/// Relative tolerance under which two horizontal extents count as equal
/// (square footprint) when canonicalizing yaw.
const SQUARE_TOL: f64 = 1e-9;

/// Minimum-area rectangle of the ground projection via rotating calipers
/// over the convex hull; z extent from the raw points.
///
/// The result is canonical: `dims.x >= dims.y` (the box x axis runs along
/// the longer horizontal side) and `yaw` lies in (-pi/2, pi/2]. Square
/// footprints use yaw in (-pi/4, pi/4].
pub fn fit_oriented_box(cloud: &PointCloud) -> Result<OrientedBox, GeometryError> {
    if cloud.len() < 3 {
        return Err(GeometryError::DegenerateCloud("fewer than 3 points"));
    }
    if !cloud.is_finite() {
        return Err(GeometryError::DegenerateCloud("non-finite coordinates"));
    }
    let bev: Vec<Vec2> = cloud.points.iter().map(|p| p.xy()).collect();
    let hull = convex_hull(&bev);
    if hull.len() < 3 {
        return Err(GeometryError::DegenerateCloud("collinear ground projection"));
    }

    // Work relative to a hull vertex for precision.
    let origin = hull[0];
    let mut best: Option<(f64, Vec2, [f64; 4])> = None;
    for i in 0..hull.len() {
        let edge = hull[(i + 1) % hull.len()] - hull[i];
        let len = edge.norm();
        if len == 0.0 {
            continue;
        }
        let ax = edge / len;
        let ay = Vec2::new(-ax.y, ax.x);
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let d = p - origin;
            let (px, py) = (d.dot(&ax), d.dot(&ay));
            x0 = x0.min(px);
            x1 = x1.max(px);
            y0 = y0.min(py);
            y1 = y1.max(py);
        }
        let a = (x1 - x0) * (y1 - y0);
        if best.as_ref().is_none_or(|(ba, _, _)| a < *ba) {
            best = Some((a, ax, [x0, x1, y0, y1]));
        }
    }
    let (rect_area, ax, [x0, x1, y0, y1]) =
        best.ok_or(GeometryError::DegenerateCloud("empty hull"))?;
    let scale = hull.iter().map(|p| (p - origin).norm()).fold(0.0, f64::max);
    if !(rect_area > 1e-12 * scale * scale) {
        return Err(GeometryError::DegenerateCloud("collinear ground projection"));
    }

    let ay = Vec2::new(-ax.y, ax.x);
    let center_xy = origin + ax * (0.5 * (x0 + x1)) + ay * (0.5 * (y0 + y1));
    let (z0, z1) = cloud
        .points
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
    if !(z1 > z0) {
        return Err(GeometryError::DegenerateCloud("zero vertical extent"));
    }

    let (yaw, lx, ly) = canonical_yaw(ax.y.atan2(ax.x), x1 - x0, y1 - y0);
    Ok(OrientedBox {
        center: Vec3::new(center_xy.x, center_xy.y, 0.5 * (z0 + z1)),
        dims: Vec3::new(lx, ly, z1 - z0),
        yaw,
    })
}

/// Picks one of the four equivalent (yaw, extents) descriptions.
fn canonical_yaw(mut yaw: f64, mut lx: f64, mut ly: f64) -> (f64, f64, f64) {
    let square = (lx - ly).abs() <= SQUARE_TOL * lx.max(ly);
    if !square && ly > lx {
        std::mem::swap(&mut lx, &mut ly);
        yaw += FRAC_PI_2;
    }
    let (lo, period) = if square { (-FRAC_PI_4, FRAC_PI_2) } else { (-FRAC_PI_2, PI) };
    // into (lo, lo + period]
    yaw = lo + period - (lo + period - yaw).rem_euclid(period);
    (yaw, lx, ly)
}

/// Area of the intersection of two box footprints.
pub fn bev_intersection_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    // Clip in a fixed argument order so the result is exactly symmetric.
    let (a, b) = if a.total_cmp(b).is_le() { (a, b) } else { (b, a) };
    area(&clip_convex(&a.bev_corners(), &b.bev_corners()))
}

/// Footprint intersection-over-union.
pub fn bev_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = bev_intersection_area(a, b);
    let union = a.bev_area() + b.bev_area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU of two yaw-rotated boxes: footprint intersection times
/// vertical overlap, over the union of volumes.
pub fn iou_3d(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let dz = a.z_max().min(b.z_max()) - a.z_min().max(b.z_min());
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
