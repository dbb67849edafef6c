//! Reconstruction fidelity, 3D detection AP, power-law scaling fits and
//! navigation outcome metrics.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::assembly::Placement;
use crate::geometry::{iou_3d, wrap_angle, OrientedBox, Vec2};
use crate::scenegraph::ObjectNode;

pub const DEFAULT_MAX_DIST: f64 = 5.0;
pub const AP_IOU: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("power-law fit needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("point {index}: error 1-SR = {error} is not positive")]
    ZeroError { index: usize, error: f64 },
    #[error("point {index}: N = {n} must be positive and finite")]
    InvalidN { index: usize, n: f64 },
    #[error("all points share the same N")]
    DegenerateN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtObject {
    pub category: String,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_asset_id: Option<String>,
}

/// A predicted object as seen by the metrics, built from either a scene
/// graph node or a scene placement.
#[derive(Debug, Clone, PartialEq)]
pub struct PredObject {
    pub id: u32,
    pub category: String,
    pub bbox: OrientedBox,
    pub heading: f64,
    pub score: f64,
    pub asset_id: Option<String>,
}

impl From<&Placement> for PredObject {
    fn from(p: &Placement) -> Self {
        Self {
            id: p.node_id,
            category: p.category.clone(),
            bbox: p.footprint,
            heading: p.heading,
            score: p.score,
            asset_id: Some(p.asset_id.clone()),
        }
    }
}

impl From<&ObjectNode> for PredObject {
    fn from(n: &ObjectNode) -> Self {
        Self {
            id: n.node_id,
            category: n.category.clone(),
            bbox: n.bbox,
            heading: n.heading,
            score: 1.0,
            asset_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub dist: f64,
}

/// Greedy one-to-one matching by ascending centroid distance. Pairs
/// farther than `max_dist` stay unmatched; ties go to the smaller
/// (pred id, gt index). Returned pairs are sorted by gt index.
pub fn match_objects(pred: &[PredObject], gt: &[GtObject], max_dist: f64) -> Vec<MatchPair> {
    let mut cands = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            let dist = (p.bbox.center - g.bbox.center).norm();
            if dist <= max_dist {
                cands.push(MatchPair { pred: pi, gt: gi, dist });
            }
        }
    }
    cands.sort_by(|a, b| {
        a.dist
            .total_cmp(&b.dist)
            .then(pred[a.pred].id.cmp(&pred[b.pred].id))
            .then(a.pred.cmp(&b.pred))
            .then(a.gt.cmp(&b.gt))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut out = Vec::new();
    for c in cands {
        if !pred_used[c.pred] && !gt_used[c.gt] {
            pred_used[c.pred] = true;
            gt_used[c.gt] = true;
            out.push(c);
        }
    }
    out.sort_by_key(|m| m.gt);
    out
}

/// Heading difference in degrees folded into [0, 90]: boxes cannot tell
/// front from back.
pub fn folded_heading_error_deg(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b).abs().to_degrees();
    d.min(180.0 - d).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityReport {
    /// Percent of ground-truth objects matched with the right category.
    pub cat_recovery: Option<f64>,
    /// Percent of asset-annotated ground-truth objects matched to that asset.
    pub asset_recovery: Option<f64>,
    /// Mean centroid distance over matched pairs, meters.
    pub dist_err: Option<f64>,
    /// Mean folded heading error over matched pairs, degrees.
    pub ori_err: Option<f64>,
    /// Mean absolute volume difference over matched pairs, cubic meters.
    pub scale_err: Option<f64>,
    pub map25: Option<f64>,
    pub n_pred: usize,
    pub n_gt: usize,
    pub n_matched: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn fidelity(pred: &[PredObject], gt: &[GtObject], matching: &[MatchPair]) -> FidelityReport {
    let pct = |num: usize, den: usize| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    let cat_ok = matching
        .iter()
        .filter(|m| pred[m.pred].category == gt[m.gt].category)
        .count();
    let with_asset = gt.iter().filter(|g| g.gt_asset_id.is_some()).count();
    let asset_ok = matching
        .iter()
        .filter(|m| gt[m.gt].gt_asset_id.is_some() && pred[m.pred].asset_id == gt[m.gt].gt_asset_id)
        .count();
    FidelityReport {
        cat_recovery: pct(cat_ok, gt.len()),
        asset_recovery: pct(asset_ok, with_asset),
        dist_err: mean(matching.iter().map(|m| m.dist)),
        ori_err: mean(
            matching
                .iter()
                .map(|m| folded_heading_error_deg(pred[m.pred].heading, gt[m.gt].bbox.yaw)),
        ),
        scale_err: mean(
            matching
                .iter()
                .map(|m| (pred[m.pred].bbox.volume() - gt[m.gt].bbox.volume()).abs()),
        ),
        map25: (!gt.is_empty()).then(|| map25(pred, gt)),
        n_pred: pred.len(),
        n_gt: gt.len(),
        n_matched: matching.len(),
    }
}

/// All-point interpolated average precision of one ranked TP/FP sequence.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len())
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

/// Mean over ground-truth categories of the AP at 3D IoU >= 0.25.
/// Predictions are ranked by descending score, ties by id; each takes the
/// unmatched ground truth of its category with the highest IoU.
pub fn map25(pred: &[PredObject], gt: &[GtObject]) -> f64 {
    let cats: BTreeSet<&str> = gt.iter().map(|g| g.category.as_str()).collect();
    if cats.is_empty() {
        return 0.0;
    }
    let total: f64 = cats
        .iter()
        .map(|&cat| {
            let mut ps: Vec<&PredObject> = pred.iter().filter(|p| p.category == cat).collect();
            ps.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
            let gs: Vec<&GtObject> = gt.iter().filter(|g| g.category == cat).collect();
            let mut used = vec![false; gs.len()];
            let tp: Vec<bool> = ps
                .iter()
                .map(|p| {
                    let mut best: Option<(usize, f64)> = None;
                    for (gi, g) in gs.iter().enumerate() {
                        if used[gi] {
                            continue;
                        }
                        let iou = iou_3d(&p.bbox, &g.bbox);
                        if iou >= AP_IOU && best.is_none_or(|(_, b)| iou > b) {
                            best = Some((gi, iou));
                        }
                    }
                    best.map(|(gi, _)| used[gi] = true).is_some()
                })
                .collect();
            average_precision(&tp, gs.len())
        })
        .sum();
    total / cats.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingFit {
    pub alpha: f64,
    pub beta: f64,
    pub pearson_r: f64,
    pub n_points: usize,
    /// (ln N, ln E) pairs used by the fit.
    pub log_points: Vec<[f64; 2]>,
}

/// Fits E = beta * N^(-alpha) with E = 1 - SR by least squares on
/// (ln N, ln E).
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<ScalingFit, EvalError> {
    if points.len() < 2 {
        return Err(EvalError::TooFewPoints(points.len()));
    }
    let mut logs = Vec::with_capacity(points.len());
    for (index, &(n, sr)) in points.iter().enumerate() {
        if !(n.is_finite() && n > 0.0) {
            return Err(EvalError::InvalidN { index, n });
        }
        let error = 1.0 - sr;
        if !(error > 0.0) {
            return Err(EvalError::ZeroError { index, error });
        }
        logs.push([n.ln(), error.ln()]);
    }
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p[0]).sum::<f64>() / k;
    let my = logs.iter().map(|p| p[1]).sum::<f64>() / k;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in &logs {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(EvalError::DegenerateN);
    }
    let slope = sxy / sxx;
    let pearson_r = if syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    Ok(ScalingFit {
        alpha: -slope,
        beta: (my - slope * mx).exp(),
        pearson_r: pearson_r.clamp(-1.0, 1.0),
        n_points: logs.len(),
        log_points: logs,
    })
}

/// [`fit_power_law`] after dropping points whose error 1 - SR is not
/// positive. Returns the indices that were dropped.
pub fn fit_power_law_excluding(points: &[(f64, f64)]) -> Result<(ScalingFit, Vec<usize>), EvalError> {
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        if 1.0 - p.1 > 0.0 {
            kept.push(p);
        } else {
            warn!("excluding point {i} (N={}, SR={}): log error undefined", p.0, p.1);
            excluded.push(i);
        }
    }
    Ok((fit_power_law(&kept)?, excluded))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedPose {
    pub t: f64,
    pub position: Vec2,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    Obstacle,
    OffGround,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionEvent {
    pub step: usize,
    pub t: f64,
    pub kind: CollisionKind,
    /// Placement node hit, for obstacle collisions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavMetrics {
    pub sr: u8,
    pub ct: usize,
    /// Percent of the route covered: the 1-based index of the farthest
    /// waypoint ever within tolerance over the waypoint count.
    pub rc: f64,
    pub dtg: f64,
}

pub fn nav_metrics(
    trajectory: &[TimedPose],
    route: &[Vec2],
    goal: &Vec2,
    tol: f64,
    collisions: &[CollisionEvent],
) -> NavMetrics {
    let Some(last) = trajectory.last() else {
        return NavMetrics { sr: 0, ct: collisions.len(), rc: 0.0, dtg: f64::NAN };
    };
    let dtg = (last.position - goal).norm();
    let farthest = route
        .iter()
        .enumerate()
        .rev()
        .find(|(_, w)| trajectory.iter().any(|p| (p.position - *w).norm() <= tol))
        .map_or(0, |(i, _)| i + 1);
    NavMetrics {
        sr: u8::from(dtg <= tol && collisions.is_empty()),
        ct: collisions.len(),
        rc: if route.is_empty() { 0.0 } else { 100.0 * farthest as f64 / route.len() as f64 },
        dtg,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NavSummary {
    pub episodes: usize,
    /// Percent of successful episodes.
    pub sr: f64,
    pub ct: f64,
    pub rc: f64,
    pub dtg: f64,
}

pub fn summarize_nav(metrics: &[NavMetrics]) -> Option<NavSummary> {
    let n = metrics.len();
    (n > 0).then(|| NavSummary {
        episodes: n,
        sr: 100.0 * metrics.iter().map(|m| f64::from(m.sr)).sum::<f64>() / n as f64,
        ct: metrics.iter().map(|m| m.ct as f64).sum::<f64>() / n as f64,
        rc: metrics.iter().map(|m| m.rc).sum::<f64>() / n as f64,
        dtg: metrics.iter().map(|m| m.dtg).sum::<f64>() / n as f64,
    })
}
