//! Needle state estimation from a pair of stereo segmentation masks.
//!
//! The pipeline is distance transform → per-row peaks → all-pairs scanline
//! triangulation → known-radius circle RANSAC → furthest-inlier tip.

mod distance;
mod mask;
mod ransac;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use distance::{distance_transform, row_peaks, scanline_peaks, DistanceGrid};
pub use mask::{Overlay, SegMask};
pub use ransac::{
    ransac_circle, ransac_circle_observed, ransac_on_triples, refine_circle, sample_triples, CandidateScore, CircleFit,
    RansacParams,
};

use crate::geometry::{point_circle_distance, triangulate, Circle3, StereoRig, Vec2, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("cloud has {found} points, RANSAC needs at least 3")]
    TooFewPoints { found: usize },
    #[error("every RANSAC round was degenerate")]
    NoValidCandidate,
    #[error("fit has no inliers")]
    NoInliers,
    #[error("only {inliers} inliers, {required} required")]
    InsufficientObservation { inliers: usize, required: usize },
    #[error("mask is {got:?}, camera expects {expected:?}")]
    MaskSizeMismatch { got: (usize, usize), expected: (usize, usize) },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Triangulated points with the scanline each came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub source_rows: Vec<usize>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeedleStateEstimate {
    /// Center `c_p`, unit normal `c_n` (facing the left camera) and the known radius.
    pub circle: Circle3,
    /// Tip `c_t`: the inlier furthest from the holding gripper.
    pub tip: Vec3,
    pub inlier_count: usize,
    /// Mean of the inliers; tells which side of the tip line the arc lies on.
    pub inlier_centroid: Vec3,
}

/// Pixel-center coordinates of column `col` in row `row`.
pub fn pixel_center(col: usize, row: usize) -> Vec2 {
    Vec2::new(col as f64 + 0.5, row as f64 + 0.5)
}

/// Triangulates every left/right peak pair that shares a row. Pairs with
/// non-positive disparity are dropped.
pub fn build_cloud(rig: &StereoRig, peaks_left: &[Vec<usize>], peaks_right: &[Vec<usize>]) -> PointCloud {
    let mut cloud = PointCloud::default();
    for (row, (left, right)) in peaks_left.iter().zip(peaks_right).enumerate() {
        for &l in left {
            for &r in right {
                if let Ok(p) = triangulate(rig, &pixel_center(l, row), &pixel_center(r, row)) {
                    cloud.points.push(p);
                    cloud.source_rows.push(row);
                }
            }
        }
    }
    cloud
}

/// The inlier furthest from `gripper_pos` (ties: lower index).
pub fn estimate_tip(fit: &CircleFit, cloud: &PointCloud, gripper_pos: &Vec3) -> Result<Vec3, PerceptionError> {
    let mut best: Option<(f64, usize)> = None;
    for &i in &fit.inlier_indices {
        let d = (cloud.points[i] - gripper_pos).norm();
        if best.is_none_or(|(bd, _)| d > bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| cloud.points[i]).ok_or(PerceptionError::NoInliers)
}

/// Intermediate products of one estimation, kept for debugging output.
#[derive(Clone, Debug)]
pub struct Estimation {
    pub estimate: NeedleStateEstimate,
    pub cloud: PointCloud,
    pub fit: CircleFit,
}

pub fn estimate_state(
    masks: (&SegMask, &SegMask),
    rig: &StereoRig,
    gripper_pos: &Vec3,
    radius: f64,
    params: &RansacParams,
) -> Result<NeedleStateEstimate, PerceptionError> {
    estimate_state_detailed(masks, rig, gripper_pos, radius, params).map(|e| e.estimate)
}

pub fn estimate_state_detailed(
    masks: (&SegMask, &SegMask),
    rig: &StereoRig,
    gripper_pos: &Vec3,
    radius: f64,
    params: &RansacParams,
) -> Result<Estimation, PerceptionError> {
    params.validate()?;
    for (mask, cam) in [(masks.0, &rig.left), (masks.1, &rig.right)] {
        if (mask.width(), mask.height()) != (cam.width, cam.height) {
            return Err(PerceptionError::MaskSizeMismatch {
                got: (mask.width(), mask.height()),
                expected: (cam.width, cam.height),
            });
        }
    }
    let insufficient = |inliers| PerceptionError::InsufficientObservation { inliers, required: params.min_inliers };
    let dt_left = distance_transform(&masks.0.fill_pinholes(PINHOLE_NEIGHBORS));
    let peaks_left = scanline_peaks(&dt_left);
    let peaks_right = scanline_peaks(&distance_transform(&masks.1.fill_pinholes(PINHOLE_NEIGHBORS)));
    let cloud = build_cloud(rig, &peaks_left, &peaks_right);
    let fit = match ransac_circle(&cloud, radius, params) {
        Ok(fit) => fit,
        Err(PerceptionError::TooFewPoints { .. } | PerceptionError::NoValidCandidate) => return Err(insufficient(0)),
        Err(e) => return Err(e),
    };
    if fit.inlier_indices.len() < params.min_inliers {
        return Err(insufficient(fit.inlier_indices.len()));
    }
    let fit = gate_on_gripper(&cloud, fit, gripper_pos, radius, params);
    let fit = refine_fit(&cloud, &fit, params.inlier_radius);
    let inlier_count = fit.inlier_indices.len();
    if inlier_count < params.min_inliers {
        return Err(insufficient(inlier_count));
    }
    let mut circle = fit.circle;
    if circle.normal.dot(&(rig.left.position() - circle.center)) < 0.0 {
        circle = circle.flipped();
    }
    let inlier_centroid =
        fit.inlier_indices.iter().map(|&i| cloud.points[i]).sum::<Vec3>() / inlier_count as f64;
    let tip = closest_point_on_circle(&circle, &estimate_tip(&fit, &cloud, gripper_pos)?);
    let tip = extend_tip(&circle, &tip, &inlier_centroid, masks, rig, half_band_px(&dt_left, &peaks_left) + 1.0);
    Ok(Estimation { estimate: NeedleStateEstimate { circle, tip, inlier_count, inlier_centroid }, cloud, fit })
}

/// Isolated missing pixels split scanline plateaus and shift the peaks.
const PINHOLE_NEIGHBORS: usize = 6;

/// The held needle passes through the jaw, so a circle far from the gripper
/// is a fit to mismatched peak pairs. One retry on the points it did not
/// claim; the retry is kept only if it passes the gate.
const GRIPPER_GATE: f64 = 0.008;

fn gate_on_gripper(cloud: &PointCloud, fit: CircleFit, gripper_pos: &Vec3, radius: f64, params: &RansacParams) -> CircleFit {
    if point_circle_distance(&fit.circle, gripper_pos) <= GRIPPER_GATE {
        return fit;
    }
    let claimed: std::collections::HashSet<usize> = fit.inlier_indices.iter().copied().collect();
    let rest: Vec<usize> = (0..cloud.len()).filter(|i| !claimed.contains(i)).collect();
    let sub = PointCloud {
        points: rest.iter().map(|&i| cloud.points[i]).collect(),
        source_rows: rest.iter().map(|&i| cloud.source_rows[i]).collect(),
    };
    match ransac_circle(&sub, radius, params) {
        Ok(alt)
            if alt.inlier_indices.len() >= params.min_inliers
                && point_circle_distance(&alt.circle, gripper_pos) <= GRIPPER_GATE =>
        {
            CircleFit { inlier_indices: alt.inlier_indices.iter().map(|&i| rest[i]).collect(), ..alt }
        }
        _ => fit,
    }
}

/// Two rounds of least-squares refit on the consensus set, re-selecting
/// inliers against the refined circle each time.
fn refine_fit(cloud: &PointCloud, fit: &CircleFit, inlier_radius: f64) -> CircleFit {
    let mut out = fit.clone();
    for _ in 0..2 {
        let pts: Vec<Vec3> = out.inlier_indices.iter().map(|&i| cloud.points[i]).collect();
        let circle = refine_circle(&pts, &out.circle);
        let mut inliers = Vec::new();
        let mut sum_sq = 0.0;
        for (i, p) in cloud.points.iter().enumerate() {
            let d = point_circle_distance(&circle, p);
            if d <= inlier_radius {
                inliers.push(i);
                sum_sq += d * d;
            }
        }
        if inliers.len() < 3 {
            break;
        }
        let rms_residual = (sum_sq / inliers.len() as f64).sqrt();
        out = CircleFit { circle, inlier_indices: inliers, rms_residual };
    }
    out
}

const TIP_WALK_STEP: f64 = 0.25 * std::f64::consts::PI / 180.0;
const TIP_WALK_MAX: f64 = 45.0 * std::f64::consts::PI / 180.0;
const TIP_WALK_GAP: usize = 3;
const TIP_WALK_WINDOW: i64 = 1;

fn covered(mask: &SegMask, px: &Vec2) -> bool {
    let (c, r) = (px.x.floor() as i64, px.y.floor() as i64);
    (-TIP_WALK_WINDOW..=TIP_WALK_WINDOW).any(|dr| {
        (-TIP_WALK_WINDOW..=TIP_WALK_WINDOW).any(|dc| {
            let (cc, rr) = (c + dc, r + dr);
            cc >= 0 && rr >= 0 && (cc as usize) < mask.width() && (rr as usize) < mask.height() && mask.get(cc as usize, rr as usize)
        })
    })
}

/// Median distance-transform value at the peaks, less half a pixel: how far
/// the drawn band reaches past its centerline.
fn half_band_px(dt: &DistanceGrid, peaks: &[Vec<usize>]) -> f64 {
    let mut values: Vec<f64> =
        peaks.iter().enumerate().flat_map(|(row, cols)| cols.iter().map(move |&c| dt.get(c, row))).collect();
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    (values[values.len() / 2] - 0.5).max(0.0)
}

/// Walks the fitted circle past `tip`, away from the inliers, for as long as
/// both masks still show the needle, then steps back `backoff_px` image
/// pixels for the band's end cap. Stereo peaks thin out where the arc runs
/// along the scanlines, so the furthest inlier tends to stop short of the end.
pub fn extend_tip(
    circle: &Circle3,
    tip: &Vec3,
    inlier_centroid: &Vec3,
    masks: (&SegMask, &SegMask),
    rig: &StereoRig,
    backoff_px: f64,
) -> Vec3 {
    let c = circle.center;
    let radial = tip - c;
    if radial.norm() < 1e-12 {
        return *tip;
    }
    let u = radial.normalize();
    let v = circle.normal.cross(&u);
    let sign = if (inlier_centroid - c).dot(&v) > 0.0 { -1.0 } else { 1.0 };
    let point = |a: f64| c + circle.radius * ((sign * a).cos() * u + (sign * a).sin() * v);
    let seen = |p: &Vec3| {
        [(masks.0, &rig.left), (masks.1, &rig.right)]
            .iter()
            .all(|(mask, cam)| cam.project(p).is_ok_and(|px| covered(mask, &px)))
    };
    let (mut best, mut misses, mut a) = (0.0, 0, 0.0);
    while a < TIP_WALK_MAX {
        a += TIP_WALK_STEP;
        if seen(&point(a)) {
            best = a;
            misses = 0;
        } else {
            misses += 1;
            if misses > TIP_WALK_GAP {
                break;
            }
        }
    }
    if best == 0.0 {
        return point(0.0);
    }
    // Image speed of the walk in pixels per radian; the faster camera stops it.
    let h = 1e-3;
    let speed = [&rig.left, &rig.right]
        .iter()
        .filter_map(|cam| Some((cam.project(&point(best + h)).ok()? - cam.project(&point(best - h)).ok()?).norm() / (2.0 * h)))
        .fold(0.0, f64::max);
    let back = if speed > 0.0 { backoff_px / speed } else { 0.0 };
    point((best - back).max(0.0))
}

/// Closest point of the full circle to `p`; `p` itself if it sits on the axis.
pub fn closest_point_on_circle(c: &Circle3, p: &Vec3) -> Vec3 {
    let d = p - c.center;
    let radial = d - c.normal * d.dot(&c.normal);
    if radial.norm() < 1e-12 {
        return *p;
    }
    c.center + radial.normalize() * c.radius
}

/// Writes the left mask with inliers, outliers and the reprojected circle.
pub fn write_overlay(path: &Path, mask: &SegMask, rig: &StereoRig, est: &Estimation) -> Result<(), PerceptionError> {
    let cam = &rig.left;
    let mut overlay = Overlay::from_mask(mask);
    let inliers: std::collections::HashSet<usize> = est.fit.inlier_indices.iter().copied().collect();
    for (i, p) in est.cloud.points.iter().enumerate() {
        if let Ok(px) = cam.project(p) {
            let color = if inliers.contains(&i) { [40, 90, 255] } else { [230, 40, 40] };
            overlay.mark(px.x, px.y, color, 1);
        }
    }
    let c = &est.estimate.circle;
    let u = c.normal.cross(&Vec3::new(0.31, 0.57, 0.76)).normalize();
    let v = c.normal.cross(&u);
    for k in 0..720 {
        let t = k as f64 * std::f64::consts::TAU / 720.0;
        if let Ok(px) = cam.project(&(c.center + c.radius * (t.cos() * u + t.sin() * v))) {
            overlay.mark(px.x, px.y, [40, 220, 60], 0);
        }
    }
    if let Ok(px) = cam.project(&est.estimate.tip) {
        overlay.mark(px.x, px.y, [255, 220, 0], 2);
    }
    overlay.write_ppm(path)
}

/// Distance of the estimated tip to the estimated circle curve.
pub fn tip_circle_distance(est: &NeedleStateEstimate) -> f64 {
    point_circle_distance(&est.circle, &est.tip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at_pose, CameraModel};

    fn rig() -> StereoRig {
        let pose = look_at_pose(Vec3::new(0.0, -0.2, 0.17), Vec3::new(0.0, 0.0, 0.05), Vec3::x()).unwrap();
        StereoRig::new(CameraModel::new(1200.0, 1200.0, 512.0, 384.0, pose, 1024, 768).unwrap(), 0.06).unwrap()
    }

    #[test]
    fn empty_peaks_empty_cloud() {
        let rows = vec![Vec::new(); 768];
        assert!(build_cloud(&rig(), &rows, &rows).is_empty());
    }

    #[test]
    fn single_peak_round_trip() {
        let rig = rig();
        let row = 300;
        let (l, r) = (530usize, 410usize);
        let p = triangulate(&rig, &pixel_center(l, row), &pixel_center(r, row)).unwrap();
        let mut left = vec![Vec::new(); 768];
        let mut right = vec![Vec::new(); 768];
        left[row].push(l);
        right[row].push(r);
        let cloud = build_cloud(&rig, &left, &right);
        assert_eq!(cloud.len(), 1);
        assert!((cloud.points[0] - p).norm() < 1e-9);
        assert_eq!(cloud.source_rows, vec![row]);
    }

    #[test]
    fn all_pairs_counted() {
        let rig = rig();
        let mut left = vec![Vec::new(); 768];
        let mut right = vec![Vec::new(); 768];
        left[100] = vec![600, 700];
        right[100] = vec![300, 350, 400];
        // A pair with negative disparity is skipped.
        left[101] = vec![100];
        right[101] = vec![200, 50];
        let cloud = build_cloud(&rig, &left, &right);
        assert_eq!(cloud.source_rows.iter().filter(|&&r| r == 100).count(), 6);
        assert_eq!(cloud.source_rows.iter().filter(|&&r| r == 101).count(), 1);
    }

    fn fit_with(indices: Vec<usize>) -> CircleFit {
        CircleFit {
            circle: Circle3::new(Vec3::zeros(), Vec3::z(), 0.01).unwrap(),
            inlier_indices: indices,
            rms_residual: 0.0,
        }
    }

    #[test]
    fn tip_single_and_argmax() {
        let cloud = PointCloud {
            points: vec![Vec3::new(0.01, 0.0, 0.0), Vec3::new(0.03, 0.0, 0.0), Vec3::new(0.02, 0.0, 0.0)],
            source_rows: vec![0, 1, 2],
        };
        let g = Vec3::zeros();
        assert_eq!(estimate_tip(&fit_with(vec![2]), &cloud, &g).unwrap(), cloud.points[2]);
        assert_eq!(estimate_tip(&fit_with(vec![0, 1, 2]), &cloud, &g).unwrap(), cloud.points[1]);
        assert_eq!(estimate_tip(&fit_with(vec![]), &cloud, &g), Err(PerceptionError::NoInliers));
    }

    #[test]
    fn tip_of_semicircle_held_at_one_end() {
        // Exhaustive oracle: distance from the held end to every arc sample.
        let r = 0.0125;
        let pts: Vec<Vec3> = (0..=90)
            .map(|i| {
                let t = std::f64::consts::PI * i as f64 / 90.0;
                Vec3::new(r * t.cos(), r * t.sin(), 0.0)
            })
            .collect();
        let held = pts[90];
        let far = pts
            .iter()
            .copied()
            .max_by(|a, b| (a - held).norm().total_cmp(&(b - held).norm()))
            .unwrap();
        let cloud = PointCloud { source_rows: vec![0; pts.len()], points: pts };
        let tip = estimate_tip(&fit_with((0..=90).collect()), &cloud, &held).unwrap();
        assert_eq!(tip, far);
        assert!((tip - Vec3::new(r, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn empty_masks_are_insufficient() {
        let rig = rig();
        let m = SegMask::new(1024, 768);
        let res = estimate_state((&m, &m), &rig, &Vec3::zeros(), 0.0125, &RansacParams::default());
        assert!(matches!(res, Err(PerceptionError::InsufficientObservation { .. })));
    }

    #[test]
    fn mask_size_checked() {
        let rig = rig();
        let m = SegMask::new(10, 10);
        let res = estimate_state((&m, &m), &rig, &Vec3::zeros(), 0.0125, &RansacParams::default());
        assert!(matches!(res, Err(PerceptionError::MaskSizeMismatch { .. })));
    }
}
