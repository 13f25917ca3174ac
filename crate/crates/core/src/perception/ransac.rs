//! Known-radius circle RANSAC over a triangulated point cloud.

use nalgebra::{DMatrix, DVector, SVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PerceptionError, PointCloud};
use crate::geometry::{circles_from_pair, plane_from_points, point_circle_distance, Circle3, Vec3};
use crate::rng::{stream, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    /// Meters.
    pub inlier_radius: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Visibility threshold used by the state estimator.
    pub min_inliers: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self { inlier_radius: 0.001, iterations: 300, seed: 0, min_inliers: 20 }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), PerceptionError> {
        if !(self.inlier_radius > 0.0) || self.iterations == 0 {
            return Err(PerceptionError::InvalidParams(format!(
                "inlier_radius must be > 0 and iterations >= 1 (got {}, {})",
                self.inlier_radius, self.iterations
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircleFit {
    pub circle: Circle3,
    pub inlier_indices: Vec<usize>,
    pub rms_residual: f64,
}

/// Score of one evaluated candidate, reported to an observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateScore {
    pub round: usize,
    pub circle: Circle3,
    pub inliers: usize,
    pub rms: f64,
}

pub fn ransac_circle(cloud: &PointCloud, radius: f64, params: &RansacParams) -> Result<CircleFit, PerceptionError> {
    ransac_circle_observed(cloud, radius, params, &mut |_| {})
}

/// Seeded triples of distinct indices, one per round.
pub fn sample_triples(n: usize, params: &RansacParams) -> Vec<[usize; 3]> {
    let mut rng = stream(params.seed, Domain::Ransac, n as u64);
    (0..params.iterations)
        .map(|_| {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let (lo, hi) = (a.min(b), a.max(b));
            let mut c = rng.random_range(0..n - 2);
            if c >= lo {
                c += 1;
            }
            if c >= hi {
                c += 1;
            }
            [a, b, c]
        })
        .collect()
}

pub fn ransac_circle_observed(
    cloud: &PointCloud,
    radius: f64,
    params: &RansacParams,
    observer: &mut dyn FnMut(&CandidateScore),
) -> Result<CircleFit, PerceptionError> {
    params.validate()?;
    let n = cloud.len();
    if n < 3 {
        return Err(PerceptionError::TooFewPoints { found: n });
    }
    let triples = sample_triples(n, params);
    ransac_on_triples(cloud, radius, params.inlier_radius, &triples, observer)
}

/// Scores the (up to six) candidates generated by each triple and keeps the
/// one with most inliers; ties go to lower RMS, then to the earlier candidate.
pub fn ransac_on_triples(
    cloud: &PointCloud,
    radius: f64,
    inlier_radius: f64,
    triples: &[[usize; 3]],
    observer: &mut dyn FnMut(&CandidateScore),
) -> Result<CircleFit, PerceptionError> {
    let pts = &cloud.points;
    let mut best: Option<CandidateScore> = None;
    for (round, t) in triples.iter().enumerate() {
        let Ok(plane) = plane_from_points(&pts[t[0]], &pts[t[1]], &pts[t[2]]) else { continue };
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let Ok(circles) = circles_from_pair(&pts[t[i]], &pts[t[j]], &plane.normal, radius) else { continue };
            for circle in circles {
                let (inliers, sum_sq) = pts.iter().fold((0usize, 0.0), |(k, s), p| {
                    let d = point_circle_distance(&circle, p);
                    if d <= inlier_radius {
                        (k + 1, s + d * d)
                    } else {
                        (k, s)
                    }
                });
                let rms = if inliers > 0 { (sum_sq / inliers as f64).sqrt() } else { f64::INFINITY };
                let score = CandidateScore { round, circle, inliers, rms };
                observer(&score);
                let better = match &best {
                    None => true,
                    Some(b) => inliers > b.inliers || (inliers == b.inliers && rms < b.rms),
                };
                if better {
                    best = Some(score);
                }
            }
        }
    }
    let best = best.ok_or(PerceptionError::NoValidCandidate)?;
    let inlier_indices = pts
        .iter()
        .enumerate()
        .filter(|(_, p)| point_circle_distance(&best.circle, p) <= inlier_radius)
        .map(|(i, _)| i)
        .collect();
    Ok(CircleFit { circle: best.circle, inlier_indices, rms_residual: best.rms })
}

/// Least-squares refit of a known-radius circle to `points`, starting from
/// `initial`. Minimizes in-plane radial and out-of-plane residuals over the
/// center and the normal direction with damped Gauss-Newton.
pub fn refine_circle(points: &[Vec3], initial: &Circle3) -> Circle3 {
    if points.len() < 3 {
        return *initial;
    }
    let r = initial.radius;
    let n0 = initial.normal;
    let helper = if n0.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = n0.cross(&helper).normalize();
    let v = n0.cross(&u);
    let unpack = |q: &SVector<f64, 5>| {
        let n = (n0 + u * q[3] + v * q[4]).normalize();
        (Vec3::new(q[0], q[1], q[2]), n)
    };
    let residuals = |q: &SVector<f64, 5>| -> DVector<f64> {
        let (c, n) = unpack(q);
        let mut out = DVector::zeros(points.len() * 2);
        for (k, p) in points.iter().enumerate() {
            let d = p - c;
            let axial = d.dot(&n);
            out[2 * k] = (d - n * axial).norm() - r;
            out[2 * k + 1] = axial;
        }
        out
    };
    let c0 = initial.center;
    let mut q = SVector::<f64, 5>::new(c0.x, c0.y, c0.z, 0.0, 0.0);
    let mut res = residuals(&q);
    let mut cost = res.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..30 {
        let h = 1e-7;
        let mut jac = DMatrix::<f64>::zeros(res.len(), 5);
        for k in 0..5 {
            let mut qp = q;
            qp[k] += h;
            jac.set_column(k, &((residuals(&qp) - &res) / h));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &res;
        let mut accepted = false;
        for _ in 0..6 {
            let mut a = jtj.clone();
            for d in 0..5 {
                a[(d, d)] *= 1.0 + mu;
            }
            let Some(step) = a.lu().solve(&(-&g)) else { break };
            let cand = q + SVector::<f64, 5>::from_iterator(step.iter().copied());
            let cand_res = residuals(&cand);
            let c = cand_res.norm_squared();
            if c < cost {
                accepted = step.norm() > 1e-12;
                q = cand;
                res = cand_res;
                cost = c;
                mu *= 0.3;
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    let (center, normal) = unpack(&q);
    Circle3 { center, normal, radius: r }
}
