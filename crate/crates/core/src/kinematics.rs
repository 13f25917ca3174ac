//! Two-arm kinematic model: remote-center shafts with a 5-DOF wrist, cable
//! positioning error, and a box-tolerance inverse kinematics solver.
//!
//! The orientation of a gripper at translation `t` is
//! `R_shaft(t) · Rz(roll) · Ry(wrist)`, where the shaft runs from the arm's
//! remote center toward `t`. Every reachable rotation therefore maps the jaw
//! y-axis into the plane perpendicular to the shaft; rotation out of that
//! plane is the missing sixth degree of freedom.

use nalgebra::{Rotation3, SMatrix, SVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_between, RigidTransform, Vec3};
use crate::rng::{stream, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArmId {
    Left,
    Right,
}

impl ArmId {
    pub fn other(self) -> ArmId {
        match self {
            ArmId::Left => ArmId::Right,
            ArmId::Right => ArmId::Left,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("no pose within the tolerance box reaches the target (residual {residual_deg:.1} deg)")]
    Unreachable { residual_deg: f64 },
    #[error("target box lies outside the arm's reach")]
    OutOfReach,
    #[error("both curvature goals are unreachable")]
    BothUnreachable,
    #[error("invalid arm or noise parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmModel {
    pub arm_id: ArmId,
    /// Remote-center frame; its z-axis points down the nominal shaft.
    pub base: RigidTransform,
    pub rotational_dof: u32,
    pub workspace_center: Vec3,
    /// Half-extents of the reachable translation box around `workspace_center`.
    pub reach: Vec3,
}

impl ArmModel {
    pub fn new(arm_id: ArmId, remote_center: Vec3, workspace_center: Vec3, reach: Vec3) -> Result<Self, KinematicsError> {
        if reach.iter().any(|&r| !(r > 0.0)) {
            return Err(KinematicsError::InvalidParams("reach must be positive".into()));
        }
        let down = workspace_center - remote_center;
        if down.norm() < 1e-6 {
            return Err(KinematicsError::InvalidParams("remote center coincides with workspace".into()));
        }
        let base = RigidTransform::new(rotation_between(&Vec3::z(), &down.normalize()), remote_center);
        Ok(ArmModel { arm_id, base, rotational_dof: 5, workspace_center, reach })
    }

    pub fn remote_center(&self) -> Vec3 {
        self.base.translation()
    }

    /// Shaft frame at translation `t`: z along the shaft, minimal twist from the base frame.
    pub fn shaft_rotation(&self, t: &Vec3) -> Rotation3<f64> {
        let d = (t - self.remote_center()).normalize();
        let base = self.base.rotation();
        base * rotation_between(&Vec3::z(), &(base.inverse() * d))
    }

    pub fn orientation(&self, t: &Vec3, roll: f64, wrist: f64) -> Rotation3<f64> {
        self.shaft_rotation(t)
            * Rotation3::from_axis_angle(&Vector3::z_axis(), roll)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), wrist)
    }

    pub fn shaft_direction(&self, t: &Vec3) -> Vec3 {
        (t - self.remote_center()).normalize()
    }

    /// Smallest geodesic error to `target` over the rotations reachable at `t`.
    pub fn min_rotation_error_at(&self, t: &Vec3, target: &Rotation3<f64>) -> f64 {
        let w = target * Vec3::y();
        self.shaft_direction(t).dot(&w).abs().min(1.0).asin()
    }

    fn reach_min(&self) -> Vec3 {
        self.workspace_center - self.reach
    }

    fn reach_max(&self) -> Vec3 {
        self.workspace_center + self.reach
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub systematic_offset: Vec3,
    pub jitter_sigma: f64,
    pub rot_jitter_sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn zero() -> Self {
        NoiseModel { systematic_offset: Vec3::zeros(), jitter_sigma: 0.0, rot_jitter_sigma: 0.0, seed: 0 }
    }

    /// Draws the per-trial systematic offset from `N(0, offset_sigma²)` per axis.
    pub fn sampled(seed: u64, arm: ArmId, offset_sigma: f64, jitter_sigma: f64, rot_jitter_sigma: f64) -> Self {
        let mut rng = stream(seed, Domain::SystematicOffset, arm.index() as u64);
        let mut draw = || offset_sigma * rng.sample::<f64, _>(StandardNormal);
        let systematic_offset = Vec3::new(draw(), draw(), draw());
        let seed = crate::rng::derive_seed(seed, &[arm.index() as u64]);
        NoiseModel { systematic_offset, jitter_sigma, rot_jitter_sigma, seed }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.jitter_sigma >= 0.0 && self.rot_jitter_sigma >= 0.0) {
            return Err(KinematicsError::InvalidParams("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// Actual pose reached when `commanded` is sent for the `move_index`-th time.
pub fn apply_noise(commanded: &RigidTransform, noise: &NoiseModel, move_index: u64) -> RigidTransform {
    let mut pose = commanded.translated(&noise.systematic_offset);
    if noise.jitter_sigma == 0.0 && noise.rot_jitter_sigma == 0.0 {
        return pose;
    }
    let mut rng = stream(noise.seed, Domain::ActuationJitter, move_index);
    let mut gauss = |s: f64| s * rng.sample::<f64, _>(StandardNormal);
    let dt = Vec3::new(gauss(noise.jitter_sigma), gauss(noise.jitter_sigma), gauss(noise.jitter_sigma));
    let dr = Vec3::new(gauss(noise.rot_jitter_sigma), gauss(noise.rot_jitter_sigma), gauss(noise.rot_jitter_sigma));
    let pivot = pose.translation();
    pose = pose.rotated_about(&Rotation3::new(dr), &pivot);
    pose.translated(&dt)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkSolution {
    pub pose: RigidTransform,
    /// Geodesic rotation error to the target, radians.
    pub residual: f64,
}

pub const DEFAULT_TRANS_TOL: [f64; 3] = [0.03, 0.03, 0.04];
const MAX_RESIDUAL: f64 = std::f64::consts::FRAC_PI_2;
const TRANSLATION_WEIGHT: f64 = 1e-3;
const ITERATIONS: usize = 60;

type Params = SVector<f64, 5>;

struct Problem<'a> {
    arm: &'a ArmModel,
    target: &'a RigidTransform,
    lo: Vec3,
    hi: Vec3,
}

impl Problem<'_> {
    fn project(&self, q: &mut Params) {
        for i in 0..3 {
            q[2 + i] = q[2 + i].clamp(self.lo[i], self.hi[i]);
        }
    }

    fn pose(&self, q: &Params) -> RigidTransform {
        let t = Vec3::new(q[2], q[3], q[4]);
        RigidTransform::new(self.arm.orientation(&t, q[0], q[1]), t)
    }

    fn residual(&self, q: &Params) -> SVector<f64, 6> {
        let pose = self.pose(q);
        let rot = (self.target.rotation().inverse() * pose.rotation()).scaled_axis();
        let dt = (pose.translation() - self.target.translation()) * TRANSLATION_WEIGHT;
        SVector::<f64, 6>::new(rot.x, rot.y, rot.z, dt.x, dt.y, dt.z)
    }

    fn jacobian(&self, q: &Params) -> SMatrix<f64, 6, 5> {
        let mut j = SMatrix::<f64, 6, 5>::zeros();
        let h = 1e-7;
        for k in 0..5 {
            let mut qp = *q;
            let mut qm = *q;
            qp[k] += h;
            qm[k] -= h;
            j.set_column(k, &((self.residual(&qp) - self.residual(&qm)) / (2.0 * h)));
        }
        j
    }

    /// Damped Gauss-Newton with translation projected back into the box.
    fn descend(&self, mut q: Params) -> Params {
        self.project(&mut q);
        let mut cost = self.residual(&q).norm_squared();
        let mut mu = 1e-3;
        for _ in 0..ITERATIONS {
            let r = self.residual(&q);
            let j = self.jacobian(&q);
            let jtj = j.transpose() * j;
            let g = j.transpose() * r;
            let mut improved = false;
            for _ in 0..8 {
                let mut a = jtj;
                for d in 0..5 {
                    a[(d, d)] += mu * (jtj[(d, d)] + 1e-12);
                }
                let Some(step) = a.lu().solve(&(-g)) else {
                    mu *= 10.0;
                    continue;
                };
                let mut cand = q + step;
                self.project(&mut cand);
                let c = self.residual(&cand).norm_squared();
                if c < cost {
                    q = cand;
                    cost = c;
                    mu = (mu * 0.3).max(1e-12);
                    improved = true;
                    break;
                }
                mu *= 10.0;
            }
            if !improved || cost < 1e-26 {
                break;
            }
        }
        q
    }
}

/// Commanded pose inside the box around `target`'s translation whose rotation
/// is as close as the 5-DOF wrist allows to `target`'s rotation.
pub fn ik_solve(arm: &ArmModel, target: &RigidTransform, trans_tol: &Vec3) -> Result<IkSolution, KinematicsError> {
    if trans_tol.iter().any(|&t| !(t > 0.0)) {
        return Err(KinematicsError::InvalidParams("translation tolerance must be positive".into()));
    }
    let t = target.translation();
    let lo = (t - trans_tol).sup(&arm.reach_min());
    let hi = (t + trans_tol).inf(&arm.reach_max());
    if (0..3).any(|i| lo[i] > hi[i]) {
        return Err(KinematicsError::OutOfReach);
    }
    let problem = Problem { arm, target, lo, hi };
    let mut best: Option<(f64, f64, Params)> = None;
    for k in 0..4 {
        for wrist in [-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4] {
            let roll = k as f64 * std::f64::consts::FRAC_PI_2;
            let start = Params::new(roll, wrist, t.x, t.y, t.z);
            let q = problem.descend(start);
            let pose = problem.pose(&q);
            let angle = pose.rotation_angle_to(target);
            let cost = problem.residual(&q).norm_squared();
            let better = match best {
                None => true,
                Some((a, c, _)) => angle < a - 1e-12 || (angle <= a + 1e-12 && cost < c),
            };
            if better {
                best = Some((angle, cost, q));
            }
        }
    }
    let (residual, _, q) = best.expect("at least one start");
    let pose = problem.pose(&q);
    let p = pose.translation();
    assert!((0..3).all(|i| p[i] >= lo[i] - 1e-12 && p[i] <= hi[i] + 1e-12), "IK left the tolerance box");
    if residual >= MAX_RESIDUAL {
        return Err(KinematicsError::Unreachable { residual_deg: residual.to_degrees() });
    }
    Ok(IkSolution { pose, residual })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Curvature {
    TowardCamera,
    AwayFromCamera,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureChoice {
    pub curvature: Curvature,
    pub goal: RigidTransform,
    pub solution: IkSolution,
}

/// Picks whichever goal the arm reaches with less rotation error; ties go
/// to the toward-camera goal.
pub fn choose_curvature_config(
    toward: &RigidTransform,
    away: &RigidTransform,
    arm: &ArmModel,
    trans_tol: &Vec3,
) -> Result<CurvatureChoice, KinematicsError> {
    let a = ik_solve(arm, toward, trans_tol).ok();
    let b = ik_solve(arm, away, trans_tol).ok();
    let toward_choice = |solution| CurvatureChoice { curvature: Curvature::TowardCamera, goal: *toward, solution };
    let away_choice = |solution| CurvatureChoice { curvature: Curvature::AwayFromCamera, goal: *away, solution };
    match (a, b) {
        (None, None) => Err(KinematicsError::BothUnreachable),
        (Some(sa), None) => Ok(toward_choice(sa)),
        (None, Some(sb)) => Ok(away_choice(sb)),
        (Some(sa), Some(sb)) if sb.residual < sa.residual - 1e-9 => Ok(away_choice(sb)),
        (Some(sa), Some(_)) => Ok(toward_choice(sa)),
    }
}
