//! Fixed-point presentation servoing: estimate the needle, compute a
//! corrective pose update, apply it, repeat until the update is negligible.

use nalgebra::{Rotation3, Unit};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_between, cap_rotation, rotation_between, RigidTransform, Vec3};
use crate::kinematics::{choose_curvature_config, ArmId, Curvature, KinematicsError};
use crate::perception::{estimate_state, NeedleStateEstimate, PerceptionError, RansacParams};
use crate::rng::derive_seed;
use crate::sim::{render_stereo, SimWorld};

/// Translation that counts as one radian when sizing an update.
const LENGTH_SCALE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServoParams {
    pub max_iterations: usize,
    /// Radians (translation counted via a 1 cm = 1 rad scale).
    pub tolerance: f64,
    pub step_cap: f64,
}

impl Default for ServoParams {
    fn default() -> Self {
        ServoParams { max_iterations: 10, tolerance: 0.01, step_cap: 0.35 }
    }
}

impl ServoParams {
    pub fn validate(&self) -> Result<(), ServoError> {
        if self.max_iterations == 0 || !(self.tolerance > 0.0) || !(self.step_cap > 0.0) {
            return Err(ServoError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServoError {
    #[error("state estimation failed: {0}")]
    EstimationFailed(#[from] PerceptionError),
    #[error("no fixed point after {iterations} iterations")]
    NotConverged { iterations: usize, last: Box<NeedleStateEstimate> },
    #[error("invalid servo parameters: {0}")]
    InvalidParams(String),
}

/// Source of needle state estimates for the arm holding the needle.
pub trait NeedleEstimator {
    fn estimate(&mut self, world: &SimWorld, arm: ArmId) -> Result<NeedleStateEstimate, PerceptionError>;
}

/// Renders the stereo masks and runs the perception pipeline. The RANSAC
/// seed is re-derived from the world seed and clock on every call.
#[derive(Clone, Debug, Default)]
pub struct StereoEstimator {
    pub ransac: RansacParams,
    pub calls: u64,
}

impl StereoEstimator {
    pub fn new(ransac: RansacParams) -> Self {
        StereoEstimator { ransac, calls: 0 }
    }
}

impl NeedleEstimator for StereoEstimator {
    fn estimate(&mut self, world: &SimWorld, arm: ArmId) -> Result<NeedleStateEstimate, PerceptionError> {
        self.calls += 1;
        let (left, right) = render_stereo(world);
        let params = RansacParams { seed: derive_seed(self.ransac.seed, &[world.seed, world.clock]), ..self.ransac };
        let gripper = world.arm(arm).commanded_pose.translation();
        estimate_state((&left, &right), &world.rig, &gripper, world.needle.radius, &params)
    }
}

/// Reads the state straight from the simulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactEstimator;

impl NeedleEstimator for ExactEstimator {
    fn estimate(&mut self, world: &SimWorld, _arm: ArmId) -> Result<NeedleStateEstimate, PerceptionError> {
        if world.dropped {
            return Err(PerceptionError::InsufficientObservation { inliers: 0, required: 1 });
        }
        let needle = &world.needle;
        let mut circle = needle.circle();
        if circle.normal.dot(&(world.rig.left.position() - circle.center)) < 0.0 {
            circle = circle.flipped();
        }
        let samples = needle.samples(1e-3);
        let inlier_centroid = samples.iter().map(|(_, p)| p).sum::<Vec3>() / samples.len() as f64;
        Ok(NeedleStateEstimate { circle, tip: needle.free_end(), inlier_count: samples.len(), inlier_centroid })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ServoMetric {
    /// Turn the needle plane to face `camera_position`.
    AlignNormalToCamera { camera_position: Vec3 },
    /// Lay the needle flat with the tip along `tip_direction` and the center
    /// inside the box `center ± center_tolerance`.
    AlignTipAndFlatten { tip_direction: Vec3, table_normal: Vec3, center: Vec3, center_tolerance: Vec3 },
}

/// Rigid correction: rotate about `pivot`, then translate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseUpdate {
    pub rotation: Rotation3<f64>,
    pub pivot: Vec3,
    pub translation: Vec3,
}

impl PoseUpdate {
    pub fn magnitude(&self) -> f64 {
        self.rotation.angle() + self.translation.norm() / LENGTH_SCALE
    }

    pub fn capped(&self, step_cap: f64) -> PoseUpdate {
        PoseUpdate { rotation: cap_rotation(&self.rotation, step_cap), ..*self }
    }

    pub fn apply(&self, pose: &RigidTransform) -> RigidTransform {
        pose.rotated_about(&self.rotation, &self.pivot).translated(&self.translation)
    }
}

fn signed_angle_about(from: &Vec3, to: &Vec3, axis: &Vec3) -> f64 {
    from.cross(to).dot(axis).atan2(from.dot(to))
}

impl ServoMetric {
    pub fn update(&self, est: &NeedleStateEstimate) -> PoseUpdate {
        let c = est.circle.center;
        match *self {
            ServoMetric::AlignNormalToCamera { camera_position } => {
                let to_camera = (camera_position - c).normalize();
                PoseUpdate {
                    rotation: rotation_between(&est.circle.normal, &to_camera),
                    pivot: c,
                    translation: Vec3::zeros(),
                }
            }
            ServoMetric::AlignTipAndFlatten { tip_direction, table_normal, center, center_tolerance } => {
                let n = est.circle.normal;
                let up = if n.dot(&table_normal) >= 0.0 { table_normal } else { -table_normal };
                let flatten = rotation_between(&n, &up);
                let tip = flatten * (est.tip - c);
                let tip = tip - up * tip.dot(&up);
                let goal = tip_direction - up * tip_direction.dot(&up);
                let yaw = if tip.norm() > 1e-9 && goal.norm() > 1e-9 { signed_angle_about(&tip, &goal, &up) } else { 0.0 };
                let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(up), yaw) * flatten;
                let lo = center - center_tolerance;
                let hi = center + center_tolerance;
                let outside = (0..3).any(|i| c[i] < lo[i] || c[i] > hi[i]);
                let translation = if outside {
                    let half = center_tolerance / 2.0;
                    c.sup(&(center - half)).inf(&(center + half)) - c
                } else {
                    Vec3::zeros()
                };
                PoseUpdate { rotation, pivot: c, translation }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ServoTrace {
    pub iteration: usize,
    pub magnitude: f64,
    pub inliers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServoOutcome {
    pub estimate: NeedleStateEstimate,
    pub updates: usize,
    pub estimator_calls: usize,
    pub trace: Vec<ServoTrace>,
}

/// Fixed-point loop. Makes at most `max_iterations + 1` estimator calls:
/// one per iteration plus a final check after the last update.
pub fn presentation_servo(
    estimator: &mut dyn NeedleEstimator,
    world: &mut SimWorld,
    arm: ArmId,
    metric: &ServoMetric,
    params: &ServoParams,
) -> Result<ServoOutcome, ServoError> {
    params.validate()?;
    let mut trace = Vec::new();
    for iteration in 0..=params.max_iterations {
        let estimate = estimator.estimate(world, arm)?;
        let update = metric.update(&estimate);
        let magnitude = update.magnitude();
        log::debug!("servo {arm:?} iteration {iteration} |p_delta| {magnitude:.5} inliers {}", estimate.inlier_count);
        trace.push(ServoTrace { iteration, magnitude, inliers: estimate.inlier_count });
        if magnitude < params.tolerance {
            return Ok(ServoOutcome { estimate, updates: iteration, estimator_calls: iteration + 1, trace });
        }
        if iteration == params.max_iterations {
            return Err(ServoError::NotConverged { iterations: iteration, last: Box::new(estimate) });
        }
        let pose = update.capped(params.step_cap).apply(&world.arm(arm).commanded_pose);
        world.command_pose(arm, pose);
    }
    unreachable!("loop returns on its last iteration")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquireParams {
    pub increment: f64,
    /// Exploratory rotations allowed before giving up.
    pub max_rotations: usize,
    pub servo: ServoParams,
}

impl Default for AcquireParams {
    fn default() -> Self {
        AcquireParams { increment: 30f64.to_radians(), max_rotations: 24, servo: ServoParams::default() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquireError {
    #[error("needle not found after {rotations} exploratory rotations")]
    AcquisitionFailed { rotations: usize },
    #[error(transparent)]
    Servo(ServoError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Acquisition {
    pub estimate: NeedleStateEstimate,
    pub exploratory_rotations: usize,
    pub servo: Option<ServoOutcome>,
}

/// Moves the holding arm home, rotates about world z then x (alternating)
/// until the needle is seen well enough, then turns its face to the camera.
pub fn acquire_needle(
    estimator: &mut dyn NeedleEstimator,
    world: &mut SimWorld,
    arm: ArmId,
    params: &AcquireParams,
) -> Result<Acquisition, AcquireError> {
    let home = world.settings.home_positions[arm.index()];
    let current = world.arm(arm).commanded_pose;
    if current.translation() != home {
        world.command_pose(arm, current.with_translation(home));
    }
    let mut rotations = 0;
    loop {
        match estimator.estimate(world, arm) {
            Ok(_) => break,
            Err(PerceptionError::InsufficientObservation { .. }) if rotations < params.max_rotations => {
                let axis = if rotations % 2 == 0 { Vec3::z_axis() } else { Vec3::x_axis() };
                let pose = world.arm(arm).commanded_pose;
                let rot = Rotation3::from_axis_angle(&axis, params.increment);
                world.command_pose(arm, pose.rotated_about(&rot, &pose.translation()));
                rotations += 1;
            }
            Err(_) => return Err(AcquireError::AcquisitionFailed { rotations }),
        }
    }
    let metric = ServoMetric::AlignNormalToCamera { camera_position: world.rig.left.position() };
    match presentation_servo(estimator, world, arm, &metric, &params.servo) {
        Ok(outcome) => {
            Ok(Acquisition { estimate: outcome.estimate, exploratory_rotations: rotations, servo: Some(outcome) })
        }
        Err(ServoError::NotConverged { last, .. }) => {
            Ok(Acquisition { estimate: *last, exploratory_rotations: rotations, servo: None })
        }
        Err(ServoError::EstimationFailed(_)) => Err(AcquireError::AcquisitionFailed { rotations }),
        Err(e) => Err(AcquireError::Servo(e)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandoverParams {
    /// IK translation tolerance and the allowed box around the workspace center.
    pub trans_tol: Vec3,
    pub flat_tolerance: f64,
    pub tip_tolerance: f64,
    pub servo: ServoParams,
}

impl Default for HandoverParams {
    fn default() -> Self {
        HandoverParams {
            trans_tol: Vec3::from(crate::kinematics::DEFAULT_TRANS_TOL),
            flat_tolerance: 10f64.to_radians(),
            tip_tolerance: 10f64.to_radians(),
            servo: ServoParams::default(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PositioningError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Servo(ServoError),
    #[error("final pose off target: normal {normal_deg:.1} deg, tip {tip_deg:.1} deg, center in box: {center_ok}")]
    PostCondition { normal_deg: f64, tip_deg: f64, center_ok: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandoverReady {
    pub estimate: NeedleStateEstimate,
    pub curvature: Curvature,
    pub ik_residual: f64,
    pub servo_updates: usize,
}

/// Frame with origin at the center, x toward the free end, the arc on the
/// +y side and z completing a right-handed frame.
pub fn free_end_frame(est: &NeedleStateEstimate) -> RigidTransform {
    let c = est.circle.center;
    let mut z = est.circle.normal;
    let tip = est.tip - c;
    let x = (tip - z * tip.dot(&z)).normalize();
    let mut y = z.cross(&x);
    if (est.inlier_centroid - c).dot(&y) < 0.0 {
        z = -z;
        y = -y;
    }
    RigidTransform::from_axes(x, y, z, c).unwrap_or_else(|_| RigidTransform::from_translation(c))
}

/// Horizontal unit vector from the workspace center toward `arm`'s partner.
pub fn handover_direction(world: &SimWorld, arm: ArmId) -> Vec3 {
    let d = world.settings.home_positions[arm.other().index()] - world.settings.workspace_center;
    Vec3::new(d.x, d.y, 0.0).normalize()
}

/// Needle goal frames at the workspace center with the tip toward the
/// partner gripper and the arc bulging toward / away from the camera.
pub fn curvature_goals(world: &SimWorld, arm: ArmId) -> (RigidTransform, RigidTransform) {
    let h = handover_direction(world, arm);
    let w = world.settings.workspace_center;
    let cam = world.rig.left.position() - w;
    let cam = Vec3::new(cam.x, cam.y, 0.0);
    let y = (cam - h * cam.dot(&h)).normalize();
    let frame = |y: Vec3| RigidTransform::from_axes(h, y, h.cross(&y), w).expect("orthonormal goal frame");
    (frame(y), frame(-y))
}

fn check_ready(world: &SimWorld, arm: ArmId, est: &NeedleStateEstimate, params: &HandoverParams) -> Result<(), PositioningError> {
    let n = angle_between(&est.circle.normal, &Vec3::z());
    let normal = n.min(std::f64::consts::PI - n);
    let tip = angle_between(&(est.tip - est.circle.center), &handover_direction(world, arm));
    let d = est.circle.center - world.settings.workspace_center;
    let center_ok = (0..3).all(|i| d[i].abs() <= params.trans_tol[i]);
    if normal < params.flat_tolerance && tip < params.tip_tolerance && center_ok {
        Ok(())
    } else {
        Err(PositioningError::PostCondition { normal_deg: normal.to_degrees(), tip_deg: tip.to_degrees(), center_ok })
    }
}

/// Moves the acquired needle to the handover pose and servos it flat with
/// the tip toward the partner gripper.
pub fn handover_position(
    estimator: &mut dyn NeedleEstimator,
    world: &mut SimWorld,
    arm: ArmId,
    acquired: &NeedleStateEstimate,
    params: &HandoverParams,
) -> Result<HandoverReady, PositioningError> {
    let held = world.arm(arm).commanded_pose;
    let to_holder = free_end_frame(acquired).inverse().compose(&held);
    let (toward, away) = curvature_goals(world, arm);
    let choice = choose_curvature_config(
        &toward.compose(&to_holder),
        &away.compose(&to_holder),
        &world.arm_models[arm.index()],
        &params.trans_tol,
    )?;
    world.command_pose(arm, choice.solution.pose);
    let metric = ServoMetric::AlignTipAndFlatten {
        tip_direction: handover_direction(world, arm),
        table_normal: Vec3::z(),
        center: world.settings.workspace_center,
        center_tolerance: params.trans_tol,
    };
    let (estimate, updates) = match presentation_servo(estimator, world, arm, &metric, &params.servo) {
        Ok(o) => (o.estimate, o.updates),
        Err(ServoError::NotConverged { last, iterations }) => (*last, iterations),
        Err(e) => return Err(PositioningError::Servo(e)),
    };
    check_ready(world, arm, &estimate, params)?;
    Ok(HandoverReady { estimate, curvature: choice.curvature, ik_residual: choice.solution.residual, servo_updates: updates })
}
