//! Fine grasping: one direction policy per horizontal axis, a step size that
//! halves whenever the policy reverses, then a straight descent and jaw close.

mod learned;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, RigidTransform, Vec3};
use crate::kinematics::ArmId;
use crate::perception::{NeedleStateEstimate, SegMask};
use crate::rng::{derive_seed, stream, Domain};
use crate::servo::free_end_frame;
use crate::sim::{adjudicate_grasp, render_camera, CameraSlot, GraspAdjudication, Jaw, SimWorld};

pub use learned::{
    crop_features, generate_demos, read_demos, train_axis_policy, write_demos, Demo, EnsemblePolicy, LogisticModel,
    TrainReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraspError {
    #[error("gripper projects outside the image")]
    GripperOffscreen,
    #[error("{0:?}-axis servo did not settle within the step budget")]
    MaxStepsExceeded(GraspAxis),
    #[error("jaw closed without capturing the needle ({axis:?} residual {residual:?})")]
    GraspMissed { axis: MissAxis, residual: Vec3 },
    #[error("demonstrations cover a single direction")]
    DegenerateDemos,
    #[error("invalid grasp parameters: {0}")]
    InvalidParams(String),
    #[error("demo or policy file: {0}")]
    Io(String),
    #[error("malformed policy text: {0}")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspParams {
    pub beta_decay: f64,
    pub stop_threshold: f64,
    pub initial_step: f64,
    pub descent: f64,
    pub max_steps: usize,
    /// Grasp point, measured along the arc from the free end (radians).
    pub grasp_offset: f64,
}

impl Default for GraspParams {
    fn default() -> Self {
        GraspParams {
            beta_decay: 0.5,
            stop_threshold: 0.0002,
            initial_step: 0.0016,
            descent: 0.01,
            max_steps: 50,
            grasp_offset: 30f64.to_radians(),
        }
    }
}

impl GraspParams {
    pub fn validate(&self) -> Result<(), GraspError> {
        let ok = self.beta_decay > 0.0
            && self.beta_decay < 1.0
            && self.stop_threshold > 0.0
            && self.initial_step > 0.0
            && self.descent >= 0.0
            && self.max_steps > 0;
        if ok {
            Ok(())
        } else {
            Err(GraspError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GraspAxis {
    X,
    Y,
}

impl GraspAxis {
    pub fn unit(self) -> Vec3 {
        match self {
            GraspAxis::X => Vec3::x(),
            GraspAxis::Y => Vec3::y(),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn crop_spec(self) -> CropSpec {
        match self {
            GraspAxis::X => CropSpec { source: CropSource::Inclined, height: 140, width: 200 },
            GraspAxis::Y => CropSpec { source: CropSource::Overhead, height: 70, width: 200 },
        }
    }
}

/// Which part of the gripper pose a missed grasp was furthest off in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MissAxis {
    X,
    Y,
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Plus,
    Minus,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Plus => 1.0,
            Direction::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Direction {
        match self {
            Direction::Plus => Direction::Minus,
            Direction::Minus => Direction::Plus,
        }
    }

    pub fn of(value: f64) -> Direction {
        if value >= 0.0 {
            Direction::Plus
        } else {
            Direction::Minus
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CropSource {
    Inclined,
    Overhead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropSpec {
    pub source: CropSource,
    pub height: usize,
    pub width: usize,
}

/// Crop of `spec` size centered on the gripper's projection, shifted to
/// stay inside the image.
pub fn crop_egocentric(
    image: &SegMask,
    gripper_pose: &RigidTransform,
    camera: &CameraModel,
    spec: &CropSpec,
) -> Result<SegMask, GraspError> {
    let px = camera.project(&gripper_pose.translation()).map_err(|_| GraspError::GripperOffscreen)?;
    if !camera.contains(&px) || spec.width > image.width() || spec.height > image.height() {
        return Err(GraspError::GripperOffscreen);
    }
    let start = |center: f64, size: usize, limit: usize| {
        let s = (center - size as f64 / 2.0).round();
        s.clamp(0.0, (limit - size) as f64) as usize
    };
    let col0 = start(px.x, spec.width, image.width());
    let row0 = start(px.y, spec.height, image.height());
    Ok(image.window(col0, row0, spec.width, spec.height))
}

/// What a policy sees at one query.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisObservation {
    pub axis: GraspAxis,
    /// Position of this query within the current servo run.
    pub query_index: u64,
    /// World clock at the query, used to key random draws.
    pub clock: u64,
    /// Privileged: target minus gripper along the axis, meters.
    pub offset: f64,
    pub crop: Option<SegMask>,
}

pub trait AxisPolicy {
    fn axis(&self) -> GraspAxis;
    fn decide(&self, obs: &AxisObservation) -> Direction;
    fn needs_crop(&self) -> bool {
        false
    }
}

/// Ground-truth direction with seeded label flips. An exact tie answers +1
/// on even queries and -1 on odd ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OraclePolicy {
    pub axis: GraspAxis,
    pub flip_rate: f64,
    pub seed: u64,
}

impl OraclePolicy {
    pub fn new(axis: GraspAxis, flip_rate: f64, seed: u64) -> Self {
        OraclePolicy { axis, flip_rate, seed }
    }
}

impl AxisPolicy for OraclePolicy {
    fn axis(&self) -> GraspAxis {
        self.axis
    }

    fn decide(&self, obs: &AxisObservation) -> Direction {
        let truth = if obs.offset == 0.0 {
            if obs.query_index.is_multiple_of(2) {
                Direction::Plus
            } else {
                Direction::Minus
            }
        } else {
            Direction::of(obs.offset)
        };
        if self.flip_rate <= 0.0 {
            return truth;
        }
        let key = derive_seed(self.seed, &[self.axis.index() as u64, obs.clock]);
        let mut rng = stream(key, Domain::LabelFlip, obs.query_index);
        if rng.random::<f64>() < self.flip_rate {
            truth.flipped()
        } else {
            truth
        }
    }
}

/// Always answers the same direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantPolicy {
    pub axis: GraspAxis,
    pub direction: Direction,
}

impl AxisPolicy for ConstantPolicy {
    fn axis(&self) -> GraspAxis {
        self.axis
    }

    fn decide(&self, _obs: &AxisObservation) -> Direction {
        self.direction
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AxisReport {
    pub axis: GraspAxis,
    pub flips: usize,
    pub moves: usize,
    pub travel: f64,
    pub final_step: f64,
}

fn crop_for(world: &SimWorld, arm: ArmId, axis: GraspAxis) -> Result<SegMask, GraspError> {
    let spec = axis.crop_spec();
    let (slot, camera) = match spec.source {
        CropSource::Inclined => (CameraSlot::Left, &world.rig.left),
        CropSource::Overhead => (CameraSlot::Overhead, &world.overhead),
    };
    let image = render_camera(world, slot);
    crop_egocentric(&image, &world.arm(arm).actual_pose, camera, &spec)
}

/// Decaying-step servo along one world axis toward `target`.
pub fn servo_axis(
    world: &mut SimWorld,
    arm: ArmId,
    policy: &dyn AxisPolicy,
    target: &Vec3,
    params: &GraspParams,
) -> Result<AxisReport, GraspError> {
    params.validate()?;
    let axis = policy.axis();
    let unit = axis.unit();
    let mut report = AxisReport { axis, flips: 0, moves: 0, travel: 0.0, final_step: params.initial_step };
    let mut step = params.initial_step;
    let mut previous: Option<Direction> = None;
    for query_index in 0.. {
        let offset = (target - world.arm(arm).actual_pose.translation()).dot(&unit);
        let crop = if policy.needs_crop() { Some(crop_for(world, arm, axis)?) } else { None };
        let obs = AxisObservation { axis, query_index, clock: world.clock, offset, crop };
        let dir = policy.decide(&obs);
        if previous.is_some_and(|p| p != dir) {
            step *= params.beta_decay;
            report.flips += 1;
        }
        previous = Some(dir);
        report.final_step = step;
        if step < params.stop_threshold {
            return Ok(report);
        }
        if report.moves >= params.max_steps {
            return Err(GraspError::MaxStepsExceeded(axis));
        }
        let pose = world.arm(arm).commanded_pose.translated(&(unit * dir.sign() * step));
        world.command_pose(arm, pose);
        report.moves += 1;
        report.travel += step;
    }
    unreachable!()
}

/// Estimated grasp point and jaw orientation for the receiving arm.
pub fn grasp_target(est: &NeedleStateEstimate, radius: f64, params: &GraspParams) -> RigidTransform {
    let frame = free_end_frame(est);
    let (s, c) = params.grasp_offset.sin_cos();
    let point = frame.transform_point(&Vec3::new(radius * c, radius * s, 0.0));
    let tangent = frame.transform_vector(&Vec3::new(-s, c, 0.0));
    let z = -Vec3::z();
    let mut y = tangent - z * tangent.dot(&z);
    if y.norm() < 1e-9 {
        y = Vec3::y();
    }
    let y = y.normalize();
    RigidTransform::from_axes(y.cross(&z), y, z, point).expect("orthonormal jaw frame")
}

/// Ground-truth grasp point on the simulated needle.
pub fn true_grasp_point(world: &SimWorld, params: &GraspParams) -> Vec3 {
    let needle = &world.needle;
    needle.point_at(needle.angle_from_free_end(params.grasp_offset))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraspReport {
    pub x: AxisReport,
    pub y: AxisReport,
    pub adjudication: GraspAdjudication,
}

fn miss_axis(adj: &GraspAdjudication, world: &SimWorld, arm: ArmId) -> MissAxis {
    let half = world.settings.capture_half_widths;
    let ratio = adj.normalized(&half);
    if ratio.z >= ratio.x && ratio.z >= ratio.y {
        return MissAxis::Vertical;
    }
    let jaw = world.arm(arm).actual_pose;
    let point = world.needle.point_at(adj.best_angle);
    let d = point - jaw.translation();
    if d.x.abs() >= d.y.abs() {
        MissAxis::X
    } else {
        MissAxis::Y
    }
}

/// Pre-grasp above the estimated grasp point, x then y servo, descend,
/// close, adjudicate, and on success open the holding jaw.
pub fn execute_grasp(
    world: &mut SimWorld,
    receiver: ArmId,
    estimate: &NeedleStateEstimate,
    policies: (&dyn AxisPolicy, &dyn AxisPolicy),
    params: &GraspParams,
) -> Result<GraspReport, GraspError> {
    params.validate()?;
    let holder = receiver.other();
    let jaw_goal = grasp_target(estimate, world.needle.radius, params);
    let mut action = world.hold_action();
    action.get_mut(receiver).pose = jaw_goal.translated(&(Vec3::z() * params.descent));
    action.get_mut(receiver).jaw = Jaw::Open;
    world.step(&action);
    let target = true_grasp_point(world, params);
    let x = servo_axis(world, receiver, policies.0, &target, params)?;
    let y = servo_axis(world, receiver, policies.1, &target, params)?;
    let down = world.arm(receiver).commanded_pose.translated(&(-Vec3::z() * params.descent));
    world.command_pose(receiver, down);
    world.command_jaw(receiver, Jaw::Closed);
    let adjudication = adjudicate_grasp(world, receiver);
    if !adjudication.success {
        let axis = miss_axis(&adjudication, world, receiver);
        return Err(GraspError::GraspMissed { axis, residual: adjudication.residual });
    }
    world.command_jaw(holder, Jaw::Open);
    Ok(GraspReport { x, y, adjudication })
}
