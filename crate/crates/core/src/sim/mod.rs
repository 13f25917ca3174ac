//! Deterministic two-arm world: a rigid arc needle held in one gripper,
//! three cameras, actuation noise, and grasp adjudication.
//!
//! World frame: z up, table at `z = 0`. Gripper frame: z is the approach
//! direction, y runs across the jaws, x is the opening direction.

mod render;

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, Circle3, GeometryError, RigidTransform, StereoRig, Vec3};
use crate::kinematics::{apply_noise, ArmId, ArmModel, KinematicsError, NoiseModel};
use crate::perception::SegMask;
use crate::rng::{stream, Domain};

pub use render::{render_camera, render_masks, render_stereo, CameraSlot};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("rotation bin {0} outside 0..=6")]
    InvalidRotationBin(u8),
    #[error("invalid world settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Face {
    Towards,
    Away,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Grip {
    Tip,
    Inward30,
}

/// Rotation of the needle about the jaw's across axis, in 30° steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RotationBin(u8);

impl RotationBin {
    pub const COUNT: u8 = 7;

    pub fn new(bin: u8) -> Result<Self, SimError> {
        if bin < Self::COUNT {
            Ok(RotationBin(bin))
        } else {
            Err(SimError::InvalidRotationBin(bin))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn angle(self) -> f64 {
        self.0 as f64 * PI / 6.0
    }
}

impl TryFrom<u8> for RotationBin {
    type Error = SimError;
    fn try_from(v: u8) -> Result<Self, SimError> {
        RotationBin::new(v)
    }
}

impl From<RotationBin> for u8 {
    fn from(b: RotationBin) -> u8 {
        b.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StartConfig {
    pub face: Face,
    pub grip: Grip,
    pub rotation_bin: RotationBin,
}

impl StartConfig {
    /// The 28 start configurations in a fixed order.
    pub fn all() -> Vec<StartConfig> {
        let mut out = Vec::with_capacity(28);
        for face in [Face::Towards, Face::Away] {
            for grip in [Grip::Tip, Grip::Inward30] {
                for bin in 0..RotationBin::COUNT {
                    out.push(StartConfig { face, grip, rotation_bin: RotationBin(bin) });
                }
            }
        }
        out
    }

    pub fn label(&self) -> String {
        let face = match self.face {
            Face::Towards => "towards",
            Face::Away => "away",
        };
        let grip = match self.grip {
            Grip::Tip => "tip",
            Grip::Inward30 => "inward30",
        };
        format!("{face}-{grip}-{}", self.rotation_bin.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Jaw {
    Open,
    Closed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GripperState {
    pub commanded_pose: RigidTransform,
    pub actual_pose: RigidTransform,
    pub jaw: Jaw,
}

/// A rigid circular arc. In its own frame the center is the origin, the
/// plane normal is +z and the tip lies on +x; the body runs counterclockwise
/// from the tip for `arc_extent` radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArcNeedle {
    pub radius: f64,
    pub arc_extent: f64,
    /// Angle from the tip to the grasped point.
    pub grasp_arclength: f64,
    pub attached_arm: Option<ArmId>,
    pub pose: RigidTransform,
    /// Needle frame expressed in the holding jaw frame.
    pub in_hand: RigidTransform,
}

impl ArcNeedle {
    pub fn circle(&self) -> Circle3 {
        Circle3 { center: self.pose.translation(), normal: self.pose.axis(2), radius: self.radius }
    }

    pub fn local_point(&self, theta: f64) -> Vec3 {
        Vec3::new(self.radius * theta.cos(), self.radius * theta.sin(), 0.0)
    }

    pub fn point_at(&self, theta: f64) -> Vec3 {
        self.pose.transform_point(&self.local_point(theta))
    }

    /// Unit tangent in the direction of increasing angle.
    pub fn tangent_at(&self, theta: f64) -> Vec3 {
        self.pose.transform_vector(&Vec3::new(-theta.sin(), theta.cos(), 0.0))
    }

    pub fn tip(&self) -> Vec3 {
        self.point_at(0.0)
    }

    /// Angle of the arc end further (along the arc) from the grasp.
    pub fn free_end_angle(&self) -> f64 {
        if self.grasp_arclength >= self.arc_extent / 2.0 {
            0.0
        } else {
            self.arc_extent
        }
    }

    pub fn free_end(&self) -> Vec3 {
        self.point_at(self.free_end_angle())
    }

    pub fn grasp_point(&self) -> Vec3 {
        self.point_at(self.grasp_arclength)
    }

    /// Needle angle `offset` radians from the free end toward the grasp.
    pub fn angle_from_free_end(&self, offset: f64) -> f64 {
        if self.free_end_angle() == 0.0 {
            offset
        } else {
            self.arc_extent - offset
        }
    }

    /// Samples at roughly `spacing` meters of arclength, both ends included.
    pub fn samples(&self, spacing: f64) -> Vec<(f64, Vec3)> {
        let n = ((self.radius * self.arc_extent / spacing).ceil() as usize).max(1);
        (0..=n)
            .map(|i| {
                let t = self.arc_extent * i as f64 / n as f64;
                (t, self.point_at(t))
            })
            .collect()
    }
}

/// Rotation mapping the needle frame into the jaw frame for a start
/// configuration, with the grasp point at the jaw origin.
///
/// The tangent at the grasp runs along `+y` (Towards) or `-y` (Away) of the
/// jaw; the needle normal is `cos φ·x + sin φ·z` with `φ = 30°·bin`, so bin 3
/// puts the arc in the jaw's x-y plane with its center on the `-x` side for
/// Towards.
pub fn in_hand_transform(radius: f64, grasp_angle: f64, face: Face, bin: RotationBin) -> RigidTransform {
    let s = match face {
        Face::Towards => 1.0,
        Face::Away => -1.0,
    };
    let (sin_g, cos_g) = grasp_angle.sin_cos();
    let e1 = Vec3::new(-sin_g, cos_g, 0.0);
    let e3 = Vec3::z();
    let e2 = e3.cross(&e1);
    let phi = bin.angle();
    let f1 = Vec3::new(0.0, s, 0.0);
    let f3 = Vec3::new(phi.cos(), 0.0, phi.sin());
    let f2 = f3.cross(&f1);
    let e = Matrix3::from_columns(&[e1, e2, e3]);
    let f = Matrix3::from_columns(&[f1, f2, f3]);
    let rot = Rotation3::from_matrix_unchecked(f * e.transpose());
    let p = Vec3::new(radius * cos_g, radius * sin_g, 0.0);
    RigidTransform::new(rot, -(rot * p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderNoise {
    pub dropout: f64,
    /// Mean number of false-positive blobs per image.
    pub blob_rate: f64,
    pub blob_radius_px: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuationNoise {
    pub systematic_sigma: f64,
    pub jitter_sigma: f64,
    pub rot_jitter_sigma: f64,
}

/// Everything about the simulated bench that is not per-trial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSettings {
    pub workspace_center: Vec3,
    pub stereo_fx: f64,
    pub stereo_fy: f64,
    pub stereo_cx: f64,
    pub stereo_cy: f64,
    pub stereo_width: usize,
    pub stereo_height: usize,
    pub baseline: f64,
    /// Position of the stereo midpoint; both cameras look parallel toward the workspace.
    pub stereo_position: Vec3,
    pub overhead_f: f64,
    pub overhead_width: usize,
    pub overhead_height: usize,
    pub overhead_position: Vec3,
    pub remote_centers: [Vec3; 2],
    pub reach: Vec3,
    pub home_positions: [Vec3; 2],
    pub arc_extent: f64,
    pub occlusion_radius: f64,
    /// Jaw capture box half-widths: opening (x), across (y), approach (z).
    pub capture_half_widths: Vec3,
    pub in_hand_sigma: f64,
    pub render_noise: RenderNoise,
    pub actuation: ActuationNoise,
    pub tau_max: u64,
    pub step_latency: f64,
}

impl Default for WorldSettings {
    fn default() -> Self {
        WorldSettings::calibrated()
    }
}

impl WorldSettings {
    /// Bench geometry with the calibrated noise profile.
    pub fn calibrated() -> Self {
        let w = Vec3::new(0.0, 0.0, 0.05);
        let elevation = 30f64.to_radians();
        let distance = 0.25;
        WorldSettings {
            workspace_center: w,
            stereo_fx: 1800.0,
            stereo_fy: 1800.0,
            stereo_cx: 768.0,
            stereo_cy: 576.0,
            stereo_width: 1536,
            stereo_height: 1152,
            baseline: 0.07,
            stereo_position: w + distance * Vec3::new(0.0, -elevation.cos(), elevation.sin()),
            overhead_f: 900.0,
            overhead_width: 800,
            overhead_height: 600,
            overhead_position: w + Vec3::new(0.0, 0.0, 0.25),
            remote_centers: [w + Vec3::new(-0.03, 0.0, 0.2), w + Vec3::new(0.03, 0.0, 0.2)],
            reach: Vec3::new(0.12, 0.12, 0.1),
            home_positions: [w + Vec3::new(-0.03, 0.0, 0.0), w + Vec3::new(0.03, 0.0, 0.0)],
            arc_extent: PI,
            occlusion_radius: 0.008,
            capture_half_widths: Vec3::new(0.005, 0.002, 0.003),
            in_hand_sigma: 3f64.to_radians(),
            render_noise: RenderNoise { dropout: 0.05, blob_rate: 0.5, blob_radius_px: 3.0 },
            actuation: ActuationNoise {
                systematic_sigma: 0.001,
                jitter_sigma: 0.0005,
                rot_jitter_sigma: 0.5f64.to_radians(),
            },
            tau_max: 600,
            step_latency: 0.25,
        }
    }

    /// Same bench with every noise source switched off.
    pub fn zero_noise() -> Self {
        WorldSettings::calibrated().without_noise()
    }

    pub fn without_noise(mut self) -> Self {
        self.render_noise = RenderNoise { dropout: 0.0, blob_rate: 0.0, ..self.render_noise };
        self.actuation = ActuationNoise { systematic_sigma: 0.0, jitter_sigma: 0.0, rot_jitter_sigma: 0.0 };
        self.in_hand_sigma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSettings(m.into()));
        if !(self.arc_extent > 0.0 && self.arc_extent <= 2.0 * PI) {
            return bad("arc_extent must lie in (0, 2π]");
        }
        if !(0.0..=1.0).contains(&self.render_noise.dropout) || !(self.render_noise.blob_rate >= 0.0) {
            return bad("render noise out of range");
        }
        let a = &self.actuation;
        if !(a.systematic_sigma >= 0.0 && a.jitter_sigma >= 0.0 && a.rot_jitter_sigma >= 0.0 && self.in_hand_sigma >= 0.0) {
            return bad("noise sigmas must be non-negative");
        }
        if self.capture_half_widths.iter().any(|&h| !(h > 0.0)) || !(self.occlusion_radius >= 0.0) {
            return bad("capture box and occlusion radius must be positive");
        }
        if self.tau_max == 0 || !(self.step_latency >= 0.0) {
            return bad("tau_max must be positive");
        }
        self.rig()?;
        self.overhead()?;
        Ok(())
    }

    pub fn rig(&self) -> Result<StereoRig, SimError> {
        let half = Vec3::new(self.baseline / 2.0, 0.0, 0.0);
        let eye = self.stereo_position - half;
        let pose = crate::geometry::look_at_pose(eye, self.workspace_center - half, Vec3::x())?;
        let left = CameraModel::new(
            self.stereo_fx,
            self.stereo_fy,
            self.stereo_cx,
            self.stereo_cy,
            pose,
            self.stereo_width,
            self.stereo_height,
        )?;
        Ok(StereoRig::new(left, self.baseline)?)
    }

    pub fn overhead(&self) -> Result<CameraModel, SimError> {
        Ok(CameraModel::looking_at(
            self.overhead_position,
            self.workspace_center,
            Vec3::x(),
            self.overhead_f,
            self.overhead_f,
            self.overhead_width,
            self.overhead_height,
        )?)
    }

    pub fn arm_model(&self, arm: ArmId) -> Result<ArmModel, SimError> {
        Ok(ArmModel::new(arm, self.remote_centers[arm.index()], self.workspace_center, self.reach)?)
    }

    /// Home orientation: jaw x along the stereo viewing direction, jaw y along world +x.
    pub fn home_rotation(&self) -> Rotation3<f64> {
        let view = (self.workspace_center - self.stereo_position).normalize();
        let y = Vec3::x();
        let x = (view - y * view.dot(&y)).normalize();
        Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, x.cross(&y)]))
    }

    pub fn home_pose(&self, arm: ArmId) -> RigidTransform {
        RigidTransform::new(self.home_rotation(), self.home_positions[arm.index()])
    }
}

/// Left, right and overhead masks for one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBundle {
    pub left: SegMask,
    pub right: SegMask,
    pub overhead: SegMask,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmCommand {
    pub pose: RigidTransform,
    pub jaw: Jaw,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionCommand {
    pub left: ArmCommand,
    pub right: ArmCommand,
}

impl ActionCommand {
    pub fn get(&self, arm: ArmId) -> &ArmCommand {
        match arm {
            ArmId::Left => &self.left,
            ArmId::Right => &self.right,
        }
    }

    pub fn get_mut(&mut self, arm: ArmId) -> &mut ArmCommand {
        match arm {
            ArmId::Left => &mut self.left,
            ArmId::Right => &mut self.right,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimWorld {
    pub settings: WorldSettings,
    pub rig: StereoRig,
    pub overhead: CameraModel,
    pub arms: [GripperState; 2],
    pub arm_models: [ArmModel; 2],
    pub needle: ArcNeedle,
    pub noise: [NoiseModel; 2],
    pub seed: u64,
    pub clock: u64,
    pub move_counter: [u64; 2],
    pub grasp_events: u64,
    /// Set when the needle leaves both grippers.
    pub dropped: bool,
}

/// Builds a world with the needle held by `holder` at its home pose in the
/// given start configuration; the other arm waits open at its own home.
pub fn make_world(
    config: StartConfig,
    needle_radius: f64,
    seed: u64,
    settings: &WorldSettings,
    holder: ArmId,
) -> Result<SimWorld, SimError> {
    settings.validate()?;
    if !(needle_radius > 0.0) {
        return Err(SimError::InvalidSettings("needle radius must be positive".into()));
    }
    let a = &settings.actuation;
    let noise = [ArmId::Left, ArmId::Right]
        .map(|arm| NoiseModel::sampled(seed, arm, a.systematic_sigma, a.jitter_sigma, a.rot_jitter_sigma));
    let grasp_arclength = match config.grip {
        Grip::Tip => settings.arc_extent,
        Grip::Inward30 => settings.arc_extent - PI / 6.0,
    };
    let in_hand = in_hand_transform(needle_radius, grasp_arclength, config.face, config.rotation_bin);
    let arms = [ArmId::Left, ArmId::Right].map(|arm| {
        let cmd = settings.home_pose(arm);
        GripperState {
            commanded_pose: cmd,
            actual_pose: apply_noise(&cmd, &noise[arm.index()], 0),
            jaw: if arm == holder { Jaw::Closed } else { Jaw::Open },
        }
    });
    let needle = ArcNeedle {
        radius: needle_radius,
        arc_extent: settings.arc_extent,
        grasp_arclength,
        attached_arm: Some(holder),
        pose: arms[holder.index()].actual_pose.compose(&in_hand),
        in_hand,
    };
    Ok(SimWorld {
        rig: settings.rig()?,
        overhead: settings.overhead()?,
        arm_models: [settings.arm_model(ArmId::Left)?, settings.arm_model(ArmId::Right)?],
        settings: settings.clone(),
        arms,
        needle,
        noise,
        seed,
        clock: 0,
        move_counter: [1, 1],
        grasp_events: 0,
        dropped: false,
    })
}

impl SimWorld {
    pub fn arm(&self, arm: ArmId) -> &GripperState {
        &self.arms[arm.index()]
    }

    pub fn holder(&self) -> Option<ArmId> {
        self.needle.attached_arm
    }

    /// The command that leaves everything as it is.
    pub fn hold_action(&self) -> ActionCommand {
        let cmd = |g: &GripperState| ArmCommand { pose: g.commanded_pose, jaw: g.jaw };
        ActionCommand { left: cmd(&self.arms[0]), right: cmd(&self.arms[1]) }
    }

    /// Advances one timestep. Arms whose commanded pose changes draw a fresh
    /// actuation error; the held needle follows its gripper rigidly.
    pub fn step(&mut self, action: &ActionCommand) {
        for arm in [ArmId::Left, ArmId::Right] {
            let i = arm.index();
            let cmd = action.get(arm);
            if cmd.pose != self.arms[i].commanded_pose {
                self.arms[i].commanded_pose = cmd.pose;
                self.arms[i].actual_pose = apply_noise(&cmd.pose, &self.noise[i], self.move_counter[i]);
                self.move_counter[i] += 1;
            }
            self.arms[i].jaw = cmd.jaw;
        }
        if let Some(holder) = self.needle.attached_arm {
            if self.arms[holder.index()].jaw == Jaw::Open {
                self.needle.attached_arm = None;
                self.dropped = true;
            } else {
                self.needle.pose = self.arms[holder.index()].actual_pose.compose(&self.needle.in_hand);
            }
        }
        self.clock += 1;
    }

    pub fn command_pose(&mut self, arm: ArmId, pose: RigidTransform) {
        let mut action = self.hold_action();
        action.get_mut(arm).pose = pose;
        self.step(&action);
    }

    pub fn command_jaw(&mut self, arm: ArmId, jaw: Jaw) {
        let mut action = self.hold_action();
        action.get_mut(arm).jaw = jaw;
        self.step(&action);
    }

    pub fn render(&self) -> ObservationBundle {
        render_masks(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraspAdjudication {
    pub success: bool,
    /// Absolute jaw-frame offsets of the best needle point: opening, across, approach.
    pub residual: Vec3,
    /// Needle angle of the best point.
    pub best_angle: f64,
    /// In-hand rotation applied on success.
    pub perturbation: f64,
}

impl GraspAdjudication {
    /// Residual divided by the capture half-widths; the largest entry decides capture.
    pub fn normalized(&self, half_widths: &Vec3) -> Vec3 {
        self.residual.component_div(half_widths)
    }
}

const ADJUDICATION_SPACING: f64 = 2e-5;

/// Decides whether the closing jaw of `arm` captured the needle. On success
/// the needle is re-seated at the jaw center with a seeded in-hand rotation
/// about the opening axis and becomes attached to `arm`.
pub fn adjudicate_grasp(world: &mut SimWorld, arm: ArmId) -> GraspAdjudication {
    let half = world.settings.capture_half_widths;
    let jaw = world.arms[arm.index()].actual_pose;
    let to_jaw = jaw.inverse();
    let mut best = (f64::INFINITY, 0.0, Vec3::zeros());
    for (theta, p) in world.needle.samples(ADJUDICATION_SPACING) {
        let local = to_jaw.transform_point(&p).abs();
        let score = local.component_div(&half).max();
        if score < best.0 {
            best = (score, theta, local);
        }
    }
    let (score, best_angle, residual) = best;
    let success = score <= 1.0;
    let mut perturbation = 0.0;
    if success {
        let mut rng = stream(world.seed, Domain::InHandPerturbation, world.grasp_events);
        perturbation = world.settings.in_hand_sigma * rng.sample::<f64, _>(StandardNormal);
        let point = world.needle.point_at(best_angle);
        let seated = world.needle.pose.translated(&(jaw.translation() - point));
        let axis = Unit::new_normalize(jaw.axis(0));
        let pose = seated.rotated_about(&Rotation3::from_axis_angle(&axis, perturbation), &jaw.translation());
        world.needle.pose = pose;
        world.needle.in_hand = to_jaw.compose(&pose);
        world.needle.grasp_arclength = best_angle;
        world.needle.attached_arm = Some(arm);
    }
    world.grasp_events += 1;
    GraspAdjudication { success, residual, best_angle, perturbation }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn world(config: StartConfig) -> SimWorld {
        make_world(config, 0.0125, 3, &WorldSettings::zero_noise(), ArmId::Left).unwrap()
    }

    fn cfg(face: Face, grip: Grip, bin: u8) -> StartConfig {
        StartConfig { face, grip, rotation_bin: RotationBin::new(bin).unwrap() }
    }

    #[test]
    fn bins_bounded() {
        assert!(RotationBin::new(6).is_ok());
        assert_eq!(RotationBin::new(7), Err(SimError::InvalidRotationBin(7)));
        assert_eq!(StartConfig::all().len(), 28);
    }

    #[test]
    fn in_hand_places_grasp_at_jaw_origin() {
        for c in StartConfig::all() {
            let g = if c.grip == Grip::Tip { PI } else { 5.0 * PI / 6.0 };
            let t = in_hand_transform(0.0125, g, c.face, c.rotation_bin);
            let p = t.transform_point(&Vec3::new(0.0125 * g.cos(), 0.0125 * g.sin(), 0.0));
            assert!(p.norm() < 1e-15);
            let tangent = t.transform_vector(&Vec3::new(-g.sin(), g.cos(), 0.0));
            let expect = if c.face == Face::Towards { 1.0 } else { -1.0 };
            assert_relative_eq!(tangent.y, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn reference_config_faces_camera() {
        let w = world(cfg(Face::Towards, Grip::Tip, 0));
        let view = (w.settings.workspace_center - w.settings.stereo_position).normalize();
        // Bin 0 presents the needle plane square to the stereo pair.
        assert!(w.needle.circle().normal.dot(&view).abs() > 0.999);
        assert!((w.needle.grasp_point() - w.arm(ArmId::Left).actual_pose.translation()).norm() < 1e-12);
        // Bin 3 turns the plane edge-on.
        let w3 = world(cfg(Face::Towards, Grip::Tip, 3));
        assert!(w3.needle.circle().normal.dot(&view).abs() < 1e-9);
    }

    #[test]
    fn configs_pairwise_distinct() {
        let poses: Vec<_> = StartConfig::all().into_iter().map(|c| world(c).needle).collect();
        for i in 0..poses.len() {
            for j in i + 1..poses.len() {
                let d = poses[i]
                    .samples(1e-3)
                    .iter()
                    .zip(poses[j].samples(1e-3))
                    .map(|((_, a), (_, b))| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(d > 1e-4, "configs {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn identity_action_only_ticks() {
        let mut w = make_world(cfg(Face::Away, Grip::Inward30, 2), 0.0125, 9, &WorldSettings::calibrated(), ArmId::Left)
            .unwrap();
        let before = (w.arms, w.needle, w.move_counter);
        w.step(&w.hold_action());
        assert_eq!((w.arms, w.needle, w.move_counter), before);
        assert_eq!(w.clock, 1);
    }

    #[test]
    fn needle_follows_gripper() {
        let mut w = world(cfg(Face::Towards, Grip::Tip, 1));
        let c0 = w.needle.circle().center;
        let pose = w.arm(ArmId::Left).commanded_pose.translated(&Vec3::new(0.01, 0.0, 0.0));
        w.command_pose(ArmId::Left, pose);
        assert_relative_eq!((w.needle.circle().center - c0).norm(), 0.01, epsilon = 1e-15);
        let rel = w.arm(ArmId::Left).actual_pose.inverse().compose(&w.needle.pose);
        assert!((rel.translation() - w.needle.in_hand.translation()).norm() < 1e-12);
    }

    #[test]
    fn stepping_replays_bit_identically() {
        let run = || {
            let mut w = make_world(cfg(Face::Towards, Grip::Tip, 4), 0.0125, 21, &WorldSettings::calibrated(), ArmId::Left)
                .unwrap();
            let mut trace = Vec::new();
            for k in 0..100 {
                let d = Vec3::new((k as f64 * 0.7).sin(), (k as f64 * 1.3).cos(), 0.0) * 1e-3;
                let pose = w.arm(ArmId::Left).commanded_pose.translated(&d);
                w.command_pose(ArmId::Left, pose);
                trace.push(w.needle.pose);
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn opening_holder_drops() {
        let mut w = world(cfg(Face::Towards, Grip::Tip, 0));
        w.command_jaw(ArmId::Left, Jaw::Open);
        assert!(w.dropped);
        assert_eq!(w.needle.attached_arm, None);
    }

    fn jaw_at(w: &mut SimWorld, theta: f64, offset: Vec3) {
        // Right jaw top-down with y along the needle tangent.
        let p = w.needle.point_at(theta);
        let y = w.needle.tangent_at(theta);
        let z = -Vec3::z();
        let y = (y - z * y.dot(&z)).normalize();
        let pose = RigidTransform::from_axes(y.cross(&z), y, z, p).unwrap();
        let pose = pose.translated(&pose.transform_vector(&offset));
        w.command_pose(ArmId::Right, pose);
        w.command_jaw(ArmId::Right, Jaw::Closed);
    }

    #[test]
    fn centered_grasp_succeeds() {
        let mut w = world(cfg(Face::Towards, Grip::Tip, 3));
        jaw_at(&mut w, 0.0, Vec3::zeros());
        let adj = adjudicate_grasp(&mut w, ArmId::Right);
        assert!(adj.success);
        assert!(adj.residual.norm() < 1e-9);
        assert_eq!(w.needle.attached_arm, Some(ArmId::Right));
        assert!(w.needle.grasp_arclength.abs() < 1e-9);
        w.command_jaw(ArmId::Left, Jaw::Open);
        assert!(!w.dropped);
    }

    #[test]
    fn lateral_miss_reports_residual() {
        let mut w = world(cfg(Face::Towards, Grip::Tip, 3));
        let theta = PI / 2.0;
        let p = w.needle.point_at(theta);
        let t = w.needle.tangent_at(theta);
        // Jaw x along the tangent, y pointing away from the needle center; shift 4mm along y.
        let y = (p - w.needle.circle().center).normalize();
        let pose = RigidTransform::from_axes(t, y, t.cross(&y), p + 0.004 * y).unwrap();
        w.command_pose(ArmId::Right, pose);
        let adj = adjudicate_grasp(&mut w, ArmId::Right);
        assert!(!adj.success);
        assert_relative_eq!(adj.residual.y, 0.004, epsilon = 1e-6);
        assert_eq!(w.needle.attached_arm, Some(ArmId::Left));
    }

    #[test]
    fn in_hand_perturbation_spread() {
        let mut settings = WorldSettings::zero_noise();
        settings.in_hand_sigma = 3f64.to_radians();
        let mut samples = Vec::new();
        for seed in 0..100 {
            let mut w = make_world(cfg(Face::Towards, Grip::Tip, 3), 0.0125, seed, &settings, ArmId::Left).unwrap();
            jaw_at(&mut w, 0.3, Vec3::zeros());
            let adj = adjudicate_grasp(&mut w, ArmId::Right);
            assert!(adj.success);
            samples.push(adj.perturbation);
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd.to_degrees() - 3.0).abs() < 0.5, "sd {}", sd.to_degrees());
    }
}
