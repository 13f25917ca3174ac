//! Seeded evaluation runs: the single-handover grid over all start
//! configurations, multi-handover endurance runs, and their summaries.

pub mod config;
pub mod output;
pub mod stats;

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grasp::{
    execute_grasp, AxisPolicy, ConstantPolicy, Direction, EnsemblePolicy, GraspAxis, GraspError, GraspParams,
    MissAxis, OraclePolicy,
};
use crate::kinematics::ArmId;
use crate::perception::RansacParams;
use crate::rng::derive_seed;
use crate::servo::{acquire_needle, handover_position, AcquireParams, HandoverParams, StereoEstimator};
use crate::sim::{make_world, Face, Grip, Jaw, RotationBin, SimError, SimWorld, StartConfig, WorldSettings};

pub use config::{load_config, parse_config, to_ini};
pub use output::{emit_multi, emit_single, multi_csv, single_csv, write_atomic};
pub use stats::{binomial_ci95, clopper_pearson};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    IoFailure(String),
    #[error("{0} is not implemented")]
    Unimplemented(&'static str),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Grasp(GraspError),
}

/// Needle 1..=4 of the evaluation set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct NeedleId(u8);

impl NeedleId {
    pub const RADII: [f64; 4] = [0.0125, 0.0175, 0.0125, 0.0075];

    pub fn new(id: u8) -> Result<Self, HarnessError> {
        if (1..=4).contains(&id) {
            Ok(NeedleId(id))
        } else {
            Err(HarnessError::InvalidSpec(format!("needle {id} is not in 1..=4")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn radius(self) -> f64 {
        Self::RADII[self.0 as usize - 1]
    }
}

impl TryFrom<u8> for NeedleId {
    type Error = HarnessError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        NeedleId::new(v)
    }
}

impl From<NeedleId> for u8 {
    fn from(n: NeedleId) -> u8 {
        n.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HandoverDirection {
    LeftToRight,
    RightToLeft,
}

impl HandoverDirection {
    pub fn holder(self) -> ArmId {
        match self {
            HandoverDirection::LeftToRight => ArmId::Left,
            HandoverDirection::RightToLeft => ArmId::Right,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            HandoverDirection::LeftToRight => HandoverDirection::RightToLeft,
            HandoverDirection::RightToLeft => HandoverDirection::LeftToRight,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            HandoverDirection::LeftToRight => "l2r",
            HandoverDirection::RightToLeft => "r2l",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Single,
    Multi,
    Fit,
    Render,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultInjection {
    None,
    /// The x policy always answers +.
    ConstantX,
    /// The y policy always answers +.
    ConstantY,
    /// Presentation fails once this many handovers have succeeded.
    PresentationAt(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum PolicyKind {
    /// Ground-truth direction with the configured label-flip rate.
    Oracle,
    Learned { x: EnsemblePolicy, y: EnsemblePolicy },
    /// A single classifier answering both axes. Named for comparison tables
    /// only; running it is an error.
    SharedXY,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Oracle => "oracle",
            PolicyKind::Learned { .. } => "learned",
            PolicyKind::SharedXY => "Shared (x,y) Grasp Policy",
        }
    }
}

/// Every tunable of a run; loaded from the sectioned config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: WorldSettings,
    pub ransac: RansacParams,
    pub acquire: AcquireParams,
    pub handover: HandoverParams,
    pub grasp: GraspParams,
    pub label_flip_rate: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldSettings::calibrated(),
            ransac: RansacParams::default(),
            acquire: AcquireParams::default(),
            handover: HandoverParams::default(),
            grasp: GraspParams::default(),
            label_flip_rate: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn zero_noise() -> Self {
        ExperimentConfig { world: WorldSettings::zero_noise(), label_flip_rate: 0.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.world.validate()?;
        self.grasp.validate().map_err(HarnessError::Grasp)?;
        self.acquire.servo.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.handover.servo.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.label_flip_rate) {
            return Err(HarnessError::Config("label_flip_rate must lie in [0, 1]".into()));
        }
        if self.ransac.iterations == 0 || !(self.ransac.inlier_radius > 0.0) {
            return Err(HarnessError::Config("ransac needs iterations >= 1 and a positive inlier radius".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub needle: NeedleId,
    pub direction: HandoverDirection,
    pub trials_per_config: usize,
    pub n_max_handoffs: usize,
    /// Face of the needle toward the camera at the start of a multi run.
    pub multi_config: Face,
    pub seeds: Vec<u64>,
    pub fault: FaultInjection,
    pub policy: PolicyKind,
    pub config: ExperimentConfig,
}

impl ExperimentSpec {
    /// `trials` consecutive seeds starting at `seed`.
    pub fn new(mode: Mode, needle: NeedleId, direction: HandoverDirection, trials: usize, seed: u64) -> Self {
        ExperimentSpec {
            mode,
            needle,
            direction,
            trials_per_config: trials,
            n_max_handoffs: 50,
            multi_config: Face::Towards,
            seeds: (0..trials as u64).map(|i| seed + i).collect(),
            fault: FaultInjection::None,
            policy: PolicyKind::Oracle,
            config: ExperimentConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials_per_config == 0 {
            return Err(HarnessError::InvalidSpec("trials_per_config must be at least 1".into()));
        }
        if self.n_max_handoffs == 0 {
            return Err(HarnessError::InvalidSpec("n_max_handoffs must be at least 1".into()));
        }
        if self.policy == PolicyKind::SharedXY {
            return Err(HarnessError::Unimplemented(PolicyKind::SharedXY.name()));
        }
        if let PolicyKind::Learned { x, y } = &self.policy {
            if x.axis != GraspAxis::X || y.axis != GraspAxis::Y {
                return Err(HarnessError::InvalidSpec("learned policies are assigned to the wrong axes".into()));
            }
        }
        self.config.validate()
    }

    pub fn variant(&self) -> String {
        format!("{} needle-{} {}", self.policy.name(), self.needle.get(), self.direction.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureMode {
    P,
    X,
    Y,
    Timeout,
}

impl fmt::Display for FailureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureMode::P => "P",
            FailureMode::X => "X",
            FailureMode::Y => "Y",
            FailureMode::Timeout => "Timeout",
        })
    }
}

/// Label used in tables: the failure mode, or "-" for none.
pub fn failure_label(mode: Option<FailureMode>) -> String {
    mode.map_or_else(|| "-".to_string(), |m| m.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandoverResult {
    pub failure: Option<FailureMode>,
    pub steps: u64,
    pub detail: String,
}

fn grasp_failure(e: &GraspError) -> Option<FailureMode> {
    match e {
        GraspError::MaxStepsExceeded(GraspAxis::X) | GraspError::GraspMissed { axis: MissAxis::X, .. } => {
            Some(FailureMode::X)
        }
        GraspError::MaxStepsExceeded(GraspAxis::Y) | GraspError::GraspMissed { axis: MissAxis::Y, .. } => {
            Some(FailureMode::Y)
        }
        GraspError::GraspMissed { axis: MissAxis::Vertical, .. } | GraspError::GripperOffscreen => Some(FailureMode::P),
        _ => None,
    }
}

type PolicyPair = (Box<dyn AxisPolicy>, Box<dyn AxisPolicy>);

fn policies(spec: &ExperimentSpec, world_seed: u64) -> PolicyPair {
    let flip = spec.config.label_flip_rate;
    let (mut x, mut y): PolicyPair = match &spec.policy {
        PolicyKind::Learned { x, y } => (Box::new(x.clone()), Box::new(y.clone())),
        _ => (
            Box::new(OraclePolicy::new(GraspAxis::X, flip, world_seed)),
            Box::new(OraclePolicy::new(GraspAxis::Y, flip, world_seed)),
        ),
    };
    match spec.fault {
        FaultInjection::ConstantX => x = Box::new(ConstantPolicy { axis: GraspAxis::X, direction: Direction::Plus }),
        FaultInjection::ConstantY => y = Box::new(ConstantPolicy { axis: GraspAxis::Y, direction: Direction::Plus }),
        _ => {}
    }
    (x, y)
}

/// One handover from `holder` to its partner: acquire, position, grasp,
/// then release and send the former holder home.
pub fn run_handover(
    world: &mut SimWorld,
    holder: ArmId,
    spec: &ExperimentSpec,
    force_presentation_failure: bool,
) -> Result<HandoverResult, HarnessError> {
    let start = world.clock;
    let fail = |mode, world: &SimWorld, detail: String| {
        let steps = world.clock - start;
        Ok(HandoverResult { failure: Some(mode), steps, detail })
    };
    if force_presentation_failure {
        return fail(FailureMode::P, world, "injected presentation failure".into());
    }
    let cfg = &spec.config;
    let mut estimator = StereoEstimator::new(cfg.ransac);
    let acquired = match acquire_needle(&mut estimator, world, holder, &cfg.acquire) {
        Ok(a) => a,
        Err(e) => return fail(FailureMode::P, world, e.to_string()),
    };
    let ready = match handover_position(&mut estimator, world, holder, &acquired.estimate, &cfg.handover) {
        Ok(r) => r,
        Err(e) => return fail(FailureMode::P, world, e.to_string()),
    };
    let (px, py) = policies(spec, world.seed);
    let receiver = holder.other();
    if let Err(e) = execute_grasp(world, receiver, &ready.estimate, (px.as_ref(), py.as_ref()), &cfg.grasp) {
        return match grasp_failure(&e) {
            Some(mode) => fail(mode, world, e.to_string()),
            None => Err(HarnessError::Grasp(e)),
        };
    }
    let mut action = world.hold_action();
    action.get_mut(holder).pose = world.settings.home_pose(holder);
    action.get_mut(holder).jaw = Jaw::Open;
    world.step(&action);
    let steps = world.clock - start;
    let tau = world.settings.tau_max;
    if steps >= tau {
        return Ok(HandoverResult { failure: Some(FailureMode::Timeout), steps: tau, detail: "step budget exhausted".into() });
    }
    Ok(HandoverResult { failure: None, steps, detail: String::new() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub variant: String,
    pub needle: u8,
    pub direction: HandoverDirection,
    pub config_index: usize,
    pub config: StartConfig,
    pub seed: u64,
    pub success: bool,
    pub failure: Option<FailureMode>,
    pub steps: u64,
    /// Simulated seconds: steps times the per-step latency.
    pub sim_time: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: String,
    pub successes: u64,
    pub total: u64,
    pub percent: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean simulated time of the successful trials.
    pub mean_time: f64,
    pub p: u64,
    pub x: u64,
    pub y: u64,
    pub timeout: u64,
}

impl ResultRow {
    /// None for an empty record set.
    pub fn from_records(variant: &str, records: &[TrialRecord]) -> Option<ResultRow> {
        if records.is_empty() {
            return None;
        }
        let total = records.len() as u64;
        let successes = records.iter().filter(|r| r.success).count() as u64;
        let count = |m| records.iter().filter(|r| r.failure == Some(m)).count() as u64;
        let (ci_low, ci_high) = binomial_ci95(successes, total);
        let times: Vec<f64> = records.iter().filter(|r| r.success).map(|r| r.sim_time).collect();
        let mean_time = if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 };
        Some(ResultRow {
            variant: variant.to_string(),
            successes,
            total,
            percent: stats::round_tenth(100.0 * successes as f64 / total as f64),
            ci_low,
            ci_high,
            mean_time,
            p: count(FailureMode::P),
            x: count(FailureMode::X),
            y: count(FailureMode::Y),
            timeout: count(FailureMode::Timeout),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingleRun {
    pub records: Vec<TrialRecord>,
    pub table: ResultTable,
}

/// Runs one job per item, in parallel unless `serial`, keeping input order.
fn run_jobs<J, T, F>(jobs: Vec<J>, serial: bool, f: F) -> Result<Vec<T>, HarnessError>
where
    J: Send,
    T: Send,
    F: Fn(J) -> Result<T, HarnessError> + Sync + Send,
{
    if serial {
        jobs.into_iter().map(f).collect()
    } else {
        jobs.into_par_iter().map(f).collect()
    }
}

/// All 28 start configurations for every seed. Records come back sorted by
/// (configuration, seed position) whatever the execution order.
pub fn run_single_grid(spec: &ExperimentSpec, serial: bool) -> Result<SingleRun, HarnessError> {
    spec.validate()?;
    let variant = spec.variant();
    let jobs: Vec<(usize, StartConfig, usize, u64)> = StartConfig::all()
        .into_iter()
        .enumerate()
        .flat_map(|(ci, config)| spec.seeds.iter().enumerate().map(move |(si, &seed)| (ci, config, si, seed)))
        .collect();
    let mut records = run_jobs(jobs, serial, |(ci, config, si, seed)| {
        let world_seed = derive_seed(seed, &[ci as u64]);
        let holder = spec.direction.holder();
        let mut world = make_world(config, spec.needle.radius(), world_seed, &spec.config.world, holder)?;
        let forced = spec.fault == FaultInjection::PresentationAt(0);
        let r = run_handover(&mut world, holder, spec, forced)?;
        Ok((
            (ci, si),
            TrialRecord {
                variant: variant.clone(),
                needle: spec.needle.get(),
                direction: spec.direction,
                config_index: ci,
                config,
                seed,
                success: r.failure.is_none(),
                failure: r.failure,
                steps: r.steps,
                sim_time: r.steps as f64 * spec.config.world.step_latency,
                detail: r.detail,
            },
        ))
    })?;
    records.sort_by_key(|(key, _)| *key);
    let records: Vec<TrialRecord> = records.into_iter().map(|(_, r)| r).collect();
    let table = ResultTable { rows: ResultRow::from_records(&variant, &records).into_iter().collect() };
    Ok(SingleRun { records, table })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiRecord {
    pub variant: String,
    pub needle: u8,
    pub start_face: Face,
    pub seed: u64,
    pub handovers: usize,
    /// Mean simulated time per successful handover.
    pub mean_time: f64,
    /// None when the run reached the handover cap.
    pub failure: Option<FailureMode>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiRun {
    pub records: Vec<MultiRecord>,
    pub mean_handovers: f64,
}

/// Passes the needle back and forth until a handover fails or the cap is
/// reached, once per seed.
pub fn run_multi(spec: &ExperimentSpec, serial: bool) -> Result<MultiRun, HarnessError> {
    spec.validate()?;
    let variant = format!("{} multi {:?}", spec.variant(), spec.multi_config);
    let jobs: Vec<u64> = spec.seeds.clone();
    let records = run_jobs(jobs, serial, |seed| {
        let config = StartConfig { face: spec.multi_config, grip: Grip::Tip, rotation_bin: RotationBin::new(0)? };
        let world_seed = derive_seed(seed, &[StartConfig::all().len() as u64, spec.multi_config as u64]);
        let mut direction = spec.direction;
        let mut world = make_world(config, spec.needle.radius(), world_seed, &spec.config.world, direction.holder())?;
        let mut handovers = 0;
        let mut steps = 0;
        let mut failure = None;
        let mut detail = String::new();
        while handovers < spec.n_max_handoffs {
            let forced = spec.fault == FaultInjection::PresentationAt(handovers);
            let r = run_handover(&mut world, direction.holder(), spec, forced)?;
            if let Some(mode) = r.failure {
                log::debug!("seed {seed}: handover {} failed ({mode}): {}", handovers + 1, r.detail);
                failure = Some(mode);
                detail = r.detail;
                break;
            }
            steps += r.steps;
            handovers += 1;
            direction = direction.reversed();
        }
        let mean_time =
            if handovers == 0 { 0.0 } else { steps as f64 * spec.config.world.step_latency / handovers as f64 };
        Ok(MultiRecord {
            variant: variant.clone(),
            needle: spec.needle.get(),
            start_face: spec.multi_config,
            seed,
            handovers,
            mean_time,
            failure,
            detail,
        })
    })?;
    let mean_handovers = if records.is_empty() {
        0.0
    } else {
        records.iter().map(|r| r.handovers as f64).sum::<f64>() / records.len() as f64
    };
    Ok(MultiRun { records, mean_handovers })
}
