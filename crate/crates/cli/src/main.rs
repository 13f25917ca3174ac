use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use handover_core::geometry::Vec3;
use handover_core::grasp::{generate_demos, train_axis_policy, write_demos, EnsemblePolicy, GraspAxis};
use handover_core::harness::{
    emit_multi, emit_single, failure_label, load_config, run_multi, run_single_grid, ExperimentConfig, ExperimentSpec,
    FaultInjection, HandoverDirection, Mode, NeedleId, PolicyKind, ResultRow,
};
use handover_core::kinematics::ArmId;
use handover_core::perception::{estimate_state_detailed, write_overlay, RansacParams, SegMask};
use handover_core::sim::{make_world, Face, StartConfig};

#[derive(Parser)]
#[command(name = "handover", version, about = "Simulated bimanual needle handover experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One handover from each of the 28 start configurations, per seed.
    Single(SingleArgs),
    /// Back-and-forth handovers until failure or the cap.
    Multi(MultiArgs),
    /// Estimate the needle state from a pair of PGM masks.
    Fit(FitArgs),
    /// Write the masks of one start configuration as PGM files.
    Render(RenderArgs),
    /// Generate demonstrations and train crop policies for both axes.
    Train(TrainArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    L2r,
    R2l,
}

impl From<DirectionArg> for HandoverDirection {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::L2r => HandoverDirection::LeftToRight,
            DirectionArg::R2l => HandoverDirection::RightToLeft,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FaceArg {
    Towards,
    Away,
}

impl From<FaceArg> for Face {
    fn from(f: FaceArg) -> Self {
        match f {
            FaceArg::Towards => Face::Towards,
            FaceArg::Away => Face::Away,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    ConstantX,
    ConstantY,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=4))]
    needle: u8,
    #[arg(long, value_enum, default_value = "l2r")]
    direction: DirectionArg,
    /// Seeds per configuration (single) or runs (multi).
    #[arg(long, default_value_t = 1)]
    trials: usize,
    /// First seed; trials use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sectioned key=value file overriding the calibrated settings.
    #[arg(long)]
    noise_profile: Option<PathBuf>,
    /// Start from the noise-free profile instead of the calibrated one.
    #[arg(long)]
    zero_noise: bool,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Run trials one after another instead of in parallel.
    #[arg(long)]
    serial: bool,
    #[arg(long, value_enum)]
    fault: Option<FaultArg>,
    /// Policy files written by `train`; the oracle is used without them.
    #[arg(long, requires = "policy_y")]
    policy_x: Option<PathBuf>,
    #[arg(long, requires = "policy_x")]
    policy_y: Option<PathBuf>,
}

#[derive(Args)]
struct SingleArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct MultiArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "towards")]
    config: FaceArg,
    #[arg(long, default_value_t = 50)]
    n_max: usize,
    /// Force a presentation failure after this many successful handovers.
    #[arg(long)]
    fail_at: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    /// Holding gripper position as x,y,z in meters.
    #[arg(long, value_parser = parse_vec3, allow_hyphen_values = true)]
    gripper: Vec3,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=4))]
    needle: u8,
    #[arg(long)]
    noise_profile: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the left mask with inliers and the fitted circle as PPM.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=4))]
    needle: u8,
    /// Start configuration label such as towards-tip-0 or away-inward30-3.
    #[arg(long, default_value = "towards-tip-0")]
    start: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    noise_profile: Option<PathBuf>,
    #[arg(long)]
    zero_noise: bool,
    #[arg(long, default_value = "masks")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=4))]
    needle: u8,
    /// Demonstrations per axis.
    #[arg(long, default_value_t = 200)]
    demos: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    noise_profile: Option<PathBuf>,
    #[arg(long, default_value = "policies")]
    out: PathBuf,
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err("expected three comma-separated numbers".into()),
    }
}

fn experiment_config(profile: Option<&Path>, zero_noise: bool) -> Result<ExperimentConfig> {
    let base = if zero_noise { ExperimentConfig::zero_noise() } else { ExperimentConfig::default() };
    match profile {
        Some(path) => Ok(load_config(path, &base)?),
        None => Ok(base),
    }
}

fn read_policy(path: &Path) -> Result<EnsemblePolicy> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(EnsemblePolicy::from_text(&text)?)
}

fn build_spec(mode: Mode, c: &Common) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::new(mode, NeedleId::new(c.needle)?, c.direction.into(), c.trials, c.seed);
    spec.config = experiment_config(c.noise_profile.as_deref(), c.zero_noise)?;
    spec.fault = match c.fault {
        Some(FaultArg::ConstantX) => FaultInjection::ConstantX,
        Some(FaultArg::ConstantY) => FaultInjection::ConstantY,
        None => FaultInjection::None,
    };
    if let (Some(x), Some(y)) = (&c.policy_x, &c.policy_y) {
        spec.policy = PolicyKind::Learned { x: read_policy(x)?, y: read_policy(y)? };
    }
    Ok(spec)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_row(row: &ResultRow) {
    println!(
        "{:<28} {:>4}/{:<4} {:>5.1}%  CI [{:.1}, {:.1}]  sim time {:.2} s  P {} X {} Y {} Timeout {}",
        row.variant, row.successes, row.total, row.percent, row.ci_low, row.ci_high, row.mean_time, row.p, row.x, row.y,
        row.timeout
    );
}

fn single(args: SingleArgs) -> Result<()> {
    let spec = build_spec(Mode::Single, &args.common)?;
    let run = run_single_grid(&spec, args.common.serial)?;
    ensure_dir(&args.common.out)?;
    let stem = format!("single-needle{}-{}", spec.needle.get(), spec.direction.label());
    let (csv, json) = emit_single(&args.common.out, &stem, &run, &spec)?;
    match run.table.rows.first() {
        Some(row) => print_row(row),
        None => println!("no trials"),
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn multi(args: MultiArgs) -> Result<()> {
    let mut spec = build_spec(Mode::Multi, &args.common)?;
    spec.multi_config = args.config.into();
    spec.n_max_handoffs = args.n_max;
    if let Some(k) = args.fail_at {
        spec.fault = FaultInjection::PresentationAt(k);
    }
    let run = run_multi(&spec, args.common.serial)?;
    ensure_dir(&args.common.out)?;
    let stem = format!("multi-needle{}-{}", spec.needle.get(), format!("{:?}", spec.multi_config).to_lowercase());
    let (csv, json) = emit_multi(&args.common.out, &stem, &run, &spec)?;
    for r in &run.records {
        println!("seed {:<4} handovers {:>3}  sim time/handover {:.2} s  failure {}", r.seed, r.handovers, r.mean_time, failure_label(r.failure));
    }
    println!("mean handovers {:.2}", run.mean_handovers);
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let cfg = experiment_config(args.noise_profile.as_deref(), false)?;
    let rig = cfg.world.rig()?;
    let left = SegMask::read_pgm(&args.left)?;
    let right = SegMask::read_pgm(&args.right)?;
    let params = RansacParams { seed: args.seed, ..cfg.ransac };
    let radius = NeedleId::new(args.needle)?.radius();
    let est = estimate_state_detailed((&left, &right), &rig, &args.gripper, radius, &params)?;
    let e = &est.estimate;
    let v = |p: &Vec3| format!("{:.6}, {:.6}, {:.6}", p.x, p.y, p.z);
    println!("center  {}", v(&e.circle.center));
    println!("normal  {}", v(&e.circle.normal));
    println!("tip     {}", v(&e.tip));
    println!("inliers {} of {}", e.inlier_count, est.cloud.len());
    if let Some(path) = args.overlay {
        write_overlay(&path, &left, &rig, &est)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn render(args: RenderArgs) -> Result<()> {
    let Some(config) = StartConfig::all().into_iter().find(|c| c.label() == args.start) else {
        bail!("unknown start configuration {:?}", args.start);
    };
    let cfg = experiment_config(args.noise_profile.as_deref(), args.zero_noise)?;
    let world = make_world(config, NeedleId::new(args.needle)?.radius(), args.seed, &cfg.world, ArmId::Left)?;
    let obs = world.render();
    ensure_dir(&args.out)?;
    for (name, mask) in [("left", &obs.left), ("right", &obs.right), ("overhead", &obs.overhead)] {
        let path = args.out.join(format!("{}-{name}.pgm", args.start));
        mask.write_pgm(&path)?;
        println!("wrote {}", path.display());
    }
    let g = world.arm(ArmId::Left).commanded_pose.translation();
    println!("gripper {:.6},{:.6},{:.6}", g.x, g.y, g.z);
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = experiment_config(args.noise_profile.as_deref(), false)?;
    let radius = NeedleId::new(args.needle)?.radius();
    ensure_dir(&args.out)?;
    for (axis, name) in [(GraspAxis::X, "x"), (GraspAxis::Y, "y")] {
        let demos = generate_demos(&cfg.world, radius, axis, args.demos, args.seed)?;
        write_demos(&args.out.join(format!("demos-{name}.csv")), &demos)?;
        let (policy, report) = train_axis_policy(&demos, axis, args.seed)?;
        let path = args.out.join(format!("policy-{name}.txt"));
        std::fs::write(&path, policy.to_text()).with_context(|| format!("writing {}", path.display()))?;
        println!("{name}: {} demos, training accuracy {:.3}, wrote {}", report.demos, report.training_accuracy, path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Single(a) => single(a),
        Command::Multi(a) => multi(a),
        Command::Fit(a) => fit(a),
        Command::Render(a) => render(a),
        Command::Train(a) => train(a),
    }
}
