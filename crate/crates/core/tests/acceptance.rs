//! The eight acceptance criteria, run in order inside one test so their wall
//! clock timings do not overlap. Each prints a single PASS/FAIL line.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use handover_core::geometry::{angle_between, Vec3};
use handover_core::grasp::{servo_axis, AxisObservation, AxisPolicy, Direction, GraspAxis, GraspParams};
use handover_core::harness::{
    binomial_ci95, run_multi, run_single_grid, single_csv, multi_csv, ExperimentConfig, ExperimentSpec,
    HandoverDirection, Mode, NeedleId, SingleRun,
};
use handover_core::kinematics::ArmId;
use handover_core::perception::{estimate_state, ransac_circle, PerceptionError, PointCloud, RansacParams};
use handover_core::sim::{make_world, Face, Grip, RotationBin, StartConfig, WorldSettings};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn ci_table() -> Outcome {
    let start = Instant::now();
    let table = [
        ((28, 56), (36.3, 63.7)),
        ((2, 28), (0.9, 23.5)),
        ((53, 56), (85.1, 98.9)),
        ((6, 28), (8.3, 41.0)),
        ((108, 112), (91.1, 99.0)),
        ((26, 28), (76.5, 99.1)),
        ((25, 28), (71.8, 97.7)),
        ((21, 28), (55.1, 89.3)),
    ];
    let mut worst = 0.0f64;
    for ((s, n), (lo, hi)) in table {
        let (l, h) = binomial_ci95(s, n);
        worst = worst.max((l - lo).abs()).max((h - hi).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= 0.1 + 1e-9 && within(elapsed, 1.0);
    outcome(pass, format!("max deviation {worst:.3} pp over 8 intervals, {:.3} s", elapsed.as_secs_f64()))
}

#[derive(Default)]
struct PerceptionTally {
    accurate: usize,
    insufficient: usize,
    confident_wrong: usize,
    /// Confident fits that miss the tight tolerances without being confidently wrong.
    loose: usize,
    worst: (f64, f64, f64),
}

impl PerceptionTally {
    fn pass(&self) -> bool {
        self.loose == 0 && self.confident_wrong == 0
    }

    fn summary(&self) -> String {
        format!(
            "{} accurate, {} insufficient, {} loose, {} confident-wrong; worst accurate center {:.2} mm, normal {:.2} deg, tip {:.2} mm",
            self.accurate,
            self.insufficient,
            self.loose,
            self.confident_wrong,
            self.worst.0 * 1e3,
            self.worst.1,
            self.worst.2 * 1e3
        )
    }
}

fn perception_sweep(needle: NeedleId) -> PerceptionTally {
    let mut settings = WorldSettings::calibrated();
    settings.render_noise.dropout = 0.0;
    settings.render_noise.blob_rate = 0.0;
    let params = RansacParams::default();
    let mut tally = PerceptionTally::default();
    for (i, config) in StartConfig::all().into_iter().enumerate() {
        let world = make_world(config, needle.radius(), 100 + i as u64, &settings, ArmId::Left).unwrap();
        let obs = world.render();
        let grip = world.arm(ArmId::Left).actual_pose.translation();
        match estimate_state((&obs.left, &obs.right), &world.rig, &grip, needle.radius(), &params) {
            Ok(est) => {
                let truth = world.needle.circle();
                let center = (est.circle.center - truth.center).norm();
                let a = angle_between(&est.circle.normal, &truth.normal);
                let normal = a.min(PI - a).to_degrees();
                let tip = (est.tip - world.needle.free_end()).norm();
                if center < 1e-3 && normal < 2.0 && tip < 1.5e-3 {
                    tally.accurate += 1;
                    tally.worst = (tally.worst.0.max(center), tally.worst.1.max(normal), tally.worst.2.max(tip));
                } else if center > 5e-3 {
                    tally.confident_wrong += 1;
                    println!("    {}: confident wrong, center {:.2} mm", config.label(), center * 1e3);
                } else {
                    tally.loose += 1;
                    println!(
                        "    {}: center {:.2} mm, normal {:.2} deg, tip {:.2} mm",
                        config.label(),
                        center * 1e3,
                        normal,
                        tip * 1e3
                    );
                }
            }
            Err(PerceptionError::InsufficientObservation { .. }) => tally.insufficient += 1,
            Err(e) => panic!("{}: {e}", config.label()),
        }
    }
    tally
}

fn perception_accuracy() -> Outcome {
    let start = Instant::now();
    let tally = perception_sweep(NeedleId::new(1).unwrap());
    let elapsed = start.elapsed();
    outcome(tally.pass() && within(elapsed, 30.0), format!("{}, {:.1} s", tally.summary(), elapsed.as_secs_f64()))
}

fn noisy_circle_cloud(seed: u64) -> (PointCloud, Vec3) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = 0.0125;
    let center = Vec3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(0.03..0.07));
    let normal = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        .normalize();
    let u = normal.cross(&Vec3::new(0.3, -0.5, 0.8)).normalize();
    let v = normal.cross(&u);
    let sigma = Normal::new(0.0, 0.0003).unwrap();
    let mut points = Vec::with_capacity(100);
    for _ in 0..70 {
        let t: f64 = rng.random_range(0.0..PI);
        let p = center + radius * (t.cos() * u + t.sin() * v);
        points.push(p + Vec3::new(sigma.sample(&mut rng), sigma.sample(&mut rng), sigma.sample(&mut rng)));
    }
    for _ in 0..30 {
        let box_offset = Vec3::new(
            rng.random_range(-0.025..0.025),
            rng.random_range(-0.025..0.025),
            rng.random_range(-0.025..0.025),
        );
        points.push(center + box_offset);
    }
    let source_rows = vec![0; points.len()];
    (PointCloud { points, source_rows }, center)
}

fn ransac_robustness() -> Outcome {
    let start = Instant::now();
    let mut recovered = 0;
    for i in 0..100u64 {
        let (cloud, center) = noisy_circle_cloud(i);
        let params = RansacParams { inlier_radius: 0.001, iterations: 300, seed: i, min_inliers: 20 };
        if let Ok(fit) = ransac_circle(&cloud, 0.0125, &params) {
            if (fit.circle.center - center).norm() < 1e-3 {
                recovered += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        recovered >= 99 && within(elapsed, 10.0),
        format!("{recovered}/100 centers within 1 mm, {:.2} s", elapsed.as_secs_f64()),
    )
}

struct Alternating;

impl AxisPolicy for Alternating {
    fn axis(&self) -> GraspAxis {
        GraspAxis::X
    }

    fn decide(&self, obs: &AxisObservation) -> Direction {
        if obs.query_index.is_multiple_of(2) {
            Direction::Plus
        } else {
            Direction::Minus
        }
    }
}

fn decay_schedule() -> Outcome {
    let config = StartConfig { face: Face::Towards, grip: Grip::Tip, rotation_bin: RotationBin::new(0).unwrap() };
    let mut world = make_world(config, 0.0125, 0, &WorldSettings::zero_noise(), ArmId::Left).unwrap();
    let params = GraspParams { initial_step: 0.0016, beta_decay: 0.5, stop_threshold: 0.0002, ..GraspParams::default() };
    let target = world.arm(ArmId::Right).actual_pose.translation();
    let report = servo_axis(&mut world, ArmId::Right, &Alternating, &target, &params).unwrap();
    let pass = report.flips == 4 && report.travel <= 0.0032 + 1e-12;
    outcome(pass, format!("{} flips, {:.2} mm travelled", report.flips, report.travel * 1e3))
}

fn single_spec(needle: u8, direction: HandoverDirection, trials: usize) -> ExperimentSpec {
    ExperimentSpec::new(Mode::Single, NeedleId::new(needle).unwrap(), direction, trials, 0)
}

fn grid_summary(run: &SingleRun) -> String {
    let r = &run.table.rows[0];
    format!(
        "{} {}/{} ({:.1}%, CI {:.1}-{:.1}) P {} X {} Y {} T {}",
        run.records[0].direction.label(),
        r.successes,
        r.total,
        r.percent,
        r.ci_low,
        r.ci_high,
        r.p,
        r.x,
        r.y,
        r.timeout
    )
}

/// Both directions, 4 seeds each; returns pass on the 90% bar plus a summary.
fn end_to_end_for(needle: u8) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for direction in [HandoverDirection::LeftToRight, HandoverDirection::RightToLeft] {
        let run = run_single_grid(&single_spec(needle, direction, 4), false).unwrap();
        let row = &run.table.rows[0];
        let classified = row.p + row.x + row.y + row.timeout == row.total - row.successes;
        pass &= classified && row.successes as f64 >= 0.9 * row.total as f64;
        parts.push(grid_summary(&run));
    }
    (pass, parts.join("; "))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let (pass, summary) = end_to_end_for(1);
    let elapsed = start.elapsed();
    outcome(pass && within(elapsed, 300.0), format!("{summary}; {:.0} s", elapsed.as_secs_f64()))
}

fn multi_spec(face: Face, trials: usize, config: ExperimentConfig) -> ExperimentSpec {
    let mut spec =
        ExperimentSpec::new(Mode::Multi, NeedleId::new(1).unwrap(), HandoverDirection::LeftToRight, trials, 0);
    spec.multi_config = face;
    spec.config = config;
    spec
}

fn endurance() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for face in [Face::Towards, Face::Away] {
        let run = run_multi(&multi_spec(face, 5, ExperimentConfig::default()), false).unwrap();
        let counts: Vec<String> = run.records.iter().map(|r| r.handovers.to_string()).collect();
        pass &= run.mean_handovers >= 20.0;
        parts.push(format!("{face:?} mean {:.1} [{}]", run.mean_handovers, counts.join(" ")));
        let clean = run_multi(&multi_spec(face, 1, ExperimentConfig::zero_noise()), false).unwrap();
        let r = &clean.records[0];
        let line = String::from_utf8(multi_csv(&clean)).unwrap();
        let dash = line.lines().nth(1).is_some_and(|l| l.split(',').nth(6) == Some("-"));
        pass &= r.handovers == 50 && r.failure.is_none() && dash;
        parts.push(format!("{face:?} zero-noise {}", r.handovers));
    }
    let elapsed = start.elapsed();
    outcome(pass && within(elapsed, 600.0), format!("{}; {:.0} s", parts.join(", "), elapsed.as_secs_f64()))
}

fn p_failures_with_large_occlusion(needle: u8) -> u64 {
    let mut spec = single_spec(needle, HandoverDirection::LeftToRight, 4);
    spec.config.world.occlusion_radius = 0.012;
    run_single_grid(&spec, false).unwrap().table.rows[0].p
}

fn unseen_needles() -> Outcome {
    let start = Instant::now();
    let two = NeedleId::new(2).unwrap();
    let four = NeedleId::new(4).unwrap();
    println!("    needle 2 perception sweep");
    let perception_two = perception_sweep(two);
    println!("    needle 4 perception sweep");
    let perception_four = perception_sweep(four);
    let (e2e_two, summary_two) = end_to_end_for(2);
    let (_, summary_four) = end_to_end_for(4);
    let p_two = p_failures_with_large_occlusion(2);
    let p_four = p_failures_with_large_occlusion(4);
    println!("    needle 2 perception: {}", perception_two.summary());
    println!("    needle 2 handovers: {summary_two}");
    println!("    needle 4 perception (reported only): {}", perception_four.summary());
    println!("    needle 4 handovers (reported only): {summary_four}");
    let pass = perception_two.pass() && e2e_two && p_four > p_two;
    outcome(
        pass,
        format!("enlarged occlusion P failures: needle 4 {p_four} vs needle 2 {p_two}; {:.0} s", start.elapsed().as_secs_f64()),
    )
}

fn determinism() -> Outcome {
    let mut pass = true;
    let spec = single_spec(1, HandoverDirection::RightToLeft, 1);
    let serial = single_csv(&run_single_grid(&spec, true).unwrap());
    let parallel = single_csv(&run_single_grid(&spec, false).unwrap());
    let again = single_csv(&run_single_grid(&spec, false).unwrap());
    pass &= serial == parallel && parallel == again;
    let spec = multi_spec(Face::Away, 2, ExperimentConfig::default());
    let serial_multi = multi_csv(&run_multi(&spec, true).unwrap());
    let parallel_multi = multi_csv(&run_multi(&spec, false).unwrap());
    pass &= serial_multi == parallel_multi;
    outcome(pass, format!("single {} bytes, multi {} bytes compared", serial.len(), serial_multi.len()))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("1 confidence intervals", ci_table),
        ("2 perception accuracy", perception_accuracy),
        ("3 ransac robustness", ransac_robustness),
        ("4 decay schedule", decay_schedule),
        ("5 end-to-end single handover", end_to_end),
        ("6 multi-handover endurance", endurance),
        ("7 unseen needles", unseen_needles),
        ("8 determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let o = run();
        // Written to the process stdout directly so the report shows without --nocapture.
        let line = format!("{} criterion {name}: {}\n", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        std::io::stdout().write_all(line.as_bytes()).unwrap();
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
