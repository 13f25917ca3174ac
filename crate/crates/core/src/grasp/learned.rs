//! Crop classifiers: bootstrap ensembles of logistic regressions over
//! block-averaged mask crops, plus simulated demonstration data.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{crop_for, grasp_target, true_grasp_point, AxisObservation, AxisPolicy, Direction, GraspAxis, GraspError, GraspParams};
use crate::geometry::Vec3;
use crate::kinematics::ArmId;
use crate::perception::SegMask;
use crate::rng::{derive_seed, stream, Domain};
use crate::servo::{acquire_needle, handover_position, AcquireParams, ExactEstimator, HandoverParams};
use crate::sim::{make_world, Jaw, StartConfig, WorldSettings};

const BLOCK: usize = 10;
const MEMBERS: usize = 5;
const EPOCHS: usize = 1500;
const LEARNING_RATE: f64 = 2.0;
const L2: f64 = 1e-4;

/// Mean foreground fraction over `BLOCK`×`BLOCK` cells, row-major.
pub fn crop_features(crop: &SegMask) -> Vec<f64> {
    let rows = crop.height().div_ceil(BLOCK);
    let cols = crop.width().div_ceil(BLOCK);
    let mut out = Vec::with_capacity(rows * cols);
    for br in 0..rows {
        for bc in 0..cols {
            let (r0, c0) = (br * BLOCK, bc * BLOCK);
            let (r1, c1) = ((r0 + BLOCK).min(crop.height()), (c0 + BLOCK).min(crop.width()));
            let mut on = 0usize;
            for r in r0..r1 {
                for c in c0..c1 {
                    on += crop.get(c, r) as usize;
                }
            }
            out.push(on as f64 / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demo {
    pub axis: GraspAxis,
    pub label: Direction,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> Direction {
        Direction::of(self.score(x))
    }

    /// Full-batch gradient descent on the L2-regularized logistic loss.
    pub fn fit(xs: &[&[f64]], ys: &[f64]) -> LogisticModel {
        let dim = xs.first().map_or(0, |x| x.len());
        let mut m = LogisticModel { weights: vec![0.0; dim], bias: 0.0 };
        let n = xs.len() as f64;
        let mut grad = vec![0.0; dim];
        for _ in 0..EPOCHS {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for (x, &y) in xs.iter().zip(ys) {
                // d/ds of log(1 + exp(-y s)).
                let g = -y / (1.0 + (y * m.score(x)).exp());
                for (gi, xi) in grad.iter_mut().zip(x.iter()) {
                    *gi += g * xi;
                }
                grad_b += g;
            }
            for (w, g) in m.weights.iter_mut().zip(&grad) {
                *w -= LEARNING_RATE * (g / n + L2 * *w);
            }
            m.bias -= LEARNING_RATE * grad_b / n;
        }
        m
    }
}

/// Majority vote over independently bootstrapped members.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePolicy {
    pub axis: GraspAxis,
    pub members: Vec<LogisticModel>,
}

impl EnsemblePolicy {
    pub fn predict(&self, features: &[f64]) -> Direction {
        let plus = self.members.iter().filter(|m| m.predict(features) == Direction::Plus).count();
        if 2 * plus >= self.members.len() {
            Direction::Plus
        } else {
            Direction::Minus
        }
    }

    pub fn accuracy(&self, demos: &[Demo]) -> f64 {
        if demos.is_empty() {
            return 0.0;
        }
        let hits = demos.iter().filter(|d| self.predict(&d.features) == d.label).count();
        hits as f64 / demos.len() as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let dim = self.members.first().map_or(0, |m| m.weights.len());
        writeln!(s, "axis {:?}", self.axis).unwrap();
        writeln!(s, "members {}", self.members.len()).unwrap();
        writeln!(s, "features {dim}").unwrap();
        for m in &self.members {
            writeln!(s, "bias {}", m.bias).unwrap();
            let w: Vec<String> = m.weights.iter().map(|w| w.to_string()).collect();
            writeln!(s, "weights {}", w.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, GraspError> {
        let bad = |m: &str| GraspError::Parse(m.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut field = |key: &str| -> Result<String, GraspError> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing {key}")))?;
            line.strip_prefix(key)
                .map(|rest| rest.trim().to_string())
                .ok_or_else(|| bad(&format!("expected {key}, got {line:?}")))
        };
        let axis = match field("axis")?.as_str() {
            "X" => GraspAxis::X,
            "Y" => GraspAxis::Y,
            other => return Err(bad(&format!("unknown axis {other}"))),
        };
        let count: usize = field("members")?.parse().map_err(|_| bad("member count"))?;
        let dim: usize = field("features")?.parse().map_err(|_| bad("feature count"))?;
        let mut members = Vec::with_capacity(count);
        for _ in 0..count {
            let bias = field("bias")?.parse().map_err(|_| bad("bias"))?;
            let weights = field("weights")?
                .split_whitespace()
                .map(|w| w.parse::<f64>().map_err(|_| bad("weight")))
                .collect::<Result<Vec<_>, _>>()?;
            if weights.len() != dim {
                return Err(bad("weight count does not match feature count"));
            }
            members.push(LogisticModel { weights, bias });
        }
        Ok(EnsemblePolicy { axis, members })
    }
}

impl AxisPolicy for EnsemblePolicy {
    fn axis(&self) -> GraspAxis {
        self.axis
    }

    fn decide(&self, obs: &AxisObservation) -> Direction {
        match &obs.crop {
            Some(crop) => self.predict(&crop_features(crop)),
            None => Direction::Plus,
        }
    }

    fn needs_crop(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainReport {
    pub training_accuracy: f64,
    pub demos: usize,
}

/// Fits a 5-member ensemble on the demos for `axis`; demos for the other
/// axis are ignored.
pub fn train_axis_policy(demos: &[Demo], axis: GraspAxis, seed: u64) -> Result<(EnsemblePolicy, TrainReport), GraspError> {
    let demos: Vec<&Demo> = demos.iter().filter(|d| d.axis == axis).collect();
    let plus = demos.iter().filter(|d| d.label == Direction::Plus).count();
    if plus < 2 || demos.len() - plus < 2 {
        return Err(GraspError::DegenerateDemos);
    }
    let dim = demos[0].features.len();
    if demos.iter().any(|d| d.features.len() != dim) {
        return Err(GraspError::InvalidParams("demos have differing feature lengths".into()));
    }
    let members = (0..MEMBERS)
        .map(|m| {
            let mut rng = stream(seed, Domain::Ensemble, m as u64);
            let mut picks: Vec<&Demo> = (0..demos.len()).map(|_| demos[rng.random_range(0..demos.len())]).collect();
            if picks.iter().all(|d| d.label == picks[0].label) {
                picks = demos.clone();
            }
            let xs: Vec<&[f64]> = picks.iter().map(|d| d.features.as_slice()).collect();
            let ys: Vec<f64> = picks.iter().map(|d| d.label.sign()).collect();
            LogisticModel::fit(&xs, &ys)
        })
        .collect();
    let policy = EnsemblePolicy { axis, members };
    let owned: Vec<Demo> = demos.iter().map(|d| (*d).clone()).collect();
    let report = TrainReport { training_accuracy: policy.accuracy(&owned), demos: owned.len() };
    Ok((policy, report))
}

#[derive(Serialize, Deserialize)]
struct DemoRow {
    axis: String,
    label: i8,
    features: String,
}

pub fn write_demos(path: &Path, demos: &[Demo]) -> Result<(), GraspError> {
    let io = |e: csv::Error| GraspError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for d in demos {
        let features: Vec<String> = d.features.iter().map(|f| f.to_string()).collect();
        w.serialize(DemoRow { axis: format!("{:?}", d.axis), label: d.label.sign() as i8, features: features.join(" ") })
            .map_err(io)?;
    }
    w.flush().map_err(|e| GraspError::Io(e.to_string()))
}

pub fn read_demos(path: &Path) -> Result<Vec<Demo>, GraspError> {
    let io = |e: csv::Error| GraspError::Io(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let mut out = Vec::new();
    for row in r.deserialize::<DemoRow>() {
        let row = row.map_err(io)?;
        let axis = match row.axis.as_str() {
            "X" => GraspAxis::X,
            "Y" => GraspAxis::Y,
            other => return Err(GraspError::Parse(format!("unknown axis {other}"))),
        };
        let label = match row.label {
            1 => Direction::Plus,
            -1 => Direction::Minus,
            other => return Err(GraspError::Parse(format!("label {other}"))),
        };
        let features = row
            .features
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|_| GraspError::Parse(format!("feature {f:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(Demo { axis, label, features });
    }
    Ok(out)
}

/// Demonstrations from the simulator: the needle is brought to the handover
/// pose, the receiving jaw is placed 1-5 mm off the grasp point along `axis`
/// (and up to 1 mm along the other axis), and the label is the direction
/// back toward the grasp point.
pub fn generate_demos(
    settings: &WorldSettings,
    radius: f64,
    axis: GraspAxis,
    count: usize,
    seed: u64,
) -> Result<Vec<Demo>, GraspError> {
    let params = GraspParams::default();
    let configs = StartConfig::all();
    let other = match axis {
        GraspAxis::X => GraspAxis::Y,
        GraspAxis::Y => GraspAxis::X,
    };
    let mut demos = Vec::with_capacity(count);
    let mut attempt = 0u64;
    while demos.len() < count {
        if attempt > 4 * count as u64 + 28 {
            return Err(GraspError::InvalidParams("simulator could not stage demonstrations".into()));
        }
        let config = configs[attempt as usize % configs.len()];
        let world_seed = derive_seed(seed, &[attempt]);
        let mut rng = stream(seed, Domain::Demos, attempt);
        attempt += 1;
        let mut world = make_world(config, radius, world_seed, settings, ArmId::Left)
            .map_err(|e| GraspError::InvalidParams(e.to_string()))?;
        let Ok(acq) = acquire_needle(&mut ExactEstimator, &mut world, ArmId::Left, &AcquireParams::default()) else {
            continue;
        };
        let Ok(ready) =
            handover_position(&mut ExactEstimator, &mut world, ArmId::Left, &acq.estimate, &HandoverParams::default())
        else {
            continue;
        };
        let goal = grasp_target(&ready.estimate, radius, &params);
        let magnitude = rng.random_range(0.001..0.005);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let side = rng.random_range(-0.001..0.001);
        let shift = axis.unit() * sign * magnitude + other.unit() * side + Vec3::z() * params.descent;
        let mut action = world.hold_action();
        action.get_mut(ArmId::Right).pose = goal.translated(&shift);
        action.get_mut(ArmId::Right).jaw = Jaw::Open;
        world.step(&action);
        let target = true_grasp_point(&world, &params);
        let offset = (target - world.arm(ArmId::Right).actual_pose.translation()).dot(&axis.unit());
        let crop = crop_for(&world, ArmId::Right, axis)?;
        demos.push(Demo { axis, label: Direction::of(offset), features: crop_features(&crop) });
    }
    Ok(demos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize) -> Vec<Demo> {
        (0..n)
            .map(|i| {
                let plus = i % 2 == 0;
                let mut features = vec![0.0; 6];
                features[if plus { 1 } else { 4 }] = 0.5 + (i % 5) as f64 * 0.1;
                features[2] = (i % 3) as f64 * 0.2;
                Demo { axis: GraspAxis::X, label: if plus { Direction::Plus } else { Direction::Minus }, features }
            })
            .collect()
    }

    #[test]
    fn block_features() {
        let mut crop = SegMask::new(20, 10);
        for r in 0..10 {
            for c in 0..10 {
                crop.set(c, r, true);
            }
        }
        crop.set(15, 5, true);
        assert_eq!(crop_features(&crop), vec![1.0, 0.01]);
    }

    #[test]
    fn separable_demos_fit_perfectly() {
        let (policy, report) = train_axis_policy(&separable(40), GraspAxis::X, 3).unwrap();
        assert_eq!(report.training_accuracy, 1.0);
        assert_eq!(policy.members.len(), 5);
    }

    #[test]
    fn single_class_is_degenerate() {
        let demos: Vec<Demo> =
            separable(20).into_iter().map(|d| Demo { label: Direction::Plus, ..d }).collect();
        assert_eq!(train_axis_policy(&demos, GraspAxis::X, 0).unwrap_err(), GraspError::DegenerateDemos);
    }

    #[test]
    fn training_is_deterministic_and_text_round_trips() {
        let demos = separable(30);
        let (a, _) = train_axis_policy(&demos, GraspAxis::X, 9).unwrap();
        let (b, _) = train_axis_policy(&demos, GraspAxis::X, 9).unwrap();
        assert_eq!(a, b);
        let back = EnsemblePolicy::from_text(&a.to_text()).unwrap();
        assert_eq!(back, a);
        assert!(EnsemblePolicy::from_text("axis Z\n").is_err());
    }

    #[test]
    fn demo_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.csv");
        let demos = separable(8);
        write_demos(&path, &demos).unwrap();
        assert_eq!(read_demos(&path).unwrap(), demos);
    }
}
