//! Synthetic segmentation masks: the needle arc drawn as a thick polyline,
//! minus the holding gripper's occlusion disk, plus seeded pixel noise.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::{ObservationBundle, SimWorld};
use crate::geometry::{CameraModel, Vec2};
use crate::perception::SegMask;
use crate::rng::{stream, Domain};

const SAMPLE_SPACING: f64 = 1e-3;
const HALF_THICKNESS_PX: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CameraSlot {
    Left = 0,
    Right = 1,
    Overhead = 2,
}

impl CameraSlot {
    fn camera(self, world: &SimWorld) -> &CameraModel {
        match self {
            CameraSlot::Left => &world.rig.left,
            CameraSlot::Right => &world.rig.right,
            CameraSlot::Overhead => &world.overhead,
        }
    }
}

fn segment_distance(p: &Vec2, a: &Vec2, b: &Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

/// Pixel index range `[lo, hi)` whose centers may fall within `[min, max]`.
fn span(min: f64, max: f64, limit: usize) -> (usize, usize) {
    let lo = (min - 0.5).floor().max(0.0) as usize;
    let hi = ((max - 0.5).ceil() + 1.0).clamp(0.0, limit as f64) as usize;
    (lo.min(limit), hi)
}

fn draw_capsule(mask: &mut SegMask, a: &Vec2, b: &Vec2, radius: f64) {
    let (c0, c1) = span(a.x.min(b.x) - radius, a.x.max(b.x) + radius, mask.width());
    let (r0, r1) = span(a.y.min(b.y) - radius, a.y.max(b.y) + radius, mask.height());
    for row in r0..r1 {
        for col in c0..c1 {
            let p = Vec2::new(col as f64 + 0.5, row as f64 + 0.5);
            if segment_distance(&p, a, b) <= radius {
                mask.set(col, row, true);
            }
        }
    }
}

fn paint_disk(mask: &mut SegMask, center: &Vec2, radius: f64, on: bool) {
    let (c0, c1) = span(center.x - radius, center.x + radius, mask.width());
    let (r0, r1) = span(center.y - radius, center.y + radius, mask.height());
    for row in r0..r1 {
        for col in c0..c1 {
            let p = Vec2::new(col as f64 + 0.5, row as f64 + 0.5);
            if (p - center).norm() <= radius {
                mask.set(col, row, on);
            }
        }
    }
}

/// Mask seen by one camera. Deterministic in the world seed and clock.
pub fn render_camera(world: &SimWorld, slot: CameraSlot) -> SegMask {
    let cam = slot.camera(world);
    let mut mask = SegMask::new(cam.width, cam.height);
    let key = world.clock * 3 + slot as u64;
    if !world.dropped {
        let projected: Vec<Option<Vec2>> =
            world.needle.samples(SAMPLE_SPACING).iter().map(|(_, p)| cam.project(p).ok()).collect();
        for pair in projected.windows(2) {
            if let [Some(a), Some(b)] = pair {
                draw_capsule(&mut mask, a, b, HALF_THICKNESS_PX);
            }
        }
        if let Some(holder) = world.needle.attached_arm {
            let grasp = world.arms[holder.index()].actual_pose.translation();
            let depth = cam.to_camera(&grasp).z;
            if let Ok(px) = cam.project(&grasp) {
                let r = cam.fx * world.settings.occlusion_radius / depth;
                paint_disk(&mut mask, &px, r, false);
            }
        }
        let dropout = world.settings.render_noise.dropout;
        if dropout > 0.0 {
            if let Some((c0, r0, c1, r1)) = mask.bounding_box() {
                let mut rng = stream(world.seed, Domain::RenderDropout, key);
                for row in r0..=r1 {
                    for col in c0..=c1 {
                        if mask.get(col, row) && rng.random::<f64>() < dropout {
                            mask.set(col, row, false);
                        }
                    }
                }
            }
        }
    }
    let noise = &world.settings.render_noise;
    if noise.blob_rate > 0.0 {
        let mut rng = stream(world.seed, Domain::RenderBlobs, key);
        let count = Poisson::new(noise.blob_rate).map(|d| d.sample(&mut rng) as usize).unwrap_or(0);
        for _ in 0..count {
            let c = Vec2::new(rng.random::<f64>() * cam.width as f64, rng.random::<f64>() * cam.height as f64);
            paint_disk(&mut mask, &c, noise.blob_radius_px, true);
        }
    }
    mask
}

pub fn render_stereo(world: &SimWorld) -> (SegMask, SegMask) {
    (render_camera(world, CameraSlot::Left), render_camera(world, CameraSlot::Right))
}

pub fn render_masks(world: &SimWorld) -> ObservationBundle {
    let (left, right) = render_stereo(world);
    ObservationBundle { left, right, overhead: render_camera(world, CameraSlot::Overhead) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angle_between;
    use crate::kinematics::ArmId;
    use crate::perception::{estimate_state, PerceptionError, RansacParams};
    use crate::sim::{make_world, Face, Grip, RotationBin, StartConfig, WorldSettings};

    fn world(bin: u8, settings: &WorldSettings) -> SimWorld {
        let config = StartConfig { face: Face::Towards, grip: Grip::Tip, rotation_bin: RotationBin::new(bin).unwrap() };
        make_world(config, 0.0125, 5, settings, ArmId::Left).unwrap()
    }

    #[test]
    fn capsule_covers_expected_band() {
        let mut m = SegMask::new(20, 10);
        draw_capsule(&mut m, &Vec2::new(5.0, 5.0), &Vec2::new(15.0, 5.0), 2.0);
        // Rows with centers 3.5..=6.5 are within 2px of the line y = 5.
        for row in 0..10 {
            assert_eq!(m.get(10, row), (3..=6).contains(&row), "row {row}");
        }
    }

    #[test]
    fn visible_needle_is_estimated() {
        let w = world(0, &WorldSettings::zero_noise());
        let (l, r) = render_stereo(&w);
        let grip = w.arm(ArmId::Left).actual_pose.translation();
        let est = estimate_state((&l, &r), &w.rig, &grip, 0.0125, &RansacParams::default()).unwrap();
        let truth = w.needle.circle();
        assert!(est.inlier_count >= 20);
        assert!((est.circle.center - truth.center).norm() < 1e-3);
        let n = angle_between(&est.circle.normal, &truth.normal);
        assert!(n.min(std::f64::consts::PI - n) < 2f64.to_radians());
    }

    #[test]
    fn edge_on_needle_is_thin_and_insufficient() {
        let w = world(3, &WorldSettings::zero_noise());
        let (l, r) = render_stereo(&w);
        let (c0, r0, c1, r1) = l.bounding_box().unwrap();
        // The plane contains the optical center direction, so the arc collapses to a line.
        let along_rows = (c1 - c0).max(r1 - r0);
        let across = (c1 - c0).min(r1 - r0);
        assert!(across < 6 + 1, "{across} x {along_rows}");
        let grip = w.arm(ArmId::Left).actual_pose.translation();
        let res = estimate_state((&l, &r), &w.rig, &grip, 0.0125, &RansacParams::default());
        assert!(matches!(res, Err(PerceptionError::InsufficientObservation { .. })), "{res:?}");
    }

    #[test]
    fn full_dropout_empties_masks() {
        let mut s = WorldSettings::zero_noise();
        s.render_noise.dropout = 1.0;
        let obs = world(0, &s).render();
        assert!(obs.left.is_empty() && obs.right.is_empty() && obs.overhead.is_empty());
    }

    #[test]
    fn rendering_is_deterministic_per_clock() {
        let mut w = world(1, &WorldSettings::calibrated());
        let a = w.render();
        assert_eq!(a, w.render());
        w.step(&w.hold_action());
        assert_ne!(a.left, w.render().left);
    }
}
