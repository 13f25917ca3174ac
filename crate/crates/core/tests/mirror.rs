//! Mirroring a scene across the x = 0 plane and swapping the arms must give
//! mirrored outcomes for the purely geometric stages.

use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;

use handover_core::geometry::{RigidTransform, Vec3};
use handover_core::kinematics::{ik_solve, ArmId};
use handover_core::sim::{adjudicate_grasp, make_world, Face, Grip, RotationBin, StartConfig, WorldSettings};

fn rotation(axis: [f64; 3], angle: f64) -> Rotation3<f64> {
    let a = Vec3::new(axis[0], axis[1], axis[2]);
    if a.norm() < 1e-3 {
        return Rotation3::identity();
    }
    Rotation3::from_axis_angle(&Unit::new_normalize(a), angle)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grasp_adjudication_mirrors(
        bin in 0u8..7,
        away in any::<bool>(),
        along in 0.2f64..2.9,
        offset in prop::array::uniform3(-0.006f64..0.006),
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -0.5f64..0.5,
    ) {
        let face = if away { Face::Away } else { Face::Towards };
        let config = StartConfig { face, grip: Grip::Tip, rotation_bin: RotationBin::new(bin).unwrap() };
        let mut world = make_world(config, 0.0125, 1, &WorldSettings::zero_noise(), ArmId::Left).unwrap();
        let point = world.needle.point_at(along);
        let jaw = RigidTransform::new(rotation(axis, angle), point + Vec3::new(offset[0], offset[1], offset[2]));
        world.arms[ArmId::Right.index()].actual_pose = jaw;

        let mut mirror = world.clone();
        mirror.needle.pose = world.needle.pose.mirrored_x();
        mirror.arms[ArmId::Left.index()].actual_pose = jaw.mirrored_x();

        let a = adjudicate_grasp(&mut world, ArmId::Right);
        let b = adjudicate_grasp(&mut mirror, ArmId::Left);
        prop_assert_eq!(a.success, b.success);
        prop_assert!((a.residual - b.residual).norm() < 1e-9, "{:?} vs {:?}", a.residual, b.residual);
    }

    #[test]
    fn ik_residual_mirrors(
        p in prop::array::uniform3(-0.03f64..0.03),
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -3.0f64..3.0,
    ) {
        let settings = WorldSettings::calibrated();
        let left = settings.arm_model(ArmId::Left).unwrap();
        let right = settings.arm_model(ArmId::Right).unwrap();
        let target = RigidTransform::new(rotation(axis, angle), settings.workspace_center + Vec3::new(p[0], p[1], p[2]));
        let mirrored = target.mirrored_x();
        let t = target.translation();
        let mt = mirrored.translation();
        let exact = left.min_rotation_error_at(&t, target.rotation());
        let exact_mirror = right.min_rotation_error_at(&mt, mirrored.rotation());
        prop_assert!((exact - exact_mirror).abs() < 1e-12);

        let tol = Vec3::new(0.002, 0.002, 0.002);
        match (ik_solve(&left, &target, &tol), ik_solve(&right, &mirrored, &tol)) {
            (Ok(a), Ok(b)) => prop_assert!((a.residual - b.residual).abs() < 1e-4, "{} vs {}", a.residual, b.residual),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "asymmetric outcome: {:?} vs {:?}", a, b),
        }
    }
}
