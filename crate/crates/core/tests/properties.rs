use berrypick_core::geometry::{
    transform_cloud, transform_point, Aabb, ColoredPoint, ColoredPointCloud, Frame, RigidTransform, Rgb, Vec3,
};
use berrypick_core::localization::{connected_components, crop_window, threshold_red, LocalizationParams};
use berrypick_core::motion::{robot_move, RobotState};
use berrypick_core::scene::generate_scene;
use berrypick_core::tool::{trap_stem, ToolGeometry, TrapOutcome};
use nalgebra::Rotation3;
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (vec3(1.0), 0.0..std::f64::consts::PI, vec3(2.0)).prop_filter_map("degenerate axis", |(axis, angle, t)| {
        let axis = nalgebra::Unit::try_new(axis, 1e-6)?;
        let r = Rotation3::from_axis_angle(&axis, angle);
        RigidTransform::new(*r.matrix(), t, Frame::Cam1, Frame::Base).ok()
    })
}

fn cloud(max: usize) -> impl Strategy<Value = ColoredPointCloud> {
    prop::collection::vec((vec3(1.0), any::<[u8; 3]>()), 0..max).prop_map(|pts| {
        let points = pts
            .into_iter()
            .map(|(p, [r, g, b])| ColoredPoint::new(p + Vec3::new(0.4, 0.0, 0.4), Rgb { r, g, b }))
            .collect();
        ColoredPointCloud::from_points(Frame::Base, points).unwrap()
    })
}

proptest! {
    #[test]
    fn transforms_preserve_distances(t in transform(), a in vec3(1.0), b in vec3(1.0)) {
        let d0 = (a - b).norm();
        let d1 = (transform_point(&t, &a) - transform_point(&t, &b)).norm();
        prop_assert!((d0 - d1).abs() < 1e-9);
    }

    #[test]
    fn inverse_round_trip(t in transform(), p in vec3(3.0)) {
        let back = transform_point(&t.inverse(), &transform_point(&t, &p));
        prop_assert!((back - p).norm() < 1e-9);
        let id = t.inverse().compose(&t).unwrap();
        prop_assert!((transform_point(&id, &p) - p).norm() < 1e-9);
    }

    #[test]
    fn cloud_round_trip(t in transform(), c in cloud(50)) {
        let cam = ColoredPointCloud { frame: Frame::Cam1, points: c.points.clone() };
        let back = transform_cloud(&t.inverse(), &transform_cloud(&t, &cam).unwrap()).unwrap();
        prop_assert_eq!(back.frame, Frame::Cam1);
        for (a, b) in back.points.iter().zip(&cam.points) {
            prop_assert!((a.position - b.position).norm() < 1e-9);
            prop_assert_eq!(a.color, b.color);
        }
    }

    #[test]
    fn filters_are_idempotent_and_commute(c in cloud(300)) {
        let p = LocalizationParams::default();
        let cropped = crop_window(&c, &p).unwrap();
        prop_assert_eq!(&crop_window(&cropped, &p).unwrap(), &cropped);
        let red = threshold_red(&c, &p);
        prop_assert_eq!(&threshold_red(&red, &p), &red);
        prop_assert_eq!(threshold_red(&cropped, &p), crop_window(&red, &p).unwrap());
    }

    #[test]
    fn clustering_ignores_input_order(
        pts in prop::collection::vec(vec3(0.1), 1..300),
        tol in 0.005f64..0.03,
        seed in any::<u64>(),
    ) {
        let canonical = |points: &[Vec3], comps: Vec<Vec<usize>>| {
            let mut sets: Vec<Vec<[u64; 3]>> = comps
                .into_iter()
                .map(|c| {
                    let mut s: Vec<[u64; 3]> = c.iter().map(|&i| points[i].map(f64::to_bits).into()).collect();
                    s.sort();
                    s
                })
                .collect();
            sets.sort();
            sets
        };
        let mut shuffled = pts.clone();
        let mut rng = berrypick_core::rng::stream(seed, 0);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        prop_assert_eq!(
            canonical(&pts, connected_components(&pts, tol)),
            canonical(&shuffled, connected_components(&shuffled, tol))
        );
    }

    #[test]
    fn doubling_velocity_halves_duration(target in vec3(0.2), scale in 0.01f64..0.5) {
        let ws = Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0)).unwrap();
        let slow = RobotState::new(Vec3::zeros(), scale, 1.0, ws).unwrap();
        let fast = RobotState::new(Vec3::zeros(), 2.0 * scale, 1.0, ws).unwrap();
        let (_, a) = robot_move(&slow, target, 0.0).unwrap();
        let (_, b) = robot_move(&fast, target, 0.0).unwrap();
        prop_assert_eq!(b.duration, a.duration / 2.0);
    }

    #[test]
    fn trap_is_a_step_function(err_mm in -30i32..30, seed in 0u64..20) {
        let fruit = generate_scene(seed, 1, 1.0, 0.0).unwrap().strawberries[0].clone();
        let err = f64::from(err_mm) / 1000.0;
        let z = fruit.stem_bottom().z + 0.015;
        let stem = fruit.stem_point_at(z).unwrap();
        let tool = Vec3::new(stem.x, stem.y - err, z);
        let r = trap_stem(&tool, &fruit, &ToolGeometry::default()).unwrap();
        let expected = if err_mm.abs() <= 15 { TrapOutcome::Trapped } else { TrapOutcome::Missed };
        prop_assert_eq!(r.outcome, expected);
    }
}
