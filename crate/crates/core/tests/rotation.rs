mod common;

use std::f64::consts::{FRAC_PI_2, TAU};

use common::{clockwise, Setup};
use proptest::prelude::*;
use scenevl::objectives::{rotate_point, rotate_scene, view_angle};
use scenevl::scene::Scene;

fn max_point_error(a: &Scene, b: &Scene) -> f64 {
    let mut worst: f64 = 0.0;
    for (x, y) in a.instances.iter().zip(&b.instances) {
        for k in 0..3 {
            worst = worst.max((x.obb.center[k] - y.obb.center[k]).abs());
        }
        let d = (x.obb.yaw - y.obb.yaw).rem_euclid(TAU);
        worst = worst.max(d.min(TAU - d));
        for (p, q) in x.points.iter().zip(&y.points) {
            for k in 0..3 {
                worst = worst.max((p[k] - q[k]).abs());
            }
        }
    }
    worst
}

#[test]
fn quarter_turn_sends_x_to_minus_y() {
    let theta = view_angle(2, 4).unwrap();
    assert_eq!(theta, FRAC_PI_2);
    let p = rotate_point([1.0, 0.0, 0.0], theta);
    assert!(p[0].abs() < 1e-15 && (p[1] + 1.0).abs() < 1e-15 && p[2] == 0.0);
}

#[test]
fn view_angles_follow_the_formula() {
    for views in 1..=12 {
        for v in 1..=views {
            assert_eq!(view_angle(v, views).unwrap(), 2.0 * std::f64::consts::PI / views as f64 * (v - 1) as f64);
        }
        assert!(view_angle(0, views).is_err());
        assert!(view_angle(views + 1, views).is_err());
    }
}

#[test]
fn first_view_is_the_scene_itself() {
    let scene = Setup::default().record(3).scene;
    assert_eq!(rotate_scene(&scene, 1, 4).unwrap(), scene);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scene_rotation_matches_matrix(seed in 1u64..1000, views in 1usize..9, pick in 0usize..8) {
        let v = 1 + pick % views;
        let scene = Setup::default().record(seed).scene;
        let rotated = rotate_scene(&scene, v, views).unwrap();
        let theta = 2.0 * std::f64::consts::PI * (v - 1) as f64 / views as f64;
        for (a, b) in scene.instances.iter().zip(&rotated.instances) {
            for (p, q) in a.points.iter().zip(&b.points) {
                let want = clockwise(*p, theta);
                for k in 0..3 {
                    prop_assert!((want[k] - q[k]).abs() <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn full_cycle_is_identity(seed in 1u64..1000, views in 1usize..9) {
        let scene = Setup::default().record(seed).scene;
        let mut s = scene.clone();
        for _ in 0..views {
            s = rotate_scene(&s, 2.min(views), views).unwrap();
        }
        prop_assert!(max_point_error(&scene, &s) <= 1e-9);
    }

    #[test]
    fn rotation_preserves_norms(x in -10.0..10.0f64, y in -10.0..10.0f64, z in -3.0..3.0f64, theta in 0.0..TAU) {
        let q = rotate_point([x, y, z], theta);
        prop_assert!(((q[0] * q[0] + q[1] * q[1]) - (x * x + y * y)).abs() <= 1e-9);
        prop_assert_eq!(q[2], z);
    }
}
