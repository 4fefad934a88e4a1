//! Normal integration and normal estimation against analytic surfaces.

use depthnormal::fixtures::{height_field, sphere_cap, sphere_scene, Sphere};
use depthnormal::geometry::{angular_distance, normals_from_depth, vec3, Intrinsics, Mask};
use depthnormal::integration::{integrate_normals, IntegrationParams, Projection};

fn assert_monotone(energies: &[f64]) {
    for w in energies.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "energy increased: {energies:?}");
    }
}

fn rmse_up_to_offset(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let off = a.iter().zip(b).map(|(x, y)| y - x).sum::<f64>() / n;
    (a.iter().zip(b).map(|(x, y)| (x + off - y).powi(2)).sum::<f64>() / n).sqrt()
}

#[test]
fn tilted_plane_orthographic() {
    let (a, b) = (0.2, -0.1);
    let (_, n) = height_field::<f64>(64, 64, |x, y| a * x + b * y, |_, _| (a, b)).unwrap();
    let out = integrate_normals(&n, &Mask::full(64, 64), None, None, &IntegrationParams::orthographic()).unwrap();
    let mut max_err: f64 = 0.0;
    let mut sq = 0.0;
    for v in 0..64 {
        for u in 0..64 {
            let want = a * u as f64 + b * v as f64;
            let e = out.depth.get(u, v).unwrap() - want;
            sq += e * e;
            max_err = max_err.max(e.abs());
        }
    }
    let rmse = (sq / 4096.0).sqrt();
    assert!(rmse < 1e-6, "rmse {rmse}");
    assert_eq!(out.depth.get(0, 0), Some(0.0));
    assert_monotone(&out.energies);
}

#[test]
fn smooth_height_fields_recovered_up_to_offset() {
    type F = fn(f64, f64) -> f64;
    type G = fn(f64, f64) -> (f64, f64);
    let cases: [(F, G); 3] = [
        (|x, y| 0.002 * (x * x - y * y), |x, y| (0.004 * x, -0.004 * y)),
        (
            |x, y| (x / 20.0).sin() * (y / 25.0).cos(),
            |x, y| ((x / 20.0).cos() * (y / 25.0).cos() / 20.0, -(x / 20.0).sin() * (y / 25.0).sin() / 25.0),
        ),
        (
            |x, y| (-((x - 32.0).powi(2) + (y - 30.0).powi(2)) / 1200.0).exp(),
            |x, y| {
                let g = (-((x - 32.0).powi(2) + (y - 30.0).powi(2)) / 1200.0).exp();
                (-g * (x - 32.0) / 600.0, -g * (y - 30.0) / 600.0)
            },
        ),
    ];
    for (z, grad) in cases {
        let (truth, n) = height_field::<f64>(64, 64, z, grad).unwrap();
        let out = integrate_normals(&n, &Mask::full(64, 64), None, None, &IntegrationParams::orthographic()).unwrap();
        let got: Vec<f64> = out.depth.valid_values().collect();
        let want: Vec<f64> = truth.valid_values().collect();
        let rmse = rmse_up_to_offset(&got, &want);
        println!("smooth field rmse {rmse:e}, energies {:?}", out.energies);
        assert!(rmse < 1e-4, "rmse {rmse}");
        assert_monotone(&out.energies);
    }
}

#[test]
fn hemisphere_perspective_up_to_scale() {
    let scene = sphere_cap::<f64>(128).unwrap();
    let p = IntegrationParams {
        model: Projection::Perspective,
        depth_prior_weight: 0.0,
        ..Default::default()
    };
    let out = integrate_normals(&scene.normals, scene.normals.mask(), None, Some(&scene.intrinsics), &p).unwrap();
    let pairs: Vec<(f64, f64)> = (0..128 * 128)
        .filter_map(|i| {
            let (u, v) = (i % 128, i / 128);
            Some((out.depth.get(u, v)?, scene.depth.get(u, v)?))
        })
        .collect();
    let s = pairs.iter().map(|(r, t)| r * t).sum::<f64>() / pairs.iter().map(|(r, _)| r * r).sum::<f64>();
    let n = pairs.len() as f64;
    let rmse = (pairs.iter().map(|(r, t)| (s * r - t).powi(2)).sum::<f64>() / n).sqrt();
    let mean = pairs.iter().map(|(_, t)| t).sum::<f64>() / n;
    println!("hemisphere rel rmse {:e}, energies {:?}, cg {:?}", rmse / mean, out.energies, out.cg_iterations);
    assert!(rmse / mean < 0.01);
    assert_monotone(&out.energies);
}

#[test]
fn sphere_normals_from_depth_median_error() {
    let scene = sphere_cap::<f64>(128).unwrap();
    let est = normals_from_depth(&scene.depth, &scene.intrinsics, 5).unwrap();
    let mut errs = Vec::new();
    for v in 0..128 {
        for u in 0..128 {
            if let (Some(a), Some(b)) = (est.get(u, v), scene.normals.get(u, v)) {
                errs.push(angular_distance(&a, &b).unwrap());
            }
        }
    }
    errs.sort_by(f64::total_cmp);
    let median = errs[errs.len() / 2];
    assert!(errs.len() > 5000);
    assert!(median < 1.0, "median {median}");
    for v in 0..128 {
        for u in 0..128 {
            if let Some(n) = est.get(u, v) {
                assert!((vec3::norm(&n) - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn off_axis_sphere_perspective() {
    let k: Intrinsics<f64> = Intrinsics::new(90.0, 110.0, 40.0, 28.0, 96, 64).unwrap();
    let sphere = Sphere {
        center: [0.3, -0.2, 4.0],
        radius: 1.2,
    };
    let scene = sphere_scene::<f64>(k, sphere, 65.0).unwrap();
    let p = IntegrationParams {
        depth_prior_weight: 0.0,
        ..Default::default()
    };
    let out = integrate_normals(&scene.normals, scene.normals.mask(), Some(&scene.depth), Some(&k), &p).unwrap();
    let mut worst: f64 = 0.0;
    for v in 0..64 {
        for u in 0..96 {
            if let (Some(a), Some(b)) = (out.depth.get(u, v), scene.depth.get(u, v)) {
                worst = worst.max((a - b).abs() / b);
            }
        }
    }
    assert!(worst < 0.01, "worst relative error {worst}");
    assert_monotone(&out.energies);
}
