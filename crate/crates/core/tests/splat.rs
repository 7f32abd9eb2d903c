mod common;

use hypergaussians::hypergauss::Gaussian3D;
use hypergaussians::rng;
use hypergaussians::splat::{
    density_2d, project, rasterize, render_forward, Camera, Image, RenderOptions, COV2_DILATION,
};
use proptest::prelude::*;

/// Identity view: image x along world x, image y along world y, looking down +z.
fn axis_camera(size: usize, focal: f64) -> Camera {
    let mut view = [[0.0; 4]; 4];
    for (i, row) in view.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    Camera { view, fx: focal, fy: focal, cx: size as f64 / 2.0, cy: size as f64 / 2.0, width: size, height: size, near: 0.01 }
}

fn iso(mu: [f64; 3], var: f64, opacity: f64, color: [f64; 3]) -> Gaussian3D {
    Gaussian3D { mu, cov: [[var, 0.0, 0.0], [0.0, var, 0.0], [0.0, 0.0, var]], opacity, color }
}

fn random_scene(seed: u64, count: usize) -> Vec<Gaussian3D> {
    let mut r = rng::stream(seed, "scene");
    (0..count)
        .map(|_| {
            let n: Vec<f64> = rng::normals(&mut r, 14, 1.0);
            let q = [1.0 + 0.3 * n[3], 0.3 * n[4], 0.3 * n[5], 0.3 * n[6]];
            let s = [-2.0 + 0.4 * n[7], -2.0 + 0.4 * n[8], -2.0 + 0.4 * n[9]];
            Gaussian3D {
                mu: [0.5 * n[0], 0.5 * n[1], 3.0 + 0.5 * n[2]],
                cov: hypergaussians::splat_covariance(q, s).unwrap(),
                opacity: 1.0 / (1.0 + (-n[10]).exp()),
                color: [n[11].abs().min(1.0), n[12].abs().min(1.0), n[13].abs().min(1.0)],
            }
        })
        .collect()
}

#[test]
fn on_axis_projects_to_principal_point() {
    let cam = axis_camera(64, 80.0);
    let p = project(&iso([0.0, 0.0, 4.0], 0.01, 0.5, [1.0; 3]), &cam).unwrap();
    assert_eq!(p.mu2, [32.0, 32.0]);
    assert_eq!(p.depth, 4.0);
    assert_eq!(p.cov2[0][1], p.cov2[1][0]);
}

#[test]
fn lateral_shift_follows_pinhole() {
    let cam = axis_camera(64, 80.0);
    for (dx, d) in [(0.1, 4.0), (-0.25, 2.5), (0.05, 10.0)] {
        let p0 = project(&iso([0.0, 0.0, d], 0.01, 0.5, [1.0; 3]), &cam).unwrap();
        let p1 = project(&iso([dx, 0.0, d], 0.01, 0.5, [1.0; 3]), &cam).unwrap();
        assert!((p1.mu2[0] - p0.mu2[0] - cam.fx * dx / d).abs() < 1e-12);
        assert_eq!(p1.mu2[1], p0.mu2[1]);
    }
}

#[test]
fn culling() {
    let cam = axis_camera(64, 80.0);
    assert!(project(&iso([0.0, 0.0, -1.0], 0.01, 0.5, [1.0; 3]), &cam).is_none());
    assert!(project(&iso([0.0, 0.0, 0.005], 0.01, 0.5, [1.0; 3]), &cam).is_none());
    assert!(project(&iso([40.0, 0.0, 2.0], 0.001, 0.5, [1.0; 3]), &cam).is_none());
}

#[test]
fn tiny_gaussian_keeps_the_dilation_floor() {
    let cam = axis_camera(64, 80.0);
    let p = project(&iso([0.0, 0.0, 4.0], 1e-12, 0.5, [1.0; 3]), &cam).unwrap();
    assert!((p.cov2[0][0] - COV2_DILATION).abs() < 1e-6);
    assert!((p.cov2[1][1] - COV2_DILATION).abs() < 1e-6);
}

#[test]
fn empty_scene_is_black() {
    let img = rasterize(&[], &axis_camera(20, 30.0));
    assert!(img.data.iter().all(|v| *v == 0.0));
    assert_eq!(img.dims(), (20, 20));
}

#[test]
fn single_primitive_center_pixel() {
    let cam = axis_camera(64, 80.0);
    let img = rasterize(&[iso([0.0, 0.0, 3.0], 0.01, 0.5, [1.0, 0.0, 0.0])], &cam);
    assert_eq!(img.pixel(32, 32), [0.5, 0.0, 0.0]);
}

#[test]
fn two_coaxial_white_primitives() {
    let cam = axis_camera(64, 80.0);
    let scene = [iso([0.0, 0.0, 3.0], 0.01, 0.5, [1.0; 3]), iso([0.0, 0.0, 5.0], 0.01, 0.5, [1.0; 3])];
    for v in rasterize(&scene, &cam).pixel(32, 32) {
        assert!((v - 0.75).abs() < 1e-9);
    }
    // input order does not matter, depth does
    let swapped = [scene[1], scene[0]];
    assert_eq!(rasterize(&scene, &cam), rasterize(&swapped, &cam));
}

#[test]
fn density_closed_forms() {
    let eye = [[1.0, 0.0], [0.0, 1.0]];
    assert_eq!(density_2d([3.0, 4.0], &eye, [3.0, 4.0]).unwrap(), 1.0);
    assert!((density_2d([0.0, 0.0], &eye, [1.0, 0.0]).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
    let cov = [[2.0, 0.7], [0.7, 0.9]];
    let inv = common::inverse(&vec![cov[0].to_vec(), cov[1].to_vec()]);
    let d = [0.8, -1.3];
    let q: f64 = (0..2).map(|i| (0..2).map(|j| d[i] * inv[i][j] * d[j]).sum::<f64>()).sum();
    let got = density_2d([0.0, 0.0], &cov, d).unwrap();
    assert!((got - (-0.5 * q).exp()).abs() < 1e-14);
    assert!(density_2d([0.0, 0.0], &[[1.0, 2.0], [2.0, 1.0]], [0.0, 0.0]).is_err());
}

#[test]
fn golden_ppm_is_byte_identical_across_runs() {
    let cam = Camera::look_at([0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0], 80.0, 64, 64);
    let scene: Vec<Gaussian3D> =
        random_scene(21, 60).into_iter().map(|mut g| { g.mu[2] -= 3.0; g }).collect();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ppm"), dir.path().join("b.ppm"));
    rasterize(&scene, &cam).write_ppm(&a).unwrap();
    rasterize(&scene, &cam).write_ppm(&b).unwrap();
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(ba.starts_with(b"P6\n64 64\n255\n"));
    assert_eq!(ba.len(), 13 + 64 * 64 * 3);
    assert_eq!(ba, bb);
    assert!(ba[13..].iter().any(|v| *v > 0));
    let back = Image::read_ppm(&a).unwrap();
    assert_eq!(back.to_ppm_bytes(), ba);
}

#[test]
fn dark_occluder_lowers_luminance() {
    // Monotonicity holds only for primitives added behind the scene.
    let cam = axis_camera(32, 40.0);
    let back = [iso([0.0, 0.0, 5.0], 0.05, 0.9, [1.0; 3])];
    let front = [back[0], iso([0.0, 0.0, 2.0], 0.05, 0.9, [0.0; 3])];
    assert!(rasterize(&front, &cam).pixel(16, 16)[0] < rasterize(&back, &cam).pixel(16, 16)[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transmittance_is_conserved(seed in any::<u64>(), count in 1usize..80, exact in any::<bool>()) {
        let cam = axis_camera(32, 40.0);
        let opts = if exact { RenderOptions::exact() } else { RenderOptions::default() };
        let (_, tape) = render_forward(&random_scene(seed, count), &cam, &opts);
        for y in 0..32 {
            for x in 0..32 {
                let total = tape.weight_sum(x, y) + tape.final_transmittance(x, y);
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rendering_is_deterministic(seed in any::<u64>(), count in 0usize..60) {
        let cam = axis_camera(24, 30.0);
        let scene = random_scene(seed, count);
        prop_assert_eq!(rasterize(&scene, &cam), rasterize(&scene, &cam));
    }

    #[test]
    fn appending_behind_never_darkens(seed in any::<u64>(), count in 0usize..40, c in prop::array::uniform3(0.0..1.0f64)) {
        let cam = axis_camera(24, 30.0);
        let mut scene = random_scene(seed, count);
        let opts = RenderOptions::default();
        let (_, before) = render_forward(&scene, &cam, &opts);
        let deepest = scene.iter().map(|g| g.mu[2]).fold(0.0, f64::max);
        scene.push(iso([0.0, 0.0, deepest + 1.0], 0.2, 0.8, c));
        let (_, after) = render_forward(&scene, &cam, &opts);
        for y in 0..24 {
            for x in 0..24 {
                let lum = |p: [f64; 3]| p.iter().sum::<f64>();
                prop_assert!(lum(after.raw_pixel(x, y)) >= lum(before.raw_pixel(x, y)));
            }
        }
    }
}
