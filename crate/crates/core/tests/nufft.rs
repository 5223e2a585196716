mod common;

use std::f64::consts::PI;

use approx::assert_relative_eq;
use common::{dtft, random_complex, random_coords};
use ktraj::nufft::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ComplexImage {
    ComplexImage::from_data(h, w, random_complex(rng, h * w)).unwrap()
}

fn delta(h: usize, w: usize) -> ComplexImage {
    let mut img = ComplexImage::zeros(h, w);
    img.data[(h / 2) * w + w / 2] = Complex64::new(1.0, 0.0);
    img
}

#[test]
fn direct_matches_independent_dtft() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random_image(&mut rng, 9, 6);
    let coords = random_coords(&mut rng, 12);
    let out = forward_direct(&img, &coords, 3).unwrap();
    for (k, v) in coords.chunks(2).zip(&out.values) {
        let o = dtft(&img.data, 9, 6, k[0], k[1]);
        assert!((v - o).norm() <= 1e-12 * o.norm().max(1.0));
    }
}

#[test]
fn centered_delta_has_unit_flat_spectrum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let coords = random_coords(&mut rng, 64);
    let out = forward_direct(&delta(16, 16), &coords, 4).unwrap();
    for v in &out.values {
        assert_relative_eq!(v.re, 1.0, epsilon = 1e-14);
        assert!(v.im.abs() <= 1e-14);
    }
}

#[test]
fn dc_sample_is_pixel_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = random_image(&mut rng, 8, 8);
    let out = forward_direct(&img, &[0.0, 0.0], 1).unwrap();
    let sum: Complex64 = img.data.iter().sum();
    assert!((out.values[0] - sum).norm() <= 1e-13);
}

#[test]
fn constant_image_matches_dirichlet_sum() {
    let img = ComplexImage::from_real(4, 4, &[1.0; 16]).unwrap();
    let out = forward_direct(&img, &[0.25, 0.0], 1).unwrap();
    // Row sum over u = -2..=1 of exp(-i pi u / 2) is -1 + i + 1 - i.
    assert!(out.values[0].norm() <= 1e-13);
    let out = forward_direct(&img, &[0.125, 0.0], 1).unwrap();
    let z = Complex64::from_polar(1.0, -2.0 * PI * 0.125);
    let geometric = z.powi(-2) * (Complex64::new(1.0, 0.0) - z.powi(4)) / (Complex64::new(1.0, 0.0) - z);
    assert!((out.values[0] - geometric * 4.0).norm() <= 1e-12);
}

#[test]
fn fast_forward_matches_direct() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = random_image(&mut rng, 32, 32);
    let coords = random_coords(&mut rng, 4 * 64);
    let exact = forward_direct(&img, &coords, 4).unwrap();
    let plan = NufftPlan::new(32, 32, GriddingKernel::default()).unwrap();
    let fast = plan.forward(&img, &coords, 4).unwrap();
    let err = rel_l2(&fast.values, &exact.values);
    assert!(err <= 1e-5, "fast forward error {err}");
}

#[test]
fn wider_kernel_is_more_accurate() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = random_image(&mut rng, 32, 32);
    let coords = random_coords(&mut rng, 4 * 64);
    let exact = forward_direct(&img, &coords, 4).unwrap();
    let err = |w| {
        let plan = NufftPlan::new(32, 32, GriddingKernel::new(w, 2.0).unwrap()).unwrap();
        rel_l2(&plan.forward(&img, &coords, 4).unwrap().values, &exact.values)
    };
    let errs: Vec<f64> = (4..=8).map(err).collect();
    for pair in errs.windows(2) {
        assert!(pair[1] < pair[0], "kernel errors not decreasing: {errs:?}");
    }
}

#[test]
fn fast_delta_is_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let coords = random_coords(&mut rng, 256);
    let plan = NufftPlan::new(32, 32, GriddingKernel::default()).unwrap();
    let out = plan.forward(&delta(32, 32), &coords, 4).unwrap();
    for v in &out.values {
        assert!((v.norm() - 1.0).abs() <= 1e-5);
    }
}

#[test]
fn fast_agrees_with_direct_up_to_64() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (h, w) in [(8, 8), (17, 12), (64, 64), (48, 64)] {
        let img = random_image(&mut rng, h, w);
        let mut coords = random_coords(&mut rng, 128);
        coords[0] = 0.5;
        coords[3] = -0.5;
        let plan = NufftPlan::new(h, w, GriddingKernel::default()).unwrap();
        let exact = forward_direct(&img, &coords, 2).unwrap();
        let err = rel_l2(&plan.forward(&img, &coords, 2).unwrap().values, &exact.values);
        assert!(err <= 1e-5, "{h}x{w}: {err}");
        let y = KSamples::from_values(2, random_complex(&mut rng, 128)).unwrap();
        let exact = adjoint_direct(&y, &coords, h, w).unwrap();
        let err = rel_l2(&plan.adjoint(&y, &coords).unwrap().data, &exact.data);
        assert!(err <= 1e-5, "{h}x{w} adjoint: {err}");
    }
}

#[test]
fn direct_adjoint_dot_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let (h, w) = (rng.gen_range(2..12), rng.gen_range(2..12));
        let n_shots = rng.gen_range(1..4);
        let m = rng.gen_range(1..10);
        let coords = random_coords(&mut rng, n_shots * m);
        let x = random_image(&mut rng, h, w);
        let y = KSamples::from_values(n_shots, random_complex(&mut rng, n_shots * m)).unwrap();
        let fx = forward_direct(&x, &coords, n_shots).unwrap();
        let aty = adjoint_direct(&y, &coords, h, w).unwrap();
        let lhs = inner(&y.values, &fx.values);
        let rhs = inner(&aty.data, &x.data);
        let scale = (x.norm_sqr() * y.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt();
        assert!((lhs - rhs).norm() / scale <= 1e-12);
    }
}

#[test]
fn adjoint_of_dc_sample_is_constant() {
    let y = KSamples::from_values(1, vec![Complex64::new(1.0, 0.0)]).unwrap();
    let img = adjoint_direct(&y, &[0.0, 0.0], 5, 4).unwrap();
    assert!(img.data.iter().all(|z| (z - 1.0).norm() <= 1e-15));
    let plan = NufftPlan::new(5, 4, GriddingKernel::default()).unwrap();
    let img = plan.adjoint(&y, &[0.0, 0.0]).unwrap();
    assert!(img.data.iter().all(|z| (z - 1.0).norm() <= 1e-5));
}

#[test]
fn fast_adjoint_matches_direct_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let coords = random_coords(&mut rng, 256);
    let y = KSamples::from_values(4, random_complex(&mut rng, 256)).unwrap();
    let plan = NufftPlan::new(32, 32, GriddingKernel::default()).unwrap();
    let exact = adjoint_direct(&y, &coords, 32, 32).unwrap();
    let err = rel_l2(&plan.adjoint(&y, &coords).unwrap().data, &exact.data);
    assert!(err <= 1e-5, "fast adjoint error {err}");
}

#[test]
fn linearity_of_direct_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let coords = random_coords(&mut rng, 20);
    let x = random_image(&mut rng, 7, 9);
    let z = random_image(&mut rng, 7, 9);
    let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5));
    let comb = ComplexImage::from_data(7, 9, x.data.iter().zip(&z.data).map(|(p, q)| a * p + b * q).collect()).unwrap();
    let lhs = forward_direct(&comb, &coords, 2).unwrap();
    let fx = forward_direct(&x, &coords, 2).unwrap();
    let fz = forward_direct(&z, &coords, 2).unwrap();
    for ((l, p), q) in lhs.values.iter().zip(&fx.values).zip(&fz.values) {
        assert!((l - (a * p + b * q)).norm() <= 1e-12);
    }
}

#[test]
fn circular_shift_at_grid_frequencies() {
    // On the DFT lattice k = (p/H, q/W) a circular shift of the image is an
    // exact phase modulation.
    let (h, w) = (8, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let img = random_image(&mut rng, h, w);
    let coords: Vec<f64> = (0..10)
        .flat_map(|_| {
            let p = rng.gen_range(-4..4) as f64 / h as f64;
            let q = rng.gen_range(-3..3) as f64 / w as f64;
            [p, q]
        })
        .collect();
    let (sa, sb) = (3usize, 2usize);
    let mut shifted = ComplexImage::zeros(h, w);
    for x in 0..h {
        for y in 0..w {
            shifted.data[((x + sa) % h) * w + (y + sb) % w] = img.get(x, y);
        }
    }
    let base = forward_direct(&img, &coords, 1).unwrap();
    let moved = forward_direct(&shifted, &coords, 1).unwrap();
    for ((k, b), s) in coords.chunks(2).zip(&base.values).zip(&moved.values) {
        let phase = Complex64::from_polar(1.0, -2.0 * PI * (k[0] * sa as f64 + k[1] * sb as f64));
        assert!((s - b * phase).norm() <= 1e-10);
    }
}

#[test]
fn coordinate_gradient_of_constant_image_at_dc() {
    let (h, w) = (4, 4);
    let img = ComplexImage::from_real(h, w, &[1.0; 16]).unwrap();
    let g = KSamples::from_values(1, vec![Complex64::new(1.0, 0.0)]).unwrap();
    let grad = grad_wrt_coords_direct(&img, &[0.0, 0.0], &g).unwrap();
    // dX/dkx = -2 pi i sum u(x) = -2 pi i * 4 * (-2 - 1 + 0 + 1) = 16 pi i, purely imaginary,
    // so the pairing with a real upstream is zero; an imaginary upstream picks it up.
    assert!(grad[0].abs() <= 1e-12 && grad[1].abs() <= 1e-12);
    let g = KSamples::from_values(1, vec![Complex64::new(0.0, 1.0)]).unwrap();
    let grad = grad_wrt_coords_direct(&img, &[0.0, 0.0], &g).unwrap();
    assert_relative_eq!(grad[0], 16.0 * PI, max_relative = 1e-12);
    assert_relative_eq!(grad[1], 16.0 * PI, max_relative = 1e-12);
}

fn fd_check(grad: &[f64], img: &ComplexImage, coords: &[f64], g: &KSamples, eval: &dyn Fn(&[f64]) -> KSamples) {
    let loss = |c: &[f64]| -> f64 {
        eval(c)
            .values
            .iter()
            .zip(&g.values)
            .map(|(x, gg)| gg.re * x.re + gg.im * x.im)
            .sum()
    };
    let step = 1e-4;
    let mut fd = vec![0.0; coords.len()];
    for i in 0..coords.len() {
        let mut p = coords.to_vec();
        let mut m = coords.to_vec();
        p[i] += step;
        m[i] -= step;
        fd[i] = (loss(&p) - loss(&m)) / (2.0 * step);
    }
    let num: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = fd.iter().map(|b| b * b).sum();
    let rel = (num / den).sqrt();
    assert!(rel <= 1e-4, "gradient vs finite difference: {rel} ({}x{})", img.height, img.width);
}

#[test]
fn coordinate_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let img = random_image(&mut rng, 16, 16);
    let coords: Vec<f64> = random_coords(&mut rng, 24).iter().map(|c| c * 0.98).collect();
    let g = KSamples::from_values(3, random_complex(&mut rng, 24)).unwrap();
    let grad = grad_wrt_coords_direct(&img, &coords, &g).unwrap();
    fd_check(&grad, &img, &coords, &g, &|c| forward_direct(&img, c, 3).unwrap());
    let plan = NufftPlan::new(16, 16, GriddingKernel::default()).unwrap();
    let grad = plan.grad_wrt_coords(&img, &coords, &g).unwrap();
    fd_check(&grad, &img, &coords, &g, &|c| plan.forward(&img, c, 3).unwrap());
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let img = random_image(&mut rng, 8, 8);
    let coords = random_coords(&mut rng, 10);
    let g = KSamples::zeros(2, 5);
    assert!(grad_wrt_coords_direct(&img, &coords, &g).unwrap().iter().all(|&v| v == 0.0));
    let plan = NufftPlan::new(8, 8, GriddingKernel::default()).unwrap();
    assert!(plan.grad_wrt_coords(&img, &coords, &g).unwrap().iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjointness_holds_on_both_paths(seed in any::<u64>(), h in 2usize..20, w in 2usize..20, n in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = random_coords(&mut rng, n);
        let x = random_image(&mut rng, h, w);
        let y = KSamples::from_values(1, random_complex(&mut rng, n)).unwrap();
        let scale = (x.norm_sqr() * y.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt();

        let lhs = inner(&y.values, &forward_direct(&x, &coords, 1).unwrap().values);
        let rhs = inner(&adjoint_direct(&y, &coords, h, w).unwrap().data, &x.data);
        prop_assert!((lhs - rhs).norm() / scale <= 1e-12);

        let plan = NufftPlan::new(h, w, GriddingKernel::default()).unwrap();
        let lhs = inner(&y.values, &plan.forward(&x, &coords, 1).unwrap().values);
        let rhs = inner(&plan.adjoint(&y, &coords).unwrap().data, &x.data);
        prop_assert!((lhs - rhs).norm() / scale <= 1e-5);
    }
}
