//! Production paths checked against independent reference computations.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use vloss_core::field::DisplacementGrid;
use vloss_core::inverse::model_composition_residual;
use vloss_core::raster::{count_set, simulate_with};
use vloss_core::*;

#[path = "support/reference.rs"]
mod reference;
use reference::naive_simulate;

fn random_kernel(rng: &mut StdRng) -> GaussianKernel {
    GaussianKernel {
        mu: Point2::new(rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)),
        sigma: rng.gen_range(0.03..0.3),
        omega: rng.gen_range(0.0..1.0),
        theta_rad: rng.gen_range(-PI..PI),
        psi_gain: rng.gen_range(0.0..0.9),
    }
}

fn random_model(rng: &mut StdRng) -> DeficitModel {
    let n = rng.gen_range(1..=4);
    DeficitModel::with_kernels(0.5, (0..n).map(|_| random_kernel(rng)).collect())
}

fn random_image(rng: &mut StdRng, w: usize, h: usize, ch: usize) -> Image {
    Image::new(w, h, ch, (0..w * h * ch).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap()
}

#[test]
fn simulate_matches_naive_reference_bit_exactly() {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for trial in 0..20 {
        let m = random_model(&mut rng);
        let ch = if trial % 2 == 0 { 1 } else { 3 };
        let img = random_image(&mut rng, 128, 128, ch);
        let expected = naive_simulate(&m, &img);
        assert_eq!(simulate_with(&m, &img, Exec::Serial), expected, "trial {trial}");
        assert_eq!(simulate_with(&m, &img, Exec::Parallel), expected, "trial {trial}");
    }
}

#[test]
fn naive_reference_on_amsler_grid() {
    let m = DeficitModel::with_kernels(
        0.5,
        vec![GaussianKernel {
            mu: Point2::new(0.5, 0.5),
            sigma: 0.1,
            omega: 0.8,
            theta_rad: FRAC_PI_2,
            psi_gain: 0.5,
        }],
    );
    let grid = amsler_grid(256, 16, 2).unwrap();
    assert_eq!(simulate(&m, &grid), naive_simulate(&m, &grid));
}

#[test]
fn spatial_term_matches_single_kernel_closed_form() {
    let mut rng = StdRng::seed_from_u64(7);
    let k = GaussianKernel {
        mu: Point2::new(0.43, 0.61),
        sigma: 0.13,
        omega: 0.0,
        theta_rad: 0.0,
        psi_gain: 1.0,
    };
    let m = DeficitModel::with_kernels(0.5, vec![k]);
    for _ in 0..10_000 {
        let (u, v) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let e = (-((u - k.mu.u).powi(2) + (v - k.mu.v).powi(2)) / (2.0 * k.sigma.powi(2))).exp();
        let d = m.psi_displacement(Point2::new(u, v));
        assert!((d.du - e * (u - k.mu.u)).abs() <= 1e-12);
        assert!((d.dv - e * (v - k.mu.v)).abs() <= 1e-12);
    }
}

#[test]
fn field_export_matches_closed_form() {
    let k = GaussianKernel {
        mu: Point2::new(0.5, 0.5),
        sigma: 0.1,
        omega: 0.0,
        theta_rad: 0.0,
        psi_gain: 1.0,
    };
    let f = field_export(&DeficitModel::with_kernels(0.5, vec![k]), 33).unwrap();
    for (p, d) in f.iter() {
        let e = (-((p.u - 0.5).powi(2) + (p.v - 0.5).powi(2)) / 0.02).exp();
        assert!((d.du - e * (p.u - 0.5)).abs() <= 1e-12);
        assert!((d.dv - e * (p.v - 0.5)).abs() <= 1e-12);
    }
}

#[test]
fn region_mask_matches_analytic_disk() {
    let m = DeficitModel::with_kernels(
        0.5,
        vec![GaussianKernel::luminance(Point2::new(0.5, 0.5), 0.1, 0.8)],
    );
    let r_px = 0.1 * (2.0 * (0.8f64 / 0.5).ln()).sqrt() * 512.0;
    assert!((r_px - 49.64).abs() < 0.01);
    let area = PI * r_px * r_px;
    let count = count_set(&region_mask(&m, 0.5, 512, 512).unwrap()) as f64;
    assert!((count - area).abs() / area <= 0.02, "{count} vs {area}");
}

#[test]
fn lipschitz_doubles_with_gain() {
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..5 {
        let mut m = random_model(&mut rng);
        for k in &mut m.kernels {
            k.theta_rad = 0.0;
            k.psi_gain *= 0.5;
        }
        let base = lipschitz_estimate(&m, 96);
        for k in &mut m.kernels {
            k.psi_gain *= 2.0;
        }
        let doubled = lipschitz_estimate(&m, 96);
        assert!((doubled - 2.0 * base).abs() <= 0.02 * doubled, "{base} -> {doubled}");
    }
}

#[test]
fn inversion_of_reference_kernel() {
    let m = DeficitModel::with_kernels(
        0.5,
        vec![GaussianKernel {
            mu: Point2::new(0.5, 0.5),
            sigma: 0.15,
            omega: 0.0,
            theta_rad: 0.0,
            psi_gain: 0.5,
        }],
    );
    let fwd = DisplacementGrid::from_model(&m, 256).unwrap();
    let inv = invert_field(&fwd, 1e-6, 50).unwrap();
    assert!(inv.converged);
    assert!(inv.iterations <= 30, "{}", inv.iterations);
    assert!(model_composition_residual(&m, &inv.field) < 1e-3);
}

#[test]
fn strong_gain_is_flagged_non_convergent() {
    let m = DeficitModel::with_kernels(
        0.5,
        vec![GaussianKernel {
            mu: Point2::new(0.5, 0.5),
            sigma: 0.15,
            omega: 0.0,
            theta_rad: 0.0,
            psi_gain: 1.2,
        }],
    );
    assert!(lipschitz_estimate(&m, 64) > 1.0);
    let inv = invert_field(&DisplacementGrid::from_model(&m, 128).unwrap(), 1e-6, 50).unwrap();
    assert!(!inv.converged);
    assert_eq!(inv.iterations, 50);
    assert!(inv.final_update >= 1e-6);
}
