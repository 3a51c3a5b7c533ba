//! Inversion of the deficit model: the compensation (pre-distortion)
//! transform and round-trip recovery metrics.
//!
//! For a backward map `S(p) = p + D(p)` we look for `E` with
//! `S^-1(q) = q + E(q)`. Substituting gives the fixed-point equation
//! `E(q) = -D(q + E(q))`, which is iterated Jacobi-style on a lattice. When
//! the Lipschitz constant of `D` is below 1 the iteration is a contraction
//! and converges geometrically.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DisplacementGrid;
use crate::model::{lipschitz_estimate, DeficitModel, Point2, Vec2};
use crate::raster::{pixel_center, Exec, Image};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_GAMMA_CAP: f64 = 0.9;
/// Pixels with `Γ <= REPORT_MASK_GAMMA` enter the masked PSNR figures.
pub const REPORT_MASK_GAMMA: f64 = 0.5;
/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Upper bound on the inversion lattice used by [`compensate`].
pub const MAX_COMPENSATION_LATTICE: usize = 1024;
const REPORT_LIPSCHITZ_GRID: usize = 128;

/// Result of [`invert_field`]. A run that exhausts `max_iter` is returned
/// with `converged == false` rather than as an error.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub field: DisplacementGrid,
    pub iterations: usize,
    /// Largest pointwise change in the last iteration.
    pub final_update: f64,
    pub converged: bool,
    /// Largest pointwise change per iteration, in order.
    pub update_history: Vec<f64>,
}

/// Inverts `S = id + fwd` by fixed-point iteration on the same lattice.
///
/// Stops as soon as the largest update drops below `tol`, or after
/// `max_iter` iterations.
pub fn invert_field(fwd: &DisplacementGrid, tol: f64, max_iter: usize) -> Result<Inversion> {
    if !(tol > 0.0) {
        return Err(Error::param(format!("tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::param("max_iter must be at least 1"));
    }
    let g = fwd.grid();
    let points: Vec<Point2> = (0..g * g).map(|k| fwd.point(k % g, k / g)).collect();
    let mut current = vec![Vec2::ZERO; g * g];
    let mut next = vec![Vec2::ZERO; g * g];
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..max_iter {
        let update = next
            .par_iter_mut()
            .zip(current.par_iter())
            .zip(points.par_iter())
            .map(|((out, e), q)| {
                let d = fwd.sample(*q + *e);
                *out = Vec2::new(-d.du, -d.dv);
                (*out - *e).norm()
            })
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut current, &mut next);
        history.push(update);
        if update < tol {
            converged = true;
            break;
        }
    }

    Ok(Inversion {
        field: DisplacementGrid::from_vec(g, current)?,
        iterations: history.len(),
        final_update: *history.last().expect("at least one iteration runs"),
        converged,
        update_history: history,
    })
}

/// `sup_q |S(q + E(q)) - q|` over the lattice of `inv`, with `S` evaluated
/// from the model itself rather than from a sampled field.
pub fn model_composition_residual(m: &DeficitModel, inv: &DisplacementGrid) -> f64 {
    let eval = m.evaluator();
    let g = inv.grid();
    (0..g * g)
        .into_par_iter()
        .map(|k| {
            let q = inv.point(k % g, k / g);
            (eval.total_map(q + inv.get(k % g, k / g)) - q).norm()
        })
        .reduce(|| 0.0, f64::max)
}

/// `sup_q |S(q + E(q)) - q|` with `S = id + fwd` interpolated from the grid.
pub fn composition_residual(fwd: &DisplacementGrid, inv: &DisplacementGrid) -> Result<f64> {
    if fwd.grid() != inv.grid() {
        return Err(Error::param("forward and inverse lattices differ in size"));
    }
    let g = inv.grid();
    Ok((0..g * g)
        .into_par_iter()
        .map(|k| {
            let e = inv.get(k % g, k / g);
            let q = inv.point(k % g, k / g);
            (e + fwd.sample(q + e)).norm()
        })
        .reduce(|| 0.0, f64::max))
}

/// Pre-distorted display image together with the inversion it used.
#[derive(Debug, Clone)]
pub struct Compensation {
    pub image: Image,
    pub inversion: Inversion,
}

impl Compensation {
    pub fn converged(&self) -> bool {
        self.inversion.converged
    }
}

fn compensation_lattice(img: &Image) -> usize {
    img.width().max(img.height()).clamp(2, MAX_COMPENSATION_LATTICE)
}

pub fn compensate(m: &DeficitModel, img: &Image, gamma_cap: f64) -> Result<Compensation> {
    compensate_with(m, img, gamma_cap, Exec::Parallel)
}

/// `comp(q) = img(q + E(q)) / (1 - min(Γ(q + E(q)), gamma_cap))`, clamped
/// to `[0, 1]`, where `q + E(q)` is where the patient will perceive the
/// pixel shown at `q`.
pub fn compensate_with(m: &DeficitModel, img: &Image, gamma_cap: f64, exec: Exec) -> Result<Compensation> {
    if !(gamma_cap > 0.0 && gamma_cap < 1.0) {
        return Err(Error::param(format!("gamma_cap must lie in (0, 1), got {gamma_cap}")));
    }
    let fwd = DisplacementGrid::from_model(m, compensation_lattice(img))?;
    let inversion = invert_field(&fwd, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let eval = m.evaluator();
    let (w, h) = (img.width(), img.height());
    let (wf, hf) = (w as f64, h as f64);
    let inv = &inversion.field;
    let image = Image::render_like(w, h, img.channels(), exec, |x, y, px| {
        let q = pixel_center(x, y, w, h);
        let e = inv.sample(q);
        img.sample_px(x as f64 + e.du * wf, y as f64 + e.dv * hf, px);
        let gain = 1.0 - eval.gamma(q + e).min(gamma_cap);
        for v in px.iter_mut() {
            *v = (*v / gain).clamp(0.0, 1.0);
        }
    });
    Ok(Compensation { image, inversion })
}

/// Peak signal-to-noise ratio for unit-range images, capped at
/// [`PSNR_CAP_DB`]. With a mask, only pixels where the mask is nonzero
/// count.
pub fn psnr(a: &Image, b: &Image, mask: Option<&Image>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::param("psnr operands differ in shape"));
    }
    let ch = a.channels();
    let mut sum = 0.0;
    let mut count = 0usize;
    match mask {
        None => {
            sum = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
            count = a.data().len();
        }
        Some(mask) => {
            if mask.width() != a.width() || mask.height() != a.height() || mask.channels() != 1 {
                return Err(Error::param("mask must be single-channel with the image's dimensions"));
            }
            if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::param("mask must be binary"));
            }
            for (i, _) in mask.data().iter().enumerate().filter(|(_, &v)| v == 1.0) {
                let pa = &a.data()[i * ch..(i + 1) * ch];
                let pb = &b.data()[i * ch..(i + 1) * ch];
                sum += pa.iter().zip(pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                count += ch;
            }
        }
    }
    if count == 0 {
        return Err(Error::param("psnr mask selects no pixels"));
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mask of pixels with `Γ <= max_gamma`.
pub fn low_deficit_mask(m: &DeficitModel, width: usize, height: usize, max_gamma: f64) -> Image {
    let eval = m.evaluator();
    Image::render_like(width, height, 1, Exec::Parallel, |x, y, px| {
        px[0] = if eval.gamma(pixel_center(x, y, width, height)) <= max_gamma {
            1.0
        } else {
            0.0
        };
    })
}

/// How well compensation followed by simulation recovers an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub psnr_full: f64,
    /// Over pixels with `Γ <= mask_gamma_max`.
    pub psnr_masked: f64,
    /// Simulation without compensation, same mask.
    pub psnr_uncompensated: f64,
    pub max_geom_residual: f64,
    pub iterations_used: usize,
    pub lipschitz: f64,
    pub converged: bool,
    pub mask_gamma_max: f64,
}

pub fn roundtrip_report(m: &DeficitModel, img: &Image) -> Result<RoundtripReport> {
    let simulated = crate::raster::simulate(m, img);
    let comp = compensate(m, img, DEFAULT_GAMMA_CAP)?;
    let recovered = crate::raster::simulate(m, &comp.image);
    let mask = low_deficit_mask(m, img.width(), img.height(), REPORT_MASK_GAMMA);

    let eval = m.evaluator();
    let inv = &comp.inversion.field;
    let (w, h) = (img.width(), img.height());
    let max_geom_residual = (0..w * h)
        .into_par_iter()
        .map(|k| {
            let q = pixel_center(k % w, k / w, w, h);
            (eval.total_map(q + inv.sample(q)) - q).norm()
        })
        .reduce(|| 0.0, f64::max);

    Ok(RoundtripReport {
        psnr_full: psnr(&recovered, img, None)?,
        psnr_masked: psnr(&recovered, img, Some(&mask))?,
        psnr_uncompensated: psnr(&simulated, img, Some(&mask))?,
        max_geom_residual,
        iterations_used: comp.inversion.iterations,
        lipschitz: lipschitz_estimate(m, REPORT_LIPSCHITZ_GRID),
        converged: comp.inversion.converged,
        mask_gamma_max: REPORT_MASK_GAMMA,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianKernel;
    use crate::raster::simulate;

    #[test]
    fn zero_field_inverts_in_one_iteration() {
        let inv = invert_field(&DisplacementGrid::zeros(16).unwrap(), 1e-6, 50).unwrap();
        assert!(inv.converged);
        assert_eq!(inv.iterations, 1);
        assert_eq!(inv.field.max_norm(), 0.0);
    }

    #[test]
    fn translation_inverts_to_negation() {
        let fwd = DisplacementGrid::from_vec(32, vec![Vec2::new(0.01, 0.0); 32 * 32]).unwrap();
        let inv = invert_field(&fwd, 1e-6, 50).unwrap();
        assert!(inv.converged);
        for (_, e) in inv.field.iter() {
            assert_eq!(e, Vec2::new(-0.01, 0.0));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let fwd = DisplacementGrid::zeros(4).unwrap();
        assert!(invert_field(&fwd, 0.0, 10).is_err());
        assert!(invert_field(&fwd, 1e-6, 0).is_err());
        let img = Image::filled(4, 4, 1, 0.5).unwrap();
        assert!(compensate(&DeficitModel::empty(0.5), &img, 1.0).is_err());
        assert!(compensate(&DeficitModel::empty(0.5), &img, 0.0).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(8, 8, 3, 0.3).unwrap();
        assert_eq!(psnr(&a, &a, None).unwrap(), 99.0);
        let b = Image::filled(8, 8, 3, 0.4).unwrap();
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);

        // Left half differs by 0.1, right half is identical.
        let mut data = vec![0.3; 8 * 8];
        let mut mask = vec![0.0; 8 * 8];
        for y in 0..8 {
            for x in 0..4 {
                data[y * 8 + x] = 0.4;
                mask[y * 8 + x] = 1.0;
            }
        }
        let a1 = Image::filled(8, 8, 1, 0.3).unwrap();
        let b1 = Image::new(8, 8, 1, data).unwrap();
        let mask = Image::new(8, 8, 1, mask).unwrap();
        assert!((psnr(&a1, &b1, Some(&mask)).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_rejects_empty_mask_and_mismatches() {
        let a = Image::filled(4, 4, 1, 0.3).unwrap();
        let none = Image::filled(4, 4, 1, 0.0).unwrap();
        assert!(matches!(psnr(&a, &a, Some(&none)), Err(Error::Param(_))));
        let other = Image::filled(4, 5, 1, 0.3).unwrap();
        assert!(psnr(&a, &other, None).is_err());
        let gray_mask = Image::filled(4, 4, 1, 0.5).unwrap();
        assert!(psnr(&a, &a, Some(&gray_mask)).is_err());
    }

    #[test]
    fn empty_model_compensation_is_identity() {
        let img = Image::new(5, 3, 3, (0..45).map(|i| i as f64 / 44.0).collect()).unwrap();
        let comp = compensate(&DeficitModel::empty(0.5), &img, 0.9).unwrap();
        assert!(comp.converged());
        assert_eq!(comp.image, img);
    }

    #[test]
    fn luminance_only_inverse_at_center() {
        let m = DeficitModel::with_kernels(
            0.5,
            vec![GaussianKernel::luminance(Point2::new(0.5, 0.5), 0.1, 0.5)],
        );
        let ramp: Vec<f64> = (0..81).map(|i| i as f64 / 80.0).collect();
        let img = Image::new(9, 9, 1, ramp).unwrap();
        let comp = compensate(&m, &img, 0.9).unwrap();
        let src = img.pixel(4, 4)[0];
        assert_eq!(comp.image.pixel(4, 4)[0], (src / 0.5).min(1.0));

        let rec = simulate(&m, &comp.image);
        for y in 0..9 {
            for x in 0..9 {
                let (orig, got) = (img.pixel(x, y)[0], rec.pixel(x, y)[0]);
                let gamma = m.gamma(img.pixel_center(x, y));
                if orig / (1.0 - gamma) <= 1.0 {
                    assert!((orig - got).abs() < 1e-12, "({x},{y}): {orig} vs {got}");
                }
            }
        }
        assert_eq!(rec.pixel(4, 4)[0] == src, src <= 0.5);
    }

    #[test]
    fn report_for_empty_model() {
        let img = crate::raster::amsler_grid(64, 16, 2).unwrap();
        let r = roundtrip_report(&DeficitModel::empty(0.5), &img).unwrap();
        assert_eq!(r.psnr_full, 99.0);
        assert_eq!(r.psnr_masked, 99.0);
        assert_eq!(r.max_geom_residual, 0.0);
        assert_eq!(r.lipschitz, 0.0);
        assert!(r.converged);
        assert_eq!(r.iterations_used, 1);
    }

    #[test]
    fn report_for_luminance_only_mid_gray() {
        let m = DeficitModel::with_kernels(
            0.5,
            vec![GaussianKernel::luminance(Point2::new(0.5, 0.5), 0.1, 0.5)],
        );
        let img = Image::filled(64, 64, 1, 0.5).unwrap();
        let r = roundtrip_report(&m, &img).unwrap();
        assert_eq!(r.psnr_masked, 99.0);
        assert_eq!(r.psnr_full, 99.0);
        assert!(r.psnr_uncompensated < 99.0);
    }

    #[test]
    fn total_loss_stays_finite() {
        // Γ = 1 at the center: unrecoverable there, but the mask excludes it.
        let m = DeficitModel::with_kernels(
            0.5,
            vec![GaussianKernel::luminance(Point2::new(0.5, 0.5), 0.1, 1.0); 2],
        );
        let img = crate::raster::amsler_grid(64, 16, 2).unwrap();
        let r = roundtrip_report(&m, &img).unwrap();
        for v in [r.psnr_full, r.psnr_masked, r.psnr_uncompensated] {
            assert!(v.is_finite() && v >= 0.0);
        }
    }

    #[test]
    fn report_serializes_field_names() {
        let r = RoundtripReport {
            psnr_full: 1.0,
            psnr_masked: 2.0,
            psnr_uncompensated: 3.0,
            max_geom_residual: 0.0,
            iterations_used: 4,
            lipschitz: 0.5,
            converged: true,
            mask_gamma_max: 0.5,
        };
        let v = serde_json::to_value(&r).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            [
                "converged",
                "iterations_used",
                "lipschitz",
                "mask_gamma_max",
                "max_geom_residual",
                "psnr_full",
                "psnr_masked",
                "psnr_uncompensated"
            ]
        );
    }
}
