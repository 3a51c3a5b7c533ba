//! Independent per-pixel reference renderer shared by test targets.

use vloss_core::{DeficitModel, Image};

/// Per-pixel reference renderer. Shares only the documented conventions
/// with production: pixel centers at `(x + 0.5) / n`, sampling in pixel
/// coordinates with border clamp, lerp as `a + t (b - a)`, and kernel
/// terms accumulated in list order.
pub fn naive_simulate(m: &DeficitModel, img: &Image) -> Image {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let src = img.data();
    let mut out = Vec::with_capacity(w * h * ch);
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let v = (y as f64 + 0.5) / h as f64;
            let mut gamma = 0.0;
            let (mut ru, mut rv, mut su, mut sv) = (0.0, 0.0, 0.0, 0.0);
            for k in &m.kernels {
                let du = u - k.mu.u;
                let dv = v - k.mu.v;
                let n = (-(du * du + dv * dv) / (2.0 * k.sigma * k.sigma)).exp();
                gamma += k.omega * n;
                let (s, c) = k.theta_rad.sin_cos();
                ru += k.omega * n * (c * du - s * dv - du);
                rv += k.omega * n * (s * du + c * dv - dv);
                su += k.psi_gain * n * du;
                sv += k.psi_gain * n * dv;
            }
            let gamma: f64 = if gamma > 1.0 { 1.0 } else { gamma };
            let fx = (x as f64 + (ru + su) * w as f64).clamp(0.0, (w - 1) as f64);
            let fy = (y as f64 + (rv + sv) * h as f64).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            for c in 0..ch {
                let at = |xx: usize, yy: usize| src[(yy * w + xx) * ch + c];
                let top = at(x0, y0) + tx * (at(x1, y0) - at(x0, y0));
                let bottom = at(x0, y1) + tx * (at(x1, y1) - at(x0, y1));
                out.push((top + ty * (bottom - top)) * (1.0 - gamma));
            }
        }
    }
    Image::new(w, h, ch, out).unwrap()
}
