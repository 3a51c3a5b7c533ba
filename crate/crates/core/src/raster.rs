//! Float rasters over the visual field and the forward perception simulator.
//!
//! Pixel `(x, y)` of a `width x height` image sits at the visual-field point
//! `((x + 0.5) / width, (y + 0.5) / height)`. All sampling happens in pixel
//! coordinates, so a zero displacement lands exactly on a pixel center and
//! reproduces the source value bit for bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{clamp_coord, lerp, DisplacementGrid};
use crate::model::{DeficitModel, Point2};

/// Row-major raster with samples in `[0, 1]`; 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Whether row rendering may fan out over the rayon pool. Both modes
/// produce bit-identical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Serial,
    #[default]
    Parallel,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::param(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::param(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param(format!("sample {i} is outside [0, 1]: {}", data[i])));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Visual-field point of a pixel center.
    pub fn pixel_center(&self, x: usize, y: usize) -> Point2 {
        pixel_center(x, y, self.width, self.height)
    }

    /// Applies `f` to every sample. The result is clamped to `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
            ..*self
        }
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to the
    /// border pixels. Writes one value per channel into `out`.
    pub(crate) fn sample_px(&self, fx: f64, fy: f64, out: &mut [f64]) {
        let (x0, x1, tx) = clamp_coord(fx, self.width);
        let (y0, y1, ty) = clamp_coord(fy, self.height);
        let a = self.pixel(x0, y0);
        let b = self.pixel(x1, y0);
        let c = self.pixel(x0, y1);
        let d = self.pixel(x1, y1);
        for ch in 0..self.channels {
            let top = lerp(a[ch], b[ch], tx);
            let bottom = lerp(c[ch], d[ch], tx);
            out[ch] = lerp(top, bottom, ty);
        }
    }

    /// Renders a new image of the same shape row by row. `f` gets the
    /// pixel coordinates and the output pixel to fill.
    pub(crate) fn render_like<F>(width: usize, height: usize, channels: usize, exec: Exec, f: F) -> Image
    where
        F: Fn(usize, usize, &mut [f64]) + Sync,
    {
        let mut data = vec![0.0; width * height * channels];
        let row_len = width * channels;
        let render_row = |(y, row): (usize, &mut [f64])| {
            for (x, px) in row.chunks_exact_mut(channels).enumerate() {
                f(x, y, px);
            }
        };
        match exec {
            Exec::Serial => data.chunks_mut(row_len).enumerate().for_each(render_row),
            Exec::Parallel => data.par_chunks_mut(row_len).enumerate().for_each(render_row),
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }
}

pub fn pixel_center(x: usize, y: usize, width: usize, height: usize) -> Point2 {
    Point2::new((x as f64 + 0.5) / width as f64, (y as f64 + 0.5) / height as f64)
}

/// Square Amsler chart: white background, black lines every `spacing_px`
/// pixels (`line_px` wide, centered on the line position) and a central
/// fixation dot of diameter `2 * line_px`.
pub fn amsler_grid(size_px: usize, spacing_px: usize, line_px: usize) -> Result<Image> {
    if spacing_px == 0 || size_px < 2 * spacing_px {
        return Err(Error::param(format!(
            "grid size {size_px} must be at least twice the spacing {spacing_px}"
        )));
    }
    if line_px == 0 || line_px >= spacing_px {
        return Err(Error::param(format!(
            "line width {line_px} must lie in [1, spacing) with spacing {spacing_px}"
        )));
    }
    let half = line_px / 2;
    let on_line = |x: usize| (x + half) % spacing_px < line_px;
    let center = size_px as f64 / 2.0;
    let radius = line_px as f64;
    Ok(Image::render_like(size_px, size_px, 1, Exec::Parallel, |x, y, px| {
        let dx = x as f64 + 0.5 - center;
        let dy = y as f64 + 0.5 - center;
        let black = on_line(x) || on_line(y) || dx * dx + dy * dy < radius * radius;
        px[0] = if black { 0.0 } else { 1.0 };
    }))
}

/// Bilinear sample at a visual-field point; outside `[0,1]^2` the border
/// pixel is repeated.
pub fn sample_bilinear(img: &Image, p: Point2) -> Vec<f64> {
    let mut out = vec![0.0; img.channels];
    img.sample_px(
        p.u * img.width as f64 - 0.5,
        p.v * img.height as f64 - 0.5,
        &mut out,
    );
    out
}

/// Simulated percept: `out(p) = img(S(p)) * (1 - Γ(p))`.
pub fn simulate(m: &DeficitModel, img: &Image) -> Image {
    simulate_with(m, img, Exec::Parallel)
}

pub fn simulate_with(m: &DeficitModel, img: &Image, exec: Exec) -> Image {
    let eval = m.evaluator();
    let (w, h) = (img.width, img.height);
    let (wf, hf) = (w as f64, h as f64);
    Image::render_like(w, h, img.channels, exec, |x, y, px| {
        let s = eval.sample(pixel_center(x, y, w, h));
        let d = s.displacement();
        img.sample_px(x as f64 + d.du * wf, y as f64 + d.dv * hf, px);
        let keep = 1.0 - s.gamma;
        for v in px.iter_mut() {
            *v *= keep;
        }
    })
}

/// Binary mask of the deficit region `{Γ >= lambda}` at pixel centers.
pub fn region_mask(m: &DeficitModel, lambda: f64, width: usize, height: usize) -> Result<Image> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::param(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::param("mask dimensions must be positive"));
    }
    let eval = m.evaluator();
    Ok(Image::render_like(width, height, 1, Exec::Parallel, |x, y, px| {
        let inside = eval.gamma(pixel_center(x, y, width, height)) >= lambda;
        px[0] = if inside { 1.0 } else { 0.0 };
    }))
}

/// Luminance degradation Γ rendered as a gray image (1 = total loss).
pub fn gamma_map(m: &DeficitModel, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 {
        return Err(Error::param("map dimensions must be positive"));
    }
    let eval = m.evaluator();
    Ok(Image::render_like(width, height, 1, Exec::Parallel, |x, y, px| {
        px[0] = eval.gamma(pixel_center(x, y, width, height));
    }))
}

/// Total displacement `D(p) = S(p) - p` on a `grid x grid` lattice.
pub fn field_export(m: &DeficitModel, grid: usize) -> Result<DisplacementGrid> {
    DisplacementGrid::from_model(m, grid)
}

/// Number of nonzero samples in a single-channel image.
pub fn count_set(mask: &Image) -> usize {
    mask.data.iter().filter(|&&v| v != 0.0).count()
}
