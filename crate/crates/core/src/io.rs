//! PNG codec glue and atomic file output.
//!
//! 8-bit samples map to `value / 255` on read and `round(value * 255)` on
//! write. Encoded PNGs carry no timestamps or other ancillary chunks, so the
//! same image always produces the same bytes.

use std::io::Write;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::raster::Image;

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let dynamic = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
    let (channels, raw) = if dynamic.color().has_color() {
        (3, dynamic.to_rgb8().into_raw())
    } else {
        (1, dynamic.to_luma8().into_raw())
    };
    let data = raw.into_iter().map(|b| f64::from(b) / 255.0).collect();
    Image::new(width, height, channels, data)
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        _ => ExtendedColorType::Rgb8,
    };
    let mut out = Vec::new();
    PngEncoder::new(&mut out).write_image(&raw, img.width() as u32, img.height() as u32, color)?;
    Ok(out)
}

pub fn read_png(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
