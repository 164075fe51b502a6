//! Binary PPM (P6, 8-bit) image output and simple tiling for figure strips.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::io::Write;
use std::path::Path;

/// Map a value in [-1, 1] to a display byte; out-of-range values clamp.
pub fn to_byte(x: f64) -> u8 {
    (((x + 1.0) * 0.5 * 255.0).round()).clamp(0.0, 255.0) as u8
}

/// Interleave a [3, H, W] tensor in [-1, 1] into RGBRGB... bytes.
pub fn rgb_bytes<T: Scalar>(rgb: &Tensor<T>) -> Result<Vec<u8>> {
    let s = rgb.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("rgb_bytes", format!("expected [3, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = rgb.data();
    let mut out = Vec::with_capacity(h * w * 3);
    for p in 0..h * w {
        for ch in 0..3 {
            out.push(to_byte(d[ch * h * w + p].to_f64()));
        }
    }
    Ok(out)
}

/// A [1, H, W] mask in [0, 1] as a grayscale RGB byte stream.
pub fn mask_bytes<T: Scalar>(mask: &Tensor<T>) -> Result<Vec<u8>> {
    let s = mask.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::shape("mask_bytes", format!("expected [1, H, W] mask, got {s:?}")));
    }
    let mut out = Vec::with_capacity(s[1] * s[2] * 3);
    for &x in mask.data() {
        let b = (x.to_f64() * 255.0).round().clamp(0.0, 255.0) as u8;
        out.extend_from_slice(&[b, b, b]);
    }
    Ok(out)
}

/// Write raw interleaved RGB bytes as a P6 file.
pub fn write_ppm(path: &Path, w: usize, h: usize, bytes: &[u8]) -> Result<()> {
    if bytes.len() != w * h * 3 {
        return Err(Error::shape(
            "write_ppm",
            format!("body is {} bytes, expected {} for {w}x{h}", bytes.len(), w * h * 3),
        ));
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{w} {h}\n255\n")?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

/// Arrange equal-sized [3, H, W] images into a rows x cols grid (row-major,
/// in order); missing cells stay white.
pub fn tile_grid<T: Scalar>(images: &[Tensor<T>], rows: usize, cols: usize) -> Result<Tensor<T>> {
    if images.is_empty() || rows * cols < images.len() {
        return Err(Error::shape(
            "tile_grid",
            format!("{} images do not fit a {rows}x{cols} grid", images.len()),
        ));
    }
    let s = images[0].shape().to_vec();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("tile_grid", format!("expected [3, H, W] tiles, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let (gh, gw) = (rows * h, cols * w);
    let mut out = vec![T::one(); 3 * gh * gw];
    for (i, img) in images.iter().enumerate() {
        if img.shape() != s.as_slice() {
            return Err(Error::shape("tile_grid", "grid tiles must share one shape"));
        }
        let (r0, c0) = ((i / cols) * h, (i % cols) * w);
        let d = img.data();
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out[(ch * gh + r0 + y) * gw + c0 + x] = d[(ch * h + y) * w + x];
                }
            }
        }
    }
    Tensor::new(&[3, gh, gw], out)
}
