//! Minimal RGB raster and the resampling shared by thumbnails and the toy encoder.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("undecodable image {path}: {reason}")]
    Undecodable { path: String, reason: String },
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("pixel buffer length {got} does not match {width}x{height}x3")]
    BadBuffer { width: u32, height: u32, got: usize },
}

/// An 8-bit RGB image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    rgb: Vec<u8>,
}

impl Raster {
    pub fn from_rgb(width: u32, height: u32, rgb: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage);
        }
        if rgb.len() != width as usize * height as usize * 3 {
            return Err(RasterError::BadBuffer {
                width,
                height,
                got: rgb.len(),
            });
        }
        Ok(Self { width, height, rgb })
    }

    pub fn from_gray(width: u32, height: u32, gray: &[u8]) -> Result<Self, RasterError> {
        let rgb = gray.iter().flat_map(|&v| [v, v, v]).collect();
        Self::from_rgb(width, height, rgb)
    }

    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Result<Self, RasterError> {
        let n = width as usize * height as usize;
        Self::from_rgb(width, height, color.repeat(n))
    }

    pub fn open(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path).map_err(|e| RasterError::Undecodable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::from_rgb(w, h, rgb.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), image::ImageError> {
        image::save_buffer(path, &self.rgb, self.width, self.height, image::ExtendedColorType::Rgb8)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, color: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.rgb[i..i + 3].copy_from_slice(&color);
    }

    pub fn as_rgb(&self) -> &[u8] {
        &self.rgb
    }
}

/// Rounds half-up and clamps to the 8-bit range.
fn to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Scales `img` so its shorter side equals `side` (bilinear, pixel-center
/// aligned, per channel), center-crops to `side`×`side` and converts to
/// grayscale with luma weights 0.299/0.587/0.114 rounded half-up.
///
/// Returns `side * side` values in row-major order.
pub fn square_luma(img: &Raster, side: u32) -> Vec<u8> {
    assert!(side > 0);
    let (w, h) = (img.width as f64, img.height as f64);
    let shorter = w.min(h);
    let scale = side as f64 / shorter;
    let scaled_w = ((w * scale).round() as u32).max(side);
    let scaled_h = ((h * scale).round() as u32).max(side);
    let off_x = (scaled_w - side) / 2;
    let off_y = (scaled_h - side) / 2;
    // Source step per destination pixel along each axis.
    let step_x = w / scaled_w as f64;
    let step_y = h / scaled_h as f64;

    let mut out = Vec::with_capacity((side * side) as usize);
    for dy in 0..side {
        let sy = ((dy + off_y) as f64 + 0.5) * step_y - 0.5;
        let (y0, y1, fy) = taps(sy, img.height);
        for dx in 0..side {
            let sx = ((dx + off_x) as f64 + 0.5) * step_x - 0.5;
            let (x0, x1, fx) = taps(sx, img.width);
            let mut rgb = [0.0f64; 3];
            for (c, slot) in rgb.iter_mut().enumerate() {
                let p00 = img.pixel(x0, y0)[c] as f64;
                let p10 = img.pixel(x1, y0)[c] as f64;
                let p01 = img.pixel(x0, y1)[c] as f64;
                let p11 = img.pixel(x1, y1)[c] as f64;
                let top = p00 + (p10 - p00) * fx;
                let bottom = p01 + (p11 - p01) * fx;
                *slot = top + (bottom - top) * fy;
            }
            out.push(to_u8(luma(rgb)));
        }
    }
    out
}

pub fn luma(rgb: [f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// Neighbouring sample indices and the interpolation weight of the second.
fn taps(s: f64, len: u32) -> (u32, u32, f64) {
    let max = (len - 1) as f64;
    let s = s.clamp(0.0, max);
    let i0 = s.floor();
    let i1 = (i0 + 1.0).min(max);
    (i0 as u32, i1 as u32, s - i0)
}
