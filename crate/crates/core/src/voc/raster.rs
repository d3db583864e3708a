//! 8-bit RGB raster images and the pixel-level augmentation kernels.

use super::VocError;
use std::path::Path;

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, VocError> {
        if data.len() != (3 * width * height) as usize {
            return Err(VocError::Invariant(format!(
                "pixel buffer length {} does not match 3*{}*{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity((3 * width * height) as usize);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y * self.width + x) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x) as usize;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Fills a rectangle given 0-based inclusive corners, clipped to bounds.
    pub fn fill_rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, rgb: [u8; 3]) {
        for y in y0..=y1.min(self.height.saturating_sub(1)) {
            for x in x0..=x1.min(self.width.saturating_sub(1)) {
                self.set_pixel(x, y, rgb);
            }
        }
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, VocError> {
        let img: image::RgbImage =
            image::ImageBuffer::from_raw(self.width, self.height, self.data.clone())
                .expect("buffer length checked at construction");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| VocError::Image(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), VocError> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VocError> {
        let img = image::open(path)
            .map_err(|e| VocError::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (width, height) = img.dimensions();
        Ok(Self {
            width,
            height,
            data: img.into_raw(),
        })
    }
}

#[inline]
fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Forward rotation of a 1-based point about the image center
/// ((w+1)/2, (h+1)/2). Positive angles follow the screen convention used by
/// the resampler below.
pub(crate) fn rotate_point(
    width: u32,
    height: u32,
    degrees: f64,
    x: f64,
    y: f64,
) -> (f64, f64) {
    let (cx, cy) = ((width as f64 + 1.0) / 2.0, (height as f64 + 1.0) / 2.0);
    let rad = degrees.to_radians();
    let (sin, cos) = rad.sin_cos();
    let (dx, dy) = (x - cx, y - cy);
    (cx + dx * cos + dy * sin, cy - dx * sin + dy * cos)
}

/// Rotates about the image center with bilinear sampling and black fill
/// outside the source frame. The canvas keeps the input size.
pub fn rotate_bilinear(img: &RasterImage, degrees: f64) -> RasterImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f64 + 1.0) / 2.0, (h as f64 + 1.0) / 2.0);
    let rad = degrees.to_radians();
    let (sin, cos) = rad.sin_cos();
    let mut out = RasterImage::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            // 1-based center of this output pixel, inverse-mapped to the
            // source frame.
            let (dx, dy) = ((x + 1) as f64 - cx, (y + 1) as f64 - cy);
            let sx = cx + dx * cos - dy * sin;
            let sy = cy + dx * sin + dy * cos;
            // To 0-based continuous pixel coordinates.
            let (px, py) = (sx - 1.0, sy - 1.0);
            let x0 = px.floor();
            let y0 = py.floor();
            let fx = px - x0;
            let fy = py - y0;
            let sample = |ix: f64, iy: f64| -> Option<[u8; 3]> {
                if ix < 0.0 || iy < 0.0 || ix >= w as f64 || iy >= h as f64 {
                    None
                } else {
                    Some(img.pixel(ix as u32, iy as u32))
                }
            };
            let mut rgb = [0.0f64; 3];
            for (wgt, pix) in [
                ((1.0 - fx) * (1.0 - fy), sample(x0, y0)),
                (fx * (1.0 - fy), sample(x0 + 1.0, y0)),
                ((1.0 - fx) * fy, sample(x0, y0 + 1.0)),
                (fx * fy, sample(x0 + 1.0, y0 + 1.0)),
            ] {
                if let Some(p) = pix {
                    for ch in 0..3 {
                        rgb[ch] += wgt * p[ch] as f64;
                    }
                }
            }
            out.set_pixel(x, y, [clamp_u8(rgb[0]), clamp_u8(rgb[1]), clamp_u8(rgb[2])]);
        }
    }
    out
}

/// Separable Gaussian blur with kernel radius ceil(3*sigma) and
/// clamp-to-edge sampling, which keeps constant images constant.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> RasterImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }

    let (w, h) = (img.width() as i64, img.height() as i64);
    // Horizontal pass into a float buffer, vertical pass back to bytes.
    let mut tmp = vec![0.0f64; (3 * w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, k) in kernel.iter().enumerate() {
                let sx = (x + ki as i64 - radius).clamp(0, w - 1);
                let p = img.pixel(sx as u32, y as u32);
                for ch in 0..3 {
                    acc[ch] += k * p[ch] as f64;
                }
            }
            let base = (3 * (y * w + x)) as usize;
            tmp[base..base + 3].copy_from_slice(&acc);
        }
    }
    let mut out = RasterImage::filled(img.width(), img.height(), [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (ki, k) in kernel.iter().enumerate() {
                let sy = (y + ki as i64 - radius).clamp(0, h - 1);
                let base = (3 * (sy * w + x)) as usize;
                for ch in 0..3 {
                    acc[ch] += k * tmp[base + ch];
                }
            }
            out.set_pixel(
                x as u32,
                y as u32,
                [clamp_u8(acc[0]), clamp_u8(acc[1]), clamp_u8(acc[2])],
            );
        }
    }
    out
}

/// Per-channel median over a k x k window with clamp-to-edge sampling.
pub fn median_blur(img: &RasterImage, k: u32) -> Result<RasterImage, VocError> {
    if k % 2 == 0 || k == 0 {
        return Err(VocError::Config(format!(
            "median kernel must be odd, got {k}"
        )));
    }
    let r = (k / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = RasterImage::filled(img.width(), img.height(), [0, 0, 0]);
    let mut window = vec![0u8; (k * k) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut rgb = [0u8; 3];
            for ch in 0..3 {
                let mut n = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = (x + dx).clamp(0, w - 1);
                        let sy = (y + dy).clamp(0, h - 1);
                        window[n] = img.pixel(sx as u32, sy as u32)[ch];
                        n += 1;
                    }
                }
                window[..n].sort_unstable();
                rgb[ch] = window[n / 2];
            }
            out.set_pixel(x as u32, y as u32, rgb);
        }
    }
    Ok(out)
}

/// Multiplies each channel by its gain, clamping to the byte range.
pub fn color_gain(img: &RasterImage, gains: [f64; 3]) -> RasterImage {
    let mut out = img.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v = clamp_u8(*v as f64 * gains[i % 3]);
    }
    out
}
