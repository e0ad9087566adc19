//! Floating-point raster images and the handful of geometric operations the
//! data pipeline needs. Pixels are `f64` in `[0, 1]`, stored row-major.

use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

/// Three-channel image, interleaved RGB, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

fn check_unit(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
        return Err(Error::Input(format!("pixel value {v} outside [0, 1]")));
    }
    Ok(())
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        check_unit(&pixels)?;
        Ok(GrayImage { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([to_u8(self.get(y as usize, x as usize))])
        });
        buf.save(path).map_err(|e| image_err(path, e))
    }

    /// Replicates the channel into an RGB image.
    pub fn to_color(&self) -> ColorImage {
        let data = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        ColorImage {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

impl ColorImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} RGB image",
                data.len()
            )));
        }
        check_unit(&data)?;
        Ok(ColorImage { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Luminance with weights 0.299 / 0.587 / 0.114.
    pub fn to_gray(&self) -> GrayImage {
        let pixels = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        GrayImage {
            height: self.height,
            width: self.width,
            pixels,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Ok(ColorImage {
            height: h as usize,
            width: w as usize,
            data,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            image::Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
        });
        buf.save(path).map_err(|e| image_err(path, e))
    }

    fn sample_bilinear(&self, y: f64, x: f64) -> [f64; 3] {
        let (h, w) = (self.height as isize, self.width as isize);
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let mut out = [0.0; 3];
        for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
                let yy = y0 as isize + dy;
                let xx = x0 as isize + dx;
                if yy < 0 || xx < 0 || yy >= h || xx >= w || wy * wx == 0.0 {
                    continue;
                }
                let p = self.pixel(yy as usize, xx as usize);
                for c in 0..3 {
                    out[c] += wy * wx * p[c];
                }
            }
        }
        out
    }

    /// Bilinear resize with half-pixel centres and edge clamping.
    pub fn resize(&self, height: usize, width: usize) -> ColorImage {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let max_y = (self.height - 1) as f64;
        let max_x = (self.width - 1) as f64;
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            for x in 0..width {
                let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                data.extend(self.sample_bilinear(src_y, src_x));
            }
        }
        ColorImage { height, width, data }
    }

    /// Rotates about the image centre by `degrees` (counter-clockwise),
    /// filling uncovered pixels with zero.
    pub fn rotate(&self, degrees: f64) -> ColorImage {
        let (sin, cos) = degrees.to_radians().sin_cos();
        let cy = (self.height as f64 - 1.0) / 2.0;
        let cx = (self.width as f64 - 1.0) / 2.0;
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                // inverse mapping: rotate the destination back into the source
                let sx = cos * dx - sin * dy + cx;
                let sy = sin * dx + cos * dy + cy;
                data.extend(self.sample_bilinear(sy, sx));
            }
        }
        ColorImage {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Zero-pads every side by `pad` pixels and crops a window of the
    /// original size whose top-left corner is `(top, left)` in padded coordinates.
    pub fn pad_crop(&self, pad: usize, top: usize, left: usize) -> ColorImage {
        assert!(top <= 2 * pad && left <= 2 * pad, "crop window outside padded image");
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let sy = (y + top) as isize - pad as isize;
                let sx = (x + left) as isize - pad as isize;
                if sy < 0 || sx < 0 || sy >= self.height as isize || sx >= self.width as isize {
                    data.extend([0.0; 3]);
                } else {
                    data.extend(self.pixel(sy as usize, sx as usize));
                }
            }
        }
        ColorImage {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Multiplies every value by `factor`, clamping to `[0, 1]`.
    pub fn adjust_brightness(&self, factor: f64) -> ColorImage {
        ColorImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect(),
        }
    }

    /// Blends with the mean luminance: `mean + factor * (v - mean)`, clamped.
    pub fn adjust_contrast(&self, factor: f64) -> ColorImage {
        let gray = self.to_gray();
        let mean = gray.pixels.iter().sum::<f64>() / gray.pixels.len() as f64;
        ColorImage {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|v| (mean + factor * (v - mean)).clamp(0.0, 1.0))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> ColorImage {
        ColorImage::from_fn(6, 8, |y, x| {
            let v = (y * 8 + x) as f64 / 47.0;
            [v, 1.0 - v, 0.5]
        })
        .unwrap()
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(GrayImage::new(1, 2, vec![0.5, 1.5]).is_err());
        assert!(GrayImage::new(1, 2, vec![0.5, f64::NAN]).is_err());
        assert!(matches!(GrayImage::new(2, 2, vec![0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_rotation_and_centred_crop_are_identity() {
        let img = ramp();
        let r = img.rotate(0.0);
        for (a, b) in r.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(img.pad_crop(10, 10, 10), img);
    }

    #[test]
    fn pad_crop_shifts() {
        let img = ramp();
        let shifted = img.pad_crop(2, 2, 3);
        assert_eq!(shifted.pixel(0, 0), img.pixel(0, 1));
        assert_eq!(shifted.pixel(0, 7), [0.0; 3]);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ramp();
        assert_eq!(img.resize(6, 8), img);
        let c = ColorImage::from_fn(5, 7, |_, _| [0.25, 0.5, 0.75]).unwrap();
        let r = c.resize(16, 9);
        assert_eq!((r.height(), r.width()), (16, 9));
        for p in r.data().chunks(3) {
            assert!((p[0] - 0.25).abs() < 1e-12 && (p[2] - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn luminance_weights() {
        let c = ColorImage::from_fn(1, 1, |_, _| [1.0, 0.0, 0.0]).unwrap();
        assert!((c.to_gray().get(0, 0) - 0.299).abs() < 1e-15);
    }

    #[test]
    fn rotate_quarter_turn() {
        let img = ColorImage::from_fn(3, 3, |y, x| if (y, x) == (0, 1) { [1.0; 3] } else { [0.0; 3] }).unwrap();
        let r = img.rotate(90.0);
        // counter-clockwise: top-centre moves to middle-left
        assert!((r.pixel(1, 0)[0] - 1.0).abs() < 1e-9);
    }
}
