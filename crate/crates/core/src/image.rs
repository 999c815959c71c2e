//! Image tensors: 3 x H x W, values in [-1, 1].

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pixels: Array3<f64>,
}

impl ImageTensor {
    /// Builds an image from channel-major pixels, clamping into [-1, 1].
    pub fn new(mut pixels: Array3<f64>) -> Result<Self> {
        if pixels.dim().0 != 3 {
            return Err(Error::Shape(format!(
                "image must have 3 channels, got {}",
                pixels.dim().0
            )));
        }
        if pixels.dim().1 == 0 || pixels.dim().2 == 0 {
            return Err(Error::Shape("empty image".into()));
        }
        if !pixels.iter().all(|v| v.is_finite()) {
            return Err(Error::Shape("non-finite pixel".into()));
        }
        pixels.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        if !pixels.is_standard_layout() {
            pixels = pixels.as_standard_layout().to_owned();
        }
        Ok(Self { pixels })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            pixels: Array3::from_elem((3, height, width), value.clamp(-1.0, 1.0)),
        }
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    pub fn as_slice(&self) -> &[f64] {
        self.pixels.as_slice().expect("standard layout")
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn is_square(&self) -> bool {
        self.height() == self.width()
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.pixels.dim() == other.pixels.dim()
    }

    pub fn from_rgb8(img: &::image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut pixels = Array3::zeros((3, h as usize, w as usize));
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                pixels[[c, y as usize, x as usize]] = p.0[c] as f64 / 127.5 - 1.0;
            }
        }
        Self { pixels }
    }

    pub fn to_rgb8(&self) -> ::image::RgbImage {
        let (h, w) = (self.height(), self.width());
        ::image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let mut px = [0u8; 3];
            for (c, out) in px.iter_mut().enumerate() {
                let v = self.pixels[[c, y as usize, x as usize]];
                *out = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            }
            ::image::Rgb(px)
        })
    }

    /// Decodes a PNG or JPEG file.
    pub fn load(path: &Path) -> Result<Self> {
        let img = ::image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Writes a PNG file.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, ::image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    /// Pixel values quantized to 1e-9, hashed with SHA-256. Stable across
    /// platforms whose transcendental functions differ in the last ulp.
    pub fn checksum(&self) -> String {
        quantized_checksum(self.as_slice())
    }
}

pub(crate) fn quantized_checksum(values: &[f64]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for v in values {
        let q = (v * 1e9).round() as i64;
        hasher.update(q.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_and_validates() {
        let img = ImageTensor::new(Array3::from_elem((3, 2, 2), 3.0)).unwrap();
        assert!(img.pixels().iter().all(|&v| v == 1.0));
        assert!(ImageTensor::new(Array3::zeros((1, 2, 2))).is_err());
        let mut nan = Array3::zeros((3, 2, 2));
        nan[[0, 0, 0]] = f64::NAN;
        assert!(ImageTensor::new(nan).is_err());
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let mut px = Array3::zeros((3, 4, 6));
        for (i, v) in px.iter_mut().enumerate() {
            *v = (i as f64 / 72.0) * 2.0 - 1.0;
        }
        let img = ImageTensor::new(px).unwrap();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = ImageTensor::load(&path).unwrap();
        assert_eq!((back.height(), back.width()), (4, 6));
        let max = (back.pixels() - img.pixels()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1.0 / 127.5);
    }
}
