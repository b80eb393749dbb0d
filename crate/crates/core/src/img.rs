//! Grayscale/RGB raster images with values in `[0, 1]`.
//!
//! PNG I/O is 8-bit (values scaled by 255); the shared tensor format
//! ([`crate::tensor`]) is used when lossless round trips are needed.

use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

const MODULE: &str = "img";
/// Constructors accept values this far outside [0, 1] and clamp them, so that
/// downstream float noise (e.g. warp normalization) does not hard-fail.
const VALUE_SLACK: f64 = 1e-6;

/// Channel-major raster image, all values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    /// Layout `[c][y][x]`, row-major within a channel.
    data: Vec<f64>,
}

impl Image {
    /// All-zero image; `channels` must be 1 or 3.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        validate_dims(width, height, channels)?;
        Ok(Image {
            width,
            height,
            channels,
            data: vec![0.0; channels * width * height],
        })
    }

    /// Wraps a `[c][y][x]` buffer, clamping values within [`VALUE_SLACK`] of
    /// the valid range and rejecting anything further out.
    pub fn from_data(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        validate_dims(width, height, channels)?;
        ensure!(
            data.len() == channels * width * height,
            MODULE,
            "buffer holds {} values, expected {}x{}x{}={}",
            data.len(),
            channels,
            height,
            width,
            channels * width * height
        );
        for v in &mut data {
            ensure!(v.is_finite(), MODULE, "non-finite pixel value {v}");
            ensure!(
                *v >= -VALUE_SLACK && *v <= 1.0 + VALUE_SLACK,
                MODULE,
                "pixel value {v} outside [0, 1]"
            );
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
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

    pub fn at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// One channel as a contiguous `height * width` slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Mean absolute difference against another image of identical shape.
    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        ensure!(
            self.width == other.width && self.height == other.height && self.channels == other.channels,
            MODULE,
            "shape mismatch {}x{}x{} vs {}x{}x{}",
            self.channels,
            self.height,
            self.width,
            other.channels,
            other.height,
            other.width
        );
        let n = self.data.len().max(1);
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n as f64)
    }

    /// Converts to a `[C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.channels, self.height, self.width], self.data.clone())
            .expect("image dims are valid tensor dims")
    }

    /// Builds an image from a `[C, H, W]` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        ensure!(
            t.dims().len() == 3,
            MODULE,
            "expected rank-3 [C, H, W] tensor, got dims {:?}",
            t.dims()
        );
        let (c, h, w) = (t.dims()[0], t.dims()[1], t.dims()[2]);
        Image::from_data(w, h, c, t.data().to_vec())
    }

    /// Writes an 8-bit PNG (grayscale or RGB depending on channel count).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let quantize = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        match self.channels {
            1 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
                let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
                    .expect("buffer sized from dims");
                img.save(path).map_err(|e| Error::image(MODULE, path, e))
            }
            3 => {
                let plane = self.width * self.height;
                let mut buf = Vec::with_capacity(3 * plane);
                for i in 0..plane {
                    for c in 0..3 {
                        buf.push(quantize(self.data[c * plane + i]));
                    }
                }
                let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, buf)
                    .expect("buffer sized from dims");
                img.save(path).map_err(|e| Error::image(MODULE, path, e))
            }
            _ => unreachable!("constructors only allow 1 or 3 channels"),
        }
    }

    /// Loads an 8-bit PNG; grayscale files become 1-channel, everything else
    /// 3-channel.
    pub fn load_png(path: &Path) -> Result<Self> {
        let dynimg = image::ImageReader::open(path)
            .map_err(|e| Error::io(MODULE, path, e))?
            .decode()
            .map_err(|e| Error::image(MODULE, path, e))?;
        let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
        match dynimg {
            image::DynamicImage::ImageLuma8(g) => {
                let data: Vec<f64> = g.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
                Image::from_data(w, h, 1, data)
            }
            other => {
                let rgb = other.into_rgb8();
                let raw = rgb.into_raw();
                let plane = w * h;
                let mut data = vec![0.0; 3 * plane];
                for i in 0..plane {
                    for c in 0..3 {
                        data[c * plane + i] = raw[3 * i + c] as f64 / 255.0;
                    }
                }
                Image::from_data(w, h, 3, data)
            }
        }
    }
}

fn validate_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    ensure!(
        width > 0 && height > 0,
        MODULE,
        "resolution {width}x{height} must be positive"
    );
    ensure!(
        channels == 1 || channels == 3,
        MODULE,
        "channel count {channels} not in {{1, 3}}"
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(Image::from_data(2, 1, 1, vec![0.5, 1.5]).is_err());
        assert!(Image::from_data(2, 1, 1, vec![f64::NAN, 0.0]).is_err());
        // Tiny float noise is clamped, not rejected.
        let img = Image::from_data(2, 1, 1, vec![1.0 + 1e-9, -1e-9]).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0]);
    }

    #[test]
    fn png_round_trip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let data: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        let img = Image::from_data(4, 4, 1, data).unwrap();
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.channels(), 1);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rgb_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let mut img = Image::zeros(2, 2, 3).unwrap();
        img.set(0, 0, 0, 1.0);
        img.set(1, 1, 0, 0.5);
        img.set(2, 0, 1, 0.25);
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.channels(), 3);
        assert!((back.at(0, 0, 0) - 1.0).abs() < 1e-6);
        assert!((back.at(1, 1, 0) - 0.5).abs() < 2.0 / 255.0);
        assert!((back.at(2, 0, 1) - 0.25).abs() < 2.0 / 255.0);
    }

    #[test]
    fn tensor_round_trip_is_lossless() {
        let data: Vec<f64> = (0..12).map(|i| (i as f64) / 16.0).collect();
        let img = Image::from_data(4, 3, 1, data).unwrap();
        let t = img.to_tensor();
        assert_eq!(t.dims(), &[1, 3, 4]);
        let back = Image::from_tensor(&t).unwrap();
        assert_eq!(back, img);
    }
}
