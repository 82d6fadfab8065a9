//! Float image container and PNG import/export.

use std::path::Path;

use image::{DynamicImage, ImageBuffer as RawBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Luma weights used by [`ImageBuffer::to_grayscale`].
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Row-major, channel-interleaved intensity grid.
///
/// Values are nominally in `[0, 1]` but are never clamped until export: an
/// optimizer iterate is allowed to leave the range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Bit depth used when writing PNG files.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("empty image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Dimension(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite intensity at index {i}")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image filled with `value`.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self {
            width,
            height,
            channels: 1,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Single-channel image from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    /// Single-channel image from raw data; panics on a length mismatch.
    pub fn gray(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "data length mismatch");
        Self {
            width,
            height,
            channels: 1,
            data,
        }
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

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Pixel value of a single-channel image.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        debug_assert_eq!(self.channels, 1);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        debug_assert_eq!(self.channels, 1);
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Extract channel `c` as a single-channel image.
    pub fn channel(&self, c: usize) -> ImageBuffer {
        assert!(c < self.channels, "channel {c} out of range");
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Self::gray(self.width, self.height, data)
    }

    /// Interleave equally sized single-channel planes.
    pub fn from_channels(planes: &[ImageBuffer]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Dimension("no channels".into()))?;
        if planes.iter().any(|p| p.channels != 1 || p.dims() != first.dims()) {
            return Err(Error::Dimension("channel planes differ in shape".into()));
        }
        let n = first.width * first.height;
        let mut data = Vec::with_capacity(n * planes.len());
        for i in 0..n {
            data.extend(planes.iter().map(|p| p.data[i]));
        }
        Self::new(first.width, first.height, planes.len(), data)
    }

    /// Luma conversion with the 0.299/0.587/0.114 weights; grayscale input is
    /// returned unchanged.
    pub fn to_grayscale(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
            .collect();
        Self::gray(self.width, self.height, data)
    }

    /// Copy of the rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<ImageBuffer> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Dimension(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Self::new(w, h, c, data)
    }

    /// Center crop to the largest power-of-two square that fits.
    pub fn center_crop_pow2(&self) -> ImageBuffer {
        let side = largest_pow2_at_most(self.width.min(self.height));
        let x0 = (self.width - side) / 2;
        let y0 = (self.height - side) / 2;
        self.crop(x0, y0, side, side).expect("crop inside bounds")
    }

    /// SHA-256 over dimensions and the little-endian bit patterns of the data.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        h.update((self.channels as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let color = img.color();
        let gray = !color.has_color();
        let sixteen = color.bytes_per_pixel() / color.channel_count() > 1;
        match (gray, sixteen) {
            (true, false) => {
                let buf = img.to_luma8();
                Self::gray(w, h, buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
            }
            (true, true) => {
                let buf = img.to_luma16();
                Self::gray(w, h, buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
            }
            (false, false) => {
                let buf = img.to_rgb8();
                let data = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
                Self::new(w, h, 3, data).expect("rgb8 layout")
            }
            (false, true) => {
                let buf = img.to_rgb16();
                let data = buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
                Self::new(w, h, 3, data).expect("rgb16 layout")
            }
        }
    }

    /// Write a PNG, clamping to `[0, 1]` and quantizing to the requested depth.
    pub fn save_png(&self, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = (self.width as u32, self.height as u32);
        let dynamic = match (self.channels, depth) {
            (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
                RawBuffer::<Luma<u8>, _>::from_raw(w, h, self.quantize(255.0)).expect("layout"),
            ),
            (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
                RawBuffer::<Luma<u16>, _>::from_raw(w, h, self.quantize(65535.0)).expect("layout"),
            ),
            (_, BitDepth::Eight) => DynamicImage::ImageRgb8(
                RawBuffer::<Rgb<u8>, _>::from_raw(w, h, self.quantize(255.0)).expect("layout"),
            ),
            (_, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
                RawBuffer::<Rgb<u16>, _>::from_raw(w, h, self.quantize(65535.0)).expect("layout"),
            ),
        };
        dynamic.save(path).map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })
    }

    fn quantize<T: TryFrom<u32>>(&self, max: f64) -> Vec<T>
    where
        T::Error: std::fmt::Debug,
    {
        self.data
            .iter()
            .map(|v| T::try_from((v.clamp(0.0, 1.0) * max).round() as u32).expect("in range"))
            .collect()
    }
}

pub(crate) fn largest_pow2_at_most(n: usize) -> usize {
    assert!(n > 0);
    1 << (usize::BITS - 1 - n.leading_zeros())
}

/// Policy for inputs whose side is not a power of two.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizePolicy {
    #[default]
    CenterCrop,
    Reject,
}

/// Grayscale conversion plus power-of-two squaring under `policy`.
pub fn prepare_square(img: &ImageBuffer, policy: ResizePolicy) -> Result<ImageBuffer> {
    let gray = img.to_grayscale();
    let (w, h) = gray.dims();
    if w == h && w.is_power_of_two() {
        return Ok(gray);
    }
    match policy {
        ResizePolicy::CenterCrop => Ok(gray.center_crop_pow2()),
        ResizePolicy::Reject => Err(Error::Dimension(format!(
            "{w}x{h} is not a power-of-two square"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_weights() {
        let red = ImageBuffer::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        assert!((red.to_grayscale().data()[0] - 0.299).abs() < 1e-15);
        let mid = ImageBuffer::new(1, 1, 3, vec![0.5, 0.5, 0.5]).unwrap();
        assert!((mid.to_grayscale().data()[0] - 0.5).abs() < 1e-15);
        let g = ImageBuffer::from_fn(4, 3, |x, y| (x + y) as f64 / 10.0);
        assert_eq!(g.to_grayscale(), g);
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(ImageBuffer::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageBuffer::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ImageBuffer::new(0, 1, 1, vec![]).is_err());
    }

    #[test]
    fn center_crop_and_policy() {
        let img = ImageBuffer::from_fn(70, 40, |x, y| (x * 100 + y) as f64);
        let c = img.center_crop_pow2();
        assert_eq!(c.dims(), (32, 32));
        assert_eq!(c.at(0, 0), img.at(19, 4));
        assert!(prepare_square(&img, ResizePolicy::Reject).is_err());
        assert_eq!(prepare_square(&img, ResizePolicy::CenterCrop).unwrap().dims(), (32, 32));
    }

    #[test]
    fn png_round_trip_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = ImageBuffer::from_fn(8, 5, |x, y| (x * 5 + y) as f64 / 40.0);
        img.save_png(&path, BitDepth::Sixteen).unwrap();
        let back = ImageBuffer::load_png(&path).unwrap();
        assert_eq!(back.dims(), (8, 5));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }

    #[test]
    fn png_export_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        let img = ImageBuffer::gray(2, 1, vec![-0.3, 1.7]);
        img.save_png(&path, BitDepth::Eight).unwrap();
        let back = ImageBuffer::load_png(&path).unwrap();
        assert_eq!(back.data(), &[0.0, 1.0]);
    }

    #[test]
    fn channel_split_merge() {
        let img = ImageBuffer::new(2, 1, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let planes: Vec<_> = (0..3).map(|c| img.channel(c)).collect();
        assert_eq!(planes[1].data(), &[0.2, 0.5]);
        assert_eq!(ImageBuffer::from_channels(&planes).unwrap(), img);
    }
}
