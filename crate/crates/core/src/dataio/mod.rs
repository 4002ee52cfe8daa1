//! Raster types, image/mask file I/O, dataset catalogs, fold plans and the
//! synthetic lesion generator.

mod catalog;
mod folds;
mod synth;

use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage as Rgb8Image};

use crate::colorspace::Plane;
use crate::error::{Error, Result};

pub use catalog::{scan_catalog, DatasetCatalog, Sample};
pub use folds::{make_folds, Fold, FoldPlan};
pub use synth::{synth_lesion, synth_lesion_full, SynthSample, SynthSpec};

/// Luminance weights used wherever a scalar "darkness" is needed.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

pub fn luma(rgb: [f64; 3]) -> f64 {
    LUMA_WEIGHTS[0] * rgb[0] + LUMA_WEIGHTS[1] * rgb[1] + LUMA_WEIGHTS[2] * rgb[2]
}

/// Interleaved RGB raster with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image must be non-empty, got {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} rgb image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("channel value {v} outside [0,1]")));
        }
        Ok(RgbImage { width, height, data })
    }

    /// Builds an image without range checks; values are clamped into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * 3);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        RgbImage { width, height, data }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RgbImage::from_clamped(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for (dst, v) in self.data[i..i + 3].iter_mut().zip(rgb) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// One channel as a plane.
    pub fn channel(&self, c: usize) -> Plane {
        let data = self.data.chunks_exact(3).map(|p| p[c]).collect();
        Plane::from_vec(self.width, self.height, data)
    }

    pub fn luminance(&self) -> Plane {
        let data = self.pixels().map(luma).collect();
        Plane::from_vec(self.width, self.height, data)
    }
}

/// Boolean lesion mask; `true` marks lesion pixels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} mask needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(BinaryMask { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask { width, height, data: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryMask { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> BinaryMask {
        assert_eq!(self.dims(), other.dims());
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && !b).collect();
        BinaryMask { width: self.width, height: self.height, data }
    }

    pub fn intersects(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).any(|(&a, &b)| a && b)
    }

    /// Nearest-neighbour resampling to `width`×`height`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> BinaryMask {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        BinaryMask::from_fn(width, height, |x, y| {
            let u = (((x as f64 + 0.5) * sx) as usize).min(self.width - 1);
            let v = (((y as f64 + 0.5) * sy) as usize).min(self.height - 1);
            self.get(u, v)
        })
    }
}

/// Loads an 8-bit image and scales channels by `1/255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Decode { path: path.to_path_buf(), message: e.to_string() })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    RgbImage::new(w, h, data)
}

/// Loads a mask raster; gray levels `>= 128` count as lesion.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Decode { path: path.to_path_buf(), message: e.to_string() })?;
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.into_raw().into_iter().map(|v| v >= 128).collect();
    BinaryMask::new(w, h, data)
}

/// Writes a single-channel 8-bit PNG: lesion 255, background 0.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = GrayImage::new(mask.width as u32, mask.height as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        *px = Luma([if mask.data[i] { 255 } else { 0 }]);
    }
    out.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Encode { path: path.to_path_buf(), message: e.to_string() })
}

/// Writes an RGB image as 8-bit PNG, rounding to the nearest level.
pub fn save_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Rgb8Image::new(img.width as u32, img.height as u32);
    for (i, px) in out.pixels_mut().enumerate() {
        let p = &img.data[i * 3..i * 3 + 3];
        let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        *px = Rgb([q(p[0]), q(p[1]), q(p[2])]);
    }
    out.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Encode { path: path.to_path_buf(), message: e.to_string() })
}
