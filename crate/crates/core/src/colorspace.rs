//! HSI conversion, intensity equalization, the Gaussian location prior,
//! resampling, and assembly of the 3- or 5-channel network input.

use std::f64::consts::{FRAC_PI_3, TAU};

use crate::dataio::RgbImage;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::unet::GeometryPlan;

/// Single-channel raster of finite reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Plane {
        assert_eq!(data.len(), width * height, "plane data length");
        Plane { width, height, data }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Plane {
        Plane::from_vec(width, height, vec![v; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Plane {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Plane {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let data = resample_bilinear(&self.data, self.width, self.height, 1, width, height);
        Plane::from_vec(width, height, data)
    }
}

/// Hue/saturation/intensity raster; hue stored as angle / 2π in `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl HsiImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn intensity(&self) -> Plane {
        Plane::from_vec(self.width, self.height, self.data.chunks_exact(3).map(|p| p[2]).collect())
    }

    /// Replaces the intensity channel, keeping hue and saturation verbatim.
    pub fn with_intensity(&self, i: &Plane) -> HsiImage {
        assert_eq!((self.width, self.height), i.dims());
        let mut data = self.data.clone();
        for (px, &v) in data.chunks_exact_mut(3).zip(i.data()) {
            px[2] = v;
        }
        HsiImage { width: self.width, height: self.height, data }
    }
}

pub fn rgb_to_hsi_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    let i = (r + g + b) / 3.0;
    let min = r.min(g).min(b);
    let s = if i > 0.0 { (1.0 - min / i).max(0.0) } else { 0.0 };
    if s == 0.0 {
        return [0.0, 0.0, i];
    }
    let num = 0.5 * ((r - g) + (r - b));
    let den = ((r - g) * (r - g) + (r - b) * (g - b)).sqrt();
    if den == 0.0 {
        return [0.0, s, i];
    }
    let theta = (num / den).clamp(-1.0, 1.0).acos();
    let mut h = theta / TAU;
    if b > g {
        h = 1.0 - h;
    }
    if h >= 1.0 {
        h = 0.0;
    }
    [h, s, i]
}

pub fn hsi_to_rgb_pixel([h, s, i]: [f64; 3]) -> [f64; 3] {
    let angle = h.rem_euclid(1.0) * TAU;
    let sector = 2.0 * FRAC_PI_3;
    // Each 120° sector holds one channel at i(1-s) and derives the next from the hue.
    let (k, local) = if angle < sector {
        (0, angle)
    } else if angle < 2.0 * sector {
        (1, angle - sector)
    } else {
        (2, angle - 2.0 * sector)
    };
    let low = i * (1.0 - s);
    let lead = i * (1.0 + s * local.cos() / (FRAC_PI_3 - local).cos());
    let third = 3.0 * i - (low + lead);
    let rgb = match k {
        0 => [lead, third, low],
        1 => [low, lead, third],
        _ => [third, low, lead],
    };
    rgb.map(|v| v.clamp(0.0, 1.0))
}

pub fn rgb_to_hsi(img: &RgbImage) -> HsiImage {
    let data = img.pixels().flat_map(rgb_to_hsi_pixel).collect();
    HsiImage { width: img.width(), height: img.height(), data }
}

pub fn hsi_to_rgb(img: &HsiImage) -> RgbImage {
    let data = img.data.chunks_exact(3).flat_map(|p| hsi_to_rgb_pixel([p[0], p[1], p[2]])).collect();
    RgbImage::from_clamped(img.width, img.height, data)
}

/// Histogram equalization: each value maps to the inclusive normalized
/// cumulative count of its bin.
pub fn equalize_plane(p: &Plane, bins: usize) -> Plane {
    assert!(bins >= 1, "at least one bin");
    let bin_of = |v: f64| ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
    let mut hist = vec![0usize; bins];
    for &v in p.data() {
        hist[bin_of(v)] += 1;
    }
    let n = p.data().len() as f64;
    let mut cdf = vec![0.0; bins];
    let mut acc = 0usize;
    for (c, h) in cdf.iter_mut().zip(&hist) {
        acc += h;
        *c = acc as f64 / n;
    }
    Plane::from_vec(p.width, p.height, p.data().iter().map(|&v| cdf[bin_of(v)]).collect())
}

/// Unit-peak Gaussian centered on the plane with the given full width at half maximum.
pub fn gaussian_plane(width: usize, height: usize, fwhm: f64) -> Plane {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let k = 4.0 * std::f64::consts::LN_2 / (fwhm * fwhm);
    Plane::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        (-k * (dx * dx + dy * dy)).exp()
    })
}

/// Target dimensions when scaling so the larger side equals `target`
/// (minor side rounded half up).
pub fn scaled_dims(width: usize, height: usize, target: usize) -> (usize, usize) {
    let minor = |m: usize, major: usize| ((2 * m * target + major) / (2 * major)).max(1);
    if width >= height {
        (target, minor(height, width))
    } else {
        (minor(width, height), target)
    }
}

pub fn rescale_max_dim(img: &RgbImage, target: usize) -> RgbImage {
    let (w, h) = scaled_dims(img.width(), img.height(), target);
    resize_rgb(img, w, h)
}

pub fn resize_rgb(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    if (width, height) == img.dims() {
        return img.clone();
    }
    let data = resample_bilinear(img.data(), img.width(), img.height(), 3, width, height);
    RgbImage::from_clamped(width, height, data)
}

/// Bilinear resampling of an interleaved raster, sampling at pixel centers
/// and replicating edges.
pub fn resample_bilinear(src: &[f64], sw: usize, sh: usize, channels: usize, dw: usize, dh: usize) -> Vec<f64> {
    let (fx, fy) = (sw as f64 / dw as f64, sh as f64 / dh as f64);
    let coord = |d: usize, f: f64, n: usize| {
        let s = ((d as f64 + 0.5) * f - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..dw).map(|x| coord(x, fx, sw)).collect();
    let mut out = vec![0.0; dw * dh * channels];
    Exec::default().for_each_chunk_mut(&mut out, dw * channels, |y, row| {
        let (y0, y1, ty) = coord(y, fy, sh);
        for (x, &(x0, x1, tx)) in cols.iter().enumerate() {
            for c in 0..channels {
                let at = |xx: usize, yy: usize| src[(yy * sw + xx) * channels + c];
                let top = at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx;
                let bot = at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx;
                row[x * channels + c] = top * (1.0 - ty) + bot * ty;
            }
        }
    });
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputMode {
    /// Plain RGB, no enhancement.
    Raw1A,
    /// Equalized RGB + normalized intensity + Gaussian prior.
    Enhanced1B,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::Raw1A => 3,
            InputMode::Enhanced1B => 5,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            InputMode::Raw1A => "1a",
            InputMode::Enhanced1B => "1b",
        }
    }

    pub fn from_tag(s: &str) -> Option<InputMode> {
        match s.to_ascii_lowercase().as_str() {
            "1a" => Some(InputMode::Raw1A),
            "1b" => Some(InputMode::Enhanced1B),
            _ => None,
        }
    }
}

/// How network pixels map back onto the source image.
///
/// The rescaled image sits at `image_origin` inside a square content
/// canvas of side `content`; the content canvas sits at `content_origin`
/// inside the `canvas`-sized network input; the network output of side
/// `output_size` covers the input from `(canvas - output_size) / 2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputGeometry {
    pub original: (usize, usize),
    pub rescaled: (usize, usize),
    pub content: usize,
    pub image_origin: (usize, usize),
    pub canvas: usize,
    pub content_origin: usize,
    pub output_size: usize,
    /// Offset of the content canvas inside the network output.
    pub output_crop: usize,
}

impl InputGeometry {
    /// Rectangle `(x, y, w, h)` of the rescaled image in network-output coordinates.
    pub fn image_rect_in_output(&self) -> (usize, usize, usize, usize) {
        (
            self.output_crop + self.image_origin.0,
            self.output_crop + self.image_origin.1,
            self.rescaled.0,
            self.rescaled.1,
        )
    }

    /// Rescaled-image pixel seen by output pixel `(u, v)`, if it is not padding.
    pub fn output_to_image(&self, u: usize, v: usize) -> Option<(usize, usize)> {
        let (x0, y0, w, h) = self.image_rect_in_output();
        (u >= x0 && v >= y0 && u < x0 + w && v < y0 + h).then(|| (u - x0, v - y0))
    }
}

/// Channel-major (C×S×S) network input plus its geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct NetInput {
    pub channels: usize,
    pub size: usize,
    pub data: Vec<f64>,
    pub geometry: InputGeometry,
}

impl NetInput {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Builds the network input for an image already scaled to the content size.
pub fn assemble_input(img: &RgbImage, mode: InputMode, plan: &GeometryPlan, fwhm: f64) -> Result<NetInput> {
    let t = plan.target;
    let (rw, rh) = img.dims();
    if rw > t || rh > t {
        return Err(Error::DimensionMismatch(format!("{rw}x{rh} image does not fit the {t}px content canvas")));
    }
    let s = plan.input_size;
    let image_origin = ((t - rw) / 2, (t - rh) / 2);
    let geometry = InputGeometry {
        original: (rw, rh),
        rescaled: (rw, rh),
        content: t,
        image_origin,
        canvas: s,
        content_origin: plan.content_origin,
        output_size: plan.output_size,
        output_crop: plan.output_crop,
    };

    let mut planes: Vec<Plane> = match mode {
        InputMode::Raw1A => (0..3).map(|c| img.channel(c)).collect(),
        InputMode::Enhanced1B => {
            let hsi = rgb_to_hsi(img);
            let intensity = hsi.intensity();
            let equalized = hsi_to_rgb(&hsi.with_intensity(&equalize_plane(&intensity, 256)));
            let mut planes: Vec<Plane> = (0..3).map(|c| equalized.channel(c)).collect();
            planes.push(min_max_normalize(&intensity));
            planes
        }
    };

    let ox = plan.content_origin + image_origin.0;
    let oy = plan.content_origin + image_origin.1;
    let mut data = Vec::with_capacity(mode.channels() * s * s);
    for p in planes.drain(..) {
        let mut canvas = vec![1.0; s * s];
        for y in 0..rh {
            let dst = (oy + y) * s + ox;
            canvas[dst..dst + rw].copy_from_slice(&p.data()[y * rw..(y + 1) * rw]);
        }
        data.extend(canvas);
    }
    if mode == InputMode::Enhanced1B {
        data.extend(gaussian_plane(s, s, fwhm).into_vec());
    }
    Ok(NetInput { channels: mode.channels(), size: s, data, geometry })
}

/// Rescales to the content size, then assembles; geometry remembers the original size.
pub fn prepare_input(img: &RgbImage, mode: InputMode, plan: &GeometryPlan, fwhm: f64) -> Result<NetInput> {
    let scaled = rescale_max_dim(img, plan.target);
    let mut input = assemble_input(&scaled, mode, plan, fwhm)?;
    input.geometry.original = img.dims();
    Ok(input)
}

/// Per-image min-max normalization; a constant plane maps to zeros.
pub fn min_max_normalize(p: &Plane) -> Plane {
    let (lo, hi) = p.min_max();
    if !(hi > lo) {
        return Plane::filled(p.width, p.height, 0.0);
    }
    Plane::from_vec(p.width, p.height, p.data().iter().map(|&v| (v - lo) / (hi - lo)).collect())
}
