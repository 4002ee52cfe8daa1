//! Synthetic dermoscopy-like images with exact ground truth.
//!
//! Noise and hair strokes draw from separate ChaCha streams, so the same
//! spec with `hair_count = 0` replays the identical noise field. That is
//! what lets tests compare a hairy image against its hairless twin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BinaryMask, RgbImage};
use crate::error::{Error, Result};

const NOISE_STREAM: u64 = 0;
const HAIR_STREAM: u64 = 1;
const VIGNETTE_GAIN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    /// Ellipse center in pixel coordinates.
    pub center: (f64, f64),
    /// Semi-axes along the rotated x and y directions.
    pub axes: (f64, f64),
    /// Rotation in radians.
    pub rotation: f64,
    pub lesion_color: [f64; 3],
    pub skin_color: [f64; 3],
    pub noise_sigma: f64,
    pub hair_count: usize,
    pub hair_width: f64,
    pub vignette: bool,
    pub seed: u64,
}

impl SynthSpec {
    /// A randomized but well-posed lesion on a `size`×`size` canvas.
    ///
    /// The ellipse always fits inside the inscribed circle, so a vignette
    /// never darkens the lesion.
    pub fn random(seed: u64, size: usize, hair_count: usize, vignette: bool) -> SynthSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1e5e);
        let s = size as f64;
        let a = rng.gen_range(0.16..0.28) * s;
        let b = a * rng.gen_range(0.6..1.0);
        let mid = (s - 1.0) / 2.0;
        let jitter = 0.05 * s;
        let center = (mid + rng.gen_range(-jitter..jitter), mid + rng.gen_range(-jitter..jitter));
        let lesion_color =
            [0.36 + rng.gen_range(-0.06..0.06), 0.22 + rng.gen_range(-0.05..0.05), 0.16 + rng.gen_range(-0.04..0.04)];
        let skin_color =
            [0.88 + rng.gen_range(-0.05..0.05), 0.70 + rng.gen_range(-0.05..0.05), 0.60 + rng.gen_range(-0.05..0.05)];
        SynthSpec {
            width: size,
            height: size,
            center,
            axes: (a, b),
            rotation: rng.gen_range(0.0..std::f64::consts::PI),
            lesion_color,
            skin_color,
            noise_sigma: 0.01,
            hair_count,
            hair_width: 1.5,
            vignette,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("synthetic canvas must be non-empty"));
        }
        let (a, b) = self.axes;
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::invalid(format!("ellipse axes must be positive, got {a},{b}")));
        }
        let colors = self.lesion_color.iter().chain(&self.skin_color);
        if colors.clone().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("synthetic colors must lie in [0,1]"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.hair_width > 0.0) {
            return Err(Error::invalid("noise sigma must be >= 0 and hair width > 0"));
        }
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let ex = (a * a * c * c + b * b * s * s).sqrt();
        let ey = (a * a * s * s + b * b * c * c).sqrt();
        let (cx, cy) = self.center;
        let fits = cx - ex >= 0.0
            && cy - ey >= 0.0
            && cx + ex <= (self.width - 1) as f64
            && cy + ey <= (self.height - 1) as f64;
        if !fits {
            return Err(Error::invalid("ellipse exceeds the canvas"));
        }
        Ok(())
    }

    /// Whether pixel center `(x, y)` lies inside the lesion ellipse.
    pub fn inside_ellipse(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (c, s) = (self.rotation.cos(), self.rotation.sin());
        let u = (dx * c + dy * s) / self.axes.0;
        let v = (-dx * s + dy * c) / self.axes.1;
        u * u + v * v <= 1.0
    }
}

/// Everything the generator knows about one sample.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub image: RgbImage,
    pub mask: BinaryMask,
    /// Pixels painted by hair strokes.
    pub hair_mask: BinaryMask,
    /// The same image rendered without hair (identical noise).
    pub hairless: RgbImage,
}

pub fn synth_lesion(spec: &SynthSpec) -> Result<(RgbImage, BinaryMask)> {
    let s = synth_lesion_full(spec)?;
    Ok((s.image, s.mask))
}

pub fn synth_lesion_full(spec: &SynthSpec) -> Result<SynthSample> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mask = BinaryMask::from_fn(w, h, |x, y| spec.inside_ellipse(x as f64, y as f64));

    let mut base = vec![0.0; w * h * 3];
    for (i, &inside) in mask.data().iter().enumerate() {
        let col = if inside { spec.lesion_color } else { spec.skin_color };
        base[i * 3..i * 3 + 3].copy_from_slice(&col);
    }

    let hair_mask = draw_hairs(spec);
    let mut hairy = base.clone();
    let hair_colors = hair_palette(spec);
    for (i, &on) in hair_mask.data().iter().enumerate() {
        if on {
            hairy[i * 3..i * 3 + 3].copy_from_slice(&hair_colors);
        }
    }

    let finish = |mut px: Vec<f64>| {
        add_noise(spec, &mut px);
        if spec.vignette {
            apply_vignette(spec, &mut px);
        }
        RgbImage::from_clamped(w, h, px)
    };
    Ok(SynthSample { image: finish(hairy), hairless: finish(base), mask, hair_mask })
}

fn hair_palette(spec: &SynthSpec) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(HAIR_STREAM + 1);
    let k = rng.gen_range(0.7..1.3);
    [0.12 * k, 0.08 * k, 0.06 * k]
}

fn add_noise(spec: &SynthSpec, px: &mut [f64]) {
    if spec.noise_sigma == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(NOISE_STREAM);
    let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
    for v in px.iter_mut() {
        *v += normal.sample(&mut rng);
    }
}

fn apply_vignette(spec: &SynthSpec, px: &mut [f64]) {
    let (w, h) = (spec.width, spec.height);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let r = w.min(h) as f64 / 2.0;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if dx * dx + dy * dy > r * r {
                let i = (y * w + x) * 3;
                for v in &mut px[i..i + 3] {
                    *v = v.clamp(0.0, 1.0) * VIGNETTE_GAIN;
                }
            }
        }
    }
}

/// Rasterizes `hair_count` random quadratic Bézier strokes.
fn draw_hairs(spec: &SynthSpec) -> BinaryMask {
    let (w, h) = (spec.width, spec.height);
    let mut mask = BinaryMask::empty(w, h);
    if spec.hair_count == 0 {
        return mask;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(HAIR_STREAM);
    let (fw, fh) = (w as f64, h as f64);
    let size = fw.max(fh);
    let radius = (spec.hair_width / 2.0).max(0.6);
    for _ in 0..spec.hair_count {
        let p0 = (rng.gen_range(0.0..fw), rng.gen_range(0.0..fh));
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let len = rng.gen_range(0.4..0.9) * size;
        let p2 = (p0.0 + len * angle.cos(), p0.1 + len * angle.sin());
        let bend = rng.gen_range(-0.2..0.2) * size;
        let mid = ((p0.0 + p2.0) / 2.0, (p0.1 + p2.1) / 2.0);
        let p1 = (mid.0 - bend * angle.sin(), mid.1 + bend * angle.cos());

        let steps = (len * 4.0).ceil() as usize + 1;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * (1.0 - t) * t, t * t);
            let px = a * p0.0 + b * p1.0 + c * p2.0;
            let py = a * p0.1 + b * p1.1 + c * p2.1;
            let x0 = (px - radius).floor().max(0.0) as usize;
            let y0 = (py - radius).floor().max(0.0) as usize;
            let x1 = (px + radius).ceil().min(fw - 1.0);
            let y1 = (py + radius).ceil().min(fh - 1.0);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let (dx, dy) = (x as f64 - px, y as f64 - py);
                    if dx * dx + dy * dy <= radius * radius {
                        mask.set(x, y, true);
                    }
                }
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(noise: f64, hairs: usize, vignette: bool) -> SynthSpec {
        SynthSpec {
            width: 80,
            height: 60,
            center: (40.0, 30.0),
            axes: (20.0, 10.0),
            rotation: 0.0,
            lesion_color: [0.3, 0.2, 0.1],
            skin_color: [0.9, 0.7, 0.6],
            noise_sigma: noise,
            hair_count: hairs,
            hair_width: 1.5,
            vignette,
            seed: 11,
        }
    }

    #[test]
    fn mask_matches_ellipse_inequality_count() {
        // Independent count straight from the axis-aligned inequality.
        let mut expected = 0;
        for y in 0..60 {
            for x in 0..80 {
                let u = (x as f64 - 40.0) / 20.0;
                let v = (y as f64 - 30.0) / 10.0;
                if u * u + v * v <= 1.0 {
                    expected += 1;
                }
            }
        }
        let (_, mask) = synth_lesion(&plain(0.0, 0, false)).unwrap();
        assert_eq!(mask.count(), expected);
    }

    #[test]
    fn clean_image_is_two_colors_split_by_mask() {
        let spec = plain(0.0, 0, false);
        let (img, mask) = synth_lesion(&spec).unwrap();
        for y in 0..60 {
            for x in 0..80 {
                let want = if mask.get(x, y) { spec.lesion_color } else { spec.skin_color };
                assert_eq!(img.get(x, y), want);
            }
        }
    }

    #[test]
    fn noise_stays_within_bounds_of_ideal() {
        let spec = plain(0.01, 0, false);
        let (img, mask) = synth_lesion(&spec).unwrap();
        let (ideal, _) = synth_lesion(&plain(0.0, 0, false)).unwrap();
        let mut max_dev: f64 = 0.0;
        for (a, b) in img.data().iter().zip(ideal.data()) {
            max_dev = max_dev.max((a - b).abs());
        }
        // 6 sigma over 14400 draws.
        assert!(max_dev < 0.06, "max deviation {max_dev}");
        assert!(mask.count() > 0);
    }

    #[test]
    fn vignette_darkens_corners_only() {
        let spec = plain(0.01, 0, true);
        let s = synth_lesion_full(&spec).unwrap();
        for (x, y) in [(0, 0), (79, 0), (0, 59), (79, 59)] {
            assert!(crate::dataio::luma(s.image.get(x, y)) < 0.1);
        }
        let c = s.image.get(40, 30);
        assert!(crate::dataio::luma(c) > 0.1);
    }

    #[test]
    fn hairs_share_noise_with_hairless_twin() {
        let s = synth_lesion_full(&plain(0.01, 10, false)).unwrap();
        assert!(s.hair_mask.count() > 0);
        let twin = synth_lesion(&plain(0.01, 0, false)).unwrap().0;
        assert_eq!(s.hairless, twin);
        for (i, &hair) in s.hair_mask.data().iter().enumerate() {
            if !hair {
                assert_eq!(&s.image.data()[i * 3..i * 3 + 3], &s.hairless.data()[i * 3..i * 3 + 3]);
            }
        }
    }

    #[test]
    fn rejects_ellipse_outside_canvas() {
        let mut spec = plain(0.0, 0, false);
        spec.axes = (45.0, 10.0);
        assert!(synth_lesion(&spec).is_err());
        spec.axes = (20.0, 10.0);
        spec.rotation = std::f64::consts::FRAC_PI_2;
        assert!(synth_lesion(&spec).is_ok());
        spec.axes = (31.0, 10.0);
        assert!(synth_lesion(&spec).is_err());
    }

    #[test]
    fn random_specs_are_valid() {
        for seed in 0..50 {
            let spec = SynthSpec::random(seed, 96, 3, true);
            let s = synth_lesion_full(&spec).unwrap();
            assert!(s.mask.count() > 100);
            assert_eq!(synth_lesion_full(&spec).unwrap().image, s.image);
        }
    }
}
