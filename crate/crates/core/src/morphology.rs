//! Grayscale and binary morphology: windowed min/max filters, the black
//! top-hat hair detector with median inpainting, border-connected dark
//! region masking, hole filling and 4-connected labeling.

use std::collections::VecDeque;

use crate::colorspace::Plane;
use crate::dataio::{BinaryMask, RgbImage};
use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeShape {
    Disk,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StructuringElement {
    pub shape: SeShape,
    pub radius: usize,
}

impl StructuringElement {
    pub fn disk(radius: usize) -> Self {
        assert!(radius >= 1, "structuring element radius must be >= 1");
        StructuringElement { shape: SeShape::Disk, radius }
    }

    pub fn square(radius: usize) -> Self {
        assert!(radius >= 1, "structuring element radius must be >= 1");
        StructuringElement { shape: SeShape::Square, radius }
    }

    /// Offsets covered by the element.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.radius as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if self.shape == SeShape::Square || dx * dx + dy * dy <= r * r {
                    out.push((dx, dy));
                }
            }
        }
        out
    }

    /// Per-row horizontal extents `(dy, half_width)`; every element here is
    /// symmetric and convex along rows.
    fn row_spans(&self) -> Vec<(isize, isize)> {
        let r = self.radius as isize;
        (-r..=r)
            .map(|dy| {
                let half = match self.shape {
                    SeShape::Square => r,
                    SeShape::Disk => (0..=r).rev().find(|dx| dx * dx + dy * dy <= r * r).unwrap_or(0),
                };
                (dy, half)
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
    Open,
    Close,
}

pub fn morph(op: MorphOp, p: &Plane, se: StructuringElement) -> Plane {
    morph_with(op, p, se, Exec::default())
}

/// [`morph`] with an explicit execution strategy; both give identical planes.
pub fn morph_with(op: MorphOp, p: &Plane, se: StructuringElement, exec: Exec) -> Plane {
    let f = |q: &Plane, take_max| window_filter(q, se, take_max, exec);
    match op {
        MorphOp::Erode => f(p, false),
        MorphOp::Dilate => f(p, true),
        MorphOp::Open => f(&f(p, false), true),
        MorphOp::Close => f(&f(p, true), false),
    }
}

pub fn erode(p: &Plane, se: StructuringElement) -> Plane {
    morph(MorphOp::Erode, p, se)
}

pub fn dilate(p: &Plane, se: StructuringElement) -> Plane {
    morph(MorphOp::Dilate, p, se)
}

pub fn close(p: &Plane, se: StructuringElement) -> Plane {
    morph(MorphOp::Close, p, se)
}

pub fn open(p: &Plane, se: StructuringElement) -> Plane {
    morph(MorphOp::Open, p, se)
}

/// Windowed max (`take_max`) or min with edge replication.
///
/// The element is decomposed into horizontal runs; each run is answered
/// from a per-row running extremum over `2·half+1` samples.
fn window_filter(p: &Plane, se: StructuringElement, take_max: bool, exec: Exec) -> Plane {
    let (w, h) = p.dims();
    let spans = se.row_spans();
    let pick = |a: f64, b: f64| if take_max { a.max(b) } else { a.min(b) };
    let src = p.data();
    let mut out = vec![0.0; w * h];
    exec.for_each_chunk_mut(&mut out, w, |y, row| {
        let init = if take_max { f64::NEG_INFINITY } else { f64::INFINITY };
        row.fill(init);
        for &(dy, half) in &spans {
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let line = &src[yy * w..(yy + 1) * w];
            for (x, o) in row.iter_mut().enumerate() {
                let lo = (x as isize - half).max(0) as usize;
                let hi = ((x as isize + half) as usize).min(w - 1);
                // Replicated edges add nothing new beyond the clamped range.
                let mut v = line[lo];
                for &s in &line[lo + 1..=hi] {
                    v = pick(v, s);
                }
                *o = pick(*o, v);
            }
        }
    });
    Plane::from_vec(w, h, out)
}

/// `close(p) - p`: responds to dark structures thinner than the element.
pub fn black_tophat(p: &Plane, se: StructuringElement) -> Plane {
    let c = close(p, se);
    let data = c.data().iter().zip(p.data()).map(|(a, b)| (a - b).max(0.0)).collect();
    Plane::from_vec(p.width(), p.height(), data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HairParams {
    pub se_radius: usize,
    pub thresh: f64,
}

impl Default for HairParams {
    fn default() -> Self {
        HairParams { se_radius: 7, thresh: 0.04 }
    }
}

/// Detects thin dark strokes and replaces them with the median of nearby
/// non-hair pixels. Returns the cleaned image and the hair mask.
pub fn remove_hair(img: &RgbImage, params: HairParams) -> Result<(RgbImage, BinaryMask)> {
    let (w, h) = img.dims();
    let response = black_tophat(&img.luminance(), StructuringElement::disk(params.se_radius));
    let raw = BinaryMask::new(w, h, response.data().iter().map(|&v| v > params.thresh).collect())?;
    let hair = dilate_mask(&raw, StructuringElement::disk(1));
    let covered = hair.count();
    if covered * 5 > w * h * 4 {
        return Err(Error::Degenerate(format!("hair mask covers {covered} of {} pixels", w * h)));
    }
    if covered == 0 {
        return Ok((img.clone(), hair));
    }

    let mut data = img.data().to_vec();
    let hair_ref = &hair;
    Exec::default().for_each_chunk_mut(&mut data, w * 3, |y, row| {
        let mut samples: [Vec<f64>; 3] = Default::default();
        for x in 0..w {
            if !hair_ref.get(x, y) {
                continue;
            }
            let mut half = 2usize;
            loop {
                for s in samples.iter_mut() {
                    s.clear();
                }
                let (x0, x1) = (x.saturating_sub(half), (x + half).min(w - 1));
                let (y0, y1) = (y.saturating_sub(half), (y + half).min(h - 1));
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        if !hair_ref.get(xx, yy) {
                            let p = img.get(xx, yy);
                            for c in 0..3 {
                                samples[c].push(p[c]);
                            }
                        }
                    }
                }
                let exhausted = x0 == 0 && y0 == 0 && x1 == w - 1 && y1 == h - 1;
                if samples[0].len() >= 5 || exhausted {
                    break;
                }
                half += 1;
            }
            for c in 0..3 {
                row[x * 3 + c] = median(&mut samples[c]);
            }
        }
    });
    Ok((RgbImage::from_clamped(w, h, data), hair))
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Binary dilation of a mask.
pub fn dilate_mask(m: &BinaryMask, se: StructuringElement) -> BinaryMask {
    let (w, h) = m.dims();
    let offsets = se.offsets();
    BinaryMask::from_fn(w, h, |x, y| {
        offsets.iter().any(|&(dx, dy)| {
            let (xx, yy) = (x as isize + dx, y as isize + dy);
            xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h && m.get(xx as usize, yy as usize)
        })
    })
}

const NEIGHBORS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Flood fill over pixels where `passable` holds, starting from `seeds`.
fn flood(w: usize, h: usize, passable: impl Fn(usize) -> bool, seeds: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for s in seeds {
        if passable(s) && !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in NEIGHBORS {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !seen[j] && passable(j) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

fn border_indices(w: usize, h: usize) -> impl Iterator<Item = usize> {
    let top = 0..w;
    let bottom = (0..w).map(move |x| (h - 1) * w + x);
    let left = (0..h).map(move |y| y * w);
    let right = (0..h).map(move |y| y * w + w - 1);
    top.chain(bottom).chain(left).chain(right)
}

/// Dark (`luminance < lum_thresh`) regions 4-connected to the image border.
pub fn dark_border_mask(img: &RgbImage, lum_thresh: f64) -> BinaryMask {
    let (w, h) = img.dims();
    let lum = img.luminance();
    let dark = |i: usize| lum.data()[i] < lum_thresh;
    let seen = flood(w, h, dark, border_indices(w, h));
    BinaryMask::new(w, h, seen).expect("same dims")
}

/// Sets every background pixel not reachable from the border to foreground.
pub fn fill_holes(m: &BinaryMask) -> BinaryMask {
    let (w, h) = m.dims();
    if w == 0 || h == 0 {
        return m.clone();
    }
    let outside = flood(w, h, |i| !m.data()[i], border_indices(w, h));
    BinaryMask::new(w, h, outside.into_iter().map(|o| !o).collect()).expect("same dims")
}

/// 4-connected labels; 0 is background, components numbered from 1 in
/// raster order of their first pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub count: u32,
}

impl LabelMap {
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.count as usize + 1];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }
}

pub fn connected_components(m: &BinaryMask) -> LabelMap {
    let (w, h) = m.dims();
    let mut labels = vec![0u32; w * h];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !m.data()[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in NEIGHBORS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if m.data()[j] && labels[j] == 0 {
                    labels[j] = count;
                    stack.push(j);
                }
            }
        }
    }
    LabelMap { width: w, height: h, labels, count }
}

/// Keeps the largest component; ties go to the smallest label.
pub fn largest_component(m: &BinaryMask) -> BinaryMask {
    let map = connected_components(m);
    if map.count == 0 {
        return BinaryMask::empty(m.width(), m.height());
    }
    let areas = map.areas();
    let mut best = 1usize;
    for l in 2..areas.len() {
        if areas[l] > areas[best] {
            best = l;
        }
    }
    let data = map.labels.iter().map(|&l| l as usize == best).collect();
    BinaryMask::new(m.width(), m.height(), data).expect("same dims")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{luma, synth_lesion_full, SynthSpec};
    use crate::posteval::jaccard;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(seed: u64, w: usize, h: usize) -> Plane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Plane::from_fn(w, h, |_, _| rng.gen::<f64>())
    }

    /// Direct definition: min/max over the element with clamped coordinates.
    fn brute_filter(p: &Plane, se: StructuringElement, take_max: bool) -> Plane {
        let (w, h) = p.dims();
        Plane::from_fn(w, h, |x, y| {
            let vals = se.offsets().into_iter().map(|(dx, dy)| {
                let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                p.get(xx, yy)
            });
            if take_max {
                vals.fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.fold(f64::INFINITY, f64::min)
            }
        })
    }

    #[test]
    fn filter_matches_definition() {
        for (seed, r) in [(1u64, 1usize), (2, 3), (3, 7)] {
            let p = random_plane(seed, 23, 17);
            for se in [StructuringElement::disk(r), StructuringElement::square(r)] {
                assert_eq!(dilate(&p, se), brute_filter(&p, se, true));
                assert_eq!(erode(&p, se), brute_filter(&p, se, false));
            }
        }
    }

    #[test]
    fn exec_strategies_agree() {
        let p = random_plane(4, 64, 48);
        let se = StructuringElement::disk(5);
        for op in [MorphOp::Erode, MorphOp::Dilate, MorphOp::Open, MorphOp::Close] {
            assert_eq!(morph_with(op, &p, se, Exec::Sequential), morph_with(op, &p, se, Exec::Parallel));
        }
    }

    #[test]
    fn constant_plane_fixed_by_all_ops() {
        let p = Plane::filled(9, 6, 0.3);
        for op in [MorphOp::Erode, MorphOp::Dilate, MorphOp::Open, MorphOp::Close] {
            assert_eq!(morph(op, &p, StructuringElement::disk(2)), p);
        }
        assert!(black_tophat(&p, StructuringElement::disk(2)).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_one_dilates_to_plus() {
        let mut p = Plane::filled(7, 7, 0.0);
        p.set(3, 3, 1.0);
        let d = dilate(&p, StructuringElement::disk(1));
        assert_eq!(d.data().iter().filter(|&&v| v == 1.0).count(), 5);
        assert_eq!(d.get(2, 2), 0.0);
    }

    #[test]
    fn closing_is_idempotent() {
        for seed in 0..100 {
            let p = random_plane(seed, 12, 10);
            let se = StructuringElement::disk(1 + (seed as usize % 3));
            let once = close(&p, se);
            assert_eq!(close(&once, se), once);
        }
    }

    #[test]
    fn tophat_on_thin_line_and_wide_blob() {
        let line = Plane::from_fn(21, 21, |x, _| if x == 10 { 0.2 } else { 0.8 });
        let t = black_tophat(&line, StructuringElement::disk(3));
        for y in 0..21 {
            assert!((t.get(10, y) - 0.6).abs() < 1e-12);
            assert_eq!(t.get(3, y), 0.0);
        }
        let blob = Plane::from_fn(41, 41, |x, y| {
            let (dx, dy) = (x as f64 - 20.0, y as f64 - 20.0);
            if dx * dx + dy * dy <= 144.0 {
                0.2
            } else {
                0.8
            }
        });
        let t = black_tophat(&blob, StructuringElement::disk(3));
        for y in 15..=25 {
            for x in 15..=25 {
                assert_eq!(t.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn hair_free_image_yields_sparse_mask() {
        for seed in 0..5 {
            let spec = SynthSpec::random(seed, 250, 0, false);
            let s = synth_lesion_full(&spec).unwrap();
            let (_, hair) = remove_hair(&s.image, HairParams::default()).unwrap();
            let density = hair.count() as f64 / (250.0 * 250.0);
            assert!(density < 0.01, "seed {seed}: density {density}");
        }
    }

    #[test]
    fn hairs_detected_and_inpainted() {
        let mut js = Vec::new();
        for seed in 0..5 {
            let spec = SynthSpec::random(100 + seed, 250, 10, false);
            let s = synth_lesion_full(&spec).unwrap();
            let (clean, hair) = remove_hair(&s.image, HairParams::default()).unwrap();
            js.push(jaccard(&hair, &s.hair_mask).unwrap());
            let mse =
                |a: &RgbImage| a.data().iter().zip(s.hairless.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            assert!(mse(&clean) < mse(&s.image));
        }
        let mean = js.iter().sum::<f64>() / js.len() as f64;
        assert!(mean >= 0.4, "mean hair jaccard {mean}");
    }

    #[test]
    fn constant_image_untouched_by_hair_removal() {
        let img = RgbImage::filled(30, 20, [0.6, 0.5, 0.4]);
        let (out, hair) = remove_hair(&img, HairParams::default()).unwrap();
        assert_eq!(out, img);
        assert!(hair.is_empty());
    }

    #[test]
    fn hair_removal_rejects_all_dark_texture() {
        // A fine checkerboard reads as hair everywhere.
        let img = RgbImage::from_clamped(
            40,
            40,
            (0..1600).flat_map(|i| if (i % 40 + i / 40) % 2 == 0 { [0.9; 3] } else { [0.1; 3] }).collect(),
        );
        assert!(remove_hair(&img, HairParams::default()).is_err());
    }

    #[test]
    fn dark_border_rules() {
        let spec = SynthSpec::random(3, 120, 0, true);
        let s = synth_lesion_full(&spec).unwrap();
        let m = dark_border_mask(&s.image, 0.1);
        for (x, y) in [(0, 0), (119, 0), (0, 119), (119, 119)] {
            assert!(m.get(x, y));
        }
        assert!(!m.intersects(&s.mask));

        let bright = RgbImage::filled(10, 10, [0.5; 3]);
        assert!(dark_border_mask(&bright, 0.1).is_empty());

        let mut centered = RgbImage::filled(21, 21, [0.8; 3]);
        for y in 6..15 {
            for x in 6..15 {
                centered.set(x, y, [0.0; 3]);
            }
        }
        assert!(dark_border_mask(&centered, 0.1).is_empty());
    }

    #[test]
    fn hole_filling_cases() {
        let ring =
            BinaryMask::from_fn(7, 7, |x, y| (1..=5).contains(&x) && (1..=5).contains(&y) && !(x == 3 && y == 3));
        let filled = fill_holes(&ring);
        assert_eq!(filled.count(), 25);
        assert!(filled.get(3, 3));

        let full = BinaryMask::from_fn(4, 4, |_, _| true);
        assert_eq!(fill_holes(&full), full);

        let c_shape = BinaryMask::from_fn(7, 7, |x, y| {
            (1..=5).contains(&x) && (1..=5).contains(&y) && !((2..=4).contains(&y) && x >= 2)
        });
        assert_eq!(fill_holes(&c_shape), c_shape);
    }

    #[test]
    fn component_counts() {
        let two = BinaryMask::from_fn(20, 10, |x, y| (x < 2 && y < 5) || ((10..14).contains(&x) && y < 5));
        assert_eq!(connected_components(&two).count, 2);
        assert_eq!(largest_component(&two).count(), 20);

        assert_eq!(connected_components(&BinaryMask::empty(5, 5)).count, 0);
        assert!(largest_component(&BinaryMask::empty(5, 5)).is_empty());

        let checker = BinaryMask::from_fn(4, 4, |x, y| (x + y) % 2 == 0);
        assert_eq!(connected_components(&checker).count, 8);

        let tie = BinaryMask::from_fn(9, 1, |x, _| !(3..=5).contains(&x));
        let kept = largest_component(&tie);
        assert!(kept.get(0, 0) && !kept.get(8, 0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn erode_below_dilate(seed in 0u64..10_000, r in 1usize..4) {
            let p = random_plane(seed, 11, 9);
            let se = StructuringElement::disk(r);
            let (e, d) = (erode(&p, se), dilate(&p, se));
            for i in 0..p.data().len() {
                prop_assert!(e.data()[i] <= p.data()[i] && p.data()[i] <= d.data()[i]);
            }
            prop_assert!(black_tophat(&p, se).data().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn fill_holes_idempotent_and_monotone(bits in proptest::collection::vec(any::<bool>(), 144), extra in proptest::collection::vec(any::<bool>(), 144)) {
            let a = BinaryMask::new(12, 12, bits.clone()).unwrap();
            let b = BinaryMask::new(12, 12, bits.iter().zip(&extra).map(|(&x, &y)| x || y).collect()).unwrap();
            let fa = fill_holes(&a);
            prop_assert_eq!(fill_holes(&fa), fa.clone());
            let fb = fill_holes(&b);
            for i in 0..144 {
                prop_assert!(!a.data()[i] || fa.data()[i]);
                prop_assert!(!fa.data()[i] || fb.data()[i]);
            }
        }

        #[test]
        fn border_mask_only_dark(seed in 0u64..10_000, t in 0.05f64..0.6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = RgbImage::from_clamped(10, 8, (0..240).map(|_| rng.gen::<f64>()).collect());
            let m = dark_border_mask(&img, t);
            for y in 0..8 {
                for x in 0..10 {
                    if m.get(x, y) {
                        prop_assert!(luma(img.get(x, y)) < t);
                    }
                }
            }
        }
    }
}
