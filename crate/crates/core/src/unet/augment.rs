use crate::dataio::{BinaryMask, RgbImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Transform {
    Identity,
    HFlip,
    /// Quarter turn clockwise.
    Rot90,
    Rot180,
}

impl Transform {
    pub const ALL: [Transform; 4] = [Transform::Identity, Transform::HFlip, Transform::Rot90, Transform::Rot180];

    pub fn output_dims(self, w: usize, h: usize) -> (usize, usize) {
        match self {
            Transform::Rot90 => (h, w),
            _ => (w, h),
        }
    }

    /// Source pixel for destination `(x, y)` in a `w`×`h` source.
    fn source(self, x: usize, y: usize, w: usize, h: usize) -> (usize, usize) {
        match self {
            Transform::Identity => (x, y),
            Transform::HFlip => (w - 1 - x, y),
            Transform::Rot90 => (y, h - 1 - x),
            Transform::Rot180 => (w - 1 - x, h - 1 - y),
        }
    }

    pub fn apply_image(self, img: &RgbImage) -> RgbImage {
        let (w, h) = img.dims();
        let (ow, oh) = self.output_dims(w, h);
        let mut data = Vec::with_capacity(ow * oh * 3);
        for y in 0..oh {
            for x in 0..ow {
                let (sx, sy) = self.source(x, y, w, h);
                data.extend(img.get(sx, sy));
            }
        }
        RgbImage::from_clamped(ow, oh, data)
    }

    pub fn apply_mask(self, mask: &BinaryMask) -> BinaryMask {
        let (w, h) = mask.dims();
        let (ow, oh) = self.output_dims(w, h);
        BinaryMask::from_fn(ow, oh, |x, y| {
            let (sx, sy) = self.source(x, y, w, h);
            mask.get(sx, sy)
        })
    }
}

/// The four training views of one sample: identity, horizontal flip, 90° and 180° rotation.
pub fn augment4(img: &RgbImage, mask: &BinaryMask) -> Vec<(RgbImage, BinaryMask)> {
    Transform::ALL.iter().map(|t| (t.apply_image(img), t.apply_mask(mask))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posteval::jaccard;

    fn asymmetric(w: usize, h: usize) -> (RgbImage, BinaryMask) {
        let mut img = RgbImage::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, [x as f64 / w as f64, y as f64 / h as f64, ((x * 7 + y * 3) % 5) as f64 / 5.0]);
            }
        }
        let mask = BinaryMask::from_fn(w, h, |x, y| x < w / 3 && y < h / 2);
        (img, mask)
    }

    #[test]
    fn four_distinct_views() {
        let (img, mask) = asymmetric(6, 6);
        let views = augment4(&img, &mask);
        assert_eq!(views.len(), 4);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(views[i].0, views[j].0);
                assert_ne!(views[i].1, views[j].1);
            }
        }
    }

    #[test]
    fn corpus_size_quadruples() {
        let (img, mask) = asymmetric(3, 2);
        let n: usize = (0..1800).map(|_| 4).sum();
        assert_eq!(n, 7200);
        assert_eq!(augment4(&img, &mask).len() * 1800, 7200);
    }

    #[test]
    fn image_and_mask_stay_aligned() {
        let (w, h) = (7, 4);
        let img = RgbImage::from_clamped(w, h, (0..w * h).flat_map(|i| [(i % 2) as f64, 0.0, 0.0]).collect());
        let mask = BinaryMask::from_fn(w, h, |x, y| (y * w + x) % 2 == 1);
        for (t_img, t_mask) in augment4(&img, &mask) {
            let from_img = BinaryMask::from_fn(t_img.width(), t_img.height(), |x, y| t_img.get(x, y)[0] > 0.5);
            assert_eq!(jaccard(&from_img, &t_mask).unwrap(), 1.0);
        }
    }

    #[test]
    fn rotations_compose() {
        let (img, mask) = asymmetric(5, 3);
        let r = Transform::Rot180;
        assert_eq!(r.apply_image(&r.apply_image(&img)), img);
        let quarter4 = (0..4).fold(mask.clone(), |m, _| Transform::Rot90.apply_mask(&m));
        assert_eq!(quarter4, mask);
        assert_eq!(Transform::Rot90.apply_mask(&Transform::Rot90.apply_mask(&mask)), r.apply_mask(&mask));
        assert_eq!(Transform::HFlip.apply_mask(&Transform::HFlip.apply_mask(&mask)), mask);
    }

    #[test]
    fn quarter_turn_is_clockwise() {
        let mask = BinaryMask::from_fn(3, 2, |x, y| x == 0 && y == 0);
        let rot = Transform::Rot90.apply_mask(&mask);
        assert_eq!(rot.dims(), (2, 3));
        assert!(rot.get(1, 0));
        assert_eq!(rot.count(), 1);
    }
}
