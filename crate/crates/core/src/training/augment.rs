use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernels::resize_bilinear_forward;
use crate::mask::IndexMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    pub scale_range: (f64, f64),
    /// Square crop side; `None` keeps the scaled image whole.
    pub crop: Option<usize>,
    pub ignore_id: u8,
}

/// Random flip, scale and crop applied identically to image and mask.
///
/// The image is resampled bilinearly, the mask by nearest neighbour. Crop
/// windows that reach past the scaled image are padded with 0 in the image
/// (the normalisation mean) and `ignore_id` in the mask.
pub fn augment(image: &Tensor, mask: &IndexMask, rng: &mut impl Rng, cfg: &AugmentConfig) -> (Tensor, IndexMask) {
    let (c, h, w) = image.chw();
    assert_eq!((h, w), mask.dims(), "image and mask must be aligned");

    let flip = cfg.hflip_prob > 0.0 && rng.random::<f64>() < cfg.hflip_prob;
    let (lo, hi) = cfg.scale_range;
    let s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let sh = ((h as f64 * s).round() as usize).max(1);
    let sw = ((w as f64 * s).round() as usize).max(1);

    let (mut img, mut m) = if flip {
        (image.flip_horizontal(), mask.flip_horizontal())
    } else {
        (image.clone(), mask.clone())
    };
    if (sh, sw) != (h, w) {
        img = resize_bilinear_forward(&img, sh, sw);
        m = m.resize_nearest(sh, sw);
    }
    let Some(crop) = cfg.crop else {
        return (img, m);
    };
    let oy = if sh > crop { rng.random_range(0..=sh - crop) } else { 0 };
    let ox = if sw > crop { rng.random_range(0..=sw - crop) } else { 0 };
    let out_img = Tensor::from_fn_chw(c, crop, crop, |ci, y, x| {
        let (sy, sx) = (y + oy, x + ox);
        if sy < sh && sx < sw {
            img.at(ci, sy, sx)
        } else {
            0.0
        }
    });
    let out_mask = IndexMask::from_fn(crop, crop, |y, x| {
        let (sy, sx) = (y + oy, x + ox);
        if sy < sh && sx < sw {
            m.get(sy, sx)
        } else {
            cfg.ignore_id
        }
    });
    (out_img, out_mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> (Tensor, IndexMask) {
        let img = Tensor::from_fn_chw(3, 20, 24, |c, y, x| (c * 1000 + y * 24 + x) as f64);
        let mask = IndexMask::from_fn(20, 24, |y, x| ((y / 5 + x / 6) % 4) as u8 * 3);
        (img, mask)
    }

    #[test]
    fn identity_when_everything_is_off() {
        let (img, mask) = sample();
        let cfg = AugmentConfig {
            hflip_prob: 0.0,
            scale_range: (1.0, 1.0),
            crop: Some(32),
            ignore_id: 255,
        };
        let (a, m) = augment(&img, &mask, &mut ChaCha8Rng::seed_from_u64(1), &cfg);
        for y in 0..32 {
            for x in 0..32 {
                if y < 20 && x < 24 {
                    assert_eq!(m.get(y, x), mask.get(y, x));
                    assert_eq!(a.at(2, y, x), img.at(2, y, x));
                } else {
                    assert_eq!(m.get(y, x), 255);
                    assert_eq!(a.at(0, y, x), 0.0);
                }
            }
        }
    }

    #[test]
    fn seeded_and_value_preserving() {
        let (img, mask) = sample();
        let cfg = AugmentConfig {
            hflip_prob: 0.5,
            scale_range: (0.5, 2.0),
            crop: Some(16),
            ignore_id: 255,
        };
        let mut allowed = mask.present_ids();
        allowed.push(255);
        for seed in 0..100 {
            let a = augment(&img, &mask, &mut ChaCha8Rng::seed_from_u64(seed), &cfg);
            let b = augment(&img, &mask, &mut ChaCha8Rng::seed_from_u64(seed), &cfg);
            assert_eq!(a, b);
            assert!(a.1.present_ids().iter().all(|id| allowed.contains(id)));
            assert_eq!(a.0.chw(), (3, 16, 16));
        }
    }
}
