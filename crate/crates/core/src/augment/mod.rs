//! Two-view augmentation: MoCo-v2 style geometric and photometric
//! perturbations followed by an optional random dihedral transform.

mod color;
mod dihedral;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataspec::ImageRecord;
use crate::image::{Image, ImageSource};
use crate::rng::seeded;
use crate::{Error, Result};

pub use color::{color_jitter, gaussian_blur, grayscale, ColorJitter};
pub use dihedral::{dihedral_element, hflip, random_dihedral, random_dihedral_with_element, rot90};

/// Crop attempts before falling back to the whole image.
const CROP_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Crop area as a fraction of the image area.
    pub crop_scale_range: (f32, f32),
    /// Crop aspect ratio (width / height) range, sampled log-uniformly.
    pub crop_ratio_range: (f32, f32),
    pub output_size: usize,
    pub color_jitter: ColorJitter,
    pub color_jitter_prob: f32,
    pub grayscale_prob: f32,
    pub blur_prob: f32,
    pub blur_sigma_range: (f32, f32),
    pub hflip_prob: f32,
    pub dihedral_enabled: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self::moco_v2(224)
    }
}

impl AugmentationConfig {
    /// MoCo-v2 perturbations plus dihedral transforms.
    pub fn moco_v2(output_size: usize) -> Self {
        Self {
            crop_scale_range: (0.2, 1.0),
            crop_ratio_range: (3.0 / 4.0, 4.0 / 3.0),
            output_size,
            color_jitter: ColorJitter::default(),
            color_jitter_prob: 0.8,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma_range: (0.1, 2.0),
            hflip_prob: 0.5,
            dihedral_enabled: true,
        }
    }

    /// Random resized crop only (used for frozen linear probing).
    pub fn crop_only(output_size: usize, crop_scale_range: (f32, f32)) -> Self {
        Self {
            crop_scale_range,
            color_jitter: ColorJitter::NONE,
            color_jitter_prob: 0.0,
            grayscale_prob: 0.0,
            blur_prob: 0.0,
            hflip_prob: 0.0,
            dihedral_enabled: false,
            ..Self::moco_v2(output_size)
        }
    }

    /// Deterministic resize to `output_size`.
    pub fn resize_only(output_size: usize) -> Self {
        Self::crop_only(output_size, (1.0, 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Validation(format!(
                "crop_scale_range must satisfy 0 < low <= high <= 1, got ({lo}, {hi})"
            )));
        }
        let (rlo, rhi) = self.crop_ratio_range;
        if !(rlo > 0.0 && rlo <= rhi) {
            return Err(Error::Validation("crop_ratio_range must be positive and ordered".into()));
        }
        for (name, p) in [
            ("color_jitter_prob", self.color_jitter_prob),
            ("grayscale_prob", self.grayscale_prob),
            ("blur_prob", self.blur_prob),
            ("hflip_prob", self.hflip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let (slo, shi) = self.blur_sigma_range;
        if !(slo > 0.0 && slo <= shi) {
            return Err(Error::Validation("blur_sigma_range must be positive and ordered".into()));
        }
        if self.output_size < 16 {
            return Err(Error::Validation(format!(
                "output_size must be >= 16, got {}",
                self.output_size
            )));
        }
        Ok(())
    }
}

/// Picks a crop window `(x, y, w, h)`; whole image when no attempt fits.
fn crop_window<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> (usize, usize, usize, usize) {
    let area = (width * height) as f32;
    let (lo, hi) = cfg.crop_scale_range;
    let (log_rlo, log_rhi) = (cfg.crop_ratio_range.0.ln(), cfg.crop_ratio_range.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = area * rng.random_range(lo..=hi);
        let ratio = rng.random_range(log_rlo..=log_rhi).exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= width && h <= height {
            let x = rng.random_range(0..=width - w);
            let y = rng.random_range(0..=height - h);
            return (x, y, w, h);
        }
    }
    (0, 0, width, height)
}

pub fn random_resized_crop<R: Rng + ?Sized>(image: &Image, cfg: &AugmentationConfig, rng: &mut R) -> Image {
    let (x, y, w, h) = crop_window(image.width(), image.height(), cfg, rng);
    let cropped = if (x, y, w, h) == (0, 0, image.width(), image.height()) {
        image.clone()
    } else {
        image.crop(x, y, w, h)
    };
    cropped.resize(cfg.output_size, cfg.output_size)
}

/// Crop-resize, color jitter, grayscale, blur, horizontal flip and, when
/// enabled, a random dihedral element, in that order.
pub fn augment_view<R: Rng + ?Sized>(image: &Image, cfg: &AugmentationConfig, rng: &mut R) -> Image {
    let mut out = random_resized_crop(image, cfg, rng);
    if cfg.color_jitter_prob > 0.0 && rng.random::<f32>() < cfg.color_jitter_prob {
        color_jitter(&mut out, &cfg.color_jitter, rng);
    }
    if cfg.grayscale_prob > 0.0 && rng.random::<f32>() < cfg.grayscale_prob {
        grayscale(&mut out);
    }
    if cfg.blur_prob > 0.0 && rng.random::<f32>() < cfg.blur_prob {
        let sigma = rng.random_range(cfg.blur_sigma_range.0..=cfg.blur_sigma_range.1);
        out = gaussian_blur(&out, sigma);
    }
    if cfg.hflip_prob > 0.0 && rng.random::<f32>() < cfg.hflip_prob {
        out = hflip(&out);
    }
    if cfg.dihedral_enabled {
        out = random_dihedral(&out, rng);
    }
    out
}

/// Augments the query record and its positive independently. Each view draws
/// from its own stream seeded off `rng`, so their randomness is uncorrelated.
pub fn make_query_key_views<R: Rng + ?Sized>(
    pair: (&ImageRecord, &ImageRecord),
    source: &dyn ImageSource,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<(Image, Image)> {
    let mut rng_q = seeded(rng.random());
    let mut rng_k = seeded(rng.random());
    let img_q = source.load(pair.0)?;
    let img_k = if pair.1.image_id == pair.0.image_id {
        img_q.clone()
    } else {
        source.load(pair.1)?
    };
    Ok((
        augment_view(&img_q, cfg, &mut rng_q),
        augment_view(&img_k, cfg, &mut rng_k),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::MemoryImages;
    use proptest::prelude::*;
    use rand::Rng;

    fn off(size: usize) -> AugmentationConfig {
        AugmentationConfig::resize_only(size)
    }

    fn textured(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = seeded(seed);
        Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn rec(id: &str) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            location_id: "L".into(),
            timestamp: 0,
            path: String::new(),
            class_label: None,
            width: 40,
            height: 40,
        }
    }

    #[test]
    fn all_off_is_a_plain_resize() {
        let img = textured(40, 30, 1);
        for seed in 0..10 {
            assert_eq!(augment_view(&img, &off(16), &mut seeded(seed)), img.resize(16, 16));
        }
    }

    #[test]
    fn full_pipeline_is_deterministic_per_seed() {
        let img = textured(48, 48, 2);
        let cfg = AugmentationConfig::moco_v2(32);
        let a = augment_view(&img, &cfg, &mut seeded(9));
        let b = augment_view(&img, &cfg, &mut seeded(9));
        assert_eq!(a, b);
        assert_ne!(a, augment_view(&img, &cfg, &mut seeded(10)));
    }

    #[test]
    fn validation() {
        assert!(AugmentationConfig::moco_v2(32).validate().is_ok());
        let mut c = AugmentationConfig::moco_v2(32);
        c.crop_scale_range = (0.0, 1.0);
        assert!(c.validate().is_err());
        c.crop_scale_range = (0.6, 0.5);
        assert!(c.validate().is_err());
        let mut c = AugmentationConfig::moco_v2(32);
        c.blur_prob = 1.5;
        assert!(c.validate().is_err());
        assert!(AugmentationConfig::moco_v2(8).validate().is_err());
    }

    #[test]
    fn degenerate_pair_views() {
        let mut store = MemoryImages::new();
        store.insert("r", textured(40, 40, 3));
        let r = rec("r");
        let (q, k) = make_query_key_views((&r, &r), &store, &off(32), &mut seeded(0)).unwrap();
        assert_eq!(q, k);
        let (q, k) =
            make_query_key_views((&r, &r), &store, &AugmentationConfig::moco_v2(32), &mut seeded(0)).unwrap();
        assert_ne!(q, k);
    }

    /// Watermarked sources: red channel identifies the source image, green and
    /// blue encode the source coordinates. Nearest-neighbour style checks on
    /// the views then reveal where each view's pixels came from.
    #[test]
    fn temporal_views_trace_to_their_own_source() {
        let mark = |tag: f32| Image::from_fn(40, 40, move |x, y| [tag, x as f32 / 39.0, y as f32 / 39.0]);
        let mut store = MemoryImages::new();
        store.insert("a", mark(0.25));
        store.insert("b", mark(0.75));
        let (a, b) = (rec("a"), rec("b"));
        let mut cfg = AugmentationConfig::crop_only(16, (0.2, 1.0));
        cfg.hflip_prob = 0.5;
        cfg.dihedral_enabled = true;
        for seed in 0..50 {
            let (q, k) = make_query_key_views((&a, &b), &store, &cfg, &mut seeded(seed)).unwrap();
            assert!(q.data().chunks(3).all(|p| p[0] == 0.25));
            assert!(k.data().chunks(3).all(|p| p[0] == 0.75));
        }
    }

    #[test]
    fn unreadable_image_reports_its_id() {
        let store = MemoryImages::new();
        let r = rec("ghost");
        match make_query_key_views((&r, &r), &store, &off(16), &mut seeded(0)) {
            Err(Error::ImageLoad { image_id, .. }) => assert_eq!(image_id, "ghost"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn shape_and_range_contract(w in 16usize..48, h in 16usize..48, seed in any::<u64>()) {
            let img = textured(w, h, seed);
            let out = augment_view(&img, &AugmentationConfig::moco_v2(16), &mut seeded(seed));
            prop_assert_eq!((out.width(), out.height(), out.data().len()), (16, 16, 16 * 16 * 3));
            let (lo, hi) = out.min_max();
            prop_assert!(lo >= 0.0 && hi <= 1.0);
        }

        #[test]
        fn geometric_only_stays_within_input_range(w in 16usize..40, h in 16usize..40, seed in any::<u64>()) {
            let img = textured(w, h, seed ^ 1);
            let mut cfg = AugmentationConfig::crop_only(16, (0.2, 1.0));
            cfg.hflip_prob = 0.5;
            cfg.blur_prob = 0.5;
            cfg.dihedral_enabled = true;
            let out = augment_view(&img, &cfg, &mut seeded(seed));
            let (ilo, ihi) = img.min_max();
            let (lo, hi) = out.min_max();
            prop_assert!(lo >= ilo - 1e-6 && hi <= ihi + 1e-6);
        }
    }
}
