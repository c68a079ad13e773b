//! Training-time augmentation and label-preserving resizing.

use image::imageops::{self, FilterType};
use image::RgbImage;
use rand::Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::geometry::{LabelMode, PixelLabel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    pub jitter_prob: f64,
    /// Brightness, contrast and saturation factors are drawn from
    /// `[1 - m, 1 + m]`.
    pub jitter_magnitude: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { flip_prob: 0.5, jitter_prob: 0.5, jitter_magnitude: 0.2 }
    }
}

impl AugmentConfig {
    pub const NONE: AugmentConfig = AugmentConfig { flip_prob: 0.0, jitter_prob: 0.0, jitter_magnitude: 0.0 };
}

/// Mirror image and landmarks about the vertical centre line.
pub fn flip_sample(sample: &Sample) -> Sample {
    Sample {
        image: imageops::flip_horizontal(&sample.image),
        landmarks: sample.landmarks.mirror(),
        ..sample.clone()
    }
}

fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Brightness, then contrast about the mean luma, then saturation about each
/// pixel's luma. Factors of exactly 1 leave the image unchanged.
pub fn color_jitter(image: &RgbImage, brightness: f32, contrast: f32, saturation: f32) -> RgbImage {
    let mut px: Vec<[f32; 3]> = image.pixels().map(|p| p.0.map(|v| v as f32 * brightness)).collect();
    let mean = px.iter().map(|&p| luma(p)).sum::<f32>() / px.len() as f32;
    for p in &mut px {
        *p = p.map(|v| mean + contrast * (v - mean));
        let g = luma(*p);
        *p = p.map(|v| g + saturation * (v - g));
    }
    let raw = px.iter().flat_map(|p| p.map(|v| v.round().clamp(0.0, 255.0) as u8)).collect();
    RgbImage::from_raw(image.width(), image.height(), raw).expect("same dimensions")
}

/// Random horizontal flip (image, landmarks and label together) and random
/// colour jitter (image only), each with its own probability.
pub fn augment(sample: &Sample, label: &PixelLabel, cfg: &AugmentConfig, rng: &mut impl Rng) -> (Sample, PixelLabel) {
    let (mut s, mut l) = if rng.random_bool(cfg.flip_prob) {
        (flip_sample(sample), label.flip_horizontal())
    } else {
        (sample.clone(), label.clone())
    };
    if rng.random_bool(cfg.jitter_prob) {
        let m = cfg.jitter_magnitude as f32;
        let mut factor = || if m > 0.0 { rng.random_range(1.0 - m..=1.0 + m) } else { 1.0 };
        let (b, c, sat) = (factor(), factor(), factor());
        s.image = color_jitter(&s.image, b, c, sat);
    }
    l = PixelLabel::new(l.grid().clone(), l.category()).expect("augmentation keeps labels valid");
    (s, l)
}

/// Bilinear resize to `size × size` with landmarks rescaled; the label is
/// rasterised again from the rescaled geometry so it stays binary.
pub fn resize_pair(sample: &Sample, size: u32, mode: LabelMode, grid_size: usize) -> Result<(Sample, PixelLabel)> {
    if size == 0 || sample.image.width() == 0 || sample.image.height() == 0 {
        return Err(Error::InvalidConfig("image dimensions must be positive".into()));
    }
    let image = if sample.image.dimensions() == (size, size) {
        sample.image.clone()
    } else {
        imageops::resize(&sample.image, size, size, FilterType::Triangle)
    };
    let landmarks = sample.landmarks.rescale(size, size)?;
    let out = Sample { image, landmarks, ..sample.clone() };
    let label = out.pixel_label(mode, grid_size)?;
    Ok((out, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate_synthetic_corpus, SynthConfig};
    use crate::dataset::Category;
    use crate::geometry::{mask_polygon, rasterize_label};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn am2_samples(size: u32) -> Vec<Sample> {
        let cfg = SynthConfig { n_identities: 3, videos_per_identity_per_category: 1, attack_replicas: 1, image_size: size, ..SynthConfig::default() };
        generate_synthetic_corpus(&cfg).unwrap().samples.into_iter().filter(|s| s.category == Category::AM2).collect()
    }

    #[test]
    fn double_flip_restores_sample() {
        let s = &am2_samples(224)[0];
        let label = s.pixel_label(LabelMode::Partial, 14).unwrap();
        let cfg = AugmentConfig { flip_prob: 1.0, jitter_prob: 0.0, jitter_magnitude: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (once, l1) = augment(s, &label, &cfg, &mut rng);
        assert_eq!(l1.grid(), &label.grid().flip_horizontal());
        let (twice, l2) = augment(&once, &l1, &cfg, &mut rng);
        assert_eq!(twice.image, s.image);
        assert_eq!(l2, label);
        for (a, b) in twice.landmarks.points().iter().zip(s.landmarks.points()) {
            assert!((a.x - b.x).abs() < 1e-9 && a.y == b.y);
        }
    }

    #[test]
    fn label_of_flipped_sample_is_flipped_label() {
        for s in am2_samples(224) {
            let f = flip_sample(&s);
            assert_eq!(
                f.pixel_label(LabelMode::Partial, 14).unwrap(),
                s.pixel_label(LabelMode::Partial, 14).unwrap().flip_horizontal()
            );
        }
    }

    #[test]
    fn zero_magnitude_jitter_is_identity() {
        let s = &am2_samples(224)[0];
        let label = s.pixel_label(LabelMode::Partial, 14).unwrap();
        let cfg = AugmentConfig { flip_prob: 0.0, jitter_prob: 1.0, jitter_magnitude: 0.0 };
        let (out, l) = augment(s, &label, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(out.image, s.image);
        assert_eq!(l, label);
        assert_eq!(color_jitter(&s.image, 1.0, 1.0, 1.0), s.image);
    }

    #[test]
    fn jitter_changes_image_but_not_label() {
        let s = &am2_samples(224)[0];
        let label = s.pixel_label(LabelMode::Partial, 14).unwrap();
        let cfg = AugmentConfig { flip_prob: 0.0, jitter_prob: 1.0, jitter_magnitude: 0.2 };
        let (out, l) = augment(s, &label, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_ne!(out.image, s.image);
        assert_eq!(l, label);
    }

    #[test]
    fn resize_halves_and_regenerates_label() {
        for big in am2_samples(448) {
            let (small, label) = resize_pair(&big, 224, LabelMode::Partial, 14).unwrap();
            assert_eq!(small.image.dimensions(), (224, 224));
            assert!(label.grid().iter().all(|v| v == 0.0 || v == 1.0));
            // Same as rasterising the half-scale polygon directly at 224.
            let direct = rasterize_label(&mask_polygon(&big.landmarks).unwrap().scale(0.5, 0.5), Category::AM2, 224, 224, 14);
            assert_eq!(label, direct);
        }
    }
}
