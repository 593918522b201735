//! Seeded synthetic benchmark generator: a spatial label layout, per-class
//! Gaussian channel statistics, and optional label-source flip noise.
//!
//! Draw order is fixed so the same spec yields the same bytes: pattern
//! layout first, then per pixel in row-major order one flip draw followed
//! by the channel samples. Flips corrupt only the sampling source; the
//! returned ground truth is always the clean layout.

use crate::error::{Error, Result};
use crate::image::{MultiChannelImage, PixelDomain, SegmentationMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Spatial layout of the class regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionPattern {
    /// Nearest-site cells around `classes` random seed pixels.
    VoronoiBlobs,
    /// Concentric equal-radius bands around the image center.
    NestedRings,
    /// Diagonal bands: class grows with row + col.
    HalfPlanes,
}

impl RegionPattern {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "voronoi_blobs" => Ok(Self::VoronoiBlobs),
            "nested_rings" => Ok(Self::NestedRings),
            "half_planes" => Ok(Self::HalfPlanes),
            other => Err(Error::SpecInvalid(format!("unknown pattern `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::VoronoiBlobs => "voronoi_blobs",
            Self::NestedRings => "nested_rings",
            Self::HalfPlanes => "half_planes",
        }
    }
}

/// Full description of one synthetic instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Class-major `classes * channels` means.
    pub means: Vec<f64>,
    /// Class-major `classes * channels` standard deviations, all positive.
    pub stds: Vec<f64>,
    pub pattern: RegionPattern,
    /// Probability that a pixel samples its values from a wrong class.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 256 {
            return Err(Error::SpecInvalid(format!(
                "classes must be in 2..=256, got {}",
                self.classes
            )));
        }
        if self.channels == 0 {
            return Err(Error::SpecInvalid("channels must be positive".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::SpecInvalid("image dimensions must be positive".into()));
        }
        let expected = self.classes * self.channels;
        if self.means.len() != expected || self.stds.len() != expected {
            return Err(Error::SpecInvalid(format!(
                "means/stds must have {expected} entries (classes x channels)"
            )));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::SpecInvalid("means must be finite".into()));
        }
        if self.stds.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::SpecInvalid("stds must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::SpecInvalid(format!(
                "noise must lie in [0, 0.5), got {}",
                self.noise
            )));
        }
        Ok(())
    }

    pub fn mean(&self, class: usize, channel: usize) -> f64 {
        self.means[class * self.channels + channel]
    }

    pub fn std(&self, class: usize, channel: usize) -> f64 {
        self.stds[class * self.channels + channel]
    }
}

fn layout(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (h, w, k) = (spec.height, spec.width, spec.classes);
    match spec.pattern {
        RegionPattern::VoronoiBlobs => {
            let sites: Vec<(usize, usize)> = rand::seq::index::sample(rng, h * w, k)
                .iter()
                .map(|flat| (flat / w, flat % w))
                .collect();
            let mut labels = Vec::with_capacity(h * w);
            for r in 0..h {
                for c in 0..w {
                    let mut best = 0usize;
                    let mut best_d = usize::MAX;
                    for (s, &(sr, sc)) in sites.iter().enumerate() {
                        let d = sr.abs_diff(r).pow(2) + sc.abs_diff(c).pow(2);
                        if d < best_d {
                            best_d = d;
                            best = s;
                        }
                    }
                    labels.push(best as u8);
                }
            }
            labels
        }
        RegionPattern::NestedRings => {
            let cy = (h as f64 - 1.0) / 2.0;
            let cx = (w as f64 - 1.0) / 2.0;
            let rmax = (cy.max(h as f64 - 1.0 - cy).powi(2)
                + cx.max(w as f64 - 1.0 - cx).powi(2))
            .sqrt();
            let mut labels = Vec::with_capacity(h * w);
            for r in 0..h {
                for c in 0..w {
                    let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
                    let band = ((d / rmax) * k as f64).floor() as usize;
                    labels.push(band.min(k - 1) as u8);
                }
            }
            labels
        }
        RegionPattern::HalfPlanes => {
            let span = (h + w).saturating_sub(2).max(1) as f64;
            let mut labels = Vec::with_capacity(h * w);
            for r in 0..h {
                for c in 0..w {
                    let t = (r + c) as f64 / span;
                    let band = (t * k as f64).floor() as usize;
                    labels.push(band.min(k - 1) as u8);
                }
            }
            labels
        }
    }
}

/// Draws one instance: the clean ground-truth mask over the full grid plus
/// the sampled image. Errors if any class has zero area in the layout.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(MultiChannelImage, SegmentationMask)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = layout(spec, &mut rng);

    let mut areas = vec![0usize; spec.classes];
    for &l in &labels {
        areas[l as usize] += 1;
    }
    if let Some(empty) = areas.iter().position(|&a| a == 0) {
        return Err(Error::SpecInvalid(format!(
            "pattern {} leaves class {empty} with zero area at {}x{} / K={}",
            spec.pattern.name(),
            spec.height,
            spec.width,
            spec.classes
        )));
    }

    let hw = spec.height * spec.width;
    let k = spec.classes;
    let mut values = vec![0.0; spec.channels * hw];
    for (flat, &label) in labels.iter().enumerate() {
        let u: f64 = rng.random();
        let source = if u < spec.noise {
            let offset = rng.random_range(1..k);
            (label as usize + offset) % k
        } else {
            label as usize
        };
        for c in 0..spec.channels {
            let z: f64 = rng.sample(StandardNormal);
            values[c * hw + flat] = spec.mean(source, c) + spec.std(source, c) * z;
        }
    }

    let domain = PixelDomain::full(spec.height, spec.width)?;
    let image = MultiChannelImage::new(domain.clone(), spec.channels, values)?;
    let mask = SegmentationMask::new(domain, spec.classes, labels)?;
    Ok((image, mask))
}
