//! Core domain types shared by every algorithm: pixel domains, multi-channel
//! images, label sets, per-pixel responsibilities and segmentation masks.
//!
//! All per-pixel containers index the ROI pixels of their [`PixelDomain`] in
//! row-major order. Every sum in every algorithm of this crate runs over ROI
//! pixels only; values outside the ROI are carried along but never enter a
//! likelihood, a moment or a metric.

use crate::error::{Error, Result};

/// Tolerance for "rows sum to one" checks on responsibility rows.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// A rectangular grid together with the boolean ROI mask Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelDomain {
    height: usize,
    width: usize,
    roi: Vec<bool>,
    /// Flat (row-major) indices of the ROI pixels, ascending.
    pixels: Vec<usize>,
}

impl PixelDomain {
    /// Domain covering the full rectangle.
    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::with_roi(height, width, vec![true; height * width])
    }

    /// Domain with an explicit ROI mask (row-major, `height * width` entries).
    pub fn with_roi(height: usize, width: usize, roi: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Invalid("domain dimensions must be positive".into()));
        }
        if roi.len() != height * width {
            return Err(Error::DimensionMismatch {
                what: "roi mask",
                expected: height * width,
                actual: roi.len(),
            });
        }
        let pixels: Vec<usize> = roi
            .iter()
            .enumerate()
            .filter_map(|(i, &in_roi)| in_roi.then_some(i))
            .collect();
        if pixels.is_empty() {
            return Err(Error::Invalid("ROI contains no pixels".into()));
        }
        Ok(Self {
            height,
            width,
            roi,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// |Ω|, the number of ROI pixels.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees at least one ROI pixel
    }

    /// Flat row-major indices of the ROI pixels, ascending.
    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn roi(&self) -> &[bool] {
        &self.roi
    }

    /// (row, col) of the i-th ROI pixel.
    pub fn coords(&self, i: usize) -> (usize, usize) {
        let flat = self.pixels[i];
        (flat / self.width, flat % self.width)
    }
}

/// A set of m real-valued channels over a shared pixel domain.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelImage {
    domain: PixelDomain,
    channels: usize,
    /// Row-major `channels * height * width` values.
    values: Vec<f64>,
}

impl MultiChannelImage {
    pub fn new(domain: PixelDomain, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Invalid("image needs at least one channel".into()));
        }
        let expected = channels * domain.height * domain.width;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "image values",
                expected,
                actual: values.len(),
            });
        }
        let hw = domain.height * domain.width;
        for c in 0..channels {
            for &flat in &domain.pixels {
                if !values[c * hw + flat].is_finite() {
                    return Err(Error::Invalid(format!(
                        "non-finite value in channel {c} at flat index {flat}"
                    )));
                }
            }
        }
        Ok(Self {
            domain,
            channels,
            values,
        })
    }

    pub fn domain(&self) -> &PixelDomain {
        &self.domain
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Full `height * width` grid of one channel.
    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.domain.height * self.domain.width;
        &self.values[c * hw..(c + 1) * hw]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value of channel `c` at the i-th ROI pixel.
    #[inline]
    pub fn roi_value(&self, c: usize, i: usize) -> f64 {
        let hw = self.domain.height * self.domain.width;
        self.values[c * hw + self.domain.pixels[i]]
    }

    /// Copies the m channel values of the i-th ROI pixel into `buf`.
    #[inline]
    pub fn fill_pixel(&self, i: usize, buf: &mut [f64]) {
        debug_assert_eq!(buf.len(), self.channels);
        let hw = self.domain.height * self.domain.width;
        let flat = self.domain.pixels[i];
        for (c, slot) in buf.iter_mut().enumerate() {
            *slot = self.values[c * hw + flat];
        }
    }
}

/// The finite label set K; labels are `0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelSet {
    count: usize,
}

impl LabelSet {
    /// At least two classes; at most 256 so masks fit an 8-bit container.
    pub fn new(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::Invalid(format!(
                "label set needs at least 2 classes, got {count}"
            )));
        }
        if count > 256 {
            return Err(Error::Invalid(format!(
                "label set supports at most 256 classes, got {count}"
            )));
        }
        Ok(Self { count })
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Per-pixel, per-class weights w_xk; each row lies on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityField {
    domain: PixelDomain,
    classes: usize,
    /// `|Ω| * classes` weights, pixel-major.
    weights: Vec<f64>,
}

impl ResponsibilityField {
    pub fn new(domain: PixelDomain, classes: usize, weights: Vec<f64>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::Invalid("responsibility field needs classes".into()));
        }
        let expected = domain.len() * classes;
        if weights.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "responsibility weights",
                expected,
                actual: weights.len(),
            });
        }
        for (i, row) in weights.chunks_exact(classes).enumerate() {
            let mut sum = 0.0;
            for &w in row {
                if !(0.0..=1.0).contains(&w) {
                    return Err(Error::Invalid(format!(
                        "weight {w} outside [0,1] in row {i}"
                    )));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Invalid(format!("row {i} sums to {sum}, not 1")));
            }
        }
        Ok(Self {
            domain,
            classes,
            weights,
        })
    }

    pub fn domain(&self) -> &PixelDomain {
        &self.domain
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.classes..(i + 1) * self.classes]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_parts(self) -> (PixelDomain, usize, Vec<f64>) {
        (self.domain, self.classes, self.weights)
    }
}

/// One integer label per ROI pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    domain: PixelDomain,
    classes: usize,
    labels: Vec<u8>,
}

impl SegmentationMask {
    pub fn new(domain: PixelDomain, classes: usize, labels: Vec<u8>) -> Result<Self> {
        if classes == 0 || classes > 256 {
            return Err(Error::Invalid(format!("invalid class count {classes}")));
        }
        if labels.len() != domain.len() {
            return Err(Error::DimensionMismatch {
                what: "mask labels",
                expected: domain.len(),
                actual: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= classes) {
            return Err(Error::Invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            domain,
            classes,
            labels,
        })
    }

    pub fn domain(&self) -> &PixelDomain {
        &self.domain
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }
}

/// Assigns each pixel the class with the highest weight; ties break to the
/// smallest class index.
pub fn argmax_labeling(w: &ResponsibilityField) -> SegmentationMask {
    let labels = (0..w.domain().len())
        .map(|i| {
            let row = w.row(i);
            let mut best = 0usize;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    SegmentationMask::new(w.domain().clone(), w.classes(), labels)
        .expect("argmax labels are in range by construction")
}

/// Rescales every channel to mean zero and population standard deviation one
/// over the ROI; pixels outside the ROI are set to zero.
pub fn normalize_image(img: &MultiChannelImage) -> Result<MultiChannelImage> {
    let domain = img.domain();
    let n = domain.len() as f64;
    let hw = domain.height() * domain.width();
    let mut out = vec![0.0; img.values().len()];
    for c in 0..img.channels() {
        let chan = img.channel(c);
        let mean = domain.pixels().iter().map(|&p| chan[p]).sum::<f64>() / n;
        let var = domain
            .pixels()
            .iter()
            .map(|&p| (chan[p] - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::ZeroVariance { channel: c });
        }
        for &p in domain.pixels() {
            out[c * hw + p] = (chan[p] - mean) / std;
        }
    }
    MultiChannelImage::new(domain.clone(), img.channels(), out)
}
