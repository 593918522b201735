//! Segmentation metrics: per-class Dice overlap, exhaustive optimal label
//! matching, and a boundary-length smoothness diagnostic.

use crate::error::{Error, Result};
use crate::image::SegmentationMask;
use itertools::Itertools;

/// Largest class count accepted by the exhaustive permutation search.
pub const MAX_PERMUTATION_CLASSES: usize = 8;

/// Per-class Dice scores under the best label permutation of the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    /// Dice of each class after applying `permutation`.
    pub per_class: Vec<f64>,
    /// Arithmetic mean of `per_class`.
    pub mean: f64,
    /// Applied relabeling: predicted label `a` was renamed `permutation[a]`.
    pub permutation: Vec<usize>,
}

fn check_domains(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<()> {
    if pred.domain() != gt.domain() {
        return Err(Error::DomainMismatch);
    }
    Ok(())
}

fn dice_from_counts(overlap: usize, p: usize, g: usize) -> f64 {
    if p + g == 0 {
        1.0
    } else {
        2.0 * overlap as f64 / (p + g) as f64
    }
}

/// Dice coefficient of class `k`: 2|P∩G| / (|P|+|G|). Both sets empty
/// counts as 1, exactly one empty as 0.
pub fn dice(pred: &SegmentationMask, gt: &SegmentationMask, k: usize) -> Result<f64> {
    check_domains(pred, gt)?;
    let mut overlap = 0usize;
    let mut p = 0usize;
    let mut g = 0usize;
    for i in 0..pred.domain().len() {
        let in_p = pred.label(i) == k;
        let in_g = gt.label(i) == k;
        p += in_p as usize;
        g += in_g as usize;
        overlap += (in_p && in_g) as usize;
    }
    Ok(dice_from_counts(overlap, p, g))
}

/// Searches all `classes`! relabelings of `pred` for the one maximizing the
/// mean per-class Dice against `gt`, using a precomputed overlap table.
pub fn best_permutation_dice(
    pred: &SegmentationMask,
    gt: &SegmentationMask,
    classes: usize,
) -> Result<DiceReport> {
    check_domains(pred, gt)?;
    if classes == 0 {
        return Err(Error::Invalid("need at least one class".into()));
    }
    if classes > MAX_PERMUTATION_CLASSES {
        return Err(Error::TooManyClasses {
            classes,
            max: MAX_PERMUTATION_CLASSES,
        });
    }
    let mut overlap = vec![0usize; classes * classes];
    let mut pred_count = vec![0usize; classes];
    let mut gt_count = vec![0usize; classes];
    for i in 0..pred.domain().len() {
        let (a, b) = (pred.label(i), gt.label(i));
        if a >= classes || b >= classes {
            return Err(Error::Invalid(format!(
                "label out of range for {classes} classes"
            )));
        }
        overlap[a * classes + b] += 1;
        pred_count[a] += 1;
        gt_count[b] += 1;
    }

    // sigma maps predicted label a to sigma[a]; class k then collects the
    // old label a = inverse[k].
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    for sigma in (0..classes).permutations(classes) {
        let mut inverse = vec![0usize; classes];
        for (a, &k) in sigma.iter().enumerate() {
            inverse[k] = a;
        }
        let per_class: Vec<f64> = (0..classes)
            .map(|k| {
                let a = inverse[k];
                dice_from_counts(overlap[a * classes + k], pred_count[a], gt_count[k])
            })
            .collect();
        let mean = per_class.iter().sum::<f64>() / classes as f64;
        if best.as_ref().is_none_or(|(m, _, _)| mean > *m) {
            best = Some((mean, sigma, per_class));
        }
    }
    let (mean, permutation, per_class) = best.expect("at least one permutation exists");
    Ok(DiceReport {
        per_class,
        mean,
        permutation,
    })
}

/// Applies a label permutation to a mask: label `a` becomes `perm[a]`.
pub fn apply_permutation(mask: &SegmentationMask, perm: &[usize]) -> Result<SegmentationMask> {
    if perm.len() < mask.classes() {
        return Err(Error::Invalid(format!(
            "permutation covers {} labels, mask has {}",
            perm.len(),
            mask.classes()
        )));
    }
    let labels = mask
        .labels()
        .iter()
        .map(|&l| perm[l as usize] as u8)
        .collect();
    SegmentationMask::new(mask.domain().clone(), perm.len().max(mask.classes()), labels)
}

/// Number of 4-neighbor pixel pairs inside the ROI with different labels.
pub fn boundary_length(mask: &SegmentationMask) -> usize {
    let d = mask.domain();
    let (h, w) = (d.height(), d.width());
    // Full-grid label lookup; -1 marks pixels outside the ROI.
    let mut grid = vec![-1i32; h * w];
    for (i, &flat) in d.pixels().iter().enumerate() {
        grid[flat] = mask.labels()[i] as i32;
    }
    let mut count = 0usize;
    for r in 0..h {
        for c in 0..w {
            let here = grid[r * w + c];
            if here < 0 {
                continue;
            }
            if c + 1 < w {
                let right = grid[r * w + c + 1];
                if right >= 0 && right != here {
                    count += 1;
                }
            }
            if r + 1 < h {
                let down = grid[(r + 1) * w + c];
                if down >= 0 && down != here {
                    count += 1;
                }
            }
        }
    }
    count
}

/// One delimited report line: id, per-class Dice, mean, permutation,
/// objective value, boundary length.
pub fn report_line(image_id: &str, report: &DiceReport, nll: f64, boundary: usize) -> String {
    let per_class = report.per_class.iter().map(|d| format!("{d:.6}")).join(",");
    let perm = report.permutation.iter().map(|p| p.to_string()).join(",");
    format!(
        "{image_id}\t{per_class}\t{mean:.6}\t{perm}\t{nll:.6}\t{boundary}",
        mean = report.mean
    )
}
