//! Dice overlap, optimal label matching, and the boundary-length
//! smoothness diagnostic on small hand-built masks.
//!
//! Run with: cargo run --example evaluate_masks

use deepgmm::eval::{best_permutation_dice, boundary_length, dice};
use deepgmm::image::{PixelDomain, SegmentationMask};

fn mask(labels: Vec<u8>) -> deepgmm::Result<SegmentationMask> {
    SegmentationMask::new(PixelDomain::full(4, 4)?, 2, labels)
}

fn main() -> deepgmm::Result<()> {
    // Left half class 0, right half class 1.
    let gt = mask(vec![0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1])?;
    // One pixel off.
    let close = mask(vec![0, 0, 1, 1, 0, 1, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1])?;
    println!(
        "per-class dice vs near-perfect prediction: {:.4} / {:.4}",
        dice(&close, &gt, 0)?,
        dice(&close, &gt, 1)?
    );

    // An unsupervised method may find the right regions under swapped
    // names; the permutation search scores the regions, not the names.
    let swapped = mask(vec![1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0])?;
    println!(
        "swapped labels as-is: dice {:.4} / {:.4}",
        dice(&swapped, &gt, 0)?,
        dice(&swapped, &gt, 1)?
    );
    let report = best_permutation_dice(&swapped, &gt, 2)?;
    println!(
        "after best permutation {:?}: mean dice {:.4}",
        report.permutation, report.mean
    );

    // Boundary length counts 4-neighbor label changes: a checkerboard is
    // maximally rough, the half split maximally smooth.
    let checker = mask((0..16).map(|i| ((i + i / 4) % 2) as u8).collect())?;
    println!(
        "boundary length: half split {}, checkerboard {}",
        boundary_length(&gt),
        boundary_length(&checker)
    );
    Ok(())
}
