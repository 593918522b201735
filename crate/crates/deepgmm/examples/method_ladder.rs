//! Runs all four methods on the same noisy image: global mixture (EM),
//! spatially variant mixture (EM), and both network-driven hybrids.
//! The network variants trade a little likelihood for spatial coherence.
//!
//! Run with: cargo run --example method_ladder

use deepgmm::deep::{deep_fit_single, DeepFitOptions, DeepVariant};
use deepgmm::eval::{best_permutation_dice, boundary_length};
use deepgmm::gmm::{em_fit, EmOptions};
use deepgmm::image::{argmax_labeling, normalize_image, SegmentationMask};
use deepgmm::net::NetworkConfig;
use deepgmm::svgmm::em_fit_v;
use deepgmm::synth::{generate_synthetic, RegionPattern, SyntheticSpec};

fn main() -> deepgmm::Result<()> {
    let spec = SyntheticSpec {
        classes: 2,
        channels: 1,
        height: 32,
        width: 32,
        means: vec![0.25, 0.75],
        stds: vec![0.05, 0.05],
        pattern: RegionPattern::VoronoiBlobs,
        noise: 0.08,
        seed: 21,
    };
    let (raw, gt) = generate_synthetic(&spec)?;
    let img = normalize_image(&raw)?;

    let mut results: Vec<(&str, SegmentationMask)> = Vec::new();

    let em = em_fit(&img, 2, 1, &EmOptions::default())?;
    results.push(("gmm", argmax_labeling(&em.responsibilities)));

    let emv = em_fit_v(&img, 2, 1, &EmOptions::default())?;
    results.push(("svgmm", argmax_labeling(&emv.params.proportions_field())));

    // Narrow nets cannot memorize isolated noise pixels; that capacity
    // limit is what buys the smoother masks below. The global variant
    // trains against a weaker per-pixel signal and needs more width and
    // steps to converge.
    for (variant, width, steps) in [
        (DeepVariant::DeepG, 4, 800),
        (DeepVariant::DeepSvg, 2, 300),
    ] {
        let net_cfg = NetworkConfig {
            depth: 2,
            base_width: width,
            ..NetworkConfig::new(1, 2)
        };
        let mut opts = DeepFitOptions::new(variant);
        opts.max_steps = steps;
        let fit = deep_fit_single(&img, 2, &net_cfg, 3, &opts)?;
        results.push((variant.name(), fit.mask));
    }

    println!("{:8} {:>6} {:>9}", "method", "dice", "boundary");
    for (name, mask) in &results {
        let report = best_permutation_dice(mask, &gt, 2)?;
        println!("{:8} {:>6.4} {:>9}", name, report.mean, boundary_length(mask));
    }
    Ok(())
}
