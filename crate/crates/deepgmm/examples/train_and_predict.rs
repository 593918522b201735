//! Trains one network on several images, then segments an unseen image
//! with a single forward pass. The trained weights survive a checkpoint
//! round trip bit-for-bit.
//!
//! Run with: cargo run --example train_and_predict

use deepgmm::deep::{deep_train_multi, predict, DeepFitOptions, DeepVariant};
use deepgmm::eval::best_permutation_dice;
use deepgmm::image::normalize_image;
use deepgmm::net::checkpoint::{load_checkpoint, save_checkpoint};
use deepgmm::net::NetworkConfig;
use deepgmm::synth::{generate_synthetic, RegionPattern, SyntheticSpec};

fn instance(seed: u64) -> deepgmm::Result<(deepgmm::image::MultiChannelImage, deepgmm::image::SegmentationMask)> {
    let spec = SyntheticSpec {
        classes: 2,
        channels: 1,
        height: 24,
        width: 24,
        means: vec![0.25, 0.75],
        stds: vec![0.05, 0.05],
        pattern: RegionPattern::VoronoiBlobs,
        noise: 0.0,
        seed,
    };
    let (img, gt) = generate_synthetic(&spec)?;
    Ok((normalize_image(&img)?, gt))
}

fn main() -> deepgmm::Result<()> {
    let train: Vec<_> = (0..3).map(instance).collect::<deepgmm::Result<Vec<_>>>()?;
    let images: Vec<_> = train.iter().map(|(img, _)| img.clone()).collect();

    let net_cfg = NetworkConfig {
        depth: 1,
        base_width: 8,
        ..NetworkConfig::new(1, 2)
    };
    let mut opts = DeepFitOptions::new(DeepVariant::DeepSvg);
    opts.max_steps = 300;
    let training = deep_train_multi(&images, 2, &net_cfg, 5, &opts)?;
    println!(
        "trained on {} images for {} steps, final loss {:.6}",
        images.len(),
        training.trace.len() - 1,
        training.trace.last().unwrap().total()
    );
    for (i, (_, gt)) in train.iter().enumerate() {
        let dice = best_permutation_dice(&training.masks[i], gt, 2)?.mean;
        println!("  training image {i}: dice {dice:.4}");
    }

    let dir = tempfile::tempdir().expect("temp dir");
    save_checkpoint(dir.path(), &training.network)?;
    let mut net = load_checkpoint(dir.path())?;
    println!("checkpoint saved and reloaded from {:?}", dir.path());

    // An image the network has never seen; one forward pass, no fitting.
    let (unseen, gt) = instance(77)?;
    let (_, mask) = predict(&mut net, &unseen)?;
    let dice = best_permutation_dice(&mask, &gt, 2)?.mean;
    println!("unseen image: dice {dice:.4}");
    Ok(())
}
