//! Verifies the network's reverse-mode gradients against central finite
//! differences of the spatially variant likelihood, end to end through
//! softmax, decoder, skip connections and encoder.
//!
//! Run with: cargo run --example gradient_check

use deepgmm::gmm::DiagGaussian;
use deepgmm::image::{MultiChannelImage, PixelDomain};
use deepgmm::net::{finite_diff_check, NetworkConfig, NetworkState};

fn main() -> deepgmm::Result<()> {
    // A deterministic but unstructured input keeps every unit active.
    let domain = PixelDomain::full(12, 10)?;
    let values = (0..120).map(|i| ((i * 37 % 23) as f64 - 11.0) / 7.0).collect();
    let img = MultiChannelImage::new(domain, 1, values)?;

    let components = vec![
        DiagGaussian::new(vec![-0.8], vec![0.3])?,
        DiagGaussian::new(vec![0.9], vec![0.4])?,
    ];

    let cfg = NetworkConfig::toy(1, 2);
    let mut net = NetworkState::init(cfg, 5)?;
    println!("network with {} parameters", net.num_params());

    let report = finite_diff_check(&mut net, &img, &components, 1e-5, 1e-4)?;
    println!(
        "checked {} sampled parameters, max relative error {:.3e} (worst: {} [{}])",
        report.checked, report.max_rel_error, report.worst_param, report.worst_index
    );
    println!("pass at tolerance {:.0e}: {}", report.tolerance, report.pass);
    Ok(())
}
