//! Hybrid gradient-EM segmentation: a convolutional network produces the
//! per-pixel responsibilities, mixture parameters come from closed-form
//! M-steps, and the network weights are trained by gradient descent on the
//! mixture likelihood.
//!
//! Two variants share one driver. The spatially variant flavor treats the
//! network output as per-pixel mixing proportions and descends the
//! per-pixel objective; the global flavor derives scalar mixing weights
//! from the network output (class means over the ROI) and descends the
//! classical objective through that dependence. Each outer step takes one
//! optimizer step with the component means and variances frozen at the
//! latest M-step values, then refreshes the responsibilities and re-runs
//! the M-step. An optional penalty pulls the component means toward
//! reference values, which pins class identities across images; the
//! penalty is differentiated through the M-step mean formula.
//!
//! Training on several images accumulates gradients of the summed
//! objective over all images each step and keeps per-image mixture
//! parameters. With a single image this reduces, step for step, to the
//! single-image fit.

use crate::error::{Error, Result};
use crate::gmm::{self, log_sum_exp, DiagGaussian, GaussianEval, MixtureParams};
use crate::image::{argmax_labeling, MultiChannelImage, ResponsibilityField, SegmentationMask};
use crate::net::{nll_v_grad_wrt_w, GradientSet, NetworkConfig, NetworkState};
use crate::svgmm::{self, SpatialMixtureParams};

/// Which mixture the network drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeepVariant {
    /// Scalar mixing weights derived from the responsibilities.
    DeepG,
    /// The responsibilities are the per-pixel mixing proportions.
    DeepSvg,
}

impl DeepVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deepg" => Ok(Self::DeepG),
            "deepsvg" => Ok(Self::DeepSvg),
            _ => Err(Error::Config(format!(
                "unknown variant `{s}`, expected deepg or deepsvg"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::DeepG => "deepg",
            Self::DeepSvg => "deepsvg",
        }
    }
}

/// Knobs for the gradient-EM drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepFitOptions {
    pub variant: DeepVariant,
    pub lr: f64,
    /// Minimum improvement of the best loss that counts as progress.
    pub threshold: f64,
    pub max_steps: usize,
    /// Steps without sufficient improvement before stopping.
    pub window: usize,
    /// Weight of the mean-anchoring penalty; zero disables it.
    pub lambda: f64,
    /// Reference class means, one row per class; required when lambda > 0.
    pub mu_data: Option<Vec<Vec<f64>>>,
}

impl DeepFitOptions {
    pub fn new(variant: DeepVariant) -> Self {
        Self {
            variant,
            lr: 0.001,
            threshold: 0.001,
            max_steps: 5000,
            window: 20,
            lambda: 0.0,
            mu_data: None,
        }
    }

    pub fn validate(&self, classes: usize, channels: usize) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config("convergence threshold must be positive".into()));
        }
        if self.max_steps == 0 || self.window == 0 {
            return Err(Error::Config("max_steps and window must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("penalty weight must be nonnegative".into()));
        }
        if self.lambda != 0.0 {
            let mu = self
                .mu_data
                .as_ref()
                .ok_or_else(|| Error::Config("penalty requires reference means".into()))?;
            if mu.len() != classes || mu.iter().any(|row| row.len() != channels) {
                return Err(Error::Shape(format!(
                    "reference means must be {classes} rows of {channels} channels"
                )));
            }
        }
        Ok(())
    }
}

/// One loss-trace entry: data term plus weighted penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedLoss {
    pub base: f64,
    pub penalty: f64,
}

impl RegularizedLoss {
    pub fn total(&self) -> f64 {
        self.base + self.penalty
    }

    /// Tab-separated record: step, base, penalty, total.
    pub fn record_line(&self, step: usize) -> String {
        format!(
            "{step}\t{:.6}\t{:.6}\t{:.6}",
            self.base,
            self.penalty,
            self.total()
        )
    }
}

/// Squared Frobenius distance between two class-mean matrices.
pub fn mu_regularizer(mu: &[Vec<f64>], mu_data: &[Vec<f64>]) -> Result<f64> {
    if mu.len() != mu_data.len() {
        return Err(Error::Shape(format!(
            "mean matrices have {} and {} rows",
            mu.len(),
            mu_data.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in mu.iter().zip(mu_data) {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "mean rows have {} and {} channels",
                a.len(),
                b.len()
            )));
        }
        for (x, y) in a.iter().zip(b) {
            total += (x - y) * (x - y);
        }
    }
    Ok(total)
}

/// Reference class means from labeled images: per image, the mean intensity
/// vector of each class's pixels; the per-image class means are then
/// averaged across images.
pub fn estimate_mu_data(
    samples: &[(MultiChannelImage, SegmentationMask)],
) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Err(Error::Config("need at least one labeled image".into()));
    }
    let classes = samples[0].1.classes();
    let channels = samples[0].0.channels();
    let mut avg = vec![vec![0.0; channels]; classes];
    for (idx, (img, mask)) in samples.iter().enumerate() {
        if img.domain() != mask.domain() {
            return Err(Error::DomainMismatch);
        }
        if img.channels() != channels {
            return Err(Error::HeterogeneousChannels {
                image: idx,
                expected: channels,
                actual: img.channels(),
            });
        }
        if mask.classes() != classes {
            return Err(Error::ConfigMismatch(format!(
                "mask {idx} has {} classes, expected {classes}",
                mask.classes()
            )));
        }
        let mut sums = vec![vec![0.0; channels]; classes];
        let mut counts = vec![0usize; classes];
        let mut x = vec![0.0; channels];
        for i in 0..img.domain().len() {
            let k = mask.label(i);
            img.fill_pixel(i, &mut x);
            for (s, &v) in sums[k].iter_mut().zip(&x) {
                *s += v;
            }
            counts[k] += 1;
        }
        for k in 0..classes {
            if counts[k] == 0 {
                return Err(Error::MissingClass { image: idx, class: k });
            }
            for (a, s) in avg[k].iter_mut().zip(&sums[k]) {
                *a += s / counts[k] as f64;
            }
        }
    }
    let n = samples.len() as f64;
    for row in &mut avg {
        for v in row {
            *v /= n;
        }
    }
    Ok(avg)
}

/// Mixture parameters produced by a deep fit; the shape depends on the variant.
#[derive(Debug, Clone)]
pub enum DeepMixture {
    Global(MixtureParams),
    SpatiallyVariant(SpatialMixtureParams),
}

impl DeepMixture {
    pub fn components(&self) -> &[DiagGaussian] {
        match self {
            Self::Global(p) => p.components(),
            Self::SpatiallyVariant(p) => p.components(),
        }
    }
}

/// Output of [`deep_fit_single`].
#[derive(Debug)]
pub struct DeepFit {
    pub mixture: DeepMixture,
    /// Argmax of the final network output.
    pub mask: SegmentationMask,
    pub trace: Vec<RegularizedLoss>,
    /// The trained weights that produced the mask.
    pub network: NetworkState,
}

/// Output of [`deep_train_multi`].
#[derive(Debug)]
pub struct DeepTraining {
    pub network: NetworkState,
    /// Summed loss over all training images, per step.
    pub trace: Vec<RegularizedLoss>,
    /// Final training-time mask of each image, in input order.
    pub masks: Vec<SegmentationMask>,
}

/// Per-image mixture state maintained by the driver.
pub(crate) enum FitKind {
    Global(MixtureParams),
    Variant(SpatialMixtureParams),
}

impl FitKind {
    fn components(&self) -> &[DiagGaussian] {
        match self {
            Self::Global(p) => p.components(),
            Self::Variant(p) => p.components(),
        }
    }

    fn into_mixture(self) -> DeepMixture {
        match self {
            Self::Global(p) => DeepMixture::Global(p),
            Self::Variant(p) => DeepMixture::SpatiallyVariant(p),
        }
    }
}

/// The trainable responsibility producer the driver optimizes: the real
/// network in production, a free logit table in equivalence tests.
pub(crate) trait DeepModel {
    fn infer(&mut self, idx: usize, img: &MultiChannelImage) -> Result<ResponsibilityField>;
    /// Clears the gradient accumulator for the upcoming optimizer step.
    fn begin_step(&mut self);
    /// Accumulates parameter gradients for one image. Called directly after
    /// [`Self::infer`] on the same image so retained activations are fresh.
    fn backprop(&mut self, idx: usize, img: &MultiChannelImage, loss_grad: &[f64]) -> Result<()>;
    /// Applies the accumulated gradient with the optimizer.
    fn apply(&mut self, lr: f64) -> Result<()>;
}

pub(crate) struct NetModel {
    pub net: NetworkState,
    acc: Option<GradientSet>,
}

impl NetModel {
    pub fn new(net: NetworkState) -> Self {
        Self { net, acc: None }
    }
}

impl DeepModel for NetModel {
    fn infer(&mut self, _idx: usize, img: &MultiChannelImage) -> Result<ResponsibilityField> {
        self.net.forward(img)
    }

    fn begin_step(&mut self) {
        self.acc = None;
    }

    fn backprop(&mut self, _idx: usize, img: &MultiChannelImage, loss_grad: &[f64]) -> Result<()> {
        let grads = self.net.backward(img, loss_grad)?;
        match &mut self.acc {
            Some(acc) => acc.add(&grads)?,
            None => self.acc = Some(grads),
        }
        Ok(())
    }

    fn apply(&mut self, lr: f64) -> Result<()> {
        let grads = self
            .acc
            .take()
            .ok_or_else(|| Error::Invalid("optimizer step without gradients".into()))?;
        self.net.adamw_step(&grads, lr, 0.0)
    }
}

/// Hook for inspecting which component parameters each step touches.
pub(crate) trait DriveObserver {
    fn refreshed(&mut self, _step: usize, _image: usize, _components: &[DiagGaussian]) {}
    fn gradient_used(&mut self, _step: usize, _image: usize, _components: &[DiagGaussian]) {}
}

impl DriveObserver for () {}

pub(crate) struct DriveOutcome {
    pub ws: Vec<ResponsibilityField>,
    pub fits: Vec<FitKind>,
    pub trace: Vec<RegularizedLoss>,
}

fn refresh_fit(
    variant: DeepVariant,
    img: &MultiChannelImage,
    w: &ResponsibilityField,
) -> Result<FitKind> {
    match variant {
        DeepVariant::DeepG => Ok(FitKind::Global(gmm::m_step(img, w)?)),
        DeepVariant::DeepSvg => Ok(FitKind::Variant(svgmm::m_step_v(img, w)?)),
    }
}

fn base_loss(img: &MultiChannelImage, fit: &FitKind) -> Result<f64> {
    match fit {
        FitKind::Global(p) => gmm::nll(img, p),
        FitKind::Variant(p) => svgmm::nll_v(img, p),
    }
}

/// Loss gradient for the global variant: the objective is evaluated per
/// pixel at the broadcast scalar proportions, and each responsibility
/// receives the derivative of its own pixel's term, -(1/n) g_k(x) / sum_j
/// pi_j g_j(x). Chaining through the spatial averaging that produces pi
/// instead would make the gradient constant across pixels (every pixel's
/// entry for class k collapses to the same posterior-mass term), which
/// carries no spatial signal and degenerates to a single-class labeling;
/// the per-pixel form is the reading that reproduces the published
/// behavior of the method.
fn global_loss_grad(img: &MultiChannelImage, params: &MixtureParams) -> Result<Vec<f64>> {
    let ev = GaussianEval::new(params.components());
    let k = params.classes();
    let n = img.domain().len();
    let inv_n = 1.0 / n as f64;
    let log_pi: Vec<f64> = params.weights().iter().map(|&p| p.ln()).collect();
    let mut x = vec![0.0; img.channels()];
    let mut log_dens = vec![0.0; k];
    let mut terms = vec![0.0; k];
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        img.fill_pixel(i, &mut x);
        for c in 0..k {
            log_dens[c] = ev.log_density_at(c, &x);
            terms[c] = log_pi[c] + log_dens[c];
        }
        let denom = log_sum_exp(&terms);
        for c in 0..k {
            out[i * k + c] = -inv_n * (log_dens[c] - denom).exp();
        }
    }
    Ok(out)
}

fn base_loss_grad(
    img: &MultiChannelImage,
    w: &ResponsibilityField,
    fit: &FitKind,
) -> Result<Vec<f64>> {
    match fit {
        FitKind::Global(p) => global_loss_grad(img, p),
        FitKind::Variant(p) => nll_v_grad_wrt_w(img, w, p.components()),
    }
}

fn component_means(components: &[DiagGaussian]) -> Vec<Vec<f64>> {
    components.iter().map(|c| c.mean().to_vec()).collect()
}

/// Adds d(lambda * ||mu(w) - mu_data||^2)/dw to the loss gradient. The class
/// means are M-step outputs mu_k = sum_x w_xk I(x) / S_k, so the derivative
/// with respect to w_xk is sum_c 2 lambda (mu_kc - mu_data_kc)(I_c(x) -
/// mu_kc) / S_k.
fn add_penalty_grad(
    img: &MultiChannelImage,
    w: &ResponsibilityField,
    components: &[DiagGaussian],
    mu_data: &[Vec<f64>],
    lambda: f64,
    grad: &mut [f64],
) {
    let k = components.len();
    let n = img.domain().len();
    let m = img.channels();
    let mut totals = vec![0.0; k];
    for i in 0..n {
        for (t, &v) in totals.iter_mut().zip(w.row(i)) {
            *t += v;
        }
    }
    // coeff[k][c] = 2 lambda (mu_kc - mu_data_kc) / S_k
    let coeff: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mean = components[c].mean();
            mean.iter()
                .zip(&mu_data[c])
                .map(|(&mu, &md)| 2.0 * lambda * (mu - md) / totals[c])
                .collect()
        })
        .collect();
    let mut x = vec![0.0; m];
    for i in 0..n {
        img.fill_pixel(i, &mut x);
        for c in 0..k {
            let mean = components[c].mean();
            let mut g = 0.0;
            for ch in 0..m {
                g += coeff[c][ch] * (x[ch] - mean[ch]);
            }
            grad[i * k + c] += g;
        }
    }
}

/// One refresh pass over all images: infer responsibilities, M-step, record
/// the loss, compute d(loss)/dw and backpropagate into the accumulator.
#[allow(clippy::too_many_arguments)]
fn refresh_pass<M: DeepModel, O: DriveObserver>(
    model: &mut M,
    observer: &mut O,
    images: &[&MultiChannelImage],
    opts: &DeepFitOptions,
    step: usize,
    ws: &mut Vec<ResponsibilityField>,
    fits: &mut Vec<FitKind>,
) -> Result<RegularizedLoss> {
    model.begin_step();
    ws.clear();
    fits.clear();
    let mut entry = RegularizedLoss {
        base: 0.0,
        penalty: 0.0,
    };
    for (i, img) in images.iter().enumerate() {
        let w = model.infer(i, img)?;
        let fit = refresh_fit(opts.variant, img, &w)?;
        observer.refreshed(step, i, fit.components());
        entry.base += base_loss(img, &fit)?;
        let mut grad = base_loss_grad(img, &w, &fit)?;
        if opts.lambda != 0.0 {
            let mu_data = opts.mu_data.as_ref().expect("validated with the options");
            let mu = component_means(fit.components());
            entry.penalty += opts.lambda * mu_regularizer(&mu, mu_data)?;
            add_penalty_grad(img, &w, fit.components(), mu_data, opts.lambda, &mut grad);
        }
        observer.gradient_used(step, i, fit.components());
        model.backprop(i, img, &grad)?;
        ws.push(w);
        fits.push(fit);
    }
    Ok(entry)
}

/// Shared gradient-EM loop: refresh, then alternate optimizer steps with
/// refreshes until the best total loss stops improving by `threshold`
/// within `window` steps, or `max_steps` is reached.
pub(crate) fn drive<M: DeepModel, O: DriveObserver>(
    model: &mut M,
    images: &[&MultiChannelImage],
    classes: usize,
    opts: &DeepFitOptions,
    observer: &mut O,
) -> Result<DriveOutcome> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config("need at least one image".into()))?;
    let channels = first.channels();
    for (i, img) in images.iter().enumerate() {
        if img.channels() != channels {
            return Err(Error::HeterogeneousChannels {
                image: i,
                expected: channels,
                actual: img.channels(),
            });
        }
        if img.domain().len() < classes {
            return Err(Error::TooFewPixels {
                pixels: img.domain().len(),
                classes,
            });
        }
    }
    opts.validate(classes, channels)?;

    let mut ws = Vec::with_capacity(images.len());
    let mut fits = Vec::with_capacity(images.len());
    let mut trace = Vec::new();
    let mut best_at = Vec::new();

    let entry = refresh_pass(model, observer, images, opts, 0, &mut ws, &mut fits)?;
    if !entry.total().is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    best_at.push(entry.total());
    trace.push(entry);

    for step in 1..=opts.max_steps {
        model.apply(opts.lr)?;
        let entry = refresh_pass(model, observer, images, opts, step, &mut ws, &mut fits)?;
        if !entry.total().is_finite() {
            return Err(Error::NonFinite { step });
        }
        best_at.push(entry.total().min(*best_at.last().expect("non-empty")));
        trace.push(entry);
        // Stop when the best loss window steps ago is not beaten by at
        // least threshold.
        if step >= opts.window {
            let before = best_at[best_at.len() - 1 - opts.window];
            let now = *best_at.last().expect("non-empty");
            if before - now < opts.threshold {
                break;
            }
        }
    }
    Ok(DriveOutcome { ws, fits, trace })
}

fn check_net_config(cfg: &NetworkConfig, classes: usize, channels: usize) -> Result<()> {
    if cfg.out_channels != classes {
        return Err(Error::ConfigMismatch(format!(
            "network emits {} classes, segmentation needs {classes}",
            cfg.out_channels
        )));
    }
    if cfg.in_channels != channels {
        return Err(Error::ConfigMismatch(format!(
            "network expects {} channels, images have {channels}",
            cfg.in_channels
        )));
    }
    Ok(())
}

/// Fits one image with the hybrid gradient-EM loop and a freshly
/// initialized network.
pub fn deep_fit_single(
    img: &MultiChannelImage,
    classes: usize,
    net_cfg: &NetworkConfig,
    seed: u64,
    opts: &DeepFitOptions,
) -> Result<DeepFit> {
    check_net_config(net_cfg, classes, img.channels())?;
    let mut model = NetModel::new(NetworkState::init(net_cfg.clone(), seed)?);
    let outcome = drive(&mut model, &[img], classes, opts, &mut ())?;
    let w = outcome.ws.into_iter().next().expect("one image in, one out");
    let fit = outcome.fits.into_iter().next().expect("one image in, one out");
    Ok(DeepFit {
        mixture: fit.into_mixture(),
        mask: argmax_labeling(&w),
        trace: outcome.trace,
        network: model.net,
    })
}

/// Trains one network on several images against the summed objective, with
/// per-image mixture parameters refreshed by M-steps each outer step.
pub fn deep_train_multi(
    images: &[MultiChannelImage],
    classes: usize,
    net_cfg: &NetworkConfig,
    seed: u64,
    opts: &DeepFitOptions,
) -> Result<DeepTraining> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config("need at least one image".into()))?;
    check_net_config(net_cfg, classes, first.channels())?;
    let refs: Vec<&MultiChannelImage> = images.iter().collect();
    let mut model = NetModel::new(NetworkState::init(net_cfg.clone(), seed)?);
    let outcome = drive(&mut model, &refs, classes, opts, &mut ())?;
    Ok(DeepTraining {
        network: model.net,
        trace: outcome.trace,
        masks: outcome.ws.iter().map(argmax_labeling).collect(),
    })
}

/// Single forward pass plus argmax; no optimization.
pub fn predict(
    net: &mut NetworkState,
    img: &MultiChannelImage,
) -> Result<(ResponsibilityField, SegmentationMask)> {
    let w = net.forward(img)?;
    let mask = argmax_labeling(&w);
    Ok((w, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::best_permutation_dice;
    use crate::image::{normalize_image, PixelDomain};
    use crate::net::optim::adamw_update;
    use crate::net::layers::{softmax_row, softmax_row_backward};
    use crate::synth::{generate_synthetic, RegionPattern, SyntheticSpec};

    fn two_class_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            classes: 2,
            channels: 1,
            height: 24,
            width: 24,
            means: vec![0.2, 0.8],
            stds: vec![0.04, 0.04],
            pattern: RegionPattern::VoronoiBlobs,
            noise: 0.0,
            seed,
        }
    }

    fn fit_opts(variant: DeepVariant, max_steps: usize) -> DeepFitOptions {
        DeepFitOptions {
            max_steps,
            ..DeepFitOptions::new(variant)
        }
    }

    #[test]
    fn mu_regularizer_matches_hand_computed_distances() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(mu_regularizer(&a, &a).unwrap(), 0.0);
        let b = vec![vec![2.0, 3.0], vec![4.0, 5.0]];
        assert_eq!(mu_regularizer(&a, &b).unwrap(), 4.0);
        let mu = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let zero = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(mu_regularizer(&mu, &zero).unwrap(), 5.0);
    }

    #[test]
    fn mu_regularizer_rejects_mismatched_shapes() {
        let a = vec![vec![1.0, 2.0]];
        let b = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert!(matches!(mu_regularizer(&a, &b), Err(Error::Shape(_))));
        let c = vec![vec![1.0]];
        assert!(matches!(mu_regularizer(&a, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn estimate_mu_data_reduces_constant_classes_exactly() {
        let domain = PixelDomain::full(2, 4).unwrap();
        let values = vec![0.25, 0.25, 0.75, 0.75, 0.25, 0.25, 0.75, 0.75];
        let labels = vec![0, 0, 1, 1, 0, 0, 1, 1];
        let img = MultiChannelImage::new(domain.clone(), 1, values).unwrap();
        let mask = SegmentationMask::new(domain, 2, labels).unwrap();
        let mu = estimate_mu_data(&[(img, mask)]).unwrap();
        assert_eq!(mu, vec![vec![0.25], vec![0.75]]);
    }

    #[test]
    fn estimate_mu_data_averages_per_image_means() {
        let domain = PixelDomain::full(1, 4).unwrap();
        let labels = vec![0, 0, 1, 1];
        let img_a = MultiChannelImage::new(domain.clone(), 1, vec![0.1, 0.1, 0.5, 0.5]).unwrap();
        let img_b = MultiChannelImage::new(domain.clone(), 1, vec![0.3, 0.3, 0.9, 0.9]).unwrap();
        let mask = SegmentationMask::new(domain, 2, labels).unwrap();
        let mu = estimate_mu_data(&[(img_a, mask.clone()), (img_b, mask)]).unwrap();
        assert!((mu[0][0] - 0.2).abs() < 1e-15);
        assert!((mu[1][0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn estimate_mu_data_reports_the_image_missing_a_class() {
        let domain = PixelDomain::full(1, 4).unwrap();
        let full = SegmentationMask::new(domain.clone(), 3, vec![0, 1, 2, 0]).unwrap();
        let partial = SegmentationMask::new(domain.clone(), 3, vec![0, 1, 1, 0]).unwrap();
        let img = MultiChannelImage::new(domain, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let err = estimate_mu_data(&[(img.clone(), full), (img, partial)]).unwrap_err();
        assert!(matches!(err, Error::MissingClass { image: 1, class: 2 }));
    }

    #[test]
    fn estimate_mu_data_recovers_generator_means() {
        let spec = SyntheticSpec {
            height: 32,
            width: 32,
            ..two_class_spec(3)
        };
        let (img, mask) = generate_synthetic(&spec).unwrap();
        let mu = estimate_mu_data(&[(img, mask)]).unwrap();
        // Sampling noise bound: 3 sigma / sqrt(n_k) with n_k >= ~300.
        for k in 0..2 {
            let bound = 3.0 * spec.std(k, 0) / 300.0_f64.sqrt();
            assert!(
                (mu[k][0] - spec.mean(k, 0)).abs() < bound.max(0.01),
                "class {k}: {} vs {}",
                mu[k][0],
                spec.mean(k, 0)
            );
        }
    }

    #[test]
    fn deep_svg_segments_separated_classes() {
        let (raw, truth) = generate_synthetic(&two_class_spec(1)).unwrap();
        let img = normalize_image(&raw).unwrap();
        let fit = deep_fit_single(
            &img,
            2,
            &NetworkConfig::toy(1, 2),
            5,
            &fit_opts(DeepVariant::DeepSvg, 400),
        )
        .unwrap();
        let report = best_permutation_dice(&fit.mask, &truth, 2).unwrap();
        assert!(report.mean >= 0.95, "dice {}", report.mean);
        assert!(matches!(fit.mixture, DeepMixture::SpatiallyVariant(_)));
        assert!(fit.trace.iter().all(|l| l.total().is_finite()));
        assert!(fit.trace.iter().all(|l| l.penalty == 0.0));
    }

    #[test]
    fn deep_g_segments_separated_classes() {
        let (raw, truth) = generate_synthetic(&two_class_spec(1)).unwrap();
        let img = normalize_image(&raw).unwrap();
        let fit = deep_fit_single(
            &img,
            2,
            &NetworkConfig::toy(1, 2),
            5,
            &fit_opts(DeepVariant::DeepG, 400),
        )
        .unwrap();
        let report = best_permutation_dice(&fit.mask, &truth, 2).unwrap();
        assert!(report.mean >= 0.95, "dice {}", report.mean);
        assert!(matches!(fit.mixture, DeepMixture::Global(_)));
    }

    #[test]
    fn deep_svg_final_loss_stays_near_the_em_optimum() {
        let (raw, _) = generate_synthetic(&two_class_spec(2)).unwrap();
        let img = normalize_image(&raw).unwrap();
        let fit = deep_fit_single(
            &img,
            2,
            &NetworkConfig::toy(1, 2),
            5,
            &fit_opts(DeepVariant::DeepSvg, 600),
        )
        .unwrap();
        let em = svgmm::em_fit_v(&img, 2, 1, &Default::default()).unwrap();
        let em_nll = *em.nll_v_trace.last().unwrap();
        let deep_nll = fit.trace.last().unwrap().base;
        assert!(
            deep_nll >= em_nll - 0.1,
            "deep {deep_nll} vs em {em_nll}"
        );
    }

    #[test]
    fn single_image_training_collapses_to_the_single_fit() {
        let (raw, _) = generate_synthetic(&two_class_spec(4)).unwrap();
        let img = normalize_image(&raw).unwrap();
        let cfg = NetworkConfig::toy(1, 2);
        let opts = fit_opts(DeepVariant::DeepSvg, 60);
        let single = deep_fit_single(&img, 2, &cfg, 9, &opts).unwrap();
        let multi = deep_train_multi(std::slice::from_ref(&img), 2, &cfg, 9, &opts).unwrap();
        assert_eq!(single.trace.len(), multi.trace.len());
        for (a, b) in single.trace.iter().zip(&multi.trace) {
            assert_eq!(a.base.to_bits(), b.base.to_bits());
            assert_eq!(a.penalty.to_bits(), b.penalty.to_bits());
        }
        assert_eq!(single.mask.labels(), multi.masks[0].labels());
    }

    #[test]
    fn identical_copies_reproduce_the_single_image_mask() {
        let (raw, _) = generate_synthetic(&two_class_spec(6)).unwrap();
        let img = normalize_image(&raw).unwrap();
        let cfg = NetworkConfig::toy(1, 2);
        // Tiny threshold keeps both runs going for the full step budget so
        // the optimizer sees the same number of updates.
        let opts = DeepFitOptions {
            max_steps: 120,
            threshold: 1e-12,
            ..DeepFitOptions::new(DeepVariant::DeepSvg)
        };
        let single = deep_fit_single(&img, 2, &cfg, 3, &opts).unwrap();
        let copies = vec![img.clone(), img.clone(), img.clone()];
        let multi = deep_train_multi(&copies, 2, &cfg, 3, &opts).unwrap();
        for mask in &multi.masks {
            assert_eq!(mask.labels(), single.mask.labels());
        }
        // Summed loss scales with the copy count: exactly at the start,
        // then within the small drift the optimizer's epsilon introduces
        // (trajectories separate once the assignments start binarizing).
        assert_eq!(
            multi.trace[0].base.to_bits(),
            (3.0 * single.trace[0].base).to_bits()
        );
        for (a, b) in single.trace.iter().zip(&multi.trace).take(40) {
            assert!((3.0 * a.base - b.base).abs() < 1e-3 * b.base.abs());
        }
    }

    #[test]
    fn gradient_steps_use_the_latest_m_step_components() {
        #[derive(Default)]
        struct Recorder {
            refreshed: Vec<(usize, usize, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
            used: Vec<(usize, usize, Vec<Vec<f64>>, Vec<Vec<f64>>)>,
        }
        impl DriveObserver for Recorder {
            fn refreshed(&mut self, step: usize, image: usize, comps: &[DiagGaussian]) {
                let means = comps.iter().map(|c| c.mean().to_vec()).collect();
                let vars = comps.iter().map(|c| c.var().to_vec()).collect();
                self.refreshed.push((step, image, means, vars));
            }
            fn gradient_used(&mut self, step: usize, image: usize, comps: &[DiagGaussian]) {
                let means = comps.iter().map(|c| c.mean().to_vec()).collect();
                let vars = comps.iter().map(|c| c.var().to_vec()).collect();
                self.used.push((step, image, means, vars));
            }
        }

        let (raw, _) = generate_synthetic(&two_class_spec(7)).unwrap();
        let img = normalize_image(&raw).unwrap();
        let mut model =
            NetModel::new(NetworkState::init(NetworkConfig::toy(1, 2), 2).unwrap());
        let mut rec = Recorder::default();
        let opts = fit_opts(DeepVariant::DeepSvg, 30);
        drive(&mut model, &[&img], 2, &opts, &mut rec).unwrap();

        assert!(rec.refreshed.len() >= 10);
        assert_eq!(rec.refreshed.len(), rec.used.len());
        // Every gradient computation sees exactly the components the same
        // step's M-step produced, bitwise.
        for (r, u) in rec.refreshed.iter().zip(&rec.used) {
            assert_eq!(r.0, u.0);
            assert_eq!(r.1, u.1);
            for (rm, um) in r.2.iter().zip(&u.2) {
                for (a, b) in rm.iter().zip(um) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            for (rv, uv) in r.3.iter().zip(&u.3) {
                for (a, b) in rv.iter().zip(uv) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
        // Means move between steps, so the freeze is not vacuous.
        let first = &rec.refreshed[0].2;
        let last = &rec.refreshed.last().unwrap().2;
        assert!(first != last);
    }

    /// Free per-pixel logits instead of a network: the driver's fixed
    /// points then coincide with the spatially variant EM fixed points.
    struct LogitTable {
        classes: usize,
        logits: Vec<f64>,
        m: Vec<f64>,
        v: Vec<f64>,
        step: u64,
        probs: Vec<f64>,
        acc: Vec<f64>,
    }

    impl LogitTable {
        /// Small random logits; an exactly uniform start is a symmetric
        /// saddle (identical components, zero gradient) with no network
        /// initialization noise to break it.
        fn new(pixels: usize, classes: usize, seed: u64) -> Self {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            Self {
                classes,
                logits: (0..pixels * classes)
                    .map(|_| rng.random_range(-0.01..0.01))
                    .collect(),
                m: vec![0.0; pixels * classes],
                v: vec![0.0; pixels * classes],
                step: 0,
                probs: vec![0.0; pixels * classes],
                acc: vec![0.0; pixels * classes],
            }
        }
    }

    impl DeepModel for LogitTable {
        fn infer(&mut self, _idx: usize, img: &MultiChannelImage) -> Result<ResponsibilityField> {
            let k = self.classes;
            for i in 0..img.domain().len() {
                softmax_row(&self.logits[i * k..(i + 1) * k], &mut self.probs[i * k..(i + 1) * k]);
            }
            ResponsibilityField::new(img.domain().clone(), k, self.probs.clone())
        }

        fn begin_step(&mut self) {
            self.acc.iter_mut().for_each(|g| *g = 0.0);
        }

        fn backprop(
            &mut self,
            _idx: usize,
            img: &MultiChannelImage,
            loss_grad: &[f64],
        ) -> Result<()> {
            let k = self.classes;
            let mut row = vec![0.0; k];
            for i in 0..img.domain().len() {
                softmax_row_backward(
                    &self.probs[i * k..(i + 1) * k],
                    &loss_grad[i * k..(i + 1) * k],
                    &mut row,
                );
                for (slot, &g) in self.acc[i * k..(i + 1) * k].iter_mut().zip(&row) {
                    *slot += g;
                }
            }
            Ok(())
        }

        fn apply(&mut self, lr: f64) -> Result<()> {
            self.step += 1;
            adamw_update(
                &mut self.logits,
                &mut self.m,
                &mut self.v,
                &self.acc,
                self.step,
                lr,
                0.0,
            );
            Ok(())
        }
    }

    #[test]
    fn free_logit_table_reaches_the_em_fixed_point() {
        let spec = SyntheticSpec {
            height: 12,
            width: 12,
            ..two_class_spec(8)
        };
        let (raw, _) = generate_synthetic(&spec).unwrap();
        let img = normalize_image(&raw).unwrap();

        let mut table = LogitTable::new(img.domain().len(), 2, 1);
        let opts = DeepFitOptions {
            lr: 0.1,
            max_steps: 800,
            ..DeepFitOptions::new(DeepVariant::DeepSvg)
        };
        let outcome = drive(&mut table, &[&img], 2, &opts, &mut ()).unwrap();
        let table_mask = argmax_labeling(&outcome.ws[0]);

        let em = svgmm::em_fit_v(&img, 2, 1, &Default::default()).unwrap();
        let em_mask = argmax_labeling(&em.params.proportions_field());

        let report = best_permutation_dice(&table_mask, &em_mask, 2).unwrap();
        assert!(report.mean >= 1.0 - 1e-12, "dice {}", report.mean);
    }

    #[test]
    fn mean_anchoring_pins_class_identity() {
        let (raw, truth) = generate_synthetic(&two_class_spec(10)).unwrap();
        let img = normalize_image(&raw).unwrap();
        // Reference means in normalized intensity units, class 0 dark.
        let mu_data = estimate_mu_data(&[(img.clone(), truth.clone())]).unwrap();
        let opts = DeepFitOptions {
            lambda: 1.0,
            mu_data: Some(mu_data),
            ..fit_opts(DeepVariant::DeepSvg, 400)
        };
        let fit = deep_fit_single(&img, 2, &NetworkConfig::toy(1, 2), 11, &opts).unwrap();
        let report = best_permutation_dice(&fit.mask, &truth, 2).unwrap();
        // Anchored means make the identity permutation optimal: no label
        // rearrangement needed.
        assert_eq!(report.permutation, vec![0, 1]);
        assert!(report.mean >= 0.9, "dice {}", report.mean);
        let first = fit.trace.first().unwrap().penalty;
        let last = fit.trace.last().unwrap().penalty;
        assert!(last < first, "penalty {first} -> {last}");
        assert!(fit.trace.iter().all(|l| l.penalty >= 0.0));
    }

    #[test]
    fn options_validation_catches_bad_configurations() {
        let base = DeepFitOptions::new(DeepVariant::DeepSvg);
        let bad_lr = DeepFitOptions { lr: 0.0, ..base.clone() };
        assert!(matches!(bad_lr.validate(2, 1), Err(Error::Config(_))));
        let neg_lambda = DeepFitOptions { lambda: -1.0, ..base.clone() };
        assert!(matches!(neg_lambda.validate(2, 1), Err(Error::Config(_))));
        let missing_mu = DeepFitOptions { lambda: 1.0, ..base.clone() };
        assert!(matches!(missing_mu.validate(2, 1), Err(Error::Config(_))));
        let bad_shape = DeepFitOptions {
            lambda: 1.0,
            mu_data: Some(vec![vec![0.5]]),
            ..base
        };
        assert!(matches!(bad_shape.validate(2, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn variant_names_round_trip() {
        assert_eq!(DeepVariant::parse("deepG").unwrap(), DeepVariant::DeepG);
        assert_eq!(DeepVariant::parse("deepsvg").unwrap(), DeepVariant::DeepSvg);
        assert_eq!(DeepVariant::DeepG.name(), "deepg");
        assert!(DeepVariant::parse("gmm").is_err());
    }

    #[test]
    fn runaway_penalty_reports_the_non_finite_step() {
        let (raw, _) = generate_synthetic(&two_class_spec(1)).unwrap();
        let img = normalize_image(&raw).unwrap();
        let opts = DeepFitOptions {
            lambda: 1.0,
            // Squaring 1e200 overflows, so the very first loss is infinite.
            mu_data: Some(vec![vec![1e200], vec![1e200]]),
            ..DeepFitOptions::new(DeepVariant::DeepSvg)
        };
        let err =
            deep_fit_single(&img, 2, &NetworkConfig::toy(1, 2), 0, &opts).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 0 }));
    }

    #[test]
    fn too_few_pixels_are_rejected() {
        let domain = PixelDomain::full(1, 2).unwrap();
        let img = MultiChannelImage::new(domain, 1, vec![0.1, 0.9]).unwrap();
        let err = deep_fit_single(
            &img,
            3,
            &NetworkConfig::toy(1, 3),
            0,
            &DeepFitOptions::new(DeepVariant::DeepSvg),
        )
        .unwrap_err();
        assert!(matches!(err, Error::TooFewPixels { pixels: 2, classes: 3 }));
    }

    #[test]
    fn mixed_channel_training_sets_are_rejected() {
        let d1 = PixelDomain::full(4, 4).unwrap();
        let one = MultiChannelImage::new(d1.clone(), 1, vec![0.5; 16]).unwrap();
        let two = MultiChannelImage::new(d1, 2, vec![0.5; 32]).unwrap();
        let cfg = NetworkConfig::toy(1, 2);
        let err = deep_train_multi(
            &[one, two],
            2,
            &cfg,
            0,
            &DeepFitOptions::new(DeepVariant::DeepSvg),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::HeterogeneousChannels { image: 1, expected: 1, actual: 2 }
        ));
    }

    #[test]
    fn predict_handles_a_uniform_zero_image() {
        let mut net = NetworkState::init(NetworkConfig::toy(1, 3), 1).unwrap();
        let domain = PixelDomain::full(8, 8).unwrap();
        let img = MultiChannelImage::new(domain, 1, vec![0.0; 64]).unwrap();
        let (w, mask) = predict(&mut net, &img).unwrap();
        for i in 0..64 {
            let sum: f64 = w.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(mask.label(i) < 3);
        }
    }

    #[test]
    fn predict_reproduces_the_training_time_masks() {
        let (raw_a, _) = generate_synthetic(&two_class_spec(12)).unwrap();
        let (raw_b, _) = generate_synthetic(&two_class_spec(13)).unwrap();
        let images = vec![
            normalize_image(&raw_a).unwrap(),
            normalize_image(&raw_b).unwrap(),
        ];
        let mut trained = deep_train_multi(
            &images,
            2,
            &NetworkConfig::toy(1, 2),
            4,
            &fit_opts(DeepVariant::DeepSvg, 80),
        )
        .unwrap();
        for (img, mask) in images.iter().zip(&trained.masks) {
            let (_, predicted) = predict(&mut trained.network, img).unwrap();
            assert_eq!(predicted.labels(), mask.labels());
        }
    }
}
