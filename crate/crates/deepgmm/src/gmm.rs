//! Classical Gaussian mixture model with diagonal covariances: density
//! evaluation, the averaged negative log-likelihood, E/M steps and the EM
//! driver with posterior labeling.
//!
//! All likelihood arithmetic runs in log space with log-sum-exp
//! stabilization and double-precision accumulation in a fixed pixel-major,
//! class-minor order. The spatially variant objective reuses the exact same
//! summation core, so the constant-proportions special case reproduces
//! [`nll`] bit for bit.

use crate::error::{Error, Result};
use crate::image::{MultiChannelImage, ResponsibilityField};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Variance floor applied in every M-step to keep densities non-singular.
pub const VAR_FLOOR: f64 = 1e-6;

/// Total-responsibility threshold below which a component counts as dead.
pub const EMPTY_COMPONENT_TOL: f64 = 1e-12;

/// An m-variate Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                what: "gaussian mean/var",
                expected: mean.len(),
                actual: var.len(),
            });
        }
        if mean.is_empty() {
            return Err(Error::Invalid("gaussian needs at least one channel".into()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("gaussian mean must be finite".into()));
        }
        if var.iter().any(|&v| !v.is_finite() || v < VAR_FLOOR) {
            return Err(Error::Invalid(format!(
                "variances must be finite and at least {VAR_FLOOR}"
            )));
        }
        Ok(Self { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }
}

/// Global mixing weights plus one diagonal Gaussian per class.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    weights: Vec<f64>,
    components: Vec<DiagGaussian>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, components: Vec<DiagGaussian>) -> Result<Self> {
        if weights.len() != components.len() || components.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "mixture weights/components",
                expected: components.len().max(1),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::Invalid("mixing weights must lie in [0,1]".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("mixing weights sum to {sum}")));
        }
        let m = components[0].dim();
        if components.iter().any(|c| c.dim() != m) {
            return Err(Error::Invalid("components have mixed dimensions".into()));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn classes(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }
}

/// log g(x | mu, Sigma) for a diagonal Gaussian.
pub fn log_density(g: &DiagGaussian, x: &[f64]) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::DimensionMismatch {
            what: "log_density input",
            expected: g.dim(),
            actual: x.len(),
        });
    }
    let m = g.dim() as f64;
    let mut log_det = 0.0;
    let mut quad = 0.0;
    for j in 0..g.dim() {
        log_det += g.var[j].ln();
        let d = x[j] - g.mean[j];
        quad += d * d / g.var[j];
    }
    Ok(-0.5 * m * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det - 0.5 * quad)
}

/// log sum_k exp(terms[k]) with max subtraction, fixed index order.
pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &t in terms {
        if t > max {
            max = t;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for &t in terms {
        sum += (t - max).exp();
    }
    max + sum.ln()
}

/// Precomputed per-component constants for repeated log-density evaluation.
pub(crate) struct GaussianEval {
    classes: usize,
    dim: usize,
    log_norm: Vec<f64>,
    means: Vec<f64>,
    inv_vars: Vec<f64>,
}

impl GaussianEval {
    pub(crate) fn new(components: &[DiagGaussian]) -> Self {
        let classes = components.len();
        let dim = components[0].dim();
        let mut log_norm = Vec::with_capacity(classes);
        let mut means = Vec::with_capacity(classes * dim);
        let mut inv_vars = Vec::with_capacity(classes * dim);
        for c in components {
            let mut log_det = 0.0;
            for j in 0..dim {
                log_det += c.var[j].ln();
                means.push(c.mean[j]);
                inv_vars.push(1.0 / c.var[j]);
            }
            log_norm.push(-0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det);
        }
        Self {
            classes,
            dim,
            log_norm,
            means,
            inv_vars,
        }
    }

    #[inline]
    pub(crate) fn log_density_at(&self, k: usize, x: &[f64]) -> f64 {
        let base = k * self.dim;
        let mut quad = 0.0;
        for j in 0..self.dim {
            let d = x[j] - self.means[base + j];
            quad += d * d * self.inv_vars[base + j];
        }
        self.log_norm[k] - 0.5 * quad
    }

    pub(crate) fn classes(&self) -> usize {
        self.classes
    }
}

fn check_dims(img: &MultiChannelImage, components: &[DiagGaussian]) -> Result<()> {
    if img.channels() != components[0].dim() {
        return Err(Error::DimensionMismatch {
            what: "image channels vs component dimension",
            expected: components[0].dim(),
            actual: img.channels(),
        });
    }
    Ok(())
}

/// Shared summation core for NLL and NLL_V: the closure fills the per-pixel
/// log priors, everything else (term order, log-sum-exp, accumulation) is
/// identical for both objectives so the constant-prior case agrees bitwise.
pub(crate) fn average_nll(
    img: &MultiChannelImage,
    components: &[DiagGaussian],
    mut fill_log_priors: impl FnMut(usize, &mut [f64]),
) -> f64 {
    let ev = GaussianEval::new(components);
    let k = ev.classes();
    let n = img.domain().len();
    let mut x = vec![0.0; img.channels()];
    let mut log_priors = vec![0.0; k];
    let mut terms = vec![0.0; k];
    let mut acc = 0.0;
    for i in 0..n {
        img.fill_pixel(i, &mut x);
        fill_log_priors(i, &mut log_priors);
        for (c, term) in terms.iter_mut().enumerate() {
            *term = log_priors[c] + ev.log_density_at(c, &x);
        }
        acc += log_sum_exp(&terms);
    }
    -acc / n as f64
}

/// Shared posterior core for the E-steps: Bayes rule in log space, row
/// normalization by subtracting the per-pixel log-sum-exp.
pub(crate) fn posterior_weights(
    img: &MultiChannelImage,
    components: &[DiagGaussian],
    mut fill_log_priors: impl FnMut(usize, &mut [f64]),
) -> Vec<f64> {
    let ev = GaussianEval::new(components);
    let k = ev.classes();
    let n = img.domain().len();
    let mut x = vec![0.0; img.channels()];
    let mut log_priors = vec![0.0; k];
    let mut terms = vec![0.0; k];
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        img.fill_pixel(i, &mut x);
        fill_log_priors(i, &mut log_priors);
        for (c, term) in terms.iter_mut().enumerate() {
            *term = log_priors[c] + ev.log_density_at(c, &x);
        }
        let lse = log_sum_exp(&terms);
        for c in 0..k {
            out[i * k + c] = (terms[c] - lse).exp();
        }
    }
    out
}

/// Averaged negative log-likelihood of the mixture over the ROI.
pub fn nll(img: &MultiChannelImage, params: &MixtureParams) -> Result<f64> {
    check_dims(img, params.components())?;
    let log_weights: Vec<f64> = params.weights().iter().map(|w| w.ln()).collect();
    Ok(average_nll(img, params.components(), |_, lp| {
        lp.copy_from_slice(&log_weights)
    }))
}

/// E-step: Bayes posterior over classes at every ROI pixel.
pub fn e_step(img: &MultiChannelImage, params: &MixtureParams) -> Result<ResponsibilityField> {
    check_dims(img, params.components())?;
    let log_weights: Vec<f64> = params.weights().iter().map(|w| w.ln()).collect();
    let weights = posterior_weights(img, params.components(), |_, lp| {
        lp.copy_from_slice(&log_weights)
    });
    ResponsibilityField::new(img.domain().clone(), params.classes(), weights)
}

/// Responsibility-weighted moments shared by the GMM and SVGMM M-steps.
/// Returns the per-class responsibility totals and the refit components.
pub(crate) fn weighted_moments(
    img: &MultiChannelImage,
    w: &ResponsibilityField,
    var_floor: f64,
) -> Result<(Vec<f64>, Vec<DiagGaussian>)> {
    if w.domain() != img.domain() {
        return Err(Error::DomainMismatch);
    }
    let n = img.domain().len();
    let k = w.classes();
    let m = img.channels();

    let mut totals = vec![0.0; k];
    for i in 0..n {
        for (c, &wv) in w.row(i).iter().enumerate() {
            totals[c] += wv;
        }
    }
    if let Some(dead) = totals.iter().position(|&t| t < EMPTY_COMPONENT_TOL) {
        return Err(Error::EmptyComponent { class: dead });
    }

    let mut means = vec![0.0; k * m];
    for i in 0..n {
        let row = w.row(i);
        for c in 0..k {
            let wv = row[c];
            for j in 0..m {
                means[c * m + j] += wv * img.roi_value(j, i);
            }
        }
    }
    for c in 0..k {
        for j in 0..m {
            means[c * m + j] /= totals[c];
        }
    }

    let mut vars = vec![0.0; k * m];
    for i in 0..n {
        let row = w.row(i);
        for c in 0..k {
            let wv = row[c];
            for j in 0..m {
                let d = img.roi_value(j, i) - means[c * m + j];
                vars[c * m + j] += wv * d * d;
            }
        }
    }
    let components = (0..k)
        .map(|c| {
            let mean = means[c * m..(c + 1) * m].to_vec();
            let var = vars[c * m..(c + 1) * m]
                .iter()
                .map(|v| (v / totals[c]).max(var_floor))
                .collect();
            DiagGaussian::new(mean, var)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((totals, components))
}

/// M-step: mixing weights, means and floored variances from responsibilities.
pub fn m_step(img: &MultiChannelImage, w: &ResponsibilityField) -> Result<MixtureParams> {
    m_step_with_floor(img, w, VAR_FLOOR)
}

pub fn m_step_with_floor(
    img: &MultiChannelImage,
    w: &ResponsibilityField,
    var_floor: f64,
) -> Result<MixtureParams> {
    let n = img.domain().len() as f64;
    let (totals, components) = weighted_moments(img, w, var_floor)?;
    let mut weights: Vec<f64> = totals.iter().map(|t| t / n).collect();
    // Guard against rounding drift so the simplex invariant holds exactly
    // enough for downstream constructors.
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        for w in &mut weights {
            *w /= sum;
        }
    }
    MixtureParams::new(weights, components)
}

/// Stopping and robustness knobs for the EM drivers.
#[derive(Debug, Clone)]
pub struct EmOptions {
    /// Stop once the per-iteration NLL gain falls below this value.
    pub threshold: f64,
    pub max_iters: usize,
    pub var_floor: f64,
    /// Dead-component reinitializations allowed before giving up.
    pub max_rescues: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            threshold: 1e-3,
            max_iters: 500,
            var_floor: VAR_FLOOR,
            max_rescues: 3,
        }
    }
}

/// Result of [`em_fit`]: parameters, a final posterior E-step and the NLL
/// after every iteration.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: MixtureParams,
    pub responsibilities: ResponsibilityField,
    pub nll_trace: Vec<f64>,
}

/// Seeded random initialization shared by the GMM and SVGMM drivers:
/// distinct ROI pixels as means, per-channel global variance, uniform weights.
pub(crate) fn random_init(
    img: &MultiChannelImage,
    classes: usize,
    seed: u64,
    var_floor: f64,
) -> Result<MixtureParams> {
    let n = img.domain().len();
    if n < classes {
        return Err(Error::TooFewPixels {
            pixels: n,
            classes,
        });
    }
    let m = img.channels();
    let global_var = global_variance(img, var_floor);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample_indices(&mut rng, n, classes);
    let components = picks
        .iter()
        .map(|i| {
            let mean = (0..m).map(|c| img.roi_value(c, i)).collect();
            DiagGaussian::new(mean, global_var.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = vec![1.0 / classes as f64; classes];
    MixtureParams::new(weights, components)
}

pub(crate) fn global_variance(img: &MultiChannelImage, var_floor: f64) -> Vec<f64> {
    let n = img.domain().len() as f64;
    let m = img.channels();
    (0..m)
        .map(|c| {
            let mean = (0..img.domain().len())
                .map(|i| img.roi_value(c, i))
                .sum::<f64>()
                / n;
            let var = (0..img.domain().len())
                .map(|i| (img.roi_value(c, i) - mean).powi(2))
                .sum::<f64>()
                / n;
            var.max(var_floor)
        })
        .collect()
}

/// Index of the ROI pixel with the lowest mixture likelihood; used to
/// reseed dead components.
pub(crate) fn lowest_likelihood_pixel(
    img: &MultiChannelImage,
    components: &[DiagGaussian],
    log_priors: &[f64],
) -> usize {
    let ev = GaussianEval::new(components);
    let mut x = vec![0.0; img.channels()];
    let mut terms = vec![0.0; log_priors.len()];
    let mut worst = (0usize, f64::INFINITY);
    for i in 0..img.domain().len() {
        img.fill_pixel(i, &mut x);
        for (c, term) in terms.iter_mut().enumerate() {
            *term = log_priors[c] + ev.log_density_at(c, &x);
        }
        let ll = log_sum_exp(&terms);
        if ll < worst.1 {
            worst = (i, ll);
        }
    }
    worst.0
}

/// Fits a GMM by expectation-maximization from a seeded random start.
pub fn em_fit(
    img: &MultiChannelImage,
    classes: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<EmFit> {
    let mut params = random_init(img, classes, seed, opts.var_floor)?;
    let global_var = global_variance(img, opts.var_floor);
    let mut prev = nll(img, &params)?;
    let mut trace = Vec::new();
    let mut rescues = 0usize;

    for _ in 0..opts.max_iters {
        let mut w = e_step(img, &params)?;
        let next = loop {
            match m_step_with_floor(img, &w, opts.var_floor) {
                Ok(p) => break p,
                Err(Error::EmptyComponent { class }) => {
                    rescues += 1;
                    if rescues > opts.max_rescues {
                        return Err(Error::EmptyComponent { class });
                    }
                    params = rescue_component(img, &params, class, &global_var)?;
                    w = e_step(img, &params)?;
                }
                Err(e) => return Err(e),
            }
        };
        params = next;
        let cur = nll(img, &params)?;
        trace.push(cur);
        if prev - cur < opts.threshold {
            break;
        }
        prev = cur;
    }

    let responsibilities = e_step(img, &params)?;
    Ok(EmFit {
        params,
        responsibilities,
        nll_trace: trace,
    })
}

/// Moves a dead component onto the worst-explained pixel and resets its
/// variance to the global variance and its weight to 1/K (renormalized).
fn rescue_component(
    img: &MultiChannelImage,
    params: &MixtureParams,
    class: usize,
    global_var: &[f64],
) -> Result<MixtureParams> {
    let log_w: Vec<f64> = params.weights().iter().map(|w| w.ln()).collect();
    let pixel = lowest_likelihood_pixel(img, params.components(), &log_w);
    let m = img.channels();
    let mean = (0..m).map(|c| img.roi_value(c, pixel)).collect();

    let mut components = params.components().to_vec();
    components[class] = DiagGaussian::new(mean, global_var.to_vec())?;
    let mut weights = params.weights().to_vec();
    weights[class] = 1.0 / weights.len() as f64;
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    MixtureParams::new(weights, components)
}
