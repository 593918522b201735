//! Spatially variant Gaussian mixture: per-pixel class proportions replace
//! the global mixing weights. The M-step copies the responsibilities into
//! the proportions verbatim, which drives them toward hard 0/1 assignments
//! as EM iterates.

use crate::error::{Error, Result};
use crate::gmm::{
    average_nll, e_step, global_variance, lowest_likelihood_pixel, posterior_weights, random_init,
    weighted_moments, DiagGaussian, EmOptions,
};
use crate::image::{MultiChannelImage, PixelDomain, ResponsibilityField};

/// Per-pixel class proportions plus one diagonal Gaussian per class.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMixtureParams {
    domain: PixelDomain,
    classes: usize,
    proportions: Vec<f64>,
    components: Vec<DiagGaussian>,
}

impl SpatialMixtureParams {
    pub fn new(
        domain: PixelDomain,
        classes: usize,
        proportions: Vec<f64>,
        components: Vec<DiagGaussian>,
    ) -> Result<Self> {
        if components.len() != classes || classes == 0 {
            return Err(Error::DimensionMismatch {
                what: "spatial mixture components",
                expected: classes,
                actual: components.len(),
            });
        }
        let m = components[0].dim();
        if components.iter().any(|c| c.dim() != m) {
            return Err(Error::Invalid("components have mixed dimensions".into()));
        }
        // Row validation is shared with the responsibility type.
        let field = ResponsibilityField::new(domain, classes, proportions)?;
        let (domain, _, proportions) = field.into_parts();
        Ok(Self {
            domain,
            classes,
            proportions,
            components,
        })
    }

    /// Builds the proportions from an existing responsibility field without
    /// touching the values.
    pub fn from_responsibilities(
        w: &ResponsibilityField,
        components: Vec<DiagGaussian>,
    ) -> Result<Self> {
        Self::new(
            w.domain().clone(),
            w.classes(),
            w.weights().to_vec(),
            components,
        )
    }

    pub fn domain(&self) -> &PixelDomain {
        &self.domain
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.proportions[i * self.classes..(i + 1) * self.classes]
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    /// Proportions viewed as a responsibility field (copied).
    pub fn proportions_field(&self) -> ResponsibilityField {
        ResponsibilityField::new(self.domain.clone(), self.classes, self.proportions.clone())
            .expect("stored proportions stay valid")
    }
}

fn check_image(img: &MultiChannelImage, p: &SpatialMixtureParams) -> Result<()> {
    if img.domain() != p.domain() {
        return Err(Error::DomainMismatch);
    }
    if img.channels() != p.dim() {
        return Err(Error::DimensionMismatch {
            what: "image channels vs component dimension",
            expected: p.dim(),
            actual: img.channels(),
        });
    }
    Ok(())
}

/// Averaged negative log-likelihood with per-pixel priors. Shares the
/// summation core with the global-weights objective, so constant rows
/// reproduce it bit for bit.
pub fn nll_v(img: &MultiChannelImage, p: &SpatialMixtureParams) -> Result<f64> {
    check_image(img, p)?;
    Ok(average_nll(img, p.components(), |i, lp| {
        for (l, &v) in lp.iter_mut().zip(p.row(i)) {
            *l = v.ln();
        }
    }))
}

/// E-step with per-pixel priors.
pub fn e_step_v(img: &MultiChannelImage, p: &SpatialMixtureParams) -> Result<ResponsibilityField> {
    check_image(img, p)?;
    let weights = posterior_weights(img, p.components(), |i, lp| {
        for (l, &v) in lp.iter_mut().zip(p.row(i)) {
            *l = v.ln();
        }
    });
    ResponsibilityField::new(img.domain().clone(), p.classes(), weights)
}

/// M-step: proportions become the responsibilities verbatim; the Gaussians
/// are refit by the same weighted moments as the global model.
pub fn m_step_v(img: &MultiChannelImage, w: &ResponsibilityField) -> Result<SpatialMixtureParams> {
    m_step_v_with_floor(img, w, crate::gmm::VAR_FLOOR)
}

pub fn m_step_v_with_floor(
    img: &MultiChannelImage,
    w: &ResponsibilityField,
    var_floor: f64,
) -> Result<SpatialMixtureParams> {
    let (_, components) = weighted_moments(img, w, var_floor)?;
    SpatialMixtureParams::from_responsibilities(w, components)
}

/// Result of [`em_fit_v`]: parameters and the NLL_V after every iteration.
#[derive(Debug, Clone)]
pub struct SvgmmFit {
    pub params: SpatialMixtureParams,
    pub nll_v_trace: Vec<f64>,
}

/// Fits the spatially variant model by EM. Initialization matches the
/// global driver (same seed, same starting components); the initial
/// proportions are the first posterior under uniform weights.
pub fn em_fit_v(
    img: &MultiChannelImage,
    classes: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<SvgmmFit> {
    let init = random_init(img, classes, seed, opts.var_floor)?;
    let w0 = e_step(img, &init)?;
    let mut params =
        SpatialMixtureParams::from_responsibilities(&w0, init.components().to_vec())?;
    let global_var = global_variance(img, opts.var_floor);
    let mut prev = nll_v(img, &params)?;
    let mut trace = Vec::new();
    let mut rescues = 0usize;

    for _ in 0..opts.max_iters {
        let mut w = e_step_v(img, &params)?;
        let next = loop {
            match m_step_v_with_floor(img, &w, opts.var_floor) {
                Ok(p) => break p,
                Err(Error::EmptyComponent { class }) => {
                    rescues += 1;
                    if rescues > opts.max_rescues {
                        return Err(Error::EmptyComponent { class });
                    }
                    params = rescue_component_v(img, &params, class, &global_var)?;
                    w = e_step_v(img, &params)?;
                }
                Err(e) => return Err(e),
            }
        };
        params = next;
        let cur = nll_v(img, &params)?;
        trace.push(cur);
        if prev - cur < opts.threshold {
            break;
        }
        prev = cur;
    }

    Ok(SvgmmFit {
        params,
        nll_v_trace: trace,
    })
}

/// Dead-component rescue for the spatial model: reseed the component on the
/// worst-explained pixel and mix every proportion row toward uniform so the
/// class can attract mass again.
fn rescue_component_v(
    img: &MultiChannelImage,
    params: &SpatialMixtureParams,
    class: usize,
    global_var: &[f64],
) -> Result<SpatialMixtureParams> {
    let k = params.classes();
    let uniform_log = vec![(1.0 / k as f64).ln(); k];
    let pixel = lowest_likelihood_pixel(img, params.components(), &uniform_log);
    let m = img.channels();
    let mean = (0..m).map(|c| img.roi_value(c, pixel)).collect();

    let mut components = params.components().to_vec();
    components[class] = DiagGaussian::new(mean, global_var.to_vec())?;
    let n = params.domain().len();
    let mut proportions = params.proportions().to_vec();
    for i in 0..n {
        let row = &mut proportions[i * k..(i + 1) * k];
        for v in row.iter_mut() {
            *v = 0.5 * *v + 0.5 / k as f64;
        }
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    SpatialMixtureParams::new(params.domain().clone(), k, proportions, components)
}
