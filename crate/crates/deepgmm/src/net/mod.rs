//! A small convolutional encoder-decoder with skip connections, a softmax
//! class head, hand-written reverse-mode gradients and an AdamW optimizer.
//!
//! Architecture, per level i with width(i) = base_width * 2^i: encoder
//! convs (kernel k, ReLU) at levels 0..depth with 2x2 max pooling between,
//! a bottleneck conv at width(depth), then per level a nearest-neighbor 2x
//! upsample, channel concatenation with the level's encoder activation
//! (upsampled channels first), a conv + ReLU, and finally a 1x1 conv to
//! class logits with per-pixel softmax over the ROI.
//!
//! Inputs are reflect-padded on the bottom/right to the next multiple of
//! 2^depth and the logits cropped back, so the output field matches the
//! image domain exactly. All floating-point loops run in a fixed order;
//! identical seeds and inputs give bitwise-identical outputs and updates.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod tensor;

use crate::error::{Error, Result};
use crate::gmm::{average_nll, log_sum_exp, DiagGaussian, GaussianEval};
use crate::image::{MultiChannelImage, ResponsibilityField};
use layers::{
    concat_channels, conv2d_backward, conv2d_forward, maxpool2_backward, maxpool2_forward,
    relu_backward, relu_forward, softmax_row, softmax_row_backward, split_channels,
    upsample2_backward, upsample2_forward,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensor::Tensor4;

/// Shape of the network: channel counts, levels and kernel size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
    pub base_width: usize,
    pub kernel_size: usize,
}

impl NetworkConfig {
    /// Default desk-scale architecture: depth 3, base width 16, 3x3 kernels.
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            depth: 3,
            base_width: 16,
            kernel_size: 3,
        }
    }

    /// Small configuration (under 1k parameters for one channel and two
    /// classes) used by gradient checks and fast tests.
    pub fn toy(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            depth: 1,
            base_width: 4,
            kernel_size: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.base_width == 0 {
            return Err(Error::Config("network channel counts must be positive".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("network depth must be at least 1".into()));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Spatial dims must be padded to a multiple of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    /// Canonical parameter list: name and shape, in initialization order.
    fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel_size;
        let mut specs = Vec::new();
        let mut conv = |name: String, oc: usize, ic: usize, k: usize| {
            specs.push((format!("{name}.weight"), vec![oc, ic, k, k]));
            specs.push((format!("{name}.bias"), vec![oc]));
        };
        let mut in_ch = self.in_channels;
        for i in 0..self.depth {
            conv(format!("enc{i}"), self.width(i), in_ch, k);
            in_ch = self.width(i);
        }
        conv("bottleneck".into(), self.width(self.depth), in_ch, k);
        for i in (0..self.depth).rev() {
            conv(
                format!("dec{i}"),
                self.width(i),
                self.width(i + 1) + self.width(i),
                k,
            );
        }
        conv("head".into(), self.out_channels, self.width(0), 1);
        specs
    }
}

/// One named parameter tensor with its AdamW moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn as_tensor(&self) -> Tensor4 {
        Tensor4::from_vec(
            self.shape[0],
            self.shape[1],
            self.shape[2],
            self.shape[3],
            self.values.clone(),
        )
        .expect("parameter shapes are consistent by construction")
    }
}

/// Per-parameter gradients aligned with the network's canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    entries: Vec<(String, Vec<f64>)>,
}

impl GradientSet {
    pub fn zeros_like(net: &NetworkState) -> Self {
        Self {
            entries: net
                .params
                .iter()
                .map(|p| (p.name.clone(), vec![0.0; p.values.len()]))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(String, Vec<f64>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g.as_slice())
    }

    /// Elementwise accumulation in fixed order.
    pub fn add(&mut self, other: &GradientSet) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Shape("gradient sets differ in size".into()));
        }
        for ((name, acc), (oname, g)) in self.entries.iter_mut().zip(&other.entries) {
            if name != oname || acc.len() != g.len() {
                return Err(Error::Shape(format!("gradient mismatch at `{name}`")));
            }
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, g) in &mut self.entries {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Largest absolute entry; useful for trace diagnostics.
    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, g)| g.iter())
            .fold(0.0, |acc: f64, &v| acc.max(v.abs()))
    }
}

struct ForwardCache {
    version: u64,
    channels: usize,
    height: usize,
    width: usize,
    roi_len: usize,
    input: Tensor4,
    enc_pre: Vec<Tensor4>,
    enc_act: Vec<Tensor4>,
    pool_arg: Vec<Vec<usize>>,
    pool_out: Vec<Tensor4>,
    bott_pre: Tensor4,
    cat: Vec<Tensor4>,
    dec_pre: Vec<Tensor4>,
    dec_act: Vec<Tensor4>,
    /// Softmax rows over ROI pixels.
    probs: Vec<f64>,
}

/// Parameters, optimizer moments and the retained forward activations.
pub struct NetworkState {
    cfg: NetworkConfig,
    params: Vec<Param>,
    step: u64,
    /// Bumped on every parameter mutation; invalidates retained activations.
    version: u64,
    cache: Option<ForwardCache>,
}

impl std::fmt::Debug for NetworkState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NetworkState")
            .field("cfg", &self.cfg)
            .field("num_params", &self.num_params())
            .field("step", &self.step)
            .field("cached", &self.cache.is_some())
            .finish()
    }
}

impl NetworkState {
    /// Fan-in-scaled uniform initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    /// for weights, zeros for biases; draw order follows the canonical
    /// parameter list.
    pub fn init(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = cfg
            .param_specs()
            .into_iter()
            .map(|(name, shape)| {
                let len: usize = shape.iter().product();
                let values = if shape.len() == 4 {
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
                } else {
                    vec![0.0; len]
                };
                Param {
                    name,
                    shape,
                    m: vec![0.0; len],
                    v: vec![0.0; len],
                    values,
                }
            })
            .collect();
        Ok(Self {
            cfg,
            params,
            step: 0,
            version: 0,
            cache: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn optimizer_step_count(&self) -> u64 {
        self.step
    }

    fn param(&self, name: &str) -> &Param {
        self.params
            .iter()
            .find(|p| p.name == name)
            .expect("parameter names come from the canonical list")
    }

    /// Replaces one parameter's values; invalidates retained activations.
    pub fn set_param(&mut self, name: &str, values: &[f64]) -> Result<()> {
        let param = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Shape(format!("unknown parameter `{name}`")))?;
        if param.values.len() != values.len() {
            return Err(Error::Shape(format!(
                "parameter `{name}` has {} values, got {}",
                param.values.len(),
                values.len()
            )));
        }
        param.values.copy_from_slice(values);
        self.version += 1;
        self.cache = None;
        Ok(())
    }

    fn weight(&self, layer: &str) -> Tensor4 {
        self.param(&format!("{layer}.weight")).as_tensor()
    }

    fn bias(&self, layer: &str) -> Vec<f64> {
        self.param(&format!("{layer}.bias")).values.clone()
    }

    /// Reflect-pads the image to the padded grid (bottom/right only).
    fn padded_input(&self, img: &MultiChannelImage) -> Result<Tensor4> {
        let d = img.domain();
        let (h, w) = (d.height(), d.width());
        let mult = self.cfg.spatial_multiple();
        let ph = h.div_ceil(mult) * mult;
        let pw = w.div_ceil(mult) * mult;
        if ph - h > h - 1 || pw - w > w - 1 {
            return Err(Error::Shape(format!(
                "cannot reflect-pad {h}x{w} to a multiple of {mult}; \
                 padding would exceed the image size"
            )));
        }
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * n - 2 - i };
        let mut input = Tensor4::zeros(1, self.cfg.in_channels, ph, pw);
        for c in 0..self.cfg.in_channels {
            let chan = img.channel(c);
            for y in 0..ph {
                let sy = reflect(y, h);
                let dst = input.row_mut(0, c, y);
                for (x, slot) in dst.iter_mut().enumerate() {
                    *slot = chan[sy * w + reflect(x, w)];
                }
            }
        }
        Ok(input)
    }

    /// Runs the network and retains the activations needed by [`Self::backward`].
    pub fn forward(&mut self, img: &MultiChannelImage) -> Result<ResponsibilityField> {
        if img.channels() != self.cfg.in_channels {
            return Err(Error::ConfigMismatch(format!(
                "network expects {} channels, image has {}",
                self.cfg.in_channels,
                img.channels()
            )));
        }
        let input = self.padded_input(img)?;
        let depth = self.cfg.depth;

        let mut enc_pre = Vec::with_capacity(depth);
        let mut enc_act = Vec::with_capacity(depth);
        let mut pool_arg = Vec::with_capacity(depth);
        let mut pool_out = Vec::with_capacity(depth);
        let mut cur = input.clone();
        for i in 0..depth {
            let pre = conv2d_forward(&cur, &self.weight(&format!("enc{i}")), &self.bias(&format!("enc{i}")))?;
            let act = relu_forward(&pre);
            let (pooled, arg) = maxpool2_forward(&act)?;
            enc_pre.push(pre);
            enc_act.push(act);
            pool_arg.push(arg);
            cur = pooled.clone();
            pool_out.push(pooled);
        }
        let bott_pre = conv2d_forward(&cur, &self.weight("bottleneck"), &self.bias("bottleneck"))?;
        cur = relu_forward(&bott_pre);

        let mut cat = vec![Tensor4::zeros(1, 1, 1, 1); depth];
        let mut dec_pre = vec![Tensor4::zeros(1, 1, 1, 1); depth];
        let mut dec_act = vec![Tensor4::zeros(1, 1, 1, 1); depth];
        for i in (0..depth).rev() {
            let up = upsample2_forward(&cur);
            let joined = concat_channels(&up, &enc_act[i])?;
            let pre = conv2d_forward(
                &joined,
                &self.weight(&format!("dec{i}")),
                &self.bias(&format!("dec{i}")),
            )?;
            cur = relu_forward(&pre);
            cat[i] = joined;
            dec_pre[i] = pre;
            dec_act[i] = cur.clone();
        }
        let logits = conv2d_forward(&cur, &self.weight("head"), &self.bias("head"))?;

        let d = img.domain();
        let k = self.cfg.out_channels;
        let n = d.len();
        let mut probs = vec![0.0; n * k];
        let mut logit_row = vec![0.0; k];
        for (i, &flat) in d.pixels().iter().enumerate() {
            let (r, c) = (flat / d.width(), flat % d.width());
            for (kk, slot) in logit_row.iter_mut().enumerate() {
                *slot = logits.at(0, kk, r, c);
            }
            softmax_row(&logit_row, &mut probs[i * k..(i + 1) * k]);
        }
        let field = ResponsibilityField::new(d.clone(), k, probs.clone())?;

        self.cache = Some(ForwardCache {
            version: self.version,
            channels: img.channels(),
            height: d.height(),
            width: d.width(),
            roi_len: n,
            input,
            enc_pre,
            enc_act,
            pool_arg,
            pool_out,
            bott_pre,
            cat,
            dec_pre,
            dec_act,
            probs,
        });
        Ok(field)
    }

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// parameter, given d(loss)/d(softmax outputs) over the ROI. Requires a
    /// retained forward pass for the same image and current parameters.
    pub fn backward(&self, img: &MultiChannelImage, loss_grad: &[f64]) -> Result<GradientSet> {
        let d = img.domain();
        let cache = self.cache.as_ref().ok_or(Error::StaleActivations)?;
        if cache.version != self.version
            || cache.channels != img.channels()
            || cache.height != d.height()
            || cache.width != d.width()
            || cache.roi_len != d.len()
        {
            return Err(Error::StaleActivations);
        }
        let k = self.cfg.out_channels;
        let n = d.len();
        if loss_grad.len() != n * k {
            return Err(Error::DimensionMismatch {
                what: "loss gradient",
                expected: n * k,
                actual: loss_grad.len(),
            });
        }
        let depth = self.cfg.depth;
        let (_, _, ph, pw) = cache.input.dims();

        // Softmax backward, scattered into the padded logit grid; padding
        // and non-ROI positions keep zero gradient.
        let mut dlogits = Tensor4::zeros(1, k, ph, pw);
        let mut row = vec![0.0; k];
        for (i, &flat) in d.pixels().iter().enumerate() {
            let (r, c) = (flat / d.width(), flat % d.width());
            softmax_row_backward(
                &cache.probs[i * k..(i + 1) * k],
                &loss_grad[i * k..(i + 1) * k],
                &mut row,
            );
            for (kk, &g) in row.iter().enumerate() {
                *dlogits.at_mut(0, kk, r, c) = g;
            }
        }

        let mut grads: Vec<(String, Vec<f64>)> = Vec::with_capacity(self.params.len());
        let push = |grads: &mut Vec<(String, Vec<f64>)>, layer: &str, dw: Tensor4, db: Vec<f64>| {
            grads.push((format!("{layer}.weight"), dw.data().to_vec()));
            grads.push((format!("{layer}.bias"), db));
        };

        let (dcur, dw, db) = conv2d_backward(&cache.dec_act[0], &self.weight("head"), &dlogits)?;
        push(&mut grads, "head", dw, db);

        let mut cur = dcur;
        let mut dskip: Vec<Option<Tensor4>> = (0..depth).map(|_| None).collect();
        for i in 0..depth {
            let gpre = relu_backward(&cache.dec_pre[i], &cur);
            let (dcat, dw, db) =
                conv2d_backward(&cache.cat[i], &self.weight(&format!("dec{i}")), &gpre)?;
            push(&mut grads, &format!("dec{i}"), dw, db);
            let (dup, ds) = split_channels(&dcat, self.cfg.width(i + 1))?;
            dskip[i] = Some(ds);
            cur = upsample2_backward(&dup)?;
        }

        let gpre = relu_backward(&cache.bott_pre, &cur);
        let (mut dpool, dw, db) =
            conv2d_backward(&cache.pool_out[depth - 1], &self.weight("bottleneck"), &gpre)?;
        push(&mut grads, "bottleneck", dw, db);

        for i in (0..depth).rev() {
            let mut da = maxpool2_backward(cache.enc_act[i].dims(), &cache.pool_arg[i], &dpool);
            let skip = dskip[i].take().expect("each decoder level stored its skip");
            for (a, b) in da.data_mut().iter_mut().zip(skip.data()) {
                *a += b;
            }
            let gpre = relu_backward(&cache.enc_pre[i], &da);
            let enc_input = if i == 0 {
                &cache.input
            } else {
                &cache.pool_out[i - 1]
            };
            let (dx, dw, db) =
                conv2d_backward(enc_input, &self.weight(&format!("enc{i}")), &gpre)?;
            push(&mut grads, &format!("enc{i}"), dw, db);
            if i > 0 {
                dpool = dx;
            }
        }

        // Reorder into the canonical parameter order.
        let entries = self
            .params
            .iter()
            .map(|p| {
                let g = grads
                    .iter()
                    .find(|(n, _)| n == &p.name)
                    .expect("backward visits every layer")
                    .1
                    .clone();
                (p.name.clone(), g)
            })
            .collect();
        Ok(GradientSet { entries })
    }

    /// One AdamW update; invalidates retained activations.
    pub fn adamw_step(
        &mut self,
        grads: &GradientSet,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if grads.entries.len() != self.params.len() {
            return Err(Error::Shape("gradient set does not match parameters".into()));
        }
        for (p, (name, g)) in self.params.iter().zip(&grads.entries) {
            if &p.name != name || p.values.len() != g.len() {
                return Err(Error::Shape(format!("gradient mismatch at `{}`", p.name)));
            }
        }
        self.step += 1;
        let step = self.step;
        for (p, (_, g)) in self.params.iter_mut().zip(&grads.entries) {
            optim::adamw_update(&mut p.values, &mut p.m, &mut p.v, g, step, lr, weight_decay);
        }
        self.version += 1;
        self.cache = None;
        Ok(())
    }
}

/// Partial derivatives of the spatially variant objective with respect to
/// the responsibilities: d(NLL_V)/dw_xk = -(1/|Omega|) * g_k(x) / sum_k'
/// w_xk' g_k'(x), evaluated in log space.
pub fn nll_v_grad_wrt_w(
    img: &MultiChannelImage,
    w: &ResponsibilityField,
    components: &[DiagGaussian],
) -> Result<Vec<f64>> {
    if w.domain() != img.domain() {
        return Err(Error::DomainMismatch);
    }
    if components.is_empty() || components[0].dim() != img.channels() {
        return Err(Error::DimensionMismatch {
            what: "components vs image channels",
            expected: img.channels(),
            actual: components.first().map_or(0, |c| c.dim()),
        });
    }
    if components.len() != w.classes() {
        return Err(Error::DimensionMismatch {
            what: "components vs responsibility classes",
            expected: w.classes(),
            actual: components.len(),
        });
    }
    let ev = GaussianEval::new(components);
    let k = components.len();
    let n = img.domain().len();
    let inv_n = 1.0 / n as f64;
    let mut x = vec![0.0; img.channels()];
    let mut log_dens = vec![0.0; k];
    let mut terms = vec![0.0; k];
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        img.fill_pixel(i, &mut x);
        let row = w.row(i);
        for c in 0..k {
            log_dens[c] = ev.log_density_at(c, &x);
            terms[c] = row[c].ln() + log_dens[c];
        }
        let denom = log_sum_exp(&terms);
        for c in 0..k {
            out[i * k + c] = -inv_n * (log_dens[c] - denom).exp();
        }
    }
    Ok(out)
}

/// Result of a finite-difference gradient audit.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffReport {
    /// Number of sampled parameters.
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// End-to-end loss used by the gradient check: forward pass, then the
/// spatially variant NLL with the network output as the proportions.
pub fn network_nll_v(
    net: &mut NetworkState,
    img: &MultiChannelImage,
    components: &[DiagGaussian],
) -> Result<f64> {
    let w = net.forward(img)?;
    Ok(average_nll(img, components, |i, lp| {
        for (l, &v) in lp.iter_mut().zip(w.row(i)) {
            *l = v.ln();
        }
    }))
}

/// Compares analytic parameter gradients of [`network_nll_v`] against
/// central finite differences on a deterministic subsample of at least 100
/// parameters (all of them on smaller networks). Relative errors use the
/// floor max(|analytic|, |numeric|, 1e-6) so exact zeros do not divide by
/// finite-difference noise.
pub fn finite_diff_check(
    net: &mut NetworkState,
    img: &MultiChannelImage,
    components: &[DiagGaussian],
    step: f64,
    tolerance: f64,
) -> Result<FiniteDiffReport> {
    let w = net.forward(img)?;
    let loss_grad = nll_v_grad_wrt_w(img, &w, components)?;
    let analytic = net.backward(img, &loss_grad)?;

    let total = net.num_params();
    let sample_n = total.min(120.max(100));
    let mut rng = ChaCha8Rng::seed_from_u64(0x0d1f);
    let picks = rand::seq::index::sample(&mut rng, total, sample_n);

    let mut report = FiniteDiffReport {
        checked: sample_n,
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        tolerance,
        pass: true,
    };
    for flat in picks.iter() {
        // Locate the parameter holding this flat index.
        let mut remaining = flat;
        let mut pi = 0;
        while remaining >= net.params[pi].values.len() {
            remaining -= net.params[pi].values.len();
            pi += 1;
        }
        let orig = net.params[pi].values[remaining];
        net.params[pi].values[remaining] = orig + step;
        let plus = network_nll_v(net, img, components)?;
        net.params[pi].values[remaining] = orig - step;
        let minus = network_nll_v(net, img, components)?;
        net.params[pi].values[remaining] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.entries[pi].1[remaining];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = net.params[pi].name.clone();
            report.worst_index = remaining;
        }
    }
    // Perturbation forwards left stale activations behind.
    net.version += 1;
    net.cache = None;
    report.pass = report.max_rel_error < tolerance;
    Ok(report)
}
