//! Command-line front end: dataset synthesis, single-image fits,
//! multi-image training, checkpoint prediction, and mask evaluation.
//!
//! Settings for fit and train merge a plain key=value config file
//! (`--config`) with flag overrides; flags win. Every command writes its
//! artifacts under `--out` and returns one tab-delimited metrics record
//! for standard output. All commands are deterministic given an explicit
//! seed.

use crate::deep::{
    deep_fit_single, deep_train_multi, predict, DeepFitOptions, DeepMixture, DeepVariant,
};
use crate::error::{Error, Result};
use crate::eval::{best_permutation_dice, boundary_length, dice};
use crate::gmm::{em_fit, DiagGaussian, EmOptions};
use crate::image::{argmax_labeling, normalize_image, MultiChannelImage, PixelDomain};
use crate::io::{
    domain_from_roi_tensor, image_from_tensor, image_to_tensor, mask_from_tensor, mask_to_tensor,
    read_tensor, resolve_path, roi_to_tensor, write_tensor, Manifest, TensorFile,
};
use crate::net::checkpoint::{load_checkpoint, save_checkpoint};
use crate::net::NetworkConfig;
use crate::svgmm::em_fit_v;
use crate::synth::{generate_synthetic, RegionPattern, SyntheticSpec};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Segmentation method selector shared by fit and train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Gmm,
    Svgmm,
    Deep(DeepVariant),
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(Self::Gmm),
            "svgmm" => Ok(Self::Svgmm),
            "deepg" => Ok(Self::Deep(DeepVariant::DeepG)),
            "deepsvg" => Ok(Self::Deep(DeepVariant::DeepSvg)),
            other => Err(Error::Config(format!(
                "unknown method `{other}`; expected gmm, svgmm, deepg or deepsvg"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gmm => "gmm",
            Self::Svgmm => "svgmm",
            Self::Deep(DeepVariant::DeepG) => "deepg",
            Self::Deep(DeepVariant::DeepSvg) => "deepsvg",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "deepgmm", version, about = "Mixture-model image segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic image, ground truth, ROI and dataset manifest.
    Synth(SynthArgs),
    /// Fit one image with gmm, svgmm, deepg or deepsvg.
    Fit(FitArgs),
    /// Train one network on several images (deep methods only).
    Train(TrainArgs),
    /// Segment an image with a trained checkpoint.
    Predict(PredictArgs),
    /// Score a predicted mask against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Key=value generator spec file.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    /// Key=value settings file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Convergence threshold on the loss decrease.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// EM iteration cap (gmm and svgmm only).
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Gradient step cap (deep methods only).
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mean-anchor penalty weight; requires --mu-data when positive.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Reference class means, a classes x channels f64 tensor file.
    #[arg(long)]
    pub mu_data: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Convergence window length in steps (deep methods only).
    #[arg(long)]
    pub window: Option<usize>,
    /// Dataset manifest of the image to fit.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub settings: FitArgs,
    /// Dataset manifests of the training images.
    pub manifests: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint directory (or its manifest file).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest of the image to segment.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-pixel class probabilities.
    #[arg(long)]
    pub probs: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted mask tensor file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth mask tensor file.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub classes: usize,
    /// ROI tensor file; defaults to the full grid.
    #[arg(long)]
    pub roi: Option<PathBuf>,
    /// Search all label permutations for the best match.
    #[arg(long)]
    pub rearrange: bool,
}

/// Runs one parsed command and returns its metrics record.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Fit(args) => cmd_fit(&RunConfig::from_fit_args(&args)?),
        Command::Train(args) => cmd_train(
            &RunConfig::from_fit_args(&args.settings)?,
            &args.manifests,
        ),
        Command::Predict(args) => cmd_predict(&args),
        Command::Eval(args) => cmd_eval(&args),
    }
}

/// Merged fit/train settings; every entry is a string until typed access.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    settings: Manifest,
}

impl RunConfig {
    pub fn from_fit_args(args: &FitArgs) -> Result<Self> {
        let settings = match &args.config {
            Some(path) => Manifest::read(path)?,
            None => Manifest::new(),
        };
        let mut cfg = Self { settings };
        let mut over = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                cfg.settings.set(key, v);
            }
        };
        over("method", args.method.clone());
        over("classes", args.classes.map(|v| v.to_string()));
        over("seed", args.seed.map(|v| v.to_string()));
        over("threshold", args.threshold.map(|v| v.to_string()));
        over("max_iters", args.max_iters.map(|v| v.to_string()));
        over("max_steps", args.max_steps.map(|v| v.to_string()));
        over("lr", args.lr.map(|v| v.to_string()));
        over("lambda", args.lambda.map(|v| v.to_string()));
        over("mu_data", args.mu_data.as_ref().map(|p| p.display().to_string()));
        over("depth", args.depth.map(|v| v.to_string()));
        over("width", args.width.map(|v| v.to_string()));
        over("window", args.window.map(|v| v.to_string()));
        over("input", args.input.as_ref().map(|p| p.display().to_string()));
        over("out", args.out.as_ref().map(|p| p.display().to_string()));
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.settings.get(key)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required setting `{key}`")))
    }

    fn parse_key<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(text) => text.parse().map(Some).map_err(|_| {
                Error::Config(format!("setting `{key}` has invalid value `{text}`"))
            }),
        }
    }

    fn num_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse_key(key)?.unwrap_or(default))
    }

    fn require_path(&self, key: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.require(key)?))
    }

    /// Rejects settings that do not apply to the chosen method.
    fn check_method_fields(&self, method: Method) -> Result<()> {
        let (forbidden, why) = match method {
            Method::Gmm | Method::Svgmm => (
                &["lr", "max_steps", "lambda", "mu_data", "depth", "width", "window"][..],
                "applies only to deep methods",
            ),
            Method::Deep(_) => (&["max_iters"][..], "applies only to EM methods"),
        };
        for key in forbidden {
            if self.get(key).is_some() {
                return Err(Error::Config(format!("setting `{key}` {why}")));
            }
        }
        Ok(())
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_f64_list(text: &str) -> Option<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().ok())
        .collect()
}

fn wall_ms(start: Instant) -> String {
    format!("{:.1}", start.elapsed().as_secs_f64() * 1e3)
}

/// Reads `image` and `roi` from a dataset manifest; paths resolve relative
/// to the manifest file.
pub fn load_dataset(manifest_path: &Path) -> Result<MultiChannelImage> {
    let manifest = Manifest::read(manifest_path)?;
    let roi_path = resolve_path(manifest_path, manifest.require("roi")?);
    let domain = domain_from_roi_tensor(&read_tensor(&roi_path)?)?;
    let image_path = resolve_path(manifest_path, manifest.require("image")?);
    image_from_tensor(&read_tensor(&image_path)?, domain)
}

fn read_mu_data(path: &Path) -> Result<Vec<Vec<f64>>> {
    let t = read_tensor(path)?;
    match t.dims() {
        [_, channels] => {
            let values = t.as_f64()?;
            Ok(values.chunks(*channels).map(|c| c.to_vec()).collect())
        }
        dims => Err(Error::Invalid(format!(
            "reference means tensor has dims {dims:?}, want classes x channels"
        ))),
    }
}

fn mixture_manifest(
    method: &str,
    weights: Option<&[f64]>,
    components: &[DiagGaussian],
) -> Manifest {
    let mut m = Manifest::new();
    m.set("method", method);
    m.set("classes", components.len().to_string());
    m.set("channels", components[0].dim().to_string());
    if let Some(w) = weights {
        m.set("weights", join_f64(w));
    }
    for (k, c) in components.iter().enumerate() {
        m.set(&format!("mean.{k}"), join_f64(c.mean()));
        m.set(&format!("var.{k}"), join_f64(c.var()));
    }
    m
}

fn synth_spec_from(manifest: &Manifest, seed_override: Option<u64>) -> Result<SyntheticSpec> {
    let field = |key: &str| -> Result<&str> {
        manifest
            .get(key)
            .ok_or_else(|| Error::SpecInvalid(format!("spec is missing `{key}`")))
    };
    let num = |key: &str| -> Result<usize> {
        field(key)?
            .parse()
            .map_err(|_| Error::SpecInvalid(format!("spec field `{key}` is not an integer")))
    };
    let list = |key: &str| -> Result<Vec<f64>> {
        parse_f64_list(field(key)?)
            .ok_or_else(|| Error::SpecInvalid(format!("spec field `{key}` is not a number list")))
    };
    let noise = match manifest.get("noise") {
        None => 0.0,
        Some(text) => text
            .parse()
            .map_err(|_| Error::SpecInvalid("spec field `noise` is not a number".into()))?,
    };
    let seed = match (seed_override, manifest.get("seed")) {
        (Some(seed), _) => seed,
        (None, Some(text)) => text
            .parse()
            .map_err(|_| Error::SpecInvalid("spec field `seed` is not an integer".into()))?,
        (None, None) => 0,
    };
    Ok(SyntheticSpec {
        classes: num("classes")?,
        channels: manifest.get("channels").map_or(Ok(1), |_| num("channels"))?,
        height: num("height")?,
        width: num("width")?,
        means: list("means")?,
        stds: list("stds")?,
        pattern: RegionPattern::parse(manifest.get("pattern").unwrap_or("voronoi_blobs"))?,
        noise,
        seed,
    })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let spec = synth_spec_from(&Manifest::read(&args.spec)?, args.seed)?;
    let (img, mask) = generate_synthetic(&spec)?;
    create_dir(&args.out)?;
    write_tensor(&args.out.join("image.dgmm"), &image_to_tensor(&img))?;
    write_tensor(&args.out.join("mask.dgmm"), &mask_to_tensor(&mask))?;
    write_tensor(&args.out.join("roi.dgmm"), &roi_to_tensor(img.domain()))?;
    let mut manifest = Manifest::new();
    manifest.set("image", "image.dgmm");
    manifest.set("mask", "mask.dgmm");
    manifest.set("roi", "roi.dgmm");
    manifest.set("classes", spec.classes.to_string());
    manifest.write(&args.out.join("manifest.txt"))?;
    Ok(format!(
        "synth\tseed={}\tclasses={}\tchannels={}\theight={}\twidth={}\tpattern={}\tout={}",
        spec.seed,
        spec.classes,
        spec.channels,
        spec.height,
        spec.width,
        spec.pattern.name(),
        args.out.display()
    ))
}

/// Network shape and optimizer settings for the deep methods.
fn deep_setup(
    cfg: &RunConfig,
    variant: DeepVariant,
    classes: usize,
    channels: usize,
) -> Result<(NetworkConfig, DeepFitOptions)> {
    let mut net_cfg = NetworkConfig::new(channels, classes);
    net_cfg.depth = cfg.num_or("depth", net_cfg.depth)?;
    net_cfg.base_width = cfg.num_or("width", net_cfg.base_width)?;
    let mut opts = DeepFitOptions::new(variant);
    opts.lr = cfg.num_or("lr", opts.lr)?;
    opts.threshold = cfg.num_or("threshold", opts.threshold)?;
    opts.max_steps = cfg.num_or("max_steps", opts.max_steps)?;
    opts.window = cfg.num_or("window", opts.window)?;
    opts.lambda = cfg.num_or("lambda", opts.lambda)?;
    if let Some(path) = cfg.get("mu_data") {
        opts.mu_data = Some(read_mu_data(Path::new(path))?);
    }
    opts.validate(classes, channels)?;
    Ok((net_cfg, opts))
}

fn write_regularized_trace(path: &Path, trace: &[crate::deep::RegularizedLoss]) -> Result<()> {
    let mut text = String::from("step\tbase\tpenalty\ttotal\n");
    for (step, entry) in trace.iter().enumerate() {
        let _ = writeln!(text, "{}", entry.record_line(step));
    }
    write_text(path, &text)
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<String> {
    let start = Instant::now();
    let method = Method::parse(cfg.require("method")?)?;
    cfg.check_method_fields(method)?;
    let classes: usize = cfg.parse_key("classes")?.ok_or_else(|| {
        Error::Config("missing required setting `classes`".into())
    })?;
    let seed: u64 = cfg.num_or("seed", 0)?;
    let input = cfg.require_path("input")?;
    let out = cfg.require_path("out")?;
    let img = normalize_image(&load_dataset(&input)?)?;
    create_dir(&out)?;

    let (steps, loss, penalty) = match method {
        Method::Gmm => {
            let opts = EmOptions {
                threshold: cfg.num_or("threshold", EmOptions::default().threshold)?,
                max_iters: cfg.num_or("max_iters", EmOptions::default().max_iters)?,
                ..Default::default()
            };
            let fit = em_fit(&img, classes, seed, &opts)?;
            let mask = argmax_labeling(&fit.responsibilities);
            write_tensor(&out.join("mask.dgmm"), &mask_to_tensor(&mask))?;
            mixture_manifest("gmm", Some(fit.params.weights()), fit.params.components())
                .write(&out.join("params.txt"))?;
            let mut trace = String::from("iter\tnll\n");
            for (i, v) in fit.nll_trace.iter().enumerate() {
                let _ = writeln!(trace, "{i}\t{v:.6}");
            }
            write_text(&out.join("trace.txt"), &trace)?;
            let loss = *fit.nll_trace.last().expect("trace holds the initial value");
            (fit.nll_trace.len() - 1, loss, None)
        }
        Method::Svgmm => {
            let opts = EmOptions {
                threshold: cfg.num_or("threshold", EmOptions::default().threshold)?,
                max_iters: cfg.num_or("max_iters", EmOptions::default().max_iters)?,
                ..Default::default()
            };
            let fit = em_fit_v(&img, classes, seed, &opts)?;
            let mask = argmax_labeling(&fit.params.proportions_field());
            write_tensor(&out.join("mask.dgmm"), &mask_to_tensor(&mask))?;
            mixture_manifest("svgmm", None, fit.params.components())
                .write(&out.join("params.txt"))?;
            let pi = TensorFile::from_f64(
                vec![img.domain().len(), classes],
                fit.params.proportions().to_vec(),
            )?;
            write_tensor(&out.join("proportions.dgmm"), &pi)?;
            let mut trace = String::from("iter\tnll_v\n");
            for (i, v) in fit.nll_v_trace.iter().enumerate() {
                let _ = writeln!(trace, "{i}\t{v:.6}");
            }
            write_text(&out.join("trace.txt"), &trace)?;
            let loss = *fit.nll_v_trace.last().expect("trace holds the initial value");
            (fit.nll_v_trace.len() - 1, loss, None)
        }
        Method::Deep(variant) => {
            let (net_cfg, opts) = deep_setup(cfg, variant, classes, img.channels())?;
            let fit = deep_fit_single(&img, classes, &net_cfg, seed, &opts)?;
            write_tensor(&out.join("mask.dgmm"), &mask_to_tensor(&fit.mask))?;
            match &fit.mixture {
                DeepMixture::Global(p) => {
                    mixture_manifest(method.name(), Some(p.weights()), p.components())
                        .write(&out.join("params.txt"))?;
                }
                DeepMixture::SpatiallyVariant(p) => {
                    mixture_manifest(method.name(), None, p.components())
                        .write(&out.join("params.txt"))?;
                    let pi = TensorFile::from_f64(
                        vec![img.domain().len(), classes],
                        p.proportions().to_vec(),
                    )?;
                    write_tensor(&out.join("proportions.dgmm"), &pi)?;
                }
            }
            write_regularized_trace(&out.join("trace.txt"), &fit.trace)?;
            let last = fit.trace.last().expect("trace holds the initial value");
            (fit.trace.len() - 1, last.base, Some(last.penalty))
        }
    };

    let mut line = format!(
        "fit\tmethod={}\tclasses={classes}\tseed={seed}\tsteps={steps}\tloss={loss:.6}",
        method.name()
    );
    if let Some(p) = penalty {
        let _ = write!(line, "\tpenalty={p:.6}");
    }
    let _ = write!(line, "\twall_ms={}", wall_ms(start));
    Ok(line)
}

pub fn cmd_train(cfg: &RunConfig, manifests: &[PathBuf]) -> Result<String> {
    let start = Instant::now();
    let method = Method::parse(cfg.require("method")?)?;
    let Method::Deep(variant) = method else {
        return Err(Error::Config("train requires a deep method".into()));
    };
    cfg.check_method_fields(method)?;
    if manifests.is_empty() {
        return Err(Error::Config("need at least one training manifest".into()));
    }
    let classes: usize = cfg.parse_key("classes")?.ok_or_else(|| {
        Error::Config("missing required setting `classes`".into())
    })?;
    let seed: u64 = cfg.num_or("seed", 0)?;
    let out = cfg.require_path("out")?;
    let images = manifests
        .iter()
        .map(|m| normalize_image(&load_dataset(m)?))
        .collect::<Result<Vec<_>>>()?;
    let (net_cfg, opts) = deep_setup(cfg, variant, classes, images[0].channels())?;
    let training = deep_train_multi(&images, classes, &net_cfg, seed, &opts)?;
    create_dir(&out)?;
    save_checkpoint(&out.join("checkpoint"), &training.network)?;
    write_regularized_trace(&out.join("trace.txt"), &training.trace)?;
    for (i, mask) in training.masks.iter().enumerate() {
        write_tensor(&out.join(format!("mask_{i}.dgmm")), &mask_to_tensor(mask))?;
    }
    let last = training.trace.last().expect("trace holds the initial value");
    Ok(format!(
        "train\tmethod={}\tclasses={classes}\tseed={seed}\timages={}\tsteps={}\tloss={:.6}\tpenalty={:.6}\twall_ms={}",
        method.name(),
        images.len(),
        training.trace.len() - 1,
        last.base,
        last.penalty,
        wall_ms(start)
    ))
}

pub fn cmd_predict(args: &PredictArgs) -> Result<String> {
    let start = Instant::now();
    let mut net = load_checkpoint(&args.checkpoint)?;
    let img = normalize_image(&load_dataset(&args.input)?)?;
    let (w, mask) = predict(&mut net, &img)?;
    create_dir(&args.out)?;
    write_tensor(&args.out.join("mask.dgmm"), &mask_to_tensor(&mask))?;
    if args.probs {
        let probs = TensorFile::from_f64(
            vec![img.domain().len(), w.classes()],
            w.weights().to_vec(),
        )?;
        write_tensor(&args.out.join("probs.dgmm"), &probs)?;
    }
    Ok(format!(
        "predict\tclasses={}\theight={}\twidth={}\twall_ms={}",
        w.classes(),
        img.domain().height(),
        img.domain().width(),
        wall_ms(start)
    ))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let pred_t = read_tensor(&args.pred)?;
    let gt_t = read_tensor(&args.gt)?;
    if pred_t.dims() != gt_t.dims() {
        return Err(Error::DomainMismatch);
    }
    let domain = match &args.roi {
        Some(path) => domain_from_roi_tensor(&read_tensor(path)?)?,
        None => match pred_t.dims() {
            [h, w] => PixelDomain::full(*h, *w)?,
            dims => return Err(Error::Invalid(format!("mask tensor dims {dims:?}, want 2"))),
        },
    };
    let pred = mask_from_tensor(&pred_t, domain.clone(), args.classes)?;
    let gt = mask_from_tensor(&gt_t, domain, args.classes)?;

    let mut line = String::from("eval");
    let _ = write!(line, "\tclasses={}", args.classes);
    let per_class;
    let mean;
    if args.rearrange {
        let report = best_permutation_dice(&pred, &gt, args.classes)?;
        per_class = report.per_class;
        mean = report.mean;
        let perm = report
            .permutation
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = write!(line, "\tpermutation={perm}");
    } else {
        per_class = (0..args.classes)
            .map(|k| dice(&pred, &gt, k))
            .collect::<Result<Vec<_>>>()?;
        mean = per_class.iter().sum::<f64>() / args.classes as f64;
    }
    let scores = per_class
        .iter()
        .map(|d| format!("{d:.6}"))
        .collect::<Vec<_>>()
        .join(",");
    let _ = write!(
        line,
        "\tmean={mean:.6}\tper_class={scores}\tboundary={}",
        boundary_length(&pred)
    );
    Ok(line)
}
