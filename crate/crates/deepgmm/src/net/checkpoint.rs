//! Network checkpoints: a plain-text manifest naming every parameter plus
//! one tensor-container file per parameter, all in a single directory.
//!
//! The manifest (`checkpoint.txt`) records the architecture fields, the
//! optimizer step count, and per parameter its file and shape. Optimizer
//! moments are not persisted; a loaded network starts with fresh moments.

use crate::error::{Error, Result};
use crate::io::{read_tensor, resolve_path, write_tensor, Manifest, TensorFile};
use crate::net::{NetworkConfig, NetworkState, Param};
use std::fs;
use std::path::{Path, PathBuf};

const FORMAT: &str = "dgmm-net-checkpoint";
const MANIFEST_NAME: &str = "checkpoint.txt";

fn shape_text(shape: &[usize]) -> String {
    shape
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

/// Writes the manifest and one f64 tensor file per parameter into `dir`,
/// creating it if needed. Rewriting the same network is byte-identical.
pub fn save_checkpoint(dir: &Path, net: &NetworkState) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::new();
    manifest.set("format", FORMAT);
    manifest.set("step", net.step.to_string());
    let cfg = &net.cfg;
    manifest.set("in_channels", cfg.in_channels.to_string());
    manifest.set("out_channels", cfg.out_channels.to_string());
    manifest.set("depth", cfg.depth.to_string());
    manifest.set("base_width", cfg.base_width.to_string());
    manifest.set("kernel_size", cfg.kernel_size.to_string());
    manifest.set("dtype", "f64");
    for p in &net.params {
        let file = format!("{}.dgmm", p.name);
        let tensor = TensorFile::from_f64(p.shape.clone(), p.values.clone())?;
        write_tensor(&dir.join(&file), &tensor)?;
        manifest.set(&format!("param.{}", p.name), file);
        manifest.set(&format!("shape.{}", p.name), shape_text(&p.shape));
    }
    manifest.write(&dir.join(MANIFEST_NAME))
}

fn require_int<T: std::str::FromStr>(manifest: &Manifest, key: &str) -> Result<T> {
    manifest
        .require(key)?
        .parse()
        .map_err(|_| Error::Config(format!("checkpoint key `{key}` is not an integer")))
}

/// Reads a checkpoint from a directory or a manifest path; parameter files
/// resolve relative to the manifest. Moments are zeroed, the step count is
/// restored, and no activations are retained.
pub fn load_checkpoint(path: &Path) -> Result<NetworkState> {
    let manifest_path: PathBuf = if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    };
    let manifest = Manifest::read(&manifest_path)?;
    match manifest.require("format")? {
        FORMAT => {}
        other => {
            return Err(Error::Config(format!(
                "not a network checkpoint (format `{other}`)"
            )))
        }
    }
    match manifest.require("dtype")? {
        "f64" => {}
        other => {
            return Err(Error::Config(format!(
                "checkpoint dtype `{other}` is not supported"
            )))
        }
    }
    let cfg = NetworkConfig {
        in_channels: require_int(&manifest, "in_channels")?,
        out_channels: require_int(&manifest, "out_channels")?,
        depth: require_int(&manifest, "depth")?,
        base_width: require_int(&manifest, "base_width")?,
        kernel_size: require_int(&manifest, "kernel_size")?,
    };
    cfg.validate()?;
    let step: u64 = require_int(&manifest, "step")?;
    let mut params = Vec::new();
    for (name, shape) in cfg.param_specs() {
        let declared = manifest.require(&format!("shape.{name}"))?;
        if declared != shape_text(&shape) {
            return Err(Error::Shape(format!(
                "checkpoint parameter `{name}` declares shape {declared}, network expects {}",
                shape_text(&shape)
            )));
        }
        let file = manifest.require(&format!("param.{name}"))?;
        let tensor = read_tensor(&resolve_path(&manifest_path, file))?;
        if tensor.dims() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "checkpoint file for `{name}` has dims {:?}, network expects {:?}",
                tensor.dims(),
                shape
            )));
        }
        let values = tensor.as_f64()?.to_vec();
        let len = values.len();
        params.push(Param {
            name,
            shape,
            values,
            m: vec![0.0; len],
            v: vec![0.0; len],
        });
    }
    Ok(NetworkState {
        cfg,
        params,
        step,
        version: 0,
        cache: None,
    })
}
