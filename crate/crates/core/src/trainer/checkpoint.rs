//! One RGF1 file per tensor plus `manifest.json`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::params::{ModelParams, ModelShape};
use crate::datamodel::{read_rgf, write_rgf};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub shape: ModelShape,
    pub epoch: usize,
    pub params: ModelParams,
    /// Averaged base plans `(T0_text, T0_visual)` of transporting variants.
    pub plans: Option<(Array2<f64>, Array2<f64>)>,
    pub user_repr: Array2<f64>,
    pub item_repr: Array2<f64>,
    pub metrics: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: TrainConfig,
    shape: ModelShape,
    seed: u64,
    epoch: usize,
    metrics: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

fn tensor_list(ck: &Checkpoint) -> Vec<(String, &Array2<f64>)> {
    let mut out = ck.params.tensors();
    if let Some((t, v)) = &ck.plans {
        out.push(("plan_t".into(), t));
        out.push(("plan_v".into(), v));
    }
    out.push(("user_repr".into(), &ck.user_repr));
    out.push(("item_repr".into(), &ck.item_repr));
    out
}

/// Tensors are narrowed to `f32` on disk.
pub fn save_checkpoint(dir: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (name, t) in tensor_list(ck) {
        let file = format!("{name}.rgf");
        let data: Vec<f32> = t.iter().map(|&x| x as f32).collect();
        write_rgf(dir.join(&file), t.nrows(), t.ncols(), &data)?;
        entries.push(TensorEntry {
            name,
            file,
            rows: t.nrows(),
            cols: t.ncols(),
        });
    }
    let manifest = Manifest {
        format: "RGF1".into(),
        config: ck.config.clone(),
        shape: ck.shape,
        seed: ck.config.seed,
        epoch: ck.epoch,
        metrics: ck.metrics.clone(),
        tensors: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

fn read_tensor(dir: &Path, e: &TensorEntry) -> Result<Array2<f64>> {
    let (rows, cols, data) = read_rgf(dir.join(&e.file))?;
    if (rows, cols) != (e.rows, e.cols) {
        return Err(Error::Checkpoint(format!(
            "{} is {rows}x{cols}, manifest says {}x{}",
            e.file, e.rows, e.cols
        )));
    }
    Ok(Array2::from_shape_vec((rows, cols), data.into_iter().map(f64::from).collect()).expect("shape checked"))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.format != "RGF1" {
        return Err(Error::Checkpoint(format!("unsupported format {:?}", manifest.format)));
    }
    let mut loaded = std::collections::HashMap::new();
    for e in &manifest.tensors {
        loaded.insert(e.name.clone(), read_tensor(dir, e)?);
    }
    let mut take = |name: &str| {
        loaded
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    };
    // the layout comes from the config; values are overwritten below
    let mut params = ModelParams::init(&manifest.config, manifest.shape, &mut ChaCha8Rng::seed_from_u64(0))?;
    for (name, t) in params.tensors_mut() {
        let v = take(&name)?;
        if v.dim() != t.dim() {
            return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}, expected {:?}", v.dim(), t.dim())));
        }
        *t = v;
    }
    let plans = if manifest.tensors.iter().any(|e| e.name == "plan_t") {
        Some((take("plan_t")?, take("plan_v")?))
    } else {
        None
    };
    Ok(Checkpoint {
        user_repr: take("user_repr")?,
        item_repr: take("item_repr")?,
        config: manifest.config,
        shape: manifest.shape,
        epoch: manifest.epoch,
        params,
        plans,
        metrics: manifest.metrics,
    })
}
