use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, Variant};
use crate::encoders::{EmbeddingTable, GatParams};
use crate::{Error, Result};

/// Input feature widths the parameters are shaped for. `user_text` is
/// optional: without it users are represented by their ID embedding only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_users: usize,
    pub n_items: usize,
    pub d_text: usize,
    pub d_visual: usize,
    pub d_user: Option<usize>,
}

/// Every learnable tensor. Which optional parts exist depends on the
/// variant; the flat view walks [`ModelParams::tensors`] in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub user_emb: Array2<f64>,
    pub item_emb: Array2<f64>,
    pub gat_text: Option<GatParams>,
    pub gat_visual: Option<GatParams>,
    pub gat_user: Option<GatParams>,
    pub residual_t: Option<Array2<f64>>,
    pub residual_v: Option<Array2<f64>>,
    pub concat_proj: Option<Array2<f64>>,
}

impl ModelParams {
    /// ID tables are drawn first so every variant shares them for a seed.
    pub fn init(cfg: &TrainConfig, shape: ModelShape, rng: &mut impl Rng) -> Result<Self> {
        let d = cfg.d;
        let user_emb = EmbeddingTable::init_normal(shape.n_users, d, cfg.id_init_std, rng).values;
        let item_emb = EmbeddingTable::init_normal(shape.n_items, d, cfg.id_init_std, rng).values;
        let mut p = Self {
            user_emb,
            item_emb,
            gat_text: None,
            gat_visual: None,
            gat_user: None,
            residual_t: None,
            residual_v: None,
            concat_proj: None,
        };
        let v = cfg.variant;
        if v.uses_modalities() {
            p.gat_text = Some(GatParams::init(shape.d_text, d, cfg.heads, rng)?);
            p.gat_visual = Some(GatParams::init(shape.d_visual, d, cfg.heads, rng)?);
            if let Some(du) = shape.d_user {
                p.gat_user = Some(GatParams::init(du, d, cfg.heads, rng)?);
            }
        }
        if v.uses_transport() {
            p.residual_t = Some(Array2::zeros((d, d)));
            p.residual_v = Some(Array2::zeros((d, d)));
        }
        if v == Variant::Concat {
            let bound = 1.0 / ((3 * d) as f64).sqrt();
            p.concat_proj = Some(Array2::from_shape_fn((3 * d, d), |_| rng.random_range(-bound..=bound)));
        }
        Ok(p)
    }

    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![("user_emb".to_string(), &self.user_emb), ("item_emb".to_string(), &self.item_emb)];
        for (name, g) in [("gat_text", &self.gat_text), ("gat_visual", &self.gat_visual), ("gat_user", &self.gat_user)] {
            if let Some(g) = g {
                for (h, w) in g.weights.iter().enumerate() {
                    out.push((format!("{name}.w{h}"), w));
                }
                for (h, a) in g.attention.iter().enumerate() {
                    out.push((format!("{name}.a{h}"), a));
                }
            }
        }
        for (name, m) in [("residual_t", &self.residual_t), ("residual_v", &self.residual_v), ("concat_proj", &self.concat_proj)] {
            if let Some(m) = m {
                out.push((name.to_string(), m));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = vec![
            ("user_emb".to_string(), &mut self.user_emb),
            ("item_emb".to_string(), &mut self.item_emb),
        ];
        for (name, g) in [
            ("gat_text", &mut self.gat_text),
            ("gat_visual", &mut self.gat_visual),
            ("gat_user", &mut self.gat_user),
        ] {
            if let Some(g) = g {
                for (h, w) in g.weights.iter_mut().enumerate() {
                    out.push((format!("{name}.w{h}"), w));
                }
                for (h, a) in g.attention.iter_mut().enumerate() {
                    out.push((format!("{name}.a{h}"), a));
                }
            }
        }
        for (name, m) in [
            ("residual_t", &mut self.residual_t),
            ("residual_v", &mut self.residual_v),
            ("concat_proj", &mut self.concat_proj),
        ] {
            if let Some(m) = m {
                out.push((name.to_string(), m));
            }
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for (_, t) in self.tensors() {
            v.extend(t.iter().copied());
        }
        v
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.n_params();
        if flat.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                actual: flat.len(),
            });
        }
        let mut k = 0;
        for (_, t) in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = flat[k];
                k += 1;
            }
        }
        Ok(())
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n)
    }

    /// Name of the tensor owning flat coordinate `k`.
    pub fn name_of_coordinate(&self, mut k: usize) -> Option<String> {
        for (name, t) in self.tensors() {
            if k < t.len() {
                return Some(name);
            }
            k -= t.len();
        }
        None
    }
}
