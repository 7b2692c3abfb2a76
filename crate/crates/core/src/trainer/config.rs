use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentConfig;
use crate::{Error, Result};

/// Model variants for the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    IdOnly,
    Concat,
    Sum,
    CmclOnly,
    OatOnly,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::IdOnly,
        Variant::Concat,
        Variant::Sum,
        Variant::CmclOnly,
        Variant::OatOnly,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::IdOnly => "id_only",
            Variant::Concat => "concat",
            Variant::Sum => "sum",
            Variant::CmclOnly => "cmcl_only",
            Variant::OatOnly => "oat_only",
        }
    }

    pub fn uses_modalities(self) -> bool {
        self != Variant::IdOnly
    }

    /// Plans are applied to modality features before fusion.
    pub fn uses_transport(self) -> bool {
        matches!(self, Variant::Full | Variant::OatOnly)
    }

    pub fn uses_cmcl(self) -> bool {
        matches!(self, Variant::Full | Variant::CmclOnly)
    }

    pub fn uses_ot_loss(self) -> bool {
        self.uses_transport()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub k_knn: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda_cl: f64,
    pub lambda_ot: f64,
    pub lambda_reg: f64,
    pub lambda_residual: f64,
    pub seed: u64,
    pub variant: Variant,
    pub patience: usize,
    pub ema_decay: f64,
    pub eval_k: usize,
    pub id_init_std: f64,
    pub alignment: AlignmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 2,
            layers: 2,
            k_knn: 10,
            batch_size: 512,
            epochs: 50,
            learning_rate: 1e-3,
            lambda_cl: 0.1,
            lambda_ot: 0.1,
            lambda_reg: 1e-4,
            lambda_residual: 0.0,
            seed: 0,
            variant: Variant::Full,
            patience: 10,
            ema_decay: 0.9,
            eval_k: 10,
            id_init_std: 0.1,
            alignment: AlignmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config { key: key.into(), msg });
        for (key, v) in [
            ("d", self.d),
            ("heads", self.heads),
            ("k_knn", self.k_knn),
            ("batch_size", self.batch_size),
            ("eval_k", self.eval_k),
        ] {
            if v == 0 {
                return bad(key, "must be positive".into());
            }
        }
        if self.d % self.heads != 0 {
            return bad("heads", format!("{} heads do not divide d = {}", self.heads, self.d));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive".into());
        }
        for (key, v) in [
            ("lambda_cl", self.lambda_cl),
            ("lambda_ot", self.lambda_ot),
            ("lambda_reg", self.lambda_reg),
            ("lambda_residual", self.lambda_residual),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, "must be finite and non-negative".into());
            }
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay", "must lie in [0, 1)".into());
        }
        if !(self.id_init_std >= 0.0 && self.id_init_std.is_finite()) {
            return bad("id_init_std", "must be finite and non-negative".into());
        }
        self.alignment.validate()
    }

    /// `lambda_cl` and `lambda_ot` as seen by the loss after the variant
    /// switch.
    pub fn effective_lambdas(&self) -> (f64, f64) {
        let cl = if self.variant.uses_cmcl() { self.lambda_cl } else { 0.0 };
        let ot = if self.variant.uses_ot_loss() { self.lambda_ot } else { 0.0 };
        (cl, ot)
    }
}
