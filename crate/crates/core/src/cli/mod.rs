//! Pipeline commands behind the `recgoat` binary. Each command takes a
//! validated [`RunConfig`] and writes its artifacts under `out_dir`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentConfig;
use crate::datamodel::{
    apply_k_core, generate_synthetic, load_feature_matrix, load_indexed_interactions,
    load_interactions, save_feature_matrix, save_id_maps, split_dataset, write_interactions,
    DatasetSplit, EntityKind, FeatureMatrix, FeatureSet, InteractionTable, SyntheticConfig,
};
use crate::evaluator::{evaluate, RankingResult};
use crate::theory::VerificationSuite;
use crate::trainer::{load_checkpoint, train, Checkpoint, TrainConfig, Variant};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_BOUNDS: i32 = 3;

const FEATURE_FILES: [(&str, EntityKind); 3] = [
    ("item_text.rgf", EntityKind::ItemText),
    ("item_visual.rgf", EntityKind::ItemVisual),
    ("user_text.rgf", EntityKind::UserText),
];

/// Every key accepted in a config file. Paths are optional; a command that
/// does not find `data_dir` trains on the synthetic generator instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub interactions: Option<PathBuf>,
    pub features_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub k_core: usize,
    pub split_ratios: [f64; 3],
    pub device_threads: Option<usize>,

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

    pub tau: f64,
    pub s: f64,
    pub gamma_t: f64,
    pub gamma_v: f64,
    pub gamma_u: f64,
    pub epsilon: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,

    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub d_text: usize,
    pub d_visual: usize,
    pub interactions_per_user: usize,
    pub modality_noise: f64,
    pub conflict_rotation_angle: f64,
    pub item_spread: f64,
    pub user_spread: f64,
    pub preference_sharpness: f64,
    pub cross_cluster_rate: f64,
    pub latent_dim: usize,

    pub ablation_seeds: Vec<u64>,
    pub ablation_variants: Vec<Variant>,
    pub sweep_step: f64,
    pub distance_trials: usize,
    pub preference_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_parts(&TrainConfig::default(), &SyntheticConfig::shipped())
    }
}

/// Command-line values that override the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub epochs: Option<usize>,
    pub device_threads: Option<usize>,
}

fn config_error(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

fn key_note(key: &str) -> &'static str {
    match key {
        "interactions" => "raw interactions TSV (user, item, rating, timestamp) for prepare",
        "features_dir" => "directory with item_text.rgf, item_visual.rgf, user_text.rgf",
        "data_dir" => "prepared dataset; absent means the synthetic generator",
        "checkpoint" => "checkpoint directory for evaluate (default out_dir/checkpoint)",
        "out_dir" => "output directory",
        "k_core" => "minimum interactions per user and item (--k)",
        "split_ratios" => "per-user train/validation/test fractions",
        "device_threads" => "worker threads (default: all cores)",
        "d" => "embedding dimension",
        "heads" => "attention heads, must divide d",
        "layers" => "LightGCN propagation layers",
        "k_knn" => "neighbours per node in the modality graphs",
        "batch_size" => "BPR triplets per step",
        "epochs" => "maximum training epochs",
        "learning_rate" => "Adam step size",
        "lambda_cl" => "contrastive loss weight",
        "lambda_ot" => "transport cost weight",
        "lambda_reg" => "L2 weight on all parameters",
        "lambda_residual" => "squared Frobenius weight on the residual plans",
        "seed" => "seed for splitting, generation and training",
        "variant" => "id_only | concat | sum | cmcl_only | oat_only | full",
        "patience" => "epochs without validation improvement before stopping",
        "ema_decay" => "moving-average decay of the batch transport plans",
        "eval_k" => "ranking cutoff",
        "id_init_std" => "std of the ID embedding initialisation",
        "tau" => "InfoNCE temperature",
        "s" => "scale of the feature-wise L1 cost",
        "gamma_t" => "text weight in item fusion",
        "gamma_v" => "visual weight in item fusion",
        "gamma_u" => "text weight in user fusion",
        "epsilon" => "entropic regulariser relative to mean(C)",
        "sinkhorn_max_iters" => "Sinkhorn iterations per annealing stage",
        "sinkhorn_tol" => "Sinkhorn marginal tolerance",
        "n_users" | "n_items" | "n_clusters" => "synthetic dataset size",
        "d_text" | "d_visual" => "synthetic feature dimensions",
        "interactions_per_user" => "synthetic interactions per user",
        "modality_noise" => "synthetic feature noise",
        "conflict_rotation_angle" => "degrees between text and visual latents",
        "item_spread" | "user_spread" => "synthetic within-cluster spread",
        "preference_sharpness" => "synthetic preference concentration",
        "cross_cluster_rate" => "probability of an out-of-cluster interaction",
        "latent_dim" => "synthetic latent dimension",
        "ablation_seeds" => "seeds averaged by ablate",
        "ablation_variants" => "variants run by ablate",
        "sweep_step" => "grid step of the fusion-weight sweep",
        "distance_trials" => "random instances for the instance-level bound",
        "preference_trials" => "preference setups for the error bounds",
        _ => "",
    }
}

impl RunConfig {
    pub fn from_parts(t: &TrainConfig, syn: &SyntheticConfig) -> Self {
        let a = &t.alignment;
        Self {
            interactions: None,
            features_dir: None,
            data_dir: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            k_core: 5,
            split_ratios: crate::datamodel::DEFAULT_RATIOS,
            device_threads: None,
            d: t.d,
            heads: t.heads,
            layers: t.layers,
            k_knn: t.k_knn,
            batch_size: t.batch_size,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            lambda_cl: t.lambda_cl,
            lambda_ot: t.lambda_ot,
            lambda_reg: t.lambda_reg,
            lambda_residual: t.lambda_residual,
            seed: t.seed,
            variant: t.variant,
            patience: t.patience,
            ema_decay: t.ema_decay,
            eval_k: t.eval_k,
            id_init_std: t.id_init_std,
            tau: a.tau,
            s: a.s,
            gamma_t: a.gamma_t,
            gamma_v: a.gamma_v,
            gamma_u: a.gamma_u,
            epsilon: a.epsilon,
            sinkhorn_max_iters: a.sinkhorn_max_iters,
            sinkhorn_tol: a.sinkhorn_tol,
            n_users: syn.n_users,
            n_items: syn.n_items,
            n_clusters: syn.n_clusters,
            d_text: syn.d_text,
            d_visual: syn.d_visual,
            interactions_per_user: syn.interactions_per_user,
            modality_noise: syn.modality_noise,
            conflict_rotation_angle: syn.conflict_rotation_angle,
            item_spread: syn.item_spread,
            user_spread: syn.user_spread,
            preference_sharpness: syn.preference_sharpness,
            cross_cluster_rate: syn.cross_cluster_rate,
            latent_dim: syn.latent_dim,
            ablation_seeds: vec![0, 1, 2, 3, 4],
            ablation_variants: Variant::ALL.to_vec(),
            sweep_step: 0.1,
            distance_trials: 100,
            preference_trials: 30,
        }
    }

    /// Parses a JSON config; unknown keys are reported by name.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let key = msg
                .split_once("unknown field `")
                .and_then(|(_, rest)| rest.split_once('`'))
                .map(|(k, _)| k.to_string())
                .unwrap_or_else(|| "<config>".into());
            config_error(&key, msg)
        })
    }

    /// Defaults, overlaid with the file at `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| config_error("--config", format!("{}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.variant {
            self.variant = v;
        }
        if let Some(v) = &o.out {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.k {
            self.k_core = v;
        }
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if o.device_threads.is_some() {
            self.device_threads = o.device_threads;
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            d: self.d,
            heads: self.heads,
            layers: self.layers,
            k_knn: self.k_knn,
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            lambda_cl: self.lambda_cl,
            lambda_ot: self.lambda_ot,
            lambda_reg: self.lambda_reg,
            lambda_residual: self.lambda_residual,
            seed: self.seed,
            variant: self.variant,
            patience: self.patience,
            ema_decay: self.ema_decay,
            eval_k: self.eval_k,
            id_init_std: self.id_init_std,
            alignment: AlignmentConfig {
                tau: self.tau,
                s: self.s,
                gamma_t: self.gamma_t,
                gamma_v: self.gamma_v,
                gamma_u: self.gamma_u,
                epsilon: self.epsilon,
                sinkhorn_max_iters: self.sinkhorn_max_iters,
                sinkhorn_tol: self.sinkhorn_tol,
            },
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_users: self.n_users,
            n_items: self.n_items,
            n_clusters: self.n_clusters,
            d_text: self.d_text,
            d_visual: self.d_visual,
            interactions_per_user: self.interactions_per_user,
            modality_noise: self.modality_noise,
            conflict_rotation_angle: self.conflict_rotation_angle,
            item_spread: self.item_spread,
            user_spread: self.user_spread,
            preference_sharpness: self.preference_sharpness,
            cross_cluster_rate: self.cross_cluster_rate,
            latent_dim: self.latent_dim,
        }
    }

    /// Checks every key before any command starts work.
    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.synthetic_config()
            .validate()
            .map_err(|e| config_error("synthetic", e.to_string()))?;
        if self.k_core == 0 {
            return Err(config_error("k_core", "must be at least 1"));
        }
        let r = self.split_ratios;
        if r.iter().any(|x| !(0.0..=1.0).contains(x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(config_error("split_ratios", "must lie in [0,1] and sum to 1"));
        }
        if self.device_threads == Some(0) {
            return Err(config_error("device_threads", "must be positive"));
        }
        if self.ablation_seeds.is_empty() {
            return Err(config_error("ablation_seeds", "must not be empty"));
        }
        if self.ablation_variants.is_empty() {
            return Err(config_error("ablation_variants", "must not be empty"));
        }
        let n = 1.0 / self.sweep_step;
        if !(self.sweep_step > 0.0 && self.sweep_step <= 1.0 && (n - n.round()).abs() < 1e-9) {
            return Err(config_error("sweep_step", "must be 1/n for a positive integer n"));
        }
        if self.distance_trials == 0 || self.preference_trials == 0 {
            return Err(config_error("distance_trials", "trial counts must be positive"));
        }
        Ok(())
    }

    /// `key  default  note` lines for `--help`.
    pub fn help_text() -> String {
        let defaults = serde_json::to_value(Self::default()).expect("config serialises");
        let mut out = String::from("Config keys (JSON object; flags override file values):\n");
        if let serde_json::Value::Object(map) = defaults {
            for (k, v) in map {
                let _ = writeln!(out, "  {k:<24} {:<22} {}", v.to_string(), key_note(&k));
            }
        }
        out
    }
}

/// Error to process exit code: configuration problems are 1, everything
/// else 2.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::UnknownVariant(_) | Error::InvalidRatios(_) | Error::DegenerateConfig(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Sizes the global worker pool once; later calls are ignored.
pub fn init_threads(n: Option<usize>) {
    if let Some(n) = n {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialised");
        }
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub sparsity: f64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub seed: u64,
}

impl DatasetStats {
    fn new(full: &InteractionTable, split: &DatasetSplit) -> Self {
        Self {
            users: full.n_users(),
            items: full.n_items(),
            interactions: full.len(),
            sparsity: full.sparsity(),
            train: split.train.len(),
            validation: split.validation.len(),
            test: split.test.len(),
            seed: split.seed,
        }
    }
}

fn write_prepared(dir: &Path, full: &InteractionTable, split: &DatasetSplit, features: Option<&FeatureSet>) -> Result<DatasetStats> {
    fs::create_dir_all(dir)?;
    write_interactions(&split.train, dir.join("train.tsv"))?;
    write_interactions(&split.validation, dir.join("val.tsv"))?;
    write_interactions(&split.test, dir.join("test.tsv"))?;
    save_id_maps(full, dir)?;
    if let Some(f) = features {
        save_feature_matrix(&f.item_text, dir.join(FEATURE_FILES[0].0))?;
        save_feature_matrix(&f.item_visual, dir.join(FEATURE_FILES[1].0))?;
        save_feature_matrix(&f.user_text, dir.join(FEATURE_FILES[2].0))?;
    }
    let stats = DatasetStats::new(full, split);
    write_json(&dir.join("stats.json"), &stats)?;
    Ok(stats)
}

fn read_label_map(path: &Path) -> Result<Option<HashMap<String, usize>>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut map = HashMap::new();
    for (n, line) in fs::read_to_string(path)?.lines().enumerate() {
        let Some((idx, label)) = line.split_once('\t') else {
            continue;
        };
        let idx = idx.parse::<usize>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: e.to_string(),
        })?;
        map.insert(label.to_string(), idx);
    }
    Ok(Some(map))
}

/// Rows of `m` reordered to `labels`. Feature rows are matched through the
/// map file next to them when present, otherwise by position in `source`.
fn align_rows(m: &FeatureMatrix, labels: &[String], map: Option<&HashMap<String, usize>>, source: &[String]) -> Result<FeatureMatrix> {
    let fallback: HashMap<&str, usize> = source.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let rows = labels
        .iter()
        .map(|l| {
            map.and_then(|m| m.get(l).copied())
                .or_else(|| fallback.get(l.as_str()).copied())
                .ok_or_else(|| Error::InvalidArgument(format!("no feature row for id {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    m.select_rows(&rows)
}

/// Ingests raw interactions, applies the k-core filter, splits per user and
/// writes the prepared layout: `train.tsv`, `val.tsv`, `test.tsv`, the id
/// maps, `stats.json`, and aligned feature files when `features_dir` is set.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<DatasetStats> {
    let path = cfg
        .interactions
        .as_ref()
        .ok_or_else(|| config_error("interactions", "prepare needs an interactions file"))?;
    let raw = load_interactions(path)?;
    let table = apply_k_core(&raw, cfg.k_core)?;
    let split = split_dataset(&table, cfg.split_ratios, cfg.seed)?;
    let features = match &cfg.features_dir {
        None => None,
        Some(dir) => {
            let item_map = read_label_map(&dir.join("item_map.tsv"))?;
            let user_map = read_label_map(&dir.join("user_map.tsv"))?;
            let load = |k: usize| load_feature_matrix(dir.join(FEATURE_FILES[k].0), FEATURE_FILES[k].1);
            let items = |m: FeatureMatrix| align_rows(&m, table.item_labels(), item_map.as_ref(), raw.item_labels());
            Some(FeatureSet {
                item_text: items(load(0)?)?,
                item_visual: items(load(1)?)?,
                user_text: align_rows(&load(2)?, table.user_labels(), user_map.as_ref(), raw.user_labels())?,
            })
        }
    };
    let stats = write_prepared(&cfg.out_dir, &table, &split, features.as_ref())?;
    log::info!(
        "prepared {} users, {} items, {} interactions (sparsity {:.4})",
        stats.users,
        stats.items,
        stats.interactions,
        stats.sparsity
    );
    Ok(stats)
}

/// Reads a prepared directory; features are loaded when all three files
/// exist.
pub fn load_prepared(dir: &Path) -> Result<(DatasetSplit, Option<FeatureSet>)> {
    let stats: DatasetStats = serde_json::from_str(&fs::read_to_string(dir.join("stats.json"))?)?;
    let load = |name: &str| load_indexed_interactions(dir.join(name), stats.users, stats.items);
    let split = DatasetSplit {
        train: load("train.tsv")?,
        validation: load("val.tsv")?,
        test: load("test.tsv")?,
        seed: stats.seed,
    };
    let features = if FEATURE_FILES.iter().all(|(f, _)| dir.join(f).exists()) {
        let load = |k: usize| load_feature_matrix(dir.join(FEATURE_FILES[k].0), FEATURE_FILES[k].1);
        let f = FeatureSet {
            item_text: load(0)?,
            item_visual: load(1)?,
            user_text: load(2)?,
        };
        f.validate(stats.users, stats.items)?;
        Some(f)
    } else {
        None
    };
    Ok((split, features))
}

/// The configured dataset: `data_dir` when set, otherwise the synthetic
/// generator drawn and split with `seed`.
pub fn load_dataset(cfg: &RunConfig, seed: u64) -> Result<(DatasetSplit, Option<FeatureSet>)> {
    match &cfg.data_dir {
        Some(dir) => load_prepared(dir),
        None => {
            let ds = generate_synthetic(&cfg.synthetic_config(), seed)?;
            let split = split_dataset(&ds.interactions, cfg.split_ratios, seed)?;
            Ok((split, Some(ds.features)))
        }
    }
}

/// Writes the synthetic dataset in prepared layout plus the raw
/// `interactions.tsv` and the latent cluster labels.
pub fn cmd_generate(cfg: &RunConfig) -> Result<DatasetStats> {
    let ds = generate_synthetic(&cfg.synthetic_config(), cfg.seed)?;
    let split = split_dataset(&ds.interactions, cfg.split_ratios, cfg.seed)?;
    let stats = write_prepared(&cfg.out_dir, &ds.interactions, &split, Some(&ds.features))?;
    write_interactions(&ds.interactions, cfg.out_dir.join("interactions.tsv"))?;
    let mut clusters = String::from("kind\tindex\tcluster\n");
    for (u, c) in ds.user_clusters.iter().enumerate() {
        let _ = writeln!(clusters, "user\t{u}\t{c}");
    }
    for (i, c) in ds.item_clusters.iter().enumerate() {
        let _ = writeln!(clusters, "item\t{i}\t{c}");
    }
    fs::write(cfg.out_dir.join("clusters.tsv"), clusters)?;
    Ok(stats)
}

/// Trains one model; the best checkpoint lands in `out_dir/checkpoint` and
/// the epoch log in `out_dir/metrics.jsonl`.
pub fn cmd_train(cfg: &RunConfig) -> Result<Checkpoint> {
    let (split, features) = load_dataset(cfg, cfg.seed)?;
    let tc = cfg.train_config();
    fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("config.json"), cfg)?;
    let outcome = train(&tc, &split, features.as_ref(), Some(&cfg.out_dir))?;
    log::info!(
        "best epoch {} (val R@{} {})",
        outcome.best_epoch,
        tc.eval_k,
        outcome.checkpoint.metrics["val_recall10"]
    );
    Ok(outcome.checkpoint)
}

fn test_metrics(ck: &Checkpoint, split: &DatasetSplit, k: usize) -> Result<RankingResult> {
    evaluate(&ck.user_repr, &ck.item_repr, &[&split.train, &split.validation], &split.test, k)
}

/// Test-set ranking of a saved checkpoint. Writes `evaluation.json` and
/// `per_user.tsv` to `out_dir` and returns the summary JSON.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<serde_json::Value> {
    let dir = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("checkpoint"));
    let ck = load_checkpoint(&dir)?;
    let (split, _) = load_dataset(cfg, ck.config.seed)?;
    let r = test_metrics(&ck, &split, cfg.eval_k)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let js = r.to_json();
    write_json(&cfg.out_dir.join("evaluation.json"), &js)?;
    r.write_per_user_tsv(&cfg.out_dir.join("per_user.tsv"))?;
    Ok(js)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub ndcg_mean: f64,
    pub ndcg_std: f64,
    pub recall_per_seed: Vec<f64>,
    pub ndcg_per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Rows as `variant  R@K  N@K` with `mean ± std` cells.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("variant\tR@{k}\tN@{k}\n", k = self.k);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{:.4} ± {:.4}\t{:.4} ± {:.4}",
                r.variant, r.recall_mean, r.recall_std, r.ndcg_mean, r.ndcg_std
            );
        }
        s
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains every configured variant on every ablation seed. Without
/// `data_dir` each seed draws its own synthetic dataset, shared by all
/// variants.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblationReport> {
    let mut results: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); cfg.ablation_variants.len()];
    for &seed in &cfg.ablation_seeds {
        let (split, features) = load_dataset(cfg, seed)?;
        for (slot, &variant) in results.iter_mut().zip(&cfg.ablation_variants) {
            let tc = TrainConfig {
                seed,
                variant,
                ..cfg.train_config()
            };
            let outcome = train(&tc, &split, features.as_ref(), None)?;
            let r = test_metrics(&outcome.checkpoint, &split, cfg.eval_k)?;
            log::info!("ablate {variant} seed {seed}: R@{} {:.4} N@{} {:.4}", cfg.eval_k, r.recall, cfg.eval_k, r.ndcg);
            slot.0.push(r.recall);
            slot.1.push(r.ndcg);
        }
    }
    let rows = cfg
        .ablation_variants
        .iter()
        .zip(results)
        .map(|(&variant, (rec, ndcg))| {
            let (recall_mean, recall_std) = mean_std(&rec);
            let (ndcg_mean, ndcg_std) = mean_std(&ndcg);
            AblationRow {
                variant,
                recall_mean,
                recall_std,
                ndcg_mean,
                ndcg_std,
                recall_per_seed: rec,
                ndcg_per_seed: ndcg,
            }
        })
        .collect();
    let report = AblationReport {
        k: cfg.eval_k,
        seeds: cfg.ablation_seeds.clone(),
        rows,
    };
    fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("ablation.json"), &report)?;
    fs::write(cfg.out_dir.join("ablation.tsv"), report.to_tsv())?;
    Ok(report)
}

/// Runs the bound suite and writes the report array to `bounds.json`.
pub fn cmd_verify_bounds(cfg: &RunConfig) -> Result<VerificationSuite> {
    let suite = VerificationSuite::run(cfg.distance_trials, cfg.preference_trials, cfg.seed)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let reports = suite.reports();
    write_json(&cfg.out_dir.join("bounds.json"), &reports)?;
    let failed = reports.iter().filter(|r| !r.holds).count();
    log::info!("{} bound checks, {failed} with negative slack", reports.len());
    Ok(suite)
}

/// Points `(gamma_t, gamma_v)` on the simplex grid with spacing `step`.
pub fn sweep_grid(step: f64) -> Vec<(f64, f64)> {
    let n = (1.0 / step).round() as usize;
    let mut out = Vec::with_capacity((n + 1) * (n + 2) / 2);
    for i in 0..=n {
        for j in 0..=(n - i) {
            out.push((i as f64 / n as f64, j as f64 / n as f64));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub gamma_t: f64,
    pub gamma_v: f64,
    pub gamma_id: f64,
    pub recall: f64,
    pub ndcg: f64,
}

/// Retrains at every grid point of the fusion simplex and writes
/// `sweep.tsv`.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepPoint>> {
    let (split, features) = load_dataset(cfg, cfg.seed)?;
    let mut points = Vec::new();
    for (gt, gv) in sweep_grid(cfg.sweep_step) {
        let mut tc = cfg.train_config();
        tc.alignment.gamma_t = gt;
        tc.alignment.gamma_v = gv;
        let outcome = train(&tc, &split, features.as_ref(), None)?;
        let r = test_metrics(&outcome.checkpoint, &split, cfg.eval_k)?;
        points.push(SweepPoint {
            gamma_t: gt,
            gamma_v: gv,
            gamma_id: (1.0 - gt - gv).max(0.0),
            recall: r.recall,
            ndcg: r.ndcg,
        });
    }
    let mut tsv = String::from("gamma_t\tgamma_v\tgamma_id\trecall\tndcg\n");
    for p in &points {
        let _ = writeln!(tsv, "{:.2}\t{:.2}\t{:.2}\t{:.6}\t{:.6}", p.gamma_t, p.gamma_v, p.gamma_id, p.recall, p.ndcg);
    }
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("sweep.tsv"), tsv)?;
    Ok(points)
}
