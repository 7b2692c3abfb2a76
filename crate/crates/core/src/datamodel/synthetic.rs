use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EntityKind, FeatureMatrix, FeatureSet, Interaction, InteractionTable};
use crate::{Error, Result};

/// Latent cluster-preference generator settings.
///
/// Items and users belong to latent clusters. Each item has a latent vector
/// (its cluster centroid plus an item-specific offset) in `latent_dim`
/// dimensions; users mostly pick items from their own cluster with weight
/// `exp(sharpness * cos(pref, latent))`, so items that are close in feature
/// direction are liked by the same users. Text features expose the item
/// latent, visual features the same latent rotated by
/// `conflict_rotation_angle` degrees, and user text features the mean
/// centroid of the clusters a user interacted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub d_text: usize,
    pub d_visual: usize,
    pub interactions_per_user: usize,
    pub modality_noise: f64,
    /// Degrees.
    pub conflict_rotation_angle: f64,
    #[serde(default = "defaults::item_spread")]
    pub item_spread: f64,
    #[serde(default = "defaults::user_spread")]
    pub user_spread: f64,
    #[serde(default = "defaults::sharpness")]
    pub preference_sharpness: f64,
    #[serde(default = "defaults::cross_cluster_rate")]
    pub cross_cluster_rate: f64,
    /// Dimension of the latent space, capped by both feature dimensions.
    #[serde(default = "defaults::latent_dim")]
    pub latent_dim: usize,
}

mod defaults {
    pub fn item_spread() -> f64 {
        0.8
    }
    pub fn user_spread() -> f64 {
        0.8
    }
    pub fn sharpness() -> f64 {
        10.0
    }
    pub fn cross_cluster_rate() -> f64 {
        0.05
    }
    pub fn latent_dim() -> usize {
        8
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self::shipped()
    }
}

impl SyntheticConfig {
    /// The reference dataset: 2,000 users, 1,000 items, 5 clusters and a 60°
    /// text/visual conflict rotation.
    pub fn shipped() -> Self {
        Self {
            n_users: 2_000,
            n_items: 1_000,
            n_clusters: 5,
            d_text: 32,
            d_visual: 48,
            interactions_per_user: 12,
            modality_noise: 0.1,
            conflict_rotation_angle: 60.0,
            item_spread: defaults::item_spread(),
            user_spread: defaults::user_spread(),
            preference_sharpness: defaults::sharpness(),
            cross_cluster_rate: defaults::cross_cluster_rate(),
            latent_dim: defaults::latent_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::DegenerateConfig(m.to_string()));
        if self.n_clusters == 0 {
            return fail("n_clusters must be positive");
        }
        if self.n_items == 0 || self.n_users == 0 {
            return fail("n_users and n_items must be positive");
        }
        if self.n_clusters > self.n_items {
            return fail("more clusters than items");
        }
        if self.d_text == 0 || self.d_visual == 0 || self.latent_dim == 0 {
            return fail("feature and latent dimensions must be positive");
        }
        if self.interactions_per_user == 0 || self.interactions_per_user > self.n_items {
            return fail("interactions_per_user must be in 1..=n_items");
        }
        if !(0.0..=1.0).contains(&self.cross_cluster_rate) {
            return fail("cross_cluster_rate must be in [0, 1]");
        }
        if !(self.modality_noise >= 0.0 && self.conflict_rotation_angle.is_finite()) {
            return fail("modality_noise must be >= 0 and the rotation finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub interactions: InteractionTable,
    pub features: FeatureSet,
    pub user_clusters: Vec<usize>,
    pub item_clusters: Vec<usize>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a) * dot(b, b)).sqrt().max(1e-12)
}

/// Rotates consecutive coordinate planes (0,1), (2,3), ... by `angle` radians.
fn rotate_planes(v: &[f64], angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    let mut out = v.to_vec();
    for k in 0..v.len() / 2 {
        let (a, b) = (v[2 * k], v[2 * k + 1]);
        out[2 * k] = c * a - s * b;
        out[2 * k + 1] = s * a + c * b;
    }
    out
}

fn padded_with_noise(v: &[f64], dim: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let scale = noise / (dim as f64).sqrt();
    (0..dim)
        .map(|j| {
            let base = v.get(j).copied().unwrap_or(0.0);
            // draw even at zero noise so the stream does not depend on it
            let n: f64 = rng.sample(StandardNormal);
            (base + scale * n) as f32
        })
        .collect()
}

pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = cfg.latent_dim.min(cfg.d_text).min(cfg.d_visual);
    let inv_sqrt_m = 1.0 / (m as f64).sqrt();

    let centroids: Vec<Vec<f64>> = (0..cfg.n_clusters)
        .map(|_| {
            let v = normal_vec(&mut rng, m);
            let n = dot(&v, &v).sqrt().max(1e-12);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let item_clusters: Vec<usize> = (0..cfg.n_items).map(|i| i % cfg.n_clusters).collect();
    let user_clusters: Vec<usize> = (0..cfg.n_users).map(|u| u % cfg.n_clusters).collect();
    let latent = |rng: &mut ChaCha8Rng, c: usize, spread: f64| -> Vec<f64> {
        let g = normal_vec(rng, m);
        centroids[c]
            .iter()
            .zip(g)
            .map(|(x, e)| x + spread * inv_sqrt_m * e)
            .collect()
    };
    let item_latent: Vec<Vec<f64>> = item_clusters
        .iter()
        .map(|&c| latent(&mut rng, c, cfg.item_spread))
        .collect();
    let user_pref: Vec<Vec<f64>> = user_clusters
        .iter()
        .map(|&c| latent(&mut rng, c, cfg.user_spread))
        .collect();

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_clusters];
    for (i, &c) in item_clusters.iter().enumerate() {
        members[c].push(i);
    }

    let mut records = Vec::with_capacity(cfg.n_users * cfg.interactions_per_user);
    let mut clock = 0i64;
    for (u, pref) in user_pref.iter().enumerate() {
        let own = &members[user_clusters[u]];
        let weights: Vec<f64> = own
            .iter()
            .map(|&i| (cfg.preference_sharpness * cosine(pref, &item_latent[i])).exp())
            .collect();
        let in_cluster = WeightedIndex::new(&weights)
            .map_err(|e| Error::DegenerateConfig(format!("preference weights: {e}")))?;
        let mut chosen = HashSet::new();
        let mut picked = Vec::with_capacity(cfg.interactions_per_user);
        let mut attempts = 0usize;
        while picked.len() < cfg.interactions_per_user {
            attempts += 1;
            let item = if attempts > 200 * cfg.interactions_per_user {
                // exhausted rejection budget: fall back to uniform fill
                rng.random_range(0..cfg.n_items)
            } else if cfg.n_clusters > 1 && rng.random_bool(cfg.cross_cluster_rate) {
                let c = (user_clusters[u] + rng.random_range(1..cfg.n_clusters)) % cfg.n_clusters;
                members[c][rng.random_range(0..members[c].len())]
            } else {
                own[in_cluster.sample(&mut rng)]
            };
            if chosen.insert(item) {
                picked.push(item);
            }
        }
        for item in picked {
            records.push(Interaction {
                user: u,
                item,
                rating: 1.0,
                timestamp: clock,
            });
            clock += 1;
        }
    }
    let interactions = InteractionTable::new(records, cfg.n_users, cfg.n_items)?;

    let angle = cfg.conflict_rotation_angle.to_radians();
    let mut text = Vec::with_capacity(cfg.n_items * cfg.d_text);
    let mut visual = Vec::with_capacity(cfg.n_items * cfg.d_visual);
    for l in &item_latent {
        text.extend(padded_with_noise(l, cfg.d_text, cfg.modality_noise, &mut rng));
        visual.extend(padded_with_noise(
            &rotate_planes(l, angle),
            cfg.d_visual,
            cfg.modality_noise,
            &mut rng,
        ));
    }
    let mut user_text = Vec::with_capacity(cfg.n_users * cfg.d_text);
    for items in interactions.items_by_user() {
        let mut mean = vec![0.0; m];
        for &i in &items {
            for (acc, x) in mean.iter_mut().zip(&centroids[item_clusters[i]]) {
                *acc += x / items.len() as f64;
            }
        }
        user_text.extend(padded_with_noise(&mean, cfg.d_text, cfg.modality_noise, &mut rng));
    }
    let features = FeatureSet {
        item_text: FeatureMatrix::new(cfg.n_items, cfg.d_text, text, EntityKind::ItemText)?,
        item_visual: FeatureMatrix::new(cfg.n_items, cfg.d_visual, visual, EntityKind::ItemVisual)?,
        user_text: FeatureMatrix::new(cfg.n_users, cfg.d_text, user_text, EntityKind::UserText)?,
    };
    Ok(SyntheticDataset {
        interactions,
        features,
        user_clusters,
        item_clusters,
    })
}
