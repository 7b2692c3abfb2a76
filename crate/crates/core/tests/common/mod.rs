#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recgoat::datamodel::{EntityKind, FeatureMatrix, FeatureSet, Interaction, InteractionTable};
use recgoat::trainer::{ModelInputs, ModelParams, TrainConfig, Triplet, Variant};
use recgoat::graphs::RatingMode;

pub fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

/// Every user and item has at least one interaction; ratings in 1..=5.
pub fn random_table(rng: &mut ChaCha8Rng, nu: usize, ni: usize, p: f64) -> InteractionTable {
    let mut recs = Vec::new();
    for u in 0..nu {
        for i in 0..ni {
            if i == u % ni || u == i % nu || rng.random_bool(p) {
                recs.push(Interaction {
                    user: u,
                    item: i,
                    rating: rng.random_range(1..=5) as f64,
                    timestamp: 0,
                });
            }
        }
    }
    InteractionTable::new(recs, nu, ni).unwrap()
}

pub fn random_features(rng: &mut ChaCha8Rng, nu: usize, ni: usize, dt: usize, dv: usize, du: usize) -> FeatureSet {
    FeatureSet {
        item_text: FeatureMatrix::from_array(&rand_mat(rng, ni, dt), EntityKind::ItemText).unwrap(),
        item_visual: FeatureMatrix::from_array(&rand_mat(rng, ni, dv), EntityKind::ItemVisual).unwrap(),
        user_text: FeatureMatrix::from_array(&rand_mat(rng, nu, du), EntityKind::UserText).unwrap(),
    }
}

/// 8 users, 8 items, d = 8 with generic (non-zero) residuals.
pub struct Tiny {
    pub train: InteractionTable,
    pub features: FeatureSet,
    pub inputs: ModelInputs,
    pub cfg: TrainConfig,
    pub params: ModelParams,
    pub triplets: Vec<Triplet>,
    pub plan_t: Array2<f64>,
    pub plan_v: Array2<f64>,
}

pub fn random_plan(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    use recgoat::alignment::{sinkhorn, uniform_marginal};
    let c = Array2::from_shape_fn((d, d), |_| rng.random_range(0.0..1.0));
    let u = uniform_marginal(d);
    sinkhorn(&c, &u, &u, 0.1, 1000, 1e-12).unwrap().plan
}

pub fn tiny(seed: u64, variant: Variant) -> Tiny {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nu, ni, d) = (8, 8, 8);
    let train = random_table(&mut rng, nu, ni, 0.3);
    let features = random_features(&mut rng, nu, ni, 5, 6, 4);
    let cfg = TrainConfig {
        d,
        heads: 2,
        layers: 2,
        k_knn: 3,
        batch_size: 12,
        variant,
        lambda_cl: 0.3,
        lambda_ot: 0.2,
        lambda_reg: 1e-2,
        lambda_residual: 0.05,
        ..Default::default()
    };
    let inputs = ModelInputs::build(&train, Some(&features), cfg.k_knn, RatingMode::Raw).unwrap();
    let mut params = ModelParams::init(&cfg, inputs.shape(), &mut rng).unwrap();
    // move away from the zero residual so every path carries gradient
    for r in [params.residual_t.as_mut(), params.residual_v.as_mut()].into_iter().flatten() {
        r.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }
    let sampler = recgoat::trainer::BprSampler::new(&train).unwrap();
    let triplets = sampler.sample(cfg.batch_size, &mut rng);
    let plan_t = random_plan(&mut rng, d);
    let plan_v = random_plan(&mut rng, d);
    Tiny {
        train,
        features,
        inputs,
        cfg,
        params,
        triplets,
        plan_t,
        plan_v,
    }
}
