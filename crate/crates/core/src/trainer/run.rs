use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::TrainConfig;
use super::loss::{evaluate_loss, full_cost_matrices, representations, LossBreakdown, ModelInputs, PlanSource};
use super::optim::Adam;
use super::params::ModelParams;
use super::sampler::BprSampler;
use crate::alignment::{absolute_epsilon, sinkhorn, uniform_marginal, TransportPlan};
use crate::datamodel::{DatasetSplit, FeatureSet};
use crate::evaluator::evaluate;
use crate::graphs::RatingMode;
use crate::{Error, Result};

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_bpr: f64,
    pub loss_cmcl: f64,
    pub loss_ot: f64,
    pub w1_text: f64,
    pub w1_visual: f64,
    pub val_recall10: f64,
    pub val_ndcg10: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Base plans for inference: the moving averages when training produced
/// them, otherwise a solve on the full-item cost matrices.
pub fn inference_plans(
    params: &ModelParams,
    inputs: &ModelInputs,
    cfg: &TrainConfig,
    ema: Option<&(TransportPlan, TransportPlan)>,
) -> Result<Option<(Array2<f64>, Array2<f64>)>> {
    if !cfg.variant.uses_transport() {
        return Ok(None);
    }
    if let Some((t, v)) = ema {
        if let (Some(a), Some(b)) = (&t.ema, &v.ema) {
            return Ok(Some((a.clone(), b.clone())));
        }
    }
    let Some((ct, cv)) = full_cost_matrices(params, inputs, cfg)? else {
        return Ok(None);
    };
    let a = &cfg.alignment;
    let solve = |c: &Array2<f64>| {
        let u = uniform_marginal(c.nrows());
        sinkhorn(c, &u, &u, absolute_epsilon(c, a.epsilon), a.sinkhorn_max_iters, a.sinkhorn_tol).map(|r| r.plan)
    };
    Ok(Some((solve(&ct)?, solve(&cv)?)))
}

struct Snapshot {
    epoch: usize,
    params: ModelParams,
    plans: Option<(Array2<f64>, Array2<f64>)>,
    user_repr: Array2<f64>,
    item_repr: Array2<f64>,
    val_recall: f64,
    val_ndcg: f64,
}

fn snapshot(
    epoch: usize,
    params: &ModelParams,
    inputs: &ModelInputs,
    cfg: &TrainConfig,
    ema: Option<&(TransportPlan, TransportPlan)>,
    split: &DatasetSplit,
) -> Result<Snapshot> {
    let plans = inference_plans(params, inputs, cfg, ema)?;
    let (u, z) = representations(params, inputs, cfg, plans.as_ref().map(|(a, b)| (a, b)))?;
    let (val_recall, val_ndcg) = if split.validation.is_empty() {
        (0.0, 0.0)
    } else {
        let r = evaluate(&u, &z, &[&split.train], &split.validation, cfg.eval_k)?;
        (r.recall, r.ndcg)
    };
    Ok(Snapshot {
        epoch,
        params: params.clone(),
        plans,
        user_repr: u,
        item_repr: z,
        val_recall,
        val_ndcg,
    })
}

fn to_checkpoint(cfg: &TrainConfig, inputs: &ModelInputs, s: Snapshot) -> Checkpoint {
    Checkpoint {
        config: cfg.clone(),
        shape: inputs.shape(),
        epoch: s.epoch,
        metrics: serde_json::json!({
            "best_epoch": s.epoch,
            "val_recall10": s.val_recall,
            "val_ndcg10": s.val_ndcg,
        }),
        params: s.params,
        plans: s.plans,
        user_repr: s.user_repr,
        item_repr: s.item_repr,
    }
}

/// Epoch loop with validation-based early stopping. With `out_dir` the best
/// checkpoint goes to `out_dir/checkpoint` and the per-epoch log to
/// `out_dir/metrics.jsonl`; on divergence the last good checkpoint is saved
/// before the error is returned.
pub fn train(
    cfg: &TrainConfig,
    split: &DatasetSplit,
    features: Option<&FeatureSet>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let inputs = ModelInputs::build(&split.train, features, cfg.k_knn, RatingMode::Raw)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(cfg, inputs.shape(), &mut rng)?;
    let sampler = BprSampler::new(&split.train)?;
    let mut adam = Adam::new(params.n_params(), cfg.learning_rate);
    let mut ema = cfg.variant.uses_transport().then(|| {
        let mk = || TransportPlan::uniform(cfg.d, cfg.alignment.epsilon, cfg.ema_decay);
        (mk(), mk())
    });
    let n_batches = sampler.n_records().div_ceil(cfg.batch_size);

    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(std::io::BufWriter::new(fs::File::create(dir.join("metrics.jsonl"))?))
        }
        None => None,
    };
    let mut history = Vec::new();
    let mut best = snapshot(0, &params, &inputs, cfg, ema.as_ref(), split)?;
    let mut since_best = 0;
    let mut stopped_early = false;

    let save_best = |best: Snapshot| -> Result<Checkpoint> {
        let ck = to_checkpoint(cfg, &inputs, best);
        if let Some(dir) = out_dir {
            save_checkpoint(dir.join("checkpoint"), &ck)?;
        }
        Ok(ck)
    };

    for epoch in 1..=cfg.epochs {
        let mut sum = LossBreakdown::default();
        for step in 0..n_batches {
            let triplets = sampler.sample(cfg.batch_size, &mut rng);
            let out = match evaluate_loss(&params, &inputs, &triplets, cfg, &PlanSource::Batch, true) {
                Ok(o) if o.breakdown.total.is_finite() => o,
                Ok(o) => {
                    save_best(best)?;
                    return Err(Error::Diverged {
                        epoch,
                        msg: format!("loss {} at step {step}", o.breakdown.total),
                    });
                }
                Err(Error::NonFiniteGradient(name)) => {
                    save_best(best)?;
                    return Err(Error::Diverged {
                        epoch,
                        msg: format!("non-finite gradient for {name} at step {step}"),
                    });
                }
                Err(e) => return Err(e),
            };
            let b = &out.breakdown;
            sum.total += b.total;
            sum.bpr += b.bpr;
            sum.cmcl += b.cmcl;
            sum.ot += b.ot;
            sum.w1_text += b.w1_text;
            sum.w1_visual += b.w1_visual;
            let mut flat = params.flatten();
            adam.step(&mut flat, out.gradient.as_ref().expect("backward requested"));
            params.unflatten(&flat)?;
            if let (Some((pt, pv)), Some((st, sv))) = (ema.as_mut(), out.solves) {
                pt.update_base(st.plan);
                pv.update_base(sv.plan);
            }
        }
        if let Some(name) = params.first_non_finite() {
            save_best(best)?;
            return Err(Error::Diverged {
                epoch,
                msg: format!("parameter {name} became non-finite"),
            });
        }
        let current = snapshot(epoch, &params, &inputs, cfg, ema.as_ref(), split)?;
        let nb = n_batches as f64;
        let m = EpochMetrics {
            epoch,
            loss_total: sum.total / nb,
            loss_bpr: sum.bpr / nb,
            loss_cmcl: sum.cmcl / nb,
            loss_ot: sum.ot / nb,
            w1_text: sum.w1_text / nb,
            w1_visual: sum.w1_visual / nb,
            val_recall10: current.val_recall,
            val_ndcg10: current.val_ndcg,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} bpr {:.5} val R@{} {:.4}",
            m.loss_total,
            m.loss_bpr,
            cfg.eval_k,
            m.val_recall10
        );
        if let Some(w) = log.as_mut() {
            serde_json::to_writer(&mut *w, &m)?;
            writeln!(w)?;
            w.flush()?;
        }
        history.push(m);
        if current.val_recall > best.val_recall {
            best = current;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let best_epoch = best.epoch;
    let checkpoint = save_best(best)?;
    Ok(TrainOutcome {
        checkpoint,
        history,
        best_epoch,
        stopped_early,
    })
}
