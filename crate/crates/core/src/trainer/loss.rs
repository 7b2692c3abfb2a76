use std::sync::Arc;

use ndarray::Array2;
use serde::Serialize;

use super::config::{TrainConfig, Variant};
use super::params::{ModelParams, ModelShape};
use super::sampler::Triplet;
use crate::alignment::{absolute_epsilon, cmcl_on_tape, sinkhorn, uniform_marginal, SinkhornResult};
use crate::autodiff::{NeighborLists, Tape, Var};
use crate::datamodel::{FeatureMatrix, FeatureSet, InteractionTable};
use crate::encoders::{attention_adjacency, gat_forward, lightgcn_forward, GatVars, Propagation};
use crate::graphs::{build_interaction_graph, build_knn_graph, build_user_user_graph, RatingMode};
use crate::{Error, Result};

/// Frozen features plus the attention neighborhoods over them.
#[derive(Debug, Clone)]
pub struct ModalityInput {
    pub features: Array2<f64>,
    pub adjacency: Arc<NeighborLists>,
}

impl ModalityInput {
    fn from_knn(m: &FeatureMatrix, k: usize, user: bool) -> Result<Self> {
        let g = if user {
            build_user_user_graph(m, k)?
        } else {
            build_knn_graph(m, k)?
        };
        Ok(Self {
            features: m.to_array(),
            adjacency: Arc::new(attention_adjacency(&g)),
        })
    }
}

/// Everything the forward pass reads besides the parameters.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub prop: Propagation,
    pub text: Option<ModalityInput>,
    pub visual: Option<ModalityInput>,
    pub user: Option<ModalityInput>,
}

impl ModelInputs {
    /// Builds the bipartite operator from `train` and, when features are
    /// given, the three KNN graphs at `k_knn` (clamped below the node count).
    pub fn build(train: &InteractionTable, features: Option<&FeatureSet>, k_knn: usize, mode: RatingMode) -> Result<Self> {
        let prop = Propagation::new(&build_interaction_graph(train, mode));
        let (mut text, mut visual, mut user) = (None, None, None);
        if let Some(f) = features {
            f.validate(train.n_users(), train.n_items())?;
            let k_items = k_knn.min(train.n_items().saturating_sub(1)).max(1);
            let k_users = k_knn.min(train.n_users().saturating_sub(1)).max(1);
            text = Some(ModalityInput::from_knn(&f.item_text, k_items, false)?);
            visual = Some(ModalityInput::from_knn(&f.item_visual, k_items, false)?);
            user = Some(ModalityInput::from_knn(&f.user_text, k_users, true)?);
        }
        Ok(Self { prop, text, visual, user })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            n_users: self.prop.n_users(),
            n_items: self.prop.n_items(),
            d_text: self.text.as_ref().map_or(0, |m| m.features.ncols()),
            d_visual: self.visual.as_ref().map_or(0, |m| m.features.ncols()),
            d_user: self.user.as_ref().map(|m| m.features.ncols()),
        }
    }

    fn check(&self, variant: Variant) -> Result<()> {
        if variant.uses_modalities() && (self.text.is_none() || self.visual.is_none()) {
            return Err(Error::InvalidArgument(format!("variant {variant} needs item text and visual features")));
        }
        Ok(())
    }
}

/// Where the base plans `T0` come from in a loss evaluation.
#[derive(Debug, Clone)]
pub enum PlanSource {
    /// Fresh Sinkhorn solves on the batch cost matrices.
    Batch,
    /// Constant plans, e.g. for finite-difference checks.
    Fixed { text: Array2<f64>, visual: Array2<f64> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub bpr: f64,
    pub cmcl: f64,
    /// `sum_m <T0^m, C^m>` before weighting.
    pub ot: f64,
    pub w1_text: f64,
    pub w1_visual: f64,
    pub reg: f64,
    pub residual: f64,
}

struct ParamVars {
    user_emb: Var,
    item_emb: Var,
    gat_text: Option<GatVars>,
    gat_visual: Option<GatVars>,
    gat_user: Option<GatVars>,
    residual_t: Option<Var>,
    residual_v: Option<Var>,
    concat_proj: Option<Var>,
    /// Same order as [`ModelParams::tensors`].
    order: Vec<Var>,
}

impl ParamVars {
    fn new(tape: &mut Tape, p: &ModelParams) -> Self {
        let user_emb = tape.leaf(p.user_emb.clone());
        let item_emb = tape.leaf(p.item_emb.clone());
        let mut order = vec![user_emb, item_emb];
        let gat = |tape: &mut Tape, g: &Option<crate::encoders::GatParams>, order: &mut Vec<Var>| {
            g.as_ref().map(|g| {
                let v = g.on_tape(tape);
                order.extend(v.weights.iter().chain(&v.attention));
                v
            })
        };
        let gat_text = gat(tape, &p.gat_text, &mut order);
        let gat_visual = gat(tape, &p.gat_visual, &mut order);
        let gat_user = gat(tape, &p.gat_user, &mut order);
        let leaf = |tape: &mut Tape, m: &Option<Array2<f64>>, order: &mut Vec<Var>| {
            m.as_ref().map(|m| {
                let v = tape.leaf(m.clone());
                order.push(v);
                v
            })
        };
        let residual_t = leaf(tape, &p.residual_t, &mut order);
        let residual_v = leaf(tape, &p.residual_v, &mut order);
        let concat_proj = leaf(tape, &p.concat_proj, &mut order);
        Self {
            user_emb,
            item_emb,
            gat_text,
            gat_visual,
            gat_user,
            residual_t,
            residual_v,
            concat_proj,
            order,
        }
    }
}

/// Encoder outputs shared by the losses and the fusion.
struct Encoded {
    zu_id: Var,
    zi_id: Var,
    z_t: Option<Var>,
    z_v: Option<Var>,
    zu_t: Option<Var>,
}

fn encode(tape: &mut Tape, vars: &ParamVars, inputs: &ModelInputs, cfg: &TrainConfig) -> Encoded {
    let (zu_id, zi_id) = lightgcn_forward(tape, &inputs.prop, vars.user_emb, vars.item_emb, cfg.layers);
    let mut run = |g: &Option<GatVars>, m: &Option<ModalityInput>| match (g, m) {
        (Some(g), Some(m)) => {
            let x = tape.leaf(m.features.clone());
            Some(gat_forward(tape, &m.adjacency, x, g))
        }
        _ => None,
    };
    let z_t = run(&vars.gat_text, &inputs.text);
    let z_v = run(&vars.gat_visual, &inputs.visual);
    let zu_t = run(&vars.gat_user, &inputs.user);
    Encoded {
        zu_id,
        zi_id,
        z_t,
        z_v,
        zu_t,
    }
}

/// User and item representations under the variant's fusion rule.
/// `applied` holds `d * T0` per modality for the transporting variants.
fn fuse(tape: &mut Tape, vars: &ParamVars, enc: &Encoded, cfg: &TrainConfig, applied: Option<(Array2<f64>, Array2<f64>)>) -> (Var, Var) {
    let a = &cfg.alignment;
    let users = match enc.zu_t {
        Some(zu_t) if cfg.variant.uses_modalities() => tape.lin_comb(&[(enc.zu_id, 1.0 - a.gamma_u), (zu_t, a.gamma_u)]),
        _ => enc.zu_id,
    };
    let (z_t, z_v) = match (enc.z_t, enc.z_v) {
        (Some(t), Some(v)) => (t, v),
        _ => return (users, enc.zi_id),
    };
    let idw = 1.0 - a.gamma_t - a.gamma_v;
    let items = match cfg.variant {
        Variant::IdOnly => enc.zi_id,
        Variant::Sum => tape.lin_comb(&[(enc.zi_id, 1.0), (z_t, 1.0), (z_v, 1.0)]),
        Variant::Concat => {
            let cat = tape.concat_cols(&[enc.zi_id, z_t, z_v]);
            tape.matmul(cat, vars.concat_proj.expect("concat variant owns a projection"))
        }
        Variant::CmclOnly => tape.lin_comb(&[(z_t, a.gamma_t), (z_v, a.gamma_v), (enc.zi_id, idw)]),
        Variant::Full | Variant::OatOnly => {
            let (bt, bv) = applied.expect("transporting variants need plans");
            let transport = |tape: &mut Tape, z: Var, base: Array2<f64>, res: Option<Var>| {
                let b = tape.leaf(base);
                let plan = match res {
                    Some(r) => tape.add(b, r),
                    None => b,
                };
                tape.matmul(z, plan)
            };
            let ht = transport(tape, z_t, bt, vars.residual_t);
            let hv = transport(tape, z_v, bv, vars.residual_v);
            tape.lin_comb(&[(ht, a.gamma_t), (hv, a.gamma_v), (enc.zi_id, idw)])
        }
    };
    (users, items)
}

fn batch_items(triplets: &[Triplet]) -> Vec<usize> {
    let mut items: Vec<usize> = triplets.iter().map(|t| t.pos).collect();
    items.sort_unstable();
    items.dedup();
    items
}

/// Result of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    /// Flat gradient in [`ModelParams::flatten`] order, when requested.
    pub gradient: Option<Vec<f64>>,
    /// Sinkhorn solves for (text, visual) when plans came from the batch.
    pub solves: Option<(SinkhornResult, SinkhornResult)>,
}

/// Term weights of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub bpr: f64,
    pub cl: f64,
    pub ot: f64,
    pub reg: f64,
    pub residual: f64,
}

impl LossWeights {
    /// Weights implied by the config after the variant switch.
    pub fn from_config(cfg: &TrainConfig) -> Self {
        let (cl, ot) = cfg.effective_lambdas();
        Self {
            bpr: 1.0,
            cl,
            ot,
            reg: cfg.lambda_reg,
            residual: cfg.lambda_residual,
        }
    }
}

/// Total objective on one batch and, with `backward`, its gradient with the
/// plans held constant.
pub fn evaluate_loss(
    params: &ModelParams,
    inputs: &ModelInputs,
    triplets: &[Triplet],
    cfg: &TrainConfig,
    plans: &PlanSource,
    backward: bool,
) -> Result<LossOutput> {
    evaluate_loss_weighted(params, inputs, triplets, cfg, LossWeights::from_config(cfg), plans, backward)
}

/// [`evaluate_loss`] with explicit term weights. Zero-weight terms are still
/// reported in the breakdown when the variant computes them.
pub fn evaluate_loss_weighted(
    params: &ModelParams,
    inputs: &ModelInputs,
    triplets: &[Triplet],
    cfg: &TrainConfig,
    w: LossWeights,
    plans: &PlanSource,
    backward: bool,
) -> Result<LossOutput> {
    inputs.check(cfg.variant)?;
    if triplets.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let a = &cfg.alignment;
    let mut tape = Tape::new();
    let vars = ParamVars::new(&mut tape, params);
    let enc = encode(&mut tape, &vars, inputs, cfg);
    let items = batch_items(triplets);
    let mut breakdown = LossBreakdown::default();
    let mut terms: Vec<(Var, f64)> = Vec::new();

    let mut applied = None;
    let mut solves = None;
    if let (Some(z_t), Some(z_v)) = (enc.z_t, enc.z_v) {
        let zid_b = tape.gather_rows(enc.zi_id, &items);
        let zt_b = tape.gather_rows(z_t, &items);
        let zv_b = tape.gather_rows(z_v, &items);
        if cfg.variant.uses_cmcl() && items.len() >= 2 {
            let cl = cmcl_on_tape(&mut tape, zid_b, zt_b, zv_b, a.tau);
            breakdown.cmcl = tape.scalar_value(cl);
            if w.cl != 0.0 {
                terms.push((cl, w.cl));
            }
        }
        if cfg.variant.uses_transport() {
            let ct = tape.l1_cost(zt_b, zid_b, a.s);
            let cv = tape.l1_cost(zv_b, zid_b, a.s);
            let (t0_t, t0_v) = match plans {
                PlanSource::Fixed { text, visual } => (text.clone(), visual.clone()),
                PlanSource::Batch => {
                    let solve = |c: &Array2<f64>| {
                        let u = uniform_marginal(c.nrows());
                        sinkhorn(c, &u, &u, absolute_epsilon(c, a.epsilon), a.sinkhorn_max_iters, a.sinkhorn_tol)
                    };
                    let st = solve(tape.value(ct))?;
                    let sv = solve(tape.value(cv))?;
                    let plans = (st.plan.clone(), sv.plan.clone());
                    solves = Some((st, sv));
                    plans
                }
            };
            let d = cfg.d as f64;
            applied = Some((&t0_t * d, &t0_v * d));
            let wt = tape.frobenius_const(ct, t0_t);
            let wv = tape.frobenius_const(cv, t0_v);
            breakdown.w1_text = tape.scalar_value(wt);
            breakdown.w1_visual = tape.scalar_value(wv);
            breakdown.ot = breakdown.w1_text + breakdown.w1_visual;
            if w.ot != 0.0 {
                terms.push((wt, w.ot));
                terms.push((wv, w.ot));
            }
        }
    }

    let (users, items_repr) = fuse(&mut tape, &vars, &enc, cfg, applied);
    let us: Vec<usize> = triplets.iter().map(|t| t.user).collect();
    let pos: Vec<usize> = triplets.iter().map(|t| t.pos).collect();
    let neg: Vec<usize> = triplets.iter().map(|t| t.neg).collect();
    let u = tape.gather_rows(users, &us);
    let zp = tape.gather_rows(items_repr, &pos);
    let zn = tape.gather_rows(items_repr, &neg);
    let bpr = tape.bpr(u, zp, zn);
    breakdown.bpr = tape.scalar_value(bpr);
    if w.bpr != 0.0 {
        terms.push((bpr, w.bpr));
    }

    if w.reg != 0.0 {
        let sq: Vec<(Var, f64)> = vars
            .order
            .iter()
            .map(|&v| (tape.sum_squares(v), 1.0))
            .collect();
        let reg = tape.lin_comb(&sq);
        breakdown.reg = tape.scalar_value(reg);
        terms.push((reg, w.reg));
    }
    if w.residual != 0.0 {
        let rs: Vec<(Var, f64)> = [vars.residual_t, vars.residual_v]
            .into_iter()
            .flatten()
            .map(|v| (tape.sum_squares(v), 1.0))
            .collect();
        if !rs.is_empty() {
            let r = tape.lin_comb(&rs);
            breakdown.residual = tape.scalar_value(r);
            terms.push((r, w.residual));
        }
    }
    if terms.is_empty() {
        terms.push((bpr, 0.0));
    }
    let total = tape.lin_comb(&terms);
    breakdown.total = tape.scalar_value(total);

    let gradient = if backward {
        let grads = tape.backward(total);
        let mut flat = Vec::with_capacity(params.n_params());
        for (&v, (name, t)) in vars.order.iter().zip(params.tensors()) {
            let g = grads.get_or_zeros(v, t.dim());
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(name));
            }
            flat.extend(g.iter().copied());
        }
        Some(flat)
    } else {
        None
    };
    Ok(LossOutput {
        breakdown,
        gradient,
        solves,
    })
}

/// Full user and item representations for ranking. `plans` are raw `T0`
/// per modality (typically moving averages), required by transporting
/// variants.
pub fn representations(
    params: &ModelParams,
    inputs: &ModelInputs,
    cfg: &TrainConfig,
    plans: Option<(&Array2<f64>, &Array2<f64>)>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    inputs.check(cfg.variant)?;
    let mut tape = Tape::new();
    let vars = ParamVars::new(&mut tape, params);
    let enc = encode(&mut tape, &vars, inputs, cfg);
    let applied = if cfg.variant.uses_transport() {
        let (t, v) = plans.ok_or_else(|| Error::InvalidArgument(format!("variant {} needs transport plans", cfg.variant)))?;
        let d = cfg.d as f64;
        Some((t * d, v * d))
    } else {
        None
    };
    let (u, z) = fuse(&mut tape, &vars, &enc, cfg, applied);
    Ok((tape.value(u).clone(), tape.value(z).clone()))
}

/// Full-item cost matrices `(C_text, C_visual)` at the current parameters,
/// used when no batch plan has been averaged yet.
pub fn full_cost_matrices(params: &ModelParams, inputs: &ModelInputs, cfg: &TrainConfig) -> Result<Option<(Array2<f64>, Array2<f64>)>> {
    inputs.check(cfg.variant)?;
    let mut tape = Tape::new();
    let vars = ParamVars::new(&mut tape, params);
    let enc = encode(&mut tape, &vars, inputs, cfg);
    Ok(match (enc.z_t, enc.z_v) {
        (Some(t), Some(v)) => {
            let s = cfg.alignment.s;
            let zid = tape.value(enc.zi_id);
            Some((
                crate::alignment::cost_matrix(tape.value(t), zid, s)?,
                crate::alignment::cost_matrix(tape.value(v), zid, s)?,
            ))
        }
        _ => None,
    })
}
