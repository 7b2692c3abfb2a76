//! Cross-modal alignment: contrastive InfoNCE over modality pairs and
//! feature-wise optimal transport of modality embeddings toward the ID space.

use std::fmt;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{l1_cost_value, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub tau: f64,
    pub s: f64,
    pub gamma_t: f64,
    pub gamma_v: f64,
    pub gamma_u: f64,
    /// Entropic regulariser relative to the mean of the cost matrix.
    pub epsilon: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            s: 1.0,
            gamma_t: 0.2,
            gamma_v: 0.2,
            gamma_u: 0.2,
            epsilon: 0.05,
            sinkhorn_max_iters: 200,
            sinkhorn_tol: 1e-6,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| {
            Err(Error::Config {
                key: key.into(),
                msg: msg.into(),
            })
        };
        if !(self.tau > 0.0) {
            return bad("tau", "must be positive");
        }
        if !(self.s > 0.0) {
            return bad("s", "must be positive");
        }
        check_item_weights(self.gamma_t, self.gamma_v).or_else(|_| bad("gamma_t", "gamma_t, gamma_v must lie in [0,1] with sum at most 1"))?;
        if !(0.0..=1.0).contains(&self.gamma_u) {
            return bad("gamma_u", "must lie in [0,1]");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if self.sinkhorn_max_iters == 0 {
            return bad("sinkhorn_max_iters", "must be at least 1");
        }
        if !(self.sinkhorn_tol > 0.0) {
            return bad("sinkhorn_tol", "must be positive");
        }
        Ok(())
    }
}

fn check_item_weights(gamma_t: f64, gamma_v: f64) -> Result<()> {
    let ok = (0.0..=1.0).contains(&gamma_t) && (0.0..=1.0).contains(&gamma_v) && gamma_t + gamma_v <= 1.0 + 1e-12;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "fusion weights gamma_t={gamma_t}, gamma_v={gamma_v} must lie in [0,1] with sum at most 1"
        )))
    }
}

fn normalized(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

/// Single-direction in-batch InfoNCE with cosine similarity.
pub fn infonce_pair_loss(anchors: &Array2<f64>, positives: &Array2<f64>, tau: f64) -> Result<f64> {
    if anchors.dim() != positives.dim() {
        return Err(Error::DimensionMismatch(format!(
            "anchors {:?} vs positives {:?}",
            anchors.dim(),
            positives.dim()
        )));
    }
    let b = anchors.nrows();
    if b < 2 {
        return Err(Error::InvalidArgument(format!("InfoNCE needs at least 2 rows, got {b}")));
    }
    let logits = normalized(anchors).dot(&normalized(positives).t()) / tau;
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - row[i];
    }
    Ok(loss / b as f64)
}

/// Sum of InfoNCE over (id,t), (id,v), (t,v), anchor first.
pub fn cmcl_loss(z_id: &Array2<f64>, z_t: &Array2<f64>, z_v: &Array2<f64>, tau: f64) -> Result<f64> {
    Ok(infonce_pair_loss(z_id, z_t, tau)? + infonce_pair_loss(z_id, z_v, tau)? + infonce_pair_loss(z_t, z_v, tau)?)
}

pub fn infonce_on_tape(tape: &mut Tape, anchors: Var, positives: Var, tau: f64) -> Var {
    let a = tape.normalize_rows(anchors);
    let p = tape.normalize_rows(positives);
    let pt = tape.transpose(p);
    let sim = tape.matmul(a, pt);
    let logits = tape.scale(sim, 1.0 / tau);
    tape.softmax_xent_diag(logits)
}

pub fn cmcl_on_tape(tape: &mut Tape, z_id: Var, z_t: Var, z_v: Var, tau: f64) -> Var {
    let a = infonce_on_tape(tape, z_id, z_t, tau);
    let b = infonce_on_tape(tape, z_id, z_v, tau);
    let c = infonce_on_tape(tape, z_t, z_v, tau);
    tape.lin_comb(&[(a, 1.0), (b, 1.0), (c, 1.0)])
}

/// `C_ij = s * mean_b |Z_m[b,i] - Z_id[b,j]|`, a `d x d` matrix over feature
/// dimensions.
pub fn cost_matrix(z_m: &Array2<f64>, z_id: &Array2<f64>, s: f64) -> Result<Array2<f64>> {
    if z_m.dim() != z_id.dim() {
        return Err(Error::DimensionMismatch(format!(
            "cost inputs {:?} vs {:?}",
            z_m.dim(),
            z_id.dim()
        )));
    }
    if z_m.nrows() == 0 {
        return Err(Error::InvalidArgument("cost matrix needs at least one row".into()));
    }
    Ok(l1_cost_value(z_m, z_id, s))
}

/// Absolute regulariser for a relative `epsilon`; falls back to `epsilon`
/// itself when the cost is identically zero.
pub fn absolute_epsilon(cost: &Array2<f64>, relative: f64) -> f64 {
    let mean = cost.mean().unwrap_or(0.0);
    if mean > 0.0 {
        relative * mean
    } else {
        relative
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// Rounded, exactly feasible plan (up to floating point).
    pub plan: Array2<f64>,
    /// Whether the final-stage iterate reached `tol` before rounding.
    pub converged: bool,
    /// Iterations over all annealing stages.
    pub iterations: usize,
    /// `<T0, C>`.
    pub cost: f64,
    /// Largest absolute marginal violation of `plan`.
    pub marginal_error: f64,
    /// Largest absolute marginal violation of the last iterate, before
    /// rounding.
    pub iterate_error: f64,
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn marginal_error(plan: &Array2<f64>, p: &[f64], q: &[f64]) -> f64 {
    let rows = plan.rows().into_iter().zip(p).map(|(r, &pi)| (r.sum() - pi).abs());
    let cols = plan.columns().into_iter().zip(q).map(|(c, &qj)| (c.sum() - qj).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Projects a positive matrix onto the transport polytope: shrink rows and
/// columns that exceed their marginal, then add the rank-one correction
/// `err_r err_c^T / |err_r|_1`.
pub fn round_to_marginals(plan: &Array2<f64>, p: &[f64], q: &[f64]) -> Array2<f64> {
    let mut f = plan.clone();
    for (mut row, &pi) in f.rows_mut().into_iter().zip(p) {
        let s = row.sum();
        if s > pi {
            row *= pi / s;
        }
    }
    for (mut col, &qj) in f.columns_mut().into_iter().zip(q) {
        let s = col.sum();
        if s > qj {
            col *= qj / s;
        }
    }
    let er: Vec<f64> = f.rows().into_iter().zip(p).map(|(r, &pi)| (pi - r.sum()).max(0.0)).collect();
    let ec: Vec<f64> = f.columns().into_iter().zip(q).map(|(c, &qj)| (qj - c.sum()).max(0.0)).collect();
    let mass: f64 = er.iter().sum();
    if mass > 0.0 {
        for ((i, j), x) in f.indexed_iter_mut() {
            *x += er[i] * ec[j] / mass;
        }
    }
    f
}

/// Log-domain Sinkhorn for `min <T,C> - eps H(T)` subject to `T 1 = p`,
/// `T^T 1 = q`.
///
/// The regulariser is annealed from `max(C)` down to `epsilon` by halving,
/// warm-starting the dual potentials at every stage; each stage runs at most
/// `max_iters` iterations. The final iterate is rounded onto the feasible
/// set, so `plan` always satisfies the marginals while `converged` and
/// `iterate_error` describe the raw iterate.
pub fn sinkhorn(
    cost: &Array2<f64>,
    p: &[f64],
    q: &[f64],
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<SinkhornResult> {
    let (n, m) = cost.dim();
    if p.len() != n || q.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "cost {n}x{m} with marginals of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidArgument("cost must be finite and non-negative".into()));
    }
    let valid = |v: &[f64]| v.iter().all(|&x| x > 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    if !valid(p) || !valid(q) {
        return Err(Error::InvalidArgument("marginals must be positive and sum to 1".into()));
    }
    let mut schedule = vec![epsilon];
    let top = cost.iter().copied().fold(0.0, f64::max);
    while *schedule.last().unwrap() * 2.0 < top {
        let next = schedule.last().unwrap() * 2.0;
        schedule.push(next);
    }
    schedule.reverse();

    let log_p: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let log_q: Vec<f64> = q.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut iterations = 0;
    let last_stage = schedule.len() - 1;
    for (stage, &eps) in schedule.iter().enumerate() {
        let stage_tol = if stage == last_stage { tol } else { tol.max(1e-4) };
        for _ in 0..max_iters {
            iterations += 1;
            for i in 0..n {
                let row = (0..m).map(|j| (g[j] - cost[[i, j]]) / eps);
                f[i] = eps * (log_p[i] - logsumexp(row));
            }
            for j in 0..m {
                let col = (0..n).map(|i| (f[i] - cost[[i, j]]) / eps);
                g[j] = eps * (log_q[j] - logsumexp(col));
            }
            // columns are exact after the g update, so rows carry the error
            let err = (0..n)
                .map(|i| {
                    let s: f64 = (0..m).map(|j| ((f[i] + g[j] - cost[[i, j]]) / eps).exp()).sum();
                    (s - p[i]).abs()
                })
                .fold(0.0, f64::max);
            if err <= stage_tol {
                break;
            }
        }
    }
    let iterate = Array2::from_shape_fn((n, m), |(i, j)| ((f[i] + g[j] - cost[[i, j]]) / epsilon).exp());
    let iterate_error = marginal_error(&iterate, p, q);
    let plan = round_to_marginals(&iterate, p, q);
    let total = (&plan * cost).sum();
    Ok(SinkhornResult {
        marginal_error: marginal_error(&plan, p, q),
        plan,
        converged: iterate_error <= tol,
        iterations,
        cost: total,
        iterate_error,
    })
}

pub fn uniform_marginal(d: usize) -> Vec<f64> {
    vec![1.0 / d as f64; d]
}

/// Per-modality transport state: the latest batch plan `T0`, its moving
/// average, and the learnable residual.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub d: usize,
    pub base: Array2<f64>,
    pub ema: Option<Array2<f64>>,
    pub residual: Array2<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub epsilon: f64,
    pub ema_decay: f64,
}

impl TransportPlan {
    /// Uniform marginals, `T0 = p q^T`, zero residual.
    pub fn uniform(d: usize, epsilon: f64, ema_decay: f64) -> Self {
        let p = uniform_marginal(d);
        let base = Array2::from_elem((d, d), 1.0 / (d * d) as f64);
        Self {
            d,
            base,
            ema: None,
            residual: Array2::zeros((d, d)),
            q: p.clone(),
            p,
            epsilon,
            ema_decay,
        }
    }

    /// Replace `T0` with a fresh batch plan and fold it into the average.
    pub fn update_base(&mut self, t0: Array2<f64>) {
        self.ema = Some(match self.ema.take() {
            None => t0.clone(),
            Some(e) => e * self.ema_decay + &t0 * (1.0 - self.ema_decay),
        });
        self.base = t0;
    }

    /// `d * T0`, so rows sum to one.
    pub fn applied_base(&self) -> Array2<f64> {
        &self.base * self.d as f64
    }

    /// Averaged plan used for inference, falling back to the latest batch
    /// plan.
    pub fn eval_plan(&self) -> Array2<f64> {
        let t0 = self.ema.as_ref().unwrap_or(&self.base);
        adaptive_plan(&(t0 * self.d as f64), &self.residual)
    }
}

/// `T = T0_applied + T~`.
pub fn adaptive_plan(t0_applied: &Array2<f64>, residual: &Array2<f64>) -> Array2<f64> {
    t0_applied + residual
}

pub fn transport_features(z: &Array2<f64>, plan: &Array2<f64>) -> Result<Array2<f64>> {
    if z.ncols() != plan.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "features {:?} vs plan {:?}",
            z.dim(),
            plan.dim()
        )));
    }
    Ok(z.dot(plan))
}

/// `gamma_t Zt + gamma_v Zv + (1 - gamma_t - gamma_v) Zid`.
pub fn fuse_items(
    z_t: &Array2<f64>,
    z_v: &Array2<f64>,
    z_id: &Array2<f64>,
    gamma_t: f64,
    gamma_v: f64,
) -> Result<Array2<f64>> {
    check_item_weights(gamma_t, gamma_v)?;
    if z_t.dim() != z_id.dim() || z_v.dim() != z_id.dim() {
        return Err(Error::DimensionMismatch("fusion inputs differ in shape".into()));
    }
    Ok(z_t * gamma_t + z_v * gamma_v + z_id * (1.0 - gamma_t - gamma_v))
}

pub fn fuse_users(z_id: &Array2<f64>, z_t: &Array2<f64>, gamma_u: f64) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&gamma_u) {
        return Err(Error::InvalidArgument(format!("gamma_u={gamma_u} outside [0,1]")));
    }
    if z_id.dim() != z_t.dim() {
        return Err(Error::DimensionMismatch("fusion inputs differ in shape".into()));
    }
    Ok(z_id * (1.0 - gamma_u) + z_t * gamma_u)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanReport {
    pub row_error: f64,
    pub col_error: f64,
    pub transport_cost: f64,
    pub residual_norm: f64,
}

impl PlanReport {
    pub fn new(plan: &TransportPlan, cost: &Array2<f64>) -> Self {
        let rows: Array1<f64> = plan.base.sum_axis(ndarray::Axis(1));
        let cols: Array1<f64> = plan.base.sum_axis(ndarray::Axis(0));
        let dev = |s: &Array1<f64>, t: &[f64]| s.iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Self {
            row_error: dev(&rows, &plan.p),
            col_error: dev(&cols, &plan.q),
            transport_cost: (&plan.base * cost).sum(),
            residual_norm: plan.residual.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "row marginal error    {:.3e}", self.row_error)?;
        writeln!(f, "column marginal error {:.3e}", self.col_error)?;
        writeln!(f, "<T0, C>               {:.6}", self.transport_cost)?;
        write!(f, "||residual||_F        {:.6}", self.residual_norm)
    }
}
