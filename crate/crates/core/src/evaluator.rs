//! Full-ranking top-K evaluation: Recall@K and NDCG@K with already-seen items
//! masked out.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::Serialize;

use crate::datamodel::InteractionTable;
use crate::{Error, Result};

/// Higher score first, ties by ascending index.
fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

fn scores(user: ArrayView1<f64>, items: &Array2<f64>) -> Vec<f64> {
    items.dot(&user).to_vec()
}

/// Every unmasked item ordered by `u . z` descending.
pub fn rank_items(user: ArrayView1<f64>, items: &Array2<f64>, mask: &HashSet<usize>) -> Result<Vec<usize>> {
    let s = scores(user, items);
    let mut ranked: Vec<usize> = (0..items.nrows()).filter(|i| !mask.contains(i)).collect();
    if ranked.is_empty() {
        return Err(Error::AllMasked);
    }
    ranked.sort_by(|&a, &b| rank_order(&s, a, b));
    Ok(ranked)
}

/// The first `k` entries of [`rank_items`] without sorting the tail.
pub fn top_k(user: ArrayView1<f64>, items: &Array2<f64>, mask: &HashSet<usize>, k: usize) -> Result<Vec<usize>> {
    let s = scores(user, items);
    let mut cand: Vec<usize> = (0..items.nrows()).filter(|i| !mask.contains(i)).collect();
    if cand.is_empty() {
        return Err(Error::AllMasked);
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k, |&a, &b| rank_order(&s, a, b));
        cand.truncate(k);
    }
    cand.sort_by(|&a, &b| rank_order(&s, a, b));
    Ok(cand)
}

fn check_relevant(relevant: &HashSet<usize>) -> Result<()> {
    if relevant.is_empty() {
        Err(Error::InvalidArgument("relevant set is empty".into()))
    } else {
        Ok(())
    }
}

pub fn recall_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<f64> {
    check_relevant(relevant)?;
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

pub fn ndcg_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<f64> {
    check_relevant(relevant)?;
    let gain = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(p, _)| gain(p))
        .sum();
    let idcg: f64 = (0..k.min(relevant.len())).map(gain).sum();
    Ok(dcg / idcg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub top: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub k: usize,
    pub per_user: Vec<UserMetrics>,
    pub recall: f64,
    pub ndcg: f64,
}

impl RankingResult {
    pub fn n_users_evaluated(&self) -> usize {
        self.per_user.len()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert(format!("recall@{}", self.k), self.recall.into());
        m.insert(format!("ndcg@{}", self.k), self.ndcg.into());
        m.insert("n_users_evaluated".into(), self.n_users_evaluated().into());
        serde_json::Value::Object(m)
    }

    pub fn write_per_user_tsv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "user\trecall@{k}\tndcg@{k}\ttop{k}", k = self.k)?;
        for m in &self.per_user {
            let top: Vec<String> = m.top.iter().map(|i| i.to_string()).collect();
            writeln!(w, "{}\t{}\t{}\t{}", m.user, m.recall, m.ndcg, top.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Metrics on `targets` with every item of every table in `masks` hidden.
/// Users without targets are skipped; the result is the unweighted mean over
/// the rest.
pub fn evaluate(
    users: &Array2<f64>,
    items: &Array2<f64>,
    masks: &[&InteractionTable],
    targets: &InteractionTable,
    k: usize,
) -> Result<RankingResult> {
    if users.ncols() != items.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "user dimension {} vs item dimension {}",
            users.ncols(),
            items.ncols()
        )));
    }
    if targets.n_users() > users.nrows() || targets.n_items() > items.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "split covers {}x{} but representations are {}x{}",
            targets.n_users(),
            targets.n_items(),
            users.nrows(),
            items.nrows()
        )));
    }
    let n_users = targets.n_users();
    let mut masked: Vec<HashSet<usize>> = vec![HashSet::new(); n_users];
    for t in masks {
        for r in t.records() {
            if r.user < n_users {
                masked[r.user].insert(r.item);
            }
        }
    }
    let mut relevant: Vec<HashSet<usize>> = vec![HashSet::new(); n_users];
    for r in targets.records() {
        relevant[r.user].insert(r.item);
    }
    let per_user: Vec<UserMetrics> = (0..n_users)
        .into_par_iter()
        .filter(|&u| !relevant[u].is_empty())
        .map(|u| {
            let top = top_k(users.row(u), items, &masked[u], k)?;
            let rel = &relevant[u];
            Ok(UserMetrics {
                user: u,
                recall: recall_at_k(&top, rel, k)?,
                ndcg: ndcg_at_k(&top, rel, k)?,
                top,
            })
        })
        .collect::<Result<_>>()?;
    if per_user.is_empty() {
        return Err(Error::NoEvaluableUsers);
    }
    let n = per_user.len() as f64;
    let recall = per_user.iter().map(|m| m.recall).sum::<f64>() / n;
    let ndcg = per_user.iter().map(|m| m.ndcg).sum::<f64>() / n;
    Ok(RankingResult {
        k,
        per_user,
        recall,
        ndcg,
    })
}
