//! Frozen KNN modality graphs, the user-user graph and the normalised
//! user-item bipartite graph.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{FeatureMatrix, InteractionTable};
use crate::{Error, Result};

/// Compressed sparse rows with real weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; each row is sorted by column.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let n_rows = rows.len();
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                debug_assert!(c < n_cols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).ok().map(|k| vals[k])
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n_cols];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                rows[c].push((r, v));
            }
        }
        Self::from_rows(self.n_rows, rows)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[[r, c]] = v;
            }
        }
        out
    }

    /// `self * x` for dense `x` with `n_cols` rows.
    pub fn matmul_dense(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n_cols);
        let mut out = Array2::zeros((self.n_rows, x.ncols()));
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let mut acc = out.row_mut(r);
            for (&c, &v) in cols.iter().zip(vals) {
                acc.scaled_add(v, &x.row(c));
            }
        }
        out
    }
}

/// Directed weighted graph; neighbor lists are sorted by node index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    adjacency: CsrMatrix,
    zero_norm_nodes: usize,
}

impl SparseGraph {
    pub fn from_neighbors(n_nodes: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if rows.len() != n_nodes {
            return Err(Error::DimensionMismatch(format!(
                "{} neighbor lists for {n_nodes} nodes",
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            let mut seen = std::collections::HashSet::new();
            for &(j, w) in row {
                if j >= n_nodes || !seen.insert(j) || !w.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "bad edge {i} -> {j} (weight {w})"
                    )));
                }
            }
        }
        Ok(Self {
            adjacency: CsrMatrix::from_rows(n_nodes, rows),
            zero_norm_nodes: 0,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.n_rows()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz()
    }

    pub fn neighbors(&self, i: usize) -> (&[usize], &[f64]) {
        self.adjacency.row(i)
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.adjacency.row(i).0.len()
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    /// Number of zero-norm feature rows seen while building a KNN graph.
    pub fn zero_norm_nodes(&self) -> usize {
        self.zero_norm_nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_nodes()).flat_map(move |i| {
            let (js, ws) = self.neighbors(i);
            js.iter().zip(ws).map(move |(&j, &w)| (i, j, w))
        })
    }

    /// `src<TAB>dst<TAB>weight` per edge.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for (i, j, w) in self.edges() {
            writeln!(out, "{i}\t{j}\t{w}").unwrap();
        }
        fs::write(path, out)?;
        Ok(())
    }
}

fn norm(a: &[f32]) -> f64 {
    a.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Cosine similarity with 64-bit accumulation; zero-norm inputs give 0.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Exact top-K cosine neighbors per row (excluding self). Ties are broken
/// towards the smaller index; edge weight is the similarity.
pub fn build_knn_graph(features: &FeatureMatrix, k: usize) -> Result<SparseGraph> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "KNN requires 1 <= K < rows, got K = {k} with {n} rows"
        )));
    }
    let norms: Vec<f64> = (0..n).map(|i| norm(features.row(i))).collect();
    let zero_norm_nodes = norms.iter().filter(|&&v| v == 0.0).count();
    if zero_norm_nodes > 0 {
        warn!("{zero_norm_nodes} zero-norm feature rows; their similarities are set to 0");
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = features.row(i);
            let mut cand: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                        0.0
                    } else {
                        (dot(xi, features.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                    };
                    (j, s)
                })
                .collect();
            let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
            cand.select_nth_unstable_by(k - 1, order);
            cand.truncate(k);
            cand
        })
        .collect();
    let mut g = SparseGraph::from_neighbors(n, rows)?;
    g.zero_norm_nodes = zero_norm_nodes;
    Ok(g)
}

/// Same contract as [`build_knn_graph`], applied to user text features.
pub fn build_user_user_graph(user_text: &FeatureMatrix, k: usize) -> Result<SparseGraph> {
    build_knn_graph(user_text, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingMode {
    /// Ratings enter the edge weight unchanged.
    #[default]
    Raw,
    /// Ratings are min-max scaled to `[0, 1]` over the table (constant
    /// ratings map to 1).
    MinMax,
}

/// User-item graph with weights `r_ui / sqrt(|N_u| |N_i|)`, stored from both
/// sides.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    user_items: CsrMatrix,
    item_users: CsrMatrix,
}

impl BipartiteGraph {
    pub fn n_users(&self) -> usize {
        self.user_items.n_rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_users.n_rows()
    }

    /// Rows are users, columns items.
    pub fn user_items(&self) -> &CsrMatrix {
        &self.user_items
    }

    /// Rows are items, columns users.
    pub fn item_users(&self) -> &CsrMatrix {
        &self.item_users
    }

    pub fn weight(&self, user: usize, item: usize) -> Option<f64> {
        self.user_items.get(user, item)
    }
}

pub fn build_interaction_graph(train: &InteractionTable, mode: RatingMode) -> BipartiteGraph {
    let udeg = train.user_degrees();
    let ideg = train.item_degrees();
    let (lo, hi) = train
        .records()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.rating), hi.max(r.rating))
        });
    let scale = |r: f64| match mode {
        RatingMode::Raw => r,
        RatingMode::MinMax if hi > lo => (r - lo) / (hi - lo),
        RatingMode::MinMax => 1.0,
    };
    let mut rows = vec![Vec::new(); train.n_users()];
    for r in train.records() {
        let w = scale(r.rating) / ((udeg[r.user] as f64) * (ideg[r.item] as f64)).sqrt();
        rows[r.user].push((r.item, w));
    }
    let user_items = CsrMatrix::from_rows(train.n_items(), rows);
    let item_users = user_items.transpose();
    BipartiteGraph {
        user_items,
        item_users,
    }
}
