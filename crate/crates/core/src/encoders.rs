//! Intra-modal encoders: multi-head graph attention over the frozen modality
//! graphs and rating-weighted LightGCN propagation over the interaction graph.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::Normal;

use crate::autodiff::{NeighborLists, Tape, Var};
use crate::graphs::{BipartiteGraph, CsrMatrix, SparseGraph};
use crate::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Per-head projections `W^h` (`d_in x d/H`) and attention rows `a^h`
/// (`1 x 2d/H`).
#[derive(Debug, Clone, PartialEq)]
pub struct GatParams {
    pub weights: Vec<Array2<f64>>,
    pub attention: Vec<Array2<f64>>,
    pub leaky_slope: f64,
}

impl GatParams {
    /// Uniform init in `[-1/sqrt(d_in), 1/sqrt(d_in)]` for both projections
    /// and attention rows.
    pub fn init(d_in: usize, d_out: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || d_out % heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "head count {heads} must divide output dimension {d_out}"
            )));
        }
        let dh = d_out / heads;
        let bound = 1.0 / (d_in as f64).sqrt();
        let mut uniform = |r, c| Array2::from_shape_fn((r, c), |_| rng.random_range(-bound..=bound));
        let weights = (0..heads).map(|_| uniform(d_in, dh)).collect();
        let attention = (0..heads).map(|_| uniform(1, 2 * dh)).collect();
        Ok(Self {
            weights,
            attention,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        })
    }

    pub fn heads(&self) -> usize {
        self.weights.len()
    }

    pub fn d_in(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weights.iter().map(|w| w.ncols()).sum()
    }

    pub fn on_tape(&self, tape: &mut Tape) -> GatVars {
        GatVars {
            weights: self.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
            attention: self.attention.iter().map(|a| tape.leaf(a.clone())).collect(),
            leaky_slope: self.leaky_slope,
        }
    }
}

/// Tape handles for one [`GatParams`].
#[derive(Debug, Clone)]
pub struct GatVars {
    pub weights: Vec<Var>,
    pub attention: Vec<Var>,
    pub leaky_slope: f64,
}

/// Learnable per-entity ID embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub values: Array2<f64>,
    pub learnable: bool,
}

impl EmbeddingTable {
    /// `N(0, std^2)` entries.
    pub fn init_normal(n: usize, d: usize, std: f64, rng: &mut impl Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        Self {
            values: Array2::from_shape_fn((n, d), |_| rng.sample(dist)),
            learnable: true,
        }
    }

    pub fn n_entities(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Neighbor lists of `graph` with a self-loop prepended to every node.
pub fn attention_adjacency(graph: &SparseGraph) -> NeighborLists {
    let lists: Vec<Vec<usize>> = (0..graph.n_nodes())
        .map(|i| {
            let mut l = vec![i];
            l.extend(graph.neighbors(i).0.iter().copied().filter(|&j| j != i));
            l
        })
        .collect();
    NeighborLists::from_lists(&lists)
}

/// One GAT layer on the tape: heads run `ELU(attention(X W^h))` and are
/// concatenated.
pub fn gat_forward(tape: &mut Tape, adj: &Arc<NeighborLists>, x: Var, params: &GatVars) -> Var {
    let heads: Vec<Var> = params
        .weights
        .iter()
        .zip(&params.attention)
        .map(|(&w, &a)| {
            let h = tape.matmul(x, w);
            let agg = tape.attention(h, a, adj, params.leaky_slope);
            tape.elu(agg)
        })
        .collect();
    if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)
    }
}

pub fn gat_encode(graph: &SparseGraph, features: &Array2<f64>, params: &GatParams) -> Result<Array2<f64>> {
    if features.ncols() != params.d_in() || features.nrows() != graph.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "features {:?}, graph {} nodes, GAT input dimension {}",
            features.dim(),
            graph.n_nodes(),
            params.d_in()
        )));
    }
    let adj = Arc::new(attention_adjacency(graph));
    let mut tape = Tape::new();
    let x = tape.leaf(features.clone());
    let vars = params.on_tape(&mut tape);
    let out = gat_forward(&mut tape, &adj, x, &vars);
    Ok(tape.value(out).clone())
}

/// Both orientations of the normalised interaction matrix, shared with the
/// tape.
#[derive(Debug, Clone)]
pub struct Propagation {
    user_items: Arc<CsrMatrix>,
    item_users: Arc<CsrMatrix>,
}

impl Propagation {
    pub fn new(graph: &BipartiteGraph) -> Self {
        Self {
            user_items: Arc::new(graph.user_items().clone()),
            item_users: Arc::new(graph.item_users().clone()),
        }
    }

    pub fn n_users(&self) -> usize {
        self.user_items.n_rows()
    }

    pub fn n_items(&self) -> usize {
        self.item_users.n_rows()
    }
}

/// `L` alternating propagation layers followed by the mean over layers
/// `0..=L`. Returns `(users, items)`.
pub fn lightgcn_forward(
    tape: &mut Tape,
    prop: &Propagation,
    users: Var,
    items: Var,
    layers: usize,
) -> (Var, Var) {
    let (mut eu, mut ei) = (users, items);
    let mut u_layers = vec![eu];
    let mut i_layers = vec![ei];
    for _ in 0..layers {
        let next_u = tape.spmm(&prop.user_items, &prop.item_users, ei);
        let next_i = tape.spmm(&prop.item_users, &prop.user_items, eu);
        eu = next_u;
        ei = next_i;
        u_layers.push(eu);
        i_layers.push(ei);
    }
    if layers == 0 {
        return (users, items);
    }
    let w = 1.0 / (layers + 1) as f64;
    let mean = |tape: &mut Tape, ls: &[Var]| {
        let terms: Vec<(Var, f64)> = ls.iter().map(|&v| (v, w)).collect();
        tape.lin_comb(&terms)
    };
    (mean(tape, &u_layers), mean(tape, &i_layers))
}

pub fn lightgcn_propagate(
    graph: &BipartiteGraph,
    users: &EmbeddingTable,
    items: &EmbeddingTable,
    layers: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if users.n_entities() != graph.n_users() || items.n_entities() != graph.n_items() {
        return Err(Error::DimensionMismatch(format!(
            "embedding tables {}x{} / {}x{} for a {}x{} graph",
            users.n_entities(),
            users.dim(),
            items.n_entities(),
            items.dim(),
            graph.n_users(),
            graph.n_items()
        )));
    }
    let prop = Propagation::new(graph);
    let mut tape = Tape::new();
    let eu = tape.leaf(users.values.clone());
    let ei = tape.leaf(items.values.clone());
    let (zu, zi) = lightgcn_forward(&mut tape, &prop, eu, ei, layers);
    Ok((tape.value(zu).clone(), tape.value(zi).clone()))
}
