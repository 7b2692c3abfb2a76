//! Matrix-level reverse-mode automatic differentiation.
//!
//! Every value on the [`Tape`] is a dense `f64` matrix (scalars are `1x1`).
//! Operations record enough state during the forward pass to run their
//! adjoint in [`Tape::backward`]. The operation set is exactly what the
//! encoders and losses need: dense and sparse products, multi-head attention
//! aggregation, ELU, row normalisation, InfoNCE cross-entropy, the feature-wise
//! L1 cost, BPR and squared norms.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::graphs::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Per-node neighbor lists used by attention aggregation. Unlike
/// [`CsrMatrix`] there are no weights: the weights are the attention.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLists {
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl NeighborLists {
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut indptr = vec![0];
        let mut indices = Vec::new();
        for l in lists {
            indices.extend_from_slice(l);
            indptr.push(indices.len());
        }
        Self { indptr, indices }
    }

    pub fn n_nodes(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    fn span(&self, i: usize) -> std::ops::Range<usize> {
        self.indptr[i]..self.indptr[i + 1]
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    LinComb(Vec<(Var, f64)>),
    Transpose(Var),
    SpMM {
        at: Arc<CsrMatrix>,
        x: Var,
    },
    Attention {
        h: Var,
        a: Var,
        adj: Arc<NeighborLists>,
        slope: f64,
        alpha: Vec<f64>,
        pre: Vec<f64>,
    },
    Elu(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    NormalizeRows(Var, Vec<f64>),
    SoftmaxXentDiag(Var, Array2<f64>),
    L1Cost {
        zm: Var,
        zid: Var,
        scale: f64,
    },
    FrobConst(Var, Array2<f64>),
    Bpr {
        u: Var,
        pos: Var,
        neg: Var,
        sig_neg: Vec<f64>,
    },
    SumSquares(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints indexed by [`Var`]; `None` where no gradient flowed.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros of the right shape if none flowed.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "not a scalar");
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    /// `sum_k w_k * x_k` over equally shaped terms.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty());
        let mut v = Array2::zeros(self.shape(terms[0].0));
        for &(x, w) in terms {
            v.scaled_add(w, self.value(x));
        }
        self.push(v, Op::LinComb(terms.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    /// Sparse-dense product `a * x`; `at` must be the transpose of `a`.
    pub fn spmm(&mut self, a: &Arc<CsrMatrix>, at: &Arc<CsrMatrix>, x: Var) -> Var {
        let v = a.matmul_dense(self.value(x));
        self.push(v, Op::SpMM { at: at.clone(), x })
    }

    /// One attention head: for every node `i`,
    /// `out_i = sum_j alpha_ij h_j` with
    /// `alpha_i. = softmax_j LeakyReLU(a[..dh] . h_i + a[dh..] . h_j)` over
    /// `adj.neighbors(i)`. `a` is a `1 x 2dh` row.
    pub fn attention(&mut self, h: Var, a: Var, adj: &Arc<NeighborLists>, slope: f64) -> Var {
        let hv = self.value(h);
        let av = self.value(a);
        let (n, dh) = hv.dim();
        assert_eq!(av.dim(), (1, 2 * dh), "attention vector shape");
        assert_eq!(adj.n_nodes(), n, "adjacency size");
        let a1 = av.slice(s![0, ..dh]);
        let a2 = av.slice(s![0, dh..]);
        let src: Vec<f64> = hv.rows().into_iter().map(|r| r.dot(&a1)).collect();
        let dst: Vec<f64> = hv.rows().into_iter().map(|r| r.dot(&a2)).collect();
        let mut alpha = vec![0.0; adj.indices.len()];
        let mut pre = vec![0.0; adj.indices.len()];
        let mut out = Array2::zeros((n, dh));
        for i in 0..n {
            let span = adj.span(i);
            let mut max = f64::NEG_INFINITY;
            for k in span.clone() {
                let p = src[i] + dst[adj.indices[k]];
                pre[k] = p;
                let e = if p > 0.0 { p } else { slope * p };
                alpha[k] = e;
                max = max.max(e);
            }
            let mut z = 0.0;
            for k in span.clone() {
                alpha[k] = (alpha[k] - max).exp();
                z += alpha[k];
            }
            let mut row = out.row_mut(i);
            for k in span {
                alpha[k] /= z;
                row.scaled_add(alpha[k], &hv.row(adj.indices[k]));
            }
        }
        self.push(
            out,
            Op::Attention {
                h,
                a,
                adj: adj.clone(),
                slope,
                alpha,
                pre,
            },
        )
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(v, Op::Elu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), rows);
        self.push(v, Op::GatherRows(a, rows.to_vec()))
    }

    /// L2-normalises every row; all-zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let mut v = x.clone();
        for (mut row, &n) in v.rows_mut().into_iter().zip(&norms) {
            if n > 0.0 {
                row /= n;
            }
        }
        self.push(v, Op::NormalizeRows(a, norms))
    }

    /// `mean_i (logsumexp_j l_ij - l_ii)` for a square logits matrix.
    pub fn softmax_xent_diag(&mut self, logits: Var) -> Var {
        let l = self.value(logits);
        let b = l.nrows();
        assert_eq!(l.ncols(), b, "logits must be square");
        let mut probs = Array2::zeros((b, b));
        let mut loss = 0.0;
        for i in 0..b {
            let row = l.row(i);
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let z: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            loss += max + z.ln() - row[i];
            for j in 0..b {
                probs[[i, j]] = (row[j] - max).exp() / z;
            }
        }
        self.push(scalar(loss / b as f64), Op::SoftmaxXentDiag(logits, probs))
    }

    /// `C_ij = scale / B * sum_b |zm[b, i] - zid[b, j]|`.
    pub fn l1_cost(&mut self, zm: Var, zid: Var, scale: f64) -> Var {
        let v = l1_cost_value(self.value(zm), self.value(zid), scale);
        self.push(v, Op::L1Cost { zm, zid, scale })
    }

    /// Frobenius product with a constant matrix.
    pub fn frobenius_const(&mut self, a: Var, m: Array2<f64>) -> Var {
        assert_eq!(self.shape(a), m.dim());
        let v = (self.value(a) * &m).sum();
        self.push(scalar(v), Op::FrobConst(a, m))
    }

    /// `mean_b -ln sigmoid(u_b . (pos_b - neg_b))`.
    pub fn bpr(&mut self, u: Var, pos: Var, neg: Var) -> Var {
        let (uv, pv, nv) = (self.value(u), self.value(pos), self.value(neg));
        let b = uv.nrows();
        let mut sig_neg = Vec::with_capacity(b);
        let mut loss = 0.0;
        for k in 0..b {
            let x = uv.row(k).dot(&(&pv.row(k) - &nv.row(k)));
            loss += softplus(-x);
            sig_neg.push(sigmoid(-x));
        }
        self.push(
            scalar(loss / b.max(1) as f64),
            Op::Bpr { u, pos, neg, sig_neg },
        )
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.iter().map(|v| v * v).sum();
        self.push(scalar(v), Op::SumSquares(a))
    }

    /// Reverse sweep from the scalar `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(scalar(1.0));
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.adjoint(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn adjoint(&self, node: &Node, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut acc = |v: Var, d: Array2<f64>| match &mut grads[v.0] {
            Some(x) => *x += &d,
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.dot(&self.value(*b).t()));
                acc(*b, self.value(*a).t().dot(g));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Scale(a, k) => acc(*a, g * *k),
            Op::LinComb(terms) => {
                for &(x, w) in terms {
                    acc(x, g * w);
                }
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::SpMM { at, x } => acc(*x, at.matmul_dense(g)),
            Op::Attention {
                h,
                a,
                adj,
                slope,
                alpha,
                pre,
            } => {
                let hv = self.value(*h);
                let av = self.value(*a);
                let (n, dh) = hv.dim();
                let a1 = av.slice(s![0, ..dh]).to_owned();
                let a2 = av.slice(s![0, dh..]).to_owned();
                let mut dh_ = Array2::<f64>::zeros((n, dh));
                let mut da = Array2::<f64>::zeros((1, 2 * dh));
                let mut dalpha = Vec::new();
                for i in 0..n {
                    let span = adj.span(i);
                    let gi = g.row(i);
                    dalpha.clear();
                    dalpha.extend(span.clone().map(|k| gi.dot(&hv.row(adj.indices[k]))));
                    let mean: f64 = span
                        .clone()
                        .zip(&dalpha)
                        .map(|(k, d)| alpha[k] * d)
                        .sum();
                    for (k, d) in span.zip(&dalpha) {
                        let j = adj.indices[k];
                        dh_.row_mut(j).scaled_add(alpha[k], &gi);
                        let de = alpha[k] * (d - mean);
                        let ds = if pre[k] > 0.0 { de } else { slope * de };
                        if ds != 0.0 {
                            da.slice_mut(s![0, ..dh]).scaled_add(ds, &hv.row(i));
                            da.slice_mut(s![0, dh..]).scaled_add(ds, &hv.row(j));
                            dh_.row_mut(i).scaled_add(ds, &a1);
                            dh_.row_mut(j).scaled_add(ds, &a2);
                        }
                    }
                }
                acc(*h, dh_);
                acc(*a, da);
            }
            Op::Elu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d *= x.exp();
                        }
                    });
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::GatherRows(a, rows) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(k);
                }
                acc(*a, d);
            }
            Op::NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut d = Array2::zeros(y.dim());
                for i in 0..y.nrows() {
                    if norms[i] > 0.0 {
                        let (yi, gi) = (y.row(i), g.row(i));
                        let proj = yi.dot(&gi);
                        let mut row = d.row_mut(i);
                        row.assign(&gi);
                        row.scaled_add(-proj, &yi);
                        row /= norms[i];
                    }
                }
                acc(*a, d);
            }
            Op::SoftmaxXentDiag(l, probs) => {
                let b = probs.nrows();
                let mut d = probs.clone();
                for i in 0..b {
                    d[[i, i]] -= 1.0;
                }
                d *= g[[0, 0]] / b as f64;
                acc(*l, d);
            }
            Op::L1Cost { zm, zid, scale } => {
                let (m, id) = (self.value(*zm), self.value(*zid));
                let (b, d) = m.dim();
                let k = scale / b as f64;
                let mut dm = Array2::zeros((b, d));
                let mut did = Array2::zeros((b, d));
                for r in 0..b {
                    for i in 0..d {
                        let x = m[[r, i]];
                        let mut acc_i = 0.0;
                        for j in 0..d {
                            let diff = x - id[[r, j]];
                            let sg = if diff > 0.0 {
                                1.0
                            } else if diff < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            let w = k * g[[i, j]] * sg;
                            acc_i += w;
                            did[[r, j]] -= w;
                        }
                        dm[[r, i]] = acc_i;
                    }
                }
                acc(*zm, dm);
                acc(*zid, did);
            }
            Op::FrobConst(a, m) => acc(*a, m * g[[0, 0]]),
            Op::Bpr {
                u,
                pos,
                neg,
                sig_neg,
            } => {
                let (uv, pv, nv) = (self.value(*u), self.value(*pos), self.value(*neg));
                let b = uv.nrows();
                let (mut du, mut dp, mut dn) = (
                    Array2::zeros(uv.dim()),
                    Array2::zeros(pv.dim()),
                    Array2::zeros(nv.dim()),
                );
                for k in 0..b {
                    let dx = -sig_neg[k] * g[[0, 0]] / b as f64;
                    du.row_mut(k).assign(&((&pv.row(k) - &nv.row(k)) * dx));
                    dp.row_mut(k).assign(&(&uv.row(k) * dx));
                    dn.row_mut(k).assign(&(&uv.row(k) * -dx));
                }
                acc(*u, du);
                acc(*pos, dp);
                acc(*neg, dn);
            }
            Op::SumSquares(a) => acc(*a, self.value(*a) * (2.0 * g[[0, 0]])),
        }
    }
}

/// Value of [`Tape::l1_cost`] without recording.
pub fn l1_cost_value(zm: &Array2<f64>, zid: &Array2<f64>, scale: f64) -> Array2<f64> {
    assert_eq!(zm.dim(), zid.dim(), "cost inputs must share a shape");
    let (b, d) = zm.dim();
    let mut c = Array2::zeros((d, d));
    for r in 0..b {
        let (m, id) = (zm.row(r), zid.row(r));
        for i in 0..d {
            let x = m[i];
            let mut row = c.row_mut(i);
            for j in 0..d {
                row[j] += (x - id[j]).abs();
            }
        }
    }
    c * (scale / b.max(1) as f64)
}
