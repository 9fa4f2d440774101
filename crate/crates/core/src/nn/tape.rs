//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! replays it in reverse and accumulates gradients. Vectors are stored as
//! `(n, 1)` matrices so a single value type covers the whole model.
//!
//! The op set is deliberately small: just what the encoders, readouts and
//! losses need. Each op's gradient is exercised against central finite
//! differences in the tests below.

use ndarray::{s, Array2, Axis};

/// Handle to a node on the tape.
pub type Var = usize;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `(r, c) + (r, 1)`, the column vector broadcast over columns.
    AddColVec(Var, Var),
    /// `(r, c) + (c, 1)^T`, the vector broadcast over rows.
    AddRowVec(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    /// Clamp into `[lo, hi]`; gradient is zero where the clamp is active.
    Clamp(Var, f64, f64),
    /// Select rows of a table; used for embedding lookup.
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    /// Mean of the selected rows of an `(n, d)` matrix, returned as `(d, 1)`.
    RowMeanT(Var, Vec<usize>),
    /// `out[i, j] = a[i, 0] + b[j, 0]` for `(n, 1)` and `(m, 1)` inputs.
    OuterSum(Var, Var),
    /// Row-wise softmax restricted to an explicit support per row.
    /// Entries off the support are exactly zero.
    MaskedSoftmaxRows(Var, Vec<Vec<usize>>),
    /// Softmax over a single `(n, 1)` column.
    SoftmaxCol(Var),
    /// Elementwise multiply by a constant matrix (dropout masks).
    MulConst(Var, Array2<f64>),
    /// Add a constant matrix (log-probability attention bias). The constant
    /// is folded into the value at construction; backward passes through.
    AddConst(Var),
    /// Binary cross entropy against a constant `(n, 1)` target.
    Bce(Var, Array2<f64>),
    /// `(1/denom) * sum over (pos, neg) pairs of max(0, 1 - (p_i - p_j))`.
    PairwiseHinge(Var, Vec<usize>, Vec<usize>, f64),
    /// `x^T A x` for a constant square matrix `A`.
    QuadForm(Var, Array2<f64>),
    /// Sum of all entries, returned as `(1, 1)`.
    SumAll(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` did not influence the root.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v].value
    }

    /// Scalar value of a `(1, 1)` node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v].value.dim(), (1, 1));
        self.nodes[v].value[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Constant zero matrix; a plain leaf, named for readability at call sites.
    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(Array2::zeros((rows, cols)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.nodes[a].value.dim(), self.nodes[b].value.dim());
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.nodes[a].value.dim(), self.nodes[b].value.dim());
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.nodes[a].value.dim(), self.nodes[b].value.dim());
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = &self.nodes[a].value * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_col_vec(&mut self, a: Var, b: Var) -> Var {
        let (r, _c) = self.nodes[a].value.dim();
        debug_assert_eq!(self.nodes[b].value.dim(), (r, 1));
        let mut v = self.nodes[a].value.clone();
        let col = self.nodes[b].value.column(0).to_owned();
        for mut vc in v.columns_mut() {
            vc += &col;
        }
        self.push(v, Op::AddColVec(a, b))
    }

    pub fn add_row_vec(&mut self, a: Var, b: Var) -> Var {
        let (_r, c) = self.nodes[a].value.dim();
        debug_assert_eq!(self.nodes[b].value.dim(), (c, 1));
        let mut v = self.nodes[a].value.clone();
        let row = self.nodes[b].value.column(0).to_owned();
        for mut vr in v.rows_mut() {
            vr += &row;
        }
        self.push(v, Op::AddRowVec(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.nodes[a].value.ncols(), self.nodes[b].value.nrows());
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a].value.t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a].value.mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.nodes[a].value.mapv(|x| if x >= 0.0 { x } else { slope * x });
        self.push(v, Op::LeakyRelu(a, slope))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.nodes[a].value.mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    pub fn gather_rows(&mut self, table: Var, rows: Vec<usize>) -> Var {
        let t = &self.nodes[table].value;
        let mut v = Array2::zeros((rows.len(), t.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            v.row_mut(i).assign(&t.row(r));
        }
        self.push(v, Op::GatherRows(table, rows))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        debug_assert!(!parts.is_empty());
        let cols = self.nodes[parts[0]].value.ncols();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.nrows()).sum();
        let mut v = Array2::zeros((total, cols));
        let mut at = 0;
        for &p in parts {
            let pv = &self.nodes[p].value;
            v.slice_mut(s![at..at + pv.nrows(), ..]).assign(pv);
            at += pv.nrows();
        }
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        debug_assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.nrows();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.ncols()).sum();
        let mut v = Array2::zeros((rows, total));
        let mut at = 0;
        for &p in parts {
            let pv = &self.nodes[p].value;
            v.slice_mut(s![.., at..at + pv.ncols()]).assign(pv);
            at += pv.ncols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn row_mean_t(&mut self, a: Var, rows: Vec<usize>) -> Var {
        debug_assert!(!rows.is_empty());
        let m = &self.nodes[a].value;
        let mut v = Array2::zeros((m.ncols(), 1));
        for &r in &rows {
            for c in 0..m.ncols() {
                v[(c, 0)] += m[(r, c)];
            }
        }
        v /= rows.len() as f64;
        self.push(v, Op::RowMeanT(a, rows))
    }

    pub fn outer_sum(&mut self, a: Var, b: Var) -> Var {
        let n = self.nodes[a].value.nrows();
        let m = self.nodes[b].value.nrows();
        debug_assert_eq!(self.nodes[a].value.ncols(), 1);
        debug_assert_eq!(self.nodes[b].value.ncols(), 1);
        let mut v = Array2::zeros((n, m));
        for i in 0..n {
            for j in 0..m {
                v[(i, j)] = self.nodes[a].value[(i, 0)] + self.nodes[b].value[(j, 0)];
            }
        }
        self.push(v, Op::OuterSum(a, b))
    }

    pub fn masked_softmax_rows(&mut self, a: Var, supports: Vec<Vec<usize>>) -> Var {
        let m = &self.nodes[a].value;
        debug_assert_eq!(m.nrows(), supports.len());
        let mut v = Array2::zeros(m.dim());
        for (i, sup) in supports.iter().enumerate() {
            if sup.is_empty() {
                continue;
            }
            let max = sup.iter().map(|&j| m[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for &j in sup {
                let e = (m[(i, j)] - max).exp();
                v[(i, j)] = e;
                total += e;
            }
            for &j in sup {
                v[(i, j)] /= total;
            }
        }
        self.push(v, Op::MaskedSoftmaxRows(a, supports))
    }

    pub fn softmax_col(&mut self, a: Var) -> Var {
        let m = &self.nodes[a].value;
        debug_assert_eq!(m.ncols(), 1);
        let max = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex = m.mapv(|x| (x - max).exp());
        let total = ex.sum();
        self.push(ex / total, Op::SoftmaxCol(a))
    }

    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        debug_assert_eq!(self.nodes[a].value.dim(), c.dim());
        let v = &self.nodes[a].value * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        debug_assert_eq!(self.nodes[a].value.dim(), c.dim());
        let v = &self.nodes[a].value + &c;
        self.push(v, Op::AddConst(a))
    }

    /// `-sum_k [y ln p + (1-y) ln(1-p)]`; callers clamp `p` away from {0, 1}.
    pub fn bce(&mut self, probs: Var, truth: Array2<f64>) -> Var {
        let p = &self.nodes[probs].value;
        debug_assert_eq!(p.dim(), truth.dim());
        let mut loss = 0.0;
        for (pk, yk) in p.iter().zip(truth.iter()) {
            loss -= yk * pk.ln() + (1.0 - yk) * (1.0 - pk).ln();
        }
        let v = Array2::from_elem((1, 1), loss);
        self.push(v, Op::Bce(probs, truth))
    }

    pub fn pairwise_hinge(&mut self, probs: Var, pos: Vec<usize>, neg: Vec<usize>, denom: f64) -> Var {
        let p = &self.nodes[probs].value;
        let mut loss = 0.0;
        for &i in &pos {
            for &j in &neg {
                loss += (1.0 - (p[(i, 0)] - p[(j, 0)])).max(0.0);
            }
        }
        let v = Array2::from_elem((1, 1), loss / denom);
        self.push(v, Op::PairwiseHinge(probs, pos, neg, denom))
    }

    pub fn quad_form(&mut self, x: Var, a: Array2<f64>) -> Var {
        let xv = &self.nodes[x].value;
        debug_assert_eq!(xv.ncols(), 1);
        debug_assert_eq!(a.dim(), (xv.nrows(), xv.nrows()));
        let ax = a.dot(xv);
        let mut total = 0.0;
        for i in 0..xv.nrows() {
            total += xv[(i, 0)] * ax[(i, 0)];
        }
        self.push(Array2::from_elem((1, 1), total), Op::QuadForm(x, a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(v, Op::SumAll(a))
    }

    /// Backpropagate from a scalar `(1, 1)` root.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(Array2::ones(self.nodes[root].value.dim()));

        for idx in (0..=root).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let add_to = |grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>| {
            match &mut grads[v] {
                Some(acc) => *acc += &delta,
                slot => *slot = Some(delta),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                add_to(grads, *a, g * &self.nodes[*b].value);
                add_to(grads, *b, g * &self.nodes[*a].value);
            }
            Op::Scale(a, c) => add_to(grads, *a, g * *c),
            Op::AddColVec(a, b) => {
                add_to(grads, *a, g.clone());
                let col = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                add_to(grads, *b, col);
            }
            Op::AddRowVec(a, b) => {
                add_to(grads, *a, g.clone());
                let row = g.sum_axis(Axis(0)).insert_axis(Axis(1));
                add_to(grads, *b, row);
            }
            Op::MatMul(a, b) => {
                add_to(grads, *a, g.dot(&self.nodes[*b].value.t()));
                add_to(grads, *b, self.nodes[*a].value.t().dot(g));
            }
            Op::Transpose(a) => add_to(grads, *a, g.t().to_owned()),
            Op::Sigmoid(a) => {
                let v = &self.nodes[idx].value;
                add_to(grads, *a, g * &(v * &(1.0 - v)));
            }
            Op::Tanh(a) => {
                let v = &self.nodes[idx].value;
                add_to(grads, *a, g * &v.mapv(|t| 1.0 - t * t));
            }
            Op::LeakyRelu(a, slope) => {
                let x = &self.nodes[*a].value;
                let d = x.mapv(|x| if x >= 0.0 { 1.0 } else { *slope });
                add_to(grads, *a, g * &d);
            }
            Op::Clamp(a, lo, hi) => {
                let x = &self.nodes[*a].value;
                let mut d = g.clone();
                for (dk, xk) in d.iter_mut().zip(x.iter()) {
                    if *xk < *lo || *xk > *hi {
                        *dk = 0.0;
                    }
                }
                add_to(grads, *a, d);
            }
            Op::GatherRows(table, rows) => {
                let tdim = self.nodes[*table].value.dim();
                let mut gt = Array2::zeros(tdim);
                for (i, &r) in rows.iter().enumerate() {
                    let mut target = gt.row_mut(r);
                    target += &g.row(i);
                }
                add_to(grads, *table, gt);
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for &p in parts {
                    let n = self.nodes[p].value.nrows();
                    add_to(grads, p, g.slice(s![at..at + n, ..]).to_owned());
                    at += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let n = self.nodes[p].value.ncols();
                    add_to(grads, p, g.slice(s![.., at..at + n]).to_owned());
                    at += n;
                }
            }
            Op::RowMeanT(a, rows) => {
                let dim = self.nodes[*a].value.dim();
                let mut ga = Array2::zeros(dim);
                let scale = 1.0 / rows.len() as f64;
                for &r in rows {
                    for c in 0..dim.1 {
                        ga[(r, c)] += g[(c, 0)] * scale;
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::OuterSum(a, b) => {
                add_to(grads, *a, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                add_to(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(1)));
            }
            Op::MaskedSoftmaxRows(a, supports) => {
                let y = &self.nodes[idx].value;
                let mut ga = Array2::zeros(y.dim());
                for (i, sup) in supports.iter().enumerate() {
                    let dot: f64 = sup.iter().map(|&j| g[(i, j)] * y[(i, j)]).sum();
                    for &j in sup {
                        ga[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                add_to(grads, *a, ga);
            }
            Op::SoftmaxCol(a) => {
                let y = &self.nodes[idx].value;
                let dot: f64 = y.iter().zip(g.iter()).map(|(yk, gk)| yk * gk).sum();
                add_to(grads, *a, y * &(g - dot));
            }
            Op::MulConst(a, c) => add_to(grads, *a, g * c),
            Op::AddConst(a) => add_to(grads, *a, g.clone()),
            Op::Bce(probs, truth) => {
                let p = &self.nodes[*probs].value;
                let s = g[(0, 0)];
                let mut gp = Array2::zeros(p.dim());
                for ((gpk, pk), yk) in gp.iter_mut().zip(p.iter()).zip(truth.iter()) {
                    *gpk = s * (-(yk / pk) + (1.0 - yk) / (1.0 - pk));
                }
                add_to(grads, *probs, gp);
            }
            Op::PairwiseHinge(probs, pos, neg, denom) => {
                let p = &self.nodes[*probs].value;
                let s = g[(0, 0)] / denom;
                let mut gp = Array2::zeros(p.dim());
                for &i in pos {
                    for &j in neg {
                        if 1.0 - (p[(i, 0)] - p[(j, 0)]) > 0.0 {
                            gp[(i, 0)] -= s;
                            gp[(j, 0)] += s;
                        }
                    }
                }
                add_to(grads, *probs, gp);
            }
            Op::QuadForm(x, a) => {
                let xv = &self.nodes[*x].value;
                let s = g[(0, 0)];
                let gx = (a.dot(xv) + a.t().dot(xv)) * s;
                add_to(grads, *x, gx);
            }
            Op::SumAll(a) => {
                let dim = self.nodes[*a].value.dim();
                add_to(grads, *a, Array2::from_elem(dim, g[(0, 0)]));
            }
        }
    }
}
