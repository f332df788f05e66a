//! Reverse-mode autodiff over 2-D tensors.
//!
//! Every op appends a node holding its forward value; `backward` walks the
//! nodes once in reverse insertion order, which is a reverse topological
//! order because inputs always precede their consumers.

use std::sync::Arc;

use super::tensor::{gemm, Float, Tensor};
use super::NnError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Edge structure shared by every graph in a batch: `n` nodes and an
/// `n x n` color table where `sentinel` marks an absent edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub n: usize,
    pub colors: Vec<u32>,
    pub sentinel: u32,
}

impl Graph {
    pub fn color(&self, i: usize, j: usize) -> Option<usize> {
        let c = self.colors[i * self.n + j];
        (c != self.sentinel).then_some(c as usize)
    }
}

/// Negative slope inside attention scores.
pub const ATTENTION_SLOPE: f64 = 0.2;
pub const LAYER_NORM_EPS: f64 = 1e-5;

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddBias(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sum(usize),
    Gather {
        table: usize,
        idx: Vec<u32>,
    },
    LeakyRelu {
        x: usize,
        slope: T,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Attention {
        xl: usize,
        xr: usize,
        p: usize,
        att: usize,
        heads: usize,
        graph: Arc<Graph>,
        alpha: Vec<T>,
    },
    EdgeReluMean {
        xl: usize,
        xr: usize,
        p: usize,
        graph: Arc<Graph>,
    },
    MeanPool {
        x: usize,
        group: usize,
    },
    CrossEntropy {
        logits: usize,
        bits: Vec<u8>,
    },
    L1 {
        pred: usize,
        target: Vec<T>,
        scale: T,
    },
    Bce {
        logits: usize,
        target: Vec<T>,
    },
    Dropout {
        x: usize,
        mask: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    param: Option<usize>,
}

/// Recorded computation. Build a fresh tape (or [`Tape::reset`]) for every
/// forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients for the parameter leaves of a tape, keyed by parameter id.
#[derive(Debug, Clone)]
pub struct ParamGrads<T> {
    pub grads: Vec<(usize, Tensor<T>)>,
}

impl<T: Float> ParamGrads<T> {
    pub fn get(&self, pid: usize) -> Option<&Tensor<T>> {
        self.grads.iter().find(|(p, _)| *p == pid).map(|(_, g)| g)
    }
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn check(&self, cond: bool, msg: impl FnOnce() -> String) -> Result<(), NnError> {
        if cond {
            Ok(())
        } else {
            Err(NnError::Shape(msg()))
        }
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// A leaf whose gradient is reported under parameter id `pid`.
    pub fn param(&mut self, pid: usize, t: &Tensor<T>) -> Var {
        let v = self.push(t.clone(), Op::Leaf);
        self.nodes[v.0].param = Some(pid);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        self.check(k == k2, || format!("matmul {m}x{k} by {k2}x{n}"))?;
        let mut out = Tensor::zeros(m, n);
        gemm(
            m,
            k,
            n,
            &self.nodes[a.0].value.data,
            false,
            &self.nodes[b.0].value.data,
            false,
            &mut out.data,
            T::zero(),
        );
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.check(self.shape(a) == self.shape(b), || {
            format!("add {:?} + {:?}", self.shape(a), self.shape(b))
        })?;
        let mut out = self.nodes[a.0].value.clone();
        for (o, y) in out.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *o += *y;
        }
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    /// Add a `1 x cols` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NnError> {
        let (_, c) = self.shape(a);
        self.check(self.shape(bias) == (1, c), || {
            format!("bias {:?} for {:?}", self.shape(bias), self.shape(a))
        })?;
        let mut out = self.nodes[a.0].value.clone();
        let b = &self.nodes[bias.0].value.data;
        for row in out.data.chunks_mut(c) {
            for (o, y) in row.iter_mut().zip(b) {
                *o += *y;
            }
        }
        Ok(self.push(out, Op::AddBias(a.0, bias.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.check(self.shape(a) == self.shape(b), || {
            format!("mul {:?} * {:?}", self.shape(a), self.shape(b))
        })?;
        let mut out = self.nodes[a.0].value.clone();
        for (o, y) in out.data.iter_mut().zip(&self.nodes[b.0].value.data) {
            *o *= *y;
        }
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let mut out = self.nodes[a.0].value.clone();
        out.data.iter_mut().for_each(|x| *x *= s);
        self.push(out, Op::Scale(a.0, s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0]
            .value
            .data
            .iter()
            .fold(T::zero(), |acc, &x| acc + x);
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    /// Rows of `table` selected by `idx`.
    pub fn gather(&mut self, table: Var, idx: &[u32]) -> Result<Var, NnError> {
        let (r, c) = self.shape(table);
        if let Some(&bad) = idx.iter().find(|&&i| i as usize >= r) {
            return Err(NnError::Index(format!("row {bad} of a {r}-row table")));
        }
        let t = &self.nodes[table.0].value;
        let mut out = Tensor::zeros(idx.len(), c);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(t.row(i as usize));
        }
        Ok(self.push(
            out,
            Op::Gather {
                table: table.0,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        out.data
            .iter_mut()
            .for_each(|v| *v = if *v > T::zero() { *v } else { *v * slope });
        self.push(out, Op::LeakyRelu { x: x.0, slope })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, T::zero())
    }

    /// Per-row normalization with learned `1 x cols` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NnError> {
        let (r, c) = self.shape(x);
        self.check(
            self.shape(gamma) == (1, c) && self.shape(beta) == (1, c),
            || format!("layer_norm params for width {c}"),
        )?;
        let eps = T::lit(LAYER_NORM_EPS);
        let cf = T::from_usize(c).unwrap();
        let xv = &self.nodes[x.0].value;
        let g = &self.nodes[gamma.0].value.data;
        let b = &self.nodes[beta.0].value.data;
        let mut out = Tensor::zeros(r, c);
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / cf;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / cf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for k in 0..c {
                let h = (row[k] - mean) * is;
                xhat[i * c + k] = h;
                out.data[i * c + k] = h * g[k] + b[k];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
        ))
    }

    /// Multi-head edge-conditioned attention over a batch of graphs that share
    /// `graph`. Rows of `xl`/`xr` are node states (`batch * n` rows), `p` holds
    /// one projected edge embedding per color and `att` concatenates the
    /// per-head score vectors.
    ///
    /// For head `h`: `u_ij = xl_j + xr_i + p_c`, `s_ij = att_h . lrelu(u_ij)`,
    /// `alpha_i = softmax_j(s_ij)` over present edges, and the output row is
    /// `sum_j alpha_ij (xl_j + p_c)`.
    pub fn attention(
        &mut self,
        xl: Var,
        xr: Var,
        p: Var,
        att: Var,
        heads: usize,
        graph: &Arc<Graph>,
    ) -> Result<Var, NnError> {
        let (rows, dim) = self.shape(xl);
        let n = graph.n;
        self.check(self.shape(xr) == (rows, dim), || "attention xr shape".into())?;
        self.check(self.shape(p).1 == dim, || "attention edge width".into())?;
        self.check(self.shape(att) == (1, dim), || "attention vector shape".into())?;
        self.check(heads > 0 && dim % heads == 0, || {
            format!("{heads} heads do not divide width {dim}")
        })?;
        self.check(n > 0 && rows % n == 0, || format!("{rows} rows for n = {n}"))?;
        let max_color = graph
            .colors
            .iter()
            .filter(|&&c| c != graph.sentinel)
            .max()
            .map_or(0, |&c| c as usize + 1);
        self.check(self.shape(p).0 >= max_color, || {
            format!("{} edge rows for {max_color} colors", self.shape(p).0)
        })?;
        let d = dim / heads;
        let slope = T::lit(ATTENTION_SLOPE);
        let (xlv, xrv, pv, av) = (
            &self.nodes[xl.0].value,
            &self.nodes[xr.0].value,
            &self.nodes[p.0].value,
            &self.nodes[att.0].value.data,
        );
        let mut out = Tensor::zeros(rows, dim);
        let mut alpha = vec![T::zero(); rows * heads * n];
        let mut scores = vec![T::zero(); n];
        for b in 0..rows / n {
            for i in 0..n {
                let ri = b * n + i;
                for h in 0..heads {
                    let sl = h * d..(h + 1) * d;
                    let xr_i = &xrv.row(ri)[sl.clone()];
                    let a_h = &av[sl.clone()];
                    let mut best = T::neg_infinity();
                    for j in 0..n {
                        let Some(c) = graph.color(i, j) else { continue };
                        let xl_j = &xlv.row(b * n + j)[sl.clone()];
                        let p_c = &pv.row(c)[sl.clone()];
                        let s = (((xl_j.iter().zip(xr_i)).zip(p_c)).zip(a_h))
                            .map(|(((l, r), e), a)| {
                                let u = *l + *r + *e;
                                *a * u.max(u * slope)
                            })
                            .fold(T::zero(), |acc, v| acc + v);
                        scores[j] = s;
                        best = best.max(s);
                    }
                    if best == T::neg_infinity() {
                        continue;
                    }
                    let al = &mut alpha[(ri * heads + h) * n..(ri * heads + h + 1) * n];
                    let mut z = T::zero();
                    for j in 0..n {
                        if graph.color(i, j).is_some() {
                            al[j] = (scores[j] - best).exp();
                            z += al[j];
                        }
                    }
                    let o = &mut out.data[ri * dim + h * d..ri * dim + (h + 1) * d];
                    for j in 0..n {
                        let Some(c) = graph.color(i, j) else { continue };
                        al[j] = al[j] / z;
                        let w = al[j];
                        let xl_j = &xlv.row(b * n + j)[sl.clone()];
                        let p_c = &pv.row(c)[sl.clone()];
                        for ((o, l), e) in o.iter_mut().zip(xl_j).zip(p_c) {
                            *o += w * (*l + *e);
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                xl: xl.0,
                xr: xr.0,
                p: p.0,
                att: att.0,
                heads,
                graph: Arc::clone(graph),
                alpha,
            },
        ))
    }

    /// Mean over present edges of `relu(xl_j + xr_i + p_c)`: a one-layer
    /// message MLP on `(x_i, x_j, e_c)` followed by mean aggregation.
    pub fn edge_relu_mean(
        &mut self,
        xl: Var,
        xr: Var,
        p: Var,
        graph: &Arc<Graph>,
    ) -> Result<Var, NnError> {
        let (rows, dim) = self.shape(xl);
        let n = graph.n;
        self.check(self.shape(xr) == (rows, dim), || "edge mlp xr shape".into())?;
        self.check(self.shape(p).1 == dim, || "edge mlp edge width".into())?;
        self.check(n > 0 && rows % n == 0, || format!("{rows} rows for n = {n}"))?;
        let (xlv, xrv, pv) = (
            &self.nodes[xl.0].value,
            &self.nodes[xr.0].value,
            &self.nodes[p.0].value,
        );
        let mut out = Tensor::zeros(rows, dim);
        for b in 0..rows / n {
            for i in 0..n {
                let ri = b * n + i;
                let deg = (0..n).filter(|&j| graph.color(i, j).is_some()).count();
                if deg == 0 {
                    continue;
                }
                let inv = T::one() / T::from_usize(deg).unwrap();
                let o = &mut out.data[ri * dim..(ri + 1) * dim];
                for j in 0..n {
                    let Some(c) = graph.color(i, j) else { continue };
                    let (xl_j, xr_i, p_c) = (xlv.row(b * n + j), xrv.row(ri), pv.row(c));
                    for k in 0..dim {
                        let u = xl_j[k] + xr_i[k] + p_c[k];
                        if u > T::zero() {
                            o[k] += u * inv;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out,
            Op::EdgeReluMean {
                xl: xl.0,
                xr: xr.0,
                p: p.0,
                graph: Arc::clone(graph),
            },
        ))
    }

    /// Average consecutive blocks of `group` rows.
    pub fn mean_pool(&mut self, x: Var, group: usize) -> Result<Var, NnError> {
        let (r, c) = self.shape(x);
        self.check(group > 0 && r % group == 0, || {
            format!("mean_pool of {r} rows in groups of {group}")
        })?;
        let inv = T::one() / T::from_usize(group).unwrap();
        let xv = &self.nodes[x.0].value;
        let mut out = Tensor::zeros(r / group, c);
        for i in 0..r {
            let o = out.row_mut(i / group);
            for (a, &v) in o.iter_mut().zip(xv.row(i)) {
                *a += v * inv;
            }
        }
        Ok(self.push(out, Op::MeanPool { x: x.0, group }))
    }

    /// Mean two-class log loss of `N x 2` logits against `N` bits.
    pub fn cross_entropy(&mut self, logits: Var, bits: &[u8]) -> Result<Var, NnError> {
        let (r, c) = self.shape(logits);
        self.check(c == 2 && r == bits.len(), || {
            format!("cross_entropy on {r}x{c} logits with {} bits", bits.len())
        })?;
        let lv = &self.nodes[logits.0].value;
        let mut total = T::zero();
        for (i, &bit) in bits.iter().enumerate() {
            let (a, b) = (lv.get(i, 0), lv.get(i, 1));
            let m = a.max(b);
            let lse = m + ((a - m).exp() + (b - m).exp()).ln();
            total += lse - if bit == 1 { b } else { a };
        }
        let loss = total / T::from_usize(r).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                bits: bits.to_vec(),
            },
        ))
    }

    /// Mean absolute error divided by `scale`.
    pub fn l1(&mut self, pred: Var, target: &[T], scale: T) -> Result<Var, NnError> {
        let (r, c) = self.shape(pred);
        self.check(r * c == target.len(), || {
            format!("l1 on {r}x{c} with {} targets", target.len())
        })?;
        let pv = &self.nodes[pred.0].value.data;
        let total = pv
            .iter()
            .zip(target)
            .fold(T::zero(), |a, (&p, &t)| a + (p - t).abs());
        let loss = total / (T::from_usize(r * c).unwrap() * scale);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::L1 {
                pred: pred.0,
                target: target.to_vec(),
                scale,
            },
        ))
    }

    /// Mean binary cross-entropy of logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, target: &[T]) -> Result<Var, NnError> {
        let (r, c) = self.shape(logits);
        self.check(r * c == target.len(), || {
            format!("bce on {r}x{c} with {} targets", target.len())
        })?;
        let lv = &self.nodes[logits.0].value.data;
        let total = lv.iter().zip(target).fold(T::zero(), |a, (&z, &t)| {
            a + z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln()
        });
        let loss = total / T::from_usize(r * c).unwrap();
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logits: logits.0,
                target: target.to_vec(),
            },
        ))
    }

    /// Multiply by a fixed mask (already scaled by `1 / keep`).
    pub fn dropout(&mut self, x: Var, mask: Vec<T>) -> Result<Var, NnError> {
        let (r, c) = self.shape(x);
        self.check(mask.len() == r * c, || "dropout mask size".into())?;
        let mut out = self.nodes[x.0].value.clone();
        out.data.iter_mut().zip(&mask).for_each(|(o, m)| *o *= *m);
        Ok(self.push(out, Op::Dropout { x: x.0, mask }))
    }

    /// Hash of which side of zero every piecewise-linear input falls on
    /// (leaky ReLU inputs, attention pre-activations, message ReLUs, L1
    /// residuals). Two passes with equal signatures took the same branches.
    pub fn kink_signature(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut feed = |bit: bool| {
            h = (h ^ bit as u64).wrapping_mul(0x100000001b3);
        };
        let nodes = &self.nodes;
        for node in nodes {
            match &node.op {
                Op::LeakyRelu { x, .. } => {
                    nodes[*x].value.data.iter().for_each(|v| feed(*v > T::zero()));
                }
                Op::Attention { xl, xr, p, graph, .. } | Op::EdgeReluMean { xl, xr, p, graph } => {
                    let (xlv, xrv, pv) = (&nodes[*xl].value, &nodes[*xr].value, &nodes[*p].value);
                    let n = graph.n;
                    for b in 0..xlv.rows / n {
                        for i in 0..n {
                            for j in 0..n {
                                let Some(c) = graph.color(i, j) else { continue };
                                let (a, r, e) = (xlv.row(b * n + j), xrv.row(b * n + i), pv.row(c));
                                for k in 0..xlv.cols {
                                    feed(a[k] + r[k] + e[k] > T::zero());
                                }
                            }
                        }
                    }
                }
                Op::L1 { pred, target, .. } => {
                    for (p, t) in nodes[*pred].value.data.iter().zip(target) {
                        feed(*p > *t);
                        feed(*p < *t);
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Reverse pass from a scalar `loss`. Returns gradients of all parameter
    /// leaves; a tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<ParamGrads<T>, NnError> {
        if self.consumed {
            return Err(NnError::BackwardTwice);
        }
        self.check(self.shape(loss) == (1, 1), || "backward from a non-scalar".into())?;
        self.consumed = true;
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        fn buf<'a, T: Float>(
            grads: &'a mut [Option<Tensor<T>>],
            nodes: &[Node<T>],
            id: usize,
        ) -> &'a mut Vec<T> {
            let (r, c) = nodes[id].value.shape();
            &mut grads[id].get_or_insert_with(|| Tensor::zeros(r, c)).data
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = nodes[*a].value.shape();
                    let n = nodes[*b].value.cols;
                    let ga = buf(&mut grads, nodes, *a);
                    gemm(m, n, k, &g.data, false, &nodes[*b].value.data, true, ga, T::one());
                    let gb = buf(&mut grads, nodes, *b);
                    gemm(k, m, n, &nodes[*a].value.data, true, &g.data, false, gb, T::one());
                }
                Op::Add(a, b) => {
                    for t in [*a, *b] {
                        let gt = buf(&mut grads, nodes, t);
                        gt.iter_mut().zip(&g.data).for_each(|(x, y)| *x += *y);
                    }
                }
                Op::AddBias(a, b) => {
                    let ga = buf(&mut grads, nodes, *a);
                    ga.iter_mut().zip(&g.data).for_each(|(x, y)| *x += *y);
                    let gb = buf(&mut grads, nodes, *b);
                    for row in g.data.chunks(g.cols) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += *y);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value.data, &nodes[*b].value.data);
                    let ga = buf(&mut grads, nodes, *a);
                    for ((x, gy), bb) in ga.iter_mut().zip(&g.data).zip(bv) {
                        *x += *gy * *bb;
                    }
                    let gb = buf(&mut grads, nodes, *b);
                    for ((x, gy), aa) in gb.iter_mut().zip(&g.data).zip(av) {
                        *x += *gy * *aa;
                    }
                }
                Op::Scale(a, s) => {
                    let ga = buf(&mut grads, nodes, *a);
                    ga.iter_mut().zip(&g.data).for_each(|(x, y)| *x += *y * *s);
                }
                Op::Sum(a) => {
                    let s = g.item();
                    buf(&mut grads, nodes, *a).iter_mut().for_each(|x| *x += s);
                }
                Op::Gather { table, idx } => {
                    let c = g.cols;
                    let gt = buf(&mut grads, nodes, *table);
                    for (k, &i) in idx.iter().enumerate() {
                        let dst = &mut gt[i as usize * c..(i as usize + 1) * c];
                        dst.iter_mut().zip(g.row(k)).for_each(|(x, y)| *x += *y);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = &nodes[*x].value.data;
                    let gx = buf(&mut grads, nodes, *x);
                    for ((d, gy), v) in gx.iter_mut().zip(&g.data).zip(xv) {
                        *d += if *v > T::zero() { *gy } else { *gy * *slope };
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (r, c) = g.shape();
                    let cf = T::from_usize(c).unwrap();
                    let gv = &nodes[*gamma].value.data;
                    {
                        let gg = buf(&mut grads, nodes, *gamma);
                        for i in 0..r {
                            for k in 0..c {
                                gg[k] += g.data[i * c + k] * xhat[i * c + k];
                            }
                        }
                    }
                    {
                        let gb = buf(&mut grads, nodes, *beta);
                        for row in g.data.chunks(c) {
                            gb.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
                        }
                    }
                    let gx = buf(&mut grads, nodes, *x);
                    let mut dh = vec![T::zero(); c];
                    for i in 0..r {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for k in 0..c {
                            dh[k] = g.data[i * c + k] * gv[k];
                            m1 += dh[k];
                            m2 += dh[k] * xhat[i * c + k];
                        }
                        m1 = m1 / cf;
                        m2 = m2 / cf;
                        for k in 0..c {
                            gx[i * c + k] += inv_std[i] * (dh[k] - m1 - xhat[i * c + k] * m2);
                        }
                    }
                }
                Op::Attention {
                    xl,
                    xr,
                    p,
                    att,
                    heads,
                    graph,
                    alpha,
                } => {
                    let (rows, dim) = g.shape();
                    let n = graph.n;
                    let d = dim / heads;
                    let slope = T::lit(ATTENTION_SLOPE);
                    let (xlv, xrv, pv, av) = (
                        &nodes[*xl].value,
                        &nodes[*xr].value,
                        &nodes[*p].value,
                        &nodes[*att].value.data,
                    );
                    let mut dxl = Tensor::zeros(rows, dim);
                    let mut dxr = Tensor::zeros(rows, dim);
                    let mut dp = Tensor::zeros(pv.rows, dim);
                    let mut da = vec![T::zero(); dim];
                    let mut dalpha = vec![T::zero(); n];
                    let mut tmp = vec![T::zero(); d];
                    for b in 0..rows / n {
                        for i in 0..n {
                            let ri = b * n + i;
                            for h in 0..*heads {
                                let off = h * d;
                                let al = &alpha[(ri * heads + h) * n..(ri * heads + h + 1) * n];
                                let go = &g.data[ri * dim + off..ri * dim + off + d];
                                let mut dot = T::zero();
                                for j in 0..n {
                                    let Some(c) = graph.color(i, j) else { continue };
                                    let xl_j = &xlv.row(b * n + j)[off..off + d];
                                    let p_c = &pv.row(c)[off..off + d];
                                    let s = go
                                        .iter()
                                        .zip(xl_j.iter().zip(p_c))
                                        .map(|(g, (l, e))| *g * (*l + *e))
                                        .fold(T::zero(), |acc, v| acc + v);
                                    dalpha[j] = s;
                                    dot += al[j] * s;
                                }
                                let xr_i = &xrv.row(ri)[off..off + d];
                                let a_h = &av[off..off + d];
                                for j in 0..n {
                                    let Some(c) = graph.color(i, j) else { continue };
                                    let rj = b * n + j;
                                    let w = al[j];
                                    let ds = w * (dalpha[j] - dot);
                                    let xl_j = &xlv.row(rj)[off..off + d];
                                    let p_c = &pv.row(c)[off..off + d];
                                    let da_h = &mut da[off..off + d];
                                    let t = &mut tmp[..d];
                                    let dxr_i = &mut dxr.data[ri * dim + off..ri * dim + off + d];
                                    for k in 0..d {
                                        let u = xl_j[k] + xr_i[k] + p_c[k];
                                        let pos = u > T::zero();
                                        let act = u.max(u * slope);
                                        let der = if pos { T::one() } else { slope };
                                        let du = ds * a_h[k] * der;
                                        t[k] = w * go[k] + du;
                                        dxr_i[k] += du;
                                        da_h[k] += ds * act;
                                    }
                                    let dxl_j = &mut dxl.data[rj * dim + off..rj * dim + off + d];
                                    dxl_j.iter_mut().zip(t.iter()).for_each(|(x, v)| *x += *v);
                                    let dp_c = &mut dp.data[c * dim + off..c * dim + off + d];
                                    dp_c.iter_mut().zip(t.iter()).for_each(|(x, v)| *x += *v);
                                }
                            }
                        }
                    }
                    for (t, src) in [(*xl, &dxl.data), (*xr, &dxr.data), (*p, &dp.data)] {
                        let gt = buf(&mut grads, nodes, t);
                        gt.iter_mut().zip(src).for_each(|(x, y)| *x += *y);
                    }
                    let ga = buf(&mut grads, nodes, *att);
                    ga.iter_mut().zip(&da).for_each(|(x, y)| *x += *y);
                }
                Op::EdgeReluMean { xl, xr, p, graph } => {
                    let (rows, dim) = g.shape();
                    let n = graph.n;
                    let (xlv, xrv, pv) = (&nodes[*xl].value, &nodes[*xr].value, &nodes[*p].value);
                    let mut dxl = Tensor::zeros(rows, dim);
                    let mut dxr = Tensor::zeros(rows, dim);
                    let mut dp = Tensor::zeros(pv.rows, dim);
                    for b in 0..rows / n {
                        for i in 0..n {
                            let ri = b * n + i;
                            let deg = (0..n).filter(|&j| graph.color(i, j).is_some()).count();
                            if deg == 0 {
                                continue;
                            }
                            let inv = T::one() / T::from_usize(deg).unwrap();
                            for j in 0..n {
                                let Some(c) = graph.color(i, j) else { continue };
                                let rj = b * n + j;
                                for k in 0..dim {
                                    let u = xlv.data[rj * dim + k]
                                        + xrv.data[ri * dim + k]
                                        + pv.data[c * dim + k];
                                    if u > T::zero() {
                                        let v = g.data[ri * dim + k] * inv;
                                        dxl.data[rj * dim + k] += v;
                                        dxr.data[ri * dim + k] += v;
                                        dp.data[c * dim + k] += v;
                                    }
                                }
                            }
                        }
                    }
                    for (t, src) in [(*xl, &dxl.data), (*xr, &dxr.data), (*p, &dp.data)] {
                        let gt = buf(&mut grads, nodes, t);
                        gt.iter_mut().zip(src).for_each(|(x, y)| *x += *y);
                    }
                }
                Op::MeanPool { x, group } => {
                    let inv = T::one() / T::from_usize(*group).unwrap();
                    let c = g.cols;
                    let gx = buf(&mut grads, nodes, *x);
                    for (i, row) in gx.chunks_mut(c).enumerate() {
                        row.iter_mut()
                            .zip(g.row(i / group))
                            .for_each(|(a, b)| *a += *b * inv);
                    }
                }
                Op::CrossEntropy { logits, bits } => {
                    let s = g.item() / T::from_usize(bits.len()).unwrap();
                    let lv = &nodes[*logits].value;
                    let gl = buf(&mut grads, nodes, *logits);
                    for (i, &bit) in bits.iter().enumerate() {
                        let (a, b) = (lv.get(i, 0), lv.get(i, 1));
                        let p1 = T::one() / (T::one() + (a - b).exp());
                        let p0 = T::one() - p1;
                        let (t0, t1) = if bit == 1 {
                            (T::zero(), T::one())
                        } else {
                            (T::one(), T::zero())
                        };
                        gl[2 * i] += s * (p0 - t0);
                        gl[2 * i + 1] += s * (p1 - t1);
                    }
                }
                Op::L1 {
                    pred,
                    target,
                    scale,
                } => {
                    let s = g.item() / (T::from_usize(target.len()).unwrap() * *scale);
                    let pv = &nodes[*pred].value.data;
                    let gp = buf(&mut grads, nodes, *pred);
                    for ((d, &p), &t) in gp.iter_mut().zip(pv).zip(target) {
                        if p > t {
                            *d += s;
                        } else if p < t {
                            *d -= s;
                        }
                    }
                }
                Op::Bce { logits, target } => {
                    let s = g.item() / T::from_usize(target.len()).unwrap();
                    let lv = &nodes[*logits].value.data;
                    let gl = buf(&mut grads, nodes, *logits);
                    for ((d, &z), &t) in gl.iter_mut().zip(lv).zip(target) {
                        let sig = T::one() / (T::one() + (-z).exp());
                        *d += s * (sig - t);
                    }
                }
                Op::Dropout { x, mask } => {
                    let gx = buf(&mut grads, nodes, *x);
                    for ((d, gy), m) in gx.iter_mut().zip(&g.data).zip(mask) {
                        *d += *gy * *m;
                    }
                }
            }
        }

        let mut out: Vec<(usize, Tensor<T>)> = Vec::new();
        for (id, node) in nodes.iter().enumerate() {
            let (Some(pid), Some(g)) = (node.param, grads[id].take()) else {
                continue;
            };
            match out.iter_mut().find(|(p, _)| *p == pid) {
                Some((_, acc)) => acc.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += *b),
                None => out.push((pid, g)),
            }
        }
        Ok(ParamGrads { grads: out })
    }

    /// Gradient of `loss` with respect to arbitrary leaves, for tests.
    pub fn backward_leaves(&mut self, loss: Var, leaves: &[Var]) -> Result<Vec<Tensor<T>>, NnError> {
        for (k, v) in leaves.iter().enumerate() {
            self.nodes[v.0].param = Some(usize::MAX - k);
        }
        let grads = self.backward(loss)?;
        Ok(leaves
            .iter()
            .enumerate()
            .map(|(k, v)| {
                grads
                    .get(usize::MAX - k)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.shape(*v).0, self.shape(*v).1))
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central differences of `f` with respect to every entry of every input.
    fn check_op(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward_leaves(out, &vars).unwrap();
        let eval = |ins: &[Tensor<f64>]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ins.iter().map(|x| t.constant(x.clone())).collect();
            let o = f(&mut t, &vs);
            t.value(o).item()
        };
        let eps = 1e-6;
        for (a, g) in grads.iter().enumerate() {
            for e in 0..inputs[a].data.len() {
                let mut plus = inputs.clone();
                plus[a].data[e] += eps;
                let mut minus = inputs.clone();
                minus[a].data[e] -= eps;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let an = g.data[e];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "input {a} entry {e}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    /// Reduce a matrix to a scalar with fixed weights so every entry matters.
    fn weighted_sum(t: &mut Tape<f64>, v: Var) -> Var {
        let (r, c) = t.value(v).shape();
        let w = Tensor::from_vec(r, c, (0..r * c).map(|k| (k as f64 * 0.37).cos()).collect());
        let w = t.constant(w);
        let m = t.mul(v, w).unwrap();
        t.sum(m)
    }

    #[test]
    fn trivial_gradients() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let s = t.sum(x);
        let g = t.backward_leaves(s, &[x]).unwrap();
        assert_eq!(g[0].data, vec![1.0; 4]);

        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::scalar(3.0));
        let y = t.constant(Tensor::scalar(-2.0));
        let p = t.mul(x, y).unwrap();
        let g = t.backward_leaves(p, &[x, y]).unwrap();
        assert_eq!(g[0].item(), -2.0);
        assert_eq!(g[1].item(), 3.0);
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::scalar(1.0));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert!(matches!(t.backward(s), Err(NnError::BackwardTwice)));
        t.reset();
        let x = t.constant(Tensor::scalar(1.0));
        let s = t.sum(x);
        assert!(t.backward(s).is_ok());
    }

    #[test]
    fn elementwise_and_matmul_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, 3, 4);
        let b = rand_tensor(&mut rng, 4, 2);
        let bias = rand_tensor(&mut rng, 1, 2);
        check_op(vec![a, b, bias], |t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            let m = t.add_bias(m, v[2]).unwrap();
            let m = t.leaky_relu(m, 0.1);
            let m = t.scale(m, 1.5);
            weighted_sum(t, m)
        });
    }

    #[test]
    fn gather_and_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let table = rand_tensor(&mut rng, 5, 3);
        check_op(vec![table], |t, v| {
            let g = t.gather(v[0], &[4, 0, 4, 2, 1, 1]).unwrap();
            let p = t.mean_pool(g, 3).unwrap();
            weighted_sum(t, p)
        });
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, 4, 6);
        let g = rand_tensor(&mut rng, 1, 6);
        let b = rand_tensor(&mut rng, 1, 6);
        check_op(vec![x, g, b], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
            weighted_sum(t, y)
        });
    }

    fn test_graph() -> Arc<Graph> {
        // 3 nodes, one absent edge (0 -> 2), colors by difference mod 3
        let mut colors: Vec<u32> = (0..9).map(|k| ((k % 3 + 3 - k / 3) % 3) as u32).collect();
        colors[2] = 3;
        Arc::new(Graph {
            n: 3,
            colors,
            sentinel: 3,
        })
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let graph = test_graph();
        let xl = rand_tensor(&mut rng, 6, 4);
        let xr = rand_tensor(&mut rng, 6, 4);
        let p = rand_tensor(&mut rng, 3, 4);
        let att = rand_tensor(&mut rng, 1, 4);
        check_op(vec![xl, xr, p, att], |t, v| {
            let y = t.attention(v[0], v[1], v[2], v[3], 2, &graph).unwrap();
            weighted_sum(t, y)
        });
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let graph = test_graph();
        let mut t = Tape::<f64>::new();
        // zero xl/p except a constant value row: output = value for every node
        let xl = t.constant(Tensor::from_vec(3, 2, vec![1.0, -2.0, 1.0, -2.0, 1.0, -2.0]));
        let xr = t.constant(Tensor::from_vec(3, 2, vec![0.3, 0.1, -0.5, 0.2, 0.9, 0.0]));
        let p = t.constant(Tensor::zeros(3, 2));
        let att = t.constant(Tensor::from_vec(1, 2, vec![0.7, -1.1]));
        let y = t.attention(xl, xr, p, att, 1, &graph).unwrap();
        for i in 0..3 {
            assert!((t.value(y).get(i, 0) - 1.0).abs() < 1e-12);
            assert!((t.value(y).get(i, 1) + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_mlp_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let graph = test_graph();
        let xl = rand_tensor(&mut rng, 6, 3);
        let xr = rand_tensor(&mut rng, 6, 3);
        let p = rand_tensor(&mut rng, 3, 3);
        check_op(vec![xl, xr, p], |t, v| {
            let y = t.edge_relu_mean(v[0], v[1], v[2], &graph).unwrap();
            weighted_sum(t, y)
        });
    }

    #[test]
    fn loss_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logits = rand_tensor(&mut rng, 5, 2);
        check_op(vec![logits], |t, v| t.cross_entropy(v[0], &[0, 1, 1, 0, 1]).unwrap());
        let z = rand_tensor(&mut rng, 4, 1);
        check_op(vec![z.clone()], |t, v| {
            t.bce_with_logits(v[0], &[1.0, 0.0, 0.0, 1.0]).unwrap()
        });
        check_op(vec![z], |t, v| t.l1(v[0], &[2.0, -2.0, 0.5, -0.5], 2.0).unwrap());
    }

    #[test]
    fn loss_values() {
        let mut t = Tape::<f64>::new();
        let l = t.constant(Tensor::zeros(4, 2));
        let ce = t.cross_entropy(l, &[0, 1, 1, 0]).unwrap();
        assert!((t.value(ce).item() - std::f64::consts::LN_2).abs() < 1e-12);
        let x = t.constant(Tensor::from_vec(3, 1, vec![1.0, 2.0, 3.0]));
        let l1 = t.l1(x, &[1.0, 2.0, 3.0], 1.0).unwrap();
        assert_eq!(t.value(l1).item(), 0.0);
        let l1 = t.l1(x, &[0.0, 0.0, 0.0], 3.0).unwrap();
        assert!((t.value(l1).item() - 2.0 / 3.0).abs() < 1e-12);
        let z = t.constant(Tensor::zeros(2, 1));
        let b = t.bce_with_logits(z, &[0.0, 1.0]).unwrap();
        assert!((t.value(b).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::<f32>::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 3));
        assert!(t.matmul(a, b).is_err());
        assert!(t.gather(a, &[2]).is_err());
        assert!(t.cross_entropy(a, &[0, 1]).is_err());
        assert!(t.l1(a, &[0.0], 1.0).is_err());
    }
}
