//! Matrix-level reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as a node holding
//! its value. [`Graph::backward`] walks the nodes in reverse and returns the
//! gradient of a scalar root with respect to every trainable parameter in the
//! borrowed [`ParamStore`], plus any leaf created with [`Graph::input`].
//!
//! Parameters are never copied into the graph: a parameter node reads its
//! value straight from the store.

use rand::{Rng, RngCore};

use crate::crf::{self, Transitions};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Matrix<T>,
    pub trainable: bool,
    /// Embedding row held at zero: never updated and excluded from weight decay.
    pub pad_row: Option<usize>,
}

/// Named collection of every learned tensor of a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    /// Panics on a duplicate name; parameter layouts are fixed by the model code.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter `{name}`");
        self.params.push(Param {
            name,
            value,
            trainable,
            pad_row: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_embedding(
        &mut self,
        name: impl Into<String>,
        mut value: Matrix<T>,
        trainable: bool,
        pad_row: usize,
    ) -> ParamId {
        value.row_mut(pad_row).fill(T::zero());
        let id = self.add(name, value, trainable);
        self.params[id.0].pad_row = Some(pad_row);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Squared L2 norm of trainable parameters, PAD rows excluded.
    pub fn trainable_sq_norm(&self) -> T {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| {
                let total = p.value.sq_norm();
                match p.pad_row {
                    Some(r) => total - p.value.row(r).iter().map(|&x| x * x).sum::<T>(),
                    None => total,
                }
            })
            .sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }
}

/// Per-parameter gradient accumulators, allocated on first touch.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new(len: usize) -> Self {
        Gradients {
            grads: vec![None; len],
        }
    }

    pub fn for_store(store: &ParamStore<T>) -> Self {
        Self::new(store.len())
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn slot(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Matrix<T> {
        self.grads[id.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Matrix<T>) {
        self.slot(id, grad.shape()).add_assign(grad);
    }

    /// Adds `grad` row `k` into parameter row `rows[k]`.
    pub fn accumulate_rows(
        &mut self,
        id: ParamId,
        shape: (usize, usize),
        rows: &[usize],
        grad: &Matrix<T>,
    ) {
        let slot = self.slot(id, shape);
        for (k, &r) in rows.iter().enumerate() {
            for (a, &b) in slot.row_mut(r).iter_mut().zip(grad.row(k)) {
                *a += b;
            }
        }
    }

    pub fn merge(&mut self, other: &Gradients<T>) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn sq_norm(&self) -> T {
        self.grads.iter().flatten().map(|g| g.sq_norm()).sum()
    }

    pub fn scale(&mut self, alpha: T) {
        for g in self.grads.iter_mut().flatten() {
            g.scale(alpha);
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.sq_norm().sqrt();
        if norm > max_norm && norm > T::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix<T>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    Embed { table: ParamId, rows: Vec<usize> },
    MatMul(NodeId, NodeId),
    MatMulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    HCat(Vec<NodeId>),
    VCat(Vec<NodeId>),
    Cols { src: NodeId, start: usize },
    Rows { src: NodeId, start: usize },
    Gather { src: NodeId, rows: Vec<usize> },
    Softmax(NodeId),
    LayerNorm { src: NodeId, inv_std: Vec<T> },
    SumAll(NodeId),
    Crf {
        emissions: NodeId,
        transitions: NodeId,
        d_emissions: Matrix<T>,
        d_transitions: Matrix<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Option<Matrix<T>>,
    needs_grad: bool,
}

/// One forward pass recorded for differentiation.
pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Result of [`Graph::backward`].
pub struct Backward<T> {
    pub params: Gradients<T>,
    nodes: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Backward<T> {
    /// Gradient with respect to a node. `None` if the node does not influence the root
    /// or was not created with [`Graph::input`].
    pub fn wrt(&self, id: NodeId) -> Option<&Matrix<T>> {
        self.nodes[id.0].as_ref()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => self.params.value(*p),
            (_, Some(v)) => v,
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).shape()
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix<T>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Differentiable leaf whose gradient is reported by [`Backward::wrt`].
    pub fn input(&mut self, value: Matrix<T>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        let trainable = self.params.get(id).trainable;
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: trainable,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Row lookup into an embedding parameter.
    pub fn embed(&mut self, table: ParamId, rows: &[usize]) -> NodeId {
        let p = self.params.get(table);
        let cols = p.value.cols();
        let mut out = Matrix::zeros(rows.len(), cols);
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(k).copy_from_slice(p.value.row(r));
        }
        let trainable = p.trainable;
        self.push(
            Op::Embed {
                table,
                rows: rows.to_vec(),
            },
            out,
            trainable,
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), v, ng)
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_nt(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMulNT(a, b), v, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), v, ng)
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row expects a row vector");
        assert_eq!(av.cols(), rv.cols(), "add_row width mismatch");
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, &b) in v.row_mut(r).iter_mut().zip(rv.row(0)) {
                *x += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(Op::AddRow(a, row), v, ng)
    }

    /// Multiplies every row of `a` element-wise by a `1 x c` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "mul_row expects a row vector");
        assert_eq!(av.cols(), rv.cols(), "mul_row width mismatch");
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, &b) in v.row_mut(r).iter_mut().zip(rv.row(0)) {
                *x *= b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(Op::MulRow(a, row), v, ng)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), v, ng)
    }

    pub fn scale(&mut self, a: NodeId, alpha: T) -> NodeId {
        let v = self.value(a).map(|x| x * alpha);
        let ng = self.needs(a);
        self.push(Op::Scale(a, alpha), v, ng)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), v, ng)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.tanh());
        let ng = self.needs(a);
        self.push(Op::Tanh(a), v, ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(T::zero()));
        let ng = self.needs(a);
        self.push(Op::Relu(a), v, ng)
    }

    /// Column-wise concatenation.
    pub fn hcat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "hcat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "hcat row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::HCat(parts.to_vec()), out, ng)
    }

    /// Row-wise concatenation.
    pub fn vcat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "vcat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "vcat column mismatch");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::VCat(parts.to_vec()), Matrix::from_vec(rows, cols, data), ng)
    }

    pub fn cols(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(src);
        assert!(start + len <= v.cols(), "column slice out of range");
        let out = Matrix::from_fn(v.rows(), len, |r, c| v.get(r, start + c));
        let ng = self.needs(src);
        self.push(Op::Cols { src, start }, out, ng)
    }

    pub fn rows(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(src);
        assert!(start + len <= v.rows(), "row slice out of range");
        let c = v.cols();
        let out = Matrix::from_vec(len, c, v.data()[start * c..(start + len) * c].to_vec());
        let ng = self.needs(src);
        self.push(Op::Rows { src, start }, out, ng)
    }

    /// Output row `k` is input row `rows[k]`; repeats allowed.
    pub fn gather(&mut self, src: NodeId, rows: &[usize]) -> NodeId {
        let v = self.value(src);
        let mut out = Matrix::zeros(rows.len(), v.cols());
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(k).copy_from_slice(v.row(r));
        }
        let ng = self.needs(src);
        self.push(
            Op::Gather {
                src,
                rows: rows.to_vec(),
            },
            out,
            ng,
        )
    }

    /// Row-wise softmax of `src + mask`, `mask` entries being `0` or `-inf`.
    ///
    /// A fully masked row is an error unless `allow_empty`, in which case that
    /// row of the output is all zeros.
    pub fn masked_softmax(
        &mut self,
        src: NodeId,
        mask: Option<&Matrix<T>>,
        allow_empty: bool,
    ) -> Result<NodeId> {
        let v = self.value(src);
        if let Some(m) = mask {
            if m.shape() != v.shape() {
                return Err(Error::shape(format!(
                    "softmax mask {:?} vs scores {:?}",
                    m.shape(),
                    v.shape()
                )));
            }
        }
        let mut out = v.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            if let Some(m) = mask {
                for (x, &mv) in row.iter_mut().zip(m.row(r)) {
                    *x += mv;
                }
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                if allow_empty {
                    row.fill(T::zero());
                    continue;
                }
                return Err(Error::invalid(format!(
                    "attention row {r} is fully masked"
                )));
            }
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let ng = self.needs(src);
        Ok(self.push(Op::Softmax(src), out, ng))
    }

    /// Per-row normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, src: NodeId, eps: T) -> NodeId {
        let v = self.value(src);
        let d = T::of(v.cols() as f64);
        let mut out = v.clone();
        let mut inv_std = Vec::with_capacity(v.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / d;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / d;
            let is = T::one() / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        let ng = self.needs(src);
        self.push(Op::LayerNorm { src, inv_std }, out, ng)
    }

    pub fn sum_all(&mut self, src: NodeId) -> NodeId {
        let s = self.value(src).sum();
        let ng = self.needs(src);
        self.push(Op::SumAll(src), Matrix::from_vec(1, 1, vec![s]), ng)
    }

    /// Sum of several `1 x 1` nodes.
    pub fn add_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// Inverted dropout. Identity when `rng` is `None` or `p == 0`.
    pub fn dropout(&mut self, src: NodeId, p: f64, rng: Option<&mut dyn RngCore>) -> NodeId {
        let Some(rng) = rng else { return src };
        if p <= 0.0 {
            return src;
        }
        let (r, c) = self.shape(src);
        let keep = T::of(1.0 / (1.0 - p));
        let mask = Matrix::from_fn(r, c, |_, _| {
            if rng.gen::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        let m = self.constant(mask);
        self.mul(src, m)
    }

    /// CRF negative log-likelihood of `gold` given `n x L` emissions and the
    /// `(L+2) x (L+2)` transition node. Produces a `1 x 1` node.
    pub fn crf_nll(
        &mut self,
        emissions: NodeId,
        transitions: NodeId,
        gold: &[usize],
        constrained: bool,
    ) -> Result<NodeId> {
        let mut trans = Transitions::from_matrix(self.value(transitions).clone())?;
        if constrained {
            trans = crf::constrained_transitions(&trans);
        }
        let (loss, d_em, d_tr) = crf::nll_with_grad(self.value(emissions), &trans, gold)?;
        let ng = self.needs(emissions) || self.needs(transitions);
        Ok(self.push(
            Op::Crf {
                emissions,
                transitions,
                d_emissions: d_em,
                d_transitions: d_tr,
            },
            Matrix::from_vec(1, 1, vec![loss]),
            ng,
        ))
    }

    /// Reverse pass from a `1 x 1` root.
    pub fn backward(&self, root: NodeId) -> Backward<T> {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params = Gradients::for_store(self.params);
        grads[root.0] = Some(Matrix::filled(1, 1, T::one()));

        for idx in (0..=root.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut outgoing: Vec<(NodeId, Matrix<T>)> = Vec::new();
            let mut send = |target: NodeId, g: Matrix<T>| {
                if self.nodes[target.0].needs_grad {
                    outgoing.push((target, g));
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Param(p) => params.accumulate(*p, &dy),
                Op::Embed { table, rows } => {
                    let p = self.params.get(*table);
                    let shape = p.value.shape();
                    match p.pad_row {
                        Some(pad) => {
                            let mut dy = dy;
                            for (k, &r) in rows.iter().enumerate() {
                                if r == pad {
                                    dy.row_mut(k).fill(T::zero());
                                }
                            }
                            params.accumulate_rows(*table, shape, rows, &dy);
                        }
                        None => params.accumulate_rows(*table, shape, rows, &dy),
                    }
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        send(*a, dy.matmul_nt(self.value(*b)));
                    }
                    if self.needs(*b) {
                        send(*b, self.value(*a).matmul_tn(&dy));
                    }
                }
                Op::MatMulNT(a, b) => {
                    if self.needs(*a) {
                        send(*a, dy.matmul(self.value(*b)));
                    }
                    if self.needs(*b) {
                        send(*b, dy.matmul_tn(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        send(*b, dy.clone());
                    }
                    send(*a, dy);
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        send(*row, dy.col_sums());
                    }
                    send(*a, dy);
                }
                Op::MulRow(a, row) => {
                    let rv = self.value(*row);
                    if self.needs(*row) {
                        let prod = dy.zip_map(self.value(*a), |g, x| g * x);
                        send(*row, prod.col_sums());
                    }
                    if self.needs(*a) {
                        let mut da = dy;
                        for r in 0..da.rows() {
                            for (g, &s) in da.row_mut(r).iter_mut().zip(rv.row(0)) {
                                *g *= s;
                            }
                        }
                        send(*a, da);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        send(*a, dy.zip_map(self.value(*b), |g, y| g * y));
                    }
                    if self.needs(*b) {
                        send(*b, dy.zip_map(self.value(*a), |g, x| g * x));
                    }
                }
                Op::Scale(a, alpha) => {
                    let alpha = *alpha;
                    send(*a, dy.map(|g| g * alpha));
                }
                Op::Sigmoid(a) => {
                    let y = self.value(NodeId(idx));
                    send(*a, dy.zip_map(y, |g, y| g * y * (T::one() - y)));
                }
                Op::Tanh(a) => {
                    let y = self.value(NodeId(idx));
                    send(*a, dy.zip_map(y, |g, y| g * (T::one() - y * y)));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    send(
                        *a,
                        dy.zip_map(x, |g, x| if x > T::zero() { g } else { T::zero() }),
                    );
                }
                Op::HCat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if self.needs(p) {
                            let part = Matrix::from_fn(dy.rows(), c, |r, j| dy.get(r, offset + j));
                            send(p, part);
                        }
                        offset += c;
                    }
                }
                Op::VCat(parts) => {
                    let mut offset = 0;
                    let cols = dy.cols();
                    for &p in parts {
                        let r = self.value(p).rows();
                        if self.needs(p) {
                            let part = Matrix::from_vec(
                                r,
                                cols,
                                dy.data()[offset * cols..(offset + r) * cols].to_vec(),
                            );
                            send(p, part);
                        }
                        offset += r;
                    }
                }
                Op::Cols { src, start } => {
                    let (r, c) = self.shape(*src);
                    let mut g = Matrix::zeros(r, c);
                    for i in 0..r {
                        g.row_mut(i)[*start..*start + dy.cols()].copy_from_slice(dy.row(i));
                    }
                    send(*src, g);
                }
                Op::Rows { src, start } => {
                    let (r, c) = self.shape(*src);
                    let mut g = Matrix::zeros(r, c);
                    g.data_mut()[start * c..(start + dy.rows()) * c].copy_from_slice(dy.data());
                    send(*src, g);
                }
                Op::Gather { src, rows } => {
                    let (r, c) = self.shape(*src);
                    let mut g = Matrix::zeros(r, c);
                    for (k, &row) in rows.iter().enumerate() {
                        for (a, &b) in g.row_mut(row).iter_mut().zip(dy.row(k)) {
                            *a += b;
                        }
                    }
                    send(*src, g);
                }
                Op::Softmax(src) => {
                    let y = self.value(NodeId(idx));
                    let mut dx = dy;
                    for r in 0..dx.rows() {
                        let yr = y.row(r);
                        let dot: T = dx.row(r).iter().zip(yr).map(|(&g, &y)| g * y).sum();
                        for (g, &y) in dx.row_mut(r).iter_mut().zip(yr) {
                            *g = y * (*g - dot);
                        }
                    }
                    send(*src, dx);
                }
                Op::LayerNorm { src, inv_std } => {
                    let y = self.value(NodeId(idx));
                    let d = T::of(y.cols() as f64);
                    let mut dx = dy;
                    for r in 0..dx.rows() {
                        let yr = y.row(r);
                        let g = dx.row(r);
                        let mean_g = g.iter().copied().sum::<T>() / d;
                        let mean_gy = g.iter().zip(yr).map(|(&g, &y)| g * y).sum::<T>() / d;
                        let is = inv_std[r];
                        for (g, &y) in dx.row_mut(r).iter_mut().zip(yr) {
                            *g = is * (*g - mean_g - y * mean_gy);
                        }
                    }
                    send(*src, dx);
                }
                Op::SumAll(src) => {
                    let (r, c) = self.shape(*src);
                    send(*src, Matrix::filled(r, c, dy.get(0, 0)));
                }
                Op::Crf {
                    emissions,
                    transitions,
                    d_emissions,
                    d_transitions,
                } => {
                    let s = dy.get(0, 0);
                    if self.needs(*emissions) {
                        send(*emissions, d_emissions.map(|g| g * s));
                    }
                    if self.needs(*transitions) {
                        send(*transitions, d_transitions.map(|g| g * s));
                    }
                }
            }
            for (target, g) in outgoing {
                match &mut grads[target.0] {
                    Some(existing) => existing.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Backward {
            params,
            nodes: grads,
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
