//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so walking the tape backwards is a
//! valid topological order. Ops are coarse (a whole attention layer, a whole
//! RMS norm) and each carries whatever forward state its backward needs.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, RopeTable};
use super::{shape_err, NnError, ParamId, ParamStore, Result, Tensor};
use crate::math::{gelu, gelu_grad, gemm, sigmoid, MatMut, Real};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add { a: Var, b: Var },
    AddRow { a: Var, row: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: T },
    Gelu { a: Var },
    Sigmoid { a: Var },
    Tanh { a: Var },
    RmsNorm { x: Var, w: Var, inv_rms: Vec<T> },
    Rope { x: Var, heads: usize, table: RopeTable<T> },
    Attention { q: Var, k: Var, v: Var, heads: usize, scale: T, probs: Vec<T> },
    Gather { table: Var, ids: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    MeanRows { x: Var },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    param: Option<ParamId>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording of one forward pass over a parameter store.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<Var>>,
}

/// Gradients indexed by parameter.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    names: Vec<alloc::string::String>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn empty(params: &ParamStore<T>) -> Self {
        Self {
            names: params.entries().iter().map(|e| e.name.clone()).collect(),
            grads: (0..params.len()).map(|_| None).collect(),
        }
    }

    /// Gradient of a parameter; `Detached` when the loss never touched it.
    pub fn get(&self, id: ParamId) -> Result<&Tensor<T>> {
        self.grads[id.0].as_ref().ok_or_else(|| NnError::Detached(self.names[id.0].clone()))
    }

    pub fn try_get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(|g| g.is_none())
    }

    /// `self += s · other`.
    pub fn accumulate(&mut self, other: &Gradients<T>, s: T) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.add_scaled_(t, s),
                    None => *mine = Some(t.scale(s)),
                }
            }
        }
    }

    pub fn global_norm(&self) -> T {
        self.grads.iter().flatten().map(|g| g.sum_sq()).sum::<T>().sqrt()
    }

    pub fn scale_(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }

    /// Rescales to at most `max_norm`; returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale_(max_norm / norm);
        }
        norm
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

fn acc<'g, T: Real>(grads: &'g mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'g mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match node.param {
            Some(id) => self.params.get(id),
            None => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value: Some(value), param: None, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, param: Some(id), op: Op::Leaf, needs_grad: self.params.is_trainable(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Some(value), param: None, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// `a · b`, or `a · bᵀ` with `trans_b` (linear layers store `(out, in)`).
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k) = (av.rows(), av.cols());
        let (bk, m) = if trans_b { (bv.cols(), bv.rows()) } else { (bv.rows(), bv.cols()) };
        if k != bk {
            return Err(shape_err!("matmul {:?} x {:?} (trans_b={trans_b})", av.shape(), bv.shape()));
        }
        let mut out = Tensor::zeros(&[n, m]);
        let bm = if trans_b { bv.as_mat().t() } else { bv.as_mat() };
        gemm(T::one(), av.as_mat(), bm, T::zero(), MatMut::new(out.data_mut(), n, m));
        Ok(self.push(out, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    /// Adds a `1×d` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        let d = av.cols();
        if rv.len() != d {
            return Err(shape_err!("add_row {:?} + {:?}", av.shape(), rv.shape()));
        }
        let mut out = av.clone();
        for r in out.data_mut().chunks_exact_mut(d) {
            for (x, &b) in r.iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        Ok(self.push(out, Op::AddRow { a, row }, &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale { a, s }, &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu { a }, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid { a }, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.push(out, Op::Tanh { a }, &[a])
    }

    /// RMS normalization of every row, scaled by the weight row `w`.
    pub fn rms_norm(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let d = xv.cols();
        if wv.len() != d {
            return Err(shape_err!("rms_norm {:?} with weight {:?}", xv.shape(), wv.shape()));
        }
        let mut out = Tensor::zeros(xv.shape());
        let mut inv_rms = vec![T::zero(); xv.rows()];
        kernels::rmsnorm_forward(xv.data(), wv.data(), d, out.data_mut(), &mut inv_rms);
        Ok(self.push(out, Op::RmsNorm { x, w, inv_rms }, &[x, w]))
    }

    /// Rotary embedding of every head of `x` (`n × heads·d_h`) at `positions`.
    pub fn rope(&mut self, x: Var, positions: &[usize], heads: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != positions.len() || !xv.cols().is_multiple_of(heads) || !(xv.cols() / heads).is_multiple_of(2) {
            return Err(shape_err!("rope on {:?} with {} positions, {heads} heads", xv.shape(), positions.len()));
        }
        let table = RopeTable::new(positions, xv.cols() / heads);
        let mut out = xv.clone();
        table.rotate(out.data_mut(), heads, false);
        Ok(self.push(out, Op::Rope { x, heads, table }, &[x]))
    }

    /// Causal multi-head attention `softmax(q kᵀ · scale) v` per head.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, scale: T) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != kv.shape() || kv.shape() != vv.shape() || qv.cols() % heads != 0 {
            return Err(shape_err!("attention q{:?} k{:?} v{:?}", qv.shape(), kv.shape(), vv.shape()));
        }
        let (n, width) = (qv.rows(), qv.cols());
        let mut out = Tensor::zeros(&[n, width]);
        let mut probs = vec![T::zero(); heads * n * n];
        kernels::attention_forward(
            qv.data(),
            kv.data(),
            vv.data(),
            n,
            n,
            heads,
            width / heads,
            scale,
            Some(0),
            out.data_mut(),
            &mut probs,
        );
        Ok(self.push(out, Op::Attention { q, k, v, heads, scale, probs }, &[q, k, v]))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let d = tv.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            if i >= tv.rows() {
                return Err(shape_err!("gather index {i} from {:?}", tv.shape()));
            }
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::from_vec(&[ids.len(), d], data)?;
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }, &[table]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let d = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != d {
                return Err(shape_err!("concat_rows width {} vs {}", pv.cols(), d));
            }
            rows += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::from_vec(&[rows, d], data)?;
        Ok(self.push(out, Op::ConcatRows { parts: parts.to_vec() }, parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.rows() {
            return Err(shape_err!("slice_rows {start}..{end} of {:?}", xv.shape()));
        }
        let out = xv.rows_slice(start, end);
        Ok(self.push(out, Op::SliceRows { x, start }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if start > end || end > c {
            return Err(shape_err!("slice_cols {start}..{end} of {:?}", xv.shape()));
        }
        let out = Tensor::from_fn(xv.rows(), end - start, |r, j| xv.data()[r * c + start + j]);
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        let inv = T::one() / T::lit(n as f64);
        let mut out = Tensor::zeros(&[1, d]);
        for r in xv.data().chunks_exact(d) {
            for (o, &a) in out.data_mut().iter_mut().zip(r) {
                *o += a * inv;
            }
        }
        self.push(out, Op::MeanRows { x }, &[x])
    }

    /// Mean of `−log softmax(logits[i])[target[i]]` over rows with a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, vocab) = (lv.rows(), lv.cols());
        if targets.len() != n {
            return Err(shape_err!("{} targets for {} logit rows", targets.len(), n));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(NnError::EmptyMask);
        }
        let mut probs = vec![T::zero(); n * vocab];
        let mut loss = T::zero();
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= vocab {
                return Err(shape_err!("target {t} outside vocabulary {vocab}"));
            }
            let row = &mut probs[r * vocab..(r + 1) * vocab];
            row.copy_from_slice(lv.row(r));
            let max = row.iter().fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            loss += sum.ln() + max - lv.at(r, t);
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let out = Tensor::from_vec(&[1, 1], vec![loss / T::lit(count as f64)])?;
        Ok(self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }, &[logits]))
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    /// Gradients of the scalar `loss` with respect to every trainable
    /// parameter it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(NnError::Graph("backward needs a scalar loss".to_string()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(&[1, 1], vec![T::one()])?);
        let mut out = Gradients::empty(self.params);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    if let Some(id) = node.param {
                        match &mut out.grads[id.0] {
                            Some(t) => t.add_scaled_(&g, T::one()),
                            slot => *slot = Some(g),
                        }
                    }
                }
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, m) = (g.rows(), g.cols());
                    let k = av.cols();
                    if self.needs(*a) {
                        let da = acc(&mut grads, *a, av.shape());
                        // dA = dC · Bᵀ  (or dC · B when B is stored transposed)
                        let bm = if *trans_b { bv.as_mat() } else { bv.as_mat().t() };
                        gemm(T::one(), g.as_mat(), bm, T::one(), MatMut::new(da.data_mut(), n, k));
                    }
                    if self.needs(*b) {
                        let db = acc(&mut grads, *b, bv.shape());
                        if *trans_b {
                            gemm(T::one(), g.as_mat().t(), av.as_mat(), T::one(), MatMut::new(db.data_mut(), m, k));
                        } else {
                            gemm(T::one(), av.as_mat().t(), g.as_mat(), T::one(), MatMut::new(db.data_mut(), k, m));
                        }
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if self.needs(v) {
                            acc(&mut grads, v, g.shape()).add_scaled_(&g, T::one());
                        }
                    }
                }
                Op::AddRow { a, row } => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.shape()).add_scaled_(&g, T::one());
                    }
                    if self.needs(*row) {
                        let shape = self.value(*row).shape().to_vec();
                        let dr = acc(&mut grads, *row, &shape);
                        let d = g.cols();
                        for r in g.data().chunks_exact(d) {
                            for (o, &x) in dr.data_mut().iter_mut().zip(r) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let da = acc(&mut grads, *a, av.shape());
                        for ((o, &x), &y) in da.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *o += x * y;
                        }
                    }
                    if self.needs(*b) {
                        let db = acc(&mut grads, *b, bv.shape());
                        for ((o, &x), &y) in db.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                            *o += x * y;
                        }
                    }
                }
                Op::Scale { a, s } => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.shape()).add_scaled_(&g, *s);
                    }
                }
                Op::Gelu { a } => {
                    if self.needs(*a) {
                        let av = self.value(*a);
                        let da = acc(&mut grads, *a, av.shape());
                        for ((o, &x), &gi) in da.data_mut().iter_mut().zip(av.data()).zip(g.data()) {
                            *o += gi * gelu_grad(x);
                        }
                    }
                }
                Op::Sigmoid { a } => {
                    if self.needs(*a) {
                        let y = node.value.as_ref().unwrap();
                        let da = acc(&mut grads, *a, y.shape());
                        for ((o, &yi), &gi) in da.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                            *o += gi * yi * (T::one() - yi);
                        }
                    }
                }
                Op::Tanh { a } => {
                    if self.needs(*a) {
                        let y = node.value.as_ref().unwrap();
                        let da = acc(&mut grads, *a, y.shape());
                        for ((o, &yi), &gi) in da.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                            *o += gi * (T::one() - yi * yi);
                        }
                    }
                }
                Op::RmsNorm { x, w, inv_rms } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let d = xv.cols();
                    let mut dx = self.needs(*x).then(|| Tensor::zeros(xv.shape()));
                    let mut dw = self.needs(*w).then(|| Tensor::zeros(wv.shape()));
                    kernels::rmsnorm_backward(
                        xv.data(),
                        wv.data(),
                        inv_rms,
                        g.data(),
                        d,
                        dx.as_mut().map(|t| t.data_mut()),
                        dw.as_mut().map(|t| t.data_mut()),
                    );
                    if let Some(dx) = dx {
                        acc(&mut grads, *x, xv.shape()).add_scaled_(&dx, T::one());
                    }
                    if let Some(dw) = dw {
                        acc(&mut grads, *w, wv.shape()).add_scaled_(&dw, T::one());
                    }
                }
                Op::Rope { x, heads, table } => {
                    if self.needs(*x) {
                        let mut dx = g;
                        table.rotate(dx.data_mut(), *heads, true);
                        let shape = dx.shape().to_vec();
                        acc(&mut grads, *x, &shape).add_scaled_(&dx, T::one());
                    }
                }
                Op::Attention { q, k, v, heads, scale, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (n, width) = (qv.rows(), qv.cols());
                    let mut dq = Tensor::zeros(qv.shape());
                    let mut dk = Tensor::zeros(kv.shape());
                    let mut dv = Tensor::zeros(vv.shape());
                    kernels::attention_backward(
                        qv.data(),
                        kv.data(),
                        vv.data(),
                        n,
                        n,
                        *heads,
                        width / heads,
                        *scale,
                        probs,
                        g.data(),
                        dq.data_mut(),
                        dk.data_mut(),
                        dv.data_mut(),
                    );
                    for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                        if self.needs(var) {
                            let shape = d.shape().to_vec();
                            acc(&mut grads, var, &shape).add_scaled_(&d, T::one());
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    if self.needs(*table) {
                        let shape = self.value(*table).shape().to_vec();
                        let d = g.cols();
                        let dt = acc(&mut grads, *table, &shape);
                        for (r, &i) in ids.iter().enumerate() {
                            for (o, &x) in dt.data_mut()[i * d..(i + 1) * d].iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut r0 = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        if self.needs(p) {
                            let piece = g.rows_slice(r0, r0 + rows);
                            let shape = self.value(p).shape().to_vec();
                            acc(&mut grads, p, &shape).add_scaled_(&piece, T::one());
                        }
                        r0 += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    if self.needs(*x) {
                        let shape = self.value(*x).shape().to_vec();
                        let d = g.cols();
                        let dx = acc(&mut grads, *x, &shape);
                        for (o, &v) in dx.data_mut()[start * d..].iter_mut().zip(g.data()) {
                            *o += v;
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.needs(*x) {
                        let shape = self.value(*x).shape().to_vec();
                        let c = shape[shape.len() - 1];
                        let w = g.cols();
                        let dx = acc(&mut grads, *x, &shape);
                        for r in 0..g.rows() {
                            for j in 0..w {
                                dx.data_mut()[r * c + start + j] += g.data()[r * w + j];
                            }
                        }
                    }
                }
                Op::MeanRows { x } => {
                    if self.needs(*x) {
                        let shape = self.value(*x).shape().to_vec();
                        let n = self.value(*x).rows();
                        let inv = T::one() / T::lit(n as f64);
                        let d = g.cols();
                        let dx = acc(&mut grads, *x, &shape);
                        for r in dx.data_mut().chunks_exact_mut(d) {
                            for (o, &v) in r.iter_mut().zip(g.data()) {
                                *o += v * inv;
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, probs, count } => {
                    if self.needs(*logits) {
                        let lv = self.value(*logits);
                        let vocab = lv.cols();
                        let s = g.data()[0] / T::lit(*count as f64);
                        let dl = acc(&mut grads, *logits, lv.shape());
                        for (r, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            let row = &mut dl.data_mut()[r * vocab..(r + 1) * vocab];
                            for (o, &p) in row.iter_mut().zip(&probs[r * vocab..(r + 1) * vocab]) {
                                *o += s * p;
                            }
                            row[t] -= s;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
