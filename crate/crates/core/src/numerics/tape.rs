//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Tape`] borrows a [`ParameterStore`] for parameter values and records
//! every operation applied to [`Var`] handles. [`Tape::backward`] walks the
//! records in reverse and returns a [`Gradients`] table. Nodes that depend
//! on no parameter and no grad-enabled input are skipped on the way back.

use super::kernels::{axpy, dot, log_sum_exp, matvec, sigmoid, softmax_into, sum_f64, vecmat};
use super::tensor::numel;
use super::{ParamId, ParameterStore, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    /// `w[m,k] · x[k]`
    MatVec(Var, Var),
    /// `x[k] · w[k,n]`
    VecMat(Var, Var),
    /// `a[m,k] · b[k,n]`
    MatMul(Var, Var),
    /// `a[m,k] · b[n,k]ᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `a[n,m] + b[m]` on every row
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    /// Along the last axis.
    Softmax(Var),
    Lookup(Var, usize),
    MeanRows(Var),
    Sum(Var),
    CrossEntropy(Var, usize),
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    /// Empty for parameter nodes, whose values live in the store.
    value: Vec<T>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'s, T: Real> {
    store: Option<&'s ParameterStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::contract(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<'s, T: Real> Tape<'s, T> {
    pub fn new(store: &'s ParameterStore<T>) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    /// A tape with no parameters, for free-standing computations.
    pub fn detached() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op, needs_grad: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || numel(&shape) == value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// The node for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store.expect("parameter lookup on a detached tape");
        let shape = store.get(id).shape().to_vec();
        let v = self.push(shape, Vec::new(), Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        self.leaf(shape, data, false)
    }

    /// An input whose gradient is reported by [`Gradients::wrt`].
    pub fn input_with_grad(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        self.leaf(shape, data, true)
    }

    pub fn vector(&mut self, data: &[T]) -> Var {
        self.push(vec![data.len()], data.to_vec(), Op::Leaf, false)
    }

    fn leaf(&mut self, shape: Vec<usize>, data: Vec<T>, grad: bool) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(Error::contract(format!(
                "input of shape {shape:?} needs {} values, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(self.push(shape, data, Op::Leaf, grad))
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.expect("param node without store").get(id).data(),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        if numel(self.shape(v)) != 1 {
            return Err(Error::contract(format!("expected a scalar, got shape {:?}", self.shape(v))));
        }
        Ok(self.value(v)[0])
    }

    /// Dispatches on ranks: `[m,k]·[k]`, `[k]·[k,n]` or `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ng = self.ng(a) || self.ng(b);
        match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2]) if k == k2 => {
                let mut out = vec![T::zero(); m];
                matvec(self.value(a), self.value(b), m, &mut out);
                Ok(self.push(vec![m], out, Op::MatVec(a, b), ng))
            }
            (&[k], &[k2, n]) if k == k2 => {
                let mut out = vec![T::zero(); n];
                vecmat(self.value(a), self.value(b), n, &mut out);
                Ok(self.push(vec![n], out, Op::VecMat(a, b), ng))
            }
            (&[m, k], &[k2, n]) if k == k2 => {
                let mut out = vec![T::zero(); m * n];
                let (av, bv) = (self.value(a), self.value(b));
                for i in 0..m {
                    vecmat(&av[i * k..(i + 1) * k], bv, n, &mut out[i * n..(i + 1) * n]);
                }
                Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
            }
            _ => Err(shape_err("matmul", &sa, &sb)),
        }
    }

    /// `a · bᵀ` for `a[m,k]` (or `a[k]`) and `b[n,k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        match (sa.as_slice(), sb.as_slice()) {
            (&[_], &[_, _]) => self.matmul(b, a),
            (&[m, k], &[n, k2]) if k == k2 => {
                let mut out = vec![T::zero(); m * n];
                let (av, bv) = (self.value(a), self.value(b));
                for i in 0..m {
                    matvec(bv, &av[i * k..(i + 1) * k], n, &mut out[i * n..(i + 1) * n]);
                }
                let ng = self.ng(a) || self.ng(b);
                Ok(self.push(vec![m, n], out, Op::MatMulT(a, b), ng))
            }
            _ => Err(shape_err("matmul_t", &sa, &sb)),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), ng))
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (&[_, m], &[m2]) = (sa.as_slice(), sb.as_slice()) else {
            return Err(shape_err("add_row", &sa, &sb));
        };
        if m != m2 {
            return Err(shape_err("add_row", &sa, &sb));
        }
        let bv = self.value(b);
        let out = self
            .value(a)
            .chunks_exact(m)
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| *x + *y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(sa, out, Op::AddRow(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = T::of(c);
        let out = self.value(a).iter().map(|x| *x * k).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, c), ng)
    }

    /// Concatenate vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::contract(format!(
                    "concat expects vectors, got shape {:?}",
                    self.shape(p)
                )));
            }
            out.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![out.len()], out, Op::Concat(parts.to_vec()), ng))
    }

    /// `x[start..start + len]` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 || start + len > s[0] {
            return Err(Error::contract(format!("slice {start}..{} of shape {s:?}", start + len)));
        }
        let out = self.value(x)[start..start + len].to_vec();
        let ng = self.ng(x);
        Ok(self.push(vec![len], out, Op::Slice(x, start), ng))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Sigmoid(x), ng)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some(&width) = shape.last() else {
            return Err(Error::contract("softmax of a scalar"));
        };
        let mut out = vec![T::zero(); numel(&shape)];
        for (src, dst) in self.value(x).chunks_exact(width).zip(out.chunks_exact_mut(width)) {
            softmax_into(src, dst);
        }
        let ng = self.ng(x);
        Ok(self.push(shape, out, Op::Softmax(x), ng))
    }

    /// Row `index` of a `[V, m]` table.
    pub fn lookup(&mut self, table: Var, index: usize) -> Result<Var> {
        let s = self.shape(table).to_vec();
        let &[rows, m] = s.as_slice() else {
            return Err(Error::contract(format!("lookup expects a matrix, got {s:?}")));
        };
        if index >= rows {
            return Err(Error::contract(format!("lookup index {index} out of range for {rows} rows")));
        }
        let out = self.value(table)[index * m..(index + 1) * m].to_vec();
        let ng = self.ng(table);
        Ok(self.push(vec![m], out, Op::Lookup(table, index), ng))
    }

    /// Mean over rows of `[n, m]` (giving `[m]`), or over all entries of a vector.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        match s.as_slice() {
            &[n] => {
                let v = self.sum(x);
                Ok(self.scale(v, 1.0 / n as f64))
            }
            &[n, m] => {
                let mut acc = vec![0f64; m];
                for row in self.value(x).chunks_exact(m) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v.f64();
                    }
                }
                let out = acc.into_iter().map(|a| T::of(a / n as f64)).collect();
                let ng = self.ng(x);
                Ok(self.push(vec![m], out, Op::MeanRows(x), ng))
            }
            _ => Err(Error::contract(format!("mean of shape {s:?}"))),
        }
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = vec![T::of(sum_f64(self.value(x)))];
        let ng = self.ng(x);
        self.push(vec![], out, Op::Sum(x), ng)
    }

    /// `-log softmax(logits)[target]` as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 1 || target >= s[0] {
            return Err(Error::contract(format!(
                "cross_entropy target {target} for logits of shape {s:?}"
            )));
        }
        let lv = self.value(logits);
        let loss = log_sum_exp(lv) - lv[target].f64();
        let ng = self.ng(logits);
        Ok(self.push(vec![], vec![T::of(loss)], Op::CrossEntropy(logits, target), ng))
    }

    pub fn check_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_owned()))
        }
    }

    /// Gradients of the scalar `loss` with respect to every reachable node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if numel(self.shape(loss)) != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.check_finite(loss, "loss")?;
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("gradient".into()));
            }
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.filter(|v| v.0 < n).map(|v| (ParamId(i), v)))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let len = numel(&self.nodes[v.0].shape);
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
            f(buf);
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatVec(w, x) => {
                let (wv, xv) = (self.value(w), self.value(x));
                let k = xv.len();
                acc(w, &mut |gw| {
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gr, xv, &mut gw[r * k..(r + 1) * k]);
                    }
                });
                acc(x, &mut |gx| {
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gr, &wv[r * k..(r + 1) * k], gx);
                    }
                });
            }
            &Op::VecMat(x, w) => {
                let (xv, wv) = (self.value(x), self.value(w));
                let n = g.len();
                acc(x, &mut |gx| {
                    for (p, gp) in gx.iter_mut().enumerate() {
                        *gp = *gp + dot(g, &wv[p * n..(p + 1) * n]);
                    }
                });
                acc(w, &mut |gw| {
                    for (p, &xp) in xv.iter().enumerate() {
                        axpy(xp, g, &mut gw[p * n..(p + 1) * n]);
                    }
                });
            }
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[1];
                acc(a, &mut |ga| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] = ga[i * k + p] + dot(gi, &bv[p * n..(p + 1) * n]);
                        }
                    }
                });
                acc(b, &mut |gb| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            axpy(av[i * k + p], gi, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                });
            }
            &Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = self.nodes[b.0].shape[0];
                acc(a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            axpy(g[i * n + j], &bv[j * k..(j + 1) * k], &mut ga[i * k..(i + 1) * k]);
                        }
                    }
                });
                acc(b, &mut |gb| {
                    for i in 0..m {
                        for j in 0..n {
                            axpy(g[i * n + j], &av[i * k..(i + 1) * k], &mut gb[j * k..(j + 1) * k]);
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |ga| axpy(T::one(), g, ga));
                acc(b, &mut |gb| axpy(T::one(), g, gb));
            }
            &Op::AddRow(a, b) => {
                acc(a, &mut |ga| axpy(T::one(), g, ga));
                acc(b, &mut |gb| {
                    for row in g.chunks_exact(gb.len()) {
                        axpy(T::one(), row, gb);
                    }
                });
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                acc(a, &mut |ga| {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x = *x + *gi * *bi;
                    }
                });
                acc(b, &mut |gb| {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *x = *x + *gi * *ai;
                    }
                });
            }
            &Op::Scale(a, c) => acc(a, &mut |ga| axpy(T::of(c), g, ga)),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = numel(&self.nodes[p.0].shape);
                    acc(p, &mut |gp| axpy(T::one(), &g[off..off + len], gp));
                    off += len;
                }
            }
            &Op::Slice(x, start) => acc(x, &mut |gx| {
                axpy(T::one(), g, &mut gx[start..start + g.len()]);
            }),
            &Op::Tanh(x) => acc(x, &mut |gx| {
                for ((d, gi), y) in gx.iter_mut().zip(g).zip(out) {
                    *d = *d + *gi * (T::one() - *y * *y);
                }
            }),
            &Op::Sigmoid(x) => acc(x, &mut |gx| {
                for ((d, gi), y) in gx.iter_mut().zip(g).zip(out) {
                    *d = *d + *gi * *y * (T::one() - *y);
                }
            }),
            &Op::Softmax(x) => {
                let width = *node.shape.last().unwrap();
                acc(x, &mut |gx| {
                    for ((gr, yr), dr) in g
                        .chunks_exact(width)
                        .zip(out.chunks_exact(width))
                        .zip(gx.chunks_exact_mut(width))
                    {
                        let gy = dot(gr, yr);
                        for ((d, gi), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *d = *d + *y * (*gi - gy);
                        }
                    }
                });
            }
            &Op::Lookup(table, index) => {
                let m = g.len();
                acc(table, &mut |gt| axpy(T::one(), g, &mut gt[index * m..(index + 1) * m]));
            }
            &Op::MeanRows(x) => {
                let rows = self.nodes[x.0].shape[0];
                let inv = T::of(1.0 / rows as f64);
                acc(x, &mut |gx| {
                    for row in gx.chunks_exact_mut(g.len()) {
                        axpy(inv, g, row);
                    }
                });
            }
            &Op::Sum(x) => acc(x, &mut |gx| gx.iter_mut().for_each(|d| *d = *d + g[0])),
            &Op::CrossEntropy(logits, target) => {
                let lv = self.value(logits);
                let mut p = vec![T::zero(); lv.len()];
                softmax_into(lv, &mut p);
                p[target] = p[target] - T::one();
                acc(logits, &mut |gl| axpy(g[0], &p, gl));
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for a node, if the loss depends on it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, v)| self.wrt(v))
    }

    /// Add parameter gradients into the store's grad buffers. Every parameter
    /// gets a buffer, zero-filled when the loss does not reach it.
    pub fn accumulate_into(&self, store: &mut ParameterStore<T>) {
        store.ensure_grads();
        for &(id, v) in &self.params {
            if let Some(g) = self.wrt(v) {
                axpy(T::one(), g, store.get_mut(id).grad_mut());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::<f64>::detached();
        let x = t.input(vec![3], vec![0.0; 3]).unwrap();
        let y = t.softmax(x).unwrap();
        for &p in t.value(y) {
            assert!(close(p, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn identity_matmul() {
        let mut t = Tape::<f64>::detached();
        let i2 = t.input(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = t.input(vec![2], vec![3.0, -4.0]).unwrap();
        let y = t.matmul(i2, x).unwrap();
        assert_eq!(t.value(y), &[3.0, -4.0]);
    }

    #[test]
    fn cross_entropy_uniform_is_ln2() {
        let mut t = Tape::<f32>::detached();
        let l = t.input(vec![2], vec![0.0, 0.0]).unwrap();
        let ce = t.cross_entropy(l, 0).unwrap();
        assert!((t.scalar(ce).unwrap() - std::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut t = Tape::<f32>::detached();
        let a = t.input(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = t.input(vec![2], vec![0.0; 2]).unwrap();
        let msg = t.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
        assert!(t.add(a, b).is_err());
        assert!(t.cross_entropy(b, 2).is_err());
        assert!(t.lookup(a, 2).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::<f64>::detached();
        let x = t.input_with_grad(vec![4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::<f64>::detached();
        let x = t.input_with_grad(vec![1], vec![3.0]).unwrap();
        let sq = t.mul(x, x).unwrap();
        let l = t.sum(sq);
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::<f64>::detached();
        let x = t.input_with_grad(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut t = Tape::<f32>::detached();
        let x = t.input_with_grad(vec![1], vec![f32::INFINITY]).unwrap();
        let s = t.sum(x);
        assert!(matches!(t.backward(s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn parameter_nodes_are_shared() {
        let mut store = ParameterStore::<f64>::new();
        let w = store.add("w", Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap()).unwrap();
        let mut t = Tape::new(&store);
        let a = t.param(w);
        let b = t.param(w);
        assert_eq!(a, b);
        let y = t.mul(a, b).unwrap();
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert_eq!(g.param(w).unwrap(), &[2.0, 4.0]);
        drop(t);
        g.accumulate_into(&mut store);
        assert_eq!(store.get(w).grad().unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn untouched_nodes_get_no_gradient() {
        let mut t = Tape::<f64>::detached();
        let x = t.input(vec![2], vec![1.0, 2.0]).unwrap();
        let y = t.input_with_grad(vec![2], vec![1.0, 2.0]).unwrap();
        let z = t.mul(x, y).unwrap();
        let l = t.sum(z);
        let g = t.backward(l).unwrap();
        assert!(g.wrt(x).is_none());
        assert_eq!(g.wrt(y).unwrap(), &[1.0, 2.0]);
    }
}
