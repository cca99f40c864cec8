//! Reverse-mode differentiation over a fixed set of array primitives.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Values
//! are computed eagerly; [`Tape::backward`] replays the record in reverse and
//! returns adjoints for every node that depends on a parameter.

use std::collections::HashMap;
use std::sync::Arc;

use super::array::{gemm_acc, gemm_nt_acc, gemm_tn_acc};
use super::{Array, ParamId, ParamStore};
use crate::error::{shape_err, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchedMatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    ScalarMul(Var, f64),
    Scale(Var, Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    SumAll(Var),
    TemporalConv {
        x: Var,
        w: Var,
        groups: usize,
        stride: usize,
    },
    Gather {
        x: Var,
        index: Arc<[usize]>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    PairwiseSub(Var, Var),
    NodeMix(Var, Var),
    ChannelNodeMix(Var, Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Records one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for each parameter bound during the forward pass.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Array)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }

    /// Adds `scale · grad` into each parameter's accumulator.
    pub fn accumulate_into(&self, store: &mut ParamStore, scale: f64) {
        for (id, g) in self.params() {
            store.get_mut(id).grad.scaled_add_assign(scale, g);
        }
    }
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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Array, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    /// A value that takes part in the computation but receives no gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient (not tied to a stored parameter).
    pub fn input(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push_checked("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("batched_matmul", format!("{sa:?} x {sb:?}")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm_acc(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = Array::new(&[bs, m, n], out)?;
        self.push_checked("batched_matmul", value, Op::BatchedMatMul(a, b), &[a, b])
    }

    fn same_shape(&self, name: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(name, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push_checked("add", value, Op::Add(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut value = self.value(a).clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x *= y;
        }
        self.push_checked("mul", value, Op::Mul(a, b), &[a, b])
    }

    fn suffix_check(&self, name: &'static str, a: Var, b: Var) -> Result<usize> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err(name, format!("{sb:?} is not a trailing shape of {sa:?}")));
        }
        Ok(self.value(b).len())
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.suffix_check("add_broadcast", a, b)?;
        let mut value = self.value(a).clone();
        let bd = self.value(b).data();
        for chunk in value.data_mut().chunks_mut(n) {
            for (x, y) in chunk.iter_mut().zip(bd) {
                *x += y;
            }
        }
        self.push_checked("add_broadcast", value, Op::AddBroadcast(a, b), &[a, b])
    }

    /// `a * b` where `b`'s shape is a trailing suffix of `a`'s.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.suffix_check("mul_broadcast", a, b)?;
        let mut value = self.value(a).clone();
        let bd = self.value(b).data();
        for chunk in value.data_mut().chunks_mut(n) {
            for (x, y) in chunk.iter_mut().zip(bd) {
                *x *= y;
            }
        }
        self.push_checked("mul_broadcast", value, Op::MulBroadcast(a, b), &[a, b])
    }

    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * s);
        self.push_checked("scalar_mul", value, Op::ScalarMul(a, s), &[a])
    }

    /// Multiplies by a single-element node (e.g. a trainable scalar).
    pub fn scale(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err(
                "scale",
                format!("scalar expected, got {:?}", self.value(s).shape()),
            ));
        }
        let sv = self.value(s).item();
        let value = self.value(a).map(|x| x * sv);
        self.push_checked("scale", value, Op::Scale(a, s), &[a, s])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.push_checked("tanh", value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push_checked("relu", value, Op::Relu(a), &[a])
    }

    fn last_dim(&self, name: &'static str, a: Var) -> Result<usize> {
        match self.value(a).shape().last() {
            Some(&d) if d > 0 => Ok(d),
            _ => Err(shape_err(name, "needs a non-empty last axis")),
        }
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let d = self.last_dim("softmax", a)?;
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_mut(d) {
            softmax_in_place(row);
        }
        self.push_checked("softmax", value, Op::Softmax(a), &[a])
    }

    /// Normalizes each row of the last axis to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let d = self.last_dim("layer_norm", a)?;
        let mut value = self.value(a).clone();
        let mut inv_std = Vec::with_capacity(value.len() / d);
        for row in value.data_mut().chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        self.push_checked("layer_norm", value, Op::LayerNorm { x: a, inv_std }, &[a])
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(shape_err("mean_pool", format!("axis {axis} of {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Array::new(&out_shape, out)?;
        self.push_checked("mean_pool", value, Op::MeanAxis { x: a, axis }, &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let value = Array::scalar(self.value(a).sum());
        self.push_checked("sum", value, Op::SumAll(a), &[a])
    }

    /// Grouped temporal convolution with zero "same" padding.
    ///
    /// `x: [T,V,C]`, `w: [C, C/groups, Γ]` with odd Γ. Output is
    /// `[ceil(T/stride), V, C]`; output frame `t` is centred on input frame
    /// `t·stride`.
    pub fn temporal_conv(&mut self, x: Var, w: Var, groups: usize, stride: usize) -> Result<Var> {
        let (sx, sw) = (self.value(x).shape(), self.value(w).shape());
        if sx.len() != 3 || sw.len() != 3 || groups == 0 || stride == 0 {
            return Err(shape_err("temporal_conv", format!("x {sx:?}, w {sw:?}")));
        }
        let (t_in, v, c) = (sx[0], sx[1], sx[2]);
        let (co, cig, k) = (sw[0], sw[1], sw[2]);
        if c % groups != 0 || co != c || cig != c / groups || k % 2 == 0 {
            return Err(shape_err(
                "temporal_conv",
                format!("x {sx:?}, w {sw:?}, groups {groups}"),
            ));
        }
        let t_out = t_in.div_ceil(stride);
        let pad = (k / 2) as isize;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; t_out * v * c];
        for to in 0..t_out {
            for kk in 0..k {
                let ti = (to * stride) as isize + kk as isize - pad;
                if ti < 0 || ti >= t_in as isize {
                    continue;
                }
                let ti = ti as usize;
                for j in 0..v {
                    let xin = &xd[(ti * v + j) * c..(ti * v + j + 1) * c];
                    let orow = &mut out[(to * v + j) * c..(to * v + j + 1) * c];
                    for (o, ov) in orow.iter_mut().enumerate() {
                        let g0 = (o / cig) * cig;
                        let mut acc = 0.0;
                        for l in 0..cig {
                            acc += wd[(o * cig + l) * k + kk] * xin[g0 + l];
                        }
                        *ov += acc;
                    }
                }
            }
        }
        let value = Array::new(&[t_out, v, c], out)?;
        self.push_checked(
            "temporal_conv",
            value,
            Op::TemporalConv { x, w, groups, stride },
            &[x, w],
        )
    }

    /// Selects rows along axis 0: `out[r] = x[index[r]]`.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.is_empty() {
            return Err(shape_err("gather", "needs rank >= 1"));
        }
        let rows = shape[0];
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(shape_err("gather", format!("index {bad} >= {rows} rows")));
        }
        let inner: usize = shape[1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * inner);
        for &i in index.iter() {
            out.extend_from_slice(&src[i * inner..(i + 1) * inner]);
        }
        let mut out_shape = shape;
        out_shape[0] = index.len();
        let value = Array::new(&out_shape, out)?;
        self.push_checked("gather", value, Op::Gather { x, index }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push_checked("reshape", value, Op::Reshape(x), &[x])
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let value = self.value(x).permute(axes)?;
        self.push_checked("permute", value, Op::Permute { x, axes: axes.to_vec() }, &[x])
    }

    /// `a: [P,R]`, `b: [Q,R]` → `out[i,j,r] = a[i,r] − b[j,r]`.
    pub fn pairwise_sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err("pairwise_sub", format!("{sa:?} vs {sb:?}")));
        }
        let (p, q, r) = (sa[0], sb[0], sa[1]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(p * q * r);
        for i in 0..p {
            for j in 0..q {
                for k in 0..r {
                    out.push(ad[i * r + k] - bd[j * r + k]);
                }
            }
        }
        let value = Array::new(&[p, q, r], out)?;
        self.push_checked("pairwise_sub", value, Op::PairwiseSub(a, b), &[a, b])
    }

    /// Neighbourhood aggregation shared by all channels:
    /// `adj: [V,V]`, `x: [T,V,C]` → `out[t,i,c] = Σ_j adj[i,j]·x[t,j,c]`.
    pub fn node_mix(&mut self, adj: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.value(adj).shape(), self.value(x).shape());
        if sa.len() != 2 || sx.len() != 3 || sa[0] != sx[1] || sa[1] != sx[1] {
            return Err(shape_err("node_mix", format!("adj {sa:?}, x {sx:?}")));
        }
        let (t, v, c) = (sx[0], sx[1], sx[2]);
        let mut out = vec![0.0; t * v * c];
        let (ad, xd) = (self.value(adj).data(), self.value(x).data());
        for f in 0..t {
            let s = f * v * c;
            gemm_acc(ad, &xd[s..s + v * c], &mut out[s..s + v * c], v, v, c);
        }
        let value = Array::new(&[t, v, c], out)?;
        self.push_checked("node_mix", value, Op::NodeMix(adj, x), &[adj, x])
    }

    /// Channel-specific aggregation:
    /// `adj: [C,V,V]`, `x: [T,V,C]` → `out[t,i,c] = Σ_j adj[c,i,j]·x[t,j,c]`.
    pub fn channel_node_mix(&mut self, adj: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.value(adj).shape(), self.value(x).shape());
        if sa.len() != 3 || sx.len() != 3 || sa[0] != sx[2] || sa[1] != sx[1] || sa[2] != sx[1] {
            return Err(shape_err("channel_node_mix", format!("adj {sa:?}, x {sx:?}")));
        }
        let (t, v, c) = (sx[0], sx[1], sx[2]);
        let (ad, xd) = (self.value(adj).data(), self.value(x).data());
        let mut out = vec![0.0; t * v * c];
        for f in 0..t {
            for i in 0..v {
                let orow = &mut out[(f * v + i) * c..(f * v + i + 1) * c];
                for j in 0..v {
                    let xrow = &xd[(f * v + j) * c..(f * v + j + 1) * c];
                    for ch in 0..c {
                        orow[ch] += ad[(ch * v + i) * v + j] * xrow[ch];
                    }
                }
            }
        }
        let value = Array::new(&[t, v, c], out)?;
        self.push_checked("channel_node_mix", value, Op::ChannelNodeMix(adj, x), &[adj, x])
    }

    /// Cross-entropy of a logit vector against a class label; returns a scalar.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let l = self.value(logits);
        if l.ndim() != 1 || label >= l.len() {
            return Err(shape_err(
                "cross_entropy",
                format!("logits {:?}, label {label}", l.shape()),
            ));
        }
        let mut probs = l.data().to_vec();
        softmax_in_place(&mut probs);
        let max = l.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let value = Array::scalar(lse - l.data()[label]);
        self.push_checked(
            "cross_entropy",
            value,
            Op::CrossEntropy { logits, label, probs },
            &[logits],
        )
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(shape_err(
                "backward",
                format!("output must be scalar, got {:?}", self.value(output).shape()),
            ));
        }
        let mut grads: Vec<Option<Array>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array::full(self.value(output).shape(), 1.0));
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let mut params: Vec<_> = self.bound.iter().map(|(&p, &v)| (p, v)).collect();
        params.sort_by_key(|&(p, _)| p);
        Ok(Gradients { grads, params })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &Array, grads: &mut [Option<Array>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let ga = acc(grads, *a, av.shape());
                    gemm_nt_acc(g.data(), bv.data(), ga.data_mut(), m, n, k);
                }
                if self.wants(*b) {
                    let gb = acc(grads, *b, bv.shape());
                    gemm_tn_acc(av.data(), g.data(), gb.data_mut(), k, m, n);
                }
            }
            Op::BatchedMatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (bs, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                if self.wants(*a) {
                    let ga = acc(grads, *a, av.shape());
                    for i in 0..bs {
                        gemm_nt_acc(
                            &g.data()[i * m * n..(i + 1) * m * n],
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            &mut ga.data_mut()[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                }
                if self.wants(*b) {
                    let gb = acc(grads, *b, bv.shape());
                    for i in 0..bs {
                        gemm_tn_acc(
                            &av.data()[i * m * k..(i + 1) * m * k],
                            &g.data()[i * m * n..(i + 1) * m * n],
                            &mut gb.data_mut()[i * k * n..(i + 1) * k * n],
                            k,
                            m,
                            n,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        acc(grads, *v, g.shape()).add_assign(g);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if self.wants(*v) {
                        let o = self.value(*other).data();
                        let gv = acc(grads, *v, g.shape());
                        for ((d, gi), oi) in gv.data_mut().iter_mut().zip(g.data()).zip(o) {
                            *d += gi * oi;
                        }
                    }
                }
            }
            Op::AddBroadcast(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, g.shape()).add_assign(g);
                }
                if self.wants(*b) {
                    let bs = self.value(*b).shape();
                    let n = self.value(*b).len();
                    let gb = acc(grads, *b, bs);
                    for chunk in g.data().chunks(n) {
                        for (d, x) in gb.data_mut().iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                }
            }
            Op::MulBroadcast(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let n = bv.len();
                if self.wants(*a) {
                    let ga = acc(grads, *a, av.shape());
                    for (gc, oc) in ga.data_mut().chunks_mut(n).zip(g.data().chunks(n)) {
                        for ((d, gi), bi) in gc.iter_mut().zip(oc).zip(bv.data()) {
                            *d += gi * bi;
                        }
                    }
                }
                if self.wants(*b) {
                    let gb = acc(grads, *b, bv.shape());
                    for (gc, ac) in g.data().chunks(n).zip(av.data().chunks(n)) {
                        for ((d, gi), ai) in gb.data_mut().iter_mut().zip(gc).zip(ac) {
                            *d += gi * ai;
                        }
                    }
                }
            }
            Op::ScalarMul(a, s) => {
                if self.wants(*a) {
                    acc(grads, *a, g.shape()).scaled_add_assign(*s, g);
                }
            }
            Op::Scale(a, s) => {
                let sv = self.value(*s).item();
                if self.wants(*a) {
                    acc(grads, *a, g.shape()).scaled_add_assign(sv, g);
                }
                if self.wants(*s) {
                    let dot: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                    let ss = self.value(*s).shape();
                    acc(grads, *s, ss).data_mut()[0] += dot;
                }
            }
            Op::Tanh(a) => {
                if self.wants(*a) {
                    let ga = acc(grads, *a, g.shape());
                    for ((d, gi), yi) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let xs = self.value(*a).data();
                    let ga = acc(grads, *a, g.shape());
                    for ((d, gi), xi) in ga.data_mut().iter_mut().zip(g.data()).zip(xs) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if self.wants(*a) {
                    let d = *y.shape().last().unwrap();
                    let ga = acc(grads, *a, g.shape());
                    for ((gac, gc), yc) in ga
                        .data_mut()
                        .chunks_mut(d)
                        .zip(g.data().chunks(d))
                        .zip(y.data().chunks(d))
                    {
                        let dot: f64 = gc.iter().zip(yc).map(|(x, z)| x * z).sum();
                        for ((o, gi), yi) in gac.iter_mut().zip(gc).zip(yc) {
                            *o += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if self.wants(*x) {
                    let d = *y.shape().last().unwrap();
                    let inv_d = 1.0 / d as f64;
                    let gx = acc(grads, *x, g.shape());
                    for (((gxc, gc), yc), is) in gx
                        .data_mut()
                        .chunks_mut(d)
                        .zip(g.data().chunks(d))
                        .zip(y.data().chunks(d))
                        .zip(inv_std)
                    {
                        let mg = gc.iter().sum::<f64>() * inv_d;
                        let mgy = gc.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() * inv_d;
                        for ((o, gi), yi) in gxc.iter_mut().zip(gc).zip(yc) {
                            *o += is * (gi - mg - yi * mgy);
                        }
                    }
                }
            }
            Op::MeanAxis { x, axis } => {
                if self.wants(*x) {
                    let shape = self.value(*x).shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let n = shape[*axis];
                    let inner: usize = shape[axis + 1..].iter().product();
                    let inv = 1.0 / n as f64;
                    let gx = acc(grads, *x, shape);
                    let gd = gx.data_mut();
                    for o in 0..outer {
                        for k in 0..n {
                            let base = (o * n + k) * inner;
                            for i in 0..inner {
                                gd[base + i] += g.data()[o * inner + i] * inv;
                            }
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if self.wants(*a) {
                    let gv = g.item();
                    let sh = self.value(*a).shape();
                    acc(grads, *a, sh).data_mut().iter_mut().for_each(|d| *d += gv);
                }
            }
            Op::TemporalConv { x, w, groups, stride } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (t_in, v, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let k = wv.shape()[2];
                let cig = c / groups;
                let t_out = g.shape()[0];
                let pad = (k / 2) as isize;
                let want_x = self.wants(*x);
                let want_w = self.wants(*w);
                let mut gx = want_x.then(|| vec![0.0; xv.len()]);
                let mut gw = want_w.then(|| vec![0.0; wv.len()]);
                for to in 0..t_out {
                    for kk in 0..k {
                        let ti = (to * stride) as isize + kk as isize - pad;
                        if ti < 0 || ti >= t_in as isize {
                            continue;
                        }
                        let ti = ti as usize;
                        for j in 0..v {
                            let xo = (ti * v + j) * c;
                            let go = (to * v + j) * c;
                            for o in 0..c {
                                let gi = g.data()[go + o];
                                if gi == 0.0 {
                                    continue;
                                }
                                let g0 = (o / cig) * cig;
                                for l in 0..cig {
                                    let widx = (o * cig + l) * k + kk;
                                    if let Some(gx) = gx.as_mut() {
                                        gx[xo + g0 + l] += gi * wv.data()[widx];
                                    }
                                    if let Some(gw) = gw.as_mut() {
                                        gw[widx] += gi * xv.data()[xo + g0 + l];
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = gx {
                    add_raw(acc(grads, *x, xv.shape()), &gx);
                }
                if let Some(gw) = gw {
                    add_raw(acc(grads, *w, wv.shape()), &gw);
                }
            }
            Op::Gather { x, index } => {
                if self.wants(*x) {
                    let shape = self.value(*x).shape();
                    let inner: usize = shape[1..].iter().product();
                    let gx = acc(grads, *x, shape);
                    let gd = gx.data_mut();
                    for (r, &i) in index.iter().enumerate() {
                        for (d, s) in gd[i * inner..(i + 1) * inner]
                            .iter_mut()
                            .zip(&g.data()[r * inner..(r + 1) * inner])
                        {
                            *d += s;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    let sh = self.value(*x).shape();
                    add_raw(acc(grads, *x, sh), g.data());
                }
            }
            Op::Permute { x, axes } => {
                if self.wants(*x) {
                    let mut inv = vec![0; axes.len()];
                    for (i, &a) in axes.iter().enumerate() {
                        inv[a] = i;
                    }
                    let back = g.permute(&inv).expect("inverse permutation");
                    let sh = self.value(*x).shape();
                    add_raw(acc(grads, *x, sh), back.data());
                }
            }
            Op::PairwiseSub(a, b) => {
                let (p, q, r) = (g.shape()[0], g.shape()[1], g.shape()[2]);
                if self.wants(*a) {
                    let ga = acc(grads, *a, &[p, r]);
                    let gd = ga.data_mut();
                    for i in 0..p {
                        for j in 0..q {
                            for k in 0..r {
                                gd[i * r + k] += g.data()[(i * q + j) * r + k];
                            }
                        }
                    }
                }
                if self.wants(*b) {
                    let gb = acc(grads, *b, &[q, r]);
                    let gd = gb.data_mut();
                    for i in 0..p {
                        for j in 0..q {
                            for k in 0..r {
                                gd[j * r + k] -= g.data()[(i * q + j) * r + k];
                            }
                        }
                    }
                }
            }
            Op::NodeMix(adj, x) => {
                let (av, xv) = (self.value(*adj), self.value(*x));
                let (t, v, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                if self.wants(*x) {
                    let gx = acc(grads, *x, xv.shape());
                    for f in 0..t {
                        let s = f * v * c;
                        gemm_tn_acc(
                            av.data(),
                            &g.data()[s..s + v * c],
                            &mut gx.data_mut()[s..s + v * c],
                            v,
                            v,
                            c,
                        );
                    }
                }
                if self.wants(*adj) {
                    let ga = acc(grads, *adj, av.shape());
                    for f in 0..t {
                        let s = f * v * c;
                        gemm_nt_acc(
                            &g.data()[s..s + v * c],
                            &xv.data()[s..s + v * c],
                            ga.data_mut(),
                            v,
                            c,
                            v,
                        );
                    }
                }
            }
            Op::ChannelNodeMix(adj, x) => {
                let (av, xv) = (self.value(*adj), self.value(*x));
                let (t, v, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let want_x = self.wants(*x);
                let want_a = self.wants(*adj);
                let mut gx = want_x.then(|| vec![0.0; xv.len()]);
                let mut ga = want_a.then(|| vec![0.0; av.len()]);
                for f in 0..t {
                    for i in 0..v {
                        let grow = &g.data()[(f * v + i) * c..(f * v + i + 1) * c];
                        for j in 0..v {
                            let xo = (f * v + j) * c;
                            for ch in 0..c {
                                let aidx = (ch * v + i) * v + j;
                                if let Some(gx) = gx.as_mut() {
                                    gx[xo + ch] += av.data()[aidx] * grow[ch];
                                }
                                if let Some(ga) = ga.as_mut() {
                                    ga[aidx] += grow[ch] * xv.data()[xo + ch];
                                }
                            }
                        }
                    }
                }
                if let Some(gx) = gx {
                    add_raw(acc(grads, *x, xv.shape()), &gx);
                }
                if let Some(ga) = ga {
                    add_raw(acc(grads, *adj, av.shape()), &ga);
                }
            }
            Op::CrossEntropy { logits, label, probs } => {
                if self.wants(*logits) {
                    let gv = g.item();
                    let gl = acc(grads, *logits, &[probs.len()]);
                    for (i, (d, p)) in gl.data_mut().iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *label { 1.0 } else { 0.0 };
                        *d += gv * (p - onehot);
                    }
                }
            }
        }
    }
}

fn acc<'a>(grads: &'a mut [Option<Array>], v: Var, shape: &[usize]) -> &'a mut Array {
    grads[v.0].get_or_insert_with(|| Array::zeros(shape))
}

fn add_raw(dst: &mut Array, src: &[f64]) {
    for (d, s) in dst.data_mut().iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}
