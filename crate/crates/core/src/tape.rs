//! Reverse-mode gradient tape over whole tensors.
//!
//! A [`Tape`] records every primitive application in creation order, which
//! is a topological order, so the backward sweep is a single reverse pass
//! over the node list. Gradients of intermediates are dropped as soon as
//! they have been pushed to their inputs; only parameter gradients survive.
//!
//! Most primitives work on "row" matrices `[rows, cols]` and act over the
//! trailing axis. Anything with more than two axes is treated as
//! `[product of leading axes, last axis]`.
//!
//! Quantization is handled by two mode-dependent primitives:
//! [`Tape::pass_through`] and [`Tape::detach`]. Under
//! [`GradMode::StraightThrough`] they implement the usual straight-through
//! estimator and stop-gradient. Under [`GradMode::Exact`] both become
//! transparent, so the tape differentiates exactly the function that the
//! forward pass computes; that is the mode gradient checks run in.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{pairwise_col_sums, pairwise_sum};
use crate::{Error, Real, Result, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradMode {
    /// Quantizers pass gradients straight through to their continuous input;
    /// `detach` blocks gradients. Used for training.
    #[default]
    StraightThrough,
    /// `pass_through` routes gradients to its forward value and `detach` is
    /// the identity, giving the true derivative of the forward computation.
    Exact,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Tanh(Var),
    Concat(Box<[Var]>),
    SliceCols { src: Var, start: usize },
    GatherCols { src: Var, idx: Box<[usize]> },
    GatherRows { src: Var, idx: Box<[usize]> },
    ExpandGroups { src: Var, group: usize },
    MeanGroups { src: Var, group: usize },
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    PassThrough { value: Var, carrier: Var },
    Detach(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softplus(..) => "softplus",
            Op::Tanh(..) => "tanh",
            Op::Concat(..) => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherCols { .. } => "gather_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::ExpandGroups { .. } => "expand_groups",
            Op::MeanGroups { .. } => "mean_groups",
            Op::SumCols(..) => "sum_cols",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::PassThrough { .. } => "pass_through",
            Op::Detach(..) => "detach",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    param: Option<usize>,
}

/// Gradient buffers for registered parameters, indexed by parameter id.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, param: usize) -> Option<&Tensor<T>> {
        self.grads.get(param).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Gradients as dense tensors; unused parameters get zeros of `shapes[i]`.
    pub fn into_dense(self, shapes: &[&[usize]]) -> Vec<Tensor<T>> {
        let mut grads = self.grads;
        grads.resize(shapes.len(), None);
        grads
            .into_iter()
            .zip(shapes)
            .map(|(g, s)| g.unwrap_or_else(|| Tensor::zeros(s)))
            .collect()
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    mode: GradMode,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self::with_mode(GradMode::StraightThrough)
    }

    pub fn with_mode(mode: GradMode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> GradMode {
        self.mode
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op,
            value,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf, t)
    }

    /// Trainable leaf; its gradient is reported under `id`.
    pub fn param(&mut self, id: usize, t: Tensor<T>) -> Var {
        let v = self.push(Op::Leaf, t);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// `x · wᵀ + b` over the trailing axis of `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.shape().is_empty() || xv.cols() != wv.shape()[1] {
            return Err(Error::dim("linear", xv.shape(), wv.shape()));
        }
        let (dout, din) = (wv.shape()[0], wv.shape()[1]);
        if let Some(b) = b {
            if self.value(b).shape() != [dout] {
                return Err(Error::dim("linear bias", self.value(b).shape(), &[dout]));
            }
        }
        let rows = xv.rows();
        // wᵀ so the inner loop is a contiguous axpy over outputs.
        let mut wt = vec![T::zero(); din * dout];
        for o in 0..dout {
            for i in 0..din {
                wt[i * dout + o] = wv.data()[o * din + i];
            }
        }
        let mut out = vec![T::zero(); rows * dout];
        let bias = b.map(|b| self.value(b).data());
        for r in 0..rows {
            let orow = &mut out[r * dout..(r + 1) * dout];
            if let Some(bias) = bias {
                orow.copy_from_slice(bias);
            }
            let xrow = &xv.data()[r * din..(r + 1) * din];
            for (i, &xi) in xrow.iter().enumerate() {
                let wrow = &wt[i * dout..(i + 1) * dout];
                for (o, &wi) in orow.iter_mut().zip(wrow) {
                    *o += xi * wi;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::Linear { x, w, b }, value))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(name, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    /// `a + c` elementwise for a constant `c`.
    pub fn offset(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::Offset(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.exp());
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln());
        self.push(Op::Log(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(Op::Tanh(a), v)
    }

    /// Concatenate along the trailing (channel) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rows = self.value(first).rows();
        let lead: Vec<usize> = {
            let s = self.shape(first);
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let mut total = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows || v.shape().is_empty() {
                return Err(Error::dim("concat", self.shape(first), v.shape()));
            }
            total += v.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::Concat(parts.into()), value))
    }

    /// Columns `start..start + len` of the trailing axis.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(src);
        let cols = v.cols();
        if start + len > cols || v.shape().is_empty() {
            return Err(Error::dim("slice_cols", v.shape(), &[start, len]));
        }
        let rows = v.rows();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v.row(r)[start..start + len]);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::SliceCols { src, start }, value))
    }

    /// `out[.., j] = src[.., idx[j]]`.
    pub fn gather_cols(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(src);
        let cols = v.cols();
        if v.shape().is_empty() || idx.iter().any(|&i| i >= cols) {
            return Err(Error::Contract(format!(
                "gather_cols index out of range for {} columns",
                cols
            )));
        }
        let rows = v.rows();
        let mut out = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            let row = v.row(r);
            out.extend(idx.iter().map(|&i| row[i]));
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = idx.len();
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::GatherCols { src, idx: idx.into() }, value))
    }

    /// Rows of a `[K, D]` table selected by index, giving `[idx.len(), D]`.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(src);
        if v.shape().len() != 2 || idx.iter().any(|&i| i >= v.shape()[0]) {
            return Err(Error::Contract(format!(
                "gather_rows index out of range for table {:?}",
                v.shape()
            )));
        }
        let d = v.cols();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(v.row(i));
        }
        let value = Tensor::new(vec![idx.len(), d], out)?;
        Ok(self.push(Op::GatherRows { src, idx: idx.into() }, value))
    }

    /// Repeat each row of `[G, D]` `group` times, giving `[G * group, D]`.
    pub fn expand_groups(&mut self, src: Var, group: usize) -> Result<Var> {
        let v = self.value(src);
        if v.shape().len() != 2 || group == 0 {
            return Err(Error::dim("expand_groups", v.shape(), &[group]));
        }
        let (g, d) = (v.shape()[0], v.shape()[1]);
        let mut out = Vec::with_capacity(g * group * d);
        for r in 0..g {
            for _ in 0..group {
                out.extend_from_slice(v.row(r));
            }
        }
        let value = Tensor::new(vec![g * group, d], out)?;
        Ok(self.push(Op::ExpandGroups { src, group }, value))
    }

    /// Mean over consecutive blocks of `group` rows: `[G * group, D]` to `[G, D]`.
    /// On a single feature map in row layout this is spatial average pooling.
    pub fn mean_groups(&mut self, src: Var, group: usize) -> Result<Var> {
        let v = self.value(src);
        if v.shape().len() != 2 || group == 0 || v.shape()[0] % group != 0 {
            return Err(Error::dim("mean_groups", v.shape(), &[group]));
        }
        let d = v.cols();
        let g = v.shape()[0] / group;
        let n = T::lit(group as f64);
        let mut out = Vec::with_capacity(g * d);
        for k in 0..g {
            let block = &v.data()[k * group * d..(k + 1) * group * d];
            out.extend(pairwise_col_sums(block, d).into_iter().map(|s| s / n));
        }
        let value = Tensor::new(vec![g, d], out)?;
        Ok(self.push(Op::MeanGroups { src, group }, value))
    }

    /// Sum over the trailing axis: `[N, D]` to `[N]`.
    pub fn sum_cols(&mut self, src: Var) -> Result<Var> {
        let v = self.value(src);
        if v.shape().is_empty() {
            return Err(Error::dim("sum_cols", v.shape(), &[1]));
        }
        let out: Vec<T> = (0..v.rows()).map(|r| pairwise_sum(v.row(r))).collect();
        let shape = v.shape()[..v.shape().len() - 1].to_vec();
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::SumCols(src), value))
    }

    pub fn sum(&mut self, src: Var) -> Var {
        let s = pairwise_sum(self.value(src).data());
        self.push(Op::Sum(src), Tensor::scalar(s))
    }

    pub fn mean(&mut self, src: Var) -> Var {
        let v = self.value(src);
        let s = pairwise_sum(v.data()) / T::lit(v.len().max(1) as f64);
        self.push(Op::Mean(src), Tensor::scalar(s))
    }

    /// Forward value of `value`; the gradient goes to `carrier` in
    /// straight-through mode and to `value` in exact mode.
    pub fn pass_through(&mut self, value: Var, carrier: Var) -> Result<Var> {
        if self.shape(value) != self.shape(carrier) {
            return Err(Error::dim("pass_through", self.shape(value), self.shape(carrier)));
        }
        let v = self.value(value).clone();
        Ok(self.push(Op::PassThrough { value, carrier }, v))
    }

    /// Stop-gradient (identity in exact mode).
    pub fn detach(&mut self, a: Var) -> Var {
        let v = self.value(a).clone();
        self.push(Op::Detach(a), v)
    }

    /// Mean squared error between two same-shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Accumulates `∂loss/∂param` for every parameter leaf reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n_params = self
            .nodes
            .iter()
            .filter_map(|n| n.param)
            .max()
            .map_or(0, |m| m + 1);
        let mut params: Vec<Option<Tensor<T>>> = vec![None; n_params];
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![T::one()])?);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !g.is_finite() {
                return Err(Error::Numeric(format!(
                    "gradient of {} (node {})",
                    node.op.name(),
                    i
                )));
            }
            if let Some(p) = node.param {
                accumulate(&mut params[p], g);
                continue;
            }
            self.propagate(i, g, &mut grads)?;
        }
        Ok(Gradients { grads: params })
    }

    fn propagate(&self, i: usize, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        let name = node.op.name();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (dout, din) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                let mut dx = vec![T::zero(); rows * din];
                for r in 0..rows {
                    let grow = &g.data()[r * dout..(r + 1) * dout];
                    let dxrow = &mut dx[r * din..(r + 1) * din];
                    for (o, &go) in grow.iter().enumerate() {
                        let wrow = &wv.data()[o * din..(o + 1) * din];
                        for (d, &wi) in dxrow.iter_mut().zip(wrow) {
                            *d += go * wi;
                        }
                    }
                }
                let dw = outer_accumulate(g.data(), xv.data(), dout, din);
                if let Some(b) = b {
                    let db = pairwise_col_sums(g.data(), dout);
                    send(grads, b.0, name, Tensor::from_vec(db))?;
                }
                send(grads, w.0, name, Tensor::new(vec![dout, din], dw)?)?;
                send(grads, x.0, name, Tensor::new(xv.shape().to_vec(), dx)?)?;
            }
            Op::Add(a, b) => {
                send(grads, a.0, name, g.clone())?;
                send(grads, b.0, name, g)?;
            }
            Op::Sub(a, b) => {
                send(grads, b.0, name, g.map(|v| -v))?;
                send(grads, a.0, name, g)?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = zip(&g, bv, |gi, bi| gi * bi);
                let gb = zip(&g, av, |gi, ai| gi * ai);
                send(grads, a.0, name, ga)?;
                send(grads, b.0, name, gb)?;
            }
            Op::Scale(a, c) => {
                let c = *c;
                send(grads, a.0, name, g.map(|v| v * c))?;
            }
            Op::Offset(a) => send(grads, a.0, name, g)?,
            Op::Exp(a) => send(grads, a.0, name, zip(&g, y, |gi, yi| gi * yi))?,
            Op::Log(a) => {
                let av = self.value(*a);
                send(grads, a.0, name, zip(&g, av, |gi, ai| gi / ai))?;
            }
            Op::Softplus(a) => {
                let av = self.value(*a);
                send(grads, a.0, name, zip(&g, av, |gi, ai| gi * sigmoid(ai)))?;
            }
            Op::Tanh(a) => {
                accumulate(
                    &mut grads[a.0],
                    zip(&g, y, |gi, yi| gi * (T::one() - yi * yi)),
                );
            }
            Op::Concat(parts) => {
                let rows = y.rows();
                let total = y.cols();
                let mut start = 0;
                for p in parts.iter() {
                    let pv = self.value(*p);
                    let c = pv.cols();
                    let mut out = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        out.extend_from_slice(&g.data()[r * total + start..r * total + start + c]);
                    }
                    send(grads, p.0, name, Tensor::new(pv.shape().to_vec(), out)?)?;
                    start += c;
                }
            }
            Op::SliceCols { src, start } => {
                let sv = self.value(*src);
                let (cols, len) = (sv.cols(), y.cols());
                let mut out = vec![T::zero(); sv.len()];
                for r in 0..sv.rows() {
                    out[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                send(grads, src.0, name, Tensor::new(sv.shape().to_vec(), out)?)?;
            }
            Op::GatherCols { src, idx } => {
                let sv = self.value(*src);
                let cols = sv.cols();
                let k = idx.len();
                let mut out = vec![T::zero(); sv.len()];
                for r in 0..sv.rows() {
                    for (j, &c) in idx.iter().enumerate() {
                        out[r * cols + c] += g.data()[r * k + j];
                    }
                }
                send(grads, src.0, name, Tensor::new(sv.shape().to_vec(), out)?)?;
            }
            Op::GatherRows { src, idx } => {
                let sv = self.value(*src);
                let d = sv.cols();
                let mut out = vec![T::zero(); sv.len()];
                for (j, &r) in idx.iter().enumerate() {
                    for (o, &gv) in out[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(&g.data()[j * d..(j + 1) * d])
                    {
                        *o += gv;
                    }
                }
                send(grads, src.0, name, Tensor::new(sv.shape().to_vec(), out)?)?;
            }
            Op::ExpandGroups { src, group } => {
                let sv = self.value(*src);
                let d = sv.cols();
                let mut out = Vec::with_capacity(sv.len());
                for k in 0..sv.shape()[0] {
                    let block = &g.data()[k * group * d..(k + 1) * group * d];
                    out.extend(pairwise_col_sums(block, d));
                }
                send(grads, src.0, name, Tensor::new(sv.shape().to_vec(), out)?)?;
            }
            Op::MeanGroups { src, group } => {
                let sv = self.value(*src);
                let n = T::lit(*group as f64);
                let mut out = Vec::with_capacity(sv.len());
                for k in 0..y.shape()[0] {
                    let row: Vec<T> = g.row(k).iter().map(|&v| v / n).collect();
                    for _ in 0..*group {
                        out.extend_from_slice(&row);
                    }
                }
                send(grads, src.0, name, Tensor::new(sv.shape().to_vec(), out)?)?;
            }
            Op::SumCols(src) => {
                let sv = self.value(*src);
                let d = sv.cols();
                let mut out = Vec::with_capacity(sv.len());
                for &gv in g.data() {
                    out.extend(core::iter::repeat(gv).take(d));
                }
                send(grads, src.0, name, Tensor::new(sv.shape().to_vec(), out)?)?;
            }
            Op::Sum(src) => {
                let sv = self.value(*src);
                send(grads, src.0, name, Tensor::full(sv.shape(), g.item()))?;
            }
            Op::Mean(src) => {
                let sv = self.value(*src);
                let v = g.item() / T::lit(sv.len().max(1) as f64);
                send(grads, src.0, name, Tensor::full(sv.shape(), v))?;
            }
            Op::PassThrough { value, carrier } => match self.mode {
                GradMode::StraightThrough => send(grads, carrier.0, name, g)?,
                GradMode::Exact => send(grads, value.0, name, g)?,
            },
            Op::Detach(a) => {
                if self.mode == GradMode::Exact {
                    send(grads, a.0, name, g)?;
                }
            }
        }
        Ok(())
    }
}

fn send<T: Real>(
    grads: &mut [Option<Tensor<T>>],
    to: usize,
    op: &'static str,
    g: Tensor<T>,
) -> Result<()> {
    if !g.is_finite() {
        return Err(Error::Numeric(format!("backward of {op} (input node {to})")));
    }
    accumulate(&mut grads[to], g);
    Ok(())
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// `Σ_r g[r]ᵀ x[r]` as a `[dout, din]` matrix, pairwise over rows.
fn outer_accumulate<T: Real>(g: &[T], x: &[T], dout: usize, din: usize) -> Vec<T> {
    const LEAF: usize = 64;
    let rows = if dout == 0 { 0 } else { g.len() / dout };
    if rows <= LEAF {
        let mut acc = vec![T::zero(); dout * din];
        for r in 0..rows {
            let xrow = &x[r * din..(r + 1) * din];
            for (o, &go) in g[r * dout..(r + 1) * dout].iter().enumerate() {
                if go == T::zero() {
                    continue;
                }
                for (a, &xi) in acc[o * din..(o + 1) * din].iter_mut().zip(xrow) {
                    *a += go * xi;
                }
            }
        }
        acc
    } else {
        let mid = rows / 2;
        let mut lo = outer_accumulate(&g[..mid * dout], &x[..mid * din], dout, din);
        let hi = outer_accumulate(&g[mid * dout..], &x[mid * din..], dout, din);
        for (a, b) in lo.iter_mut().zip(hi) {
            *a += b;
        }
        lo
    }
}

#[inline]
pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
