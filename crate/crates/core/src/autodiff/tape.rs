//! Reverse-mode differentiation over 2-D tensors.
//!
//! Every op appends a node holding its forward value and the indices of its
//! inputs. Inputs always precede outputs, so the node list is already in
//! topological order and `backward` is a single reverse sweep.

use super::tensor::{matmul_into, Real, Tensor};
use crate::error::{Error, Result};

/// Pre-softmax value for masked positions.
pub const MASK_NEG: f64 = -1e30;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Affine(Var, T),
    Concat(Vec<Var>, Axis),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    MaxAxis(Var, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    SoftmaxRows(Var),
    Transpose(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    SumAll(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn dims<T: Real>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn classify(a: (usize, usize), b: (usize, usize)) -> Option<Bcast> {
    if a == b {
        Some(Bcast::Same)
    } else if b == (1, 1) {
        Some(Bcast::Scalar)
    } else if b.0 == 1 && b.1 == a.1 {
        Some(Bcast::Row)
    } else if b.1 == 1 && b.0 == a.0 {
        Some(Bcast::Col)
    } else {
        None
    }
}

#[inline]
fn bidx(b: Bcast, cols: usize, i: usize) -> usize {
    match b {
        Bcast::Same => i,
        Bcast::Row => i % cols,
        Bcast::Col => i / cols,
        Bcast::Scalar => 0,
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, shape: &[usize], add: impl FnOnce(&mut [T])) {
    let t = slot.get_or_insert_with(|| Tensor::zeros(shape));
    add(t.data_mut());
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if !t.is_matrix() {
            return Err(Error::shape(op, t.shape(), &[]));
        }
        Ok(dims(t))
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.matrix(a, "matmul")?;
        let (br, bc) = self.matrix(b, "matmul")?;
        if ac != br {
            return Err(Error::shape(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let (out, m, n) = matmul_into(
            self.value(a).data(),
            (ar, ac),
            false,
            self.value(b).data(),
            (br, bc),
            false,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, Bcast)> {
        let ad = self.matrix(a, name)?;
        let bd = self.matrix(b, name)?;
        let bc = classify(ad, bd)
            .ok_or_else(|| Error::shape(name, self.value(a).shape(), self.value(b).shape()))?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let out: Vec<T> = av
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[bidx(bc, ad.1, i)]))
            .collect();
        Ok((Tensor::new(vec![ad.0, ad.1], out)?, bc))
    }

    /// `a + b`; `b` may be `[1×c]`, `[r×1]` or `[1×1]` and is broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b, bc), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b, bc), rg))
    }

    /// Elementwise product with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, bc) = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b, bc), rg))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: T, shift: T) -> Var {
        let t = self.value(a).map(|x| scale * x + shift);
        let rg = self.rg(&[a]);
        self.push(t, Op::Affine(a, scale), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidInput("concat of zero tensors".into()));
        }
        let first = self.matrix(parts[0], "concat")?;
        let mut total = 0;
        for &p in parts {
            let d = self.matrix(p, "concat")?;
            let ok = match axis {
                Axis::Rows => d.1 == first.1,
                Axis::Cols => d.0 == first.0,
            };
            if !ok {
                return Err(Error::shape(
                    "concat",
                    self.value(parts[0]).shape(),
                    self.value(p).shape(),
                ));
            }
            total += match axis {
                Axis::Rows => d.0,
                Axis::Cols => d.1,
            };
        }
        let value = match axis {
            Axis::Rows => {
                let mut data = Vec::with_capacity(total * first.1);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::new(vec![total, first.1], data)?
            }
            Axis::Cols => {
                let rows = first.0;
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
                Tensor::new(vec![rows, total], data)?
            }
        };
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let t = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            Op::Relu(a),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    /// Max over `Axis::Rows` gives `[1×c]`, over `Axis::Cols` gives `[r×1]`.
    /// Ties resolve to the first maximal element.
    pub fn max_over_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let (r, c) = self.matrix(a, "max_over_axis")?;
        if r == 0 || c == 0 {
            return Err(Error::shape("max_over_axis", &[r, c], &[]));
        }
        let v = self.value(a);
        let (out, arg): (Vec<T>, Vec<usize>) = match axis {
            Axis::Rows => (0..c)
                .map(|j| {
                    let mut best = 0;
                    for i in 1..r {
                        if v.get(i, j) > v.get(best, j) {
                            best = i;
                        }
                    }
                    (v.get(best, j), best * c + j)
                })
                .unzip(),
            Axis::Cols => (0..r)
                .map(|i| {
                    let mut best = 0;
                    for j in 1..c {
                        if v.get(i, j) > v.get(i, best) {
                            best = j;
                        }
                    }
                    (v.get(i, best), i * c + best)
                })
                .unzip(),
        };
        let shape = match axis {
            Axis::Rows => vec![1, c],
            Axis::Cols => vec![r, 1],
        };
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MaxAxis(a, arg), rg))
    }

    /// Column-wise max within consecutive row segments of the given lengths.
    /// Output is `[segments.len() × c]`.
    pub fn segment_max(&mut self, a: Var, segments: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix(a, "segment_max")?;
        if segments.iter().sum::<usize>() != r || segments.contains(&0) {
            return Err(Error::shape("segment_max", &[r, c], segments));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(segments.len() * c);
        let mut arg = Vec::with_capacity(segments.len() * c);
        let mut start = 0;
        for &len in segments {
            for j in 0..c {
                let mut best = start;
                for i in start + 1..start + len {
                    if v.get(i, j) > v.get(best, j) {
                        best = i;
                    }
                }
                out.push(v.get(best, j));
                arg.push(best * c + j);
            }
            start += len;
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(vec![segments.len(), c], out)?,
            Op::SegmentMax(a, arg),
            rg,
        ))
    }

    /// Row-wise softmax. `mask`, if given, has the input's shape with 1 for
    /// kept and 0 for excluded entries; excluded entries are pushed to
    /// [`MASK_NEG`] before normalizing. A row with every entry excluded
    /// yields all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Tensor<T>>) -> Result<Var> {
        let (r, c) = self.matrix(a, "softmax_rows")?;
        if let Some(m) = mask {
            if m.shape() != [r, c] {
                return Err(Error::shape("softmax_rows", &[r, c], m.shape()));
            }
        }
        let v = self.value(a);
        let neg = T::of(MASK_NEG);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = v.row_slice(i);
            let kept = |j: usize| mask.is_none_or(|m| m.get(i, j) != T::zero());
            if !(0..c).any(kept) {
                continue;
            }
            let logits: Vec<T> = (0..c)
                .map(|j| if kept(j) { row[j] } else { row[j] + neg })
                .collect();
            let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
            let sum: T = exps.iter().copied().sum();
            for j in 0..c {
                out[i * c + j] = exps[j] / sum;
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::SoftmaxRows(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix(a, "transpose")?;
        let v = self.value(a);
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(v.get(i, j));
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix(a, "slice_rows")?;
        if start + len > r {
            return Err(Error::shape("slice_rows", &[r, c], &[start, len]));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(vec![len, c], data)?,
            Op::SliceRows(a, start),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.matrix(a, "slice_cols")?;
        if start + len > c {
            return Err(Error::shape("slice_cols", &[r, c], &[start, len]));
        }
        let v = self.value(a);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&v.row_slice(i)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(vec![r, len], data)?,
            Op::SliceCols(a, start),
            rg,
        ))
    }

    /// Row lookup: output row `k` is input row `indices[k]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix(table, "gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", &[r, c], &[bad]));
        }
        let v = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(v.row_slice(i));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(vec![indices.len(), c], data)?,
            Op::GatherRows(table, indices.to_vec()),
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Sum of all elements as a `[1×1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), rg)
    }

    /// Reverse sweep. Each seed supplies the upstream gradient for one node.
    pub fn backward(&self, seeds: &[(Var, Tensor<T>)]) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            let shape = self.value(*v).shape();
            if g.shape() != shape {
                return Err(Error::shape("backward seed", shape, g.shape()));
            }
            accumulate(&mut grads[v.0], shape, |d| {
                for (x, &y) in d.iter_mut().zip(g.data()) {
                    *x += y;
                }
            });
        }
        let top = seeds.iter().map(|(v, _)| v.0 + 1).max().unwrap_or(0);
        for i in (0..top).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            self.propagate(i, g, lower);
        }
        Ok(Gradients { grads })
    }

    /// Convenience: backward from a scalar output with seed 1.
    pub fn backward_scalar(&self, out: Var) -> Result<Gradients<T>> {
        let shape = self.value(out).shape().to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::shape("backward_scalar", &shape, &[1, 1]));
        }
        self.backward(&[(out, Tensor::full(&shape, T::one()))])
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let shape_of = |v: Var| self.nodes[v.0].value.shape().to_vec();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if want(*a) {
                    let (d, _, _) = matmul_into(gd, dims(g), false, bv.data(), dims(bv), true);
                    accumulate(&mut grads[a.0], av.shape(), |x| add_into(x, &d));
                }
                if want(*b) {
                    let (d, _, _) = matmul_into(av.data(), dims(av), true, gd, dims(g), false);
                    accumulate(&mut grads[b.0], bv.shape(), |x| add_into(x, &d));
                }
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if want(*a) {
                    accumulate(&mut grads[a.0], &shape_of(*a), |x| add_into(x, gd));
                }
                if want(*b) {
                    let cols = g.cols();
                    accumulate(&mut grads[b.0], &shape_of(*b), |x| {
                        for (k, &v) in gd.iter().enumerate() {
                            x[bidx(*bc, cols, k)] += sign * v;
                        }
                    });
                }
            }
            Op::Mul(a, b, bc) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let cols = g.cols();
                if want(*a) {
                    accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                        for (k, &v) in gd.iter().enumerate() {
                            x[k] += v * bv[bidx(*bc, cols, k)];
                        }
                    });
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], &shape_of(*b), |x| {
                        for (k, &v) in gd.iter().enumerate() {
                            x[bidx(*bc, cols, k)] += v * av[k];
                        }
                    });
                }
            }
            Op::Affine(a, scale) => {
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    for (o, &v) in x.iter_mut().zip(gd) {
                        *o += *scale * v;
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let (pr, pc) = dims(pv);
                    if want(p) {
                        accumulate(&mut grads[p.0], pv.shape(), |x| match axis {
                            Axis::Rows => {
                                let c = g.cols();
                                add_into(x, &gd[offset * c..(offset + pr) * c]);
                            }
                            Axis::Cols => {
                                let c = g.cols();
                                for r in 0..pr {
                                    for j in 0..pc {
                                        x[r * pc + j] += gd[r * c + offset + j];
                                    }
                                }
                            }
                        });
                    }
                    offset += match axis {
                        Axis::Rows => pr,
                        Axis::Cols => pc,
                    };
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    for k in 0..x.len() {
                        if av[k] > T::zero() {
                            x[k] += gd[k];
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    for k in 0..x.len() {
                        x[k] += gd[k] * (T::one() - y[k] * y[k]);
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    for k in 0..x.len() {
                        x[k] += gd[k] * y[k] * (T::one() - y[k]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = node.value.data();
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    for k in 0..x.len() {
                        x[k] += gd[k] * y[k];
                    }
                });
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    for k in 0..x.len() {
                        x[k] += gd[k] / av[k];
                    }
                });
            }
            Op::MaxAxis(a, arg) | Op::SegmentMax(a, arg) => {
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    for (k, &src) in arg.iter().enumerate() {
                        x[src] += gd[k];
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (r, c) = dims(y);
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    for i in 0..r {
                        let yr = y.row_slice(i);
                        let gr = &gd[i * c..(i + 1) * c];
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..c {
                            x[i * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = dims(g);
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    for i in 0..r {
                        for j in 0..c {
                            x[j * r + i] += gd[i * c + j];
                        }
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let c = g.cols();
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    add_into(&mut x[start * c..start * c + gd.len()], gd);
                });
            }
            Op::SliceCols(a, start) => {
                let (r, len) = dims(g);
                let c = self.value(*a).cols();
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    for i in 0..r {
                        add_into(
                            &mut x[i * c + start..i * c + start + len],
                            &gd[i * len..(i + 1) * len],
                        );
                    }
                });
            }
            Op::GatherRows(t, idx) => {
                let c = g.cols();
                accumulate(&mut grads[t.0], &shape_of(*t), |x| {
                    for (k, &row) in idx.iter().enumerate() {
                        add_into(&mut x[row * c..(row + 1) * c], &gd[k * c..(k + 1) * c]);
                    }
                });
            }
            Op::Reshape(a) => {
                accumulate(&mut grads[a.0], &shape_of(*a), |x| add_into(x, gd));
            }
            Op::SumAll(a) => {
                let s = gd[0];
                accumulate(&mut grads[a.0], &shape_of(*a), |x| {
                    for o in x.iter_mut() {
                        *o += s;
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn softmax_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax_rows(x, None).unwrap();
        for &p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_large_logits_stay_finite() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1000.0, 1001.0]));
        let y = tape.softmax_rows(x, None).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 0.2689414213699951).abs() < 1e-12);
        assert!((d[1] - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn softmax_fully_masked_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let mask = t(&[2, 2], &[0.0, 0.0, 1.0, 0.0]);
        let y = tape.softmax_rows(x, Some(&mask)).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn relu_backward() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 2], &[-1.0, 2.0]));
        let y = tape.relu(x);
        let g = tape.backward(&[(y, t(&[1, 2], &[1.0, 1.0]))]).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.param(t(&[1, 2], &[10.0, 20.0]));
        let y = tape.add(a, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 22.0, 13.0, 24.0]);
        let s = tape.sum(y);
        let g = tape.backward_scalar(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1, 1], &[3.0]));
        let b = tape.param(t(&[1, 1], &[2.0]));
        let y = tape.mul(a, b).unwrap();
        let g = tape.backward_scalar(y).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap().data(), &[3.0]);
    }
}
