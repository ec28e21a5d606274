//! Recorded computation graph with reverse-mode differentiation.
//!
//! Every call on [`Tape`] evaluates one primitive eagerly and appends it to the
//! record. Nodes are only ever appended after their inputs, so walking the
//! record backwards is a valid reverse topological order.

use std::collections::HashMap;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tensor::{strides, Scalar, Tensor};
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    BatchMatMul { lhs: Var, rhs: Var, transpose_rhs: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    SumAll(Var),
    SumAxis { input: Var, axis: usize },
    Mean(Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize, len: usize },
    Softmax(Var),
    Dropout { input: Var, mask: Vec<T> },
    Gather { table: Var, indices: Vec<u32> },
    IndexSelect { input: Var, indices: Vec<usize> },
    Reshape { input: Var, shape: Vec<usize> },
    Permute { input: Var, perm: Vec<usize> },
    BceWithLogits { logits: Var, targets: Vec<T> },
}

/// Gradients of a scalar loss keyed by parameter.
///
/// Parameters that never appeared on the tape have no entry; [`Gradients::get_or_zero`]
/// returns a zero tensor for them.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    by_param: HashMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Gradients { by_param: HashMap::new() }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.by_param.get(&id)
    }

    pub fn get_or_zero(&self, id: ParamId, shape: &[usize]) -> Tensor<T> {
        self.by_param.get(&id).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor<T>) {
        self.by_param.insert(id, grad);
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Multiplies every gradient by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let by_param = self
            .by_param
            .iter()
            .map(|(&id, g)| {
                let data = g.data().iter().map(|&v| v * factor).collect();
                (id, Tensor::new(g.shape().to_vec(), data))
            })
            .collect();
        Gradients { by_param }
    }
}

impl<T: Scalar> Default for Gradients<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Eager computation record. One tape per forward pass; not shareable across threads
/// while being written.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    kink_signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { values: Vec::new(), ops: Vec::new(), kink_signature: FNV_OFFSET }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.values[var.0]
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.values[var.0].shape()
    }

    /// Hash of every relu activation pattern recorded so far.
    ///
    /// Two evaluations with equal signatures took the same branch at every kink,
    /// which is what makes a central difference across them meaningful.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    fn record(&mut self, op: Op<T>) -> Var {
        let value = evaluate(&op, &self.values);
        if let Op::Relu(input) = &op {
            self.mix_kinks(*input);
        }
        self.push(value, op)
    }

    fn mix_kinks(&mut self, input: Var) {
        let mut hash = self.kink_signature;
        for chunk in self.values[input.0].data().chunks(8) {
            let mut byte = 0u8;
            for (bit, v) in chunk.iter().enumerate() {
                if *v > T::zero() {
                    byte |= 1 << bit;
                }
            }
            hash ^= byte as u64;
            hash = hash.wrapping_mul(FNV_PRIME);
        }
        self.kink_signature = hash;
    }

    /// Constant input (receives no gradient of interest).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// Enters a registered parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, lhs: Var, rhs: Var) -> Var {
        self.record(Op::MatMul(lhs, rhs))
    }

    /// Batched matmul over matching leading axes: `[.., m, k] x [.., k, n]`, or
    /// `[.., m, k] x [.., n, k]^T` when `transpose_rhs` is set.
    pub fn bmm(&mut self, lhs: Var, rhs: Var, transpose_rhs: bool) -> Var {
        self.record(Op::BatchMatMul { lhs, rhs, transpose_rhs })
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::Sub(a, b))
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.record(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        self.record(Op::Scale(a, factor))
    }

    /// Rectifier; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Var {
        self.record(Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.record(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.record(Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.record(Op::Square(a))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        self.record(Op::SumAll(a))
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        assert!(axis < self.shape(a).len(), "sum_axis: axis {axis} out of range");
        self.record(Op::SumAxis { input: a, axis })
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        self.record(Op::Mean(a))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "concat of nothing");
        self.record(Op::Concat(inputs.to_vec()))
    }

    /// `len` entries of the last axis starting at `start`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let last = *self.shape(a).last().unwrap();
        assert!(len > 0 && start + len <= last, "slice {start}..{} out of 0..{last}", start + len);
        self.record(Op::Slice { input: a, start, len })
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        self.record(Op::Softmax(a))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`. A zero rate records nothing.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        if rate == 0.0 {
            return a;
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask = (0..self.values[a.0].numel())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        self.apply_dropout_mask(a, mask)
    }

    /// Applies a precomputed (already scaled) dropout mask.
    pub fn apply_dropout_mask(&mut self, a: Var, mask: Vec<T>) -> Var {
        assert_eq!(mask.len(), self.values[a.0].numel(), "dropout mask size mismatch");
        self.record(Op::Dropout { input: a, mask })
    }

    /// Row lookup `table[indices[i]]`, shape `[indices.len(), dim]`.
    pub fn gather(&mut self, table: Var, indices: &[u32]) -> Var {
        assert_eq!(self.shape(table).len(), 2, "gather expects a rank-2 table");
        assert!(!indices.is_empty(), "gather with no indices");
        let rows = self.shape(table)[0];
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= rows) {
            panic!("embedding index {bad} out of bounds for table with {rows} rows");
        }
        self.record(Op::Gather { table, indices: indices.to_vec() })
    }

    /// Selects entries of the last axis.
    pub fn index_select(&mut self, a: Var, indices: &[usize]) -> Var {
        let last = *self.shape(a).last().unwrap();
        assert!(!indices.is_empty() && indices.iter().all(|&i| i < last), "index_select out of range");
        self.record(Op::IndexSelect { input: a, indices: indices.to_vec() })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.values[a.0].numel(),
            "cannot reshape {:?} to {shape:?}",
            self.shape(a)
        );
        self.record(Op::Reshape { input: a, shape: shape.to_vec() })
    }

    /// Axis permutation: output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let rank = self.shape(a).len();
        let mut seen = vec![false; rank];
        assert_eq!(perm.len(), rank, "permutation rank mismatch");
        for &p in perm {
            assert!(p < rank && !seen[p], "invalid permutation {perm:?}");
            seen[p] = true;
        }
        self.record(Op::Permute { input: a, perm: perm.to_vec() })
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against 0/1 targets, computed
    /// in the overflow-free logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Var {
        assert_eq!(self.values[logits.0].numel(), targets.len(), "bce: target count mismatch");
        self.record(Op::BceWithLogits { logits, targets: targets.to_vec() })
    }

    /// Re-evaluates every node from the recorded inputs, parameters and masks.
    pub fn replay(&self) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = Vec::with_capacity(self.values.len());
        for (value, op) in self.values.iter().zip(&self.ops) {
            let next = match op {
                Op::Input | Op::Param(_) => value.clone(),
                other => evaluate(other, &out),
            };
            out.push(next);
        }
        out
    }

    /// Reverse-mode gradients of a scalar `loss` with respect to every parameter on the tape.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let loss_shape = self.shape(loss).to_vec();
        if self.values[loss.0].numel() != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: loss_shape });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Input => {}
                Op::Param(id) => {
                    let shape = self.values[idx].shape().to_vec();
                    match out.by_param.get_mut(id) {
                        Some(acc) => add_into(acc.data_mut(), &g),
                        None => {
                            out.by_param.insert(*id, Tensor::new(shape, g));
                        }
                    }
                }
                op => self.backward_op(op, idx, &g, &mut grads),
            }
        }
        Ok(out)
    }

    fn backward_op(&self, op: &Op<T>, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out_val = &self.values[idx];
        match op {
            Op::Input | Op::Param(_) => unreachable!(),
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let mut ga = vec![T::zero(); m * k];
                T::gemm(m, n, k, g, n as isize, 1, bv.data(), 1, n as isize, T::zero(), &mut ga, k as isize, 1);
                let mut gb = vec![T::zero(); k * n];
                T::gemm(k, m, n, av.data(), 1, k as isize, g, n as isize, 1, T::zero(), &mut gb, n as isize, 1);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::BatchMatMul { lhs, rhs, transpose_rhs } => {
                let (ga, gb) = bmm_backward(&self.values[lhs.0], &self.values[rhs.0], *transpose_rhs, g);
                accumulate(grads, *lhs, ga);
                accumulate(grads, *rhs, gb);
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                let bc = Broadcast::new(av.shape(), bv.shape());
                let mut ga = vec![T::zero(); av.numel()];
                let mut gb = vec![T::zero(); bv.numel()];
                let negate = matches!(op, Op::Sub(..));
                bc.for_each(|o, ia, ib| {
                    ga[ia] = ga[ia] + g[o];
                    gb[ib] = if negate { gb[ib] - g[o] } else { gb[ib] + g[o] };
                });
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.values[a.0], &self.values[b.0]);
                let bc = Broadcast::new(av.shape(), bv.shape());
                let mut ga = vec![T::zero(); av.numel()];
                let mut gb = vec![T::zero(); bv.numel()];
                let (ad, bd) = (av.data(), bv.data());
                bc.for_each(|o, ia, ib| {
                    ga[ia] = ga[ia] + g[o] * bd[ib];
                    gb[ib] = gb[ib] + g[o] * ad[ia];
                });
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, f) => accumulate(grads, *a, g.iter().map(|&v| v * *f).collect()),
            Op::Relu(a) => {
                let x = self.values[a.0].data();
                let ga = g.iter().zip(x).map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() }).collect();
                accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let y = out_val.data();
                let ga = g.iter().zip(y).map(|(&gv, &yv)| gv * (T::one() - yv * yv)).collect();
                accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let y = out_val.data();
                let ga = g.iter().zip(y).map(|(&gv, &yv)| gv * yv * (T::one() - yv)).collect();
                accumulate(grads, *a, ga);
            }
            Op::Square(a) => {
                let x = self.values[a.0].data();
                let two = T::from_f64_lossy(2.0);
                accumulate(grads, *a, g.iter().zip(x).map(|(&gv, &xv)| two * xv * gv).collect());
            }
            Op::SumAll(a) => accumulate(grads, *a, vec![g[0]; self.values[a.0].numel()]),
            Op::Mean(a) => {
                let n = self.values[a.0].numel();
                let v = T::from_f64_lossy(g[0].as_f64() / n as f64);
                accumulate(grads, *a, vec![v; n]);
            }
            Op::SumAxis { input, axis } => {
                let shape = self.values[input.0].shape();
                let (outer, len, inner) = axis_split(shape, *axis);
                let mut ga = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let dst = (o * len + l) * inner;
                        ga[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                accumulate(grads, *input, ga);
            }
            Op::Concat(inputs) => {
                let out_last = *out_val.shape().last().unwrap();
                let rows = out_val.numel() / out_last;
                let mut offset = 0;
                for v in inputs {
                    let w = *self.values[v.0].shape().last().unwrap();
                    let mut gv = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gv.extend_from_slice(&g[r * out_last + offset..r * out_last + offset + w]);
                    }
                    accumulate(grads, *v, gv);
                    offset += w;
                }
            }
            Op::Slice { input, start, len } => {
                let last = *self.values[input.0].shape().last().unwrap();
                let rows = self.values[input.0].numel() / last;
                let mut ga = vec![T::zero(); rows * last];
                for r in 0..rows {
                    ga[r * last + start..r * last + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                accumulate(grads, *input, ga);
            }
            Op::Softmax(a) => {
                let y = out_val.data();
                let last = *out_val.shape().last().unwrap();
                let mut ga = vec![T::zero(); y.len()];
                for (row, (yr, gr)) in y.chunks(last).zip(g.chunks(last)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a.as_f64() * b.as_f64()).sum();
                    let dot = T::from_f64_lossy(dot);
                    for j in 0..last {
                        ga[row * last + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Dropout { input, mask } => {
                accumulate(grads, *input, g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect());
            }
            Op::Gather { table, indices } => {
                let tv = &self.values[table.0];
                let dim = tv.shape()[1];
                let mut gt = vec![T::zero(); tv.numel()];
                for (row, &i) in indices.iter().enumerate() {
                    let dst = i as usize * dim;
                    add_into(&mut gt[dst..dst + dim], &g[row * dim..(row + 1) * dim]);
                }
                accumulate(grads, *table, gt);
            }
            Op::IndexSelect { input, indices } => {
                let last = *self.values[input.0].shape().last().unwrap();
                let rows = self.values[input.0].numel() / last;
                let mut ga = vec![T::zero(); rows * last];
                for r in 0..rows {
                    for (j, &src) in indices.iter().enumerate() {
                        let d = r * last + src;
                        ga[d] = ga[d] + g[r * indices.len() + j];
                    }
                }
                accumulate(grads, *input, ga);
            }
            Op::Reshape { input, .. } => accumulate(grads, *input, g.to_vec()),
            Op::Permute { input, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (d, &p) in perm.iter().enumerate() {
                    inverse[p] = d;
                }
                let gt = Tensor::new(out_val.shape().to_vec(), g.to_vec());
                accumulate(grads, *input, permute(&gt, &inverse).into_data());
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.values[logits.0].data();
                let scale = g[0].as_f64() / z.len() as f64;
                let gz = z
                    .iter()
                    .zip(targets)
                    .map(|(&zv, &y)| T::from_f64_lossy((sigmoid_f64(zv.as_f64()) - y.as_f64()) * scale))
                    .collect();
                accumulate(grads, *logits, gz);
            }
        }
    }
}

/// Reverse-mode gradient of `loss` with respect to every parameter on `tape`.
pub fn grad<T: Scalar>(tape: &Tape<T>, loss: Var) -> Result<Gradients<T>, AutodiffError> {
    tape.gradients(loss)
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], var: Var, g: Vec<T>) {
    match &mut grads[var.0] {
        Some(existing) => add_into(existing, &g),
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Index mapping for numpy-style broadcasting of two operands.
struct Broadcast {
    out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    same: bool,
    b_cycles: Option<usize>,
}

impl Broadcast {
    fn new(a: &[usize], b: &[usize]) -> Self {
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut p = vec![1; rank - s.len()];
            p.extend_from_slice(s);
            p
        };
        let (pa, pb) = (pad(a), pad(b));
        let out_shape: Vec<usize> = pa
            .iter()
            .zip(&pb)
            .map(|(&x, &y)| {
                assert!(x == y || x == 1 || y == 1, "cannot broadcast {a:?} with {b:?}");
                x.max(y)
            })
            .collect();
        let masked = |p: &[usize]| {
            let s = strides(p);
            s.iter().zip(p).map(|(&st, &d)| if d == 1 { 0 } else { st }).collect::<Vec<_>>()
        };
        let same = pa == pb;
        // b repeats over the leading axes of a when its nontrivial axes form a suffix of a.
        let b_numel: usize = b.iter().product();
        let b_cycles = (!same && pa == out_shape && {
            let first = pb.iter().position(|&d| d != 1).unwrap_or(rank);
            pb[first..] == pa[first..]
        })
        .then_some(b_numel);
        Broadcast { a_strides: masked(&pa), b_strides: masked(&pb), out_shape, same, b_cycles }
    }

    fn numel(&self) -> usize {
        self.out_shape.iter().product()
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = self.numel();
        if self.same {
            for i in 0..n {
                f(i, i, i);
            }
            return;
        }
        if let Some(cycle) = self.b_cycles {
            for i in 0..n {
                f(i, i, i % cycle);
            }
            return;
        }
        let rank = self.out_shape.len();
        let mut counter = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..n {
            f(o, ia, ib);
            for axis in (0..rank).rev() {
                counter[axis] += 1;
                ia += self.a_strides[axis];
                ib += self.b_strides[axis];
                if counter[axis] < self.out_shape[axis] {
                    break;
                }
                ia -= self.a_strides[axis] * counter[axis];
                ib -= self.b_strides[axis] * counter[axis];
                counter[axis] = 0;
            }
        }
    }
}

fn binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let bc = Broadcast::new(a.shape(), b.shape());
    let mut out = vec![T::zero(); bc.numel()];
    let (ad, bd) = (a.data(), b.data());
    bc.for_each(|o, ia, ib| out[o] = f(ad[ia], bd[ib]));
    Tensor::new(bc.out_shape.clone(), out)
}

fn unary<T: Scalar>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&v| f(v)).collect())
}

fn bmm_dims(a: &[usize], b: &[usize], transpose_rhs: bool) -> (Vec<usize>, usize, usize, usize, usize) {
    let r = a.len();
    assert!(r >= 2 && b.len() == r, "bmm rank mismatch: {a:?} vs {b:?}");
    assert_eq!(a[..r - 2], b[..r - 2], "bmm batch axes differ: {a:?} vs {b:?}");
    let (m, k) = (a[r - 2], a[r - 1]);
    let (kb, n) = if transpose_rhs { (b[r - 1], b[r - 2]) } else { (b[r - 2], b[r - 1]) };
    assert_eq!(k, kb, "bmm inner dimension mismatch: {a:?} vs {b:?}");
    let batch = a[..r - 2].iter().product();
    (a[..r - 2].to_vec(), batch, m, k, n)
}

fn bmm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, transpose_rhs: bool) -> Tensor<T> {
    let (lead, batch, m, k, n) = bmm_dims(a.shape(), b.shape(), transpose_rhs);
    let mut out = vec![T::zero(); batch * m * n];
    let (rsb, csb) = if transpose_rhs { (1, k as isize) } else { (n as isize, 1) };
    for i in 0..batch {
        T::gemm(
            m,
            k,
            n,
            &a.data()[i * m * k..],
            k as isize,
            1,
            &b.data()[i * k * n..],
            rsb,
            csb,
            T::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
            n as isize,
            1,
        );
    }
    let mut shape = lead;
    shape.extend([m, n]);
    Tensor::new(shape, out)
}

fn bmm_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, transpose_rhs: bool, g: &[T]) -> (Vec<T>, Vec<T>) {
    let (_, batch, m, k, n) = bmm_dims(a.shape(), b.shape(), transpose_rhs);
    let mut ga = vec![T::zero(); a.numel()];
    let mut gb = vec![T::zero(); b.numel()];
    let (ki, ni) = (k as isize, n as isize);
    for i in 0..batch {
        let gi = &g[i * m * n..];
        let ai = &a.data()[i * m * k..];
        let bi = &b.data()[i * k * n..];
        let ga_i = &mut ga[i * m * k..(i + 1) * m * k];
        let gb_i = &mut gb[i * k * n..(i + 1) * k * n];
        if transpose_rhs {
            // rhs stored as [n, k]: dA = dC * stored, dStored = dC^T * A
            T::gemm(m, n, k, gi, ni, 1, bi, ki, 1, T::zero(), ga_i, ki, 1);
            T::gemm(n, m, k, gi, 1, ni, ai, ki, 1, T::zero(), gb_i, ki, 1);
        } else {
            // dA = dC * B^T, dB = A^T * dC
            T::gemm(m, n, k, gi, ni, 1, bi, 1, ni, T::zero(), ga_i, ki, 1);
            T::gemm(k, m, n, ai, 1, ki, gi, ni, 1, T::zero(), gb_i, ni, 1);
        }
    }
    (ga, gb)
}

fn permute<T: Scalar>(a: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let in_shape = a.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let n = a.numel();
    let mut out = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut src = 0usize;
    let data = a.data();
    for _ in 0..n {
        out.push(data[src]);
        for axis in (0..rank).rev() {
            counter[axis] += 1;
            src += step[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            src -= step[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

fn evaluate<T: Scalar>(op: &Op<T>, vals: &[Tensor<T>]) -> Tensor<T> {
    match op {
        Op::Input | Op::Param(_) => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => {
            let (av, bv) = (&vals[a.0], &vals[b.0]);
            assert!(av.rank() == 2 && bv.rank() == 2, "matmul expects rank-2 operands");
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            assert_eq!(k, bv.shape()[0], "matmul shape mismatch {:?} x {:?}", av.shape(), bv.shape());
            let mut out = vec![T::zero(); m * n];
            T::gemm(m, k, n, av.data(), k as isize, 1, bv.data(), n as isize, 1, T::zero(), &mut out, n as isize, 1);
            Tensor::new(vec![m, n], out)
        }
        Op::BatchMatMul { lhs, rhs, transpose_rhs } => bmm(&vals[lhs.0], &vals[rhs.0], *transpose_rhs),
        Op::Add(a, b) => binary(&vals[a.0], &vals[b.0], |x, y| x + y),
        Op::Sub(a, b) => binary(&vals[a.0], &vals[b.0], |x, y| x - y),
        Op::Mul(a, b) => binary(&vals[a.0], &vals[b.0], |x, y| x * y),
        Op::Scale(a, f) => unary(&vals[a.0], |x| x * *f),
        Op::Relu(a) => unary(&vals[a.0], |x| if x > T::zero() { x } else { T::zero() }),
        Op::Tanh(a) => unary(&vals[a.0], |x| x.tanh()),
        Op::Sigmoid(a) => unary(&vals[a.0], |x| T::from_f64_lossy(sigmoid_f64(x.as_f64()))),
        Op::Square(a) => unary(&vals[a.0], |x| x * x),
        Op::SumAll(a) => {
            let s: f64 = vals[a.0].data().iter().map(|v| v.as_f64()).sum();
            Tensor::scalar(T::from_f64_lossy(s))
        }
        Op::Mean(a) => {
            let v = &vals[a.0];
            let s: f64 = v.data().iter().map(|x| x.as_f64()).sum();
            Tensor::scalar(T::from_f64_lossy(s / v.numel() as f64))
        }
        Op::SumAxis { input, axis } => {
            let v = &vals[input.0];
            let (outer, len, inner) = axis_split(v.shape(), *axis);
            let mut acc = vec![0.0f64; outer * inner];
            let d = v.data();
            for o in 0..outer {
                for l in 0..len {
                    let src = (o * len + l) * inner;
                    for i in 0..inner {
                        acc[o * inner + i] += d[src + i].as_f64();
                    }
                }
            }
            let mut shape: Vec<usize> = v.shape().to_vec();
            shape.remove(*axis);
            if shape.is_empty() {
                shape.push(1);
            }
            Tensor::new(shape, acc.into_iter().map(T::from_f64_lossy).collect())
        }
        Op::Concat(inputs) => {
            let first = vals[inputs[0].0].shape();
            let lead = &first[..first.len() - 1];
            let rows: usize = lead.iter().product();
            let widths: Vec<usize> = inputs
                .iter()
                .map(|v| {
                    let s = vals[v.0].shape();
                    assert_eq!(&s[..s.len() - 1], lead, "concat leading shape mismatch");
                    s[s.len() - 1]
                })
                .collect();
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (v, &w) in inputs.iter().zip(&widths) {
                    out.extend_from_slice(&vals[v.0].data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Tensor::new(shape, out)
        }
        Op::Slice { input, start, len } => {
            let v = &vals[input.0];
            let last = *v.shape().last().unwrap();
            let mut out = Vec::with_capacity(v.numel() / last * len);
            for row in v.data().chunks(last) {
                out.extend_from_slice(&row[*start..start + len]);
            }
            let mut shape = v.shape().to_vec();
            *shape.last_mut().unwrap() = *len;
            Tensor::new(shape, out)
        }
        Op::Softmax(a) => {
            let v = &vals[a.0];
            let last = *v.shape().last().unwrap();
            let mut out = Vec::with_capacity(v.numel());
            for row in v.data().chunks(last) {
                let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|x| (x.as_f64() - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                out.extend(exps.iter().map(|e| T::from_f64_lossy(e / total)));
            }
            Tensor::new(v.shape().to_vec(), out)
        }
        Op::Dropout { input, mask } => {
            let v = &vals[input.0];
            Tensor::new(v.shape().to_vec(), v.data().iter().zip(mask).map(|(&x, &m)| x * m).collect())
        }
        Op::Gather { table, indices } => {
            let t = &vals[table.0];
            let dim = t.shape()[1];
            let mut out = Vec::with_capacity(indices.len() * dim);
            for &i in indices {
                out.extend_from_slice(&t.data()[i as usize * dim..(i as usize + 1) * dim]);
            }
            Tensor::new(vec![indices.len(), dim], out)
        }
        Op::IndexSelect { input, indices } => {
            let v = &vals[input.0];
            let last = *v.shape().last().unwrap();
            let mut out = Vec::with_capacity(v.numel() / last * indices.len());
            for row in v.data().chunks(last) {
                out.extend(indices.iter().map(|&i| row[i]));
            }
            let mut shape = v.shape().to_vec();
            *shape.last_mut().unwrap() = indices.len();
            Tensor::new(shape, out)
        }
        Op::Reshape { input, shape } => vals[input.0].clone().reshape(shape.clone()),
        Op::Permute { input, perm } => permute(&vals[input.0], perm),
        Op::BceWithLogits { logits, targets } => {
            let z = vals[logits.0].data();
            let total: f64 = z
                .iter()
                .zip(targets)
                .map(|(&zv, &y)| {
                    let (zv, y) = (zv.as_f64(), y.as_f64());
                    zv.max(0.0) - zv * y + (-zv.abs()).exp().ln_1p()
                })
                .sum();
            Tensor::scalar(T::from_f64_lossy(total / z.len() as f64))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v)
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::scalar(3.0f64));
        let mut tape = Tape::new();
        let xv = tape.param(&store, x);
        let y = tape.mul(xv, xv);
        assert_eq!(tape.value(y).item(), 9.0);
        let g = grad(&tape, y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut store = ParamStore::new();
        let x = store.insert("x", Tensor::scalar(0.0f64));
        let mut tape = Tape::new();
        let xv = tape.param(&store, x);
        let y = tape.sigmoid(xv);
        assert_eq!(tape.value(y).item(), 0.5);
        assert_eq!(grad(&tape, y).unwrap().get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let v = tape.input(t(&[2], &[1.0, 2.0]));
        assert!(matches!(grad(&tape, v), Err(AutodiffError::NonScalarLoss { .. })));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let used = store.insert("used", Tensor::scalar(1.0f64));
        let unused = store.insert("unused", t(&[2, 2], &[1.0; 4]));
        let mut tape = Tape::new();
        let u = tape.param(&store, used);
        let loss = tape.square(u);
        let g = grad(&tape, loss).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zero(unused, &[2, 2]), Tensor::zeros(vec![2, 2]));
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut store = ParamStore::new();
        let x = store.insert("x", t(&[3], &[-1.0, 0.0, 2.0]));
        let mut tape = Tape::new();
        let xv = tape.param(&store, x);
        let r = tape.relu(xv);
        let loss = tape.sum(r);
        assert_eq!(grad(&tape, loss).unwrap().get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn broadcast_add_bias_over_rows() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.input(t(&[3], &[10.0, 20.0, 30.0]));
        let c = tape.add(a, b);
        assert_eq!(tape.value(c).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    }

    #[test]
    fn general_broadcast_mul() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.input(t(&[1, 3, 1], &[1.0, 10.0, 100.0]));
        let c = tape.mul(a, b);
        assert_eq!(tape.shape(c), &[2, 3, 2]);
        assert_eq!(
            tape.value(c).data(),
            &[1.0, 2.0, 10.0, 20.0, 100.0, 200.0, 3.0, 4.0, 30.0, 40.0, 300.0, 400.0]
        );
    }

    #[test]
    fn permute_swaps_axes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let p = tape.permute(a, &[1, 0]);
        assert_eq!(tape.shape(p), &[3, 2]);
        assert_eq!(tape.value(p).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn bmm_matches_loop() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.input(t(&[2, 2, 1], &[5.0, 6.0, 7.0, 8.0]));
        let c = tape.bmm(a, b, false);
        assert_eq!(tape.value(c).data(), &[17.0, 53.0]);
        let bt = tape.input(t(&[2, 1, 2], &[5.0, 6.0, 7.0, 8.0]));
        let d = tape.bmm(a, bt, true);
        assert_eq!(tape.value(d).data(), &[17.0, 53.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let a = tape.input(t(&[2, 3], &[1.0, 2.0, 3.0, -5.0, 0.0, 5.0]));
        let s = tape.softmax(a);
        for row in tape.value(s).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut store = ParamStore::new();
        let table = store.insert("table", t(&[3, 2], &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]));
        let mut tape = Tape::new();
        let tv = tape.param(&store, table);
        let e = tape.gather(tv, &[1, 1, 2]);
        let loss = tape.sum(e);
        let g = grad(&tape, loss).unwrap();
        assert_eq!(g.get(table).unwrap().data(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn gather_out_of_bounds_panics() {
        let mut tape = Tape::<f64>::new();
        let tv = tape.input(t(&[2, 1], &[0.0, 1.0]));
        tape.gather(tv, &[2]);
    }

    #[test]
    fn bce_matches_naive_formula() {
        let mut tape = Tape::<f64>::new();
        let z = tape.input(t(&[3], &[0.3, -2.0, 4.0]));
        let loss = tape.bce_with_logits(z, &[1.0, 0.0, 1.0]);
        let naive: f64 = [(0.3, 1.0), (-2.0, 0.0), (4.0, 1.0)]
            .iter()
            .map(|&(z, y): &(f64, f64)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 3.0;
        assert!((tape.value(loss).item() - naive).abs() < 1e-12);
    }

    #[test]
    fn replay_is_bit_identical() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let w = store.insert("w", t(&[3, 2], &[0.1, -0.4, 0.7, 0.2, -0.3, 0.9]));
        let mut tape = Tape::new();
        let x = tape.input(t(&[4, 3], &[0.5, -1.0, 2.0, 0.1, 0.2, 0.3, -0.7, 0.8, 0.9, 1.1, -1.2, 0.0]));
        let wv = tape.param(&store, w);
        let h = tape.matmul(x, wv);
        let h = tape.relu(h);
        let h = tape.dropout(h, 0.5, &mut rng);
        let s = tape.softmax(h);
        let l = tape.sum(s);
        let replayed = tape.replay();
        assert_eq!(replayed.len(), tape.len());
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v, tape.value(Var(i)));
        }
        let _ = l;
    }
}
