use rand::RngCore;

use crate::autodiff::{Scalar, Tape, Var};

use super::config::Activation;

/// `Σ_{i<j} <E_i, E_j>` per example via `0.5 Σ_d [(Σ_i E_id)^2 - Σ_i E_id^2]`.
///
/// `e` is `[batch, fields, dim]`; returns `[batch, 1]`.
pub fn fm_second_order<T: Scalar>(tape: &mut Tape<T>, e: Var) -> Var {
    let shape = tape.shape(e).to_vec();
    assert_eq!(shape.len(), 3, "fm_second_order expects [batch, fields, dim]");
    assert!(shape[1] >= 2, "fm_second_order needs at least two fields, got {}", shape[1]);
    let sum = tape.sum_axis(e, 1);
    let square_of_sum = tape.square(sum);
    let squares = tape.square(e);
    let sum_of_squares = tape.sum_axis(squares, 1);
    let diff = tape.sub(square_of_sum, sum_of_squares);
    let total = tape.sum_axis(diff, 1);
    let half = tape.scale(total, T::from_f64_lossy(0.5));
    tape.reshape(half, &[shape[0], 1])
}

/// Upper-triangle pair indices `(i, j), i < j`, in row-major order.
pub fn field_pairs(num_fields: usize) -> Vec<(usize, usize)> {
    (0..num_fields).flat_map(|i| (i + 1..num_fields).map(move |j| (i, j))).collect()
}

/// Inner products of every field pair: `[batch, fields, dim] -> [batch, C(fields, 2)]`.
pub fn pairwise_inner_products<T: Scalar>(tape: &mut Tape<T>, e: Var) -> Var {
    let shape = tape.shape(e).to_vec();
    let (batch, m) = (shape[0], shape[1]);
    assert!(m >= 2, "pairwise products need at least two fields");
    let gram = tape.bmm(e, e, true);
    let flat = tape.reshape(gram, &[batch, m * m]);
    let upper: Vec<usize> = field_pairs(m).into_iter().map(|(i, j)| i * m + j).collect();
    tape.index_select(flat, &upper)
}

/// One compressed-interaction layer.
///
/// `x_prev` is `[batch, h_prev, dim]`, `x0` is `[batch, fields, dim]` and `w` is
/// `[h_prev * fields, h_out]`, row `i * fields + j` weighting the Hadamard
/// product of `x_prev[i]` and `x0[j]`. Returns `[batch, h_out, dim]` with
/// `out[h, d] = Σ_ij w[(i, j), h] · x_prev[i, d] · x0[j, d]`.
pub fn cin_layer<T: Scalar>(tape: &mut Tape<T>, x_prev: Var, x0: Var, w: Var) -> Var {
    let (ps, zs, ws) = (tape.shape(x_prev).to_vec(), tape.shape(x0).to_vec(), tape.shape(w).to_vec());
    assert_eq!(ps.len(), 3, "cin_layer: x_prev must be [batch, h, dim]");
    assert_eq!(zs.len(), 3, "cin_layer: x0 must be [batch, fields, dim]");
    assert_eq!(ps[0], zs[0], "cin_layer: batch mismatch");
    assert_eq!(ps[2], zs[2], "cin_layer: embedding dim mismatch ({} vs {})", ps[2], zs[2]);
    let (batch, h, m, dim) = (ps[0], ps[1], zs[1], ps[2]);
    assert_eq!(ws[0], h * m, "cin_layer: weight rows must equal h_prev * fields");
    let h_out = ws[1];
    let a = tape.reshape(x_prev, &[batch, h, 1, dim]);
    let b = tape.reshape(x0, &[batch, 1, m, dim]);
    let z = tape.mul(a, b);
    let z = tape.reshape(z, &[batch, h * m, dim]);
    let z = tape.permute(z, &[0, 2, 1]);
    let z = tape.reshape(z, &[batch * dim, h * m]);
    let out = tape.matmul(z, w);
    let out = tape.reshape(out, &[batch, dim, h_out]);
    tape.permute(out, &[0, 2, 1])
}

pub struct AttentionOutput {
    /// `[batch, fields, heads * head_size]`
    pub output: Var,
    /// `[batch, heads, fields, fields]`, rows summing to one.
    pub weights: Var,
}

/// Scaled dot-product multi-head self-attention over field embeddings.
///
/// `e` is `[batch, fields, dim]`; `wq`, `wk` and `wv` are `[dim, heads * head_size]`.
pub fn self_attention<T: Scalar>(tape: &mut Tape<T>, e: Var, wq: Var, wk: Var, wv: Var, heads: usize) -> AttentionOutput {
    let shape = tape.shape(e).to_vec();
    let (batch, m, dim) = (shape[0], shape[1], shape[2]);
    let width = tape.shape(wq)[1];
    assert!(heads > 0 && width % heads == 0, "projection width {width} not divisible by {heads} heads");
    let size = width / heads;
    let flat = tape.reshape(e, &[batch * m, dim]);
    let mut split = |w: Var| {
        let p = tape.matmul(flat, w);
        let p = tape.reshape(p, &[batch, m, heads, size]);
        tape.permute(p, &[0, 2, 1, 3])
    };
    let (q, k, v) = (split(wq), split(wk), split(wv));
    let scores = tape.bmm(q, k, true);
    let scores = tape.scale(scores, T::from_f64_lossy(1.0 / (size as f64).sqrt()));
    let weights = tape.softmax(scores);
    let out = tape.bmm(weights, v, false);
    let out = tape.permute(out, &[0, 2, 1, 3]);
    let output = tape.reshape(out, &[batch, m, width]);
    AttentionOutput { output, weights }
}

pub fn activate<T: Scalar>(tape: &mut Tape<T>, x: Var, activation: Activation) -> Var {
    match activation {
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
    }
}

/// Fully connected stack `act(x W + b)` with dropout after every hidden layer
/// when an rng is supplied (training mode).
pub fn mlp<T: Scalar>(
    tape: &mut Tape<T>,
    input: Var,
    layers: &[(Var, Var)],
    activation: Activation,
    dropout: f64,
    mut rng: Option<&mut dyn RngCore>,
) -> Var {
    let mut h = input;
    for &(w, b) in layers {
        let z = tape.matmul(h, w);
        let z = tape.add(z, b);
        h = activate(tape, z, activation);
        if let Some(r) = rng.as_deref_mut() {
            h = tape.dropout(h, dropout, r);
        }
    }
    h
}
