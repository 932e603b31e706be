//! Forward evaluation and adjoint rules for the primitive set.
//!
//! Each primitive computes its output (plus an optional saved tensor the
//! adjoint needs) and, in reverse mode, a gradient contribution per input.
//! Inputs that are not differentiable (dropout masks, softmax masks) get
//! `None` contributions.

use crate::scalar::Scalar;

use super::tensor::TensorBase;
use super::TapeError;

/// Primitive operation kinds recordable on a [`Tape`](super::Tape).
#[derive(Clone, Debug)]
pub enum Op {
    /// Matrix/vector product. Supports (m x k)(k x n), (m x k)(k),
    /// (k)(k x n), and (k)(k) dot products. No implicit broadcasting.
    MatMul,
    /// Elementwise sum of two same-shape tensors.
    Add,
    /// Concatenation along the last axis. 1-D inputs are joined end to end;
    /// 2-D inputs must agree on the row count.
    ConcatLastAxis,
    Tanh,
    Sigmoid,
    /// Elementwise product of two same-shape tensors.
    Mul,
    /// Column means over rows. Second input, when present, is a 0/1 row mask;
    /// masked rows are excluded from both the sum and the divisor.
    MeanRows,
    /// Row gather from a 2-D table; duplicate indices scatter-add in reverse.
    EmbeddingGather(Vec<usize>),
    /// Elementwise product with an externally supplied mask whose entries are
    /// 0 or 1/keep-probability. Gradient flows to the first input only.
    Dropout,
    /// Row softmax with an optional same-shape 0/1 mask. Masked entries are
    /// exactly zero in the output; a fully masked row is a fatal error.
    MaskedSoftmaxRows,
    /// Mean cross-entropy of logit rows against target indices.
    CrossEntropyFromLogits(Vec<usize>),
    /// Shape change over unchanged row-major data.
    Reshape(Vec<usize>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::ConcatLastAxis => "concat-last-axis",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Mul => "elementwise-mul",
            Op::MeanRows => "mean-rows",
            Op::EmbeddingGather(_) => "embedding-gather",
            Op::Dropout => "dropout-with-given-mask",
            Op::MaskedSoftmaxRows => "masked-softmax-rows",
            Op::CrossEntropyFromLogits(_) => "cross-entropy-from-logits",
            Op::Reshape(_) => "reshape",
        }
    }
}

pub(super) struct Forward<T> {
    pub value: TensorBase<T>,
    /// Op-specific cache for the adjoint (softmax probabilities).
    pub saved: Option<TensorBase<T>>,
}

fn arity<T: Scalar>(
    op: &Op,
    inputs: &[&TensorBase<T>],
    expected: &'static str,
    ok: bool,
) -> Result<(), TapeError> {
    if ok {
        Ok(())
    } else {
        Err(TapeError::ArityMismatch { op: op.name(), expected, got: inputs.len() })
    }
}

fn same_shape<T: Scalar>(
    op: &Op,
    a: &TensorBase<T>,
    b: &TensorBase<T>,
) -> Result<(), TapeError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(TapeError::ShapeMismatch {
            op: op.name(),
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

/// Shape of a matmul result together with the (m, k, n) view of the operands.
struct MatView {
    m: usize,
    k: usize,
    n: usize,
    a_is_vec: bool,
    b_is_vec: bool,
}

fn matmul_view<T: Scalar>(
    op: &Op,
    a: &TensorBase<T>,
    b: &TensorBase<T>,
) -> Result<MatView, TapeError> {
    let fail = || TapeError::ShapeMismatch {
        op: op.name(),
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    };
    let (m, k1, a_is_vec) = match a.shape() {
        [k] => (1, *k, true),
        [m, k] => (*m, *k, false),
        _ => return Err(fail()),
    };
    let (k2, n, b_is_vec) = match b.shape() {
        [k] => (*k, 1, true),
        [k, n] => (*k, *n, false),
        _ => return Err(fail()),
    };
    if k1 != k2 {
        return Err(fail());
    }
    Ok(MatView { m, k: k1, n, a_is_vec, b_is_vec })
}

pub(super) fn forward<T: Scalar>(
    op: &Op,
    inputs: &[&TensorBase<T>],
) -> Result<Forward<T>, TapeError> {
    let out = match op {
        Op::MatMul => {
            arity(op, inputs, "2", inputs.len() == 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            let v = matmul_view(op, a, b)?;
            let mut data = vec![T::zero(); v.m * v.n];
            let (ad, bd) = (a.data(), b.data());
            for i in 0..v.m {
                for l in 0..v.k {
                    let ail = ad[i * v.k + l];
                    if ail == T::zero() {
                        continue;
                    }
                    let brow = &bd[l * v.n..(l + 1) * v.n];
                    let orow = &mut data[i * v.n..(i + 1) * v.n];
                    for j in 0..v.n {
                        orow[j] = orow[j] + ail * brow[j];
                    }
                }
            }
            let shape = match (v.a_is_vec, v.b_is_vec) {
                (true, true) => vec![1],
                (true, false) => vec![v.n],
                (false, true) => vec![v.m],
                (false, false) => vec![v.m, v.n],
            };
            Forward { value: TensorBase::from_vec(shape, data)?, saved: None }
        }
        Op::Add => {
            arity(op, inputs, "2", inputs.len() == 2)?;
            same_shape(op, inputs[0], inputs[1])?;
            let data = inputs[0]
                .data()
                .iter()
                .zip(inputs[1].data())
                .map(|(a, b)| *a + *b)
                .collect();
            Forward { value: TensorBase::from_vec(inputs[0].shape().to_vec(), data)?, saved: None }
        }
        Op::ConcatLastAxis => {
            arity(op, inputs, ">= 1", !inputs.is_empty())?;
            let ndim = inputs[0].ndim();
            if ndim == 0 || ndim > 2 {
                return Err(TapeError::UnsupportedRank {
                    op: op.name(),
                    shape: inputs[0].shape().to_vec(),
                });
            }
            let rows = inputs[0].rows();
            let mut widths = Vec::with_capacity(inputs.len());
            for t in inputs {
                if t.ndim() != ndim || t.rows() != rows {
                    return Err(TapeError::ShapeMismatch {
                        op: op.name(),
                        left: inputs[0].shape().to_vec(),
                        right: t.shape().to_vec(),
                    });
                }
                widths.push(t.last_dim());
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for t in inputs {
                    data.extend_from_slice(t.row(r));
                }
            }
            let shape = if ndim == 1 { vec![total] } else { vec![rows, total] };
            Forward { value: TensorBase::from_vec(shape, data)?, saved: None }
        }
        Op::Tanh => {
            arity(op, inputs, "1", inputs.len() == 1)?;
            let data = inputs[0].data().iter().map(|v| v.tanh()).collect();
            Forward { value: TensorBase::from_vec(inputs[0].shape().to_vec(), data)?, saved: None }
        }
        Op::Sigmoid => {
            arity(op, inputs, "1", inputs.len() == 1)?;
            let one = T::one();
            let data = inputs[0].data().iter().map(|v| one / (one + (-*v).exp())).collect();
            Forward { value: TensorBase::from_vec(inputs[0].shape().to_vec(), data)?, saved: None }
        }
        Op::Mul => {
            arity(op, inputs, "2", inputs.len() == 2)?;
            same_shape(op, inputs[0], inputs[1])?;
            let data = inputs[0]
                .data()
                .iter()
                .zip(inputs[1].data())
                .map(|(a, b)| *a * *b)
                .collect();
            Forward { value: TensorBase::from_vec(inputs[0].shape().to_vec(), data)?, saved: None }
        }
        Op::MeanRows => {
            arity(op, inputs, "1 or 2", inputs.len() == 1 || inputs.len() == 2)?;
            let x = inputs[0];
            let (rows, cols) = match x.shape() {
                [n] => (*n, 1),
                [n, d] => (*n, *d),
                _ => {
                    return Err(TapeError::UnsupportedRank {
                        op: op.name(),
                        shape: x.shape().to_vec(),
                    })
                }
            };
            let mask = inputs.get(1).copied();
            if let Some(m) = mask {
                if m.shape() != [rows] {
                    return Err(TapeError::ShapeMismatch {
                        op: op.name(),
                        left: x.shape().to_vec(),
                        right: m.shape().to_vec(),
                    });
                }
            }
            let live = |r: usize| mask.map_or(true, |m| m.data()[r] != T::zero());
            let count = (0..rows).filter(|r| live(*r)).count();
            if count == 0 {
                return Err(TapeError::AllRowsMaskedMean);
            }
            let denom = T::from_f64_lossy(count as f64);
            let mut data = vec![T::zero(); cols];
            for r in 0..rows {
                if !live(r) {
                    continue;
                }
                for (j, v) in x.data()[r * cols..(r + 1) * cols].iter().enumerate() {
                    data[j] = data[j] + *v;
                }
            }
            for v in data.iter_mut() {
                *v = *v / denom;
            }
            let shape = if x.ndim() == 1 { vec![1] } else { vec![cols] };
            Forward { value: TensorBase::from_vec(shape, data)?, saved: None }
        }
        Op::EmbeddingGather(indices) => {
            arity(op, inputs, "1", inputs.len() == 1)?;
            let table = inputs[0];
            let (rows, width) = match table.shape() {
                [r, w] => (*r, *w),
                _ => {
                    return Err(TapeError::UnsupportedRank {
                        op: op.name(),
                        shape: table.shape().to_vec(),
                    })
                }
            };
            let mut data = Vec::with_capacity(indices.len() * width);
            for &idx in indices {
                if idx >= rows {
                    return Err(TapeError::IndexOutOfBounds {
                        op: op.name(),
                        index: idx,
                        size: rows,
                    });
                }
                data.extend_from_slice(table.row(idx));
            }
            Forward {
                value: TensorBase::from_vec(vec![indices.len(), width], data)?,
                saved: None,
            }
        }
        Op::Dropout => {
            arity(op, inputs, "2", inputs.len() == 2)?;
            same_shape(op, inputs[0], inputs[1])?;
            let data = inputs[0]
                .data()
                .iter()
                .zip(inputs[1].data())
                .map(|(a, b)| *a * *b)
                .collect();
            Forward { value: TensorBase::from_vec(inputs[0].shape().to_vec(), data)?, saved: None }
        }
        Op::MaskedSoftmaxRows => {
            arity(op, inputs, "1 or 2", inputs.len() == 1 || inputs.len() == 2)?;
            let x = inputs[0];
            let (rows, cols) = match x.shape() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => {
                    return Err(TapeError::UnsupportedRank {
                        op: op.name(),
                        shape: x.shape().to_vec(),
                    })
                }
            };
            let mask = inputs.get(1).copied();
            if let Some(m) = mask {
                same_shape(op, x, m)?;
            }
            let mut data = vec![T::zero(); rows * cols];
            for r in 0..rows {
                let xr = &x.data()[r * cols..(r + 1) * cols];
                let live = |c: usize| mask.map_or(true, |m| m.data()[r * cols + c] != T::zero());
                let mut hi = T::neg_infinity();
                for c in 0..cols {
                    if live(c) && xr[c] > hi {
                        hi = xr[c];
                    }
                }
                if hi == T::neg_infinity() {
                    return Err(TapeError::AllMaskedRow { row: r });
                }
                let mut total = T::zero();
                for c in 0..cols {
                    if live(c) {
                        let e = (xr[c] - hi).exp();
                        data[r * cols + c] = e;
                        total = total + e;
                    }
                }
                for c in 0..cols {
                    data[r * cols + c] = data[r * cols + c] / total;
                }
            }
            Forward { value: TensorBase::from_vec(x.shape().to_vec(), data)?, saved: None }
        }
        Op::CrossEntropyFromLogits(targets) => {
            arity(op, inputs, "1", inputs.len() == 1)?;
            let x = inputs[0];
            let (rows, vocab) = match x.shape() {
                [v] => (1, *v),
                [t, v] => (*t, *v),
                _ => {
                    return Err(TapeError::UnsupportedRank {
                        op: op.name(),
                        shape: x.shape().to_vec(),
                    })
                }
            };
            if targets.len() != rows {
                return Err(TapeError::ArityMismatch {
                    op: op.name(),
                    expected: "one target per logit row",
                    got: targets.len(),
                });
            }
            let mut probs = vec![T::zero(); rows * vocab];
            let mut total = T::zero();
            for (r, &target) in targets.iter().enumerate() {
                if target >= vocab {
                    return Err(TapeError::IndexOutOfBounds {
                        op: op.name(),
                        index: target,
                        size: vocab,
                    });
                }
                let xr = &x.data()[r * vocab..(r + 1) * vocab];
                let hi = xr.iter().fold(T::neg_infinity(), |a, b| if *b > a { *b } else { a });
                let mut z = T::zero();
                for c in 0..vocab {
                    let e = (xr[c] - hi).exp();
                    probs[r * vocab + c] = e;
                    z = z + e;
                }
                for c in 0..vocab {
                    probs[r * vocab + c] = probs[r * vocab + c] / z;
                }
                total = total + (z.ln() + hi - xr[target]);
            }
            let mean = total / T::from_f64_lossy(rows as f64);
            Forward {
                value: TensorBase::scalar(mean),
                saved: Some(TensorBase::from_vec(vec![rows, vocab], probs)?),
            }
        }
        Op::Reshape(shape) => {
            arity(op, inputs, "1", inputs.len() == 1)?;
            let expect: usize = shape.iter().product();
            if expect != inputs[0].len() {
                return Err(TapeError::ShapeMismatch {
                    op: op.name(),
                    left: inputs[0].shape().to_vec(),
                    right: shape.clone(),
                });
            }
            Forward {
                value: TensorBase::from_vec(shape.clone(), inputs[0].data().to_vec())?,
                saved: None,
            }
        }
    };
    if !out.value.is_finite() {
        return Err(TapeError::NonFinite { op: op.name() });
    }
    Ok(out)
}

/// Gradient contribution of `op` to each input, given the upstream gradient.
/// `None` entries mark non-differentiable inputs.
pub(super) fn backward<T: Scalar>(
    op: &Op,
    inputs: &[&TensorBase<T>],
    output: &TensorBase<T>,
    saved: Option<&TensorBase<T>>,
    upstream: &TensorBase<T>,
) -> Vec<Option<TensorBase<T>>> {
    match op {
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let v = matmul_view(op, a, b).expect("shapes validated in forward");
            let g = upstream.data();
            let (ad, bd) = (a.data(), b.data());
            // dA[i][l] = sum_j g[i][j] * B[l][j]
            let mut da = vec![T::zero(); v.m * v.k];
            for i in 0..v.m {
                for l in 0..v.k {
                    let mut acc = T::zero();
                    for j in 0..v.n {
                        acc = acc + g[i * v.n + j] * bd[l * v.n + j];
                    }
                    da[i * v.k + l] = acc;
                }
            }
            // dB[l][j] = sum_i A[i][l] * g[i][j]
            let mut db = vec![T::zero(); v.k * v.n];
            for l in 0..v.k {
                for i in 0..v.m {
                    let ail = ad[i * v.k + l];
                    if ail == T::zero() {
                        continue;
                    }
                    for j in 0..v.n {
                        db[l * v.n + j] = db[l * v.n + j] + ail * g[i * v.n + j];
                    }
                }
            }
            vec![
                Some(TensorBase::from_vec(a.shape().to_vec(), da).unwrap()),
                Some(TensorBase::from_vec(b.shape().to_vec(), db).unwrap()),
            ]
        }
        Op::Add => vec![Some(upstream.clone()), Some(upstream.clone())],
        Op::ConcatLastAxis => {
            let rows = inputs[0].rows();
            let total = output.last_dim();
            let g = upstream.data();
            let mut grads = Vec::with_capacity(inputs.len());
            let mut offset = 0;
            for t in inputs {
                let w = t.last_dim();
                let mut data = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    data.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                }
                grads.push(Some(TensorBase::from_vec(t.shape().to_vec(), data).unwrap()));
                offset += w;
            }
            grads
        }
        Op::Tanh => {
            let one = T::one();
            let data = upstream
                .data()
                .iter()
                .zip(output.data())
                .map(|(g, y)| *g * (one - *y * *y))
                .collect();
            vec![Some(TensorBase::from_vec(inputs[0].shape().to_vec(), data).unwrap())]
        }
        Op::Sigmoid => {
            let one = T::one();
            let data = upstream
                .data()
                .iter()
                .zip(output.data())
                .map(|(g, y)| *g * *y * (one - *y))
                .collect();
            vec![Some(TensorBase::from_vec(inputs[0].shape().to_vec(), data).unwrap())]
        }
        Op::Mul => {
            let ga: Vec<T> =
                upstream.data().iter().zip(inputs[1].data()).map(|(g, b)| *g * *b).collect();
            let gb: Vec<T> =
                upstream.data().iter().zip(inputs[0].data()).map(|(g, a)| *g * *a).collect();
            vec![
                Some(TensorBase::from_vec(inputs[0].shape().to_vec(), ga).unwrap()),
                Some(TensorBase::from_vec(inputs[1].shape().to_vec(), gb).unwrap()),
            ]
        }
        Op::MeanRows => {
            let x = inputs[0];
            let (rows, cols) = match x.shape() {
                [n] => (*n, 1),
                [n, d] => (*n, *d),
                _ => unreachable!("validated in forward"),
            };
            let mask = inputs.get(1).copied();
            let live = |r: usize| mask.map_or(true, |m| m.data()[r] != T::zero());
            let count = (0..rows).filter(|r| live(*r)).count();
            let denom = T::from_f64_lossy(count as f64);
            let g = upstream.data();
            let mut data = vec![T::zero(); rows * cols];
            for r in 0..rows {
                if !live(r) {
                    continue;
                }
                for j in 0..cols {
                    data[r * cols + j] = g[j] / denom;
                }
            }
            let mut grads =
                vec![Some(TensorBase::from_vec(x.shape().to_vec(), data).unwrap())];
            if mask.is_some() {
                grads.push(None);
            }
            grads
        }
        Op::EmbeddingGather(indices) => {
            let table = inputs[0];
            let width = table.last_dim();
            let mut data = vec![T::zero(); table.len()];
            for (t, &idx) in indices.iter().enumerate() {
                let src = &upstream.data()[t * width..(t + 1) * width];
                let dst = &mut data[idx * width..(idx + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *d + *s;
                }
            }
            vec![Some(TensorBase::from_vec(table.shape().to_vec(), data).unwrap())]
        }
        Op::Dropout => {
            let data: Vec<T> =
                upstream.data().iter().zip(inputs[1].data()).map(|(g, m)| *g * *m).collect();
            vec![
                Some(TensorBase::from_vec(inputs[0].shape().to_vec(), data).unwrap()),
                None,
            ]
        }
        Op::MaskedSoftmaxRows => {
            let x = inputs[0];
            let (rows, cols) = match x.shape() {
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => unreachable!("validated in forward"),
            };
            let mask = inputs.get(1).copied();
            let y = output.data();
            let g = upstream.data();
            let mut data = vec![T::zero(); rows * cols];
            for r in 0..rows {
                let live = |c: usize| mask.map_or(true, |m| m.data()[r * cols + c] != T::zero());
                let mut dot = T::zero();
                for c in 0..cols {
                    if live(c) {
                        dot = dot + g[r * cols + c] * y[r * cols + c];
                    }
                }
                for c in 0..cols {
                    if live(c) {
                        data[r * cols + c] = y[r * cols + c] * (g[r * cols + c] - dot);
                    }
                }
            }
            let mut grads =
                vec![Some(TensorBase::from_vec(x.shape().to_vec(), data).unwrap())];
            if mask.is_some() {
                grads.push(None);
            }
            grads
        }
        Op::CrossEntropyFromLogits(targets) => {
            let probs = saved.expect("cross-entropy saves probabilities");
            let rows = targets.len();
            let vocab = probs.last_dim();
            let scale = upstream.data()[0] / T::from_f64_lossy(rows as f64);
            let mut data = vec![T::zero(); rows * vocab];
            for (r, &target) in targets.iter().enumerate() {
                for c in 0..vocab {
                    let indicator = if c == target { T::one() } else { T::zero() };
                    data[r * vocab + c] = scale * (probs.data()[r * vocab + c] - indicator);
                }
            }
            vec![Some(TensorBase::from_vec(inputs[0].shape().to_vec(), data).unwrap())]
        }
        Op::Reshape(_) => {
            vec![Some(
                TensorBase::from_vec(inputs[0].shape().to_vec(), upstream.data().to_vec())
                    .unwrap(),
            )]
        }
    }
}
