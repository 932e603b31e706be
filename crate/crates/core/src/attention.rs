//! Additive (MLP) attention over feature rows.
//!
//! One head scores each feature row against a query through a tanh MLP and
//! returns the weight-averaged context. Queries built by concatenation
//! ([h; y] or [h; x]) reuse the same head with an enlarged query dimension;
//! the scorer has no bias terms.

use rand::Rng;

use crate::autodiff::{ParameterStore, Tape, TapeError, TensorBase, Var};
use crate::scalar::Scalar;

/// Shapes of one attention head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    pub feature_dim: usize,
    pub query_dim: usize,
    /// Width of the tanh scorer. Defaults to the model hidden size.
    pub hidden: usize,
}

impl AttentionSpec {
    /// Register this head's parameters under `prefix`, uniform in
    /// [-0.1, 0.1].
    pub fn init<T: Scalar, R: Rng>(
        &self,
        prefix: &str,
        store: &mut ParameterStore<T>,
        rng: &mut R,
    ) {
        store.insert(
            &format!("{prefix}.feature_proj"),
            TensorBase::uniform(&[self.feature_dim, self.hidden], -0.1, 0.1, rng),
        );
        store.insert(
            &format!("{prefix}.query_proj"),
            TensorBase::uniform(&[self.query_dim, self.hidden], -0.1, 0.1, rng),
        );
        store.insert(
            &format!("{prefix}.score"),
            TensorBase::uniform(&[self.hidden], -0.1, 0.1, rng),
        );
    }

    pub fn bind<T: Scalar>(
        &self,
        prefix: &str,
        store: &ParameterStore<T>,
        tape: &mut Tape<T>,
    ) -> Result<AttentionVars, TapeError> {
        Ok(AttentionVars {
            feature_proj: store.bind(tape, &format!("{prefix}.feature_proj"))?,
            query_proj: store.bind(tape, &format!("{prefix}.query_proj"))?,
            score: store.bind(tape, &format!("{prefix}.score"))?,
        })
    }
}

/// Tape handles of one bound attention head.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub feature_proj: Var,
    pub query_proj: Var,
    pub score: Var,
}

/// Context vector and attention weights of one [`attend`] call.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub context: Var,
    pub weights: Var,
}

/// Soft-select feature rows against a query.
///
/// `features` is N x D_f, `query` a D_q vector, `mask` an optional per-row
/// keep flag. Scores are `score . tanh(W_f^T f_i + W_q^T q)`; weights are the
/// masked row softmax; the context is the weighted sum of feature rows.
pub fn attend<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    query: Var,
    mask: Option<&[bool]>,
    params: &AttentionVars,
) -> Result<Attended, TapeError> {
    let n = match tape.value(features).shape() {
        [n, _] => *n,
        shape => {
            return Err(TapeError::UnsupportedRank { op: "attend", shape: shape.to_vec() })
        }
    };
    if n == 0 {
        return Err(TapeError::EmptyInput { op: "attend" });
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(TapeError::ShapeMismatch {
                op: "attend",
                left: tape.value(features).shape().to_vec(),
                right: vec![m.len()],
            });
        }
    }

    let projected = tape.matmul(features, params.feature_proj)?;
    let query_part = tape.matmul(query, params.query_proj)?;
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let row = tape.row(projected, i)?;
        let pre = tape.add(row, query_part)?;
        let act = tape.tanh(pre)?;
        scores.push(tape.matmul(act, params.score)?);
    }
    let scores = tape.concat(&scores)?;
    let mask_var = match mask {
        Some(m) => {
            let data = m.iter().map(|&b| if b { T::one() } else { T::zero() }).collect();
            Some(tape.leaf(TensorBase::vector(data)))
        }
        None => None,
    };
    let weights = tape.masked_softmax(scores, mask_var)?;
    let context = tape.matmul(weights, features)?;
    Ok(Attended { context, weights })
}
