//! Recording tape for reverse-mode differentiation.
//!
//! A tape owns every tensor produced during one forward pass. Operations are
//! recorded in topological order (inputs always precede their consumers), so
//! a single reverse sweep from the loss node computes gradients for every
//! reachable node. A tape belongs to one logical execution context; frozen
//! evaluation simply builds a fresh tape and never calls [`Tape::backward`].

use std::collections::BTreeMap;

use crate::scalar::Scalar;

use super::ops::{self, Op};
use super::tensor::TensorBase;
use super::TapeError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum NodeKind {
    /// Input tensor. Named leaves are tracked as parameters.
    Leaf,
    Computed { op: Op, inputs: Vec<Var> },
}

struct Node<T> {
    value: TensorBase<T>,
    saved: Option<TensorBase<T>>,
    kind: NodeKind,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    /// Test fixture: negate the input adjoints of every op with this name.
    adjoint_sign_flip: Option<&'static str>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), adjoint_sign_flip: None }
    }

    /// Record an input tensor that needs no gradient (features, masks).
    pub fn leaf(&mut self, value: TensorBase<T>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, saved: None, kind: NodeKind::Leaf });
        Var(id)
    }

    /// Record a named parameter leaf. Gradient maps cover every registered
    /// parameter, with zeros for parameters the loss never reached.
    pub fn param(&mut self, name: &str, value: TensorBase<T>) -> Result<Var, TapeError> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(TapeError::DuplicateParam(name.to_string()));
        }
        let var = self.leaf(value);
        self.params.push((name.to_string(), var));
        Ok(var)
    }

    pub fn value(&self, var: Var) -> &TensorBase<T> {
        &self.nodes[var.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Apply one primitive to already-recorded inputs.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var, TapeError> {
        let tensors: Vec<&TensorBase<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let fwd = ops::forward(&op, &tensors)?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            value: fwd.value,
            saved: fwd.saved,
            kind: NodeKind::Computed { op, inputs: inputs.to_vec() },
        });
        Ok(Var(id))
    }

    // Convenience wrappers around `apply`.

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TapeError> {
        self.apply(Op::ConcatLastAxis, parts)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TapeError> {
        self.apply(Op::Tanh, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TapeError> {
        self.apply(Op::Sigmoid, &[x])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TapeError> {
        self.apply(Op::MeanRows, &[x])
    }

    pub fn mean_rows_masked(&mut self, x: Var, mask: Var) -> Result<Var, TapeError> {
        self.apply(Op::MeanRows, &[x, mask])
    }

    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var, TapeError> {
        self.apply(Op::EmbeddingGather(indices.to_vec()), &[table])
    }

    pub fn dropout(&mut self, x: Var, mask: Var) -> Result<Var, TapeError> {
        self.apply(Op::Dropout, &[x, mask])
    }

    pub fn masked_softmax(&mut self, x: Var, mask: Option<Var>) -> Result<Var, TapeError> {
        match mask {
            Some(m) => self.apply(Op::MaskedSoftmaxRows, &[x, m]),
            None => self.apply(Op::MaskedSoftmaxRows, &[x]),
        }
    }

    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TapeError> {
        self.apply(Op::CrossEntropyFromLogits(targets.to_vec()), &[logits])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TapeError> {
        self.apply(Op::Reshape(shape.to_vec()), &[x])
    }

    /// Gather a single row of a 2-D tensor as a 1-D vector.
    pub fn row(&mut self, matrix: Var, index: usize) -> Result<Var, TapeError> {
        let width = self.value(matrix).last_dim();
        let picked = self.gather(matrix, &[index])?;
        self.reshape(picked, &[width])
    }

    /// Reverse sweep from a scalar loss. The tape is immutable during the
    /// sweep, so replaying it repeatedly yields bit-identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TapeError> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(TapeError::LossNotScalar { shape: loss_value.shape().to_vec() });
        }
        let mut grads: Vec<Option<TensorBase<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(TensorBase::filled(loss_value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let upstream = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            if let NodeKind::Computed { op, inputs } = &node.kind {
                let tensors: Vec<&TensorBase<T>> =
                    inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let mut contributions =
                    ops::backward(op, &tensors, &node.value, node.saved.as_ref(), &upstream);
                if self.adjoint_sign_flip == Some(op.name()) {
                    for c in contributions.iter_mut().flatten() {
                        for v in c.data_mut() {
                            *v = -*v;
                        }
                    }
                }
                for (var, contribution) in inputs.iter().zip(contributions) {
                    let Some(c) = contribution else { continue };
                    match &mut grads[var.0] {
                        Some(existing) => {
                            for (e, v) in existing.data_mut().iter_mut().zip(c.data()) {
                                *e = *e + *v;
                            }
                        }
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            grads[id] = Some(upstream);
        }

        let params = self
            .params
            .iter()
            .map(|(name, var)| (name.clone(), *var, self.nodes[var.0].value.shape().to_vec()))
            .collect();
        Ok(Gradients { by_node: grads, params })
    }

    /// Test fixture: corrupt the adjoint of one op kind during backward.
    #[doc(hidden)]
    pub fn inject_adjoint_sign_flip(&mut self, op_name: &'static str) {
        self.adjoint_sign_flip = Some(op_name);
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T: Scalar> {
    by_node: Vec<Option<TensorBase<T>>>,
    params: Vec<(String, Var, Vec<usize>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to an arbitrary node, if reached.
    pub fn of(&self, var: Var) -> Option<&TensorBase<T>> {
        self.by_node.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a registered parameter; zeros when the loss never
    /// reached it, `None` for unknown names.
    pub fn by_name(&self, name: &str) -> Option<TensorBase<T>> {
        let (_, var, shape) = self.params.iter().find(|(n, _, _)| n == name)?;
        Some(match &self.by_node[var.0] {
            Some(g) => g.clone(),
            None => TensorBase::zeros(shape),
        })
    }

    /// All registered parameters as a name -> gradient map.
    pub fn to_map(&self) -> BTreeMap<String, TensorBase<T>> {
        self.params
            .iter()
            .map(|(name, var, shape)| {
                let g = match &self.by_node[var.0] {
                    Some(g) => g.clone(),
                    None => TensorBase::zeros(shape),
                };
                (name.clone(), g)
            })
            .collect()
    }
}
