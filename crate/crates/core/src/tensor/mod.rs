// Copyright 2026 The c2vkd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value behind an `Arc`. Every operation whose
//! inputs require gradients records a node holding its inputs and a local
//! gradient rule; [`Tensor::backward`] walks those nodes in reverse
//! topological order and accumulates into leaf tensors created with
//! [`Tensor::param`]. Operations on tensors that do not require gradients
//! record nothing, which is how frozen networks are detached.

mod elementwise;
mod gradcheck;
mod linalg;
mod loss;
mod nn;
mod shape;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use gradcheck::{finite_diff_grad, finite_diff_grad_at, relative_error};
pub use linalg::gemm;
pub use loss::{IGNORE_INDEX, KL_FLOOR};

/// Local gradient rule: `(grad_out, output_data, inputs) -> grad per input`.
pub(crate) type BackwardFn =
    Box<dyn Fn(&[f64], &[f64], &[Tensor]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct GradFn {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

// Graphs can be long chains; unlink them iteratively instead of recursing.
impl Drop for Node {
    fn drop(&mut self) {
        let Some(gf) = self.grad_fn.take() else {
            return;
        };
        let mut stack = gf.inputs;
        while let Some(t) = stack.pop() {
            if let Ok(mut node) = Arc::try_unwrap(t.0) {
                if let Some(g) = node.grad_fn.take() {
                    stack.extend(g.inputs);
                }
            }
        }
    }
}

#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape);
        if self.0.data.len() <= 16 {
            s.field("data", &self.0.data);
        }
        if let Some(g) = &self.0.grad_fn {
            s.field("op", &g.op);
        }
        s.field("requires_grad", &self.0.requires_grad).finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    /// Constant tensor. Fails when `shape` does not account for every value.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) || numel(shape) != data.len() {
            return Err(Error::shape("Tensor::new", shape, &[data.len()]));
        }
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// Trainable leaf: gradients accumulate into it on `backward`.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(Self::build(t.0.data.clone(), t.0.shape.clone(), true, None))
    }

    pub fn scalar(v: f64) -> Self {
        Self::build(vec![v], vec![1], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::build(vec![v; numel(shape)], shape.to_vec(), false, None)
    }

    /// Records an operation. The node is only taped when some input needs a
    /// gradient; otherwise the result is a plain constant.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        op: &'static str,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            inputs,
            backward,
        });
        Self::build(data, shape, requires_grad, grad_fn)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same values, cut from the tape.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Name of the recording operation, `None` for leaves and constants.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }

    /// Whether `leaf` is reachable through the recorded graph of `self`.
    pub fn depends_on(&self, leaf: &Tensor) -> bool {
        let target = leaf.key();
        let mut stack = vec![self.clone()];
        let mut seen = std::collections::HashSet::new();
        while let Some(t) = stack.pop() {
            if t.key() == target {
                return true;
            }
            if !seen.insert(t.key()) {
                continue;
            }
            if let Some(g) = &t.0.grad_fn {
                stack.extend(g.inputs.iter().cloned());
            }
        }
        false
    }

    fn key(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    /// Nodes reachable from `self` that require gradients, inputs first.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        // (node, children pushed?)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !t.requires_grad() || !seen.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(g) = &t.0.grad_fn {
                for inp in g.inputs.iter().rev() {
                    if inp.requires_grad() && !seen.contains(&inp.key()) {
                        stack.push((inp.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Reverse pass from a scalar loss. Gradients are added to the `grad`
    /// of every reachable parameter; intermediate gradients are dropped as
    /// soon as they have been propagated.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node, Vec<f64>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.key()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    let mut slot = node.0.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(gf) => {
                    let grads = (gf.backward)(&g, &node.0.data, &gf.inputs);
                    debug_assert_eq!(grads.len(), gf.inputs.len(), "{}", gf.op);
                    for (inp, ig) in gf.inputs.iter().zip(grads) {
                        let Some(ig) = ig else { continue };
                        if !inp.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), inp.numel(), "{}", gf.op);
                        match pending.get_mut(&inp.key()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(inp.key(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
