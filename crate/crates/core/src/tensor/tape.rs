use std::any::Any;
use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::primitive::Primitive;
use super::{NodeId, Tensor};
use crate::error::{Error, Result};

/// State a [`CustomOp`] keeps from its forward pass for its backward pass.
pub type Saved = Option<Arc<dyn Any + Send + Sync>>;

/// A fused operation with a hand-written derivative.
pub trait CustomOp: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Saved)>;

    /// Forward pass when no input is tracked, so nothing needs saving.
    fn forward_untracked(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        self.forward(inputs).map(|(out, _)| out)
    }

    fn backward(
        &self,
        inputs: &[Tensor],
        output: &Tensor,
        saved: &Saved,
        grad: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

#[derive(Clone, Debug)]
enum OpKind {
    Leaf,
    Primitive(Primitive),
    Custom(Arc<dyn CustomOp>),
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Primitive(p) => p.name(),
            OpKind::Custom(c) => c.name(),
        }
    }
}

struct Record {
    op: OpKind,
    inputs: Vec<Tensor>,
    output: Tensor,
    saved: Saved,
}

/// Read-only view of one recorded application.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordSummary {
    pub op: &'static str,
    pub inputs: Vec<Option<NodeId>>,
    pub output: NodeId,
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// The computation record: an append-only list of primitive applications in
/// the order they ran, which is therefore topological.
///
/// A tape belongs to a single training context. Applications whose inputs are
/// all untracked are evaluated but not recorded, so a fresh tape doubles as an
/// inference context.
pub struct Tape {
    id: u64,
    records: RefCell<Vec<Record>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("id", &self.id).field("records", &self.records.borrow().len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), records: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn summaries(&self) -> Vec<RecordSummary> {
        self.records
            .borrow()
            .iter()
            .map(|r| RecordSummary {
                op: r.op.name(),
                inputs: r.inputs.iter().map(Tensor::node).collect(),
                output: r.output.node().expect("recorded outputs are tracked"),
            })
            .collect()
    }

    fn push(&self, op: OpKind, inputs: Vec<Tensor>, output: Tensor, saved: Saved) -> Tensor {
        let mut records = self.records.borrow_mut();
        let node = NodeId { tape: self.id, index: records.len() };
        let output = output.with_node(node);
        records.push(Record { op, inputs, output: output.clone(), saved });
        output
    }

    /// Start tracking `t` as a differentiable leaf.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        self.push(OpKind::Leaf, Vec::new(), t.detach(), None)
    }

    fn check_inputs(&self, inputs: &[&Tensor]) -> Result<bool> {
        let mut tracked = false;
        for t in inputs {
            if let Some(node) = t.node() {
                if node.tape != self.id || node.index >= self.len() {
                    return Err(Error::DanglingNode(Some(node)));
                }
                tracked = true;
            }
        }
        Ok(tracked)
    }

    pub fn apply(&self, kind: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
        let tracked = self.check_inputs(inputs)?;
        let out = kind.forward(inputs)?;
        if !tracked {
            return Ok(out);
        }
        let values = inputs.iter().map(|t| (*t).clone()).collect();
        Ok(self.push(OpKind::Primitive(kind), values, out, None))
    }

    pub fn apply_custom(&self, op: Arc<dyn CustomOp>, inputs: &[&Tensor]) -> Result<Tensor> {
        if !self.check_inputs(inputs)? {
            return op.forward_untracked(inputs);
        }
        let (out, saved) = op.forward(inputs)?;
        let values = inputs.iter().map(|t| (*t).clone()).collect();
        Ok(self.push(OpKind::Custom(op), values, out, saved))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Every leaf on the tape gets an entry; leaves the loss does not depend
    /// on receive zeros.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if !loss.shape().is_empty() {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        let node = match loss.node() {
            Some(n) if n.tape == self.id && n.index < self.len() => n,
            other => return Err(Error::DanglingNode(other)),
        };
        let records = self.records.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; records.len()];
        grads[node.index] = Some(vec![1.0]);

        for idx in (0..=node.index).rev() {
            let rec = &records[idx];
            if matches!(rec.op, OpKind::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let needs: Vec<bool> = rec.inputs.iter().map(Tensor::requires_grad).collect();
            let input_grads = match &rec.op {
                OpKind::Primitive(p) => p.backward(&rec.inputs, &rec.output, &g, &needs),
                OpKind::Custom(c) => c.backward(&rec.inputs, &rec.output, &rec.saved, &g, &needs),
                OpKind::Leaf => unreachable!(),
            };
            for (input, ig) in rec.inputs.iter().zip(input_grads) {
                let (Some(n), Some(ig)) = (input.node(), ig) else { continue };
                match &mut grads[n.index] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }

        let mut map = HashMap::new();
        for (idx, rec) in records.iter().enumerate() {
            if !matches!(rec.op, OpKind::Leaf) {
                continue;
            }
            let shape = rec.output.shape().to_vec();
            let g = match grads[idx].take() {
                Some(g) => Tensor::raw(shape, g),
                None => Tensor::zeros(&shape),
            };
            map.insert(rec.output.node().unwrap(), g);
        }
        Ok(Gradients { map })
    }

    /// Re-run every recorded application from the leaves and check that each
    /// output comes out bit-identical.
    pub fn replay(&self) -> Result<()> {
        let records = self.records.borrow();
        let mut values: Vec<Tensor> = Vec::with_capacity(records.len());
        for rec in records.iter() {
            let inputs: Vec<Tensor> = rec
                .inputs
                .iter()
                .map(|t| match t.node() {
                    Some(n) => values[n.index].clone(),
                    None => t.clone(),
                })
                .collect();
            let refs: Vec<&Tensor> = inputs.iter().collect();
            let out = match &rec.op {
                OpKind::Leaf => rec.output.detach(),
                OpKind::Primitive(p) => p.forward(&refs)?,
                OpKind::Custom(c) => c.forward(&refs)?.0,
            };
            if !out.bit_eq(&rec.output.detach()) {
                return Err(Error::InvalidArgument(format!(
                    "replay of `{}` at node {} diverged",
                    rec.op.name(),
                    values.len()
                )));
            }
            values.push(out);
        }
        Ok(())
    }
}

/// Convenience wrappers around [`Tape::apply`].
impl Tape {
    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn div(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Div, &[a, b])
    }
    pub fn neg(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Neg, &[x])
    }
    pub fn exp(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Exp, &[x])
    }
    pub fn log(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Log, &[x])
    }
    pub fn sqrt(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Sqrt, &[x])
    }
    pub fn softplus(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Softplus, &[x])
    }
    pub fn sigmoid(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Sigmoid, &[x])
    }
    pub fn silu(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Silu, &[x])
    }
    pub fn tanh(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Tanh, &[x])
    }
    pub fn relu(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::Relu, &[x])
    }
    pub fn softmax(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::SoftmaxLastDim, &[x])
    }
    pub fn layernorm(&self, x: &Tensor, eps: f64) -> Result<Tensor> {
        self.apply(Primitive::LayerNorm { eps }, &[x])
    }
    pub fn slice(&self, x: &Tensor, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.apply(Primitive::Slice { axis, start, len }, &[x])
    }
    pub fn concat(&self, xs: &[&Tensor], axis: usize) -> Result<Tensor> {
        self.apply(Primitive::Concat { axis }, xs)
    }
    pub fn transpose(&self, x: &Tensor, dim0: usize, dim1: usize) -> Result<Tensor> {
        self.apply(Primitive::Transpose { dim0, dim1 }, &[x])
    }
    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        self.apply(Primitive::Reshape { shape: shape.to_vec() }, &[x])
    }
    pub fn sum(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::ReduceSum { axis: None }, &[x])
    }
    pub fn mean(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(Primitive::ReduceMean { axis: None }, &[x])
    }
    pub fn sum_axis(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.apply(Primitive::ReduceSum { axis: Some(axis) }, &[x])
    }
    pub fn mean_axis(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.apply(Primitive::ReduceMean { axis: Some(axis) }, &[x])
    }
    pub fn gather(&self, x: &Tensor, indices: &[usize]) -> Result<Tensor> {
        self.apply(Primitive::Gather { indices: indices.into() }, &[x])
    }
    pub fn cross_entropy(&self, logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
        self.apply(Primitive::CrossEntropy { targets: targets.into() }, &[logits])
    }
    pub fn scale(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        self.mul(x, &Tensor::scalar(c))
    }
    pub fn add_scalar(&self, x: &Tensor, c: f64) -> Result<Tensor> {
        self.add(x, &Tensor::scalar(c))
    }
    pub fn square(&self, x: &Tensor) -> Result<Tensor> {
        self.mul(x, x)
    }
    /// Last axis of `x` gets the trailing-axis slice `[start, start + len)`.
    pub fn slice_last(&self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        self.slice(x, x.rank() - 1, start, len)
    }
    /// Multiply every leading-axis row of `x` by the matching entry of `s`
    /// (shape `[rows]`), via transposition so only trailing broadcast is used.
    pub fn scale_rows(&self, x: &Tensor, s: &Tensor) -> Result<Tensor> {
        let rows = x.shape()[0];
        let rest = x.numel() / rows;
        let flat = self.reshape(x, &[rows, rest])?;
        let t = self.transpose(&flat, 0, 1)?;
        let scaled = self.mul(&t, s)?;
        let back = self.transpose(&scaled, 0, 1)?;
        self.reshape(&back, x.shape())
    }
}

/// Gradient map produced by [`Tape::backward`], keyed by leaf node.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: &Tensor) -> Option<&Tensor> {
        leaf.node().and_then(|n| self.map.get(&n))
    }

    pub fn by_node(&self, node: NodeId) -> Option<&Tensor> {
        self.map.get(&node)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, node: NodeId, grad: Tensor) {
        self.map.insert(node, grad);
    }

    pub fn global_norm(&self) -> f64 {
        // Sorted so the sum is independent of hash order.
        let mut nodes: Vec<&NodeId> = self.map.keys().collect();
        nodes.sort();
        nodes.into_iter().map(|n| self.map[n].data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.map.values_mut() {
            *g = g.map(|v| v * factor);
        }
    }

    /// Rescale so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(max_norm / norm);
        }
        norm
    }
}
