//! Wengert tape for reverse-mode differentiation over dense fields.
//!
//! Operations are recorded only when at least one input requires a gradient;
//! everything else is folded into constants, so a forward pass built purely from
//! constants retains no graph. Every recorded output is checked for finiteness
//! eagerly. The first offending op poisons the tape and is reported by
//! [`Tape::check`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

impl Var {
    pub fn node_id(&self) -> usize {
        self.id
    }
}

/// Vector-Jacobian product of one recorded primitive.
///
/// `needs[i]` tells whether input `i` wants a gradient; implementations may
/// return `None` for inputs that do not.
pub trait VjpOp: Send {
    fn name(&self) -> &'static str;
    fn vjp(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;
}

type VjpFn = dyn Fn(&[&Tensor], &Tensor, &Tensor, &[bool]) -> Vec<Option<Tensor>> + Send;

struct FnOp {
    name: &'static str,
    f: Box<VjpFn>,
}

impl VjpOp for FnOp {
    fn name(&self) -> &'static str {
        self.name
    }
    fn vjp(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        (self.f)(inputs, output, grad, needs)
    }
}

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    op: Option<Box<dyn VjpOp>>,
    needs_grad: bool,
    leaf: bool,
}

#[derive(Clone, Debug)]
struct Fault {
    op: String,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
    fault: Option<Fault>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.nodes.len())
            .field("recorded", &self.recorded_ops())
            .field("consumed", &self.consumed)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), consumed: false, fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes that carry a backward op.
    pub fn recorded_ops(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.id]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    fn push(&mut self, node: Node) -> Var {
        assert!(!self.consumed, "recording on a consumed tape");
        let id = self.nodes.len();
        self.nodes.push(node);
        Var { tape: self.id, id }
    }

    fn check_value(&mut self, op: &str, value: &Tensor) {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(Fault { op: op.to_string() });
        }
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.check_value("leaf", &value);
        self.push(Node { value, parents: Vec::new(), op: None, needs_grad: true, leaf: true })
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.check_value("constant", &value);
        self.push(Node { value, parents: Vec::new(), op: None, needs_grad: false, leaf: false })
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Records a primitive given its forward value and a vector-Jacobian closure.
    pub fn record<F>(&mut self, name: &'static str, inputs: &[Var], value: Tensor, vjp: F) -> Var
    where
        F: Fn(&[&Tensor], &Tensor, &Tensor, &[bool]) -> Vec<Option<Tensor>> + Send + 'static,
    {
        self.record_op(inputs, value, FnOp { name, f: Box::new(vjp) })
    }

    /// Records a primitive implemented as a [`VjpOp`].
    pub fn record_op<O: VjpOp + 'static>(&mut self, inputs: &[Var], value: Tensor, op: O) -> Var {
        self.check_value(op.name(), &value);
        let needs = inputs.iter().any(|&v| self.node(v).needs_grad);
        if !needs {
            return self.push(Node { value, parents: Vec::new(), op: None, needs_grad: false, leaf: false });
        }
        let parents = inputs.iter().map(|v| v.id).collect();
        self.push(Node { value, parents, op: Some(Box::new(op)), needs_grad: true, leaf: false })
    }

    /// Fails with the first non-finite op recorded so far.
    pub fn check(&self) -> Result<()> {
        match &self.fault {
            Some(f) => Err(Error::NonFinite { op: f.op.clone(), step: None }),
            None => Ok(()),
        }
    }

    /// True when `target` was computed (transitively) from `source`.
    pub fn depends_on(&self, target: Var, source: Var) -> bool {
        assert!(target.tape == self.id && source.tape == self.id, "variable belongs to a different tape");
        if target.id < source.id {
            return false;
        }
        let mut seen = vec![false; target.id + 1];
        let mut stack = vec![target.id];
        while let Some(id) = stack.pop() {
            if id == source.id {
                return true;
            }
            if seen[id] {
                continue;
            }
            seen[id] = true;
            for &p in &self.nodes[id].parents {
                if p >= source.id && !seen[p] {
                    stack.push(p);
                }
            }
        }
        false
    }

    /// Reverse pass from a scalar seed. Consumes the tape.
    pub fn backward(&mut self, seed: Var) -> Result<Gradients> {
        let shape = self.node(seed).value.shape().to_vec();
        if !self.node(seed).value.is_scalar() {
            return Err(Error::SeedNotScalar(shape));
        }
        let ones = Tensor::full(&shape, 1.0);
        self.backward_from(vec![(seed, ones)])
    }

    /// Reverse pass from several outputs with given cotangents. Consumes the tape.
    pub fn backward_from(&mut self, seeds: Vec<(Var, Tensor)>) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        let top = seeds.iter().map(|(v, _)| v.id).max();
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        for (v, g) in seeds {
            let node = self.node(v);
            if g.shape() != node.value.shape() {
                return Err(Error::Shape(format!("seed cotangent {:?} for value {:?}", g.shape(), node.value.shape())));
            }
            if !node.needs_grad {
                continue;
            }
            accumulate(&mut grads[v.id], g);
        }
        let mut leaves = HashMap::new();
        if let Some(top) = top {
            for id in (0..=top).rev() {
                let Some(g) = grads[id].take() else { continue };
                let node = &mut self.nodes[id];
                if let Some(op) = node.op.take() {
                    let parents = std::mem::take(&mut node.parents);
                    let node = &self.nodes[id];
                    let inputs: Vec<&Tensor> = parents.iter().map(|&p| &self.nodes[p].value).collect();
                    let needs: Vec<bool> = parents.iter().map(|&p| self.nodes[p].needs_grad).collect();
                    let input_grads = op.vjp(&inputs, &node.value, &g, &needs);
                    debug_assert_eq!(input_grads.len(), parents.len(), "{} returned wrong arity", op.name());
                    for ((&p, gi), need) in parents.iter().zip(input_grads).zip(needs) {
                        if let (true, Some(gi)) = (need, gi) {
                            debug_assert_eq!(
                                gi.shape(),
                                self.nodes[p].value.shape(),
                                "{} produced a gradient of the wrong shape",
                                op.name()
                            );
                            accumulate(&mut grads[p], gi);
                        }
                    }
                }
                if self.nodes[id].leaf {
                    leaves.insert(id, g);
                }
            }
        }
        let shapes =
            self.nodes.iter().enumerate().filter(|(_, n)| n.leaf).map(|(i, n)| (i, n.value.shape().to_vec())).collect();
        Ok(Gradients { tape: self.id, grads: leaves, shapes })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Gradients of leaves after a backward pass. Unreached leaves read as zero.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: HashMap<usize, Tensor>,
    shapes: HashMap<usize, Vec<usize>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        match self.grads.get(&v.id) {
            Some(g) => g.clone(),
            None => {
                let shape = self.shapes.get(&v.id).expect("gradient requested for a non-leaf variable");
                Tensor::zeros(shape)
            }
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.wrt(v).item()
    }

    /// Leaf node-id to gradient, including zero entries for unreached leaves.
    pub fn into_map(self) -> HashMap<usize, Tensor> {
        let mut out = self.grads;
        for (id, shape) in self.shapes {
            out.entry(id).or_insert_with(|| Tensor::zeros(&shape));
        }
        out
    }
}
