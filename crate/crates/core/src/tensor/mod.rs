//! Dense rank-4 tensors with a reverse-mode differentiation tape.
//!
//! Every tensor has shape `(batch, channel, height, width)` and row-major
//! storage. Operations on tensors that carry a tape reference are recorded
//! on that tape; `Tensor::backward` replays the tape in reverse and
//! accumulates gradients into the [`ParamStore`] that supplied the leaves.
//!
//! Token sequences are stored channel-major as `(B, C, 1, L)`, so a
//! per-token affine map is the same kernel as a 1×1 convolution.

mod conv;
mod elementwise;
mod layout;
mod norm;
mod param;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use elementwise::{BinaryKind, UnaryKind};
pub use param::{Ctx, ParamId, ParamStore, Parameter};

pub type Shape = [usize; 4];

/// Gradient rule of a recorded operation: receives the output gradient and a
/// per-input flag telling which input gradients are wanted.
pub type BackwardFn = Box<dyn FnOnce(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

pub fn numel(shape: Shape) -> usize {
    shape.iter().product()
}

#[derive(Clone)]
pub struct Tensor {
    shape: Shape,
    data: Rc<Vec<f64>>,
    node: Option<NodeRef>,
}

#[derive(Clone)]
struct NodeRef {
    tape: Tape,
    id: usize,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .field("data", &DataPreview(&self.data))
            .finish()
    }
}

struct DataPreview<'a>(&'a [f64]);

impl fmt::Debug for DataPreview<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() <= 8 {
            write!(f, "{:?}", self.0)
        } else {
            write!(f, "{:?}.. ({} values)", &self.0[..8], self.0.len())
        }
    }
}

impl Tensor {
    /// Builds a constant tensor. Rejects length mismatches and non-finite values.
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != numel(shape) {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite value at flat index {pos}")));
        }
        Ok(Tensor { shape, data: Rc::new(data), node: None })
    }

    pub fn zeros(shape: Shape) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Tensor {
        assert!(value.is_finite());
        Tensor { shape, data: Rc::new(vec![value; numel(shape)]), node: None }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::full([1, 1, 1, 1], value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f64) -> Tensor {
        let mut data = Vec::with_capacity(numel(shape));
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Tensor::new(shape, data).expect("from_fn produced a non-finite value")
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn at(&self, idx: [usize; 4]) -> f64 {
        let [_, c, h, w] = self.shape;
        self.data[((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::contract(format!("item() on tensor of shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    /// True when the tensor participates in a recording tape.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape, data: Rc::clone(&self.data), node: None }
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.data)
    }

    /// Records a custom operation. `backward` is only kept when at least one
    /// input is tracked; the output is checked for finiteness when the tape
    /// (or, for untracked inputs, the build profile) asks for it.
    pub fn from_op(
        op: &'static str,
        inputs: &[&Tensor],
        shape: Shape,
        data: Vec<f64>,
        backward: impl FnOnce(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Result<Tensor> {
        debug_assert_eq!(data.len(), numel(shape), "op `{op}` produced wrong length");
        let tape = shared_tape(inputs)?;
        match tape {
            None => {
                if cfg!(debug_assertions) && data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op, node: None });
                }
                Ok(Tensor { shape, data: Rc::new(data), node: None })
            }
            Some(tape) => {
                let slots = inputs.iter().map(|t| t.node_id()).collect::<Vec<_>>();
                let id = tape.push_op(op, shape, &data, slots, Box::new(backward))?;
                Ok(Tensor { shape, data: Rc::new(data), node: Some(NodeRef { tape, id }) })
            }
        }
    }

    /// True when any of `inputs` is tracked, i.e. a backward rule will be kept.
    pub fn any_tracked(inputs: &[&Tensor]) -> bool {
        inputs.iter().any(|t| t.node.is_some())
    }

    /// Reverse pass from a scalar loss. Gradients are added into `params`.
    pub fn backward(&self, params: &mut ParamStore) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape
            )));
        }
        let node = self
            .node
            .as_ref()
            .ok_or_else(|| Error::contract("backward on a detached loss (not on any tape)"))?;
        node.tape.run_backward(node.id, params)
    }
}

fn shared_tape(inputs: &[&Tensor]) -> Result<Option<Tape>> {
    let mut found: Option<&Tape> = None;
    for t in inputs {
        if let Some(n) = &t.node {
            match found {
                None => found = Some(&n.tape),
                Some(f) if Rc::ptr_eq(&f.0, &n.tape.0) => {}
                Some(_) => return Err(Error::contract("operands recorded on different tapes")),
            }
        }
    }
    Ok(found.cloned())
}

/// Ordered record of operations for one forward pass.
#[derive(Clone)]
pub struct Tape(Rc<RefCell<TapeInner>>);

struct TapeInner {
    recording: bool,
    check_finite: bool,
    consumed: bool,
    nodes: Vec<Node>,
}

struct Node {
    op: &'static str,
    shape: Shape,
    kind: NodeKind,
}

enum NodeKind {
    Leaf(ParamId),
    Op { slots: Vec<Option<usize>>, backward: Option<BackwardFn> },
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::with_mode(true)
    }

    /// A tape that records nothing; parameters read through it are constants.
    pub fn no_grad() -> Tape {
        Tape::with_mode(false)
    }

    fn with_mode(recording: bool) -> Tape {
        Tape(Rc::new(RefCell::new(TapeInner {
            recording,
            check_finite: cfg!(debug_assertions),
            consumed: false,
            nodes: Vec::new(),
        })))
    }

    pub fn is_recording(&self) -> bool {
        self.0.borrow().recording
    }

    /// Turns finiteness checks after every recorded op on or off.
    pub fn set_check_finite(&self, on: bool) {
        self.0.borrow_mut().check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf tensor for a parameter; constant when the tape does not record.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Tensor {
        let p = store.get(id);
        let data = Rc::new(p.value.clone());
        let mut inner = self.0.borrow_mut();
        if !inner.recording || inner.consumed {
            return Tensor { shape: p.shape, data, node: None };
        }
        let nid = inner.nodes.len();
        inner.nodes.push(Node { op: "param", shape: p.shape, kind: NodeKind::Leaf(id) });
        drop(inner);
        Tensor { shape: p.shape, data, node: Some(NodeRef { tape: self.clone(), id: nid }) }
    }

    fn push_op(
        &self,
        op: &'static str,
        shape: Shape,
        data: &[f64],
        slots: Vec<Option<usize>>,
        backward: BackwardFn,
    ) -> Result<usize> {
        let mut inner = self.0.borrow_mut();
        if inner.consumed {
            return Err(Error::contract("recording on a tape whose backward pass already ran"));
        }
        let id = inner.nodes.len();
        if inner.check_finite && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op, node: Some(id) });
        }
        inner.nodes.push(Node { op, shape, kind: NodeKind::Op { slots, backward: Some(backward) } });
        Ok(id)
    }

    fn run_backward(&self, root: usize, params: &mut ParamStore) -> Result<()> {
        let nodes = {
            let mut inner = self.0.borrow_mut();
            if inner.consumed {
                return Err(Error::contract("tape already consumed by a previous backward pass"));
            }
            inner.consumed = true;
            std::mem::take(&mut inner.nodes)
        };
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root + 1, || None);
        grads[root] = Some(vec![1.0]);
        let mut nodes = nodes;
        nodes.truncate(root + 1);
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut nodes[id];
            match &mut node.kind {
                NodeKind::Leaf(pid) => params.accumulate(*pid, &g)?,
                NodeKind::Op { slots, backward } => {
                    let needs = slots.iter().map(Option::is_some).collect::<Vec<_>>();
                    let rule = backward.take().expect("each node is visited once");
                    let input_grads = rule(&g, &needs);
                    for (slot, ig) in slots.iter().zip(input_grads) {
                        let (Some(parent), Some(ig)) = (slot, ig) else { continue };
                        match &mut grads[*parent] {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            empty => *empty = Some(ig),
                        }
                    }
                }
            }
            debug_assert!(node.shape.iter().product::<usize>() == g.len(), "grad shape at `{}`", node.op);
        }
        Ok(())
    }
}
