//! Minimal reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records one closure per operation; [`Tape::backward`] replays
//! them in reverse creation order. Values are reference counted so recording
//! an operation never copies its inputs. A tape created with
//! [`Tape::inference`] records nothing and intermediate values are freed as
//! soon as they go out of scope.
//!
//! Complex tensors use an interleaved trailing axis of length 2 (re, im).
//! For a real loss `L` the gradient of a complex value `z` is stored as
//! `∂L/∂re + i ∂L/∂im`, so a complex-linear map `y = K x` backpropagates as
//! `g_x = Kᴴ g_y`.

mod complex;
mod nnops;
mod ops;

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::tensor::Tensor;

type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// A value in the computation, optionally tracked by a tape node.
#[derive(Clone)]
pub struct Var {
    value: Rc<Tensor>,
    node: Option<usize>,
}

impl Var {
    /// An untracked value.
    pub fn constant(t: Tensor) -> Self {
        Self {
            value: Rc::new(t),
            node: None,
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn rc(&self) -> Rc<Tensor> {
        self.value.clone()
    }
}

impl core::fmt::Debug for Var {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.shape())
            .field("node", &self.node)
            .finish()
    }
}

pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A tape that never records; all results are untracked constants.
    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, t: Tensor) -> Var {
        self.leaf_rc(Rc::new(t))
    }

    pub fn leaf_rc(&self, value: Rc<Tensor>) -> Var {
        if !self.recording {
            return Var { value, node: None };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: Vec::new(),
            backward: None,
        });
        Var {
            value,
            node: Some(nodes.len() - 1),
        }
    }

    pub(crate) fn push<F>(&self, value: Tensor, parents: &[&Var], backward: F) -> Var
    where
        F: Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        if !self.recording || parents.iter().all(|p| p.node.is_none()) {
            return Var::constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: parents.iter().map(|p| p.node.unwrap_or(usize::MAX)).collect(),
            backward: Some(Box::new(backward)),
        });
        Var {
            value: Rc::new(value),
            node: Some(nodes.len() - 1),
        }
    }

    /// Gradients of a scalar `loss` with respect to every tracked node.
    pub fn backward(&self, loss: &Var) -> Grads {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root) = loss.node else {
            return Grads { grads };
        };
        assert_eq!(loss.value.len(), 1, "backward needs a scalar loss");
        grads[root] = Some(Tensor::ones(loss.shape()));
        for id in (0..=root).rev() {
            let node = &nodes[id];
            let Some(bw) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| p != usize::MAX).collect();
            let pg = bw(&g, &needs);
            debug_assert_eq!(pg.len(), node.parents.len());
            for (&p, gp) in node.parents.iter().zip(pg) {
                if p == usize::MAX {
                    continue;
                }
                if let Some(gp) = gp {
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&gp),
                        slot @ None => *slot = Some(gp),
                    }
                }
            }
        }
        Grads { grads }
    }
}

/// Result of [`Tape::backward`]; only leaf gradients survive.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn wrt(&self, v: &Var) -> Option<&Tensor> {
        v.node.and_then(|id| self.grads.get(id).and_then(|g| g.as_ref()))
    }

    /// Gradient or zeros shaped like `v`.
    pub fn wrt_or_zero(&self, v: &Var) -> Tensor {
        self.wrt(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.shape()))
    }
}

pub(crate) fn grads_of<const N: usize>(v: [Option<Tensor>; N]) -> Vec<Option<Tensor>> {
    let mut out = vec![];
    out.extend(v);
    out
}
