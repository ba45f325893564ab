//! Dense f64 tensors and a reverse-mode differentiation tape.
//!
//! A [`Tensor`] is a cheaply clonable handle to row-major f64 storage plus an
//! optional gradient buffer. Ops (see [`ops`]) compute eagerly and, when a
//! [`Tape`] is active, record one backward closure each. [`Tape::backward`]
//! replays the closures in reverse, accumulating `dLoss/dTensor` additively
//! into every tensor that transitively feeds a differentiable leaf, so
//! fan-out (one tensor consumed by several ops) sums its contributions.
//!
//! The construction API is single-threaded (`Tensor` is not `Send`); numeric
//! kernels may still fan work out to rayon internally because they only share
//! plain `&[f64]` views with worker threads.

pub mod gradcheck;
pub mod kernels;
pub mod ops;

use std::cell::{Cell, Ref, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

struct Inner {
    id: u64,
    shape: Vec<usize>,
    /// Storage is shared between metadata-only views (reshape), hence the
    /// second `Rc` layer.
    data: Rc<RefCell<Vec<f64>>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
    /// True when this tensor is, or depends on, a `requires_grad` leaf.
    /// Backward closures skip inputs that do not need gradients.
    needs_grad: Cell<bool>,
}

/// Row-major dense tensor of f64 values.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

impl Tensor {
    fn alloc(data: Rc<RefCell<Vec<f64>>>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                grad: RefCell::new(None),
                requires_grad: Cell::new(requires_grad),
                needs_grad: Cell::new(requires_grad),
            }),
        }
    }

    /// Builds a tensor from a flat row-major buffer.
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::config(format!(
                "shape {:?} implies {} elements but buffer holds {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor::alloc(Rc::new(RefCell::new(data)), shape.to_vec(), false))
    }

    /// Builds a trainable leaf (requires_grad = true).
    pub fn param_from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::from_vec(data, shape)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::alloc(Rc::new(RefCell::new(vec![0.0; numel])), shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor::alloc(Rc::new(RefCell::new(vec![value; numel])), shape.to_vec(), false)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::alloc(Rc::new(RefCell::new(vec![value])), vec![1], false)
    }

    /// Internal: output of an op; needs a gradient iff any input does.
    pub(crate) fn op_output(data: Vec<f64>, shape: &[usize], inputs: &[&Tensor]) -> Tensor {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "op produced a non-finite value for shape {shape:?}"
        );
        let t = Tensor::alloc(Rc::new(RefCell::new(data)), shape.to_vec(), false);
        t.inner
            .needs_grad
            .set(inputs.iter().any(|i| i.needs_grad()));
        t
    }

    /// Internal: metadata-only view over the same storage (for reshape).
    pub(crate) fn view_with_shape(&self, shape: Vec<usize>) -> Tensor {
        let t = Tensor::alloc(Rc::clone(&self.inner.data), shape, false);
        t.inner.needs_grad.set(self.needs_grad());
        t
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    /// Borrow of the value buffer. Do not hold across op calls that mutate
    /// the same tensor.
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn value(&self) -> f64 {
        assert_eq!(self.numel(), 1, "value() on non-scalar tensor");
        self.inner.data.borrow()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub fn set_requires_grad(&self, on: bool) {
        self.inner.requires_grad.set(on);
        if on {
            self.inner.needs_grad.set(true);
        }
    }

    pub(crate) fn needs_grad(&self) -> bool {
        self.inner.needs_grad.get()
    }

    /// Replaces the stored values (shape is fixed). For optimizer updates.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::usage(format!(
                "set_data with {} values on tensor of {} elements",
                values.len(),
                self.numel()
            )));
        }
        self.inner.data.borrow_mut().copy_from_slice(values);
        Ok(())
    }

    /// In-place elementwise update of the stored values.
    pub fn map_data(&self, mut f: impl FnMut(f64) -> f64) {
        for v in self.inner.data.borrow_mut().iter_mut() {
            *v = f(*v);
        }
    }

    /// Adds `delta` to one coordinate. Used by finite differencing.
    pub fn perturb(&self, index: usize, delta: f64) {
        self.inner.data.borrow_mut()[index] += delta;
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Accumulates a gradient contribution (allocating zeros on first use).
    pub(crate) fn add_to_grad(&self, contribution: &[f64]) {
        debug_assert_eq!(contribution.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    fn seed_grad_one(&self) {
        *self.inner.grad.borrow_mut() = Some(vec![1.0]);
    }
}

/// Records the backward pass of each op in construction order.
pub struct Tape {
    records: Vec<Box<dyn Fn()>>,
    active: bool,
}

impl Tape {
    /// A tape that records backward closures.
    pub fn new() -> Tape {
        Tape { records: Vec::new(), active: true }
    }

    /// A tape that records nothing; use for inference and finite-difference
    /// probing where gradients are not needed.
    pub fn inactive() -> Tape {
        Tape { records: Vec::new(), active: false }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Number of recorded ops.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records a backward closure if recording is on and the op's output
    /// needs a gradient.
    pub(crate) fn record(&mut self, output_needs_grad: bool, f: impl Fn() + 'static) {
        if self.active && output_needs_grad {
            self.records.push(Box::new(f));
        }
    }

    /// Seeds `dLoss/dLoss = 1` and replays all recorded ops in reverse,
    /// accumulating gradients into every tensor that needs one. Consumes the
    /// tape: each graph is differentiated once.
    pub fn backward(mut self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        loss.seed_grad_one();
        for record in self.records.drain(..).rev() {
            record();
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
