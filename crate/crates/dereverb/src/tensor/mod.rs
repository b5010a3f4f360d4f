//! Dense 64-bit float tensors with tape-based reverse-mode differentiation.
//!
//! Everything the sequence models need — dense layers, 1-D/2-D convolution,
//! layer norm, softmax, recurrent cells — is expressed through the ops in
//! [`Tape`]. The tape records one backward closure per forward op and replays
//! them in reverse on [`Tape::backward`], accumulating gradients additively
//! into every tensor that was created with `requires_grad`.
//!
//! Design notes:
//! - f64 throughout; desk-scale problem sizes make memory a non-issue and
//!   finite-difference gradient checks need the headroom.
//! - Tensor data is immutable between forward and backward. Parameter
//!   updates happen between steps via [`Tensor::apply_update`].
//! - A tape is single-threaded. Tensors may be shared across threads for
//!   read-only inference.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub mod check;
mod mat;
mod ops;

pub use mat::{matmul_raw, matmul_nt_raw, matmul_tn_raw};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("{op}: kernel {kernel:?} larger than padded input {input:?}")]
    KernelTooLarge {
        op: &'static str,
        kernel: Vec<usize>,
        input: Vec<usize>,
    },
    #[error("log of non-positive value {value} at index {index}")]
    LogDomain { value: f64, index: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("init_normal requires std > 0, got {0}")]
    BadStd(f64),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
}

struct TensorInner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
}

/// A dense row-major f64 tensor. Cheap to clone (shared storage).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Self::from_parts(data, shape, false))
    }

    /// A learnable tensor: participates in gradient accumulation.
    pub fn param(data: Vec<f64>, shape: Vec<usize>) -> Result<Self, TensorError> {
        let t = Self::new(data, shape)?;
        Ok(Self {
            inner: Rc::new(TensorInner {
                shape: t.inner.shape.clone(),
                data: RefCell::new(t.to_vec()),
                requires_grad: true,
                grad: RefCell::new(None),
            }),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Self::from_parts(vec![0.0; numel], shape, false)
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![v], vec![1], false)
    }

    fn from_parts(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Self {
            inner: Rc::new(TensorInner {
                shape,
                data: RefCell::new(data),
                requires_grad,
                grad: RefCell::new(None),
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data.borrow()[0]
    }

    /// Interpret as a 2-D matrix.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.inner.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::BadShape {
                op,
                expected: "a 2-D tensor".into(),
                got: self.inner.shape.clone(),
            }),
        }
    }

    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
        match self.inner.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(TensorError::BadShape {
                op,
                expected: "a 3-D tensor".into(),
                got: self.inner.shape.clone(),
            }),
        }
    }

    /// Current accumulated gradient, if any flowed to this tensor.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// In-place update of the underlying data (optimizer steps, finite
    /// differences). Must not be called while an un-drained tape references
    /// this tensor.
    pub fn apply_update(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.data.borrow_mut());
    }
}

/// Draw a deterministic normal tensor. Same seed, same bits.
pub fn init_normal(
    shape: Vec<usize>,
    mean: f64,
    std: f64,
    rng_seed: u64,
) -> Result<Tensor, TensorError> {
    if !(std > 0.0) {
        return Err(TensorError::BadStd(std));
    }
    let dist = Normal::new(mean, std).map_err(|_| TensorError::BadStd(std))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| dist.sample(&mut rng)).collect();
    Tensor::param(data, shape)
}

type BackwardFn = Box<dyn FnOnce()>;

/// Records forward ops and replays their gradient rules in reverse.
pub struct Tape {
    ops: RefCell<Vec<BackwardFn>>,
    active: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: RefCell::new(Vec::new()),
            active: true,
        }
    }

    /// A tape that computes forward values but records nothing. Used for
    /// inference where no backward pass will run.
    pub fn inactive() -> Self {
        Tape {
            ops: RefCell::new(Vec::new()),
            active: false,
        }
    }

    pub fn num_ops(&self) -> usize {
        self.ops.borrow().len()
    }

    fn record(&self, f: impl FnOnce() + 'static) {
        if self.active {
            self.ops.borrow_mut().push(Box::new(f));
        }
    }

    /// True when an op with these inputs should be recorded; also the
    /// `requires_grad` flag of the op's output.
    fn track(&self, inputs: &[&Tensor]) -> bool {
        self.active && inputs.iter().any(|t| t.requires_grad())
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate additively, so
    /// callers zero parameter grads between steps.
    pub fn backward(&self, loss: &Tensor) -> Result<(), TensorError> {
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
        }
        loss.accumulate_grad(&[1.0]);
        let mut ops = self.ops.borrow_mut();
        while let Some(op) = ops.pop() {
            op();
        }
        Ok(())
    }
}
