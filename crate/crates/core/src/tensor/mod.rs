//! A small reverse-mode autodiff engine over dense N-dimensional arrays.
//!
//! Every operation that involves at least one tensor requiring gradients
//! records a backward closure on the output node. Calling [`Tensor::backward`]
//! on a scalar walks the recorded graph in reverse topological order. Only
//! leaves (tensors created with [`Tensor::leaf`], typically parameters) keep
//! their gradient afterwards; intermediate gradients are transient, so
//! repeated `backward` calls on the same loss accumulate exactly once per
//! call. The graph lives as long as the output tensor does.
//!
//! The element type is generic over [`Real`]. Models run in `f32`;
//! finite-difference checks run the same code in `f64`.

mod conv;
mod ops;
mod optim;
mod winograd;

pub use conv::{conv2d, conv_transpose2d};
pub use ops::{concat, concat_channels};
pub use optim::{clamp_params, rmsprop_step, Parameter};

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

/// Floating-point element type of a [`Tensor`].
pub trait Real:
    Copy
    + Default
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn powf(self, p: Self) -> Self;
    fn is_finite(self) -> bool;

    /// `c = alpha * a * b + beta * c` for row-major `a: m×k`, `b: k×n`.
    /// Strides are `(row, col)` pairs in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        ldc: usize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn powf(self, p: Self) -> Self {
                <$t>::powf(self, p)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                ldc: usize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let max_a = (m as isize - 1) * a_strides.0 + (k as isize - 1).max(0) * a_strides.1;
                let max_b = (k as isize - 1).max(0) * b_strides.0 + (n as isize - 1) * b_strides.1;
                assert!(k == 0 || (max_a as usize) < a.len(), "gemm: lhs out of bounds");
                assert!(k == 0 || (max_b as usize) < b.len(), "gemm: rhs out of bounds");
                assert!((m - 1) * ldc + n <= c.len(), "gemm: output out of bounds");
                // SAFETY: all three operands were bounds-checked above for the
                // extents and strides handed to the kernel.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        ldc as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Maps the upstream gradient onto one gradient per parent (`None` for
/// parents that do not need one).
type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Real> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Reference-counted handle to a node in the autodiff graph.
pub struct Tensor<T: Real = f32> {
    node: Rc<Node<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.node.data.borrow();
        let preview: Vec<_> = data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn new_node(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward,
            }),
        }
    }

    /// A constant tensor (never receives gradients).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} elements but {} were supplied",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::new_node(shape.to_vec(), data, false, vec![], None))
    }

    /// A gradient-tracking leaf, the backing store of a [`Parameter`].
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} holds {} elements but {} were supplied",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::new_node(shape.to_vec(), data, true, vec![], None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_node(shape.to_vec(), vec![T::ZERO; numel(shape)], false, vec![], None)
    }

    pub fn scalar(v: T) -> Self {
        Self::new_node(vec![], vec![v], false, vec![], None)
    }

    /// Builds the output of an operation, recording `backward` only when a
    /// parent needs gradients and recording is enabled.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: &[&Tensor<T>],
        backward: impl Fn(&[T]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::new_node(
                shape,
                data,
                true,
                parents.iter().map(|p| (*p).clone()).collect(),
                Some(Box::new(backward)),
            )
        } else {
            Self::new_node(shape, data, false, vec![], None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.backward.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Overwrites the values in place. Intended for parameter updates; any
    /// graph recorded from the old values becomes stale.
    pub fn set_data(&self, values: &[T]) -> Result<()> {
        let mut data = self.node.data.borrow_mut();
        if data.len() != values.len() {
            return Err(Error::Dimension(format!(
                "set_data: expected {} values, got {}",
                data.len(),
                values.len()
            )));
        }
        data.copy_from_slice(values);
        Ok(())
    }

    pub(crate) fn data_mut(&self) -> std::cell::RefMut<'_, Vec<T>> {
        self.node.data.borrow_mut()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let data = self.node.data.borrow();
        assert_eq!(data.len(), 1, "item() on a tensor of shape {:?}", self.shape());
        data[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Same values, no history.
    pub fn detach(&self) -> Self {
        Self::new_node(self.shape().to_vec(), self.to_vec(), false, vec![], None)
    }

    /// Reverse-mode differentiation from a scalar. Leaf gradients accumulate
    /// across calls until zeroed.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Usage(
                "backward on a tensor that does not depend on any parameter".into(),
            ));
        }

        // Iterative post-order DFS gives a topological order.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashMap<usize, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if visited.insert(t.node.id, ()).is_some() {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.node.parents {
                if p.requires_grad() && !visited.contains_key(&p.node.id) {
                    stack.push((p.clone(), false));
                }
            }
        }

        let mut grads: HashMap<usize, Vec<T>> = HashMap::new();
        grads.insert(self.node.id, vec![T::ONE]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.node.id) else {
                continue;
            };
            match &t.node.backward {
                None => {
                    let mut slot = t.node.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(f) => {
                    let parent_grads = f(&g);
                    debug_assert_eq!(parent_grads.len(), t.node.parents.len());
                    for (p, pg) in t.node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.node.id) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                            None => {
                                grads.insert(p.node.id, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Converts between element types, dropping history.
pub fn cast<A: Real, B: Real>(t: &Tensor<A>) -> Tensor<B> {
    let data = t.data().iter().map(|v| B::from_f64(v.to_f64())).collect();
    Tensor::new_node(t.shape().to_vec(), data, false, vec![], None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_linear_mean() {
        let w = Tensor::<f64>::leaf(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = w.mul(&x).unwrap().mean();
        loss.backward().unwrap();
        let g = w.grad().unwrap();
        for (gi, xi) in g.iter().zip([1.0, 2.0, 3.0]) {
            assert!((gi - xi / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::<f64>::leaf(&[2], vec![1.0, 2.0]).unwrap();
        let x = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let loss = w.mul(&x).unwrap().square().mean();
        loss.backward().unwrap();
        let once = w.grad().unwrap();
        loss.backward().unwrap();
        let twice = w.grad().unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reused_tensor_accumulates_k_fold() {
        for k in [2usize, 3] {
            let w = Tensor::<f64>::leaf(&[2], vec![0.3, -0.7]).unwrap();
            let mut acc = w.clone();
            for _ in 1..k {
                acc = acc.add(&w).unwrap();
            }
            acc.sum().backward().unwrap();
            assert_eq!(w.grad().unwrap(), vec![k as f64; 2]);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let w = Tensor::<f32>::leaf(&[2], vec![1.0, 2.0]).unwrap();
        let y = w.relu();
        assert!(matches!(y.backward(), Err(Error::Usage(_))));
    }

    #[test]
    fn no_grad_records_nothing() {
        let w = Tensor::<f32>::leaf(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| w.square());
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }
}
