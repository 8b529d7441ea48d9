use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{invalid, shape_err, Error, Result};
use crate::shape::numel;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Disables graph recording on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|c| c.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    NoGradGuard { prev }
}

/// Backward rule of a recorded operation.
///
/// Implementations hold clones of their input tensors (and whatever forward
/// intermediates they need). `backward` receives the gradient of the output
/// and returns one entry per input, `None` for inputs that do not require a
/// gradient.
pub trait GradFn {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> &[Tensor];
    fn backward(&self, output: &Tensor, grad_output: &[f32]) -> Vec<Option<Vec<f32>>>;
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f32>>>,
    grad_fn: Option<Box<dyn GradFn>>,
}

/// Reference-counted handle to a node of the autodiff graph.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.0.data.borrow();
        let preview: Vec<f32> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.grad_fn.as_ref().map(|g| g.name()))
            .field("data", &preview)
            .finish()
    }
}

impl Tensor {
    fn from_node(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, grad_fn: Option<Box<dyn GradFn>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: next_id(),
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            grad_fn,
        }))
    }

    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::from_node(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn parameter(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(Self::from_node(t.shape().to_vec(), t.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self::from_node(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_node(vec![], vec![value], false, None)
    }

    /// Build the output of a custom operation.
    ///
    /// The graph edge is recorded only when gradient tracking is enabled and
    /// some input of `grad_fn` requires a gradient.
    pub fn from_op(data: Vec<f32>, shape: &[usize], grad_fn: Box<dyn GradFn>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(shape_err(
                grad_fn.name(),
                format!("output shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::output(data, shape.to_vec(), || grad_fn))
    }

    /// Helper for op implementations: attaches the grad fn lazily.
    pub(crate) fn output_with<F>(data: Vec<f32>, shape: Vec<usize>, inputs: &[&Tensor], make: F) -> Self
    where
        F: FnOnce() -> Box<dyn GradFn>,
    {
        if is_grad_enabled() && inputs.iter().any(|t| t.requires_grad()) {
            Self::from_node(shape, data, true, Some(make()))
        } else {
            Self::from_node(shape, data, false, None)
        }
    }

    fn output<F>(data: Vec<f32>, shape: Vec<usize>, make: F) -> Self
    where
        F: FnOnce() -> Box<dyn GradFn>,
    {
        let gf = make();
        if is_grad_enabled() && gf.inputs().iter().any(|t| t.requires_grad()) {
            Self::from_node(shape, data, true, Some(gf))
        } else {
            Self::from_node(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Name of the recorded op, if any.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.name())
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.borrow().clone()
    }

    pub fn item(&self) -> f32 {
        self.0.data.borrow()[0]
    }

    /// Overwrite values in place (optimizer updates, checkpoint loading).
    pub fn set_data(&self, values: &[f32]) -> Result<()> {
        let mut d = self.0.data.borrow_mut();
        if d.len() != values.len() {
            return Err(shape_err(
                "set_data",
                format!("expected {} values, got {}", d.len(), values.len()),
            ));
        }
        d.copy_from_slice(values);
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [f32])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<f32>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the values with no graph history.
    pub fn detach(&self) -> Tensor {
        Self::from_node(self.0.shape.clone(), self.to_vec(), false, None)
    }

    pub(crate) fn accumulate_grad(&self, g: &[f32]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += *b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar root.
    ///
    /// Nodes are visited in decreasing creation order, which is a valid
    /// reverse topological order since every op is created after its inputs.
    /// Gradients accumulate; call [`Tensor::zero_grad`] between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(invalid("backward", "root does not require grad"));
        }

        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(t) = stack.pop() {
            if let Some(gf) = &t.0.grad_fn {
                for inp in gf.inputs() {
                    if inp.requires_grad() && seen.insert(inp.id()) {
                        stack.push(inp.clone());
                    }
                }
            }
            order.push(t);
        }
        order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        // Gradients of intermediate nodes are kept separately from the
        // accumulated `.grad` so that repeated sweeps do not re-propagate
        // gradients left over from an earlier call.
        let mut pending: std::collections::HashMap<u64, Vec<f32>> = std::collections::HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for t in &order {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            t.accumulate_grad(&g);
            let Some(gf) = &t.0.grad_fn else {
                continue;
            };
            let grads = gf.backward(t, &g);
            debug_assert_eq!(grads.len(), gf.inputs().len(), "{}", gf.name());
            for (inp, gi) in gf.inputs().iter().zip(grads) {
                let Some(gi) = gi else { continue };
                if !inp.requires_grad() {
                    continue;
                }
                debug_assert_eq!(gi.len(), inp.numel(), "{} grad size", gf.name());
                match pending.get_mut(&inp.id()) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&gi) {
                            *a += *b;
                        }
                    }
                    None => {
                        pending.insert(inp.id(), gi);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks_length() {
        assert!(Tensor::new(vec![1.0, 2.0], &[3]).is_err());
        let t = Tensor::new(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
        assert!(!t.requires_grad());
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(3.0);
        assert_eq!(s.shape(), &[] as &[usize]);
        assert_eq!(s.numel(), 1);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let p = Tensor::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let y = p.mul_scalar(2.0);
        assert_eq!(y.backward(), Err(Error::NonScalarRoot(vec![2])));
    }

    #[test]
    fn no_grad_skips_recording() {
        let p = Tensor::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let y = {
            let _g = no_grad();
            p.mul_scalar(2.0)
        };
        assert!(!y.requires_grad());
        assert!(is_grad_enabled());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let p = Tensor::parameter(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let y = p.sum_all();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        p.zero_grad();
        assert!(p.grad().is_none());
    }
}
