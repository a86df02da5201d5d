//! Reverse-mode differentiation over a recorded tape.
//!
//! A [`Var`] is an immutable tensor value plus, when it depends on a tracked
//! leaf, a handle to the node that produced it. Operations whose inputs are
//! all untracked record nothing, so inference releases intermediates as soon
//! as they go out of scope.

pub mod gradcheck;
pub mod ops;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Backward rule: given the upstream gradient and which inputs need a
/// gradient, return one optional gradient per input.
pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
    leaf: bool,
}

struct TapeState<T> {
    nodes: Vec<Node<T>>,
    generation: u64,
    consumed: bool,
}

/// Ordered record of operations. Inputs always precede the operations that
/// consume them, so a reverse scan is a valid topological order.
pub struct Tape<T: Element> {
    inner: Rc<RefCell<TapeState<T>>>,
}

impl<T: Element> Clone for Tape<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeState {
                nodes: Vec::new(),
                generation: 0,
                consumed: false,
            })),
        }
    }

    /// Registers a tensor whose gradient should be computed.
    pub fn leaf(&self, value: impl Into<Arc<Tensor<T>>>) -> Var<T> {
        let mut st = self.inner.borrow_mut();
        let id = st.nodes.len();
        st.nodes.push(Node {
            parents: Vec::new(),
            backward: None,
            leaf: true,
        });
        Var {
            value: value.into(),
            node: Some(NodeHandle {
                tape: self.clone(),
                id,
                generation: st.generation,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node. Vars created before the reset become stale.
    pub fn reset(&self) {
        let mut st = self.inner.borrow_mut();
        st.nodes.clear();
        st.generation += 1;
        st.consumed = false;
    }

    fn same(&self, other: &Tape<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Computes d(loss)/d(leaf) for every leaf the loss depends on.
    ///
    /// Consumes the tape: a second call without [`Tape::reset`] is an error.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                loss.value.shape()
            )));
        }
        let handle = loss
            .node
            .as_ref()
            .ok_or_else(|| Error::Tape("loss does not depend on any tracked tensor".into()))?;
        if !handle.tape.same(self) {
            return Err(Error::Tape("loss was recorded on a different tape".into()));
        }
        let (mut nodes, generation) = {
            let mut st = self.inner.borrow_mut();
            if st.consumed {
                return Err(Error::Tape("backward already ran on this tape; reset it first".into()));
            }
            if handle.generation != st.generation {
                return Err(Error::Tape("loss predates the last tape reset".into()));
            }
            st.consumed = true;
            // Leaves stay registered so their ids remain meaningful; the
            // backward closures move out.
            let nodes: Vec<(Vec<Option<usize>>, Option<BackwardFn<T>>, bool)> = st
                .nodes
                .iter_mut()
                .map(|n| (n.parents.clone(), n.backward.take(), n.leaf))
                .collect();
            (nodes, st.generation)
        };

        let root = handle.id;
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::full(loss.value.shape().to_vec(), T::one()));
        let mut leaves = HashMap::new();
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let (parents, backward, leaf) = &mut nodes[id];
            if *leaf {
                leaves.insert(id, g);
                continue;
            }
            let Some(backward) = backward.take() else { continue };
            let needs: Vec<bool> = parents.iter().map(Option::is_some).collect();
            let results = backward(&g, &needs);
            debug_assert_eq!(results.len(), parents.len());
            for (parent, result) in parents.iter().zip(results) {
                if let (Some(p), Some(r)) = (parent, result) {
                    match &mut grads[*p] {
                        Some(acc) => acc.add_assign(&r),
                        slot @ None => *slot = Some(r),
                    }
                }
            }
        }
        Ok(Gradients {
            tape: self.clone(),
            generation,
            grads: leaves,
        })
    }
}

struct NodeHandle<T: Element> {
    tape: Tape<T>,
    id: usize,
    generation: u64,
}

impl<T: Element> Clone for NodeHandle<T> {
    fn clone(&self) -> Self {
        Self {
            tape: self.tape.clone(),
            id: self.id,
            generation: self.generation,
        }
    }
}

/// Immutable tensor value, optionally tracked on a [`Tape`].
pub struct Var<T: Element> {
    value: Arc<Tensor<T>>,
    node: Option<NodeHandle<T>>,
}

impl<T: Element> Clone for Var<T> {
    fn clone(&self) -> Self {
        Self {
            value: Arc::clone(&self.value),
            node: self.node.clone(),
        }
    }
}

impl<T: Element> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.value.shape())
            .field("tracked", &self.node.is_some())
            .finish()
    }
}

impl<T: Element> Var<T> {
    /// An untracked value.
    pub fn constant(value: impl Into<Arc<Tensor<T>>>) -> Self {
        Self {
            value: value.into(),
            node: None,
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_arc(&self) -> &Arc<Tensor<T>> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same value with tracking removed.
    pub fn detach(&self) -> Self {
        Self::constant(Arc::clone(&self.value))
    }
}

/// Wraps a freshly computed value as the output of `op`, recording the
/// backward rule when any input is tracked.
pub(crate) fn record<T, F>(
    op: &'static str,
    inputs: &[&Var<T>],
    value: Arc<Tensor<T>>,
    backward: F,
) -> Result<Var<T>>
where
    T: Element,
    F: FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
{
    if let Some(index) = value.first_non_finite() {
        return Err(Error::NonFinite {
            op: op.to_string(),
            index,
        });
    }
    let mut tape: Option<&Tape<T>> = None;
    let mut parents = Vec::with_capacity(inputs.len());
    for v in inputs {
        match &v.node {
            Some(h) => {
                match tape {
                    None => tape = Some(&h.tape),
                    Some(t) if !t.same(&h.tape) => {
                        return Err(Error::Tape(format!("{op}: inputs recorded on different tapes")))
                    }
                    _ => {}
                }
                parents.push(Some(h.id));
            }
            None => parents.push(None),
        }
    }
    let Some(tape) = tape else {
        return Ok(Var { value, node: None });
    };
    let mut st = tape.inner.borrow_mut();
    if st.consumed {
        return Err(Error::Tape(format!("{op}: tape already consumed by backward")));
    }
    for v in inputs {
        if let Some(h) = &v.node {
            if h.generation != st.generation {
                return Err(Error::Tape(format!("{op}: input predates the last tape reset")));
            }
        }
    }
    let id = st.nodes.len();
    st.nodes.push(Node {
        parents,
        backward: Some(Box::new(backward)),
        leaf: false,
    });
    let generation = st.generation;
    drop(st);
    Ok(Var {
        value,
        node: Some(NodeHandle {
            tape: tape.clone(),
            id,
            generation,
        }),
    })
}

/// Leaf gradients produced by one backward pass.
pub struct Gradients<T: Element> {
    tape: Tape<T>,
    generation: u64,
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient for a leaf, or `None` when the loss does not depend on it.
    pub fn get(&self, leaf: &Var<T>) -> Option<&Tensor<T>> {
        let h = leaf.node.as_ref()?;
        if !h.tape.same(&self.tape) || h.generation != self.generation {
            return None;
        }
        self.grads.get(&h.id)
    }

    /// Moves a gradient out.
    pub fn take(&mut self, leaf: &Var<T>) -> Option<Tensor<T>> {
        let h = leaf.node.as_ref()?;
        if !h.tape.same(&self.tape) || h.generation != self.generation {
            return None;
        }
        self.grads.remove(&h.id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::ops;
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let loss = ops::sum(&x).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn grad_of_sum_of_squares_is_twice_input() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, -2.0, 0.25]));
        let loss = ops::sum(&ops::mul(&x, &x).unwrap()).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[2.0, -4.0, 0.5]);
    }

    #[test]
    fn loss_gradient_is_one() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.5f64));
        let g = tape.backward(&x).unwrap();
        assert_eq!(g.get(&x).unwrap().item(), 1.0);
    }

    #[test]
    fn rejects_non_scalar_loss() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(&x), Err(Error::Tape(_))));
    }

    #[test]
    fn rejects_second_backward_until_reset() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let loss = ops::sum(&x).unwrap();
        tape.backward(&loss).unwrap();
        assert!(tape.backward(&loss).is_err());
        assert!(ops::sum(&x).is_err());
        tape.reset();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let loss = ops::sum(&x).unwrap();
        assert!(tape.backward(&loss).is_ok());
    }

    #[test]
    fn untracked_ops_record_nothing() {
        let tape = Tape::<f64>::new();
        let a = Var::constant(t(&[2], &[1.0, 2.0]));
        let _ = ops::sum(&ops::mul(&a, &a).unwrap()).unwrap();
        assert!(tape.is_empty());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // loss = sum(x) + sum(x) -> grad 2
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let s = ops::sum(&x).unwrap();
        let loss = ops::add(&s, &s).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let x = Var::constant(t(&[1], &[f64::MAX]));
        let err = ops::mul(&x, &x).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
