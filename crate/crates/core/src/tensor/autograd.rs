use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use super::Tensor;
use crate::error::{Error, Result};

/// Maps the upstream gradient of an op's output to the gradients of its
/// inputs. The `needs` slice says which inputs require a gradient; entries
/// for the others may be `None`.
pub(crate) type BackwardFn =
    Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static KINK_TRACE: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Whether operations on this thread currently record tape nodes.
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` without recording any operations.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

/// Runs `f` and returns a hash of the branch taken at every non-smooth
/// point (ReLU and absolute-value sign patterns) it evaluated.
///
/// Finite-difference checks compare signatures of the perturbed
/// evaluations to detect when a step crossed a kink.
pub fn kink_signature<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let previous = KINK_TRACE.with(|k| k.replace(Some(0xcbf2_9ce4_8422_2325)));
    let out = f();
    let sig = KINK_TRACE.with(|k| k.replace(previous)).unwrap_or(0);
    (out, sig)
}

pub(crate) fn trace_kinks(values: &[f64]) {
    KINK_TRACE.with(|k| {
        if let Some(mut h) = k.get() {
            for v in values {
                let bit = if *v > 0.0 {
                    1
                } else if *v < 0.0 {
                    2
                } else {
                    3
                };
                h = (h ^ bit).wrapping_mul(0x0100_0000_01b3);
            }
            k.set(Some(h));
        }
    });
}

/// Operations reachable from a root, in topological order (inputs first).
///
/// Replaying [`GradientTape::backward`] visits each recorded tensor once,
/// from the root towards the leaves.
#[derive(Default)]
pub struct GradientTape {
    order: Vec<Tensor>,
}

impl GradientTape {
    /// Records every tensor that the root depends on and that takes part in
    /// differentiation.
    pub fn record(root: &Tensor) -> Self {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // Iterative post-order DFS; the explicit stack keeps deep cascades
        // from overflowing the call stack.
        let mut stack: Vec<(Tensor, usize)> = Vec::new();
        if root.requires_grad_flag() {
            visited.insert(root.id());
            stack.push((root.clone(), 0));
        }
        while let Some((t, next)) = stack.pop() {
            let child = t
                .node()
                .and_then(|n| n.inputs.get(next))
                .cloned();
            match child {
                Some(c) => {
                    stack.push((t, next + 1));
                    if c.requires_grad_flag() && visited.insert(c.id()) {
                        stack.push((c, 0));
                    }
                }
                None => order.push(t),
            }
        }
        Self { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Names of the recorded operations, leaves reported as `"leaf"`.
    pub fn ops(&self) -> Vec<&'static str> {
        self.order
            .iter()
            .map(|t| t.node().map_or("leaf", |n| n.op))
            .collect()
    }

    pub fn reset(&mut self) {
        self.order.clear();
    }

    /// Propagates d(root)/d(·) through the recorded operations and adds the
    /// result into the gradient buffer of every recorded leaf.
    pub fn backward(&self, root: &Tensor) -> Result<()> {
        if root.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: root.shape().to_vec(),
            });
        }
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(root.id(), vec![1.0]);
        for t in self.order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            let Some(node) = t.node() else {
                t.accumulate_grad(&g);
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(Tensor::requires_grad_flag).collect();
            let grads = (node.backward)(&g, &needs);
            debug_assert_eq!(grads.len(), node.inputs.len(), "{}", node.op);
            for ((input, grad), need) in node.inputs.iter().zip(grads).zip(&needs) {
                let (Some(grad), true) = (grad, *need) else {
                    continue;
                };
                debug_assert_eq!(grad.len(), input.numel(), "{}", node.op);
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(input.id(), grad);
                    }
                }
            }
        }
        Ok(())
    }
}
