//! Named parameter traversal shared by blocks, networks, checkpoints and the
//! optimiser.

use crate::error::{shape_err, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Anything that owns learnable tensors. Visitation order is stable and is
/// the order used for gradients, optimiser state and checkpoints.
pub trait Parameterized {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor));

    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, t| out.push((n, t)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.visit_params_mut(&mut |_, t| out.push(t));
        out
    }

    fn param_values(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Number of scalar parameters.
    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    fn set_param_values(&mut self, values: &[Tensor]) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(shape_err(
                "set_param_values",
                format!("expected {} tensors, got {}", slots.len(), values.len()),
            ));
        }
        for (slot, v) in slots.iter().zip(values) {
            slot.check_same_shape("set_param_values", v)?;
        }
        for (slot, v) in slots.iter_mut().zip(values) {
            **slot = v.clone();
        }
        Ok(())
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Weight containers generic over their leaf type: `Tensor` for storage,
/// `NodeId` once recorded on a tape.
pub trait ParamTree<P> {
    type Mapped<Q>;

    fn map_leaves<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Self::Mapped<Q>;
    fn for_each_leaf<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P));
    fn for_each_leaf_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P));

    fn leaves(&self) -> Vec<&P> {
        let mut out = Vec::new();
        self.for_each_leaf("", &mut |_, p| out.push(p));
        out
    }
}

/// Records every tensor of a tree as a tape leaf.
pub fn bind<T: ParamTree<Tensor>>(tree: &T, tape: &mut Tape) -> T::Mapped<NodeId> {
    tree.map_leaves(&mut |t| tape.leaf(t.clone()))
}

impl<P, T: ParamTree<P>> ParamTree<P> for Vec<T> {
    type Mapped<Q> = Vec<T::Mapped<Q>>;

    fn map_leaves<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Self::Mapped<Q> {
        self.iter().map(|t| t.map_leaves(f)).collect()
    }

    fn for_each_leaf<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        for (i, t) in self.iter().enumerate() {
            t.for_each_leaf(&join(prefix, &i.to_string()), f);
        }
    }

    fn for_each_leaf_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        for (i, t) in self.iter_mut().enumerate() {
            t.for_each_leaf_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<P, T: ParamTree<P>, const N: usize> ParamTree<P> for [T; N] {
    type Mapped<Q> = [T::Mapped<Q>; N];

    fn map_leaves<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> Self::Mapped<Q> {
        std::array::from_fn(|i| self[i].map_leaves(f))
    }

    fn for_each_leaf<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        for (i, t) in self.iter().enumerate() {
            t.for_each_leaf(&join(prefix, &i.to_string()), f);
        }
    }

    fn for_each_leaf_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut P)) {
        for (i, t) in self.iter_mut().enumerate() {
            t.for_each_leaf_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T: ParamTree<Tensor>> Parameterized for T {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.for_each_leaf("", f);
    }

    fn visit_params_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Tensor)) {
        self.for_each_leaf_mut("", f);
    }
}
