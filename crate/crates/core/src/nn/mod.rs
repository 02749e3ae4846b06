//! Minimal reverse-mode differentiation and dense-network kit.

mod dense;
mod gradcheck;
mod linalg;
mod optim;
mod tape;
mod tensor;

use alloc::string::String;
use alloc::vec::Vec;

pub use dense::{Activation, Layer, NetworkParams};
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use optim::{OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use tape::{sigmoid, tanh_safe, BranchDigest, CustomBackward, Tape, Var, ACTIVATION_CLAMP};
pub use tensor::Tensor;

/// A model with an ordered, named list of parameter tensors.
///
/// The position of a tensor in [`Parameterized::params`] is its tape slot.
pub trait Parameterized {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn zero_grads(&mut self) {
        for (_, t) in self.params_mut() {
            t.zero_grad();
        }
    }

    /// Pulls the slot gradients accumulated on `tape` into the tensors.
    fn absorb_grads(&mut self, tape: &Tape) {
        tape.export_grads(self.params_mut().into_iter().map(|(_, t)| t));
    }
}
