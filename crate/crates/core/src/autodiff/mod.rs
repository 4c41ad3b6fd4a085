//! Reverse-mode differentiation over a tensor tape, with truncated Taylor
//! jets for derivatives with respect to input coordinates.
//!
//! Input derivatives (`u_x`, `u_xx`, `u_xxx`, ...) are propagated forward as
//! [`Jet`]s whose primitives are themselves recorded on the [`Tape`]. A single
//! reverse sweep from a loss built out of jet channels therefore yields exact
//! parameter gradients of derivative-containing residuals.

mod activation;
mod gradcheck;
mod jet;
mod params;
mod tape;

use std::rc::Rc;

pub use activation::{Activation, MAX_ACTIVATION_DERIVATIVE};
pub use gradcheck::{gradient_check, GradCheck};
pub use jet::{Direction, Jet, JetLayout, MAX_JET_ORDER};
pub use params::{BoundParams, ParamSet};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Highest derivative order available to residuals and training.
pub const MAX_TRAINING_ORDER: usize = 3;

/// Pure derivatives `∂ᵏu/∂x_coordᵏ` for `k = 1..=order` from one jet pass.
///
/// `forward` receives the layout to use and must return the network output
/// jet. Each returned tensor has shape `[batch, outputs]`.
pub fn derivatives_of<'t>(
    forward: impl FnOnce(Rc<JetLayout>) -> Result<Jet<'t>>,
    batch: usize,
    coord: usize,
    order: usize,
) -> Result<Vec<Tensor>> {
    if order == 0 || order > MAX_TRAINING_ORDER {
        return Err(Error::UnsupportedOrder(order, MAX_TRAINING_ORDER));
    }
    derivatives_up_to(forward, batch, coord, order)
}

/// Like [`derivatives_of`] but allows the fourth order. Meant for the
/// derivative-variance and derivative-regression diagnostics.
pub fn derivatives_of_diagnostic<'t>(
    forward: impl FnOnce(Rc<JetLayout>) -> Result<Jet<'t>>,
    batch: usize,
    coord: usize,
    order: usize,
) -> Result<Vec<Tensor>> {
    if order == 0 || order > MAX_JET_ORDER {
        return Err(Error::UnsupportedOrder(order, MAX_JET_ORDER));
    }
    derivatives_up_to(forward, batch, coord, order)
}

fn derivatives_up_to<'t>(
    forward: impl FnOnce(Rc<JetLayout>) -> Result<Jet<'t>>,
    batch: usize,
    coord: usize,
    order: usize,
) -> Result<Vec<Tensor>> {
    let layout = Rc::new(JetLayout::new(batch, vec![Direction { coord, order }])?);
    let out = forward(layout)?;
    (1..=order)
        .map(|k| Ok(out.channel(coord, k)?.value().clone()))
        .collect()
}
