use rayon::prelude::*;

use super::params::{Grads, ParamStore};
use super::{Mat, Tape, Var};
use crate::error::Result;

/// Result of one example's forward pass: the output node, the gradient of
/// the objective with respect to it, and the example's loss contribution.
pub struct Forward {
    pub output: Var,
    pub seed: Mat,
    pub loss: f64,
}

/// Runs `f` for every item on its own tape (in parallel), back-propagates
/// and sums gradients and losses in item order, so results do not depend
/// on thread scheduling.
pub fn accumulate_gradients<T, F>(store: &ParamStore, items: &[T], f: F) -> Result<(Grads, f64)>
where
    T: Sync,
    F: Fn(&mut Tape, &T) -> Result<Forward> + Sync,
{
    let parts: Vec<(Grads, f64)> = items
        .par_iter()
        .map(|item| {
            let mut tape = Tape::new(store);
            let fwd = f(&mut tape, item)?;
            Ok((tape.backward(fwd.output, fwd.seed), fwd.loss))
        })
        .collect::<Result<_>>()?;
    let mut total = Grads::zeros_like(store);
    let mut loss = 0.0;
    for (g, l) in &parts {
        total.add_assign(g);
        loss += l;
    }
    Ok((total, loss))
}
