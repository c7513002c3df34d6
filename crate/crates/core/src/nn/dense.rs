use crate::error::{Error, Result};
use crate::ops;
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

/// Affine map `x W + b` for `x: [batch, in]`, `W: [in, out]`, `b: [out]`.
pub fn dense<T: Scalar>(tape: &mut Tape<T>, x: Var, weights: Var, bias: Var) -> Result<Var> {
    let (xs, ws) = (tape.shape(x), tape.shape(weights));
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(Error::shape("dense", xs, ws));
    }
    let y = ops::matmul(tape, x, weights)?;
    ops::add_bias(tape, y, bias)
}
