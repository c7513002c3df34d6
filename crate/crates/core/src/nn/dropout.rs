use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Scalar, Tensor};

struct DropoutRule<T> {
    mask: Vec<T>,
}

impl<T: Scalar> Backward<T> for DropoutRule<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let d: Vec<T> = g.data().iter().zip(&self.mask).map(|(&g, &m)| g * m).collect();
        Ok(vec![Some(Tensor::from_vec(g.shape(), d)?)])
    }
}

/// Inverted dropout: in training mode each unit is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; otherwise identity.
pub fn dropout<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    rate: f64,
    rng: &mut SeededRng,
    training: bool,
) -> Result<Var> {
    tape.check(x)?;
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(
            "dropout",
            format!("rate must lie in [0, 1), got {rate}"),
        ));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..tape.value(x).len())
        .map(|_| if rng.bernoulli(rate) { T::zero() } else { keep })
        .collect();
    let out: Vec<T> = tape
        .value(x)
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| v * m)
        .collect();
    let out = Tensor::from_vec(tape.shape(x), out)?;
    tape.record(out, &[x], DropoutRule { mask })
}
