use crate::error::Result;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl<T: Scalar> Backward<T> for Activation {
    fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn backward(&self, x: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let d = match self {
            Activation::Relu => x[0].zip_map(g, "relu", |x, g| if x > T::zero() { g } else { T::zero() })?,
            Activation::Sigmoid => y.zip_map(g, "sigmoid", |y, g| g * y * (T::one() - y))?,
        };
        Ok(vec![Some(d)])
    }
}

pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn activation<T: Scalar>(tape: &mut Tape<T>, x: Var, kind: Activation) -> Result<Var> {
    tape.check(x)?;
    let out = match kind {
        Activation::Relu => tape.value(x).map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Sigmoid => tape.value(x).map(sigmoid_scalar),
    };
    tape.record(out, &[x], kind)
}

pub fn relu<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    activation(tape, x, Activation::Relu)
}

pub fn sigmoid<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    activation(tape, x, Activation::Sigmoid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(kind: Activation, v: f64) -> f64 {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(v));
        let y = activation(&mut tape, x, kind).unwrap();
        tape.value(y).item().unwrap()
    }

    #[test]
    fn relu_values() {
        assert_eq!(apply(Activation::Relu, -2.0), 0.0);
        assert_eq!(apply(Activation::Relu, 3.0), 3.0);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(apply(Activation::Sigmoid, 0.0), 0.5);
        assert!((apply(Activation::Sigmoid, 3f64.ln()) - 0.75).abs() < 1e-15);
        let big = apply(Activation::Sigmoid, -800.0);
        assert!(big >= 0.0 && big.is_finite());
    }
}
