use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

/// Fan-in and fan-out used by Glorot/Xavier scaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fans {
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Fans {
    /// `[in, out]` dense weights or `[out, in, kh, kw]` convolution kernels.
    pub fn for_shape(shape: &[usize]) -> Result<Self> {
        match *shape {
            [fan_in, fan_out] => Ok(Self { fan_in, fan_out }),
            [o, c, kh, kw] => Ok(Self {
                fan_in: c * kh * kw,
                fan_out: o * kh * kw,
            }),
            _ => Err(Error::contract(
                "xavier_init",
                format!("no fan convention for shape {shape:?}"),
            )),
        }
    }

    pub fn bound(&self) -> f64 {
        (6.0 / (self.fan_in + self.fan_out) as f64).sqrt()
    }
}

/// Samples `uniform(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Scalar>(shape: &[usize], fans: Fans, rng: &mut SeededRng) -> Tensor<T> {
    let a = fans.bound();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.uniform(-a, a))).collect();
    Tensor::from_vec(shape, data).expect("positive extents")
}

/// [`xavier_uniform`] with fans derived from the shape.
pub fn xavier_init<T: Scalar>(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor<T>> {
    Ok(xavier_uniform(shape, Fans::for_shape(shape)?, rng))
}
