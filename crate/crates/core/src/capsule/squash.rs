use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Guard added to the norm so that the zero vector maps to itself.
pub const SQUASH_EPS: f64 = 1e-9;

fn last_dim<T: Scalar>(t: &Tensor<T>) -> Result<usize> {
    match t.shape().last() {
        Some(&d) if t.rank() >= 2 => Ok(d),
        _ => Err(Error::contract(
            "squash",
            format!("expected [..., dim], got {:?}", t.shape()),
        )),
    }
}

/// `v = s * n^2 / ((1 + n^2) (n + eps))` with `n = |s|` over the last axis.
pub fn squash_values<T: Scalar>(s: &Tensor<T>) -> Result<Tensor<T>> {
    let dim = last_dim(s)?;
    let eps = T::from_f64_lossy(SQUASH_EPS);
    let mut out = s.clone();
    for v in out.data_mut().chunks_mut(dim) {
        let n2: T = v.iter().map(|&x| x * x).sum();
        let n = n2.sqrt();
        let f = n2 / ((T::one() + n2) * (n + eps));
        v.iter_mut().for_each(|x| *x *= f);
    }
    Ok(out)
}

struct SquashRule;

impl<T: Scalar> Backward<T> for SquashRule {
    fn name(&self) -> &'static str {
        "squash"
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let dim = last_dim(x[0])?;
        let eps = T::from_f64_lossy(SQUASH_EPS);
        let two = T::from_f64_lossy(2.0);
        let mut dx = Tensor::zeros(x[0].shape());
        for ((d, s), g) in dx
            .data_mut()
            .chunks_mut(dim)
            .zip(x[0].data().chunks(dim))
            .zip(g.data().chunks(dim))
        {
            let n2: T = s.iter().map(|&v| v * v).sum();
            let n = n2.sqrt();
            let denom = (T::one() + n2) * (n + eps);
            let f = n2 / denom;
            // f'(n) / n, arranged so that nothing divides by n alone.
            let fp_over_n = (two / (T::one() + n2) - n / (n + eps)) / denom;
            let sg: T = s.iter().zip(g).map(|(&a, &b)| a * b).sum();
            for ((d, &s), &g) in d.iter_mut().zip(s).zip(g) {
                *d = f * g + fp_over_n * sg * s;
            }
        }
        Ok(vec![Some(dx)])
    }
}

/// Squashing non-linearity applied to every vector along the last axis.
pub fn squash<T: Scalar>(tape: &mut Tape<T>, s: Var) -> Result<Var> {
    tape.check(s)?;
    let out = squash_values(tape.value(s))?;
    tape.record(out, &[s], SquashRule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(v: &[f64]) -> Vec<f64> {
        squash_values(&Tensor::from_f64(&[1, v.len()], v).unwrap())
            .unwrap()
            .into_vec()
    }

    #[test]
    fn zero_is_fixed() {
        assert_eq!(sq(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
    }

    #[test]
    fn unit_norm_halves() {
        let v = sq(&[0.6, 0.8]);
        assert!((v[0] - 0.3).abs() < 1e-8 && (v[1] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn three_four() {
        let v = sq(&[3.0, 4.0]);
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        assert!((n - 25.0 / 26.0).abs() < 1e-9);
        assert!((v[0] - 0.57692).abs() < 1e-5);
        assert!((v[1] - 0.76923).abs() < 1e-5);
    }

    #[test]
    fn zero_vector_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let s = tape.leaf(Tensor::zeros(&[1, 4]));
        let v = squash(&mut tape, s).unwrap();
        let l = crate::ops::sum(&mut tape, v).unwrap();
        let g = tape.gradients(l, &[s]).unwrap();
        assert_eq!(g[0].data(), &[0.0; 4]);
    }

    #[test]
    fn rank_one_rejected() {
        assert!(squash_values(&Tensor::<f32>::zeros(&[4])).is_err());
    }
}
