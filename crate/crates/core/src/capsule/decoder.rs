use crate::error::{Error, Result};
use crate::nn::{check_one_hot, dense, one_hot, relu, sigmoid};
use crate::ops::{self, norm_last_values};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Parameters of the fully connected decoder, already bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct DecoderVars {
    /// `(weights, bias)` of the two relu layers and the sigmoid output layer.
    pub layers: [(Var, Var); 3],
    /// Height and width of the reconstructed image.
    pub image: (usize, usize),
}

/// One-hot `[batch, n_caps]` mask selecting the longest capsule of each
/// sample; ties go to the lower index.
pub fn argmax_norm_mask<T: Scalar>(poses: &Tensor<T>) -> Result<Tensor<T>> {
    let norms = norm_last_values(poses)?;
    let labels = norms.argmax_rows()?;
    one_hot(&labels, norms.shape()[1])
}

/// Reconstructs `[batch, h, w]` images from `poses: [batch, n_caps, dim]`.
///
/// Every capsule except the one selected by `mask` is zeroed before the
/// dense stack; with no mask the longest capsule is kept.
pub fn decoder_forward<T: Scalar>(
    tape: &mut Tape<T>,
    poses: Var,
    mask: Option<&Tensor<T>>,
    vars: &DecoderVars,
) -> Result<Var> {
    tape.check(poses)?;
    let s = tape.shape(poses).to_vec();
    let [batch, n_caps, dim] = s[..] else {
        return Err(Error::contract(
            "decoder_forward",
            format!("poses must be [batch, n_caps, dim], got {s:?}"),
        ));
    };
    let mask = match mask {
        Some(m) => {
            if m.shape() != [batch, n_caps] {
                return Err(Error::shape("decoder_forward", m.shape(), &[batch, n_caps]));
            }
            check_one_hot("decoder_forward", m)?;
            m.clone()
        }
        None => argmax_norm_mask(tape.value(poses))?,
    };
    let expanded: Vec<T> = mask
        .data()
        .iter()
        .flat_map(|&m| std::iter::repeat_n(m, dim))
        .collect();
    let mask = tape.constant(Tensor::from_vec(&s, expanded)?);
    let masked = ops::mul(tape, poses, mask)?;
    let mut h = ops::reshape(tape, masked, &[batch, n_caps * dim])?;
    let [(w1, b1), (w2, b2), (w3, b3)] = vars.layers;
    h = dense(tape, h, w1, b1)?;
    h = relu(tape, h)?;
    h = dense(tape, h, w2, b2)?;
    h = relu(tape, h)?;
    h = dense(tape, h, w3, b3)?;
    let out = sigmoid(tape, h)?;
    let (ih, iw) = vars.image;
    ops::reshape(tape, out, &[batch, ih, iw])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::xavier_init;
    use crate::rng::SeededRng;

    fn vars(tape: &mut Tape<f64>, n_in: usize, rng: &mut SeededRng) -> DecoderVars {
        let mut layer = |tape: &mut Tape<f64>, i: usize, o: usize| {
            (
                tape.leaf(xavier_init(&[i, o], rng).unwrap()),
                tape.leaf(Tensor::zeros(&[o])),
            )
        };
        DecoderVars {
            layers: [layer(tape, n_in, 12), layer(tape, 12, 20), layer(tape, 20, 784)],
            image: (28, 28),
        }
    }

    fn poses(rng: &mut SeededRng, batch: usize, k: usize) -> Tensor<f64> {
        let data: Vec<f64> = (0..batch * k * 16).map(|_| rng.uniform(-0.2, 0.2)).collect();
        Tensor::from_vec(&[batch, k, 16], data).unwrap()
    }

    #[test]
    fn masking_ignores_other_capsules() {
        let mut rng = SeededRng::new(3);
        let mut tape = Tape::new();
        let d = vars(&mut tape, 160, &mut rng);
        let p = poses(&mut rng, 1, 10);
        let mut zeroed = p.clone();
        for (j, v) in zeroed.data_mut().chunks_mut(16).enumerate() {
            if j != 4 {
                v.fill(0.0);
            }
        }
        let mask = one_hot::<f64>(&[4], 10).unwrap();
        let a = tape.constant(p);
        let b = tape.constant(zeroed);
        let ra = decoder_forward(&mut tape, a, Some(&mask), &d).unwrap();
        let rb = decoder_forward(&mut tape, b, Some(&mask), &d).unwrap();
        assert_eq!(tape.value(ra), tape.value(rb));
    }

    #[test]
    fn output_shape_and_range() {
        let mut rng = SeededRng::new(5);
        for k in [10, 2] {
            let mut tape = Tape::new();
            let d = vars(&mut tape, 16 * k, &mut rng);
            let p = tape.constant(poses(&mut rng, 3, k));
            let r = decoder_forward(&mut tape, p, None, &d).unwrap();
            assert_eq!(tape.shape(r), &[3, 28, 28]);
            assert!(tape.value(r).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn mask_shape_checked() {
        let mut rng = SeededRng::new(1);
        let mut tape = Tape::new();
        let d = vars(&mut tape, 32, &mut rng);
        let p = tape.constant(poses(&mut rng, 2, 2));
        let mask = one_hot::<f64>(&[0], 2).unwrap();
        assert!(decoder_forward(&mut tape, p, Some(&mask), &d).is_err());
    }

    #[test]
    fn argmax_mask_prefers_longest() {
        let p = Tensor::<f64>::from_f64(&[1, 3, 2], &[0.1, 0.0, 0.0, 0.45, 0.3, 0.4]).unwrap();
        assert_eq!(argmax_norm_mask(&p).unwrap().data(), &[0.0, 0.0, 1.0]);
        let tie = Tensor::<f64>::from_f64(&[1, 2, 1], &[0.5, -0.5]).unwrap();
        assert_eq!(argmax_norm_mask(&tie).unwrap().data(), &[1.0, 0.0]);
    }
}
