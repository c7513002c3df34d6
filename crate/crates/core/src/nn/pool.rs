use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Scalar, Tensor};

struct MaxPoolRule {
    /// Flat input index chosen for every output element.
    argmax: Vec<usize>,
}

impl<T: Scalar> Backward<T> for MaxPoolRule {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let mut dx = Tensor::zeros(x[0].shape());
        let d = dx.data_mut();
        for (&src, &gv) in self.argmax.iter().zip(g.data()) {
            d[src] += gv;
        }
        Ok(vec![Some(dx)])
    }
}

/// 2x2 max pooling with stride 2 over `[batch, c, h, w]`.
///
/// Spatial extents must be even. The gradient goes to the first maximum of
/// each window in row-major order.
pub fn maxpool2d<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    tape.check(x)?;
    let s = tape.shape(x).to_vec();
    if s.len() != 4 {
        return Err(Error::contract(
            "maxpool2d",
            format!("expected [batch, c, h, w], got {s:?}"),
        ));
    }
    let (h, w) = (s[2], s[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::contract(
            "maxpool2d",
            format!("spatial extent {h}x{w} is not even"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let input = tape.value(x).data();
    let mut out = Vec::with_capacity(s[0] * s[1] * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..s[0] * s[1] {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    let out = Tensor::from_vec(&[s[0], s[1], oh, ow], out)?;
    tape.record(out, &[x], MaxPoolRule { argmax })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn two_by_two_window() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[1, 1, 2, 2], &[1., 2., 3., 4.]).unwrap());
        let y = maxpool2d(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn constant_input_constant_output_and_first_tie_wins() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 2, 4, 4], 0.25));
        let y = maxpool2d(&mut tape, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.25));
        let l = crate::ops::sum(&mut tape, y).unwrap();
        let g = tape.gradients(l, &[x]).unwrap().remove(0);
        // Only the top-left element of each window receives gradient.
        for (i, &v) in g.data().iter().enumerate() {
            let (r, c) = ((i % 16) / 4, i % 4);
            assert_eq!(v, if r % 2 == 0 && c % 2 == 0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn matches_brute_force_window_max() {
        let mut rng = SeededRng::new(9);
        let data: Vec<f64> = (0..36).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 1, 6, 6], data.clone()).unwrap());
        let y = maxpool2d(&mut tape, x).unwrap();
        for oy in 0..3 {
            for ox in 0..3 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(data[(2 * oy + dy) * 6 + 2 * ox + dx]);
                    }
                }
                assert_eq!(tape.value(y).data()[oy * 3 + ox], m);
            }
        }
    }

    #[test]
    fn odd_extent_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 1, 5, 4]));
        assert!(maxpool2d(&mut tape, x).is_err());
    }
}
