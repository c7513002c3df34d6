use crate::error::{Error, Result};
use crate::ops;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{gemm, MatMut, MatRef, Scalar, Tensor};

use super::squash;

/// Groups `[batch, types * dim, h, w]` feature maps into
/// `[batch, types * h * w, dim]` squashed capsules.
///
/// Channel `type * dim + k` is component `k` of capsule type `type`;
/// the capsule at grid cell `(row, col)` has index
/// `type * h * w + row * w + col`.
pub fn primary_caps<T: Scalar>(tape: &mut Tape<T>, features: Var, dim: usize) -> Result<Var> {
    tape.check(features)?;
    let s = tape.shape(features).to_vec();
    if s.len() != 4 || dim == 0 || s[1] % dim != 0 {
        return Err(Error::contract(
            "primary_caps",
            format!("cannot group {s:?} into capsules of dimension {dim}"),
        ));
    }
    let (b, types, h, w) = (s[0], s[1] / dim, s[2], s[3]);
    let x = ops::reshape(tape, features, &[b, types, dim, h, w])?;
    let x = ops::permute(tape, x, &[0, 1, 3, 4, 2])?;
    let x = ops::reshape(tape, x, &[b, types * h * w, dim])?;
    squash(tape, x)
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    n_in: usize,
    n_out: usize,
    d_in: usize,
    d_out: usize,
}

impl Dims {
    fn of(u: &[usize], w: &[usize]) -> Result<Self> {
        match (u, w) {
            ([batch, n_in, d_in], [wi, n_out, wd, d_out]) if n_in == wi && d_in == wd => Ok(Self {
                batch: *batch,
                n_in: *n_in,
                n_out: *n_out,
                d_in: *d_in,
                d_out: *d_out,
            }),
            _ => Err(Error::shape("capsule_votes", u, w)),
        }
    }

    /// Distance between consecutive samples in the votes.
    fn row(&self) -> usize {
        self.n_in * self.n_out * self.d_out
    }

    fn vote_offset(&self, i: usize, j: usize) -> usize {
        (i * self.n_out + j) * self.d_out
    }

    fn weight_range(&self, i: usize, j: usize) -> std::ops::Range<usize> {
        let size = self.d_in * self.d_out;
        let start = (i * self.n_out + j) * size;
        start..start + size
    }
}

struct VotesRule {
    dims: Dims,
}

impl<T: Scalar> Backward<T> for VotesRule {
    fn name(&self) -> &'static str {
        "capsule_votes"
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let d = self.dims;
        let (u, w) = (x[0].data(), x[1].data());
        let mut du = needs[0].then(|| Tensor::zeros(x[0].shape()));
        let mut dw = needs[1].then(|| Tensor::zeros(x[1].shape()));
        for i in 0..d.n_in {
            let u_i = strided(&u[i * d.d_in..], d.batch, d.d_in, d.n_in * d.d_in);
            for j in 0..d.n_out {
                let g_ij = strided(&g.data()[d.vote_offset(i, j)..], d.batch, d.d_out, d.row());
                let w_range = d.weight_range(i, j);
                if let Some(du) = du.as_mut() {
                    let w_ij = MatRef::new(&w[w_range.clone()], d.d_in, d.d_out);
                    let c = MatMut {
                        data: &mut du.data_mut()[i * d.d_in..],
                        rows: d.batch,
                        cols: d.d_in,
                        row_stride: d.n_in * d.d_in,
                    };
                    gemm(T::one(), g_ij, w_ij.t(), T::one(), c);
                }
                if let Some(dw) = dw.as_mut() {
                    let c = MatMut::new(&mut dw.data_mut()[w_range], d.d_in, d.d_out);
                    gemm(T::one(), u_i.t(), g_ij, T::zero(), c);
                }
            }
        }
        Ok(vec![du, dw])
    }
}

fn strided<T>(data: &[T], rows: usize, cols: usize, row_stride: usize) -> MatRef<'_, T> {
    MatRef {
        data,
        rows,
        cols,
        row_stride,
        col_stride: 1,
    }
}

/// Votes `u_hat[b, i, j] = W[i, j] u[b, i]` for poses `u: [batch, n_in, d_in]`
/// and transforms `W: [n_in, n_out, d_in, d_out]`, giving
/// `[batch, n_in, n_out, d_out]`. The transform is stored so that
/// `W[i, j]` maps a row vector (`u W`), i.e. it is the transpose of the
/// column-vector matrix.
pub fn capsule_votes<T: Scalar>(tape: &mut Tape<T>, u: Var, w: Var) -> Result<Var> {
    tape.check(u)?;
    tape.check(w)?;
    let dims = Dims::of(tape.shape(u), tape.shape(w))?;
    let d = dims;
    let mut out = Tensor::zeros(&[d.batch, d.n_in, d.n_out, d.d_out]);
    {
        let (uv, wv) = (tape.value(u).data(), tape.value(w).data());
        for i in 0..d.n_in {
            let u_i = strided(&uv[i * d.d_in..], d.batch, d.d_in, d.n_in * d.d_in);
            for j in 0..d.n_out {
                let w_ij = MatRef::new(&wv[d.weight_range(i, j)], d.d_in, d.d_out);
                let c = MatMut {
                    data: &mut out.data_mut()[d.vote_offset(i, j)..],
                    rows: d.batch,
                    cols: d.d_out,
                    row_stride: d.row(),
                };
                gemm(T::one(), u_i, w_ij, T::zero(), c);
            }
        }
    }
    tape.record(out, &[u, w], VotesRule { dims })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primary_shape_and_zero() {
        let mut tape = Tape::<f32>::new();
        let f = tape.constant(Tensor::zeros(&[2, 256, 6, 6]));
        let p = primary_caps(&mut tape, f, 8).unwrap();
        assert_eq!(tape.shape(p), &[2, 1152, 8]);
        assert!(tape.value(p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn primary_index_ordering() {
        // Type 5, row 2, col 4: channels 40..48 at that cell.
        let (ty, row, col) = (5, 2, 4);
        let mut x = Tensor::<f64>::zeros(&[1, 256, 6, 6]);
        for k in 0..8 {
            x.data_mut()[((ty * 8 + k) * 6 + row) * 6 + col] = (k + 1) as f64;
        }
        let mut tape = Tape::new();
        let f = tape.constant(x);
        let p = primary_caps(&mut tape, f, 8).unwrap();
        let out = tape.value(p).data();
        let want = ty * 36 + row * 6 + col;
        for (cap, v) in out.chunks(8).enumerate() {
            let nonzero = v.iter().any(|&c| c != 0.0);
            assert_eq!(nonzero, cap == want, "capsule {cap}");
        }
        // Components keep their channel order.
        let v = &out[want * 8..want * 8 + 8];
        assert!(v.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn indivisible_channels_rejected() {
        let mut tape = Tape::<f32>::new();
        let f = tape.constant(Tensor::zeros(&[1, 12, 2, 2]));
        assert!(primary_caps(&mut tape, f, 8).is_err());
    }

    fn votes(u: Tensor<f64>, w: Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let (u, w) = (tape.constant(u), tape.leaf(w));
        let v = capsule_votes(&mut tape, u, w).unwrap();
        tape.value(v).clone()
    }

    #[test]
    fn zero_weights_give_zero_votes() {
        let u = Tensor::ones(&[3, 4, 2]);
        let v = votes(u, Tensor::zeros(&[4, 3, 2, 5]));
        assert_eq!(v.shape(), &[3, 4, 3, 5]);
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_replicates_inputs() {
        let u = Tensor::from_f64(&[1, 2, 2], &[1.0, 2.0, -3.0, 0.5]).unwrap();
        let mut w = Tensor::zeros(&[2, 3, 2, 2]);
        for ij in 0..6 {
            w.data_mut()[ij * 4] = 1.0;
            w.data_mut()[ij * 4 + 3] = 1.0;
        }
        let v = votes(u, w);
        assert_eq!(
            v.data(),
            &[1., 2., 1., 2., 1., 2., -3., 0.5, -3., 0.5, -3., 0.5]
        );
    }

    #[test]
    fn hand_computed_products() {
        // u_1 = (1, 2), u_2 = (0, -1); row-vector convention u W.
        let u = Tensor::from_f64(&[1, 2, 2], &[1.0, 2.0, 0.0, -1.0]).unwrap();
        #[rustfmt::skip]
        let w = Tensor::from_f64(&[2, 2, 2, 2], &[
            1.0, 0.0, 0.0, 1.0, // W_11
            2.0, 1.0, 1.0, 3.0, // W_12
            0.5, 0.5, 1.0, 0.0, // W_21
            4.0, -1.0, 2.0, 2.0, // W_22
        ]).unwrap();
        let v = votes(u, w);
        // (1,2)W_11 = (1,2); (1,2)W_12 = (4,7); (0,-1)W_21 = (-1,0); (0,-1)W_22 = (-2,-2)
        assert_eq!(v.data(), &[1., 2., 4., 7., -1., 0., -2., -2.]);
    }
}
