//! Differentiable tensor primitives recorded on a [`Tape`].

use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{gemm, numel, MatMut, MatRef, Scalar, Tensor};

type Grads<T> = Result<Vec<Option<Tensor<T>>>>;

fn same_shape<T: Scalar>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    tape.check(a)?;
    tape.check(b)?;
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(op, tape.shape(a), tape.shape(b)));
    }
    Ok(())
}

struct AddRule;

impl<T: Scalar> Backward<T> for AddRule {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        Ok(needs.iter().map(|&n| n.then(|| g.clone())).collect())
    }
}

pub fn add<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "add", a, b)?;
    let out = tape.value(a).add(tape.value(b))?;
    tape.record(out, &[a, b], AddRule)
}

struct SubRule;

impl<T: Scalar> Backward<T> for SubRule {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        Ok(vec![
            needs[0].then(|| g.clone()),
            needs[1].then(|| g.scale(-T::one())),
        ])
    }
}

pub fn sub<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "sub", a, b)?;
    let out = tape.value(a).sub(tape.value(b))?;
    tape.record(out, &[a, b], SubRule)
}

struct MulRule;

impl<T: Scalar> Backward<T> for MulRule {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        Ok(vec![
            if needs[0] { Some(g.mul(x[1])?) } else { None },
            if needs[1] { Some(g.mul(x[0])?) } else { None },
        ])
    }
}

/// Elementwise product.
pub fn mul<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, "mul", a, b)?;
    let out = tape.value(a).mul(tape.value(b))?;
    tape.record(out, &[a, b], MulRule)
}

struct ScaleRule<T>(T);

impl<T: Scalar> Backward<T> for ScaleRule<T> {
    fn name(&self) -> &'static str {
        "mul_scalar"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.scale(self.0))])
    }
}

pub fn mul_scalar<T: Scalar>(tape: &mut Tape<T>, a: Var, s: T) -> Result<Var> {
    tape.check(a)?;
    let out = tape.value(a).scale(s);
    tape.record(out, &[a], ScaleRule(s))
}

struct ShiftRule;

impl<T: Scalar> Backward<T> for ShiftRule {
    fn name(&self) -> &'static str {
        "add_scalar"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.clone())])
    }
}

pub fn add_scalar<T: Scalar>(tape: &mut Tape<T>, a: Var, s: T) -> Result<Var> {
    tape.check(a)?;
    let out = tape.value(a).add_scalar(s);
    tape.record(out, &[a], ShiftRule)
}

struct MatMulRule;

impl<T: Scalar> Backward<T> for MatMulRule {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let (m, k) = (x[0].shape()[0], x[0].shape()[1]);
        let n = x[1].shape()[1];
        let da = needs[0].then(|| {
            let mut da = Tensor::zeros(&[m, k]);
            gemm(
                T::one(),
                MatRef::new(g.data(), m, n),
                MatRef::transposed(x[1].data(), k, n),
                T::zero(),
                MatMut::new(da.data_mut(), m, k),
            );
            da
        });
        let db = needs[1].then(|| {
            let mut db = Tensor::zeros(&[k, n]);
            gemm(
                T::one(),
                MatRef::transposed(x[0].data(), m, k),
                MatRef::new(g.data(), m, n),
                T::zero(),
                MatMut::new(db.data_mut(), k, n),
            );
            db
        });
        Ok(vec![da, db])
    }
}

/// 2-D matrix product `[m,k] x [k,n]`.
pub fn matmul<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    tape.check(a)?;
    tape.check(b)?;
    let out = tape.value(a).matmul(tape.value(b))?;
    tape.record(out, &[a, b], MatMulRule)
}

struct AddBiasRule;

impl<T: Scalar> Backward<T> for AddBiasRule {
    fn name(&self) -> &'static str {
        "add_bias"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let n = x[1].len();
        let db = needs[1].then(|| {
            let mut db = vec![T::zero(); n];
            for row in g.data().chunks(n) {
                for (d, &v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            Tensor::from_vec(x[1].shape(), db).expect("bias shape")
        });
        Ok(vec![needs[0].then(|| g.clone()), db])
    }
}

/// Adds a length-`n` bias to every row of a `[rows, n]` matrix.
pub fn add_bias<T: Scalar>(tape: &mut Tape<T>, x: Var, bias: Var) -> Result<Var> {
    tape.check(x)?;
    tape.check(bias)?;
    let (xs, bs) = (tape.shape(x), tape.shape(bias));
    if xs.len() != 2 || bs.len() != 1 || xs[1] != bs[0] {
        return Err(Error::shape("add_bias", xs, bs));
    }
    let mut out = tape.value(x).clone();
    let b = tape.value(bias).data().to_vec();
    for row in out.data_mut().chunks_mut(b.len()) {
        for (o, &v) in row.iter_mut().zip(&b) {
            *o += v;
        }
    }
    tape.record(out, &[x, bias], AddBiasRule)
}

struct ReshapeRule;

impl<T: Scalar> Backward<T> for ReshapeRule {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.reshape(x[0].shape())?)])
    }
}

pub fn reshape<T: Scalar>(tape: &mut Tape<T>, a: Var, shape: &[usize]) -> Result<Var> {
    tape.check(a)?;
    let out = tape.value(a).reshape(shape)?;
    tape.record(out, &[a], ReshapeRule)
}

struct PermuteRule {
    inverse: Vec<usize>,
}

impl<T: Scalar> Backward<T> for PermuteRule {
    fn name(&self) -> &'static str {
        "permute"
    }
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        Ok(vec![Some(g.permute(&self.inverse)?)])
    }
}

/// Output axis `i` is input axis `axes[i]`.
pub fn permute<T: Scalar>(tape: &mut Tape<T>, a: Var, axes: &[usize]) -> Result<Var> {
    tape.check(a)?;
    let out = tape.value(a).permute(axes)?;
    let mut inverse = vec![0; axes.len()];
    for (i, &ax) in axes.iter().enumerate() {
        inverse[ax] = i;
    }
    tape.record(out, &[a], PermuteRule { inverse })
}

/// 2-D transpose.
pub fn transpose<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    tape.check(a)?;
    if tape.value(a).rank() != 2 {
        return Err(Error::contract(
            "transpose",
            format!("expected a matrix, got shape {:?}", tape.shape(a)),
        ));
    }
    permute(tape, a, &[1, 0])
}

struct ConcatRule {
    axis: usize,
}

impl<T: Scalar> Backward<T> for ConcatRule {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Grads<T> {
        let mut start = 0;
        let mut out = Vec::with_capacity(x.len());
        for (t, &need) in x.iter().zip(needs) {
            let len = t.shape()[self.axis];
            out.push(if need {
                Some(slice_values(g, self.axis, start, start + len)?)
            } else {
                None
            });
            start += len;
        }
        Ok(out)
    }
}

/// Concatenation along `axis`; all other extents must agree.
pub fn concat<T: Scalar>(tape: &mut Tape<T>, parts: &[Var], axis: usize) -> Result<Var> {
    let Some(&first) = parts.first() else {
        return Err(Error::contract("concat", "nothing to concatenate"));
    };
    for &p in parts {
        tape.check(p)?;
    }
    let base = tape.shape(first).to_vec();
    if axis >= base.len() {
        return Err(Error::contract(
            "concat",
            format!("axis {axis} out of range for shape {base:?}"),
        ));
    }
    let mut total = 0;
    for &p in parts {
        let s = tape.shape(p);
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(&base)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::shape("concat", &base, s));
        }
        total += s[axis];
    }
    let outer = numel(&base[..axis]);
    let inner = numel(&base[axis + 1..]);
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for &p in parts {
            let t = tape.value(p);
            let chunk = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = base;
    shape[axis] = total;
    let out = Tensor::from_vec(&shape, data)?;
    tape.record(out, parts, ConcatRule { axis })
}

fn slice_values<T: Scalar>(t: &Tensor<T>, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = t.split_at_axis("slice", axis)?;
    if start >= end || end > len {
        return Err(Error::contract(
            "slice",
            format!("range {start}..{end} invalid for axis of length {len}"),
        ));
    }
    let mut data = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        data.extend_from_slice(&t.data()[(o * len + start) * inner..(o * len + end) * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = end - start;
    Tensor::from_vec(&shape, data)
}

struct SliceRule {
    axis: usize,
    start: usize,
}

impl<T: Scalar> Backward<T> for SliceRule {
    fn name(&self) -> &'static str {
        "slice"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let (outer, len, inner) = x[0].split_at_axis("slice", self.axis)?;
        let width = g.shape()[self.axis];
        let mut dx = Tensor::zeros(x[0].shape());
        for o in 0..outer {
            let dst = (o * len + self.start) * inner;
            dx.data_mut()[dst..dst + width * inner]
                .copy_from_slice(&g.data()[o * width * inner..(o + 1) * width * inner]);
        }
        Ok(vec![Some(dx)])
    }
}

/// Half-open range `start..end` along `axis`.
pub fn slice<T: Scalar>(tape: &mut Tape<T>, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
    tape.check(a)?;
    let out = slice_values(tape.value(a), axis, start, end)?;
    tape.record(out, &[a], SliceRule { axis, start })
}

struct SumRule;

impl<T: Scalar> Backward<T> for SumRule {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        Ok(vec![Some(Tensor::full(x[0].shape(), g.data()[0]))])
    }
}

/// Sum of all elements, as a `[1]` tensor.
pub fn sum<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    tape.check(a)?;
    let out = Tensor::scalar(tape.value(a).sum());
    tape.record(out, &[a], SumRule)
}

/// Mean of all elements.
pub fn mean<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    let n = tape.value(a).len();
    let s = sum(tape, a)?;
    mul_scalar(tape, s, T::one() / T::from_usize(n).expect("count"))
}

struct SumAxisRule {
    axis: usize,
}

impl<T: Scalar> Backward<T> for SumAxisRule {
    fn name(&self) -> &'static str {
        "sum_axis"
    }
    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let (outer, len, inner) = x[0].split_at_axis("sum_axis", self.axis)?;
        let mut dx = Tensor::zeros(x[0].shape());
        let gd = g.data();
        for o in 0..outer {
            for l in 0..len {
                dx.data_mut()[(o * len + l) * inner..(o * len + l + 1) * inner]
                    .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
            }
        }
        Ok(vec![Some(dx)])
    }
}

/// Sum along `axis`, dropping it.
pub fn sum_axis<T: Scalar>(tape: &mut Tape<T>, a: Var, axis: usize) -> Result<Var> {
    tape.check(a)?;
    let out = tape.value(a).sum_axis(axis)?;
    tape.record(out, &[a], SumAxisRule { axis })
}

/// Elementwise unary maps whose derivative is a function of input and output.
#[derive(Clone, Copy, Debug)]
enum Unary {
    Square,
    Sqrt,
    Exp,
    Log,
}

impl<T: Scalar> Backward<T> for Unary {
    fn name(&self) -> &'static str {
        match self {
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Exp => "exp",
            Unary::Log => "log",
        }
    }
    fn backward(&self, x: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let two = T::one() + T::one();
        let d: Vec<T> = x[0]
            .data()
            .iter()
            .zip(y.data())
            .zip(g.data())
            .map(|((&x, &y), &g)| match self {
                Unary::Square => g * two * x,
                Unary::Sqrt => {
                    if y > T::zero() {
                        g / (two * y)
                    } else {
                        T::zero()
                    }
                }
                Unary::Exp => g * y,
                Unary::Log => g / x,
            })
            .collect();
        Ok(vec![Some(Tensor::from_vec(x[0].shape(), d)?)])
    }
}

pub fn square<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    tape.check(a)?;
    let out = tape.value(a).map(|v| v * v);
    tape.record(out, &[a], Unary::Square)
}

/// Elementwise square root; negative input is a domain error.
pub fn sqrt<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    tape.check(a)?;
    if let Some(v) = tape.value(a).data().iter().find(|v| **v < T::zero()) {
        return Err(Error::domain("sqrt", format!("negative input {v}")));
    }
    let out = tape.value(a).map(|v| v.sqrt());
    tape.record(out, &[a], Unary::Sqrt)
}

pub fn exp<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    tape.check(a)?;
    let out = tape.value(a).map(|v| v.exp());
    tape.record(out, &[a], Unary::Exp)
}

/// Natural logarithm; input must be strictly positive.
pub fn log<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    tape.check(a)?;
    if let Some(v) = tape.value(a).data().iter().find(|v| **v <= T::zero()) {
        return Err(Error::domain("log", format!("non-positive input {v}")));
    }
    let out = tape.value(a).map(|v| v.ln());
    tape.record(out, &[a], Unary::Log)
}

/// Euclidean norm along the last axis, computed without the tape.
pub fn norm_last_values<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let rank = t.rank();
    let dim = t.shape()[rank - 1];
    let data: Vec<T> = t
        .data()
        .chunks(dim)
        .map(|c| c.iter().map(|&v| v * v).sum::<T>().sqrt())
        .collect();
    let mut shape = t.shape()[..rank - 1].to_vec();
    if shape.is_empty() {
        shape.push(1);
    }
    Tensor::from_vec(&shape, data)
}

struct NormRule;

impl<T: Scalar> Backward<T> for NormRule {
    fn name(&self) -> &'static str {
        "norm"
    }
    fn backward(&self, x: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let dim = x[0].shape()[x[0].rank() - 1];
        let mut dx = Tensor::zeros(x[0].shape());
        for (((dst, src), &n), &gv) in dx
            .data_mut()
            .chunks_mut(dim)
            .zip(x[0].data().chunks(dim))
            .zip(y.data())
            .zip(g.data())
        {
            // Subgradient zero at the origin.
            if n > T::zero() {
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = gv * s / n;
                }
            }
        }
        Ok(vec![Some(dx)])
    }
}

/// Euclidean norm along the last axis, which is removed.
pub fn norm_last<T: Scalar>(tape: &mut Tape<T>, a: Var) -> Result<Var> {
    tape.check(a)?;
    let out = norm_last_values(tape.value(a))?;
    tape.record(out, &[a], NormRule)
}

/// Softmax of a tensor along `axis`, computed without the tape.
pub fn softmax_values<T: Scalar>(t: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (outer, len, inner) = t.split_at_axis("softmax", axis)?;
    let mut out = t.clone();
    let d = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let mut max = d[at(0)];
            for l in 1..len {
                if d[at(l)] > max {
                    max = d[at(l)];
                }
            }
            let mut total = T::zero();
            for l in 0..len {
                let e = (d[at(l)] - max).exp();
                d[at(l)] = e;
                total += e;
            }
            for l in 0..len {
                d[at(l)] = d[at(l)] / total;
            }
        }
    }
    Ok(out)
}

struct SoftmaxRule {
    axis: usize,
}

impl<T: Scalar> Backward<T> for SoftmaxRule {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let (outer, len, inner) = y.split_at_axis("softmax", self.axis)?;
        let mut dx = Tensor::zeros(y.shape());
        let (yd, gd) = (y.data(), g.data());
        let dd = dx.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let dot: T = (0..len).map(|l| yd[at(l)] * gd[at(l)]).sum();
                for l in 0..len {
                    dd[at(l)] = yd[at(l)] * (gd[at(l)] - dot);
                }
            }
        }
        Ok(vec![Some(dx)])
    }
}

/// Numerically stabilised softmax along `axis`.
pub fn softmax<T: Scalar>(tape: &mut Tape<T>, a: Var, axis: usize) -> Result<Var> {
    tape.check(a)?;
    let out = softmax_values(tape.value(a), axis)?;
    tape.record(out, &[a], SoftmaxRule { axis })
}

struct Pad2dRule {
    pad: usize,
}

impl<T: Scalar> Backward<T> for Pad2dRule {
    fn name(&self) -> &'static str {
        "pad2d"
    }
    fn backward(&self, x: &[&Tensor<T>], y: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Grads<T> {
        let s = x[0].shape();
        let (h, w) = (s[2], s[3]);
        let (ph, pw) = (y.shape()[2], y.shape()[3]);
        let mut dx = Tensor::zeros(s);
        for (plane, src) in dx.data_mut().chunks_mut(h * w).zip(g.data().chunks(ph * pw)) {
            for r in 0..h {
                let from = (r + self.pad) * pw + self.pad;
                plane[r * w..(r + 1) * w].copy_from_slice(&src[from..from + w]);
            }
        }
        Ok(vec![Some(dx)])
    }
}

/// Zero-pads the two trailing (spatial) axes of `[batch, c, h, w]` by `pad` on each side.
pub fn pad2d<T: Scalar>(tape: &mut Tape<T>, a: Var, pad: usize) -> Result<Var> {
    tape.check(a)?;
    let s = tape.shape(a).to_vec();
    if s.len() != 4 {
        return Err(Error::contract(
            "pad2d",
            format!("expected [batch, c, h, w], got {s:?}"),
        ));
    }
    let (h, w) = (s[2], s[3]);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(&[s[0], s[1], ph, pw]);
    for (plane, src) in out
        .data_mut()
        .chunks_mut(ph * pw)
        .zip(tape.value(a).data().chunks(h * w))
    {
        for r in 0..h {
            let to = (r + pad) * pw + pad;
            plane[to..to + w].copy_from_slice(&src[r * w..(r + 1) * w]);
        }
    }
    tape.record(out, &[a], Pad2dRule { pad })
}
