//! 2-D cross-correlation over `[batch, channels, height, width]` inputs.
//!
//! Images are unrolled into a `[positions, C*kh*kw]` patch matrix (im2row)
//! a few at a time and multiplied against the flattened kernels. The patch
//! matrix is rebuilt during the backward pass instead of being stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{gemm, MatMut, MatRef, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding; trailing rows/columns that do not fill a full stride are dropped.
    Valid,
    /// Zero padding so that the output extent is `ceil(input / stride)`.
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn valid(stride: usize) -> Self {
        Self {
            stride,
            padding: Padding::Valid,
        }
    }

    pub fn same(stride: usize) -> Self {
        Self {
            stride,
            padding: Padding::Same,
        }
    }
}

/// Resolved geometry of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernel: &[usize], spec: ConvSpec) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::shape("conv2d", input, kernel));
        }
        let [batch, c, h, w] = [input[0], input[1], input[2], input[3]];
        let [o, kc, kh, kw] = [kernel[0], kernel[1], kernel[2], kernel[3]];
        if kc != c {
            return Err(Error::Contract {
                op: "conv2d",
                detail: format!(
                    "kernel expects {kc} input channels, input {input:?} has {c}"
                ),
            });
        }
        if spec.stride == 0 {
            return Err(Error::contract("conv2d", "stride must be at least 1"));
        }
        let s = spec.stride;
        let (out_h, out_w, pad_top, pad_left) = match spec.padding {
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::shape("conv2d", input, kernel));
                }
                ((h - kh) / s + 1, (w - kw) / s + 1, 0, 0)
            }
            Padding::Same => {
                let oh = h.div_ceil(s);
                let ow = w.div_ceil(s);
                let ph = ((oh - 1) * s + kh).saturating_sub(h);
                let pw = ((ow - 1) * s + kw).saturating_sub(w);
                (oh, ow, ph / 2, pw / 2)
            }
        };
        Ok(Self {
            batch,
            in_channels: c,
            height: h,
            width: w,
            out_channels: o,
            kh,
            kw,
            stride: s,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Images per im2row block, bounded by a patch-buffer budget.
    fn chunk(&self) -> usize {
        const BUDGET: usize = 1 << 23;
        (BUDGET / (self.positions() * self.patch_len()).max(1)).clamp(1, self.batch)
    }

    /// Fills `rows` with the patches of images `first..first+count`.
    fn im2row<T: Scalar>(&self, x: &[T], first: usize, count: usize, rows: &mut [T]) {
        let (c, h, w) = (self.in_channels, self.height, self.width);
        let (kh, kw, s) = (self.kh, self.kw, self.stride);
        let k = self.patch_len();
        let p = self.positions();
        for n in 0..count {
            let img = &x[(first + n) * c * h * w..(first + n + 1) * c * h * w];
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let row = &mut rows[(n * p + oy * self.out_w + ox) * k..][..k];
                    let y0 = (oy * s) as isize - self.pad_top as isize;
                    let x0 = (ox * s) as isize - self.pad_left as isize;
                    for ch in 0..c {
                        let plane = &img[ch * h * w..(ch + 1) * h * w];
                        for ki in 0..kh {
                            let dst = &mut row[(ch * kh + ki) * kw..][..kw];
                            let y = y0 + ki as isize;
                            if y < 0 || y >= h as isize {
                                dst.fill(T::zero());
                                continue;
                            }
                            let src_row = &plane[y as usize * w..(y as usize + 1) * w];
                            if x0 >= 0 && x0 as usize + kw <= w {
                                dst.copy_from_slice(&src_row[x0 as usize..x0 as usize + kw]);
                            } else {
                                for (kj, d) in dst.iter_mut().enumerate() {
                                    let xx = x0 + kj as isize;
                                    *d = if xx >= 0 && xx < w as isize {
                                        src_row[xx as usize]
                                    } else {
                                        T::zero()
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds patch gradients back onto the input gradient.
    fn row2im<T: Scalar>(&self, rows: &[T], first: usize, count: usize, dx: &mut [T]) {
        let (c, h, w) = (self.in_channels, self.height, self.width);
        let (kh, kw, s) = (self.kh, self.kw, self.stride);
        let k = self.patch_len();
        let p = self.positions();
        for n in 0..count {
            let img = &mut dx[(first + n) * c * h * w..(first + n + 1) * c * h * w];
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let row = &rows[(n * p + oy * self.out_w + ox) * k..][..k];
                    let y0 = (oy * s) as isize - self.pad_top as isize;
                    let x0 = (ox * s) as isize - self.pad_left as isize;
                    for ch in 0..c {
                        for ki in 0..kh {
                            let y = y0 + ki as isize;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            let src = &row[(ch * kh + ki) * kw..][..kw];
                            let base = ch * h * w + y as usize * w;
                            for (kj, &v) in src.iter().enumerate() {
                                let xx = x0 + kj as isize;
                                if xx >= 0 && xx < w as isize {
                                    img[base + xx as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass without recording. `bias` may be omitted.
pub fn conv2d_values<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(x.shape(), kernels.shape(), spec)?;
    if let Some(b) = bias {
        if b.shape() != [g.out_channels] {
            return Err(Error::shape("conv2d", kernels.shape(), b.shape()));
        }
    }
    let (k, p, o) = (g.patch_len(), g.positions(), g.out_channels);
    let chunk = g.chunk();
    let mut rows = vec![T::zero(); chunk * p * k];
    let mut out_rows = vec![T::zero(); chunk * p * o];
    let mut out = Tensor::zeros(&g.output_shape());
    let mut first = 0;
    while first < g.batch {
        let count = chunk.min(g.batch - first);
        g.im2row(x.data(), first, count, &mut rows);
        gemm(
            T::one(),
            MatRef::new(&rows[..count * p * k], count * p, k),
            MatRef::transposed(kernels.data(), o, k),
            T::zero(),
            MatMut::new(&mut out_rows[..count * p * o], count * p, o),
        );
        let dst = &mut out.data_mut()[first * o * p..(first + count) * o * p];
        for n in 0..count {
            for ch in 0..o {
                let b = bias.map_or(T::zero(), |b| b.data()[ch]);
                let plane = &mut dst[(n * o + ch) * p..(n * o + ch + 1) * p];
                for (pos, d) in plane.iter_mut().enumerate() {
                    *d = out_rows[(n * p + pos) * o + ch] + b;
                }
            }
        }
        first += count;
    }
    Ok(out)
}

struct ConvRule {
    geom: ConvGeometry,
}

impl<T: Scalar> Backward<T> for ConvRule {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let g = &self.geom;
        let (input, kernels) = (x[0], x[1]);
        let (k, p, o) = (g.patch_len(), g.positions(), g.out_channels);
        let chunk = g.chunk();
        let mut dx = needs[0].then(|| Tensor::zeros(input.shape()));
        let mut dw = needs[1].then(|| Tensor::zeros(kernels.shape()));
        let db = (needs.len() > 2 && needs[2]).then(|| {
            let mut db = vec![T::zero(); o];
            for (i, plane) in grad.data().chunks(p).enumerate() {
                db[i % o] += plane.iter().copied().sum::<T>();
            }
            Tensor::from_vec(&[o], db).expect("bias shape")
        });

        let mut rows = vec![T::zero(); if dw.is_some() { chunk * p * k } else { 0 }];
        let mut grad_rows = vec![T::zero(); chunk * p * o];
        let mut drows = vec![T::zero(); if dx.is_some() { chunk * p * k } else { 0 }];
        let mut first = 0;
        while first < g.batch && (dx.is_some() || dw.is_some()) {
            let count = chunk.min(g.batch - first);
            let src = &grad.data()[first * o * p..(first + count) * o * p];
            for n in 0..count {
                for ch in 0..o {
                    for pos in 0..p {
                        grad_rows[(n * p + pos) * o + ch] = src[(n * o + ch) * p + pos];
                    }
                }
            }
            let grad_mat = MatRef::new(&grad_rows[..count * p * o], count * p, o);
            if let Some(dw) = dw.as_mut() {
                g.im2row(input.data(), first, count, &mut rows);
                gemm(
                    T::one(),
                    grad_mat.t(),
                    MatRef::new(&rows[..count * p * k], count * p, k),
                    T::one(),
                    MatMut::new(dw.data_mut(), o, k),
                );
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    T::one(),
                    grad_mat,
                    MatRef::new(kernels.data(), o, k),
                    T::zero(),
                    MatMut::new(&mut drows[..count * p * k], count * p, k),
                );
                g.row2im(&drows, first, count, dx.data_mut());
            }
            first += count;
        }
        let mut out = vec![dx, dw];
        if needs.len() > 2 {
            out.push(db);
        }
        Ok(out)
    }
}

/// Cross-correlation of `x` `[batch, c, h, w]` with `kernels` `[out, c, kh, kw]`,
/// plus a per-output-channel `bias`.
pub fn conv2d<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    kernels: Var,
    bias: Option<Var>,
    spec: ConvSpec,
) -> Result<Var> {
    let geom = ConvGeometry::new(tape.shape(x), tape.shape(kernels), spec)?;
    let out = conv2d_values(
        tape.value(x),
        tape.value(kernels),
        bias.map(|b| tape.value(b)),
        spec,
    )?;
    let mut inputs = vec![x, kernels];
    inputs.extend(bias);
    tape.record(out, &inputs, ConvRule { geom })
}
