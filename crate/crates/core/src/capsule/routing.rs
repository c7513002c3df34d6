use crate::error::{Error, Result};
use crate::ops;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Scalar, Tensor};

use super::squash;

pub const DEFAULT_ROUTING_ITERATIONS: usize = 3;

fn routing_dims(c: &[usize], votes: &[usize]) -> Result<[usize; 4]> {
    match (c, votes) {
        ([b, i, j], [vb, vi, vj, d]) if b == vb && i == vi && j == vj => Ok([*b, *i, *j, *d]),
        _ => Err(Error::shape("weighted_sum", c, votes)),
    }
}

struct WeightedSumRule;

impl<T: Scalar> Backward<T> for WeightedSumRule {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let [b, ni, nj, d] = routing_dims(x[0].shape(), x[1].shape())?;
        let (c, u, g) = (x[0].data(), x[1].data(), g.data());
        let mut dc = needs[0].then(|| Tensor::zeros(x[0].shape()));
        let mut du = needs[1].then(|| Tensor::zeros(x[1].shape()));
        for bi in 0..b {
            for i in 0..ni {
                for j in 0..nj {
                    let ci = (bi * ni + i) * nj + j;
                    let gs = &g[(bi * nj + j) * d..(bi * nj + j + 1) * d];
                    let us = ci * d..(ci + 1) * d;
                    if let Some(dc) = dc.as_mut() {
                        dc.data_mut()[ci] = u[us.clone()].iter().zip(gs).map(|(&a, &b)| a * b).sum();
                    }
                    if let Some(du) = du.as_mut() {
                        for (o, &gv) in du.data_mut()[us].iter_mut().zip(gs) {
                            *o = c[ci] * gv;
                        }
                    }
                }
            }
        }
        Ok(vec![dc, du])
    }
}

/// `s[b, j] = sum_i c[b, i, j] * votes[b, i, j]` for couplings
/// `[batch, n_in, n_out]` and votes `[batch, n_in, n_out, dim]`.
pub fn weighted_sum<T: Scalar>(tape: &mut Tape<T>, c: Var, votes: Var) -> Result<Var> {
    tape.check(c)?;
    tape.check(votes)?;
    let [b, ni, nj, d] = routing_dims(tape.shape(c), tape.shape(votes))?;
    let mut out = Tensor::zeros(&[b, nj, d]);
    let (cv, uv) = (tape.value(c).data(), tape.value(votes).data());
    let o = out.data_mut();
    for bi in 0..b {
        for i in 0..ni {
            for j in 0..nj {
                let ci = (bi * ni + i) * nj + j;
                let w = cv[ci];
                let dst = &mut o[(bi * nj + j) * d..(bi * nj + j + 1) * d];
                for (s, &u) in dst.iter_mut().zip(&uv[ci * d..(ci + 1) * d]) {
                    *s += w * u;
                }
            }
        }
    }
    tape.record(out, &[c, votes], WeightedSumRule)
}

struct AgreementRule;

impl<T: Scalar> Backward<T> for AgreementRule {
    fn name(&self) -> &'static str {
        "agreement"
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let [b, ni, nj, d] = agreement_dims(x[0].shape(), x[1].shape())?;
        let (u, v, g) = (x[0].data(), x[1].data(), g.data());
        let mut du = needs[0].then(|| Tensor::zeros(x[0].shape()));
        let mut dv = needs[1].then(|| Tensor::zeros(x[1].shape()));
        for bi in 0..b {
            for i in 0..ni {
                for j in 0..nj {
                    let ci = (bi * ni + i) * nj + j;
                    let vs = (bi * nj + j) * d..(bi * nj + j + 1) * d;
                    let us = ci * d..(ci + 1) * d;
                    if let Some(du) = du.as_mut() {
                        for (o, &vv) in du.data_mut()[us.clone()].iter_mut().zip(&v[vs.clone()]) {
                            *o = g[ci] * vv;
                        }
                    }
                    if let Some(dv) = dv.as_mut() {
                        for (o, &uv) in dv.data_mut()[vs].iter_mut().zip(&u[us]) {
                            *o += g[ci] * uv;
                        }
                    }
                }
            }
        }
        Ok(vec![du, dv])
    }
}

fn agreement_dims(votes: &[usize], v: &[usize]) -> Result<[usize; 4]> {
    match (votes, v) {
        ([b, i, j, d], [vb, vj, vd]) if b == vb && j == vj && d == vd => Ok([*b, *i, *j, *d]),
        _ => Err(Error::shape("agreement", votes, v)),
    }
}

/// `a[b, i, j] = votes[b, i, j] . v[b, j]`.
pub fn agreement<T: Scalar>(tape: &mut Tape<T>, votes: Var, v: Var) -> Result<Var> {
    tape.check(votes)?;
    tape.check(v)?;
    let [b, ni, nj, d] = agreement_dims(tape.shape(votes), tape.shape(v))?;
    let (uv, vv) = (tape.value(votes).data(), tape.value(v).data());
    let mut out = Tensor::zeros(&[b, ni, nj]);
    for (ci, o) in out.data_mut().iter_mut().enumerate() {
        let (bi, j) = (ci / (ni * nj), ci % nj);
        let vs = &vv[(bi * nj + j) * d..(bi * nj + j + 1) * d];
        *o = uv[ci * d..(ci + 1) * d].iter().zip(vs).map(|(&a, &b)| a * b).sum();
    }
    tape.record(out, &[votes, v], AgreementRule)
}

/// Output of [`dynamic_routing`].
pub struct Routing<T> {
    /// Squashed output poses `[batch, n_out, dim]`.
    pub poses: Var,
    /// Coupling coefficients used at each iteration, `[batch, n_in, n_out]`.
    pub couplings: Vec<Tensor<T>>,
}

/// Routing by agreement over `votes: [batch, n_in, n_out, dim]`.
///
/// Logits start at zero and are updated after every iteration except the
/// last. The whole recurrence is recorded, so gradients reach the votes
/// along every path, including through the couplings.
pub fn dynamic_routing<T: Scalar>(tape: &mut Tape<T>, votes: Var, iterations: usize) -> Result<Routing<T>> {
    tape.check(votes)?;
    if iterations < 1 {
        return Err(Error::contract("dynamic_routing", "at least one iteration is required"));
    }
    let s = tape.shape(votes).to_vec();
    if s.len() != 4 {
        return Err(Error::contract(
            "dynamic_routing",
            format!("votes must be [batch, n_in, n_out, dim], got {s:?}"),
        ));
    }
    let mut logits = tape.constant(Tensor::zeros(&s[..3]));
    let mut couplings = Vec::with_capacity(iterations);
    let mut poses = None;
    for r in 0..iterations {
        let c = ops::softmax(tape, logits, 2)?;
        couplings.push(tape.value(c).clone());
        let weighted = weighted_sum(tape, c, votes)?;
        let v = squash(tape, weighted)?;
        if r + 1 < iterations {
            let a = agreement(tape, votes, v)?;
            logits = ops::add(tape, logits, a)?;
        }
        poses = Some(v);
    }
    Ok(Routing {
        poses: poses.expect("at least one iteration"),
        couplings,
    })
}
