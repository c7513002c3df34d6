use crate::error::{Error, Result};
use crate::ops::softmax_values;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// `[batch, classes]` one-hot matrix for integer labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len().max(1), classes]);
    if labels.is_empty() {
        return Err(Error::contract("one_hot", "no labels"));
    }
    for (row, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::contract(
                "one_hot",
                format!("label {l} outside 0..{classes}"),
            ));
        }
        t.data_mut()[row * classes + l] = T::one();
    }
    Ok(t)
}

/// Checks that every row of a `[batch, k]` target matrix is one-hot.
pub fn check_one_hot<T: Scalar>(op: &'static str, targets: &Tensor<T>) -> Result<()> {
    if targets.rank() != 2 {
        return Err(Error::contract(
            op,
            format!("targets must be [batch, classes], got {:?}", targets.shape()),
        ));
    }
    let k = targets.shape()[1];
    for (row, r) in targets.data().chunks(k).enumerate() {
        let ones = r.iter().filter(|&&v| v == T::one()).count();
        let zeros = r.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::contract(op, format!("target row {row} is not one-hot")));
        }
    }
    Ok(())
}

struct CrossEntropyRule<T> {
    probs: Tensor<T>,
}

impl<T: Scalar> Backward<T> for CrossEntropyRule<T> {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let batch = T::from_usize(x[0].shape()[0]).expect("batch");
        let scale = g.data()[0] / batch;
        let d = self.probs.zip_map(x[1], "softmax_cross_entropy", |p, t| (p - t) * scale)?;
        Ok(vec![Some(d), None])
    }
}

/// Mean over the batch of `-log softmax(logits)[true class]`.
pub fn softmax_cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: Var) -> Result<Var> {
    tape.check(logits)?;
    tape.check(targets)?;
    let (l, t) = (tape.value(logits), tape.value(targets));
    if l.shape() != t.shape() || l.rank() != 2 {
        return Err(Error::shape("softmax_cross_entropy", l.shape(), t.shape()));
    }
    check_one_hot("softmax_cross_entropy", t)?;
    let k = l.shape()[1];
    let batch = l.shape()[0];
    let mut total = T::zero();
    for (row, trow) in l.data().chunks(k).zip(t.data().chunks(k)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        let truth = trow.iter().position(|&v| v == T::one()).expect("checked one-hot");
        total += lse - row[truth];
    }
    let loss = total / T::from_usize(batch).expect("batch");
    let probs = softmax_values(l, 1)?;
    tape.record(Tensor::scalar(loss), &[logits, targets], CrossEntropyRule { probs })
}
