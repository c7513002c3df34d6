use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::check_one_hot;
use crate::ops;
use crate::tape::{Backward, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Margin and reconstruction loss weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapsLossConfig {
    pub m_plus: f64,
    pub m_minus: f64,
    pub lambda: f64,
    /// Weight of the reconstruction term.
    pub alpha: f64,
}

impl CapsLossConfig {
    pub fn vision() -> Self {
        Self {
            m_plus: 0.9,
            m_minus: 0.1,
            lambda: 0.5,
            alpha: 0.0005,
        }
    }

    /// As [`vision`](Self::vision) with the reconstruction weight divided by 10.
    pub fn medical() -> Self {
        Self {
            alpha: 0.00005,
            ..Self::vision()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.m_minus
            && self.m_minus < self.m_plus
            && self.m_plus < 1.0
            && self.lambda > 0.0
            && self.alpha >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::contract("caps_loss_config", format!("invalid {self:?}")))
        }
    }
}

impl Default for CapsLossConfig {
    fn default() -> Self {
        Self::vision()
    }
}

fn margin_terms(n: f64, t: f64, cfg: &CapsLossConfig) -> (f64, f64) {
    let present = (cfg.m_plus - n).max(0.0);
    let absent = (n - cfg.m_minus).max(0.0);
    let loss = t * present * present + cfg.lambda * (1.0 - t) * absent * absent;
    let grad = -2.0 * t * present + 2.0 * cfg.lambda * (1.0 - t) * absent;
    (loss, grad)
}

fn check_norms<T: Scalar>(norms: &Tensor<T>, targets: &Tensor<T>) -> Result<()> {
    if norms.shape() != targets.shape() {
        return Err(Error::shape("margin_loss", norms.shape(), targets.shape()));
    }
    check_one_hot("margin_loss", targets)?;
    // Squashed norms are below one; rounding in f32 may land exactly on it.
    if let Some(v) = norms.data().iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::domain("margin_loss", format!("capsule norm {v} outside [0, 1]")));
    }
    Ok(())
}

/// Margin loss evaluated without the tape.
pub fn margin_loss_values<T: Scalar>(norms: &Tensor<T>, targets: &Tensor<T>, cfg: &CapsLossConfig) -> Result<f64> {
    check_norms(norms, targets)?;
    let total: f64 = norms
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&n, &t)| margin_terms(n.to_f64_lossy(), t.to_f64_lossy(), cfg).0)
        .sum();
    Ok(total / norms.shape()[0] as f64)
}

struct MarginRule {
    cfg: CapsLossConfig,
}

impl<T: Scalar> Backward<T> for MarginRule {
    fn name(&self) -> &'static str {
        "margin_loss"
    }

    fn backward(&self, x: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let scale = g.data()[0].to_f64_lossy() / x[0].shape()[0] as f64;
        let d = x[0].zip_map(x[1], "margin_loss", |n, t| {
            let (_, grad) = margin_terms(n.to_f64_lossy(), t.to_f64_lossy(), &self.cfg);
            T::from_f64_lossy(grad * scale)
        })?;
        Ok(vec![Some(d), None])
    }
}

/// Batch mean of the per-sample margin loss summed over classes, for
/// capsule norms `[batch, classes]` and one-hot targets of the same shape.
pub fn margin_loss<T: Scalar>(tape: &mut Tape<T>, norms: Var, targets: Var, cfg: &CapsLossConfig) -> Result<Var> {
    tape.check(norms)?;
    tape.check(targets)?;
    let (n, t) = (tape.value(norms), tape.value(targets));
    if n.rank() != 2 {
        return Err(Error::contract(
            "margin_loss",
            format!("norms must be [batch, classes], got {:?}", n.shape()),
        ));
    }
    let value = margin_loss_values(n, t, cfg)?;
    tape.record(
        Tensor::scalar(T::from_f64_lossy(value)),
        &[norms, targets],
        MarginRule { cfg: *cfg },
    )
}

/// Mean squared pixel error: per-image mean over pixels, averaged over the batch.
pub fn reconstruction_loss<T: Scalar>(tape: &mut Tape<T>, x: Var, x_hat: Var) -> Result<Var> {
    tape.check(x)?;
    tape.check(x_hat)?;
    if tape.shape(x) != tape.shape(x_hat) {
        return Err(Error::shape("reconstruction_loss", tape.shape(x), tape.shape(x_hat)));
    }
    // Every image has the same pixel count, so the two means coincide.
    let d = ops::sub(tape, x, x_hat)?;
    let sq = ops::square(tape, d)?;
    ops::mean(tape, sq)
}

/// `margin + alpha * recon`.
pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, margin: Var, recon: Var, cfg: &CapsLossConfig) -> Result<Var> {
    if cfg.alpha < 0.0 {
        return Err(Error::contract("total_loss", "negative reconstruction weight"));
    }
    let weighted = ops::mul_scalar(tape, recon, T::from_f64_lossy(cfg.alpha))?;
    ops::add(tape, margin, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn margin(norms: &[f64], targets: &[f64], k: usize) -> f64 {
        let n = Tensor::<f64>::from_f64(&[norms.len() / k, k], norms).unwrap();
        let t = Tensor::from_f64(&[norms.len() / k, k], targets).unwrap();
        margin_loss_values(&n, &t, &CapsLossConfig::vision()).unwrap()
    }

    #[test]
    fn inactive_hinges() {
        assert_eq!(margin(&[0.95, 0.05, 0.05], &[1., 0., 0.], 3), 0.0);
    }

    #[test]
    fn present_and_absent_terms() {
        assert!((margin(&[0.5], &[1.], 1) - 0.16).abs() < 1e-12);
        assert!((margin(&[0.5, 0.95], &[0., 1.], 2) - 0.08).abs() < 1e-12);
    }

    #[test]
    fn not_one_hot_rejected() {
        let n = Tensor::<f64>::from_f64(&[1, 2], &[0.5, 0.5]).unwrap();
        let t = Tensor::from_f64(&[1, 2], &[1., 1.]).unwrap();
        assert!(margin_loss_values(&n, &t, &CapsLossConfig::vision()).is_err());
    }

    fn recon(x: Tensor<f64>, y: Tensor<f64>) -> f64 {
        let mut tape = Tape::new();
        let (x, y) = (tape.constant(x), tape.constant(y));
        let l = reconstruction_loss(&mut tape, x, y).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn reconstruction_values() {
        assert_eq!(recon(Tensor::ones(&[2, 28, 28]), Tensor::ones(&[2, 28, 28])), 0.0);
        assert!((recon(Tensor::zeros(&[1, 28, 28]), Tensor::ones(&[1, 28, 28])) - 1.0).abs() < 1e-12);
        let mut y = Tensor::zeros(&[1, 28, 28]);
        y.data_mut()[100] = 0.5;
        let v = recon(Tensor::zeros(&[1, 28, 28]), y);
        assert!((v - 0.25 / 784.0).abs() < 1e-15);
        assert!((v - 3.189e-4).abs() < 1e-7);
    }

    #[test]
    fn total_combines() {
        let mut tape = Tape::<f64>::new();
        let m = tape.constant(Tensor::scalar(0.16));
        let r = tape.constant(Tensor::scalar(1.0));
        let t = total_loss(&mut tape, m, r, &CapsLossConfig::vision()).unwrap();
        assert!((tape.value(t).item().unwrap() - 0.1605).abs() < 1e-12);
        let zero = CapsLossConfig { alpha: 0.0, ..CapsLossConfig::vision() };
        let t = total_loss(&mut tape, m, r, &zero).unwrap();
        assert_eq!(tape.value(t).item().unwrap(), 0.16);
    }

    #[test]
    fn medical_alpha_is_tenth() {
        let (v, m) = (CapsLossConfig::vision(), CapsLossConfig::medical());
        assert!((v.alpha / m.alpha - 10.0).abs() < 1e-12);
        assert!(v.validate().is_ok() && m.validate().is_ok());
    }
}
