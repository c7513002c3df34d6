//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

mod suite;

pub use suite::{layer_suite, model_check, LayerReport, ModelCheckOptions, KINK_TOLERANCE, MODEL_EPS, SUITE_EPS};

/// Upper limit for the per-coordinate step under [`KinkPolicy::Skip`].
pub const MAX_ADAPTIVE_STEP: f64 = 1e-3;

/// Relative error floor used in the denominator.
pub const REL_FLOOR: f64 = 1e-8;

/// Relative discrepancy between one analytic and one numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Worst coordinate of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// Coordinates excluded because they straddle a kink (see [`KinkPolicy`]).
    pub kinks: usize,
}

/// What to do with coordinates where the function is not differentiable
/// within the probe interval (a relu crossing zero, a max changing winner).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KinkPolicy {
    /// Compare every coordinate.
    Strict,
    /// Widen the step (by tens, up to [`MAX_ADAPTIVE_STEP`]) where the
    /// derivative is within rounding of zero, then skip a coordinate when
    /// central differences with steps `h` and `h / 2` disagree by more than this relative amount (and by more
    /// than rounding in the function value explains). For a smooth function
    /// they agree to second order in the step; a kink inside the probe
    /// interval breaks that. The test looks at function values only, so a
    /// wrong backward rule cannot trigger it.
    Skip(f64),
}

/// Compares the tape gradient of a scalar function against central
/// differences with step `eps` at every coordinate of `theta`.
///
/// `f` receives a fresh tape and the leaf holding its argument and must
/// return the scalar output node.
pub fn finite_difference_check<F>(f: F, theta: &Tensor<f64>, eps: f64) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..theta.len()).collect();
    finite_difference_check_at(f, theta, eps, &coords)
}

/// As [`finite_difference_check`], restricted to the listed flat coordinates.
pub fn finite_difference_check_at<F>(
    f: F,
    theta: &Tensor<f64>,
    eps: f64,
    coords: &[usize],
) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    check_with_policy(f, theta, eps, coords, KinkPolicy::Strict)
}

/// As [`finite_difference_check_at`] with an explicit [`KinkPolicy`].
pub fn check_with_policy<F>(
    f: F,
    theta: &Tensor<f64>,
    eps: f64,
    coords: &[usize],
    policy: KinkPolicy,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract("finite_difference_check", "step must be positive"));
    }
    let eval = |point: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.leaf(point.clone());
        let y = f(&mut tape, x)?;
        tape.value(y).item()
    };

    let mut tape = Tape::new();
    let x = tape.leaf(theta.clone());
    let y = f(&mut tape, x)?;
    let analytic = tape.gradients(y, &[x])?.remove(0);
    let f0 = tape.value(y).item()?.abs().max(1.0);
    // Rounding in f, propagated into a difference quotient with step h.
    let noise = |h: f64| 16.0 * f64::EPSILON * f0 / h;

    let mut report = CheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: coords.len(),
        kinks: 0,
    };
    let mut kinks = 0;
    let mut probe = theta.clone();
    let central = |probe: &mut Tensor<f64>, i: usize, h: f64| -> Result<f64> {
        let orig = probe.data()[i];
        let at_coord =
            |e: Error| Error::domain("finite_difference_check", format!("coordinate {i}: {e}"));
        probe.data_mut()[i] = orig + h;
        let up = eval(probe).map_err(at_coord);
        probe.data_mut()[i] = orig - h;
        let down = eval(probe).map_err(at_coord);
        probe.data_mut()[i] = orig;
        let (up, down) = (up?, down?);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::domain(
                "finite_difference_check",
                format!("non-finite function value while probing coordinate {i}"),
            ));
        }
        Ok((up - down) / (2.0 * h))
    };
    'coords: for &i in coords {
        let mut h = eps;
        let mut numeric = central(&mut probe, i, h)?;
        if let KinkPolicy::Skip(tol) = policy {
            // Derivatives lost in rounding get a wider step, chosen from
            // function values alone.
            while numeric.abs() < 1e3 * noise(h) && h < MAX_ADAPTIVE_STEP {
                h *= 10.0;
                numeric = central(&mut probe, i, h)?;
            }
            let refined = central(&mut probe, i, h / 2.0)?;
            if (numeric - refined).abs() > noise(h) && relative_error(numeric, refined) > tol {
                kinks += 1;
                continue 'coords;
            }
        }
        let a = analytic.data()[i];
        let err = relative_error(a, numeric);
        if err > report.max_rel_error || coords.len() == 1 {
            report = CheckReport {
                max_rel_error: err,
                worst_index: i,
                analytic: a,
                numeric,
                coordinates: coords.len(),
                kinks: 0,
            };
        }
    }
    report.kinks = kinks;
    Ok(report)
}
