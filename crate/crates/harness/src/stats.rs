use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{HarnessError, Result};

/// Below this squared standard error the samples are treated as constant.
pub const VARIANCE_FLOOR: f64 = 1e-300;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n - 1 denominator); 0 for a single sample.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Two-sided Welch t-test p-value for a difference in means.
///
/// With (numerically) zero variance on both sides the statistic is 0/0 or
/// ±inf; the limit is used: p = 1 for equal means, 0 otherwise.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(HarnessError::contract(
            "significance_test",
            format!("need at least 2 samples per side, got {} and {}", a.len(), b.len()),
        ));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(HarnessError::contract("significance_test", "non-finite sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 < VARIANCE_FLOOR {
        return Ok(if diff == 0.0 { 1.0 } else { 0.0 });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}
