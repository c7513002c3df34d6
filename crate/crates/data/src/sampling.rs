//! Class-aware subsets of a [`LabeledImageSet`].
//!
//! All selections keep the surviving items in their original order, so the
//! result depends on the seed only through which items survive.

use capsnet_core::SeededRng;

use crate::error::{DataError, Result};
use crate::set::{LabeledImageSet, Split};

fn per_class_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Keeps `round(fraction * n_k)` items of every class `k`, drawn uniformly
/// without replacement. A class that rounds to nothing is recorded in
/// `warnings` rather than rejected.
pub fn stratified_subsample(set: &LabeledImageSet, fraction: f64, rng: &mut SeededRng) -> Result<LabeledImageSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::contract("stratified_subsample", format!("fraction {fraction} not in (0, 1]")));
    }
    let mut keep = Vec::new();
    let mut warnings = Vec::new();
    for (k, members) in set.indices_by_class().iter().enumerate() {
        let take = per_class_count(members.len(), fraction);
        if take == 0 && !members.is_empty() {
            warnings.push(format!(
                "class {} emptied by subsampling {} items at fraction {fraction}",
                set.class_names[k],
                members.len()
            ));
        }
        keep.extend(rng.sample_indices(members.len(), take).into_iter().map(|j| members[j]));
    }
    keep.sort_unstable();
    let mut out = set.select(&keep);
    out.warnings.extend(warnings);
    Ok(out)
}

/// Reduces each listed class to `round(keep_fraction * n_k)` items; the
/// others are untouched.
pub fn induce_imbalance(
    set: &LabeledImageSet,
    reduce_classes: &[usize],
    keep_fraction: f64,
    rng: &mut SeededRng,
) -> Result<LabeledImageSet> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(DataError::contract(
            "induce_imbalance",
            format!("keep fraction {keep_fraction} not in (0, 1]"),
        ));
    }
    if let Some(&bad) = reduce_classes.iter().find(|&&c| c >= set.num_classes()) {
        return Err(DataError::contract(
            "induce_imbalance",
            format!("unknown class {bad} (set has {})", set.num_classes()),
        ));
    }
    let mut keep = Vec::new();
    for (k, members) in set.indices_by_class().iter().enumerate() {
        if reduce_classes.contains(&k) {
            let take = per_class_count(members.len(), keep_fraction);
            keep.extend(rng.sample_indices(members.len(), take).into_iter().map(|j| members[j]));
        } else {
            keep.extend_from_slice(members);
        }
    }
    keep.sort_unstable();
    Ok(set.select(&keep))
}

/// Stratified split into `(train, val)`; each class sends
/// `round(val_fraction * n_k)` items to validation, at least one and
/// leaving at least one.
pub fn train_val_split(
    set: &LabeledImageSet,
    val_fraction: f64,
    rng: &mut SeededRng,
) -> Result<(LabeledImageSet, LabeledImageSet)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DataError::contract("train_val_split", format!("fraction {val_fraction} not in (0, 1)")));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (k, members) in set.indices_by_class().iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(DataError::contract(
                "train_val_split",
                format!("class {} has {} item(s); need 2 to split", set.class_names[k], members.len()),
            ));
        }
        let n_val = per_class_count(members.len(), val_fraction).clamp(1, members.len() - 1);
        let mut order: Vec<usize> = members.clone();
        rng.shuffle(&mut order);
        val.extend_from_slice(&order[..n_val]);
        train.extend_from_slice(&order[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((
        set.select(&train).with_split(Split::Train),
        set.select(&val).with_split(Split::Val),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(per_class: &[usize]) -> LabeledImageSet {
        let labels: Vec<usize> = per_class
            .iter()
            .enumerate()
            .flat_map(|(k, &n)| std::iter::repeat_n(k, n))
            .collect();
        let pixels = (0..labels.len()).map(|i| (i % 256) as f32 / 255.0).collect();
        LabeledImageSet::numbered(1, 1, pixels, labels, per_class.len(), Split::Train).unwrap()
    }

    #[test]
    fn subsample_fifty_fifty_at_ten_percent() {
        let s = balanced(&[50, 50]);
        let out = stratified_subsample(&s, 0.1, &mut SeededRng::new(0)).unwrap();
        assert_eq!(out.class_counts(), vec![5, 5]);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn full_fraction_is_identity() {
        let s = balanced(&[7, 3, 4]);
        let out = stratified_subsample(&s, 1.0, &mut SeededRng::new(3)).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn emptied_class_is_a_warning() {
        let s = balanced(&[100, 2]);
        let out = stratified_subsample(&s, 0.1, &mut SeededRng::new(0)).unwrap();
        assert_eq!(out.class_counts(), vec![10, 0]);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn bad_fraction_rejected() {
        let s = balanced(&[4, 4]);
        for f in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(stratified_subsample(&s, f, &mut SeededRng::new(0)).is_err());
        }
    }

    #[test]
    fn imbalance_reduces_listed_classes() {
        let s = balanced(&[1000, 1000]);
        let out = induce_imbalance(&s, &[1], 0.2, &mut SeededRng::new(1)).unwrap();
        assert_eq!(out.class_counts(), vec![1000, 200]);
        let same = induce_imbalance(&s, &[1], 1.0, &mut SeededRng::new(1)).unwrap();
        assert_eq!(same, s);
        assert!(induce_imbalance(&s, &[2], 0.2, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn split_is_stratified_disjoint_and_seeded() {
        let s = balanced(&[50, 50]);
        let mut rng = SeededRng::new(9);
        let (tr, va) = train_val_split(&s, 0.1, &mut rng).unwrap();
        assert_eq!((tr.len(), va.len()), (90, 10));
        assert_eq!(va.class_counts(), vec![5, 5]);
        let (tr2, va2) = train_val_split(&s, 0.1, &mut SeededRng::new(9)).unwrap();
        assert_eq!((tr, va), (tr2, va2));
    }

    #[test]
    fn singleton_class_cannot_be_split() {
        let s = balanced(&[10, 1]);
        assert!(train_val_split(&s, 0.2, &mut SeededRng::new(0)).is_err());
    }
}
