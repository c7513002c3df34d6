use capsnet_core::SeededRng;
use capsnet_data::augment::{augment, AugmentSpec, Transform};
use capsnet_data::patches::{extract_patches, Annotation, PatchSpec, NEGATIVE, POSITIVE};
use capsnet_data::sampling::{induce_imbalance, stratified_subsample, train_val_split};
use capsnet_data::stain::{color_deconvolution_raw, he_stain_matrix};
use capsnet_data::{Image, LabeledImageSet, Split};
use proptest::prelude::*;

fn set_with(counts: &[usize], side: usize) -> LabeledImageSet {
    let labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &n)| std::iter::repeat_n(k, n))
        .collect();
    let pixels = (0..labels.len() * side * side)
        .map(|i| ((i * 37) % 101) as f32 / 100.0)
        .collect();
    LabeledImageSet::numbered(side, side, pixels, labels, counts.len(), Split::Train).unwrap()
}

fn counts() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0usize..60, 2..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subsample_keeps_rounded_class_shares(c in counts(), f in 0.01f64..=1.0, seed in any::<u64>()) {
        let set = set_with(&c, 2);
        let out = stratified_subsample(&set, f, &mut SeededRng::new(seed)).unwrap();
        for (k, (&n, &m)) in c.iter().zip(&out.class_counts()).enumerate() {
            prop_assert_eq!(m, ((n as f64 * f).round() as usize).min(n), "class {}", k);
        }
        // Survivors keep their original order, and the same seed gives the same set.
        let again = stratified_subsample(&set, f, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(&out, &again);
    }

    #[test]
    fn full_fraction_is_identity(c in counts(), seed in any::<u64>()) {
        let set = set_with(&c, 2);
        let out = stratified_subsample(&set, 1.0, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(out.pixels, set.pixels);
        prop_assert_eq!(out.labels, set.labels);
    }

    #[test]
    fn imbalance_touches_only_listed_classes(c in counts(), keep in 0.05f64..=1.0, seed in any::<u64>()) {
        let set = set_with(&c, 1);
        let out = induce_imbalance(&set, &[0], keep, &mut SeededRng::new(seed)).unwrap();
        let got = out.class_counts();
        prop_assert_eq!(got[0], ((c[0] as f64 * keep).round() as usize).min(c[0]));
        prop_assert_eq!(&got[1..], &c[1..]);
    }

    #[test]
    fn split_partitions_every_class(c in prop::collection::vec(2usize..50, 2..5), f in 0.05f64..0.5, seed in any::<u64>()) {
        let set = set_with(&c, 1);
        let (train, val) = train_val_split(&set, f, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(train.split, Split::Train);
        prop_assert_eq!(val.split, Split::Val);
        for k in 0..c.len() {
            let (t, v) = (train.class_counts()[k], val.class_counts()[k]);
            prop_assert_eq!(t + v, c[k]);
            prop_assert!(t >= 1 && v >= 1);
        }
    }

    #[test]
    fn augment_appends_valid_copies(c in prop::collection::vec(1usize..8, 2..4), budget in 0usize..20, seed in any::<u64>()) {
        let set = set_with(&c, 6);
        let out = augment(&set, &AugmentSpec::fashion(), budget, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(out.len(), set.len() + budget);
        prop_assert_eq!(&out.pixels[..set.pixels.len()], &set.pixels[..]);
        prop_assert!(out.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        out.validate().unwrap();
    }

    #[test]
    fn drawn_transforms_stay_in_range(seed in any::<u64>()) {
        let spec = AugmentSpec::medical(100, 30.0);
        let t = Transform::draw(&spec, &mut SeededRng::new(seed));
        prop_assert!(t.angle_deg.abs() <= 10.0);
        prop_assert!(t.shift_x.abs() <= spec.max_translation && t.shift_y.abs() <= spec.max_translation);
    }

    #[test]
    fn hematoxylin_channel_is_normalised(pix in prop::collection::vec(0.0f32..=1.0, 3..60)) {
        let n = pix.len() / 3;
        let h = color_deconvolution_raw(&pix[..n * 3], 1, n, 3).unwrap();
        prop_assert!(h.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        let max = h.pixels.iter().cloned().fold(0.0f32, f32::max);
        prop_assert!(max == 0.0 || (max - 1.0).abs() < 1e-6);
    }

    #[test]
    fn patches_balance_and_keep_distance(r in 60usize..240, c in 60usize..240, seed in any::<u64>()) {
        let img = Image::filled(300, 300, 0.5);
        let ex = extract_patches(&img, &Annotation::Points(vec![(r, c)]), &PatchSpec::new(80), &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(ex.count(POSITIVE), 1);
        prop_assert_eq!(ex.count(NEGATIVE), 1);
        let neg = ex.patches.iter().find(|p| p.label == NEGATIVE).unwrap().center;
        let d = ((neg.0 as f64 - r as f64).powi(2) + (neg.1 as f64 - c as f64).powi(2)).sqrt();
        prop_assert!(d > 80.0);
    }
}

#[test]
fn synthetic_hematoxylin_image_has_no_eosin() {
    // Pixels mixed from the hematoxylin vector only, at varying density.
    let h = he_stain_matrix()[0];
    let mut data = Vec::new();
    for k in 0..10 {
        let amount = 0.1 * k as f64;
        data.extend(h.iter().map(|v| 10f64.powf(-amount * v) as f32));
    }
    let out = color_deconvolution_raw(&data, 1, 10, 3).unwrap();
    for (k, v) in out.pixels.iter().enumerate() {
        // Proportional to the density, peak normalised to 1.
        assert!((v - k as f32 / 9.0).abs() < 1e-3, "{k}: {v}");
    }
}
