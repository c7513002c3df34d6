use std::path::PathBuf;

use capsnet_data::idx::{load_idx, standard_paths, write_idx, IMAGES_MAGIC};
use capsnet_data::{DataError, LabeledImageSet, Split};

fn toy() -> LabeledImageSet {
    let pixels = (0..3 * 4 * 5).map(|i| (i * 4 % 256) as f32 / 255.0).collect();
    LabeledImageSet::numbered(4, 5, pixels, vec![2, 0, 1], 3, Split::Train).unwrap()
}

#[test]
fn write_then_read_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = standard_paths(dir.path(), Split::Train);
    let set = toy();
    write_idx(&set, &img, &lbl).unwrap();
    let back = load_idx(&img, &lbl, 3, Split::Train).unwrap();
    assert_eq!(back, set);
    assert!(img.ends_with("train-images-idx3-ubyte"));
    assert_eq!(standard_paths("d", Split::Test).1, PathBuf::from("d/t10k-labels-idx1-ubyte"));
}

#[test]
fn bad_magic_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = standard_paths(dir.path(), Split::Train);
    write_idx(&toy(), &img, &lbl).unwrap();
    // Swap the files: the label file has the wrong magic for images.
    let err = load_idx(&lbl, &img, 3, Split::Train).unwrap_err();
    match err {
        DataError::BadMagic { path, expected, .. } => {
            assert_eq!(path, lbl);
            assert_eq!(expected, IMAGES_MAGIC);
        }
        other => panic!("{other}"),
    }
}

#[test]
fn truncated_file() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = standard_paths(dir.path(), Split::Train);
    write_idx(&toy(), &img, &lbl).unwrap();
    let bytes = std::fs::read(&img).unwrap();
    std::fs::write(&img, &bytes[..bytes.len() - 7]).unwrap();
    let err = load_idx(&img, &lbl, 3, Split::Train).unwrap_err();
    assert!(matches!(err, DataError::Truncated { .. }), "{err}");
}

#[test]
fn count_mismatch_and_label_range() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lbl) = standard_paths(dir.path(), Split::Train);
    write_idx(&toy(), &img, &lbl).unwrap();
    let mut labels = std::fs::read(&lbl).unwrap();
    labels[7] = 2; // header count
    labels.pop();
    std::fs::write(&lbl, &labels).unwrap();
    let err = load_idx(&img, &lbl, 3, Split::Train).unwrap_err();
    assert!(matches!(err, DataError::CountMismatch { images: 3, labels: 2 }), "{err}");

    write_idx(&toy(), &img, &lbl).unwrap();
    let err = load_idx(&img, &lbl, 2, Split::Train).unwrap_err();
    assert!(matches!(err, DataError::LabelOutOfRange { index: 0, label: 2, .. }), "{err}");
}

#[test]
fn missing_file_is_io_error() {
    let err = load_idx("/nonexistent/a", "/nonexistent/b", 10, Split::Test).unwrap_err();
    assert!(matches!(err, DataError::Io { .. }));
}

/// Uses the real downloads when present (scripts/fetch-vision-data.sh).
#[test]
fn standard_vision_sets_have_canonical_sizes() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    for name in ["mnist", "fashion"] {
        let dir = root.join(name);
        let (img, lbl) = standard_paths(&dir, Split::Train);
        if !img.exists() {
            eprintln!("skipping {name}: {} not present", img.display());
            continue;
        }
        let train = load_idx(&img, &lbl, 10, Split::Train).unwrap();
        let (img, lbl) = standard_paths(&dir, Split::Test);
        let test = load_idx(&img, &lbl, 10, Split::Test).unwrap();
        assert_eq!((train.len(), test.len()), (60_000, 10_000), "{name}");
        assert_eq!((train.height, train.width), (28, 28));
        assert!(train.class_counts().iter().all(|&c| c > 5000));
    }
}
