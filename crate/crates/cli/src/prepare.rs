//! `capsnet prepare`: turns raw downloads into the IDX layout the other
//! commands read, plus a manifest describing what was produced.
//!
//! Vision sets: `--source` holds the four standard IDX files.
//! TUPAC16: `--source` holds `images/<id>.png` and `annotations/<id>.csv`
//! (one `row,col` mitosis centre per line).
//! DIARETDB1: `--source` holds `images/<id>.png` and `masks/<id>.png`
//! (pooled lesion mask, non-zero where any lesion was marked).

use std::path::{Path, PathBuf};

use capsnet_core::rng::streams;
use capsnet_core::SeededRng;
use capsnet_data::clahe::{fundus_green, ClaheParams};
use capsnet_data::idx::{load_idx_named, standard_paths, write_idx};
use capsnet_data::manifest::Manifest;
use capsnet_data::patches::{extract_patches, patches_to_set, Annotation, Patch, PatchSpec};
use capsnet_data::pnm::{read_png_gray, read_png_rgb};
use capsnet_data::stain::color_deconvolution;
use capsnet_data::{LabeledImageSet, Split};
use capsnet_harness::config::DatasetId;
use clap::Args;
use serde_json::json;

use crate::{parse_dataset, runtime, usage, Outcome};

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    dataset: String,
    /// Directory with the raw downloads (layout depends on the dataset).
    #[arg(long)]
    source: PathBuf,
    /// Data root receiving `<dataset>/`.
    #[arg(long, env = "CAPSNET_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// Window side cut around each lesion (patch datasets only).
    #[arg(long)]
    patch_size: Option<usize>,
    /// Share of source images held out for testing (patch datasets only).
    #[arg(long, default_value_t = 0.15)]
    test_fraction: f64,
}

pub fn run(a: &PrepareArgs, seed: u64) -> Outcome {
    let id = parse_dataset(&a.dataset)?;
    if !a.source.is_dir() {
        return Err(usage(format!("{} is not a directory", a.source.display())));
    }
    let dest = a.data_dir.join(id.name());
    match id {
        DatasetId::Mnist | DatasetId::Fashion => vision(id, &a.source, &dest),
        DatasetId::Tupac16 | DatasetId::Diaretdb1 => medical(id, a, &dest, seed),
    }
}

fn vision(id: DatasetId, source: &Path, dest: &Path) -> Outcome {
    let mut sets = Vec::new();
    for split in [Split::Train, Split::Test] {
        let (img, lbl) = standard_paths(source, split);
        if !img.is_file() || !lbl.is_file() {
            return Err(usage(format!("{} and {} are required", img.display(), lbl.display())));
        }
        sets.push(load_idx_named(img, lbl, id.class_names(), split).map_err(runtime)?);
    }
    let same = source.canonicalize().ok() == dest.canonicalize().ok();
    std::fs::create_dir_all(dest).map_err(|e| runtime(format!("{}: {e}", dest.display())))?;
    let mut manifest = Manifest::new(id.name(), &source.display().to_string(), None, json!({"copied": !same}));
    for set in &sets {
        let (img, lbl) = standard_paths(dest, set.split);
        if !same {
            write_idx(set, &img, &lbl).map_err(runtime)?;
        }
        manifest.add_split(set, &file_name(&img), &file_name(&lbl));
    }
    manifest.write(dest).map_err(runtime)?;
    summarize(&manifest, dest);
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Image stems present in `<source>/images`, sorted.
fn stems(source: &Path) -> Result<Vec<String>, crate::Failure> {
    let dir = source.join("images");
    let entries = std::fs::read_dir(&dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let mut out: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    out.sort();
    if out.len() < 2 {
        return Err(usage(format!("{} needs at least two .png images", dir.display())));
    }
    Ok(out)
}

fn read_points(path: &Path) -> Result<Vec<(usize, usize)>, crate::Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let num = |k: usize| record.get(k).and_then(|v| v.parse::<f64>().ok());
        match (num(0), num(1)) {
            (Some(r), Some(c)) if r >= 0.0 && c >= 0.0 => points.push((r.round() as usize, c.round() as usize)),
            // A header row is tolerated.
            _ if line == 0 => {}
            _ => return Err(usage(format!("{}: line {} is not `row,col`", path.display(), line + 1))),
        }
    }
    Ok(points)
}

fn medical(id: DatasetId, a: &PrepareArgs, dest: &Path, seed: u64) -> Outcome {
    let patch = a.patch_size.or(id.patch_size()).expect("patch dataset");
    if patch == 0 {
        return Err(usage("--patch-size must be positive"));
    }
    if !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
        return Err(usage("--test-fraction must lie in (0, 1)"));
    }
    let stems = stems(&a.source)?;
    // Validate every input before writing anything.
    let annotation_path = |stem: &str| match id {
        DatasetId::Tupac16 => a.source.join("annotations").join(format!("{stem}.csv")),
        _ => a.source.join("masks").join(format!("{stem}.png")),
    };
    for s in &stems {
        let p = annotation_path(s);
        if !p.is_file() {
            return Err(usage(format!("{} is missing", p.display())));
        }
    }

    // Split by source image so no tissue appears on both sides.
    let mut order: Vec<usize> = (0..stems.len()).collect();
    SeededRng::new(seed).fork(streams::SPLIT).shuffle(&mut order);
    let n_test = ((stems.len() as f64 * a.test_fraction).round() as usize).clamp(1, stems.len() - 1);
    let mut is_test = vec![false; stems.len()];
    order[..n_test].iter().for_each(|&i| is_test[i] = true);

    let spec = PatchSpec::new(patch);
    let clahe = ClaheParams::default();
    let (mut train, mut test): (Vec<Patch>, Vec<Patch>) = (Vec::new(), Vec::new());
    let mut warnings = Vec::new();
    // One stream, consumed in sorted-image order.
    let mut rng = SeededRng::new(seed).fork(streams::PATCHES);
    for (i, stem) in stems.iter().enumerate() {
        let image_path = a.source.join("images").join(format!("{stem}.png"));
        let rgb = read_png_rgb(&image_path).map_err(runtime)?;
        let (gray, annotation) = match id {
            DatasetId::Tupac16 => (
                color_deconvolution(&rgb).map_err(runtime)?,
                Annotation::Points(read_points(&annotation_path(stem))?),
            ),
            _ => (
                fundus_green(&rgb, &clahe).map_err(runtime)?,
                Annotation::Mask(read_png_gray(annotation_path(stem)).map_err(runtime)?),
            ),
        };
        match extract_patches(&gray, &annotation, &spec, &mut rng) {
            Ok(ex) => {
                warnings.extend(ex.warnings.into_iter().map(|w| format!("{stem}: {w}")));
                if is_test[i] { &mut test } else { &mut train }.extend(ex.patches);
            }
            Err(e) => warnings.push(format!("{stem}: skipped ({e})")),
        }
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let names = id.class_names();
    let names = [names[0].as_str(), names[1].as_str()];
    let build = |patches: &[Patch], split| -> Result<LabeledImageSet, crate::Failure> {
        if patches.is_empty() {
            return Err(runtime(format!("no {split:?} patches could be extracted")));
        }
        patches_to_set(patches, names, split).map_err(runtime)
    };
    let sets = [build(&train, Split::Train)?, build(&test, Split::Test)?];

    std::fs::create_dir_all(dest).map_err(|e| runtime(format!("{}: {e}", dest.display())))?;
    let preprocessing = match id {
        DatasetId::Tupac16 => "hematoxylin channel (colour deconvolution)",
        _ => "CLAHE on Lab lightness, green channel",
    };
    let mut manifest = Manifest::new(
        id.name(),
        &a.source.display().to_string(),
        Some(seed),
        json!({
            "patch_size": patch,
            "output_size": spec.output_size,
            "preprocessing": preprocessing,
            "test_fraction": a.test_fraction,
            "test_images": stems.iter().zip(&is_test).filter(|(_, &t)| t).map(|(s, _)| s).collect::<Vec<_>>(),
        }),
    );
    for set in &sets {
        let (img, lbl) = standard_paths(dest, set.split);
        write_idx(set, &img, &lbl).map_err(runtime)?;
        manifest.add_split(set, &file_name(&img), &file_name(&lbl));
    }
    manifest.warnings.extend(warnings);
    manifest.write(dest).map_err(runtime)?;
    summarize(&manifest, dest);
    Ok(())
}

fn summarize(m: &Manifest, dest: &Path) {
    for s in &m.splits {
        println!("{} {}: {} images {:?}", m.dataset, s.split, s.count, s.class_counts);
    }
    println!("wrote {}", dest.display());
}
