//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines are always printed. A
//! positional argument filters criteria by name (`cargo test --test
//! acceptance -- c3`). Criteria 4-6 score stored suite results (see
//! `scripts/run-acceptance-suites.sh`); they are reported but only decide the
//! exit status when `CAPSNET_ACCEPTANCE_STRICT=1`, because producing them
//! takes hours of training.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use capsnet_core::capsule::{dynamic_routing, CapsLossConfig, SQUASH_EPS};
use capsnet_core::gradcheck::layer_suite;
use capsnet_core::models::{Architecture, Model, ModelConfig, Pass};
use capsnet_core::nn::{one_hot, AdamConfig, AdamState};
use capsnet_core::{SeededRng, Tape, Tensor};
use capsnet_data::clahe::{clahe_u8, ClaheParams};
use capsnet_data::idx::{load_idx, standard_paths};
use capsnet_data::patches::{extract_patches, Annotation, PatchSpec, NEGATIVE, POSITIVE};
use capsnet_data::pnm::read_pgm;
use capsnet_data::sampling::stratified_subsample;
use capsnet_data::stain::{color_deconvolution_raw, he_stain_matrix, invert3, stain_concentrations};
use capsnet_data::synthetic::{bars, write_bars_dataset};
use capsnet_data::{Image, Split};
use capsnet_harness::config::{iteration_budget, DatasetId, ExperimentConfig, Condition};
use capsnet_harness::grid::default_grid;

enum Status {
    Pass,
    Fail,
    /// Inputs are missing; nothing was measured.
    NotRun,
}

struct Verdict {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        status: if ok { Status::Pass } else { Status::Fail },
        detail: detail.into(),
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// 1 -------------------------------------------------------------------------

fn c1_parameter_counts() -> Verdict {
    let expected = [
        (Architecture::LeNet, 61_706),
        (Architecture::Baseline, 35_445_522),
        (Architecture::CapsNet, 8_215_568),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (arch, want) in expected {
        let m = Model::<f32>::build(ModelConfig::new(arch, 10), &mut SeededRng::new(0)).unwrap();
        let got = m.count_params();
        ok &= got == want;
        parts.push(format!("{arch} {got} (want {want})"));
    }
    verdict(ok, parts.join(", "))
}

// 2 -------------------------------------------------------------------------

fn c2_gradients() -> Verdict {
    const TRIALS: usize = 20;
    let reports = match layer_suite(TRIALS, 2024) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("layer suite failed: {e}")),
    };
    let worst = reports.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let failing: Vec<_> = reports.iter().filter(|r| !(r.max_rel_error < 1e-4)).map(|r| r.layer.clone()).collect();
    verdict(
        failing.is_empty() && reports.iter().all(|r| r.trials >= TRIALS),
        format!(
            "{} layers x {TRIALS} trials (f64), worst {} at {:.2e}{}",
            reports.len(),
            worst.layer,
            worst.max_rel_error,
            if failing.is_empty() { String::new() } else { format!("; failing: {failing:?}") }
        ),
    )
}

// 3 -------------------------------------------------------------------------

/// The recurrence written out on plain arrays: `u[i][j]` is the vote of
/// input capsule i for output capsule j.
fn scripted_routing(u: &[[[f64; 2]; 2]; 2], iterations: usize) -> (Vec<[[f64; 2]; 2]>, [[f64; 2]; 2]) {
    let squash = |s: [f64; 2]| {
        let n2 = s[0] * s[0] + s[1] * s[1];
        let n = n2.sqrt();
        let f = n2 / ((1.0 + n2) * (n + SQUASH_EPS));
        [s[0] * f, s[1] * f]
    };
    let mut b = [[0.0f64; 2]; 2];
    let mut couplings = Vec::new();
    let mut v = [[0.0; 2]; 2];
    for it in 0..iterations {
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            let z = b[i][0].exp() + b[i][1].exp();
            for j in 0..2 {
                c[i][j] = b[i][j].exp() / z;
            }
        }
        for j in 0..2 {
            let mut s = [0.0; 2];
            for i in 0..2 {
                for d in 0..2 {
                    s[d] += c[i][j] * u[i][j][d];
                }
            }
            v[j] = squash(s);
        }
        couplings.push(c);
        if it + 1 < iterations {
            for i in 0..2 {
                for j in 0..2 {
                    b[i][j] += u[i][j][0] * v[j][0] + u[i][j][1] * v[j][1];
                }
            }
        }
    }
    (couplings, v)
}

fn c3_routing_oracle() -> Verdict {
    let u = [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [1.0, 0.0]]];
    let mut worst: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for iterations in 1..=3 {
        let mut tape = Tape::<f64>::new();
        let flat: Vec<f64> = u.iter().flatten().flatten().copied().collect();
        let votes = tape.constant(Tensor::from_f64(&[1, 2, 2, 2], &flat).unwrap());
        let r = dynamic_routing(&mut tape, votes, iterations).unwrap();
        let (want_c, want_v) = scripted_routing(&u, iterations);
        for (got, want) in r.couplings.iter().zip(&want_c) {
            let want: Vec<f64> = want.iter().flatten().copied().collect();
            for (a, b) in got.data().iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
            for row in got.data().chunks(2) {
                worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        let want_v: Vec<f64> = want_v.iter().flatten().copied().collect();
        for (a, b) in tape.value(r.poses).data().iter().zip(&want_v) {
            worst = worst.max((a - b).abs());
        }
    }
    // Independent NumPy evaluation (plain squash, no epsilon), 3 iterations.
    let numpy_v = [0.6303637875717281, 0.0, 0.1372686673175646, 0.1372686673175646];
    let (_, v3) = scripted_routing(&u, 3);
    let numpy_gap = v3.iter().flatten().zip(numpy_v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    verdict(
        worst < 1e-10 && worst_sum < 1e-6 && numpy_gap < 1e-8,
        format!(
            "max |diff| {worst:.1e} over 1-3 iterations, coupling rows sum to 1 within {worst_sum:.1e}, NumPy poses within {numpy_gap:.1e}"
        ),
    )
}

// 4-6 -----------------------------------------------------------------------

struct Row {
    arch: String,
    seed: u64,
    f1: f64,
}

fn stored(name: &str) -> Option<Vec<Row>> {
    let path = root().join("results").join(format!("{name}.csv"));
    let mut reader = csv::Reader::from_path(path).ok()?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.ok()?;
        rows.push(Row {
            arch: rec.get(1)?.to_string(),
            seed: rec.get(3)?.parse().ok()?,
            f1: rec.get(4)?.parse().ok()?,
        });
    }
    Some(rows)
}

fn f1_of(rows: &[Row], arch: &str) -> Vec<f64> {
    rows.iter().filter(|r| r.arch == arch).map(|r| r.f1).collect()
}

fn not_run(name: &str) -> Verdict {
    Verdict {
        status: Status::NotRun,
        detail: format!("results/{name}.csv missing; run scripts/run-acceptance-suites.sh"),
    }
}

fn c4_mnist_1pct() -> Verdict {
    let Some(rows) = stored("mnist_1pct") else { return not_run("mnist_1pct") };
    let (c, l, b) = (f1_of(&rows, "capsnet"), f1_of(&rows, "lenet"), f1_of(&rows, "baseline"));
    let (Some(&c), Some(&l), Some(&b)) = (c.first(), l.first(), b.first()) else {
        return verdict(false, "stored results lack an architecture");
    };
    verdict(
        c >= 0.90 && c >= l && c >= b && (c - 0.943).abs() <= 0.05,
        format!("macro-F1 capsnet {c:.4}, lenet {l:.4}, baseline {b:.4} (reported 0.943 / 0.916 / 0.909)"),
    )
}

fn c5_fashion_5pct() -> Verdict {
    let Some(rows) = stored("fashion_5pct") else { return not_run("fashion_5pct") };
    let Some(&c) = f1_of(&rows, "capsnet").first() else {
        return verdict(false, "no capsnet run stored");
    };
    verdict(
        c >= 0.81 && (c - 0.846).abs() <= 0.04,
        format!("capsnet macro-F1 {c:.4} (reported 0.846, need >= 0.81)"),
    )
}

fn c6_imbalance_ordering() -> Verdict {
    let Some(rows) = stored("mnist_imbalance_5pct") else { return not_run("mnist_imbalance_5pct") };
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let seeds = |arch: &str| {
        let mut s: Vec<u64> = rows.iter().filter(|r| r.arch == arch).map(|r| r.seed).collect();
        s.sort_unstable();
        s
    };
    let complete = ["capsnet", "lenet", "baseline"].iter().all(|a| seeds(a) == [0, 1, 2, 3]);
    let (c, l, b) = (
        mean(&f1_of(&rows, "capsnet")),
        mean(&f1_of(&rows, "lenet")),
        mean(&f1_of(&rows, "baseline")),
    );
    let show = |m: Option<f64>| m.map_or("n/a".to_string(), |m| format!("{m:.4}"));
    verdict(
        complete && c >= l && c >= b,
        format!(
            "mean macro-F1 over seeds capsnet {}, lenet {}, baseline {}{}",
            show(c),
            show(l),
            show(b),
            if complete { "" } else { " (incomplete: need seeds 0-3 for every architecture)" }
        ),
    )
}

// 7 -------------------------------------------------------------------------

fn c7_data_fixtures() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();

    // Colour deconvolution: a pixel built from the hematoxylin vector alone
    // inverts to that amount with no eosin.
    let m = he_stain_matrix();
    let inv = invert3(&m).unwrap();
    let mut stain_gap: f64 = 0.0;
    for k in 1..=10 {
        let amount = 0.1 * k as f64;
        let rgb = m[0].map(|v| 10f64.powf(-amount * v));
        let c = stain_concentrations(rgb, &inv);
        stain_gap = stain_gap.max((c[0] - amount).abs()).max(c[1].abs());
    }
    let white = color_deconvolution_raw(&[1.0; 12], 2, 2, 3).unwrap();
    if stain_gap > 1e-3 || white.pixels.iter().any(|&v| v != 0.0) {
        failures.push(format!("stain deconvolution off by {stain_gap:.1e}"));
    }

    // CLAHE against frozen OpenCV output.
    let fixture = |name: &str| -> Vec<u8> {
        let p = root().join("crates/data/tests/fixtures").join(name);
        read_pgm(p).unwrap().pixels.iter().map(|v| (v * 255.0).round() as u8).collect()
    };
    let src: Vec<u8> = (0..64 * 64)
        .map(|i| {
            let (y, x) = (i / 64, i % 64);
            (if x < 32 { x * 8 } else { y * 4 }) as u8
        })
        .collect();
    let out = clahe_u8(&src, 64, 64, &ClaheParams::default()).unwrap();
    let clahe_gap = out
        .iter()
        .zip(fixture("clahe_two_gradient_cv2.pgm"))
        .map(|(&a, b)| (a as i32 - b as i32).abs())
        .max()
        .unwrap();
    if clahe_gap > 1 {
        failures.push(format!("CLAHE differs from OpenCV by {clahe_gap}/255"));
    }

    // Patch geometry: 100 px windows in a 300x300 image.
    let img = Image::filled(300, 300, 0.5);
    let ann = Annotation::Points(vec![(150, 150), (10, 10), (120, 200)]);
    let ex = extract_patches(&img, &ann, &PatchSpec::new(100), &mut SeededRng::new(0)).unwrap();
    let positives: Vec<_> = ex.patches.iter().filter(|p| p.label == POSITIVE).map(|p| p.center).collect();
    let far = ex.patches.iter().filter(|p| p.label == NEGATIVE).all(|n| {
        positives
            .iter()
            .all(|p| ((n.center.0 as f64 - p.0 as f64).powi(2) + (n.center.1 as f64 - p.1 as f64).powi(2)).sqrt() > 100.0)
    });
    let sized = ex.patches.iter().all(|p| (p.image.height, p.image.width) == (28, 28));
    if positives.len() != 2 || ex.skipped_border != 1 || !far || !sized {
        failures.push("patch geometry".to_string());
    }

    // Balanced sampling: negatives match positives; subsampling keeps class shares.
    let balanced = ex.count(NEGATIVE) == ex.count(POSITIVE);
    let set = bars(4, 50, 8, Split::Train, &mut SeededRng::new(1));
    let sub = stratified_subsample(&set, 0.1, &mut SeededRng::new(2)).unwrap();
    if !balanced || sub.class_counts() != vec![5; 4] {
        failures.push("balanced sampling".to_string());
    }

    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(60);
    verdict(
        ok,
        format!(
            "stain within {stain_gap:.1e}, CLAHE within {clahe_gap}/255 of OpenCV, patches/sampling invariants {} in {:.2}s",
            if failures.is_empty() { "hold".to_string() } else { format!("FAIL {failures:?}") },
            elapsed.as_secs_f64()
        ),
    )
}

// 8 -------------------------------------------------------------------------

fn overfit_batch() -> (Tensor<f32>, Vec<usize>, &'static str) {
    let dir = root().join("data/mnist");
    let (img, lbl) = standard_paths(&dir, Split::Train);
    if let Ok(set) = load_idx(&img, &lbl, 10, Split::Train) {
        let idx: Vec<usize> = (0..32).collect();
        return (set.batch_tensor(&idx), set.labels[..32].to_vec(), "first 32 MNIST training images");
    }
    let set = bars(10, 4, 28, Split::Train, &mut SeededRng::new(3));
    let idx: Vec<usize> = (0..32).collect();
    (set.batch_tensor(&idx), set.labels[..32].to_vec(), "32 synthetic images (MNIST not present)")
}

fn c8_overfit() -> Verdict {
    const STEPS: usize = 300;
    const TARGET: f64 = 0.02;
    const BUDGET: Duration = Duration::from_secs(15 * 60);
    let total = Instant::now();
    let (x, labels, source) = overfit_batch();
    let mut ok = true;
    let mut parts = Vec::new();
    for arch in [Architecture::LeNet, Architecture::CapsNet, Architecture::Baseline] {
        let start = Instant::now();
        let mut state = fresh(arch);
        let mut dropout = SeededRng::new(0).fork(3);
        let mut last = f64::INFINITY;
        let mut reached = None;
        for step in 1..=STEPS {
            last = adam_step(&mut state, &x, &labels, &mut dropout);
            if last < TARGET {
                reached = Some(step);
                break;
            }
        }
        ok &= reached.is_some();
        parts.push(match reached {
            Some(s) => format!("{arch} loss {last:.4} at step {s} ({:.0}s)", start.elapsed().as_secs_f64()),
            None => format!("{arch} NOT reached: loss {last:.4} after {STEPS} steps"),
        });
    }

    // Memorise one image, then reconstruct it with the decoder masked by the
    // longest capsule, as at inference.
    let start = Instant::now();
    let mut shape = x.shape().to_vec();
    shape[0] = 1;
    let x1 = Tensor::from_vec(&shape, x.data()[..x.len() / x.shape()[0]].to_vec()).unwrap();
    let mut state = fresh(Architecture::CapsNet);
    let mut dropout = SeededRng::new(0).fork(3);
    let mut mse = f64::INFINITY;
    let mut reached = None;
    for step in 1..=STEPS {
        adam_step(&mut state, &x1, &labels[..1], &mut dropout);
        if step % 10 == 0 {
            let (_, recon) = state.0.predict_with_reconstruction(&x1).unwrap();
            let recon = recon.unwrap();
            mse = recon.data().iter().zip(x1.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
                / x1.len() as f64;
            if mse < TARGET {
                reached = Some(step);
                break;
            }
        }
    }
    ok &= reached.is_some();
    parts.push(match reached {
        Some(s) => format!("single-image recon MSE {mse:.4} at step {s} ({:.0}s)", start.elapsed().as_secs_f64()),
        None => format!("single-image recon NOT reached: MSE {mse:.4} after {STEPS} steps"),
    });
    let elapsed = total.elapsed();
    ok &= elapsed < BUDGET;
    let cpu = cpu_seconds().map(|c| format!(", {c:.0}s CPU")).unwrap_or_default();
    parts.push(format!("total {:.0}s wall{cpu} (limit {}s wall)", elapsed.as_secs_f64(), BUDGET.as_secs()));
    verdict(ok, format!("{source}: {}", parts.join("; ")))
}

// CPU time of this process; tells a slow machine from a busy one.
fn cpu_seconds() -> Option<f64> {
    let s = std::fs::read_to_string("/proc/self/schedstat").ok()?;
    Some(s.split_whitespace().next()?.parse::<f64>().ok()? * 1e-9)
}

fn fresh(arch: Architecture) -> (Model<f32>, AdamState<f32>) {
    let model = Model::<f32>::build(ModelConfig::new(arch, 10), &mut SeededRng::new(0).fork(1)).unwrap();
    let adam = AdamState::new(AdamConfig::with_learning_rate(1e-3), &model.values());
    (model, adam)
}

/// One Adam step on the training loss; returns the loss before the step.
fn adam_step(state: &mut (Model<f32>, AdamState<f32>), x: &Tensor<f32>, labels: &[usize], rng: &mut SeededRng) -> f64 {
    let (model, adam) = state;
    let targets = one_hot::<f32>(labels, 10).unwrap();
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let tv = tape.constant(targets);
    let out = model.forward(&mut tape, &vars, xv, Pass::Train { rng, labels }).unwrap();
    let terms = model.loss(&mut tape, &out, xv, tv, &CapsLossConfig::vision()).unwrap();
    let loss = tape.value(terms.total).item().unwrap() as f64;
    let grads = tape.gradients(terms.total, &vars).unwrap();
    adam.step_refs(model.values_mut(), &grads).unwrap();
    loss
}

// 9 -------------------------------------------------------------------------

const MINI_GRID: &str = r#"
[defaults]
iteration_cap = 4
batch_size = 16
width = "reduced"

[[block]]
datasets = ["mnist"]
architectures = ["capsnet", "lenet", "baseline"]
conditions = ["full", "imb1"]
seeds = [0, 1]
"#;

fn c9_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_bars_dataset(data.join("mnist"), 10, 12, 3, 11).unwrap();
    let grid = tmp.path().join("mini.grid");
    std::fs::write(&grid, MINI_GRID).unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("out{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_capsnet"))
            .args(["suite", "--deterministic", "--seed", "0", "--grid"])
            .arg(&grid)
            .arg("--data-dir")
            .arg(&data)
            .arg("--out-dir")
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return verdict(false, format!("suite failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        outputs.push(out.join("report"));
    }
    let mut same = true;
    let mut rows = 0;
    for name in ["results.csv", "cells.csv", "tables.md"] {
        let a = std::fs::read(outputs[0].join(name)).unwrap();
        let b = std::fs::read(outputs[1].join(name)).unwrap();
        same &= a == b;
        if name == "results.csv" {
            rows = a.iter().filter(|&&c| c == b'\n').count() - 1;
        }
    }
    verdict(
        same && rows == 12,
        format!("{rows}-run mini-grid executed twice: reports {}", if same { "byte-identical" } else { "DIFFER" }),
    )
}

// 10 ------------------------------------------------------------------------

fn c10_protocol_arithmetic() -> Verdict {
    let runs = default_grid().expand(&Default::default(), None).unwrap().len();
    let budget = iteration_budget(60_000, 128, 50);
    let cfg = ExperimentConfig::new(DatasetId::Mnist, Architecture::CapsNet, Condition::Fraction(0.01), 0);
    let cell_budget = cfg.iteration_budget(60_000);
    verdict(
        runs == 432 && budget == 23_450 && cell_budget == 23_450,
        format!("default grid {runs} runs (3x9x4x4 = 432); MNIST budget {budget}, frac1 cell {cell_budget} (want 23450)"),
    )
}

type Criterion = (&'static str, &'static str, fn() -> Verdict, bool);

// A number or `cN` picks a criterion by id; anything else matches the name.
fn selects(filter: &str, id: &str, name: &str) -> bool {
    if filter == id || filter == &id[1..] {
        return true;
    }
    filter.parse::<u32>().is_err() && !filter.starts_with('c') && name.contains(filter)
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let strict = std::env::var("CAPSNET_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    // (id, description, check, decided by stored long runs)
    let criteria: [Criterion; 10] = [
        ("c1", "parameter counts", c1_parameter_counts, false),
        ("c2", "layer gradients", c2_gradients, false),
        ("c3", "routing oracle", c3_routing_oracle, false),
        ("c4", "MNIST 1% cell", c4_mnist_1pct, true),
        ("c5", "Fashion-MNIST 5% capsnet", c5_fashion_5pct, true),
        ("c6", "imbalance ordering", c6_imbalance_ordering, true),
        ("c7", "data fixture suite", c7_data_fixtures, false),
        ("c8", "overfit sanity", c8_overfit, false),
        ("c9", "suite determinism", c9_determinism, false),
        ("c10", "protocol arithmetic", c10_protocol_arithmetic, false),
    ];
    let mut failed = 0;
    for (id, name, check, slow) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| selects(f, id, name)) {
            continue;
        }
        let v = check();
        let label = match v.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotRun => "NOT RUN",
        };
        if matches!(v.status, Status::Fail) && (!slow || strict) {
            failed += 1;
        }
        println!("criterion {:>2} {name:<26} {label}: {}", &id[1..], v.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
