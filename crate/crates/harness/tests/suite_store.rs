//! End-to-end suite execution on a tiny synthetic data root.

use std::path::Path;

use capsnet_core::models::{Architecture, Model, ModelConfig, Width};
use capsnet_core::SeededRng;
use capsnet_data::synthetic::{bars, write_bars_dataset};
use capsnet_data::Split;
use capsnet_harness::config::{Condition, DatasetId, ExperimentConfig};
use capsnet_harness::grid::GridFile;
use capsnet_harness::reconstruct::reconstruction_grid;
use capsnet_harness::report::{emit_report, results_csv, ReportOptions, RESULTS_HEADER};
use capsnet_harness::suite::{run_suite, RunRecord, RunStore, SuiteObserver, SuiteReport};

const GRID: &str = r#"
[defaults]
iteration_cap = 6
width = "reduced"
batch_size = 16

[[block]]
datasets = ["mnist"]
architectures = ["lenet", "capsnet"]
conditions = ["full"]
seeds = [0, 1]
"#;

fn data_root(dir: &Path) {
    write_bars_dataset(dir.join("mnist"), 10, 12, 3, 7).unwrap();
}

#[derive(Default)]
struct Counter {
    fresh: usize,
    reused: usize,
    epochs: usize,
}

impl SuiteObserver for Counter {
    fn epoch(&mut self, _: &ExperimentConfig, _: &capsnet_harness::train::EpochRecord) {
        self.epochs += 1;
    }
    fn run_finished(&mut self, _: usize, _: &RunRecord, reused: bool) {
        if reused {
            self.reused += 1;
        } else {
            self.fresh += 1;
        }
    }
}

#[test]
fn runs_are_stored_reused_and_reported() {
    let tmp = tempfile::tempdir().unwrap();
    data_root(tmp.path());
    let grid = GridFile::parse(GRID).unwrap().expand(&Default::default(), None).unwrap();
    assert_eq!(grid.len(), 4);
    let store = RunStore::open(tmp.path().join("store")).unwrap();

    let mut first = Counter::default();
    let records = run_suite(&grid, tmp.path(), &store, &mut first).unwrap();
    assert_eq!((first.fresh, first.reused), (4, 0));
    assert!(first.epochs > 0);
    for rec in &records {
        let r = rec.result().expect("run succeeded");
        assert!(r.history.iterations <= 6);
        assert!((0.0..=1.0).contains(&r.macro_f1()));
        assert!(store.checkpoint_path(&r.run_id).is_file());
    }

    let mut second = Counter::default();
    let again = run_suite(&grid, tmp.path(), &store, &mut second).unwrap();
    assert_eq!((second.fresh, second.reused), (0, 4));
    assert_eq!(again, records);

    let report = SuiteReport::from_records(&store.all().unwrap());
    assert_eq!(report.runs.len(), 4);
    assert_eq!(report.cells.len(), 2);
    let csv = String::from_utf8(results_csv(&report, ReportOptions { omit_timings: true })).unwrap();
    assert_eq!(csv.lines().next().unwrap(), RESULTS_HEADER.join(","));
    assert_eq!(csv.lines().count(), 5);
    let files = emit_report(&report, tmp.path().join("report"), ReportOptions::default()).unwrap();
    assert_eq!(files.len(), 3);
    let md = std::fs::read_to_string(&files[2]).unwrap();
    assert!(md.contains("MNIST"), "{md}");
}

#[test]
fn failing_run_is_recorded_and_suite_continues() {
    let tmp = tempfile::tempdir().unwrap();
    data_root(tmp.path());
    let mut missing = ExperimentConfig::new(DatasetId::Fashion, Architecture::LeNet, Condition::Fraction(1.0), 0);
    let mut ok = ExperimentConfig::new(DatasetId::Mnist, Architecture::LeNet, Condition::Fraction(1.0), 0);
    for c in [&mut missing, &mut ok] {
        c.iteration_cap = Some(2);
        c.width = Width::Reduced;
    }
    let store = RunStore::open(tmp.path().join("store")).unwrap();
    let records = run_suite(&[missing, ok], tmp.path(), &store, &mut ()).unwrap();
    assert!(matches!(&records[0], RunRecord::Failed { error, .. } if error.contains("not found")));
    assert!(records[1].result().is_some());
    let report = SuiteReport::from_records(&records);
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.runs.len(), 1);
}

#[test]
fn reconstruction_grid_layout() {
    let set = bars(10, 1, 28, Split::Test, &mut SeededRng::new(0));
    let mut rng = SeededRng::new(1);
    let caps = Model::<f32>::build(ModelConfig::new(Architecture::CapsNet, 10).reduced(), &mut rng).unwrap();
    let grid = reconstruction_grid(&caps, &set, 4).unwrap();
    assert_eq!((grid.height, grid.width), (56, 112));
    // Top row is the input itself.
    assert_eq!(grid.at(3, 28 + 5), set.image(1)[3 * 28 + 5]);
    assert!(grid.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(reconstruction_grid(&caps, &set, 11).is_err());

    let lenet = Model::<f32>::build(ModelConfig::new(Architecture::LeNet, 10), &mut rng).unwrap();
    assert!(reconstruction_grid(&lenet, &set, 2).is_err());
}
