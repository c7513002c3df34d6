//! Grid execution with a resumable on-disk store, and per-cell aggregation.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use capsnet_core::models::Architecture;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetId, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, DatasetPair, RunOutputs, RunResult};
use crate::stats::{mean, std_dev, welch_t_test};
use crate::train::EpochRecord;

/// Outcome of one grid entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunRecord {
    Done(Box<RunResult>),
    Failed { run_id: String, config: ExperimentConfig, error: String },
}

impl RunRecord {
    pub fn config(&self) -> &ExperimentConfig {
        match self {
            RunRecord::Done(r) => &r.config,
            RunRecord::Failed { config, .. } => config,
        }
    }

    pub fn result(&self) -> Option<&RunResult> {
        match self {
            RunRecord::Done(r) => Some(r),
            RunRecord::Failed { .. } => None,
        }
    }
}

/// One JSON file per run under `<root>/runs`, checkpoints under
/// `<root>/checkpoints`. Files are written via rename so an interrupted
/// suite never leaves a half-written record.
#[derive(Clone, Debug)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["runs", "checkpoints"] {
            let d = root.join(sub);
            fs::create_dir_all(&d).map_err(|e| HarnessError::io(&d, e))?;
        }
        Ok(Self { root })
    }

    /// Opens an existing store without creating anything.
    pub fn existing(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        if !root.join("runs").is_dir() {
            return Err(HarnessError::Store(format!("{} holds no run records", root.display())));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record_path(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(format!("{run_id}.json"))
    }

    pub fn checkpoint_path(&self, run_id: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{run_id}.ckpt"))
    }

    /// Completed record for `cfg`, if stored with an identical configuration.
    pub fn get(&self, cfg: &ExperimentConfig) -> Result<Option<RunRecord>> {
        let path = self.record_path(&cfg.run_id());
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        let rec: RunRecord = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Store(format!("{}: {e}", path.display())))?;
        Ok((rec.config() == cfg).then_some(rec))
    }

    pub fn put(&self, rec: &RunRecord) -> Result<()> {
        let path = self.record_path(&rec.config().run_id());
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(rec).expect("records serialise");
        fs::write(&tmp, text).map_err(|e| HarnessError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| HarnessError::io(&path, e))
    }

    /// Every stored record, ordered by run id.
    pub fn all(&self) -> Result<Vec<RunRecord>> {
        let dir = self.root.join("runs");
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| HarnessError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| HarnessError::Store(format!("{}: {e}", p.display())))
            })
            .collect()
    }
}

/// Progress notifications from [`run_suite`].
pub trait SuiteObserver {
    fn run_started(&mut self, _index: usize, _total: usize, _cfg: &ExperimentConfig) {}
    fn epoch(&mut self, _cfg: &ExperimentConfig, _record: &EpochRecord) {}
    fn run_finished(&mut self, _index: usize, _record: &RunRecord, _reused: bool) {}
}

impl SuiteObserver for () {}

/// Executes `grid` in order, reusing stored results with identical
/// configurations. A failing run is recorded and the suite continues.
pub fn run_suite(
    grid: &[ExperimentConfig],
    data_root: &Path,
    store: &RunStore,
    observer: &mut dyn SuiteObserver,
) -> Result<Vec<RunRecord>> {
    let mut cache: HashMap<DatasetId, DatasetPair> = HashMap::new();
    let mut records = Vec::with_capacity(grid.len());
    for (i, cfg) in grid.iter().enumerate() {
        if let Some(rec) = store.get(cfg)? {
            if matches!(rec, RunRecord::Done(_)) {
                observer.run_finished(i, &rec, true);
                records.push(rec);
                continue;
            }
        }
        observer.run_started(i, grid.len(), cfg);
        let outcome = (|| -> Result<RunResult> {
            if !cache.contains_key(&cfg.dataset) {
                cache.insert(cfg.dataset, DatasetPair::load(data_root, cfg.dataset)?);
            }
            let outputs = RunOutputs {
                checkpoint: Some(store.checkpoint_path(&cfg.run_id())),
            };
            run_experiment(cfg, &cache[&cfg.dataset], &outputs, |e| observer.epoch(cfg, e))
        })();
        let rec = match outcome {
            Ok(r) => RunRecord::Done(Box::new(r)),
            Err(e) => RunRecord::Failed {
                run_id: cfg.run_id(),
                config: cfg.clone(),
                error: e.to_string(),
            },
        };
        store.put(&rec)?;
        observer.run_finished(i, &rec, false);
        records.push(rec);
    }
    Ok(records)
}

/// [`run_suite`] with up to `threads` runs in flight. Each run is a pure
/// function of its configuration, so the records equal the sequential ones;
/// only the progress lines on stderr interleave.
pub fn run_suite_parallel(
    grid: &[ExperimentConfig],
    data_root: &Path,
    store: &RunStore,
    threads: usize,
) -> Result<Vec<RunRecord>> {
    let mut data: HashMap<DatasetId, DatasetPair> = HashMap::new();
    let mut pending = Vec::new();
    let mut records: Vec<Option<RunRecord>> = vec![None; grid.len()];
    for (i, cfg) in grid.iter().enumerate() {
        match store.get(cfg)? {
            Some(rec @ RunRecord::Done(_)) => records[i] = Some(rec),
            _ => {
                if !data.contains_key(&cfg.dataset) {
                    data.insert(cfg.dataset, DatasetPair::load(data_root, cfg.dataset)?);
                }
                pending.push(i);
            }
        }
    }
    let next = AtomicUsize::new(0);
    let done = Mutex::new(records);
    let failure: Mutex<Option<HarnessError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(pending.len().max(1)) {
            scope.spawn(|| loop {
                let slot = next.fetch_add(1, Ordering::Relaxed);
                let Some(&i) = pending.get(slot) else { break };
                let cfg = &grid[i];
                eprintln!("[{}/{}] {} started", i + 1, grid.len(), cfg.run_id());
                let outputs = RunOutputs {
                    checkpoint: Some(store.checkpoint_path(&cfg.run_id())),
                };
                let rec = match run_experiment(cfg, &data[&cfg.dataset], &outputs, |_| {}) {
                    Ok(r) => {
                        eprintln!("[{}/{}] {} macro-F1 {:.4}", i + 1, grid.len(), cfg.run_id(), r.macro_f1());
                        RunRecord::Done(Box::new(r))
                    }
                    Err(e) => {
                        eprintln!("[{}/{}] {} FAILED: {e}", i + 1, grid.len(), cfg.run_id());
                        RunRecord::Failed {
                            run_id: cfg.run_id(),
                            config: cfg.clone(),
                            error: e.to_string(),
                        }
                    }
                };
                if let Err(e) = store.put(&rec) {
                    failure.lock().unwrap().get_or_insert(e);
                }
                done.lock().unwrap()[i] = Some(rec);
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(done.into_inner().unwrap().into_iter().map(|r| r.expect("every run recorded")).collect())
}

/// Mean and spread of one (dataset, condition, architecture) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dataset: DatasetId,
    pub condition: String,
    pub architecture: Architecture,
    pub seeds: Vec<u64>,
    pub f1: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// CapsNet against one baseline in one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: DatasetId,
    pub condition: String,
    pub baseline: Architecture,
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    /// Completed runs in grid order.
    pub runs: Vec<RunResult>,
    pub failures: Vec<(String, String)>,
    pub cells: Vec<CellSummary>,
    pub comparisons: Vec<Comparison>,
}

impl SuiteReport {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let runs: Vec<RunResult> = records.iter().filter_map(|r| r.result().cloned()).collect();
        let failures = records
            .iter()
            .filter_map(|r| match r {
                RunRecord::Failed { run_id, error, .. } => Some((run_id.clone(), error.clone())),
                _ => None,
            })
            .collect();

        // Cells in first-appearance order.
        let mut order: Vec<(DatasetId, String, Architecture)> = Vec::new();
        let mut groups: BTreeMap<(DatasetId, String, Architecture), Vec<&RunResult>> = BTreeMap::new();
        for r in &runs {
            let key = r.config.cell();
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(r);
        }
        let cells: Vec<CellSummary> = order
            .iter()
            .map(|key| {
                let members = &groups[key];
                let f1: Vec<f64> = members.iter().map(|r| r.macro_f1()).collect();
                CellSummary {
                    dataset: key.0,
                    condition: key.1.clone(),
                    architecture: key.2,
                    seeds: members.iter().map(|r| r.config.seed).collect(),
                    mean: mean(&f1),
                    std: std_dev(&f1),
                    f1,
                }
            })
            .collect();

        let mut comparisons = Vec::new();
        for c in cells.iter().filter(|c| c.architecture == Architecture::CapsNet) {
            for base in [Architecture::LeNet, Architecture::Baseline] {
                let Some(other) = cells
                    .iter()
                    .find(|o| o.dataset == c.dataset && o.condition == c.condition && o.architecture == base)
                else {
                    continue;
                };
                comparisons.push(Comparison {
                    dataset: c.dataset,
                    condition: c.condition.clone(),
                    baseline: base,
                    p_value: welch_t_test(&c.f1, &other.f1).ok(),
                });
            }
        }
        Self {
            runs,
            failures,
            cells,
            comparisons,
        }
    }

    pub fn cell(&self, dataset: DatasetId, condition: &str, arch: Architecture) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.dataset == dataset && c.condition == condition && c.architecture == arch)
    }
}
