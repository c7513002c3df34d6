//! Result files: per-run CSV, per-cell CSV and markdown tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use capsnet_core::models::Architecture;

use crate::config::DatasetId;
use crate::error::{HarnessError, Result};
use crate::suite::SuiteReport;

pub const RESULTS_HEADER: [&str; 9] = [
    "dataset",
    "arch",
    "condition",
    "seed",
    "macro_f1",
    "best_epoch",
    "iterations",
    "wall_seconds",
    "params",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Leave `wall_seconds` empty so reruns produce identical files.
    pub omit_timings: bool,
}

/// One row per completed run, in grid order.
pub fn results_csv(report: &SuiteReport, opts: ReportOptions) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER).expect("in-memory write");
    for r in &report.runs {
        let c = &r.config;
        let wall = if opts.omit_timings {
            String::new()
        } else {
            format!("{:.3}", r.wall_seconds)
        };
        w.write_record([
            c.dataset.name().to_string(),
            c.architecture.name().to_string(),
            c.condition.to_string(),
            c.seed.to_string(),
            format!("{:.6}", r.macro_f1()),
            r.history.best_epoch.to_string(),
            r.history.iterations.to_string(),
            wall,
            r.params.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Mean and standard deviation per cell, for plotting.
pub fn cells_csv(report: &SuiteReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "condition", "arch", "runs", "mean_f1", "std_f1"])
        .expect("in-memory write");
    for c in &report.cells {
        w.write_record([
            c.dataset.name().to_string(),
            c.condition.clone(),
            c.architecture.name().to_string(),
            c.f1.len().to_string(),
            format!("{:.6}", c.mean),
            format!("{:.6}", c.std),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Column groups of the three tables: (title, [(heading, condition)]).
const TABLES: [(&str, &[(&str, &str)]); 3] = [
    (
        "Mean F1 by amount of training data",
        &[("1%", "frac1"), ("5%", "frac5"), ("10%", "frac10"), ("50%", "frac50")],
    ),
    (
        "Mean F1 under class imbalance",
        &[("Balanced", "full"), ("Imbalanced 1", "imb1"), ("Imbalanced 2", "imb2")],
    ),
    ("Mean F1 with and without augmentation", &[("No", "aug_off"), ("Yes", "aug_on")]),
];

fn short(a: Architecture) -> &'static str {
    match a {
        Architecture::LeNet => "LeNet",
        Architecture::Baseline => "Base.",
        Architecture::CapsNet => "CapsNet",
    }
}

/// Markdown tables with datasets as rows and, per condition, one column
/// per architecture. The strictly best mean of each group is bold; ties
/// bold every tied entry. Missing cells print as `-`.
pub fn markdown(report: &SuiteReport) -> String {
    let mut out = String::new();
    for (title, groups) in TABLES {
        let present = DatasetId::ALL
            .iter()
            .any(|&d| groups.iter().any(|(_, c)| Architecture::ALL.iter().any(|&a| report.cell(d, c, a).is_some())));
        if !present {
            continue;
        }
        let _ = writeln!(out, "### {title}\n");
        let mut head = String::from("| |");
        let mut sub = String::from("| |");
        let mut rule = String::from("|---|");
        for (h, _) in groups {
            for a in Architecture::ALL {
                let _ = write!(head, " {h} |");
                let _ = write!(sub, " {} |", short(a));
                rule.push_str("---|");
            }
        }
        let _ = writeln!(out, "{head}\n{rule}\n{sub}");
        for d in DatasetId::ALL {
            let mut row = format!("| {} |", d.title());
            for (_, cond) in groups {
                let means: Vec<Option<f64>> =
                    Architecture::ALL.iter().map(|&a| report.cell(d, cond, a).map(|c| c.mean)).collect();
                let best = means.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
                for m in &means {
                    match m {
                        Some(v) if *v == best => {
                            let _ = write!(row, " **{v:.3}** |");
                        }
                        Some(v) => {
                            let _ = write!(row, " {v:.3} |");
                        }
                        None => row.push_str(" - |"),
                    }
                }
            }
            let _ = writeln!(out, "{row}");
        }
        out.push('\n');
    }
    if !report.comparisons.is_empty() {
        let _ = writeln!(out, "### CapsNet vs. baselines (Welch t-test p-values)\n");
        let _ = writeln!(out, "| Dataset | Condition | vs. | p |\n|---|---|---|---|");
        for c in &report.comparisons {
            let p = c.p_value.map_or("-".to_string(), |p| format!("{p:.4}"));
            let _ = writeln!(out, "| {} | {} | {} | {p} |", c.dataset.title(), c.condition, short(c.baseline));
        }
        out.push('\n');
    }
    if !report.failures.is_empty() {
        let _ = writeln!(out, "### Failed runs\n");
        for (id, e) in &report.failures {
            let _ = writeln!(out, "- `{id}`: {e}");
        }
    }
    out
}

/// Writes `results.csv`, `cells.csv` and `tables.md` into `dir`.
pub fn emit_report(report: &SuiteReport, dir: impl AsRef<Path>, opts: ReportOptions) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let files = [
        ("results.csv", results_csv(report, opts)),
        ("cells.csv", cells_csv(report)),
        ("tables.md", markdown(report).into_bytes()),
    ];
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Per-epoch losses of one run.
pub fn history_csv(history: &crate::train::History) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "iterations", "train_loss", "val_loss", "best"])
        .expect("in-memory write");
    for e in &history.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.iterations.to_string(),
            format!("{:.6}", e.train_loss),
            format!("{:.6}", e.val_loss),
            u8::from(e.epoch == history.best_epoch).to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}
