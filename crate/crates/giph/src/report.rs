//! Aggregation of result CSVs into summary tables and plot data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{ensure, Context};
use serde::{Deserialize, Serialize};

use crate::experiment::{read_csv, write_csv, CurveRow, ResultRow};
use crate::format::{read_json, write_json};

/// Mean and population standard deviation; `(NaN, NaN)` when empty.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `"lo-hi"` label of the depth bucket holding `depth` for buckets of `width`
/// starting at 1.
pub fn depth_bucket(depth: usize, width: usize) -> String {
    let width = width.max(1);
    let lo = (depth.max(1) - 1) / width * width + 1;
    format!("{lo}-{}", lo + width - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub policy: String,
    /// Depth bucket, churn stage or `all`.
    pub group: String,
    pub count: usize,
    pub mean_slr: f64,
    pub std_slr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub policy: String,
    pub step: usize,
    pub count: usize,
    pub mean_best_slr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub depth_bucket_width: usize,
    pub by_policy: Vec<Group>,
    pub by_depth: Vec<Group>,
    pub by_stage: Vec<Group>,
    #[serde(default)]
    pub curve: Vec<CurvePoint>,
}

fn group_by<K: Ord + ToString>(rows: &[ResultRow], key: impl Fn(&ResultRow) -> K) -> Vec<Group> {
    let mut groups: BTreeMap<(String, K), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.policy.clone(), key(r))).or_default().push(r.best_slr);
    }
    groups
        .into_iter()
        .map(|((policy, k), v)| {
            let (mean_slr, std_slr) = mean_std(&v);
            Group { policy, group: k.to_string(), count: v.len(), mean_slr, std_slr }
        })
        .collect()
}

/// Keeps numeric depth buckets in numeric order.
#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Bucket(usize, String);

impl std::fmt::Display for Bucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

pub fn summarize(rows: &[ResultRow], curves: &[CurveRow], width: usize) -> Report {
    let width = width.max(1);
    let mut curve: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    for c in curves {
        curve.entry((c.policy.clone(), c.step)).or_default().push(c.best_slr);
    }
    Report {
        depth_bucket_width: width,
        by_policy: group_by(rows, |_| "all"),
        by_depth: group_by(rows, |r| Bucket((r.depth.max(1) - 1) / width, depth_bucket(r.depth, width))),
        by_stage: group_by(rows, |r| r.stage),
        curve: curve
            .into_iter()
            .map(|((policy, step), v)| CurvePoint { policy, step, count: v.len(), mean_best_slr: mean_std(&v).0 })
            .collect(),
    }
}

pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    for (title, groups) in [("policy", &report.by_policy), ("depth", &report.by_depth), ("stage", &report.by_stage)] {
        let _ = writeln!(out, "by {title}");
        let _ = writeln!(out, "{:<18} {:>8} {:>6} {:>10} {:>10}", "policy", title, "n", "mean_slr", "std_slr");
        for g in groups {
            let _ = writeln!(out, "{:<18} {:>8} {:>6} {:>10.4} {:>10.4}", g.policy, g.group, g.count, g.mean_slr, g.std_slr);
        }
        out.push('\n');
    }
    out
}

/// Reads `results` (and `curve.csv` beside it, when present) and writes
/// `report.json`, `report.txt` and per-grouping CSVs into `out_dir`.
pub fn run_report(results: &Path, out_dir: &Path, width: usize) -> anyhow::Result<Report> {
    let rows: Vec<ResultRow> = read_csv(results)?;
    ensure!(!rows.is_empty(), "{}: no result rows", results.display());
    let curve_path = results.with_file_name("curve.csv");
    let curves: Vec<CurveRow> = if curve_path.exists() { read_csv(&curve_path)? } else { Vec::new() };
    let report = summarize(&rows, &curves, width);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_json(&out_dir.join("report.json"), &report)?;
    fs::write(out_dir.join("report.txt"), render_text(&report))?;
    write_csv(&out_dir.join("by_policy.csv"), &report.by_policy)?;
    write_csv(&out_dir.join("by_depth.csv"), &report.by_depth)?;
    write_csv(&out_dir.join("by_stage.csv"), &report.by_stage)?;
    write_csv(&out_dir.join("curve_mean.csv"), &report.curve)?;
    Ok(report)
}

pub fn read_report(path: &Path) -> anyhow::Result<Report> {
    read_json(path)
}
