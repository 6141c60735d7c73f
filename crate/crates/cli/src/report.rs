//! Experiment reports and their renderings.

use std::fmt::Write as _;
use std::path::Path;

use kweave_core::metrics::MetricsReport;
use kweave_core::mkl::SweepRecord;
use kweave_core::WeightMethod;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub kernels: f64,
    pub learning: f64,
    pub svm: f64,
    pub evaluation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub nonzero: usize,
    /// Up to five `(kernel label, weight)` pairs, largest first.
    pub top: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub chosen_lambda: Option<f64>,
    #[serde(rename = "chosen_C")]
    pub chosen_c: f64,
    pub c_cv_accuracy: f64,
    pub weights: WeightSummary,
    pub metrics: MetricsReport,
    /// Metrics after dropping the least confident predictions, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filtered: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub index: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub kernels_used: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<SplitOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub successful_splits: usize,
    /// Percentages, standard deviation with the `n - 1` denominator.
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
    pub mean_mcc: f64,
}

impl Aggregate {
    pub fn from_splits(splits: &[SplitRecord]) -> Option<Aggregate> {
        let ok: Vec<&MetricsReport> = splits
            .iter()
            .filter_map(|s| s.outcome.as_ref())
            .map(|o| &o.metrics)
            .collect();
        if ok.is_empty() {
            return None;
        }
        let acc: Vec<f64> = ok.iter().map(|m| 100.0 * m.accuracy).collect();
        let (mean, std) = mean_std(&acc);
        let f1: Vec<f64> = ok.iter().map(|m| m.macro_f1).collect();
        let mcc: Vec<f64> = ok.iter().map(|m| m.mean_mcc).collect();
        Some(Aggregate {
            successful_splits: ok.len(),
            mean_accuracy: mean,
            std_accuracy: std,
            mean_macro_f1: mean_std(&f1).0,
            mean_mcc: mean_std(&mcc).0,
        })
    }
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: WeightMethod,
    pub splits: Vec<SplitRecord>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHashes {
    pub dataset: String,
    pub config: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub dataset: DatasetInfo,
    pub methods: Vec<MethodReport>,
    pub hashes: ArtifactHashes,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ExperimentReport {
    /// Recomputes every aggregate from its split records and compares it
    /// with the stored value.
    pub fn verify_aggregates(&self, tol: f64) -> bool {
        self.methods
            .iter()
            .all(|m| match Aggregate::from_splits(&m.splits) {
                Some(a) => {
                    a.successful_splits == m.aggregate.successful_splits
                        && (a.mean_accuracy - m.aggregate.mean_accuracy).abs() <= tol
                        && (a.std_accuracy - m.aggregate.std_accuracy).abs() <= tol
                        && (a.mean_macro_f1 - m.aggregate.mean_macro_f1).abs() <= tol
                        && (a.mean_mcc - m.aggregate.mean_mcc).abs() <= tol
                }
                None => false,
            })
    }

    /// Copy with every wall-clock field zeroed, for comparing runs.
    pub fn without_timings(&self) -> ExperimentReport {
        let mut r = self.clone();
        for m in &mut r.methods {
            for s in &mut m.splits {
                s.timings = StageTimings::default();
            }
        }
        r
    }

    pub fn method(&self, method: WeightMethod) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    MarkdownTable,
}

pub fn to_json(report: &ExperimentReport) -> String {
    serde_json::to_string_pretty(report).expect("reports serialize")
}

pub fn from_json(text: &str) -> anyhow::Result<ExperimentReport> {
    Ok(serde_json::from_str(text)?)
}

pub fn method_label(m: WeightMethod) -> &'static str {
    match m {
        WeightMethod::Tsmkl => "TS-MKL",
        WeightMethod::TargetAlign => "Target align",
        WeightMethod::Average => "Average",
        WeightMethod::BestKernel => "Best kernel",
    }
}

/// One row per method, one column per report, cells `mean(std)`.
pub fn markdown_table(reports: &[&ExperimentReport]) -> String {
    let mut methods: Vec<WeightMethod> = Vec::new();
    for r in reports {
        for m in &r.methods {
            if !methods.contains(&m.method) {
                methods.push(m.method);
            }
        }
    }
    let mut out = String::from("| Method |");
    for r in reports {
        let _ = write!(out, " {} (p={}) |", r.dataset.name, r.dataset.p);
    }
    out.push_str("\n|---|");
    for _ in reports {
        out.push_str("---|");
    }
    out.push('\n');
    for m in methods {
        let _ = write!(out, "| {} |", method_label(m));
        for r in reports {
            match r.method(m) {
                Some(mr) => {
                    let _ = write!(
                        out,
                        " {:.2}({:.2}) |",
                        mr.aggregate.mean_accuracy, mr.aggregate.std_accuracy
                    );
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn sweep_tsv(records: &[SweepRecord]) -> String {
    let mut out = String::from("lambda\tk_hinge\tk_accuracy\tdata_accuracy\tsteps\n");
    for r in records {
        let _ = writeln!(
            out,
            "{:e}\t{}\t{}\t{}\t{}",
            r.lambda, r.k_hinge, r.k_accuracy, r.data_accuracy, r.steps
        );
    }
    out
}

pub fn emit_report(
    report: &ExperimentReport,
    format: ReportFormat,
    path: &Path,
) -> anyhow::Result<()> {
    let text = match format {
        ReportFormat::Json => to_json(report),
        ReportFormat::MarkdownTable => markdown_table(&[report]),
    };
    write_file(path, &text)
}

/// Writes `report.json` and `report.md` under `dir`.
pub fn emit_report_dir(report: &ExperimentReport, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("creating {}: {e}", dir.display()))?;
    emit_report(report, ReportFormat::Json, &dir.join("report.json"))?;
    emit_report(report, ReportFormat::MarkdownTable, &dir.join("report.md"))
}

pub fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))
}
