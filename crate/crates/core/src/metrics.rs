//! Classification metrics and margin-based rejection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[usize], predicted: &[usize], c: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                got: predicted.len(),
            });
        }
        if truth.is_empty() {
            return Err(Error::InvalidArgument("no instances to evaluate".into()));
        }
        let mut counts = vec![vec![0u64; c]; c];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= c || p >= c {
                return Err(Error::InvalidArgument(format!(
                    "label out of range for {c} classes"
                )));
            }
            counts[t][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// (tp, fp, fn, tn) for `class` against the rest.
    pub fn one_vs_rest(&self, class: usize) -> (f64, f64, f64, f64) {
        let tp = self.counts[class][class];
        let row: u64 = self.counts[class].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[class]).sum();
        let fp = col - tp;
        let fneg = row - tp;
        let tn = self.total() - tp - fp - fneg;
        (tp as f64, fp as f64, fneg as f64, tn as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub mean_per_class_accuracy: f64,
    pub f1_per_class: Vec<f64>,
    pub mcc_per_class: Vec<f64>,
    pub macro_f1: f64,
    pub mean_mcc: f64,
    pub retained_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn evaluate(truth: &[usize], predicted: &[usize], c: usize) -> Result<MetricsReport> {
    let cm = ConfusionMatrix::from_labels(truth, predicted, c)?;
    let total = cm.total() as f64;
    let correct: u64 = (0..c).map(|k| cm.counts[k][k]).sum();

    let mut recalls = Vec::new();
    let mut f1 = Vec::with_capacity(c);
    let mut mcc = Vec::with_capacity(c);
    for k in 0..c {
        let (tp, fp, fneg, tn) = cm.one_vs_rest(k);
        if tp + fneg > 0.0 {
            recalls.push(tp / (tp + fneg));
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        f1.push(ratio(2.0 * precision * recall, precision + recall));
        let den = ((tp + fp) * (tp + fneg) * (tn + fp) * (tn + fneg)).sqrt();
        mcc.push(ratio(tp * tn - fp * fneg, den));
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok(MetricsReport {
        accuracy: correct as f64 / total,
        // classes absent from `truth` have no recall and are skipped
        mean_per_class_accuracy: mean(&recalls),
        macro_f1: mean(&f1),
        mean_mcc: mean(&mcc),
        f1_per_class: f1,
        mcc_per_class: mcc,
        retained_fraction: 1.0,
        confusion: None,
    })
}

/// Drops the `floor(rho * m)` least confident instances (ties drop the lower
/// index first) and evaluates the rest. Returns the retained indices in order.
pub fn filter_unsure(
    confidence: &[f64],
    predicted: &[usize],
    truth: &[usize],
    c: usize,
    drop_fraction: f64,
) -> Result<(Vec<usize>, MetricsReport)> {
    let m = confidence.len();
    if predicted.len() != m || truth.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: predicted.len().min(truth.len()),
        });
    }
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::InvalidArgument(format!(
            "drop fraction {drop_fraction} outside [0, 1)"
        )));
    }
    let n_drop = (drop_fraction * m as f64).floor() as usize;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| confidence[a].total_cmp(&confidence[b]).then(a.cmp(&b)));
    let mut dropped = vec![false; m];
    for &i in &order[..n_drop] {
        dropped[i] = true;
    }
    let kept: Vec<usize> = (0..m).filter(|&i| !dropped[i]).collect();
    let t: Vec<usize> = kept.iter().map(|&i| truth[i]).collect();
    let p: Vec<usize> = kept.iter().map(|&i| predicted[i]).collect();
    let mut report = evaluate(&t, &p, c)?;
    report.retained_fraction = 1.0 - n_drop as f64 / m as f64;
    Ok((kept, report))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&x, &y| v[x].total_cmp(&v[y]));
    let mut r = vec![0.0; v.len()];
    let mut s = 0;
    while s < idx.len() {
        let mut e = s;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
            e += 1;
        }
        let avg = (s + e) as f64 / 2.0 + 1.0;
        for &k in &idx[s..=e] {
            r[k] = avg;
        }
        s = e + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}
