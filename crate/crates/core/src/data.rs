//! Dataset ingestion, label encoding and deterministic splits.
//!
//! Two input formats are understood:
//!
//! ```text
//! # csv: header row, a `label` column anywhere, every other column numeric
//! f1,f2,label
//! 0.1,2.0,a
//!
//! # sparse: one instance per line, 1-based strictly increasing indices
//! +1 1:0.5 3:-1.2
//! ```
//!
//! Labels are re-encoded to dense ids `0..c` in order of first appearance.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    SparseSvm,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "sparse_svm" | "svm" | "libsvm" => Ok(DataFormat::SparseSvm),
            other => Err(Error::InvalidArgument(format!(
                "unknown data format `{other}`"
            ))),
        }
    }
}

/// A labeled feature matrix with dense class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub instance_ids: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from raw string labels, encoding them by first appearance.
    pub fn from_parts<S: AsRef<str>>(
        instances: Array2<f64>,
        raw_labels: &[S],
        instance_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = instances.nrows();
        if raw_labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: raw_labels.len(),
            });
        }
        if n < 2 {
            return Err(Error::TooFewRows(n));
        }
        for ((row, column), v) in instances.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    line: row + 1,
                    column: column + 1,
                });
            }
        }
        let (labels, class_names) = encode_labels(raw_labels);
        if class_names.len() < 2 {
            return Err(Error::SingleClass);
        }
        let instance_ids = instance_ids.unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
        Ok(Dataset {
            instances,
            labels,
            class_names,
            instance_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.instances.nrows()
    }

    pub fn d(&self) -> usize {
        self.instances.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn decode_labels(&self) -> Vec<&str> {
        self.labels
            .iter()
            .map(|&l| self.class_names[l].as_str())
            .collect()
    }

    pub fn features_of(&self, indices: &[usize]) -> Array2<f64> {
        self.instances.select(Axis(0), indices)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn ids_of(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .map(|&i| self.instance_ids[i].clone())
            .collect()
    }

    /// SHA-256 over the feature bits, labels and class names.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.d() as u64).to_le_bytes());
        for v in self.instances.iter() {
            h.update(v.to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        for name in &self.class_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

fn encode_labels<S: AsRef<str>>(raw: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let labels = raw
        .iter()
        .map(|s| {
            let s = s.as_ref();
            *index.entry(s).or_insert_with(|| {
                names.push(s.to_string());
                names.len() - 1
            })
        })
        .collect();
    (labels, names)
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::Csv => parse_csv(&text),
        DataFormat::SparseSvm => parse_sparse(&text),
    }
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "header has no `label` column".into(),
        })?;
    let d = headers.len() - 1;

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (col, field) in record.iter().enumerate() {
            if col == label_col {
                raw_labels.push(field.to_string());
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {} is not a number: `{field}`", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    line,
                    column: col + 1,
                });
            }
            values.push(v);
        }
    }
    let n = raw_labels.len();
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    let instances = Array2::from_shape_vec((n, d), values).expect("row lengths checked");
    Dataset::from_parts(instances, &raw_labels, None)
}

pub fn parse_sparse(text: &str) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut raw_labels = Vec::new();
    let mut d = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = tokens.next().expect("non-empty line");
        let mut feats = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("token `{tok}` is not idx:val"),
            })?;
            let idx: usize = idx.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad feature index `{idx}`"),
            })?;
            if idx == 0 || idx <= last {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("feature indices must be 1-based and strictly increasing (got {idx} after {last})"),
                });
            }
            let val: f64 = val.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad feature value `{val}`"),
            })?;
            if !val.is_finite() {
                return Err(Error::NonFinite {
                    line: line_no,
                    column: idx,
                });
            }
            last = idx;
            feats.push((idx - 1, val));
        }
        d = d.max(last);
        rows.push(feats);
        raw_labels.push(label.to_string());
    }
    let n = rows.len();
    if n < 2 {
        // A one-row file can never hold two classes; report that first.
        if n == 1 {
            return Err(Error::SingleClass);
        }
        return Err(Error::TooFewRows(n));
    }
    let mut instances = Array2::zeros((n, d));
    for (i, feats) in rows.iter().enumerate() {
        for &(j, v) in feats {
            instances[[i, j]] = v;
        }
    }
    Dataset::from_parts(instances, &raw_labels, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SplitKind {
    Holdout { fraction: f64, stratified: bool },
    Kfold { k: usize, fold_id: usize },
}

/// A train/test partition of a subset of `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub kind: SplitKind,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    /// Checks disjointness, non-emptiness and index validity against `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::InvalidSplit("empty side".into()));
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n {
                return Err(Error::InvalidSplit(format!("index {i} out of range {n}")));
            }
            if seen[i] {
                return Err(Error::InvalidSplit(format!("index {i} repeated")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

pub fn holdout_split(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitPlan> {
    holdout_split_labels(&dataset.labels, train_fraction, seed, stratified)
}

/// Holdout split over a raw label vector; `holdout_split` delegates here.
pub fn holdout_split_labels(
    labels: &[usize],
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitPlan> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidSplit(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    if stratified {
        let c = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        for (class, mut idx) in members.into_iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            if idx.len() < 2 {
                return Err(Error::InvalidSplit(format!(
                    "class {class} has {} member(s); stratified holdout needs 2",
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            let take =
                ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
            train.extend_from_slice(&idx[..take]);
            test.extend_from_slice(&idx[take..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let take = (train_fraction * n as f64).round() as usize;
        if take == 0 || take >= n {
            return Err(Error::InvalidSplit(format!(
                "fraction {train_fraction} of {n} leaves an empty side"
            )));
        }
        train.extend_from_slice(&idx[..take]);
        test.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidSplit("empty side".into()));
    }
    Ok(SplitPlan {
        seed,
        kind: SplitKind::Holdout {
            fraction: train_fraction,
            stratified,
        },
        train,
        test,
    })
}

/// `k` folds over a seeded permutation of `0..n`; the first `n % k` folds get one extra item.
pub fn kfold_plan(n: usize, k: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    if k < 2 || k > n {
        return Err(Error::InvalidSplit(format!(
            "need 2 <= k <= n, got k={k}, n={n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok((0..k)
        .map(|f| {
            let mut test = folds[f].clone();
            test.sort_unstable();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            train.sort_unstable();
            SplitPlan {
                seed,
                kind: SplitKind::Kfold { k, fold_id: f },
                train,
                test,
            }
        })
        .collect())
}

/// Per-column z-scoring fitted on training rows.
///
/// Columns with zero variance are only centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Array2<f64>) -> Standardizer {
        let n = train.nrows().max(1) as f64;
        let mean: Array1<f64> = train.sum_axis(Axis(0)) / n;
        let std = train
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, &m)| {
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                var.sqrt()
            })
            .collect();
        Standardizer {
            mean: mean.to_vec(),
            std,
        }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let m = self.mean[j];
            let s = self.std[j];
            if s > 1e-12 {
                col.mapv_inplace(|v| (v - m) / s);
            } else {
                col.mapv_inplace(|v| v - m);
            }
        }
        out
    }
}
