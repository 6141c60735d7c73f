//! Soft-margin SVM on a precomputed Gram matrix.
//!
//! The dual
//!
//! ```text
//! max  sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K_ij
//! s.t. 0 <= a_i <= C,  sum_i a_i y_i = 0
//! ```
//!
//! is solved by SMO with maximal-violating-pair selection. Multiclass
//! problems use one-vs-rest with argmax over decision values.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SplitPlan;
use crate::error::{Error, Result};
use crate::kernels::{CrossGram, GramMatrix};

/// C values searched by default.
pub const DEFAULT_C_GRID: [f64; 6] = [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];
pub const DEFAULT_FOLDS: usize = 4;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoOptions {
    pub tol: f64,
    /// Iteration cap; `None` means `max(10^7, 100 n)`.
    pub max_iter: Option<usize>,
    /// Keep the dual objective after every iteration in `SvmModel::objective_trace`.
    #[serde(default)]
    pub record_objective: bool,
    /// Retry a non-converged problem once with `+1e-10 * mean(diag) * I` added.
    #[serde(default = "default_true")]
    pub jitter_on_failure: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SmoOptions {
    fn default() -> Self {
        SmoOptions {
            tol: 1e-3,
            max_iter: None,
            record_objective: false,
            jitter_on_failure: true,
        }
    }
}

mod sparse_alpha {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Sparse {
        n: usize,
        values: BTreeMap<usize, f64>,
    }

    pub fn serialize<S: Serializer>(alpha: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        Sparse {
            n: alpha.len(),
            values: alpha
                .iter()
                .enumerate()
                .filter(|(_, a)| **a != 0.0)
                .map(|(i, a)| (i, *a))
                .collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        let sp = Sparse::deserialize(d)?;
        let mut alpha = vec![0.0; sp.n];
        for (i, v) in sp.values {
            if i >= sp.n {
                return Err(serde::de::Error::custom(format!(
                    "alpha index {i} >= n = {}",
                    sp.n
                )));
            }
            alpha[i] = v;
        }
        Ok(alpha)
    }
}

/// One binary SVM over a fixed training ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    #[serde(with = "sparse_alpha")]
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub signed_labels: Vec<i8>,
    pub support_indices: Vec<usize>,
    #[serde(rename = "C")]
    pub c: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip)]
    pub objective_trace: Option<Vec<f64>>,
}

impl SvmModel {
    /// `sum_i alpha_i y_i`, zero at a feasible point.
    pub fn equality_residual(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.signed_labels)
            .map(|(a, &y)| a * f64::from(y))
            .sum()
    }

    pub fn dual_objective(&self, gram: &GramMatrix) -> f64 {
        dual_objective(&self.alpha, &self.signed_labels, gram.values.view())
    }

    pub fn decision_values(&self, cross: &CrossGram) -> Result<Vec<f64>> {
        decision_values(self, cross)
    }
}

pub fn dual_objective(alpha: &[f64], y: &[i8], k: ArrayView2<f64>) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        let yi = f64::from(y[i]);
        let mut s = 0.0;
        for j in 0..n {
            s += alpha[j] * f64::from(y[j]) * k[[i, j]];
        }
        quad += alpha[i] * yi * s;
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

fn check_binary_labels(y: &[i8]) -> Result<()> {
    if let Some(bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(Error::InvalidArgument(format!(
            "SVM label {bad} is not +1/-1"
        )));
    }
    if !y.contains(&1) || !y.contains(&-1) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

pub fn smo_train(gram: &GramMatrix, y: &[i8], c: f64, opts: &SmoOptions) -> Result<SvmModel> {
    let model = smo_solve(gram.values.view(), y, c, opts, 0.0)?;
    if model.converged || !opts.jitter_on_failure {
        return Ok(model);
    }
    let n = gram.n() as f64;
    let jitter = 1e-10 * gram.values.diag().sum() / n;
    log::warn!("SMO hit its iteration cap (C = {c}); retrying with diagonal jitter {jitter:e}");
    smo_solve(gram.values.view(), y, c, opts, jitter)
}

fn smo_solve(
    k: ArrayView2<f64>,
    y: &[i8],
    c: f64,
    opts: &SmoOptions,
    jitter: f64,
) -> Result<SvmModel> {
    let n = k.nrows();
    if k.ncols() != n || y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("C must be > 0, got {c}")));
    }
    check_binary_labels(y)?;

    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let diag: Vec<f64> = (0..n).map(|i| k[[i, i]] + jitter).collect();
    let mut alpha = vec![0.0; n];
    // gradient of 1/2 a'Qa - e'a
    let mut grad = vec![-1.0; n];
    let max_iter = opts.max_iter.unwrap_or_else(|| (100 * n).max(10_000_000));
    let track = opts.record_objective || cfg!(debug_assertions);
    let mut trace = Vec::new();
    let mut last_obj = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;

    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    while iterations < max_iter {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            let v = -yf[t] * grad[t];
            if up(alpha[t], yf[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(alpha[t], yf[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin <= opts.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let kij = k[[i, j]];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if yf[i] != yf[j] {
            // Q_ij = -K_ij for opposite labels, so the curvature is still K_ii + K_jj - 2 K_ij
            let quad = (diag[i] + diag[j] - 2.0 * kij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (diag[i] + diag[j] - 2.0 * kij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let di = (alpha[i] - old_i) * yf[i];
        let dj = (alpha[j] - old_j) * yf[j];
        let row_i = k.row(i);
        let row_j = k.row(j);
        for t in 0..n {
            grad[t] += yf[t] * (row_i[t] * di + row_j[t] * dj);
        }
        if jitter != 0.0 {
            grad[i] += jitter * di * yf[i];
            grad[j] += jitter * dj * yf[j];
        }

        if track {
            // D = sum a - 1/2 a'Qa = -1/2 sum a_t (G_t - 1)
            let obj = -0.5
                * alpha
                    .iter()
                    .zip(&grad)
                    .map(|(a, g)| a * (g - 1.0))
                    .sum::<f64>();
            debug_assert!(
                obj >= last_obj - 1e-9 * (1.0 + last_obj.abs()),
                "dual objective decreased at iteration {iterations}: {last_obj} -> {obj}"
            );
            last_obj = obj;
            if opts.record_objective {
                trace.push(obj);
            }
        }
    }
    if !converged {
        log::warn!("SMO stopped at the iteration cap ({max_iter}) without converging");
    }

    let bias = -compute_rho(&alpha, &yf, &grad, c);
    let support_indices = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    Ok(SvmModel {
        alpha,
        bias,
        signed_labels: y.to_vec(),
        support_indices,
        c,
        converged,
        iterations,
        objective_trace: opts.record_objective.then_some(trace),
    })
}

/// Average of `y G` over free vectors, or the midpoint of the feasible interval.
fn compute_rho(alpha: &[f64], y: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut free_sum = 0.0;
    let mut free = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    if free > 0 {
        free_sum / free as f64
    } else {
        0.5 * (ub + lb)
    }
}

/// `f(x) = sum_i alpha_i y_i K(x, x_i) + bias` for every cross row.
pub fn decision_values(model: &SvmModel, cross: &CrossGram) -> Result<Vec<f64>> {
    decision_values_view(model, cross.values.view())
}

fn decision_values_view(model: &SvmModel, cross: ArrayView2<f64>) -> Result<Vec<f64>> {
    if cross.ncols() != model.alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: model.alpha.len(),
            got: cross.ncols(),
        });
    }
    Ok(cross
        .rows()
        .into_iter()
        .map(|row| {
            model
                .support_indices
                .iter()
                .map(|&i| model.alpha[i] * f64::from(model.signed_labels[i]) * row[i])
                .sum::<f64>()
                + model.bias
        })
        .collect())
}

/// One binary model per class (class `k` against the rest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrModel {
    pub models: Vec<SvmModel>,
    #[serde(rename = "C")]
    pub c: f64,
}

/// Predictions with their decision values (`m x c`).
#[derive(Debug, Clone, PartialEq)]
pub struct OvrPrediction {
    pub labels: Vec<usize>,
    pub decisions: Array2<f64>,
}

impl OvrPrediction {
    /// Top decision value minus the runner-up, per row.
    pub fn confidence(&self) -> Vec<f64> {
        self.decisions
            .rows()
            .into_iter()
            .map(|r| {
                let mut top = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                for &v in r.iter() {
                    if v > top {
                        second = top;
                        top = v;
                    } else if v > second {
                        second = v;
                    }
                }
                top - second
            })
            .collect()
    }
}

impl OvrModel {
    pub fn num_classes(&self) -> usize {
        self.models.len()
    }

    pub fn predict(&self, cross: &CrossGram) -> Result<OvrPrediction> {
        self.predict_view(cross.values.view())
    }

    fn predict_view(&self, cross: ArrayView2<f64>) -> Result<OvrPrediction> {
        let m = cross.nrows();
        let mut decisions = Array2::zeros((m, self.models.len()));
        for (k, model) in self.models.iter().enumerate() {
            let v = decision_values_view(model, cross)?;
            decisions
                .column_mut(k)
                .iter_mut()
                .zip(v)
                .for_each(|(d, x)| *d = x);
        }
        let labels = decisions
            .rows()
            .into_iter()
            .map(|r| argmax_first(r.iter().copied()))
            .collect();
        Ok(OvrPrediction { labels, decisions })
    }
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = k;
        }
    }
    best
}

pub fn ovr_train(
    gram: &GramMatrix,
    labels: &[usize],
    num_classes: usize,
    c: f64,
    opts: &SmoOptions,
) -> Result<OvrModel> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(
            "one-vs-rest needs at least 2 classes".into(),
        ));
    }
    if labels.len() != gram.n() {
        return Err(Error::DimensionMismatch {
            expected: gram.n(),
            got: labels.len(),
        });
    }
    let mut present = vec![false; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {l} >= class count {num_classes}"
            )));
        }
        present[l] = true;
    }
    if let Some(k) = present.iter().position(|p| !p) {
        return Err(Error::InvalidArgument(format!(
            "class {k} is absent from the training data"
        )));
    }
    let models = (0..num_classes)
        .into_par_iter()
        .map(|k| {
            let y: Vec<i8> = labels
                .iter()
                .map(|&l| if l == k { 1 } else { -1 })
                .collect();
            smo_train(gram, &y, c, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OvrModel { models, c })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CScore {
    #[serde(rename = "C")]
    pub c: f64,
    pub cv_accuracy: Option<f64>,
    pub folds_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CSelection {
    #[serde(rename = "C")]
    pub c: f64,
    pub cv_accuracy: f64,
    pub scores: Vec<CScore>,
}

/// Cross-validated C: mean fold accuracy, ties toward the smaller C.
pub fn select_c(
    gram: &GramMatrix,
    labels: &[usize],
    num_classes: usize,
    folds: &[SplitPlan],
    grid: &[f64],
    opts: &SmoOptions,
) -> Result<CSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty C grid".into()));
    }
    if folds.is_empty() {
        return Err(Error::InvalidArgument("no folds".into()));
    }
    // Fold-local Grams are shared by every C value.
    let fold_data: Vec<(GramMatrix, CrossGram, Vec<usize>, Vec<usize>)> = folds
        .iter()
        .map(|f| {
            (
                gram.submatrix(&f.train),
                gram.block(&f.test, &f.train),
                f.train.iter().map(|&i| labels[i]).collect(),
                f.test.iter().map(|&i| labels[i]).collect(),
            )
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|ci| (0..folds.len()).map(move |fi| (ci, fi)))
        .collect();
    let results: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(ci, fi)| {
            let (fg, fx, ftrain, ftest) = &fold_data[fi];
            let run = || -> Result<f64> {
                let model = ovr_train(fg, ftrain, num_classes, grid[ci], opts)?;
                let pred = model.predict(fx)?;
                let hits = pred
                    .labels
                    .iter()
                    .zip(ftest)
                    .filter(|(p, t)| p == t)
                    .count();
                Ok(hits as f64 / ftest.len() as f64)
            };
            match run() {
                Ok(acc) => Some(acc),
                Err(e) => {
                    log::warn!("C = {}: fold {fi} skipped: {e}", grid[ci]);
                    None
                }
            }
        })
        .collect();
    let scores: Vec<CScore> = grid
        .iter()
        .enumerate()
        .map(|(ci, &c)| {
            let accs: Vec<f64> = (0..folds.len())
                .filter_map(|fi| results[ci * folds.len() + fi])
                .collect();
            CScore {
                c,
                cv_accuracy: (!accs.is_empty())
                    .then(|| accs.iter().sum::<f64>() / accs.len() as f64),
                folds_used: accs.len(),
            }
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for s in &scores {
        if let Some(acc) = s.cv_accuracy {
            let better = match best {
                None => true,
                Some((ba, bc)) => acc > ba || (acc == ba && s.c < bc),
            };
            if better {
                best = Some((acc, s.c));
            }
        }
    }
    let (cv_accuracy, c) =
        best.ok_or_else(|| Error::AllCandidatesFailed("every fold failed for every C".into()))?;
    Ok(CSelection {
        c,
        cv_accuracy,
        scores,
    })
}
