//! Base kernels, Gram matrices and their train-statistics centering.
//!
//! Every Gram used for learning is double-centered and then divided by
//! `trace(K_c) / n`, so the mean feature-space variance of the training
//! points is one. Test-side cross blocks reuse the training statistics.

use ndarray::{Array2, ArrayView1, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod io;

/// Trace threshold under which a centered kernel counts as constant.
pub const DEGENERATE_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelFamily {
    Gaussian { gamma: f64 },
    Polynomial { degree: u32, offset: f64 },
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScope {
    All,
    Single(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub scope: FeatureScope,
}

impl KernelSpec {
    pub fn gaussian(gamma: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Gaussian { gamma },
            scope: FeatureScope::All,
        }
    }

    pub fn polynomial(degree: u32, offset: f64) -> Self {
        KernelSpec {
            family: KernelFamily::Polynomial { degree, offset },
            scope: FeatureScope::All,
        }
    }

    pub fn linear() -> Self {
        KernelSpec {
            family: KernelFamily::Linear,
            scope: FeatureScope::All,
        }
    }

    pub fn on_feature(self, feature: usize) -> Self {
        KernelSpec {
            scope: FeatureScope::Single(feature),
            ..self
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self.family {
            KernelFamily::Gaussian { gamma } if !(gamma.is_finite() && gamma > 0.0) => {
                return Err(Error::InvalidSpec(format!(
                    "gamma must be finite and > 0, got {gamma}"
                )))
            }
            KernelFamily::Polynomial { degree, offset } if degree < 1 || !(offset >= 0.0) => {
                return Err(Error::InvalidSpec(format!(
                    "polynomial needs degree >= 1 and offset >= 0, got ({degree}, {offset})"
                )))
            }
            _ => {}
        }
        if let FeatureScope::Single(j) = self.scope {
            if j >= d {
                return Err(Error::InvalidSpec(format!(
                    "feature {j} out of range for d = {d}"
                )));
            }
        }
        Ok(())
    }

    /// Kernel value for two full feature vectors (the scope is applied here).
    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        match self.scope {
            FeatureScope::All => self.eval_family(a.iter().copied().zip(b.iter().copied())),
            FeatureScope::Single(j) => self.eval_family(std::iter::once((a[j], b[j]))),
        }
    }

    fn eval_family(&self, pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
        match self.family {
            KernelFamily::Gaussian { gamma } => {
                let sq: f64 = pairs.map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * sq).exp()
            }
            KernelFamily::Polynomial { degree, offset } => {
                let dot: f64 = pairs.map(|(x, y)| x * y).sum();
                (dot + offset).powi(degree as i32)
            }
            KernelFamily::Linear => pairs.map(|(x, y)| x * y).sum(),
        }
    }

    pub fn label(&self) -> String {
        let fam = match self.family {
            KernelFamily::Gaussian { gamma } => format!("gaussian(gamma=2^{})", gamma.log2()),
            KernelFamily::Polynomial { degree, offset } => format!("poly(deg={degree},c={offset})"),
            KernelFamily::Linear => "linear".to_string(),
        };
        match self.scope {
            FeatureScope::All => fam,
            FeatureScope::Single(j) => format!("{fam}@f{j}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramState {
    Raw,
    CenteredStandardized,
}

/// Training statistics recorded by [`center_standardize_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterStats {
    pub row_means: Vec<f64>,
    pub grand_mean: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: Array2<f64>,
    pub state: GramState,
    pub center_stats: Option<CenterStats>,
}

impl GramMatrix {
    pub fn raw(values: Array2<f64>) -> Self {
        GramMatrix {
            values,
            state: GramState::Raw,
            center_stats: None,
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Principal submatrix on `indices` (rows and columns). Statistics are not carried over.
    pub fn submatrix(&self, indices: &[usize]) -> GramMatrix {
        GramMatrix {
            values: self
                .values
                .select(Axis(0), indices)
                .select(Axis(1), indices),
            state: self.state,
            center_stats: None,
        }
    }

    /// Block with rows `rows` and columns `cols`, as a cross Gram.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> CrossGram {
        CrossGram {
            values: self.values.select(Axis(0), rows).select(Axis(1), cols),
            state: self.state,
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let v = &self.values;
        let n = v.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((v[[i, j]] - v[[j, i]]).abs());
            }
        }
        worst
    }
}

/// Test rows against training columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossGram {
    pub values: Array2<f64>,
    pub state: GramState,
}

pub fn compute_gram(spec: &KernelSpec, train: &Array2<f64>) -> Result<GramMatrix> {
    spec.validate(train.ncols())?;
    let n = train.nrows();
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        let xi = train.row(i);
        for j in i..n {
            let v = spec.eval(xi, train.row(j));
            if !v.is_finite() {
                return Err(Error::KernelOverflow { row: i, col: j });
            }
            values[[i, j]] = v;
            values[[j, i]] = v;
        }
    }
    Ok(GramMatrix::raw(values))
}

pub fn compute_cross(
    spec: &KernelSpec,
    test: &Array2<f64>,
    train: &Array2<f64>,
) -> Result<CrossGram> {
    spec.validate(train.ncols())?;
    if test.ncols() != train.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train.ncols(),
            got: test.ncols(),
        });
    }
    let mut values = Array2::zeros((test.nrows(), train.nrows()));
    for (a, t) in test.axis_iter(Axis(0)).enumerate() {
        for (i, x) in train.axis_iter(Axis(0)).enumerate() {
            let v = spec.eval(t, x);
            if !v.is_finite() {
                return Err(Error::KernelOverflow { row: a, col: i });
            }
            values[[a, i]] = v;
        }
    }
    Ok(CrossGram {
        values,
        state: GramState::Raw,
    })
}

/// Double-centers `gram` and scales it to unit mean feature-space variance.
pub fn center_standardize_fit(gram: &GramMatrix) -> Result<GramMatrix> {
    if gram.state != GramState::Raw {
        return Err(Error::InvalidArgument(
            "center_standardize_fit expects a raw Gram".into(),
        ));
    }
    let k = &gram.values;
    let n = k.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = k.rows().into_iter().map(|r| r.sum() / nf).collect();
    let grand_mean = row_means.iter().sum::<f64>() / nf;

    let mut centered = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            centered[[i, j]] = k[[i, j]] - row_means[i] - row_means[j] + grand_mean;
        }
    }
    // Average the two triangles so the result is exactly symmetric.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (centered[[i, j]] + centered[[j, i]]);
            centered[[i, j]] = v;
            centered[[j, i]] = v;
        }
    }
    let scale = centered.diag().sum() / nf;
    if !(scale > DEGENERATE_SCALE) {
        return Err(Error::DegenerateKernel { scale });
    }
    centered.mapv_inplace(|v| v / scale);
    Ok(GramMatrix {
        values: centered,
        state: GramState::CenteredStandardized,
        center_stats: Some(CenterStats {
            row_means,
            grand_mean,
            scale,
        }),
    })
}

/// Centers a raw test-by-train block with statistics from the training Gram.
pub fn center_standardize_apply(cross: &CrossGram, stats: &CenterStats) -> Result<CrossGram> {
    if cross.state != GramState::Raw {
        return Err(Error::InvalidArgument(
            "center_standardize_apply expects a raw cross block".into(),
        ));
    }
    let n = stats.row_means.len();
    if cross.values.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cross.values.ncols(),
        });
    }
    let mut out = cross.values.clone();
    let nf = n as f64;
    for mut row in out.axis_iter_mut(Axis(0)) {
        let test_mean = row.sum() / nf;
        for (v, &rm) in row.iter_mut().zip(&stats.row_means) {
            *v = (*v - test_mean - rm + stats.grand_mean) / stats.scale;
        }
    }
    Ok(CrossGram {
        values: out,
        state: GramState::CenteredStandardized,
    })
}

fn check_weights(weights: &[f64], p: usize) -> Result<()> {
    if weights.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights(format!(
            "weight {w} is negative or non-finite"
        )));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::InvalidWeights("all weights are zero".into()));
    }
    Ok(())
}

fn weighted_sum<'a>(
    mats: impl Iterator<Item = &'a Array2<f64>>,
    weights: &[f64],
    dim: (usize, usize),
) -> Array2<f64> {
    let mut out = Array2::zeros(dim);
    for (m, &w) in mats.zip(weights) {
        if w != 0.0 {
            Zip::from(&mut out).and(m).for_each(|o, &v| *o += w * v);
        }
    }
    out
}

/// Elementwise `sum_l weights[l] * grams[l]`.
pub fn combine(grams: &[GramMatrix], weights: &[f64]) -> Result<GramMatrix> {
    check_weights(weights, grams.len())?;
    let first = &grams[0];
    for g in grams {
        if g.values.dim() != first.values.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.n(),
                got: g.n(),
            });
        }
        if g.state != first.state {
            return Err(Error::InvalidArgument("combine: mixed Gram states".into()));
        }
    }
    Ok(GramMatrix {
        values: weighted_sum(grams.iter().map(|g| &g.values), weights, first.values.dim()),
        state: first.state,
        center_stats: None,
    })
}

pub fn combine_cross(cross: &[CrossGram], weights: &[f64]) -> Result<CrossGram> {
    check_weights(weights, cross.len())?;
    let dim = cross[0].values.dim();
    if let Some(c) = cross.iter().find(|c| c.values.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim.1,
            got: c.values.ncols(),
        });
    }
    Ok(CrossGram {
        values: weighted_sum(cross.iter().map(|c| &c.values), weights, dim),
        state: cross[0].state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankRecipe {
    UciFull,
    UciFullPlusPerFeature,
}

impl std::str::FromStr for BankRecipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uci_full" => Ok(BankRecipe::UciFull),
            "uci_full_plus_per_feature" => Ok(BankRecipe::UciFullPlusPerFeature),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel recipe `{other}`"
            ))),
        }
    }
}

/// Nine gaussians (gamma = 2^-10 .. 2^-2), polynomials of degree 2..4 and a linear kernel.
pub fn uci_template() -> Vec<KernelSpec> {
    let mut specs: Vec<KernelSpec> = (-10..=-2)
        .map(|e| KernelSpec::gaussian(2f64.powi(e)))
        .collect();
    specs.extend((2..=4).map(|deg| KernelSpec::polynomial(deg, 1.0)));
    specs.push(KernelSpec::linear());
    specs
}

pub fn recipe_specs(recipe: BankRecipe, d: usize) -> Vec<KernelSpec> {
    let template = uci_template();
    let mut specs = template.clone();
    if recipe == BankRecipe::UciFullPlusPerFeature {
        for j in 0..d {
            specs.extend(template.iter().map(|s| s.on_feature(j)));
        }
    }
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedKernel {
    pub spec: KernelSpec,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub n: usize,
    pub dataset_hash: String,
    pub zscore: bool,
    pub centered: bool,
    pub dropped: Vec<DroppedKernel>,
}

/// `p` base kernels over one training instance ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub specs: Vec<KernelSpec>,
    pub train_grams: Vec<GramMatrix>,
    pub meta: BankMeta,
}

impl KernelBank {
    pub fn p(&self) -> usize {
        self.specs.len()
    }

    pub fn n(&self) -> usize {
        self.meta.n
    }

    /// Computes every spec on `train`; when `center` is set, each Gram is
    /// centered/standardized and degenerate ones are dropped with a warning.
    pub fn fit(specs: &[KernelSpec], train: &Array2<f64>, center: bool) -> Result<KernelBank> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument(
                "kernel bank needs at least one spec".into(),
            ));
        }
        let built: Vec<Result<GramMatrix>> = specs
            .par_iter()
            .map(|s| {
                let g = compute_gram(s, train)?;
                if center {
                    center_standardize_fit(&g)
                } else {
                    Ok(g)
                }
            })
            .collect();
        let mut kept_specs = Vec::new();
        let mut grams = Vec::new();
        let mut dropped = Vec::new();
        for (spec, res) in specs.iter().zip(built) {
            match res {
                Ok(g) => {
                    kept_specs.push(*spec);
                    grams.push(g);
                }
                Err(e @ Error::DegenerateKernel { .. }) => {
                    log::warn!("dropping kernel {}: {e}", spec.label());
                    dropped.push(DroppedKernel {
                        spec: *spec,
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        if grams.is_empty() {
            return Err(Error::InvalidArgument(
                "every kernel in the bank is degenerate".into(),
            ));
        }
        Ok(KernelBank {
            specs: kept_specs,
            train_grams: grams,
            meta: BankMeta {
                n: train.nrows(),
                dataset_hash: String::new(),
                zscore: false,
                centered: center,
                dropped,
            },
        })
    }

    /// Cross blocks for `test` rows, centered with each Gram's training statistics.
    pub fn cross_grams(&self, test: &Array2<f64>, train: &Array2<f64>) -> Result<Vec<CrossGram>> {
        if train.nrows() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: train.nrows(),
            });
        }
        self.specs
            .par_iter()
            .zip(self.train_grams.par_iter())
            .map(|(spec, g)| {
                let raw = compute_cross(spec, test, train)?;
                match &g.center_stats {
                    Some(stats) if g.state == GramState::CenteredStandardized => {
                        center_standardize_apply(&raw, stats)
                    }
                    _ => Ok(raw),
                }
            })
            .collect()
    }
}

pub fn build_kernel_bank(train: &Array2<f64>, recipe: BankRecipe) -> Result<KernelBank> {
    if train.ncols() == 0 {
        return Err(Error::InvalidArgument("kernel bank needs d >= 1".into()));
    }
    KernelBank::fit(&recipe_specs(recipe, train.ncols()), train, true)
}
