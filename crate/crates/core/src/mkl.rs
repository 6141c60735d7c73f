//! Kernel weights as a non-negative linear classifier in K-space.
//!
//! The objective is
//!
//! ```text
//! min_{mu >= 0}  lambda/2 |mu|^2 + mean_k [1 - t_k mu . z_k]_+
//! ```
//!
//! solved with mini-batch Pegasos (`eta_k = 1 / (lambda k)`) followed by a
//! projection onto the non-negative orthant after every step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{sample_batch, KExampleSet};

pub const DEFAULT_BATCH_SIZE: usize = 100;
pub const SMALL_STEPS: usize = 1_000;
pub const LARGE_STEPS: usize = 100_000;
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Tsmkl,
    TargetAlign,
    Average,
    BestKernel,
}

impl WeightMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeightMethod::Tsmkl => "tsmkl",
            WeightMethod::TargetAlign => "target_align",
            WeightMethod::Average => "average",
            WeightMethod::BestKernel => "best_kernel",
        }
    }
}

impl std::str::FromStr for WeightMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "tsmkl" | "ts_mkl" => Ok(WeightMethod::Tsmkl),
            "target_align" => Ok(WeightMethod::TargetAlign),
            "average" => Ok(WeightMethod::Average),
            "best_kernel" => Ok(WeightMethod::BestKernel),
            _ => Err(Error::InvalidArgument(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MklConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub num_steps: usize,
    pub seed: u64,
    pub lambda_grid: Vec<f64>,
    /// Average the iterates over this trailing fraction of steps instead of
    /// returning the last one.
    #[serde(default)]
    pub tail_average: Option<f64>,
}

impl Default for MklConfig {
    fn default() -> Self {
        MklConfig {
            lambda: 1e-2,
            batch_size: DEFAULT_BATCH_SIZE,
            num_steps: SMALL_STEPS,
            seed: 0,
            lambda_grid: default_lambda_grid(),
            tail_average: None,
        }
    }
}

impl MklConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 || self.num_steps == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and num_steps must be >= 1".into(),
            ));
        }
        if self.lambda_grid.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidArgument(
                "lambda grid entries must be > 0".into(),
            ));
        }
        if self.lambda_grid.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument(
                "lambda grid must be strictly descending".into(),
            ));
        }
        if let Some(f) = self.tail_average {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "tail_average fraction {f} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Learned kernel weights with their training provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MklModel {
    pub method: WeightMethod,
    pub mu: Vec<f64>,
    pub chosen_lambda: Option<f64>,
    pub final_train_hinge: Option<f64>,
    pub validation_hinge: Option<f64>,
    pub steps_run: usize,
    pub seed: u64,
    /// Set when every weight ended up at zero.
    #[serde(default)]
    pub collapsed: bool,
}

impl MklModel {
    /// A fixed weight vector produced by a non-Pegasos method.
    pub fn fixed(method: WeightMethod, mu: Vec<f64>) -> Self {
        MklModel {
            method,
            collapsed: mu.iter().all(|&m| m == 0.0),
            mu,
            chosen_lambda: None,
            final_train_hinge: None,
            validation_hinge: None,
            steps_run: 0,
            seed: 0,
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.mu.iter().filter(|&&m| m > 0.0).count()
    }

    /// Up to `k` (index, weight) pairs with the largest weights.
    pub fn top_weights(&self, k: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<(usize, f64)> = self
            .mu
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, m)| *m > 0.0)
            .collect();
        idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        idx.truncate(k);
        idx
    }
}

/// Mean hinge loss `[1 - t mu . z]_+` over the whole set.
pub fn hinge_loss(mu: &[f64], set: &KExampleSet<'_>) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    // Fixed chunks summed in order keep the result bitwise reproducible.
    const CHUNK: usize = 4096;
    let partials: Vec<f64> = (0..set.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            (c * CHUNK..((c + 1) * CHUNK).min(set.len()))
                .map(|k| (1.0 - set.label(k) * set.dot(mu, k)).max(0.0))
                .sum::<f64>()
        })
        .collect();
    partials.iter().sum::<f64>() / set.len() as f64
}

/// Fraction of examples where `mu . z > 0` agrees with the K-label.
pub fn k_accuracy(mu: &[f64], set: &KExampleSet<'_>) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let hits = (0..set.len())
        .filter(|&k| (set.dot(mu, k) > 0.0) == (set.label(k) > 0.0))
        .count();
    hits as f64 / set.len() as f64
}

/// `lambda/2 |mu|^2 + hinge_loss(mu, set)`.
pub fn objective(mu: &[f64], set: &KExampleSet<'_>, lambda: f64) -> f64 {
    0.5 * lambda * mu.iter().map(|m| m * m).sum::<f64>() + hinge_loss(mu, set)
}

pub fn pegasos_train(set: &KExampleSet<'_>, config: &MklConfig) -> Result<MklModel> {
    pegasos_train_observed(set, config, |_, _| {})
}

/// Like [`pegasos_train`], calling `observe(step, mu)` after every projection.
pub fn pegasos_train_observed<F>(
    set: &KExampleSet<'_>,
    config: &MklConfig,
    mut observe: F,
) -> Result<MklModel>
where
    F: FnMut(usize, &[f64]),
{
    config.validate()?;
    if set.n_pos() == 0 || set.n_neg() == 0 {
        return Err(Error::MissingKClass {
            n_pos: set.n_pos(),
            n_neg: set.n_neg(),
        });
    }
    let p = set.p();
    let lambda = config.lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mu = vec![0.0; p];
    let mut push = vec![0.0; p];

    let tail_start = config.tail_average.map(|f| {
        config.num_steps
            - ((f * config.num_steps as f64).ceil() as usize).clamp(1, config.num_steps)
    });
    let mut tail_sum = vec![0.0; p];
    let mut tail_count = 0usize;

    for step in 1..=config.num_steps {
        let batch = sample_batch(set, config.batch_size, &mut rng);
        push.iter_mut().for_each(|v| *v = 0.0);
        for (row, &t) in batch.z.rows().into_iter().zip(&batch.t) {
            let margin: f64 = t * row.iter().zip(&mu).map(|(z, m)| z * m).sum::<f64>();
            if margin < 1.0 {
                for (acc, z) in push.iter_mut().zip(row.iter()) {
                    *acc += t * z;
                }
            }
        }
        let eta = 1.0 / (lambda * step as f64);
        let shrink = 1.0 - eta * lambda;
        let gain = eta / config.batch_size as f64;
        for (m, g) in mu.iter_mut().zip(&push) {
            *m = (shrink * *m + gain * g).max(0.0);
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFiniteIterate { step });
        }
        observe(step, &mu);
        if let Some(start) = tail_start {
            if step > start {
                tail_sum.iter_mut().zip(&mu).for_each(|(s, m)| *s += m);
                tail_count += 1;
            }
        }
    }
    if tail_count > 0 {
        mu = tail_sum.iter().map(|s| s / tail_count as f64).collect();
    }
    let collapsed = mu.iter().all(|&m| m == 0.0);
    if collapsed {
        log::debug!("pegasos returned an all-zero weight vector (lambda = {lambda:e})");
    }
    Ok(MklModel {
        method: WeightMethod::Tsmkl,
        final_train_hinge: Some(hinge_loss(&mu, set)),
        mu,
        chosen_lambda: Some(lambda),
        validation_hinge: None,
        steps_run: config.num_steps,
        seed: config.seed,
        collapsed,
    })
}

/// `100 / 4^k` for `k = 0, 1, ...` while the value stays at or above `1e-8`.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = Vec::new();
    let mut v = 100.0f64;
    while v >= 1e-8 {
        grid.push(v);
        v /= 4.0;
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub validation_hinge: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub validation_hinge: f64,
    pub scores: Vec<LambdaScore>,
    pub n_train: usize,
    pub n_val: usize,
}

fn grid_config(base: &MklConfig, lambda: f64, idx: usize) -> MklConfig {
    MklConfig {
        lambda,
        seed: base.seed ^ idx as u64,
        ..base.clone()
    }
}

/// Picks the grid value with the lowest validation hinge on one random split.
///
/// Ties go to the larger lambda. Grid point `i` trains with seed `seed ^ i`.
pub fn select_lambda(
    set: &KExampleSet<'_>,
    base: &MklConfig,
    val_fraction: f64,
) -> Result<LambdaSelection> {
    if set.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "lambda selection needs at least 5 K-examples, got {}",
            set.len()
        )));
    }
    if base.lambda_grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let (train, val) = set.split(val_fraction, base.seed)?;
    let scores: Vec<LambdaScore> = base
        .lambda_grid
        .par_iter()
        .enumerate()
        .map(
            |(idx, &lambda)| match pegasos_train(&train, &grid_config(base, lambda, idx)) {
                Ok(model) => LambdaScore {
                    lambda,
                    validation_hinge: Some(hinge_loss(&model.mu, &val)),
                    error: None,
                },
                Err(e) => {
                    log::warn!("lambda {lambda:e} skipped: {e}");
                    LambdaScore {
                        lambda,
                        validation_hinge: None,
                        error: Some(e.to_string()),
                    }
                }
            },
        )
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for s in &scores {
        if let Some(h) = s.validation_hinge {
            let better = match best {
                None => true,
                Some((bh, bl)) => h < bh || (h == bh && s.lambda > bl),
            };
            if better {
                best = Some((h, s.lambda));
            }
        }
    }
    let (validation_hinge, lambda) = best.ok_or_else(|| {
        Error::AllCandidatesFailed(format!("all {} lambda values failed", scores.len()))
    })?;
    Ok(LambdaSelection {
        lambda,
        validation_hinge,
        scores,
        n_train: train.len(),
        n_val: val.len(),
    })
}

/// Full two-stage weight learning on an already balanced set: select lambda,
/// then retrain on every example with the chosen value.
pub fn fit_tsmkl(
    set: &KExampleSet<'_>,
    base: &MklConfig,
    val_fraction: f64,
) -> Result<(MklModel, LambdaSelection)> {
    let selection = select_lambda(set, base, val_fraction)?;
    let mut model = pegasos_train(
        set,
        &MklConfig {
            lambda: selection.lambda,
            ..base.clone()
        },
    )?;
    model.validation_hinge = Some(selection.validation_hinge);
    if model.collapsed {
        log::warn!(
            "selected lambda {:e} gives all-zero kernel weights",
            selection.lambda
        );
    }
    Ok((model, selection))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub gamma: f64,
    pub r: f64,
    pub delta: f64,
    pub n: usize,
    pub empirical_hinge: f64,
}

/// Right-hand side of the concentration bound on the expected K-space hinge
/// loss: `empirical + sqrt(2 (1 + R^2/gamma)^2 ln(1/delta) / n)`.
pub fn concentration_bound(b: &BoundInputs) -> Result<f64> {
    if !(b.gamma > 0.0
        && b.r > 0.0
        && b.delta > 0.0
        && b.delta < 1.0
        && b.n > 0
        && b.empirical_hinge >= 0.0)
    {
        return Err(Error::InvalidArgument(format!(
            "invalid bound inputs {b:?}"
        )));
    }
    Ok(b.empirical_hinge + bound_slack(b))
}

pub fn bound_slack(b: &BoundInputs) -> f64 {
    let lead = 1.0 + b.r * b.r / b.gamma;
    (2.0 * lead * lead * (1.0 / b.delta).ln() / b.n as f64).sqrt()
}

/// Mean of `[1 - t mu.z / gamma]_+` over off-diagonal pairs, the empirical term of the bound.
pub fn margin_hinge_offdiag(mu: &[f64], set: &KExampleSet<'_>, gamma: f64) -> f64 {
    let (sum, count) = set
        .pairs()
        .iter()
        .enumerate()
        .filter(|(_, (i, j))| i != j)
        .fold((0.0, 0usize), |(s, c), (k, _)| {
            (
                s + (1.0 - set.label(k) * set.dot(mu, k) / gamma).max(0.0),
                c + 1,
            )
        });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub lambda: f64,
    pub k_hinge: f64,
    pub k_accuracy: f64,
    pub data_accuracy: f64,
    pub steps: usize,
}

/// One record per grid value: validation K-hinge, validation K-accuracy and
/// the downstream accuracy reported by `evaluate` for the weights learned on
/// the training part of the split. Failing grid values are skipped.
pub fn lambda_sweep_report<F>(
    set: &KExampleSet<'_>,
    base: &MklConfig,
    val_fraction: f64,
    evaluate: F,
) -> Result<Vec<SweepRecord>>
where
    F: Fn(&MklModel) -> Result<f64> + Sync,
{
    let (train, val) = set.split(val_fraction, base.seed)?;
    let records: Vec<Option<SweepRecord>> = base
        .lambda_grid
        .par_iter()
        .enumerate()
        .map(|(idx, &lambda)| {
            let run = || -> Result<SweepRecord> {
                let model = pegasos_train(&train, &grid_config(base, lambda, idx))?;
                Ok(SweepRecord {
                    lambda,
                    k_hinge: hinge_loss(&model.mu, &val),
                    k_accuracy: k_accuracy(&model.mu, &val),
                    data_accuracy: evaluate(&model)?,
                    steps: model.steps_run,
                })
            };
            match run() {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("sweep: lambda {lambda:e} skipped: {e}");
                    None
                }
            }
        })
        .collect();
    Ok(records.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn two_point_set() -> KExampleSet<'static> {
        KExampleSet::from_points(array![[1.0, 1.0], [-1.0, -1.0]], &[1, -1]).unwrap()
    }

    #[test]
    fn hinge_at_zero_is_one() {
        assert_eq!(hinge_loss(&[0.0, 0.0], &two_point_set()), 1.0);
    }

    #[test]
    fn hinge_hand_values() {
        let one = KExampleSet::from_points(array![[2.0, 0.0]], &[1]).unwrap();
        assert_eq!(hinge_loss(&[1.0, 0.0], &one), 0.0);
        let two = KExampleSet::from_points(array![[0.5], [0.5]], &[1, -1]).unwrap();
        assert_eq!(hinge_loss(&[1.0], &two), 1.0);
    }

    #[test]
    fn lambda_grid_values() {
        let g = default_lambda_grid();
        assert_eq!(&g[..3], &[100.0, 25.0, 6.25]);
        assert_eq!(g.len(), 17);
        assert!((g[16] - 2.3283064365386963e-8).abs() < 1e-20);
        assert!(g[16] / 4.0 < 1e-8);
        assert!(g.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
    }

    #[test]
    fn strong_regularizer_keeps_weights_tiny() {
        let cfg = MklConfig {
            lambda: 1e6,
            num_steps: 500,
            ..MklConfig::default()
        };
        let m = pegasos_train(&two_point_set(), &cfg).unwrap();
        let norm = m.mu.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-3, "{norm}");
    }

    #[test]
    fn every_iterate_is_non_negative() {
        let z = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let t: Vec<i8> = (0..30).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        let set = KExampleSet::from_points(z, &t).unwrap();
        let cfg = MklConfig {
            lambda: 0.05,
            num_steps: 300,
            batch_size: 7,
            ..MklConfig::default()
        };
        let mut checked = 0;
        pegasos_train_observed(&set, &cfg, |_, mu| {
            assert!(mu.iter().all(|&m| m >= 0.0));
            checked += 1;
        })
        .unwrap();
        assert_eq!(checked, 300);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = MklConfig {
            lambda: 0.01,
            num_steps: 200,
            seed: 42,
            ..MklConfig::default()
        };
        let a = pegasos_train(&two_point_set(), &cfg).unwrap();
        let b = pegasos_train(&two_point_set(), &cfg).unwrap();
        assert_eq!(a.mu, b.mu);
    }

    #[test]
    fn missing_k_class_is_an_error() {
        let set = KExampleSet::from_points(array![[1.0]], &[1]).unwrap();
        assert!(matches!(
            pegasos_train(&set, &MklConfig::default()),
            Err(Error::MissingKClass { .. })
        ));
    }

    #[test]
    fn tail_average_runs() {
        let cfg = MklConfig {
            lambda: 0.01,
            num_steps: 2_000,
            tail_average: Some(0.5),
            ..MklConfig::default()
        };
        let m = pegasos_train(&two_point_set(), &cfg).unwrap();
        assert!((m.mu[0] - 0.5).abs() < 0.1 && (m.mu[1] - 0.5).abs() < 0.1);
    }

    #[test]
    fn select_lambda_singleton_and_membership() {
        let z = Array2::from_shape_fn((20, 2), |(i, _)| if i % 2 == 0 { 1.0 } else { -1.0 });
        let t: Vec<i8> = (0..20).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let set = KExampleSet::from_points(z, &t).unwrap();
        let cfg = MklConfig {
            lambda_grid: vec![0.3],
            num_steps: 100,
            ..MklConfig::default()
        };
        assert_eq!(select_lambda(&set, &cfg, 0.2).unwrap().lambda, 0.3);

        let cfg = MklConfig {
            num_steps: 100,
            ..MklConfig::default()
        };
        let sel = select_lambda(&set, &cfg, 0.2).unwrap();
        assert!(default_lambda_grid().contains(&sel.lambda));
        assert_eq!(sel.scores.len(), 17);
    }

    #[test]
    fn select_lambda_needs_five_examples() {
        assert!(select_lambda(&two_point_set(), &MklConfig::default(), 0.2).is_err());
    }

    #[test]
    fn bound_hand_value() {
        let b = BoundInputs {
            gamma: 1.0,
            r: 1.0,
            delta: 0.05,
            n: 100,
            empirical_hinge: 0.0,
        };
        assert!((concentration_bound(&b).unwrap() - 0.48960).abs() < 1e-4);
    }

    #[test]
    fn bound_limits() {
        let mut b = BoundInputs {
            gamma: 0.5,
            r: 2.0,
            delta: 1.0 - 1e-12,
            n: 50,
            empirical_hinge: 0.3,
        };
        assert!((concentration_bound(&b).unwrap() - 0.3).abs() < 1e-4);
        b.delta = 1.0;
        assert!(concentration_bound(&b).is_err());
    }

    #[test]
    fn sweep_with_one_lambda() {
        let z = Array2::from_shape_fn((20, 2), |(i, _)| if i % 2 == 0 { 1.0 } else { -1.0 });
        let t: Vec<i8> = (0..20).map(|i| if i % 2 == 0 { 1 } else { -1 }).collect();
        let set = KExampleSet::from_points(z, &t).unwrap();
        let cfg = MklConfig {
            lambda_grid: vec![0.1],
            num_steps: 50,
            ..MklConfig::default()
        };
        let recs = lambda_sweep_report(&set, &cfg, 0.2, |_| Ok(0.75)).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].data_accuracy, 0.75);
        assert!(recs[0].k_hinge >= 0.0 && recs[0].k_accuracy >= 0.0);

        let cfg = MklConfig {
            lambda_grid: vec![1.0, 0.1],
            num_steps: 50,
            ..MklConfig::default()
        };
        let recs = lambda_sweep_report(&set, &cfg, 0.2, |m| {
            if m.chosen_lambda == Some(1.0) {
                Err(Error::InvalidArgument("boom".into()))
            } else {
                Ok(0.5)
            }
        })
        .unwrap();
        assert_eq!(recs.len(), 1);
    }

    #[test]
    fn model_json_fields() {
        let m = pegasos_train(
            &two_point_set(),
            &MklConfig {
                num_steps: 10,
                ..MklConfig::default()
            },
        )
        .unwrap();
        let v = serde_json::to_value(&m).unwrap();
        for key in [
            "mu",
            "chosen_lambda",
            "final_train_hinge",
            "validation_hinge",
            "steps_run",
            "seed",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: MklModel = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
    }
}
