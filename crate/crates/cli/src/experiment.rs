//! The end-to-end protocol: split, kernels, weights, SVM, metrics.

use std::time::Instant;

use anyhow::{anyhow, Context};
use kweave_core::baselines::{best_kernel, target_align, uniform_weights};
use kweave_core::kernels::recipe_specs;
use kweave_core::metrics::{evaluate, filter_unsure};
use kweave_core::mkl::{fit_tsmkl, lambda_sweep_report, SweepRecord};
use kweave_core::svm::CSelection;
use kweave_core::{
    balance, combine, combine_cross, holdout_split, kfold_plan, load_dataset, make_kexamples,
    ovr_train, select_c, CrossGram, Dataset, GramMatrix, KernelBank, MklConfig, MklModel, OvrModel,
    SmoOptions, SplitPlan, Standardizer, WeightMethod,
};
use ndarray::Array2;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::report::{
    Aggregate, ArtifactHashes, DatasetInfo, ExperimentReport, MethodReport, SplitOutcome,
    SplitRecord, StageTimings, WeightSummary,
};

// Tags for the independent random streams of one split.
const STREAM_BALANCE: u64 = 1;
const STREAM_MKL: u64 = 2;
const STREAM_ALIGN: u64 = 3;
const STREAM_FOLDS: u64 = 4;

/// Balanced K-sets up to this size are copied into a dense block before Pegasos.
pub const DENSE_KSET_BUDGET: usize = 1 << 30;

pub fn stream_seed(split_seed: u64, tag: u64) -> u64 {
    split_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag
}

/// One train/test split with its kernel bank and test-side cross blocks.
pub struct PreparedSplit {
    pub plan: SplitPlan,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
    pub bank: KernelBank,
    pub cross: Vec<CrossGram>,
    pub seconds: f64,
}

/// Feature standardization fit on `train` only, applied to both sides.
pub fn preprocess(
    train: &Array2<f64>,
    test: &Array2<f64>,
    zscore: bool,
) -> (Array2<f64>, Array2<f64>) {
    if zscore {
        let s = Standardizer::fit(train);
        (s.transform(train), s.transform(test))
    } else {
        (train.clone(), test.clone())
    }
}

pub fn prepare_split(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> anyhow::Result<PreparedSplit> {
    let start = Instant::now();
    let plan = holdout_split(ds, cfg.splits.train_fraction, seed, cfg.splits.stratified)?;
    let (train_x, test_x) = preprocess(
        &ds.features_of(&plan.train),
        &ds.features_of(&plan.test),
        cfg.zscore,
    );
    let mut bank = KernelBank::fit(&recipe_specs(cfg.recipe, ds.d()), &train_x, true)?;
    bank.meta.zscore = cfg.zscore;
    bank.meta.dataset_hash = ds.content_hash();
    let cross = bank.cross_grams(&test_x, &train_x)?;
    Ok(PreparedSplit {
        train_labels: ds.labels_of(&plan.train),
        test_labels: ds.labels_of(&plan.test),
        plan,
        bank,
        cross,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn mkl_config(cfg: &ExperimentConfig, n_train: usize, seed: u64) -> MklConfig {
    MklConfig {
        batch_size: cfg.mkl.batch_size,
        num_steps: cfg.mkl.steps_for(n_train),
        seed,
        lambda_grid: cfg.mkl.grid(),
        tail_average: cfg.mkl.tail_average,
        ..MklConfig::default()
    }
}

pub fn smo_options(cfg: &ExperimentConfig) -> SmoOptions {
    SmoOptions {
        tol: cfg.svm.tol,
        ..SmoOptions::default()
    }
}

/// Kernel weights from the training Grams and labels alone.
pub fn learn_weights(
    grams: &[GramMatrix],
    labels: &[usize],
    num_classes: usize,
    method: WeightMethod,
    cfg: &ExperimentConfig,
    split_seed: u64,
) -> anyhow::Result<MklModel> {
    let n = labels.len();
    match method {
        WeightMethod::Tsmkl => {
            let set = make_kexamples(labels, grams)?;
            let balanced = balance(&set, stream_seed(split_seed, STREAM_BALANCE))?;
            let base = mkl_config(cfg, n, stream_seed(split_seed, STREAM_MKL));
            let (model, selection) = if balanced.dense_bytes() <= DENSE_KSET_BUDGET {
                fit_tsmkl(&balanced.materialize(), &base, cfg.mkl.val_fraction)?
            } else {
                fit_tsmkl(&balanced, &base, cfg.mkl.val_fraction)?
            };
            log::debug!(
                "lambda {:e} (validation hinge {:.4})",
                selection.lambda,
                selection.validation_hinge
            );
            Ok(model)
        }
        WeightMethod::TargetAlign => {
            let r = target_align(grams, labels, stream_seed(split_seed, STREAM_ALIGN))?;
            if r.fell_back {
                log::warn!("target alignment fell back to uniform weights");
            }
            Ok(MklModel::fixed(method, r.mu))
        }
        WeightMethod::Average => Ok(MklModel::fixed(method, uniform_weights(grams.len())?)),
        WeightMethod::BestKernel => {
            let folds = kfold_plan(n, cfg.svm.folds, stream_seed(split_seed, STREAM_FOLDS))?;
            let best = best_kernel(
                grams,
                labels,
                num_classes,
                &folds,
                &cfg.svm.c_grid,
                &smo_options(cfg),
            )?;
            Ok(MklModel::fixed(method, best.mu))
        }
    }
}

/// Standardization, kernel bank and weight learning on the training rows of `ds` only.
pub fn fit_train_weights(
    ds: &Dataset,
    train: &[usize],
    method: WeightMethod,
    cfg: &ExperimentConfig,
    split_seed: u64,
) -> anyhow::Result<MklModel> {
    let x = ds.features_of(train);
    let x = if cfg.zscore {
        Standardizer::fit(&x).transform(&x)
    } else {
        x
    };
    let bank = KernelBank::fit(&recipe_specs(cfg.recipe, ds.d()), &x, true)?;
    learn_weights(
        &bank.train_grams,
        &ds.labels_of(train),
        ds.num_classes(),
        method,
        cfg,
        split_seed,
    )
}

/// Combined-kernel SVM with cross-validated C.
pub fn train_svm(
    gram: &GramMatrix,
    labels: &[usize],
    num_classes: usize,
    cfg: &ExperimentConfig,
    split_seed: u64,
) -> anyhow::Result<(OvrModel, CSelection)> {
    let opts = smo_options(cfg);
    let folds = kfold_plan(
        labels.len(),
        cfg.svm.folds,
        stream_seed(split_seed, STREAM_FOLDS),
    )?;
    let selection = select_c(gram, labels, num_classes, &folds, &cfg.svm.c_grid, &opts)?;
    let model = ovr_train(gram, labels, num_classes, selection.c, &opts)?;
    Ok((model, selection))
}

fn weight_summary(model: &MklModel, bank: &KernelBank) -> WeightSummary {
    WeightSummary {
        nonzero: model.nonzero_count(),
        top: model
            .top_weights(5)
            .into_iter()
            .map(|(i, w)| (bank.specs[i].label(), w))
            .collect(),
    }
}

fn run_method(
    split: &PreparedSplit,
    num_classes: usize,
    method: WeightMethod,
    cfg: &ExperimentConfig,
    seed: u64,
    timings: &mut StageTimings,
) -> anyhow::Result<SplitOutcome> {
    let grams = &split.bank.train_grams;
    let t = Instant::now();
    let model = learn_weights(grams, &split.train_labels, num_classes, method, cfg, seed)
        .with_context(|| format!("learning {} weights", method.as_str()))?;
    timings.learning = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let gram = combine(grams, &model.mu).context("combining kernels")?;
    let (svm, selection) = train_svm(&gram, &split.train_labels, num_classes, cfg, seed)?;
    timings.svm = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let cross = combine_cross(&split.cross, &model.mu)?;
    let pred = svm.predict(&cross)?;
    let metrics = evaluate(&split.test_labels, &pred.labels, num_classes)?;
    let filtered = if cfg.drop_fraction > 0.0 {
        Some(
            filter_unsure(
                &pred.confidence(),
                &pred.labels,
                &split.test_labels,
                num_classes,
                cfg.drop_fraction,
            )?
            .1,
        )
    } else {
        None
    };
    timings.evaluation = t.elapsed().as_secs_f64();

    Ok(SplitOutcome {
        chosen_lambda: model.chosen_lambda,
        chosen_c: selection.c,
        c_cv_accuracy: selection.cv_accuracy,
        weights: weight_summary(&model, &split.bank),
        metrics,
        filtered,
    })
}

fn run_split(ds: &Dataset, cfg: &ExperimentConfig, index: usize) -> Vec<SplitRecord> {
    let seed = cfg.splits.base_seed.wrapping_add(index as u64);
    let prepared = prepare_split(ds, cfg, seed);
    cfg.methods
        .iter()
        .map(|&method| {
            let mut timings = StageTimings::default();
            let (n_train, n_test, p, result) = match &prepared {
                Ok(split) => {
                    timings.kernels = split.seconds;
                    let r = run_method(split, ds.num_classes(), method, cfg, seed, &mut timings);
                    (
                        split.plan.train.len(),
                        split.plan.test.len(),
                        split.bank.p(),
                        r,
                    )
                }
                Err(e) => (0, 0, 0, Err(anyhow!("preparing split: {e:#}"))),
            };
            let (outcome, error) = match result {
                Ok(o) => (Some(o), None),
                Err(e) => {
                    log::warn!("split {index} ({}): {e:#}", method.as_str());
                    (None, Some(format!("{e:#}")))
                }
            };
            SplitRecord {
                index,
                seed,
                n_train,
                n_test,
                kernels_used: p,
                outcome,
                error,
                timings,
            }
        })
        .collect()
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("configs serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn dataset_name(cfg: &ExperimentConfig) -> String {
    cfg.name.clone().unwrap_or_else(|| {
        cfg.dataset
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentReport> {
    cfg.validate()?;
    cfg.check_paths()?;
    let ds = load_dataset(&cfg.dataset.path, cfg.dataset.format)?;
    run_experiment_on(cfg, &ds)
}

/// Runs the protocol on an already loaded dataset.
pub fn run_experiment_on(cfg: &ExperimentConfig, ds: &Dataset) -> anyhow::Result<ExperimentReport> {
    let per_split: Vec<Vec<SplitRecord>> = (0..cfg.splits.count)
        .into_par_iter()
        .map(|i| run_split(ds, cfg, i))
        .collect();

    let mut methods = Vec::with_capacity(cfg.methods.len());
    for (m, &method) in cfg.methods.iter().enumerate() {
        let splits: Vec<SplitRecord> = per_split.iter().map(|records| records[m].clone()).collect();
        let aggregate = Aggregate::from_splits(&splits).ok_or_else(|| {
            let first = splits
                .iter()
                .find_map(|s| s.error.clone())
                .unwrap_or_default();
            anyhow!("every split failed for {}: {first}", method.as_str())
        })?;
        methods.push(MethodReport {
            method,
            splits,
            aggregate,
        });
    }

    let mut notes = Vec::new();
    if ds.num_classes() > 2 && cfg.methods.contains(&WeightMethod::TargetAlign) {
        notes.push(
            "target alignment uses the +1/-1 same-class matrix as its multiclass target"
                .to_string(),
        );
    }
    let p = methods
        .iter()
        .flat_map(|m| m.splits.iter())
        .map(|s| s.kernels_used)
        .max()
        .unwrap_or(0);
    Ok(ExperimentReport {
        config: cfg.clone(),
        dataset: DatasetInfo {
            name: dataset_name(cfg),
            n: ds.n(),
            d: ds.d(),
            num_classes: ds.num_classes(),
            p,
        },
        methods,
        hashes: ArtifactHashes {
            dataset: ds.content_hash(),
            config: config_hash(cfg),
        },
        notes,
    })
}

/// Lambda sweep on one split: K-space hinge and accuracy on the validation
/// part of the balanced K-set against test accuracy of the resulting SVM.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    split_index: usize,
) -> anyhow::Result<Vec<SweepRecord>> {
    let seed = cfg.splits.base_seed.wrapping_add(split_index as u64);
    let split = prepare_split(ds, cfg, seed)?;
    let grams = &split.bank.train_grams;
    let set = make_kexamples(&split.train_labels, grams)?;
    let balanced = balance(&set, stream_seed(seed, STREAM_BALANCE))?;
    let balanced = if balanced.dense_bytes() <= DENSE_KSET_BUDGET {
        balanced.materialize()
    } else {
        balanced
    };
    let base = mkl_config(cfg, split.train_labels.len(), stream_seed(seed, STREAM_MKL));
    let c = ds.num_classes();
    let records = lambda_sweep_report(&balanced, &base, cfg.mkl.val_fraction, |model| {
        let gram = combine(grams, &model.mu)?;
        let (svm, _) = train_svm(&gram, &split.train_labels, c, cfg, seed)
            .map_err(|e| kweave_core::Error::InvalidArgument(format!("{e:#}")))?;
        let pred = svm.predict(&combine_cross(&split.cross, &model.mu)?)?;
        Ok(evaluate(&split.test_labels, &pred.labels, c)?.accuracy)
    })?;
    Ok(records)
}

/// Per-lambda means of [`run_sweep`] over every split of the config. A
/// lambda skipped on some split is averaged over the splits where it ran.
pub fn run_sweep_mean(cfg: &ExperimentConfig, ds: &Dataset) -> anyhow::Result<Vec<SweepRecord>> {
    let per_split: Vec<Vec<SweepRecord>> = (0..cfg.splits.count)
        .into_par_iter()
        .map(|i| run_sweep(cfg, ds, i))
        .collect::<anyhow::Result<_>>()?;
    let mut out = Vec::new();
    for lambda in cfg.mkl.grid() {
        let hits: Vec<&SweepRecord> = per_split
            .iter()
            .flatten()
            .filter(|r| r.lambda == lambda)
            .collect();
        if hits.is_empty() {
            continue;
        }
        let n = hits.len() as f64;
        out.push(SweepRecord {
            lambda,
            k_hinge: hits.iter().map(|r| r.k_hinge).sum::<f64>() / n,
            k_accuracy: hits.iter().map(|r| r.k_accuracy).sum::<f64>() / n,
            data_accuracy: hits.iter().map(|r| r.data_accuracy).sum::<f64>() / n,
            steps: hits[0].steps,
        });
    }
    Ok(out)
}
