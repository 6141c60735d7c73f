use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use kweave_cli::config::{DatasetConfig, MklSettings, SplitConfig, SvmSettings};
use kweave_cli::experiment::{learn_weights, preprocess, run_sweep_mean, train_svm};
use kweave_cli::report::{from_json, write_file};
use kweave_cli::{
    emit_report_dir, markdown_table, run_experiment, run_sweep, sweep_tsv, ConfigError,
    ExperimentConfig,
};
use kweave_core::kernels::io::{load_bank, save_bank, StoredBank, TestBlock};
use kweave_core::kernels::recipe_specs;
use kweave_core::metrics::{evaluate, filter_unsure};
use kweave_core::svm::CSelection;
use kweave_core::{
    combine, combine_cross, holdout_split, load_dataset, BankRecipe, DataFormat, KernelBank,
    MklModel, OvrModel, WeightMethod,
};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "kweave", version, about = "Two-stage multiple kernel learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel bank construction.
    #[command(subcommand)]
    Kernels(KernelsCmd),
    /// Learn kernel weights from a stored bank.
    Learn(LearnArgs),
    /// SVM training on the combined kernel.
    #[command(subcommand)]
    Svm(SvmCmd),
    /// Evaluate a trained model on the bank's test block.
    Evaluate(EvaluateArgs),
    /// Full multi-split experiments.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Diagnostics and tables.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Subcommand)]
enum KernelsCmd {
    Build(BuildArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "csv")]
    format: DataFormat,
    #[arg(long, default_value = "uci_full")]
    recipe: BankRecipe,
    #[arg(long)]
    out: PathBuf,
    /// Hold out a test part and store its cross blocks.
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_stratify: bool,
    #[arg(long)]
    no_zscore: bool,
    /// Write TSV matrices instead of binary.
    #[arg(long)]
    text: bool,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    method: WeightMethod,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = kweave_core::mkl::DEFAULT_BATCH_SIZE)]
    batch_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SvmCmd {
    Train(SvmTrainArgs),
}

#[derive(Args)]
struct SvmTrainArgs {
    #[arg(long)]
    bank: PathBuf,
    /// Weights written by `learn`.
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, value_delimiter = ',')]
    c_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = kweave_core::svm::DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    drop_fraction: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Lambda sweep written as TSV: one split, or the mean over all splits.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        split: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Markdown table over one or more JSON reports.
    Table {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize, Deserialize)]
struct TrainedModel {
    weights: MklModel,
    selection: CSelection,
    svm: OvrModel,
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("parsing {}: {e}", path.display())))
}

fn stage_config(bank: &Path, mkl: MklSettings, svm: SvmSettings) -> ExperimentConfig {
    ExperimentConfig {
        name: None,
        dataset: DatasetConfig {
            path: bank.to_path_buf(),
            format: DataFormat::Csv,
        },
        recipe: BankRecipe::UciFull,
        methods: vec![WeightMethod::Tsmkl],
        splits: SplitConfig::default(),
        mkl,
        svm,
        drop_fraction: 0.0,
        zscore: true,
        output_dir: None,
    }
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path).map_err(|e| config_err(format!("{e:#}")))?;
    cfg.check_paths()
        .map_err(|e| config_err(format!("{e:#}")))?;
    Ok(cfg)
}

fn kernels_build(a: BuildArgs) -> anyhow::Result<()> {
    if !a.data.exists() {
        return Err(config_err(format!(
            "dataset {} does not exist",
            a.data.display()
        )));
    }
    let ds = load_dataset(&a.data, a.format)?;
    let (train, test) = match a.train_fraction {
        Some(f) => {
            let plan = holdout_split(&ds, f, a.seed, !a.no_stratify)?;
            (plan.train, Some(plan.test))
        }
        None => ((0..ds.n()).collect(), None),
    };
    let test_idx = test.clone().unwrap_or_default();
    let (train_x, test_x) = preprocess(
        &ds.features_of(&train),
        &ds.features_of(&test_idx),
        !a.no_zscore,
    );
    let mut bank = KernelBank::fit(&recipe_specs(a.recipe, ds.d()), &train_x, true)?;
    bank.meta.zscore = !a.no_zscore;
    bank.meta.dataset_hash = ds.content_hash();
    let cross = match &test {
        Some(idx) => Some((
            bank.cross_grams(&test_x, &train_x)?,
            TestBlock {
                m: idx.len(),
                instance_ids: ds.ids_of(idx),
                labels: ds.labels_of(idx),
            },
        )),
        None => None,
    };
    let stored = StoredBank::from_bank(
        &bank,
        ds.ids_of(&train),
        ds.labels_of(&train),
        ds.class_names.clone(),
        cross,
    );
    save_bank(&a.out, &stored, a.text)?;
    println!(
        "wrote {} kernels over {} instances to {}",
        bank.p(),
        bank.n(),
        a.out.display()
    );
    Ok(())
}

fn learn(a: LearnArgs) -> anyhow::Result<()> {
    let bank = load_bank(&a.bank)?;
    let mkl = MklSettings {
        steps: a.steps,
        batch_size: a.batch_size,
        ..MklSettings::default()
    };
    let cfg = stage_config(&a.bank, mkl, SvmSettings::default());
    let c = bank.meta.class_names.len();
    let model = learn_weights(&bank.grams, &bank.meta.labels, c, a.method, &cfg, a.seed)?;
    write_file(&a.out, &serde_json::to_string_pretty(&model)?)?;
    println!(
        "{} nonzero weights of {}",
        model.nonzero_count(),
        model.mu.len()
    );
    Ok(())
}

fn svm_train(a: SvmTrainArgs) -> anyhow::Result<()> {
    let bank = load_bank(&a.bank)?;
    let weights: MklModel = read_json(&a.weights)?;
    let svm = SvmSettings {
        c_grid: a
            .c_grid
            .unwrap_or_else(|| kweave_core::svm::DEFAULT_C_GRID.to_vec()),
        folds: a.folds,
        ..SvmSettings::default()
    };
    let cfg = stage_config(&a.bank, MklSettings::default(), svm);
    let gram = combine(&bank.grams, &weights.mu)?;
    let (model, selection) = train_svm(
        &gram,
        &bank.meta.labels,
        bank.meta.class_names.len(),
        &cfg,
        a.seed,
    )?;
    println!(
        "C = {} (cv accuracy {:.4})",
        selection.c, selection.cv_accuracy
    );
    let trained = TrainedModel {
        weights,
        selection,
        svm: model,
    };
    write_file(&a.out, &serde_json::to_string_pretty(&trained)?)
}

fn evaluate_cmd(a: EvaluateArgs) -> anyhow::Result<()> {
    let bank = load_bank(&a.bank)?;
    let model: TrainedModel = read_json(&a.model)?;
    let (cross, test) = match (&bank.cross, &bank.meta.test) {
        (Some(c), Some(t)) => (c, t),
        _ => {
            return Err(config_err(
                "bank has no test block; build it with --train-fraction",
            ))
        }
    };
    let c = bank.meta.class_names.len();
    let pred = model
        .svm
        .predict(&combine_cross(cross, &model.weights.mu)?)?;
    let report = if a.drop_fraction > 0.0 {
        filter_unsure(
            &pred.confidence(),
            &pred.labels,
            &test.labels,
            c,
            a.drop_fraction,
        )?
        .1
    } else {
        evaluate(&test.labels, &pred.labels, c)?
    };
    let json = serde_json::to_string_pretty(&report)?;
    match a.out {
        Some(p) => write_file(&p, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn experiment_run(config: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let report = run_experiment(&cfg)?;
    print!("{}", markdown_table(&[&report]));
    if let Some(dir) = out.or_else(|| cfg.output_dir.clone()) {
        emit_report_dir(&report, &dir)?;
    }
    Ok(())
}

fn report_sweep(config: &Path, split: Option<usize>, out: &Path) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let ds = load_dataset(&cfg.dataset.path, cfg.dataset.format)?;
    let records = match split {
        Some(i) => run_sweep(&cfg, &ds, i)?,
        None => run_sweep_mean(&cfg, &ds)?,
    };
    let hinge: Vec<f64> = records.iter().map(|r| r.k_hinge).collect();
    let acc: Vec<f64> = records.iter().map(|r| r.data_accuracy).collect();
    if let Some(rho) = kweave_core::metrics::spearman(&hinge, &acc) {
        println!("spearman(k_hinge, data_accuracy) = {rho:.4}");
    }
    write_file(out, &sweep_tsv(&records))
}

fn report_table(paths: &[PathBuf], out: Option<PathBuf>) -> anyhow::Result<()> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("reading {}: {e}", p.display())))?;
            from_json(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let table = markdown_table(&reports.iter().collect::<Vec<_>>());
    match out {
        Some(p) => write_file(&p, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("KWEAVE_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            config_err(format!(
                "KWEAVE_THREADS must be a positive integer, got `{v}`"
            ))
        })?;
        if n == 0 {
            return Err(config_err("KWEAVE_THREADS must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Kernels(KernelsCmd::Build(a)) => kernels_build(a),
        Command::Learn(a) => learn(a),
        Command::Svm(SvmCmd::Train(a)) => svm_train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(ExperimentCmd::Run { config, out }) => experiment_run(&config, out),
        Command::Report(ReportCmd::Sweep { config, split, out }) => {
            report_sweep(&config, split, &out)
        }
        Command::Report(ReportCmd::Table { reports, out }) => report_table(&reports, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
