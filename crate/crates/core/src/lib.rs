//! Two-stage multiple kernel learning.
//!
//! Kernel weights are learned as a non-negative linear classifier over pairs
//! of training instances ("K-space"): each pair contributes the vector of its
//! base-kernel values, labeled `+1` when the two instances share a class.
//! The learned combination is then handed to an ordinary kernel SVM.
//!
//! The modules follow the pipeline order:
//! [`data`] → [`kernels`] → [`kspace`] → [`mkl`] / [`baselines`] → [`svm`] → [`metrics`].

pub mod baselines;
pub mod data;
pub mod error;
pub mod kernels;
pub mod kspace;
pub mod metrics;
pub mod mkl;
pub mod svm;

pub use data::{
    holdout_split, kfold_plan, load_dataset, DataFormat, Dataset, SplitKind, SplitPlan,
    Standardizer,
};
pub use error::{Error, Result};
pub use kernels::{
    build_kernel_bank, center_standardize_apply, center_standardize_fit, combine, combine_cross,
    compute_cross, compute_gram, BankRecipe, CenterStats, CrossGram, GramMatrix, GramState,
    KernelBank, KernelFamily, KernelSpec,
};
pub use kspace::{balance, make_kexamples, sample_batch, KBatch, KExampleSet};
pub use metrics::{evaluate, filter_unsure, MetricsReport};
pub use mkl::{
    concentration_bound, default_lambda_grid, hinge_loss, lambda_sweep_report, pegasos_train,
    select_lambda, BoundInputs, MklConfig, MklModel, WeightMethod,
};
pub use svm::{decision_values, ovr_train, select_c, smo_train, OvrModel, SmoOptions, SvmModel};
