//! Deep restricted kernel machine (DRKM) classifiers.
//!
//! A DRKM stacks one or more kernel-PCA levels written in their dual form,
//! each with a hidden-feature matrix constrained to the Stiefel manifold,
//! and couples them to a primal classification head (a linear LSSVM or a
//! one-hidden-layer MLP). All levels and the head are trained jointly by
//! projected gradient descent; unseen inputs receive a latent representation
//! through a Gaussian kernel smoother over the training inputs.
//!
//! Everything numeric is generic over [`Real`] (implemented for `f32` and
//! `f64`). The `*64` / `*32` aliases below pin the scalar type for callers
//! that do not care.

pub mod baselines;
pub mod data;
pub mod error;
pub mod inference;
pub mod kernels;
pub mod mlp;
pub mod model;
pub mod optimizer;
pub mod persist;
pub mod real;
pub mod stiefel;

pub use error::{DrkmError, Result};
pub use real::Real;

pub use baselines::{
    kpca_eigen, lssvm_dual_train, mlp_baseline_train, EigenResult, LssvmDualModel,
    LssvmOneVsAll, MlpBaselineConfig, MlpClassifier,
};
pub use data::{
    load_csv, load_libsvm, load_paired, standardize_split, write_csv, Dataset, Scaling, SplitSizes,
    SplitSpec,
};
pub use inference::{
    evaluate_accuracy, predict, smoother_latent, train_drkm, train_one_vs_all, Classifier,
    DrkmModel, OneVsAllModel, SmootherSpec,
};
pub use kernels::{
    cross_kernel, eval_kernel, kernel_input_gradient, kernel_matrix, BlockKernelBuilder, KernelKind,
    KernelMatrix, KernelSpec,
};
pub use mlp::Mlp;
pub use model::{
    conjugate_features, eval_gradients, eval_objective, head_decision, DrkmState, Gradients,
    Head, HeadKind, HeadLssvm, HeadMlp, Level, LevelConfig, ObjectiveBreakdown, Problem, Targets,
};
pub use optimizer::{
    adam_update, backtracking_search, pgd_train, AdamConfig, AdamState, InitScheme,
    LineSearchConfig, LineSearchOutcome, Phase, StopReason, TrainConfig, TrainTrace,
};
pub use persist::{deserialize_model, load_model, save_model, serialize_model, ModelFile};
pub use stiefel::{is_on_stiefel, project_stiefel, random_stiefel, Projection, StiefelPoint};

use nalgebra::{DMatrix, DVector};

/// Dense column-major matrix over the crate scalar.
pub type Matrix<T> = DMatrix<T>;
/// Dense column vector over the crate scalar.
pub type Vector<T> = DVector<T>;

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type KernelSpec64 = KernelSpec<f64>;
pub type KernelSpec32 = KernelSpec<f32>;
pub type DrkmState64 = DrkmState<f64>;
pub type DrkmState32 = DrkmState<f32>;
pub type DrkmModel64 = DrkmModel<f64>;
pub type DrkmModel32 = DrkmModel<f32>;
pub type OneVsAllModel64 = OneVsAllModel<f64>;
pub type OneVsAllModel32 = OneVsAllModel<f32>;
pub type Classifier64 = Classifier<f64>;
pub type Classifier32 = Classifier<f32>;
pub type TrainConfig64 = TrainConfig<f64>;
pub type TrainConfig32 = TrainConfig<f32>;
