//! Committees of small Levenberg-Marquardt trained perceptrons for biometric
//! identification and verification.
//!
//! The pipeline:
//!
//! 1. [`data`]: load or synthesize labeled feature vectors, split each
//!    person's trials into train and test, z-score on the training split.
//! 2. [`mlp`]: a `P × H × N` perceptron with tanh hidden units and linear
//!    outputs, trained toward +1 for the owner and −1 for everyone else.
//! 3. [`train`]: batch Levenberg-Marquardt, plain or with Bayesian
//!    regularization, on top of the normal equations in [`gauss_newton`].
//! 4. [`committee`]: average the raw outputs of several networks.
//! 5. [`eval`]: similarity tensor, identification rate, DET curve, min DCF.
//! 6. [`experiment`]: many random initializations per scheme, summarized
//!    per scheme with moment-matched Gaussians and the identification/DCF
//!    correlation.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

// `!(x > 0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod committee;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gauss_newton;
pub mod linalg;
pub mod mlp;
pub mod scalar;
pub mod train;

pub use checkpoint::Checkpoint;
pub use committee::{average_expert_mse, bem_reduction_check, Committee, StreamMode};
pub use data::{
    encode_target, generate_synthetic, load_dataset, save_dataset, split_train_test, FeatureVector,
    LabeledDataset, Normalizer, SplitTag, SyntheticSpec, TargetEncoding,
};
pub use error::{Error, Result};
pub use eval::{
    build_tensor, det_curve, far_frr_at, identification_rate, min_dcf, split_scores, DcfParams,
    DcfResult, DetCurve, ScoreSplit, Scorer, SimilarityTensor,
};
pub use experiment::{
    emit_histograms, emit_scatter, run_experiment, run_scheme, summarize, ExperimentConfig,
    ExperimentSummary, RunRecord, SchemeId,
};
pub use mlp::{init_weights, MlpModel, MlpTopology};
pub use scalar::Real;
pub use train::{
    fit, mse, train, train_lm, train_lm_bayes, Scheme, SolverKind, TrainConfig, TrainReport,
    TrainStatus,
};

pub type Model = MlpModel<f64>;
pub type Model32 = MlpModel<f32>;
pub type Dataset = LabeledDataset<f64>;
pub type Dataset32 = LabeledDataset<f32>;
pub type Ensemble = Committee<f64>;
pub type Tensor = SimilarityTensor<f64>;
pub type Config = TrainConfig<f64>;
