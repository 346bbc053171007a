//! Fairness-driven representation learning through submodular hard-sample
//! mining.
//!
//! The crate is organised bottom-up:
//!
//! * [`pool`]: labeled ground sets, `(t, s)` cell index, epoch subsampling
//! * [`kernel`]: cosine similarity kernels
//! * [`submodular`]: Facility-Location / Log-Determinant functions and their
//!   mutual-information combinators
//! * [`greedy`]: naive and lazy greedy maximization
//! * [`mine`]: anchor / hard-positive / hard-negative selection
//! * [`loss`]: FLCMI and LogDetCMI losses with analytic gradients
//! * [`train`]: two-stage desk-scale trainer
//! * [`fairness`]: accuracy and group-fairness metrics
//! * [`synth`]: synthetic datasets
//! * [`verify`]: oracle suites backing the `verify` command

pub mod error;
pub mod fairness;
pub mod greedy;
pub mod kernel;
pub mod loss;
pub mod mine;
pub mod pool;
pub mod submodular;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use fairness::{evaluate, EvalReport};
pub use greedy::{greedy_max, lazy_greedy_max, Objective, Selection, SelectionProblem};
pub use kernel::{cosine_kernel, sub_kernel, EmbeddingMatrix, SimilarityKernel};
pub use loss::{flcmi_loss, grad_check, logdetcmi_loss, LossKind, LossOutput, LossSpec};
pub use mine::{mine, MineConfig, MinedBatch, MinerKind};
pub use pool::{
    build_index, load_pool, subsample_epoch, AttributeIndex, EpochGroundSet, Item, LabeledPool,
};
pub use submodular::{BaseFunction, BaseKind};
pub use synth::{gen_fairbias, gen_two_cluster, FairBiasData, Scenario, SynthSpec};
pub use train::{
    encode, predict, stage1_train, stage2_train, Classifier, Encoder, EncoderKind, TrainConfig,
};
