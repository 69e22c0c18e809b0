//! Local structure preserving (LSP) knowledge distillation for graph
//! convolutional networks.
//!
//! A student GCN is trained to reproduce, for every node, the distribution
//! of similarities between that node and its neighbors in the teacher's
//! feature space. The crate carries its own reverse-mode autodiff, GAT and
//! DGCNN models, the LSP loss with four similarity kernels, KD/FitNet/AT
//! baselines, training loops, dataset formats and synthetic corpora.

pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod lsp;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use baselines::Distiller;
pub use data::{Dataset, GraphDataset, PointCloudDataset, Split};
pub use error::{Error, Result};
pub use graph::{edge_union, knn_graph, EdgeUnionView, Graph, Neighborhoods, Provenance};
pub use layers::{DgcnnSpec, GatSpec, Model, ModelInput, ModelSpec, ParamSet, SkipRule, Task};
pub use lsp::{lsp_loss, GraphMode, Kernel, LspPairing};
pub use tensor::Tensor;
pub use train::{
    run_distillation, train_model, Metrics, OptimConfig, Optimizer, RunReport, Teacher,
    TrainOutcome,
};
