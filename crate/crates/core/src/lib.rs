//! Deep kernel supervised hashing for node classification.
//!
//! The pipeline turns an undirected, partially labeled graph into compact
//! `{-1, +1}` codes per node and classifies the unlabeled nodes from them:
//!
//! 1. [`walker`] samples truncated random walks and accumulates a
//!    distance-weighted co-occurrence ("structure") matrix.
//! 2. [`similarity`] merges structure distance with label agreement into a
//!    sparse supervision matrix.
//! 3. [`kernel`] evaluates a layered multiple-kernel network over the
//!    structure matrix, and [`mkl`] fits its mixing weights by minimizing
//!    the SVM span bound.
//! 4. [`hashing`] learns landmark-based hash functions from the learned
//!    kernel by solving a supervised Laplacian eigenproblem.
//! 5. [`svm`] trains the one-vs-rest linear classifier on the codes.
//!
//! [`pipeline`] wires the stages together with artifact caching.

pub mod error;
pub mod graph;
pub mod hashing;
pub mod kernel;
pub mod linalg;
pub mod mkl;
pub mod pipeline;
pub mod similarity;
pub mod svm;
pub mod synthetic;
pub mod walker;

pub use error::{Error, Result};
pub use graph::{load_graph, load_labels, make_split, Graph, LabelMap, Split, SplitStrategy};
pub use hashing::{encode, select_landmarks, solve_hashing, HashCodes, HashModel};
pub use kernel::{DeepKernelNet, ElementaryKernel, FeatureScaling};
pub use mkl::{SpanBoundState, TrainerConfig};
pub use pipeline::{run_pipeline, run_sweep, ExperimentConfig, ResultTable, SweepParam};
pub use similarity::{compute_similarity, SimilarityMatrix};
pub use svm::{accuracy, KernelSvmModel, LinearSvmModel};
pub use walker::{build_structure_matrix, generate_walks, StructureMatrix, WalkConfig, WalkSet};

pub use nalgebra::{DMatrix, DVector};
