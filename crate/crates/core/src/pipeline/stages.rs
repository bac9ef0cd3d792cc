//! Stage building blocks shared by the experiment runner and the
//! command-line subcommands.
//!
//! The in-memory helpers (`learn_net`, `learn_codes`, `classify`) do the
//! work; the file-based stages wrap them around an artifact directory:
//!
//! | stage        | reads                                   | writes                          |
//! |--------------|-----------------------------------------|---------------------------------|
//! | `walk`       | edge list                               | `edges.txt`, `remap.csv`, `walks.txt` |
//! | `structure`  | `walks.txt`                             | `structure.bin`                 |
//! | `similarity` | `structure.bin`, label file             | `split.csv`, `similarity.csv`   |
//! | `dkl_train`  | `structure.bin`, `split.csv`            | `net.txt`, `training_log.csv`   |
//! | `hash`       | `structure.bin`, `net.txt`, `similarity.csv` | `hash_model.bin`, `codes.txt` |
//! | `classify`   | `codes.txt`, `split.csv`                | `predictions.csv`               |

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{load_graph, load_labels_with, make_split_with, Graph, LabelMap, Split, UnknownNodes};
use crate::hashing::{encode, select_landmarks, solve_hashing_with, HashCodes, HashDiagnostics, HashModel};
use crate::kernel::DeepKernelNet;
use crate::linalg;
use crate::mkl::{self, TrainOutcome};
use crate::similarity::{compute_similarity_with, SimilarityMatrix};
use crate::svm::{accuracy, train_linear_svm, LinearSvmOptions};
use crate::walker::{build_structure_matrix, generate_walks, StructureMatrix, WalkSet};

use super::ExperimentConfig;

pub fn unknown_policy(cfg: &ExperimentConfig) -> UnknownNodes {
    if cfg.skip_unknown_labels {
        UnknownNodes::Skip
    } else {
        UnknownNodes::Error
    }
}

/// Uniform-`μ` network for the configured architecture, with RBF
/// bandwidths calibrated on `p` when requested.
pub fn initial_net(cfg: &ExperimentConfig, p: &StructureMatrix) -> Result<DeepKernelNet> {
    let mut net = DeepKernelNet::uniform(cfg.layers, cfg.kernels.clone())?.with_scaling(cfg.feature_scaling);
    if cfg.rbf_median {
        net.calibrate_rbf(p)?;
    }
    Ok(net)
}

pub fn learn_net(cfg: &ExperimentConfig, p: &StructureMatrix, labels: &LabelMap, split: &Split) -> Result<TrainOutcome> {
    let net = initial_net(cfg, p)?;
    mkl::train(p, &net, labels, split, &cfg.trainer)
}

pub struct CodeOutcome {
    pub model: HashModel,
    pub diagnostics: HashDiagnostics,
    pub codes: HashCodes,
}

/// Draws landmarks with `seed`, solves for the hash functions and encodes
/// every node.
pub fn learn_codes(
    cfg: &ExperimentConfig,
    p: &StructureMatrix,
    net: &DeepKernelNet,
    s: &SimilarityMatrix,
    seed: u64,
) -> Result<CodeOutcome> {
    let n = p.n();
    let landmarks = select_landmarks(n, cfg.landmarks, seed)?;
    let k_rn = net.forward_slice(p, &landmarks)?;
    let k_rr = linalg::select_columns(&k_rn, &landmarks);
    let (model, diagnostics) = solve_hashing_with(&k_rn, &k_rr, s, cfg.code_bits, cfg.lambda, &cfg.hashing)?;
    let model = model.with_landmarks(landmarks)?;
    let nodes: Vec<usize> = (0..n).collect();
    let codes = encode(&k_rn, &model, &nodes)?;
    log::debug!(
        "hashing: objective {:e}, constraint error {:e}, eigen residual {:e}",
        diagnostics.objective,
        diagnostics.constraint_error,
        diagnostics.eigen_residual
    );
    Ok(CodeOutcome {
        model,
        diagnostics,
        codes,
    })
}

pub struct Classification {
    /// `(node, predicted class, true class)` for every test node.
    pub predictions: Vec<(usize, usize, usize)>,
    pub accuracy: f64,
}

/// One-vs-rest linear SVM on the training codes, scored on the test nodes.
pub fn classify(cfg: &ExperimentConfig, codes: &HashCodes, labels: &LabelMap, split: &Split) -> Result<Classification> {
    let class_of = |i: usize| {
        labels
            .get(i)
            .ok_or_else(|| Error::Split(format!("node {i} has no label")))
    };
    let x_train = codes.rows_for(&split.train)?;
    let y_train: Vec<usize> = split.train.iter().map(|&i| class_of(i)).collect::<Result<_>>()?;
    let options = LinearSvmOptions {
        c: cfg.classifier_c,
        ..Default::default()
    };
    let model = train_linear_svm(&x_train, &y_train, labels.num_classes(), &options)?;
    let x_test = codes.rows_for(&split.test)?;
    let predicted = model.predict(&x_test)?;
    let actual: Vec<usize> = split.test.iter().map(|&i| class_of(i)).collect::<Result<_>>()?;
    let acc = accuracy(&predicted, &actual)?;
    let predictions = split
        .test
        .iter()
        .zip(predicted.iter().zip(&actual))
        .map(|(&n, (&p, &a))| (n, p, a))
        .collect();
    Ok(Classification {
        predictions,
        accuracy: acc,
    })
}

pub fn write_predictions(graph: &Graph, labels: &LabelMap, c: &Classification, path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["node_index", "node", "predicted", "actual"])
        .map_err(csv_err)?;
    for &(node, p, a) in &c.predictions {
        w.write_record([
            node.to_string().as_str(),
            graph.token(node),
            labels.class_name(p),
            labels.class_name(a),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn saved_labels(cfg: &ExperimentConfig, graph: &Graph) -> Result<LabelMap> {
    load_labels_with(&cfg.labels, graph, unknown_policy(cfg))
}

/// Loads the edge list and samples walks.
pub fn walk(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    ensure_dir(out)?;
    let graph = load_graph(&cfg.edges)?;
    graph.save(out)?;
    let walks = generate_walks(&graph, &cfg.walk)?;
    walks.write(&out.join("walks.txt"))?;
    Ok(format!(
        "{} nodes, {} edges, {} walks",
        graph.num_nodes(),
        graph.num_edges(),
        walks.len()
    ))
}

pub fn structure(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let graph = Graph::load_saved(out)?;
    let walks = WalkSet::read(&out.join("walks.txt"))?;
    let p = build_structure_matrix(&walks, &cfg.walk, graph.num_nodes())?;
    p.write_binary(&out.join("structure.bin"))?;
    Ok(format!("structure matrix {0}x{0}", p.n()))
}

pub fn similarity(cfg: &ExperimentConfig, out: &Path, ratio: f64, seed: u64) -> Result<String> {
    let graph = Graph::load_saved(out)?;
    let labels = saved_labels(cfg, &graph)?;
    let split = make_split_with(&labels, ratio, seed, cfg.split)?;
    split.save(&out.join("split.csv"))?;
    let p = StructureMatrix::read_binary(&out.join("structure.bin"))?;
    let s = compute_similarity_with(&p, &labels, &split, cfg.supervision)?;
    s.write_csv(&out.join("similarity.csv"))?;
    Ok(format!(
        "{} train / {} test nodes, {} supervised pairs",
        split.train.len(),
        split.test.len(),
        s.supervised_pairs()
    ))
}

pub fn dkl_train(cfg: &ExperimentConfig, out: &Path, ratio: f64, seed: u64) -> Result<String> {
    let graph = Graph::load_saved(out)?;
    let labels = saved_labels(cfg, &graph)?;
    let split = Split::load(&out.join("split.csv"), ratio, seed)?;
    let p = StructureMatrix::read_binary(&out.join("structure.bin"))?;
    let outcome = learn_net(cfg, &p, &labels, &split)?;
    outcome.net.save(&out.join("net.txt"))?;
    mkl::write_log(&outcome.log, &out.join("training_log.csv"))?;
    let last = outcome.log.last().map_or(f64::NAN, |r| r.t_span);
    Ok(format!("{} iterations, final span bound {last:.6}", outcome.log.len().saturating_sub(1)))
}

pub fn hash(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<String> {
    let p = StructureMatrix::read_binary(&out.join("structure.bin"))?;
    let net = DeepKernelNet::load(&out.join("net.txt"))?;
    let s = SimilarityMatrix::read_csv(&out.join("similarity.csv"))?;
    let result = learn_codes(cfg, &p, &net, &s, seed)?;
    result.model.write_binary(&out.join("hash_model.bin"))?;
    result.codes.write(&out.join("codes.txt"))?;
    let d = &result.diagnostics;
    Ok(format!(
        "{} bits, objective {:.6e}, constraint error {:.3e}",
        d.bits, d.objective, d.constraint_error
    ))
}

pub fn classify_stage(cfg: &ExperimentConfig, out: &Path, ratio: f64, seed: u64) -> Result<f64> {
    let graph = Graph::load_saved(out)?;
    let labels = saved_labels(cfg, &graph)?;
    let split = Split::load(&out.join("split.csv"), ratio, seed)?;
    let codes = HashCodes::read(&out.join("codes.txt"))?;
    let c = classify(cfg, &codes, &labels, &split)?;
    write_predictions(&graph, &labels, &c, &out.join("predictions.csv"))?;
    Ok(c.accuracy)
}
