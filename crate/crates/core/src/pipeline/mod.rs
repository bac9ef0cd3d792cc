//! End-to-end experiments over `(ratio, seed)` cells.
//!
//! Walks, the structure matrix and its distance normalizer depend only on
//! the graph and walk settings, so they are computed once per run. Each
//! cell then splits the labels, trains the kernel, learns codes and scores
//! the linear classifier. Walks, structure matrices and trained networks
//! are cached (by default under `<out_dir>/cache`) keyed by the inputs that determine
//! them.

mod cache;
mod config;
pub mod stages;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

pub use cache::{cache_key, file_digest, StageCache};
pub use config::ExperimentConfig;

use crate::error::{Error, Result};
use crate::graph::{load_graph, load_labels_with, make_split_with, Graph, LabelMap};
use crate::kernel::DeepKernelNet;
use crate::mkl;
use crate::similarity::{max_squared_distance, similarity_with_normalizer};
use crate::walker::{build_structure_matrix, generate_walks, StructureMatrix, WalkSet};

/// Outcome of one `(ratio, seed)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub ratio: f64,
    pub seed: u64,
    /// `None` when a stage failed; `note` then holds the error.
    pub accuracy: Option<f64>,
    pub note: String,
}

/// Mean and sample standard deviation over the successful cells of one
/// ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub ratio: f64,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub successes: usize,
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<CellResult>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

impl ResultTable {
    /// One aggregate per distinct ratio, in first-seen order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut ratios: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !ratios.contains(&r.ratio) {
                ratios.push(r.ratio);
            }
        }
        ratios
            .into_iter()
            .map(|ratio| {
                let cells: Vec<&CellResult> = self.rows.iter().filter(|r| r.ratio == ratio).collect();
                let acc: Vec<f64> = cells.iter().filter_map(|r| r.accuracy).collect();
                let (mean, std) = mean_std(&acc);
                Aggregate {
                    ratio,
                    mean,
                    std,
                    successes: acc.len(),
                    cells: cells.len(),
                }
            })
            .collect()
    }

    /// `ratio,seed,accuracy,note` rows, each ratio followed by a `mean`
    /// row whose note carries the standard deviation.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(["ratio", "seed", "accuracy", "note"]).map_err(err)?;
        for agg in self.aggregates() {
            for r in self.rows.iter().filter(|r| r.ratio == agg.ratio) {
                let acc = r.accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
                w.write_record([r.ratio.to_string(), r.seed.to_string(), acc, r.note.clone()])
                    .map_err(err)?;
            }
            let mean = agg.mean.map(|a| format!("{a:.6}")).unwrap_or_default();
            let note = match agg.std {
                Some(s) => format!("std={s:.6} n={}/{}", agg.successes, agg.cells),
                None => format!("no successful cells (0/{})", agg.cells),
            };
            w.write_record([agg.ratio.to_string(), "mean".into(), mean, note])
                .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// Plain-text table of per-ratio means and standard deviations.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>8}  {:>10}  {:>10}  {:>7}", "ratio", "accuracy", "std", "cells");
        for a in self.aggregates() {
            let mean = a.mean.map_or("-".to_string(), |m| format!("{:.2}%", 100.0 * m));
            let std = a.std.map_or("-".to_string(), |m| format!("{:.2}", 100.0 * m));
            let _ = writeln!(
                s,
                "{:>8}  {:>10}  {:>10}  {:>7}",
                format!("{:.0}%", 100.0 * a.ratio),
                mean,
                std,
                format!("{}/{}", a.successes, a.cells)
            );
        }
        for r in self.rows.iter().filter(|r| r.accuracy.is_none()) {
            let _ = writeln!(s, "failed: ratio {} seed {}: {}", r.ratio, r.seed, r.note);
        }
        s
    }
}

fn stage_cache(cfg: &ExperimentConfig) -> StageCache {
    if cfg.cache {
        StageCache::new(cfg.cache_root(), cfg.verify_cache)
    } else {
        StageCache::disabled()
    }
}

/// Inputs shared by every cell of one run.
struct Shared {
    graph: Graph,
    labels: LabelMap,
    p: StructureMatrix,
    max_sq: f64,
    structure_key: String,
    labels_digest: String,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Shared> {
    cfg.validate()?;
    let cache = stage_cache(cfg);
    let graph = load_graph(&cfg.edges)?;
    let labels = load_labels_with(&cfg.labels, &graph, stages::unknown_policy(cfg))?;
    let edges_digest = file_digest(&cfg.edges)?;
    let labels_digest = file_digest(&cfg.labels)?;
    let w = &cfg.walk;
    let walks_key = cache_key(&[
        "walks",
        &edges_digest,
        &w.walk_length.to_string(),
        &w.walks_per_node.to_string(),
        &w.seed.to_string(),
    ]);
    let walks = cache.get_or_compute(
        "walks",
        &walks_key,
        "txt",
        || generate_walks(&graph, w),
        |v, p| v.write(p),
        WalkSet::read,
    )?;
    let structure_key = cache_key(&[
        "structure",
        &walks_key,
        &w.window_size.to_string(),
        &w.include_self_pairs.to_string(),
    ]);
    let p = cache.get_or_compute(
        "structure",
        &structure_key,
        "bin",
        || build_structure_matrix(&walks, w, graph.num_nodes()),
        |v, p| v.write_binary(p),
        StructureMatrix::read_binary,
    )?;
    let max_sq = max_squared_distance(p.matrix());
    log::info!(
        "{} nodes, {} edges, {} labeled, {} classes",
        graph.num_nodes(),
        graph.num_edges(),
        labels.len(),
        labels.num_classes()
    );
    Ok(Shared {
        graph,
        labels,
        p,
        max_sq,
        structure_key,
        labels_digest,
    })
}

fn cell_dir(cfg: &ExperimentConfig, ratio: f64, seed: u64) -> std::path::PathBuf {
    cfg.out_dir.join("cells").join(format!("ratio{ratio}-seed{seed}"))
}

fn run_cell(cfg: &ExperimentConfig, shared: &Shared, ratio: f64, seed: u64) -> Result<f64> {
    let cache = stage_cache(cfg);
    let dir = cell_dir(cfg, ratio, seed);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let split = make_split_with(&shared.labels, ratio, seed, cfg.split)?;
    split.save(&dir.join("split.csv"))?;
    let s = similarity_with_normalizer(&shared.p, &shared.labels, &split, cfg.supervision, shared.max_sq)?;
    let net_key = cache_key(&[
        "net",
        &shared.structure_key,
        &shared.labels_digest,
        &format!("{:?}", split.train),
        &cfg.layers.to_string(),
        &format!("{:?}", cfg.kernels),
        &format!("{:?}", cfg.feature_scaling),
        &cfg.rbf_median.to_string(),
        &format!("{:?}", cfg.trainer),
    ]);
    let log_path = dir.join("training_log.csv");
    let net = cache.get_or_compute(
        "net",
        &net_key,
        "txt",
        || {
            let outcome = stages::learn_net(cfg, &shared.p, &shared.labels, &split)?;
            mkl::write_log(&outcome.log, &log_path)?;
            Ok(outcome.net)
        },
        |v, p| v.save(p),
        DeepKernelNet::load,
    )?;
    net.save(&dir.join("net.txt"))?;
    let codes = stages::learn_codes(cfg, &shared.p, &net, &s, seed)?;
    codes.model.write_binary(&dir.join("hash_model.bin"))?;
    codes.codes.write(&dir.join("codes.txt"))?;
    let c = stages::classify(cfg, &codes.codes, &shared.labels, &split)?;
    stages::write_predictions(&shared.graph, &shared.labels, &c, &dir.join("predictions.csv"))?;
    Ok(c.accuracy)
}

/// Evaluates every `(ratio, seed)` cell without writing the results file.
fn run_cells(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let shared = prepare(cfg)?;
    let cells: Vec<(f64, u64)> = cfg
        .ratios
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let eval = |&(ratio, seed): &(f64, u64)| {
        let result = run_cell(cfg, &shared, ratio, seed);
        match result {
            Ok(acc) => {
                log::info!("ratio {ratio} seed {seed}: accuracy {acc:.4}");
                CellResult {
                    ratio,
                    seed,
                    accuracy: Some(acc),
                    note: String::new(),
                }
            }
            Err(e) => {
                log::error!("ratio {ratio} seed {seed} failed: {e}");
                CellResult {
                    ratio,
                    seed,
                    accuracy: None,
                    note: e.to_string(),
                }
            }
        }
    };
    let rows = if cfg.workers <= 1 {
        cells.iter().map(eval).collect()
    } else {
        cells
            .chunks(cfg.workers)
            .flat_map(|batch| batch.par_iter().map(eval).collect::<Vec<_>>())
            .collect()
    };
    Ok(ResultTable { rows })
}

/// Runs every cell and writes `<out_dir>/results.csv`.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let table = run_cells(cfg)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    table.write_csv(&cfg.out_dir.join("results.csv"))?;
    Ok(table)
}

/// A parameter varied by [`run_sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    /// Number of landmarks.
    Landmarks,
    /// Code length.
    CodeBits,
    WindowSize,
    WalkLength,
    WalksPerNode,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Landmarks => "R",
            SweepParam::CodeBits => "M",
            SweepParam::WindowSize => "p",
            SweepParam::WalkLength => "l",
            SweepParam::WalksPerNode => "gamma",
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig, value: usize) {
        match self {
            SweepParam::Landmarks => cfg.landmarks = value,
            SweepParam::CodeBits => cfg.code_bits = value,
            SweepParam::WindowSize => cfg.walk.window_size = value,
            SweepParam::WalkLength => cfg.walk.walk_length = value,
            SweepParam::WalksPerNode => cfg.walk.walks_per_node = value,
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<SweepParam> {
        match s {
            "R" | "landmarks" => Ok(SweepParam::Landmarks),
            "M" | "code_bits" => Ok(SweepParam::CodeBits),
            "p" | "window_size" => Ok(SweepParam::WindowSize),
            "l" | "walk_length" => Ok(SweepParam::WalkLength),
            "gamma" | "γ" | "walks_per_node" => Ok(SweepParam::WalksPerNode),
            other => Err(Error::Config(format!(
                "unknown sweep parameter `{other}` (expected R, M, p, l or gamma)"
            ))),
        }
    }
}

/// Ratio used by sensitivity sweeps.
pub const SWEEP_RATIO: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub param: SweepParam,
    pub points: Vec<(usize, ResultTable)>,
}

impl SweepResult {
    /// `param,value,mean_accuracy,std_accuracy,successful_cells`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("param,value,mean_accuracy,std_accuracy,successful_cells\n");
        for (value, table) in &self.points {
            let agg = table.aggregates().into_iter().next();
            let (mean, std, ok, cells) = match agg {
                Some(a) => (
                    a.mean.map(|v| format!("{v:.6}")).unwrap_or_default(),
                    a.std.map(|v| format!("{v:.6}")).unwrap_or_default(),
                    a.successes,
                    a.cells,
                ),
                None => (String::new(), String::new(), 0, 0),
            };
            let _ = writeln!(s, "{},{value},{mean},{std},{ok}/{cells}", self.param.name());
        }
        s
    }
}

/// One run per value at the sweep ratio, all other settings unchanged.
/// Writes `<out_dir>/sweep_<param>.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[usize]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        c.ratios = vec![SWEEP_RATIO];
        param.apply(&mut c, v);
        c.out_dir = cfg.out_dir.join(format!("sweep_{}", param.name())).join(v.to_string());
        c.cache_dir = Some(cfg.cache_root());
        let table = match c.validate() {
            Ok(()) => run_cells(&c)?,
            Err(e) => ResultTable {
                rows: c
                    .seeds
                    .iter()
                    .map(|&seed| CellResult {
                        ratio: SWEEP_RATIO,
                        seed,
                        accuracy: None,
                        note: e.to_string(),
                    })
                    .collect(),
            },
        };
        points.push((v, table));
    }
    let result = SweepResult { param, points };
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join(format!("sweep_{}.csv", param.name()));
    fs::write(&path, result.to_csv()).map_err(|e| Error::io(&path, e))?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ResultTable {
        ResultTable {
            rows: vec![
                CellResult {
                    ratio: 0.5,
                    seed: 1,
                    accuracy: Some(0.8),
                    note: String::new(),
                },
                CellResult {
                    ratio: 0.5,
                    seed: 2,
                    accuracy: Some(0.9),
                    note: String::new(),
                },
                CellResult {
                    ratio: 0.5,
                    seed: 3,
                    accuracy: None,
                    note: "degenerate input: x, y".into(),
                },
            ],
        }
    }

    #[test]
    fn csv_has_rows_then_mean() {
        let csv = table().to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "ratio,seed,accuracy,note");
        assert_eq!(lines[1], "0.5,1,0.800000,");
        assert_eq!(lines[3], "0.5,3,,\"degenerate input: x, y\"");
        assert!(lines[4].starts_with("0.5,mean,0.850000,std=0.070711 n=2/3"));
    }

    #[test]
    fn sweep_params_parse() {
        assert_eq!("R".parse::<SweepParam>().unwrap(), SweepParam::Landmarks);
        assert_eq!("γ".parse::<SweepParam>().unwrap(), SweepParam::WalksPerNode);
        assert!("T".parse::<SweepParam>().is_err());
    }
}
