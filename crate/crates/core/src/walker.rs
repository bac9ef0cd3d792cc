//! Truncated random walks and the distance-weighted structure matrix.
//!
//! Every pair of nodes that co-occur within `window_size` positions on a
//! walk adds `(p + 1 - dis) / p` to the structure matrix, where `dis` is
//! their distance along the walk. Pairs one step apart contribute `1`, pairs
//! at the window edge contribute `1 / p`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Random-walk sampling parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkConfig {
    /// Context window `p` on each side of the center node.
    pub window_size: usize,
    /// Number of nodes per walk.
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub seed: u64,
    /// Count the center node against itself with `dis = 0`. Off by default:
    /// the resulting `(p + 1) / p` weight makes every diagonal entry dominate
    /// its row.
    pub include_self_pairs: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            window_size: 50,
            walk_length: 200,
            walks_per_node: 10,
            seed: 0,
            include_self_pairs: false,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 1 {
            return Err(Error::Config("window_size must be at least 1".into()));
        }
        if self.walk_length < 2 {
            return Err(Error::Config("walk_length must be at least 2".into()));
        }
        if self.walks_per_node < 1 {
            return Err(Error::Config("walks_per_node must be at least 1".into()));
        }
        if self.window_size >= self.walk_length {
            return Err(Error::Config(format!(
                "window_size ({}) must be smaller than walk_length ({})",
                self.window_size, self.walk_length
            )));
        }
        Ok(())
    }
}

/// Walks in generation order: pass by pass, each pass over a shuffled node
/// order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkSet {
    pub walks: Vec<Vec<u32>>,
}

impl WalkSet {
    pub fn len(&self) -> usize {
        self.walks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walks.is_empty()
    }

    /// One walk per line, space-separated node indices.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut line = String::new();
        for walk in &self.walks {
            line.clear();
            for (k, v) in walk.iter().enumerate() {
                if k > 0 {
                    line.push(' ');
                }
                line.push_str(&v.to_string());
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<WalkSet> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut walks = Vec::new();
        for (k, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let walk = line
                .split_whitespace()
                .map(|t| t.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: k + 1,
                    message: e.to_string(),
                })?;
            walks.push(walk);
        }
        Ok(WalkSet { walks })
    }
}

/// Samples `walks_per_node` passes of uniform random walks from every node.
///
/// Each walk draws from its own ChaCha stream keyed by `(pass, start node)`,
/// so the result does not depend on how the work is scheduled.
pub fn generate_walks(graph: &Graph, config: &WalkConfig) -> Result<WalkSet> {
    config.validate()?;
    let n = graph.num_nodes();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    if let Some(i) = (0..n).find(|&i| graph.degree(i) == 0) {
        return Err(Error::Degenerate(format!("node {i} has degree 0")));
    }
    if n > u32::MAX as usize {
        return Err(Error::Config("graph too large for u32 walk storage".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    order_rng.set_stream(u64::MAX);
    let mut walks = Vec::with_capacity(n * config.walks_per_node);
    for pass in 0..config.walks_per_node {
        let mut nodes: Vec<usize> = (0..n).collect();
        nodes.shuffle(&mut order_rng);
        let batch: Vec<Vec<u32>> = nodes
            .par_iter()
            .map(|&start| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream((pass * n + start) as u64);
                random_walk(graph, start, config.walk_length, &mut rng)
            })
            .collect();
        walks.extend(batch);
    }
    Ok(WalkSet { walks })
}

fn random_walk(graph: &Graph, start: usize, length: usize, rng: &mut impl Rng) -> Vec<u32> {
    let mut walk = Vec::with_capacity(length);
    let mut cur = start;
    walk.push(cur as u32);
    for _ in 1..length {
        let nbrs = graph.neighbors(cur);
        cur = nbrs[rng.gen_range(0..nbrs.len())];
        walk.push(cur as u32);
    }
    walk
}

/// Dense, symmetric `N × N` matrix of walk co-occurrence weights.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureMatrix(DMatrix<f64>);

impl StructureMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<StructureMatrix> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        Ok(StructureMatrix(m))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Binary layout: `N` as little-endian `u64`, then `N²` little-endian
    /// `f64` in row-major order.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let n = self.n();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&(n as u64).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        for i in 0..n {
            for j in 0..n {
                w.write_all(&self.0[(i, j)].to_le_bytes())
                    .map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<StructureMatrix> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 {
            return Err(Error::Format(format!("{}: truncated header", path.display())));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != n * n * 8 {
            return Err(Error::Format(format!(
                "{}: expected {} bytes of matrix data, found {}",
                path.display(),
                n * n * 8,
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(StructureMatrix(DMatrix::from_row_slice(n, n, &values)))
    }

    /// Full dense CSV export, one row per line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.n()).map(|j| format!("{:?}", self.0[(i, j)])).collect();
            writeln!(w, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Sparse `i,j,value` export of the nonzero entries.
    pub fn write_triplets(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "i,j,value").map_err(|e| Error::io(path, e))?;
        for i in 0..self.n() {
            for j in 0..self.n() {
                let v = self.0[(i, j)];
                if v != 0.0 {
                    writeln!(w, "{i},{j},{v:?}").map_err(|e| Error::io(path, e))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Accumulates the structure matrix from a walk set.
///
/// The integer numerators `p + 1 - dis` are summed first and divided by `p`
/// once at the end; integer-valued sums are exact, so the result does not
/// depend on accumulation order or on how walks are split across workers.
pub fn build_structure_matrix(walks: &WalkSet, config: &WalkConfig, n: usize) -> Result<StructureMatrix> {
    let p = config.window_size;
    if p == 0 {
        return Err(Error::Config("window_size must be at least 1".into()));
    }
    for walk in &walks.walks {
        if let Some(&bad) = walk.iter().find(|&&v| v as usize >= n) {
            return Err(Error::IndexOutOfRange {
                index: bad as usize,
                len: n,
            });
        }
    }
    let workers = rayon::current_num_threads()
        .min(8)
        .min(walks.len().max(1))
        // partial matrices are N² each; don't fan out on big graphs
        .min(if n > 8192 { 1 } else { usize::MAX });
    let chunk = walks.len().div_ceil(workers.max(1)).max(1);
    let partials: Vec<DMatrix<f64>> = walks
        .walks
        .par_chunks(chunk)
        .map(|chunk| {
            let mut acc = DMatrix::zeros(n, n);
            for walk in chunk {
                accumulate_walk(&mut acc, walk, p, config.include_self_pairs);
            }
            acc
        })
        .collect();
    let mut total = DMatrix::zeros(n, n);
    for part in partials {
        total += part;
    }
    let denom = p as f64;
    total.apply(|v| *v /= denom);
    Ok(StructureMatrix(total))
}

fn accumulate_walk(acc: &mut DMatrix<f64>, walk: &[u32], p: usize, self_pairs: bool) {
    let len = walk.len();
    for i in 0..len {
        let a = walk[i] as usize;
        if self_pairs {
            acc[(a, a)] += (p + 1) as f64;
        }
        for d in 1..=p.min(len - 1 - i) {
            let b = walk[i + d] as usize;
            let w = (p + 1 - d) as f64;
            acc[(a, b)] += w;
            acc[(b, a)] += w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(p: usize) -> WalkConfig {
        WalkConfig {
            window_size: p,
            walk_length: 4,
            walks_per_node: 1,
            seed: 0,
            include_self_pairs: false,
        }
    }

    #[test]
    fn three_node_walk_weights() {
        let walks = WalkSet {
            walks: vec![vec![0, 1, 2]],
        };
        let p = build_structure_matrix(&walks, &cfg(2), 3).unwrap();
        let m = p.matrix();
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(0, 2)], 0.5);
        assert_eq!(m[(1, 2)], 1.0);
        assert_eq!(m[(2, 0)], 0.5);
        assert_eq!(m[(0, 0)], 0.0);
    }

    #[test]
    fn two_node_walk_window_one() {
        let walks = WalkSet {
            walks: vec![vec![0, 1]],
        };
        let m = build_structure_matrix(&walks, &cfg(1), 2).unwrap().into_matrix();
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(1, 0)], 1.0);
    }

    #[test]
    fn pairs_outside_window_stay_zero() {
        let walks = WalkSet {
            walks: vec![vec![0, 1, 2, 3]],
        };
        let m = build_structure_matrix(&walks, &cfg(1), 4).unwrap().into_matrix();
        assert_eq!(m[(0, 2)], 0.0);
        assert_eq!(m[(0, 3)], 0.0);
    }

    #[test]
    fn self_pairs_flag_restores_diagonal() {
        let walks = WalkSet {
            walks: vec![vec![0, 1]],
        };
        let mut c = cfg(1);
        c.include_self_pairs = true;
        let m = build_structure_matrix(&walks, &c, 2).unwrap().into_matrix();
        assert_eq!(m[(0, 0)], 2.0);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let walks = WalkSet {
            walks: vec![vec![0, 5]],
        };
        assert!(matches!(
            build_structure_matrix(&walks, &cfg(1), 3),
            Err(Error::IndexOutOfRange { index: 5, len: 3 })
        ));
    }

    #[test]
    fn walk_counts_and_validity() {
        let g = Graph::from_edges([("a", "b"), ("b", "c")]).unwrap();
        let c = WalkConfig {
            window_size: 1,
            walk_length: 4,
            walks_per_node: 2,
            seed: 11,
            include_self_pairs: false,
        };
        let ws = generate_walks(&g, &c).unwrap();
        assert_eq!(ws.len(), 6);
        for w in &ws.walks {
            assert_eq!(w.len(), 4);
            for pair in w.windows(2) {
                assert!(g.neighbors(pair[0] as usize).contains(&(pair[1] as usize)));
            }
        }
        for pass in ws.walks.chunks(3) {
            let mut starts: Vec<u32> = pass.iter().map(|w| w[0]).collect();
            starts.sort();
            assert_eq!(starts, vec![0, 1, 2]);
        }
        assert_eq!(ws, generate_walks(&g, &c).unwrap());
    }

    #[test]
    fn config_validation() {
        let mut c = WalkConfig::default();
        assert!(c.validate().is_ok());
        c.window_size = 200;
        assert!(c.validate().is_err());
        c = WalkConfig { walk_length: 1, window_size: 1, ..WalkConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = StructureMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.5, 2.25, 1e-300])).unwrap();
        let p = dir.path().join("p.bin");
        m.write_binary(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..8], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.5f64.to_le_bytes());
        assert_eq!(StructureMatrix::read_binary(&p).unwrap(), m);
    }
}
