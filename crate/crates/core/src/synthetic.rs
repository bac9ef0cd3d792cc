//! Planted-partition graphs for tests, benchmarks and smoke runs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A labeled graph with nodes `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticGraph {
    pub edges: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
}

/// `classes` blocks of `per_class` nodes. Each block is first joined into a
/// ring so no node is isolated; then every intra-block pair gains an edge
/// with probability `p_in` and every cross-block pair with `p_out`.
pub fn planted_partition(classes: usize, per_class: usize, p_in: f64, p_out: f64, seed: u64) -> SyntheticGraph {
    let n = classes * per_class;
    let labels: Vec<usize> = (0..n).map(|i| i / per_class).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for c in 0..classes {
        let base = c * per_class;
        if per_class > 1 {
            for k in 0..per_class {
                let (a, b) = (base + k, base + (k + 1) % per_class);
                if a < b || per_class > 2 {
                    edges.push((a.min(b), a.max(b)));
                }
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let prob = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.gen::<f64>() < prob {
                edges.push((i, j));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    SyntheticGraph { edges, labels }
}

impl SyntheticGraph {
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Writes `edges.txt` and `labels.txt` (node tokens `n<i>`, classes
    /// `c<k>`).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let edges = dir.join("edges.txt");
        let mut w = BufWriter::new(fs::File::create(&edges).map_err(|e| Error::io(&edges, e))?);
        for (a, b) in &self.edges {
            writeln!(w, "n{a} n{b}").map_err(|e| Error::io(&edges, e))?;
        }
        w.flush().map_err(|e| Error::io(&edges, e))?;
        let labels = dir.join("labels.txt");
        let mut w = BufWriter::new(fs::File::create(&labels).map_err(|e| Error::io(&labels, e))?);
        for (i, c) in self.labels.iter().enumerate() {
            writeln!(w, "n{i} c{c}").map_err(|e| Error::io(&labels, e))?;
        }
        w.flush().map_err(|e| Error::io(&labels, e))
    }
}
