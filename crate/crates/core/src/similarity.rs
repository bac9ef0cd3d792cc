//! Label-aware supervision matrix.
//!
//! For two labeled training nodes of the same class,
//! `S_ij = exp(-‖P_i - P_j‖² / max_dis²)`, where `P_i` is row `i` of the
//! structure matrix and `max_dis²` the largest squared row distance over all
//! node pairs. Every other entry is zero.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{csv_err, LabelMap, Split};
use crate::linalg;
use crate::walker::StructureMatrix;

/// Which labeled nodes take part in supervision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SupervisionScope {
    /// Training nodes only; test labels never reach the hash learner.
    #[default]
    TrainOnly,
    /// Every labeled node, including the test split. Leaks test labels;
    /// exists only for reproduction experiments.
    AllLabeled,
}

/// Sparse symmetric similarity matrix stored as sorted `(i, j, value)`
/// triplets (both orientations and the diagonal are present).
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SimilarityMatrix {
    /// Builds from triplets; sorts them and rejects out-of-range indices.
    pub fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<SimilarityMatrix> {
        for &(i, j, _) in &entries {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange { index: i.max(j), len: n });
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));
        entries.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        Ok(SimilarityMatrix { n, entries })
    }

    /// All-zero matrix (no supervision).
    pub fn empty(n: usize) -> SimilarityMatrix {
        SimilarityMatrix { n, entries: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored nonzero entries.
    pub fn supervised_pairs(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .binary_search_by(|e| (e.0, e.1).cmp(&(i, j)))
            .map(|k| self.entries[k].2)
            .unwrap_or(0.0)
    }

    /// Row sums `S·1`.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for &(i, _, v) in &self.entries {
            d[i] += v;
        }
        d
    }

    /// Graph Laplacian product `(diag(S·1) - S) x`.
    ///
    /// `S x` is accumulated in the same order as [`SimilarityMatrix::degrees`],
    /// so a constant vector maps to exact zeros.
    pub fn laplacian_apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "laplacian_apply length mismatch");
        let d = self.degrees();
        let mut sx = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            sx[i] += v * x[j];
        }
        (0..self.n).map(|i| d[i] * x[i] - sx[i]).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.entries {
            m[(i, j)] = v;
        }
        m
    }

    /// `i,j,value` CSV with a header line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "# n={}", self.n).map_err(|e| Error::io(path, e))?;
        writeln!(w, "i,j,value").map_err(|e| Error::io(path, e))?;
        for &(i, j, v) in &self.entries {
            writeln!(w, "{i},{j},{v:?}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<SimilarityMatrix> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let n = lines
            .next()
            .and_then(|l| l.strip_prefix("# n="))
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Format(format!("{}: missing `# n=` header", path.display())))?;
        let body: String = lines.collect::<Vec<_>>().join("\n");
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let mut entries = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let field = |k: usize| rec.get(k).ok_or_else(|| Error::Format(format!("{}: short row", path.display())));
            let bad = |_| Error::Format(format!("{}: bad number", path.display()));
            entries.push((
                field(0)?.parse::<usize>().map_err(|e| bad(e.to_string()))?,
                field(1)?.parse::<usize>().map_err(|e| bad(e.to_string()))?,
                field(2)?.parse::<f64>().map_err(|e| bad(e.to_string()))?,
            ));
        }
        SimilarityMatrix::from_triplets(n, entries)
    }
}

/// Squared Euclidean distance between rows `i` and `j`, summed in column
/// order.
pub fn squared_distance(p: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let mut acc = 0.0;
    for k in 0..p.ncols() {
        let d = p[(i, k)] - p[(j, k)];
        acc += d * d;
    }
    acc
}

fn squared_distance_rows(rows_t: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    // columns of the transposed matrix are the original rows
    let a = rows_t.column(i);
    let b = rows_t.column(j);
    let mut acc = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        acc += d * d;
    }
    acc
}

/// Largest squared distance between any two rows of `p`.
///
/// Uses the Gram identity `‖a-b‖² = ‖a‖² + ‖b‖² - 2a·b` to screen all pairs,
/// then recomputes every pair within the identity's rounding bound of the
/// screened maximum directly, so the returned value is the exact direct
/// distance of the farthest pair.
pub fn max_squared_distance(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    if n < 2 {
        return 0.0;
    }
    let rows_t = p.transpose();
    if n <= 256 {
        return (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| squared_distance_rows(&rows_t, i, j))
            .fold(0.0, f64::max);
    }
    let g = linalg::gram(p);
    let diag: Vec<f64> = (0..n).map(|i| g[(i, i)]).collect();
    let approx = |i: usize, j: usize| (diag[i] + diag[j] - 2.0 * g[(i, j)]).max(0.0);
    let screened = (0..n)
        .into_par_iter()
        .map(|j| (0..j).map(|i| approx(i, j)).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max);
    let max_norm = diag.iter().cloned().fold(0.0, f64::max);
    let slack = 8.0 * (p.ncols() as f64) * f64::EPSILON * max_norm;
    let cutoff = screened - 2.0 * slack;
    (0..n)
        .into_par_iter()
        .map(|j| {
            (0..j)
                .filter(|&i| approx(i, j) >= cutoff)
                .map(|i| squared_distance_rows(&rows_t, i, j))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Training-only supervision matrix.
pub fn compute_similarity(p: &StructureMatrix, labels: &LabelMap, split: &Split) -> Result<SimilarityMatrix> {
    compute_similarity_with(p, labels, split, SupervisionScope::TrainOnly)
}

pub fn compute_similarity_with(
    p: &StructureMatrix,
    labels: &LabelMap,
    split: &Split,
    scope: SupervisionScope,
) -> Result<SimilarityMatrix> {
    let max_sq = max_squared_distance(p.matrix());
    similarity_with_normalizer(p, labels, split, scope, max_sq)
}

/// Same as [`compute_similarity_with`] with a precomputed `max_dis²`, so the
/// `O(N³)` normalizer is shared across splits.
pub fn similarity_with_normalizer(
    p: &StructureMatrix,
    labels: &LabelMap,
    split: &Split,
    scope: SupervisionScope,
    max_sq: f64,
) -> Result<SimilarityMatrix> {
    let n = p.n();
    if !(max_sq > 0.0) || !max_sq.is_finite() {
        return Err(Error::Degenerate("degenerate structure matrix".into()));
    }
    let pool: Vec<usize> = match scope {
        SupervisionScope::TrainOnly => split.train.clone(),
        SupervisionScope::AllLabeled => labels.labeled_nodes(),
    };
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); labels.num_classes()];
    for &node in &pool {
        if node >= n {
            return Err(Error::IndexOutOfRange { index: node, len: n });
        }
        let class = labels
            .get(node)
            .ok_or_else(|| Error::Split(format!("training node {node} has no label")))?;
        by_class[class].push(node);
    }
    let rows_t = p.matrix().transpose();
    let pairs: Vec<(usize, usize)> = by_class
        .iter()
        .flat_map(|members| {
            members
                .iter()
                .enumerate()
                .flat_map(move |(a, &i)| members[a + 1..].iter().map(move |&j| (i, j)))
        })
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| (-squared_distance_rows(&rows_t, i, j) / max_sq).exp())
        .collect();
    let mut entries = Vec::with_capacity(2 * pairs.len() + pool.len());
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        entries.push((i, j, v));
        entries.push((j, i, v));
    }
    entries.extend(pool.iter().map(|&i| (i, i, 1.0)));
    SimilarityMatrix::from_triplets(n, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_split;

    fn structure(rows: &[&[f64]]) -> StructureMatrix {
        let n = rows.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        StructureMatrix::new(DMatrix::from_row_slice(n, n, &flat)).unwrap()
    }

    fn all_train(n: usize) -> Split {
        Split {
            train: (0..n).collect(),
            test: vec![],
            ratio: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn identical_rows_same_label_give_one() {
        let p = structure(&[&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], &[5.0, 0.0, 0.0]]);
        let labels = LabelMap::from_pairs([(0, 0), (1, 0), (2, 1)]).unwrap();
        let s = compute_similarity(&p, &labels, &all_train(3)).unwrap();
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(0, 2), 0.0);
        assert_eq!(s.get(2, 2), 1.0);
    }

    #[test]
    fn farthest_pair_gets_exp_minus_one() {
        let p = structure(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[3.0, 0.0, 0.0]]);
        let labels = LabelMap::from_pairs([(0, 0), (1, 1), (2, 0)]).unwrap();
        let s = compute_similarity(&p, &labels, &all_train(3)).unwrap();
        assert!((s.get(0, 2) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(s.get(0, 1), 0.0);
    }

    #[test]
    fn test_nodes_are_excluded() {
        let p = structure(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]);
        let labels = LabelMap::from_pairs([(0, 0), (1, 1), (2, 0)]).unwrap();
        let split = Split {
            train: vec![0, 1],
            test: vec![2],
            ratio: 0.66,
            seed: 0,
        };
        let s = compute_similarity(&p, &labels, &split).unwrap();
        assert_eq!(s.get(0, 2), 0.0);
        assert_eq!(s.get(2, 2), 0.0);
        let leaky = compute_similarity_with(&p, &labels, &split, SupervisionScope::AllLabeled).unwrap();
        assert_eq!(leaky.get(0, 2), 1.0);
    }

    #[test]
    fn constant_rows_are_degenerate() {
        let p = structure(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let labels = LabelMap::from_pairs([(0, 0), (1, 1)]).unwrap();
        let err = compute_similarity(&p, &labels, &all_train(2)).unwrap_err();
        assert!(err.to_string().contains("degenerate structure matrix"));
    }

    #[test]
    fn screened_maximum_matches_brute_force() {
        let n = 300;
        let mut state = 9u64;
        let m = DMatrix::from_fn(n, n, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 40) % 50) as f64 * 0.37
        });
        let mut brute = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                brute = brute.max(squared_distance(&m, i, j));
            }
        }
        assert_eq!(max_squared_distance(&m), brute);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let labels = LabelMap::from_pairs((0..6).map(|i| (i, i % 2))).unwrap();
        let split = make_split(&labels, 0.5, 1).unwrap();
        let p = structure(&[
            &[0.0, 1.0, 0.5, 0.0, 0.0, 0.0],
            &[1.0, 0.0, 1.0, 0.5, 0.0, 0.0],
            &[0.5, 1.0, 0.0, 1.0, 0.5, 0.0],
            &[0.0, 0.5, 1.0, 0.0, 1.0, 0.5],
            &[0.0, 0.0, 0.5, 1.0, 0.0, 1.0],
            &[0.0, 0.0, 0.0, 0.5, 1.0, 0.0],
        ]);
        let s = compute_similarity(&p, &labels, &split).unwrap();
        let path = dir.path().join("s.csv");
        s.write_csv(&path).unwrap();
        assert_eq!(SimilarityMatrix::read_csv(&path).unwrap(), s);
    }
}
