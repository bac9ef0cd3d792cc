//! Landmark-based hash functions learned from a kernel and a supervision
//! matrix.
//!
//! Node `i` is encoded as `sign(Wᵀ K_i - b)`, where `K_i` holds the kernel
//! values between `i` and `R` landmark nodes. `W` minimizes
//! `tr(Wᵀ C W)` with `C = K L Kᵀ + λ K_RR` and `L` the Laplacian of the
//! similarity matrix, subject to `Wᵀ G W = I` with `G` the covariance of the
//! kernel columns. The constraint makes the relaxed codes uncorrelated;
//! centering them with `b` balances the bits.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::similarity::SimilarityMatrix;

const MAGIC: &[u8; 8] = b"DKSHHASH";
const VERSION: u32 = 1;

/// `r` distinct node indices drawn uniformly at random.
pub fn select_landmarks(n: usize, r: usize, seed: u64) -> Result<Vec<usize>> {
    if r > n {
        return Err(Error::Config(format!("cannot pick {r} landmarks from {n} nodes")));
    }
    if r == 0 {
        return Err(Error::Config("need at least one landmark".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<usize> = (0..n).collect();
    let (picked, _) = all.partial_shuffle(&mut rng, r);
    Ok(picked.to_vec())
}

/// How the constraint `Wᵀ G W = I` is turned into a standard eigenproblem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Whitening {
    /// Whiten over the whole range of `G` and eliminate the directions in
    /// its null space, which the constraint leaves free. Yields the exact
    /// constrained minimizer.
    #[default]
    FullRank,
    /// Whiten with only the `M` largest eigenpairs of `G`; `W` is confined
    /// to their span.
    TopM,
}

/// Which end of the whitened spectrum supplies the hash directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EigenSelection {
    #[default]
    Smallest,
    Largest,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HashOptions {
    pub whitening: Whitening,
    pub selection: EigenSelection,
    /// Eigenvalues of `G` below `rank_tol × λ_max` count as zero.
    pub rank_tol: f64,
}

impl Default for HashOptions {
    fn default() -> Self {
        HashOptions {
            whitening: Whitening::default(),
            selection: EigenSelection::default(),
            rank_tol: 1e-9,
        }
    }
}

/// Quality measures of one solve.
#[derive(Clone, Debug, PartialEq)]
pub struct HashDiagnostics {
    /// `tr(Wᵀ C W)`.
    pub objective: f64,
    /// `max |Wᵀ G W - I|`.
    pub constraint_error: f64,
    /// Largest `‖Ĉ w - θ w‖` over the selected eigenpairs.
    pub eigen_residual: f64,
    /// Numerical rank of `G`.
    pub rank: usize,
    pub requested_bits: usize,
    pub bits: usize,
}

/// Learned hash functions.
#[derive(Clone, Debug, PartialEq)]
pub struct HashModel {
    pub landmarks: Vec<usize>,
    /// `R × M`
    pub w: DMatrix<f64>,
    /// Per-bit thresholds.
    pub b: DVector<f64>,
    pub lambda: f64,
}

/// The matrices of the trace problem.
pub struct HashingMatrices {
    /// `(C + Cᵀ) / 2`
    pub c: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

/// Forms `C = K L Kᵀ + λ K_RR` (symmetrized) and
/// `G = (1/N) K (I - 11ᵀ/N) Kᵀ`.
pub fn hashing_matrices(
    k_rn: &DMatrix<f64>,
    k_rr: &DMatrix<f64>,
    s: &SimilarityMatrix,
    lambda: f64,
) -> Result<HashingMatrices> {
    let (r, n) = k_rn.shape();
    if k_rr.shape() != (r, r) {
        return Err(Error::DimensionMismatch {
            expected: r,
            actual: k_rr.nrows(),
        });
    }
    if s.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: s.n(),
        });
    }
    if k_rn.iter().chain(k_rr.iter()).any(|v| !v.is_finite()) || !lambda.is_finite() {
        return Err(Error::NonFinite {
            layer: 0,
            kernel: "hashing input".into(),
        });
    }
    let d = s.degrees();
    let mut kd = k_rn.clone();
    for (j, &dj) in d.iter().enumerate() {
        kd.column_mut(j).scale_mut(dj);
    }
    let mut ks = DMatrix::zeros(r, n);
    for &(i, j, v) in s.entries() {
        ks.column_mut(j).axpy(v, &k_rn.column(i), 1.0);
    }
    let klk = linalg::matmul_nt(&kd, k_rn) - linalg::matmul_nt(&ks, k_rn);
    let c = linalg::symmetric_part(&(klk + k_rr * lambda));

    let mut centered = k_rn.clone();
    for mut row in centered.row_iter_mut() {
        let mean = row.sum() / n as f64;
        row.add_scalar_mut(-mean);
    }
    let g = linalg::gram(&centered) / n as f64;
    Ok(HashingMatrices { c, g })
}

/// Default-option solve; see [`solve_hashing_with`].
pub fn solve_hashing(
    k_rn: &DMatrix<f64>,
    k_rr: &DMatrix<f64>,
    s: &SimilarityMatrix,
    bits: usize,
    lambda: f64,
) -> Result<HashModel> {
    Ok(solve_hashing_with(k_rn, k_rr, s, bits, lambda, &HashOptions::default())?.0)
}

/// Solves `min tr(Wᵀ C W)` subject to `Wᵀ G W = I` and sets `b` to the
/// mean activation. When `G` has rank below `bits`, the code length is
/// reduced to the rank.
///
/// The returned model lists landmarks `0..R`; callers replace them with
/// the node indices the kernel rows came from.
pub fn solve_hashing_with(
    k_rn: &DMatrix<f64>,
    k_rr: &DMatrix<f64>,
    s: &SimilarityMatrix,
    bits: usize,
    lambda: f64,
    options: &HashOptions,
) -> Result<(HashModel, HashDiagnostics)> {
    let (r, n) = k_rn.shape();
    if bits == 0 || bits > r {
        return Err(Error::Config(format!("code length {bits} must be in 1..={r}")));
    }
    if n < 2 {
        return Err(Error::Degenerate("hashing needs at least two nodes".into()));
    }
    let HashingMatrices { c, g } = hashing_matrices(k_rn, k_rr, s, lambda)?;
    let (g_vals, g_vecs) = linalg::sym_eigen_ascending(&g);
    let g_max = g_vals.last().copied().unwrap_or(0.0);
    if !(g_max > 0.0) {
        return Err(Error::Degenerate("kernel columns have zero variance".into()));
    }
    let threshold = options.rank_tol * g_max;
    let rank = g_vals.iter().filter(|&&v| v > threshold).count();
    let m = if rank < bits {
        log::warn!("kernel covariance has rank {rank} < {bits}; using {rank} bits");
        rank
    } else {
        bits
    };

    let (w, eigen_residual) = match options.whitening {
        Whitening::TopM => {
            let idx: Vec<usize> = (r - m..r).rev().collect();
            let basis = whitened_basis(&g_vals, &g_vecs, &idx);
            let c_hat = linalg::symmetric_part(&linalg::matmul_tn(&basis, &linalg::matmul(&c, &basis)));
            let (w_hat, residual) = select_eigenvectors(&c_hat, m, options.selection);
            (linalg::matmul(&basis, &w_hat), residual)
        }
        Whitening::FullRank => {
            let range: Vec<usize> = (r - rank..r).collect();
            let q1 = whitened_basis(&g_vals, &g_vecs, &range);
            let c_q1 = linalg::matmul(&c, &q1);
            let c_rr = linalg::symmetric_part(&linalg::matmul_tn(&q1, &c_q1));
            let null: Vec<usize> = (0..r - rank).collect();
            if null.is_empty() || options.selection == EigenSelection::Largest {
                let (w_hat, residual) = select_eigenvectors(&c_rr, m, options.selection);
                (linalg::matmul(&q1, &w_hat), residual)
            } else {
                // Null directions of G are unconstrained: minimize them out
                // through the Schur complement of the whitened C.
                let q2 = linalg::select_columns(&g_vecs, &null);
                let c_nr = linalg::matmul_tn(&q2, &c_q1);
                let c_nn = linalg::symmetric_part(&linalg::matmul_tn(&q2, &linalg::matmul(&c, &q2)));
                let c_nn_pinv = pseudo_inverse(&c_nn);
                let elim = linalg::matmul(&c_nn_pinv, &c_nr);
                let schur = linalg::symmetric_part(&(c_rr - linalg::matmul_tn(&c_nr, &elim)));
                let (w_hat, residual) = select_eigenvectors(&schur, m, options.selection);
                let a = -linalg::matmul(&elim, &w_hat);
                (linalg::matmul(&q1, &w_hat) + linalg::matmul(&q2, &a), residual)
            }
        }
    };

    let act = linalg::matmul_tn(&w, k_rn);
    let b = DVector::from_iterator(m, act.row_iter().map(|row| row.sum() / n as f64));
    let wgw = linalg::matmul_tn(&w, &linalg::matmul(&g, &w));
    let constraint_error = linalg::max_abs(&(wgw - DMatrix::identity(m, m)));
    let objective = linalg::matmul_tn(&w, &linalg::matmul(&c, &w)).trace();
    let model = HashModel {
        landmarks: (0..r).collect(),
        w,
        b,
        lambda,
    };
    let diagnostics = HashDiagnostics {
        objective,
        constraint_error,
        eigen_residual,
        rank,
        requested_bits: bits,
        bits: m,
    };
    Ok((model, diagnostics))
}

/// Columns `T_k / sqrt(λ_k)` for the eigenpairs listed in `idx`.
fn whitened_basis(vals: &[f64], vecs: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = linalg::select_columns(vecs, idx);
    for (col, &k) in idx.iter().enumerate() {
        out.column_mut(col).scale_mut(1.0 / vals[k].sqrt());
    }
    out
}

/// `m` eigenvectors of a symmetric matrix (smallest ascending or largest
/// descending) and the largest residual `‖A v - θ v‖` among them.
fn select_eigenvectors(a: &DMatrix<f64>, m: usize, selection: EigenSelection) -> (DMatrix<f64>, f64) {
    let (vals, vecs) = linalg::sym_eigen_ascending(a);
    let n = vals.len();
    let idx: Vec<usize> = match selection {
        EigenSelection::Smallest => (0..m).collect(),
        EigenSelection::Largest => (n - m..n).rev().collect(),
    };
    let chosen = linalg::select_columns(&vecs, &idx);
    let mut residual = 0.0_f64;
    for (col, &k) in idx.iter().enumerate() {
        let v = chosen.column(col);
        residual = residual.max((a * v - v * vals[k]).norm());
    }
    (chosen, residual)
}

fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = linalg::sym_eigen_ascending(a);
    let scale = vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let cutoff = 1e-12 * scale.max(f64::MIN_POSITIVE);
    if vals.iter().any(|&v| v < -cutoff) {
        log::warn!("objective is indefinite along unconstrained directions");
    }
    let mut scaled = vecs.clone();
    for (j, &v) in vals.iter().enumerate() {
        let s = if v.abs() > cutoff { 1.0 / v } else { 0.0 };
        scaled.column_mut(j).scale_mut(s);
    }
    linalg::matmul_nt(&scaled, &vecs)
}

impl HashModel {
    pub fn num_landmarks(&self) -> usize {
        self.w.nrows()
    }

    pub fn bits(&self) -> usize {
        self.w.ncols()
    }

    pub fn with_landmarks(mut self, landmarks: Vec<usize>) -> Result<HashModel> {
        if landmarks.len() != self.num_landmarks() {
            return Err(Error::DimensionMismatch {
                expected: self.num_landmarks(),
                actual: landmarks.len(),
            });
        }
        self.landmarks = landmarks;
        Ok(self)
    }

    /// Relaxed codes `Wᵀ K - b 1ᵀ` (`M × columns`).
    pub fn activations(&self, k_cols: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k_cols.nrows() != self.num_landmarks() {
            return Err(Error::DimensionMismatch {
                expected: self.num_landmarks(),
                actual: k_cols.nrows(),
            });
        }
        let mut act = linalg::matmul_tn(&self.w, k_cols);
        for mut col in act.column_iter_mut() {
            col -= &self.b;
        }
        Ok(act)
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.num_landmarks() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.bits() as u64).to_le_bytes());
        buf.extend_from_slice(&self.lambda.to_le_bytes());
        for &l in &self.landmarks {
            buf.extend_from_slice(&(l as u64).to_le_bytes());
        }
        for i in 0..self.num_landmarks() {
            for j in 0..self.bits() {
                buf.extend_from_slice(&self.w[(i, j)].to_le_bytes());
            }
        }
        for v in self.b.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<HashModel> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
        if bytes.len() < 36 || &bytes[..8] != MAGIC {
            return Err(bad("not a hash model file"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(8) != VERSION {
            return Err(bad("unsupported version"));
        }
        let r = u64_at(12) as usize;
        let m = u64_at(20) as usize;
        let lambda = f64_at(28);
        let expected = 36 + 8 * (r + r * m + m);
        if bytes.len() != expected {
            return Err(bad("truncated or oversized file"));
        }
        let mut off = 36;
        let landmarks = (0..r)
            .map(|k| u64_at(off + 8 * k) as usize)
            .collect();
        off += 8 * r;
        let w = DMatrix::from_fn(r, m, |i, j| f64_at(off + 8 * (i * m + j)));
        off += 8 * r * m;
        let b = DVector::from_fn(m, |j, _| f64_at(off + 8 * j));
        Ok(HashModel {
            landmarks,
            w,
            b,
            lambda,
        })
    }
}

/// `±1` codes for a list of nodes (one row per node).
#[derive(Clone, Debug, PartialEq)]
pub struct HashCodes {
    pub nodes: Vec<usize>,
    /// `nodes.len() × M`
    pub bits: DMatrix<f64>,
}

/// `sign(Wᵀ K_i - b)` for every column of `k_cols`, with `sign(0) = +1`.
/// Column `i` belongs to node `nodes[i]`.
pub fn encode(k_cols: &DMatrix<f64>, model: &HashModel, nodes: &[usize]) -> Result<HashCodes> {
    if k_cols.ncols() == 0 {
        return Err(Error::Degenerate("nothing to encode".into()));
    }
    if nodes.len() != k_cols.ncols() {
        return Err(Error::DimensionMismatch {
            expected: k_cols.ncols(),
            actual: nodes.len(),
        });
    }
    let act = model.activations(k_cols)?;
    let bits = act.transpose().map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
    Ok(HashCodes {
        nodes: nodes.to_vec(),
        bits,
    })
}

impl HashCodes {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn bits_per_node(&self) -> usize {
        self.bits.ncols()
    }

    /// Codes of the given nodes, in that order.
    pub fn rows_for(&self, nodes: &[usize]) -> Result<DMatrix<f64>> {
        let pos: std::collections::HashMap<usize, usize> =
            self.nodes.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let idx: Vec<usize> = nodes
            .iter()
            .map(|n| {
                pos.get(n).copied().ok_or(Error::IndexOutOfRange {
                    index: *n,
                    len: self.nodes.len(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(linalg::select_rows(&self.bits, &idx))
    }

    /// Mean of each bit over all nodes.
    pub fn bit_means(&self) -> Vec<f64> {
        self.bits
            .column_iter()
            .map(|c| c.sum() / self.len().max(1) as f64)
            .collect()
    }

    /// One line per node: the index followed by `M` values of `1` or `-1`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (row, &node) in self.nodes.iter().enumerate() {
            let mut line = node.to_string();
            for v in self.bits.row(row).iter() {
                line.push_str(if *v > 0.0 { " 1" } else { " -1" });
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<HashCodes> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        let mut width = None;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let mut parts = line.split_whitespace();
            let node = parts
                .next()
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| parse_err("expected a node index".into()))?;
            let row: Vec<f64> = parts
                .map(|t| match t {
                    "1" => Ok(1.0),
                    "-1" => Ok(-1.0),
                    other => Err(parse_err(format!("code value `{other}` is not 1 or -1"))),
                })
                .collect::<Result<_>>()?;
            if *width.get_or_insert(row.len()) != row.len() {
                return Err(parse_err("inconsistent code length".into()));
            }
            nodes.push(node);
            values.extend(row);
        }
        let m = width.unwrap_or(0);
        let bits = DMatrix::from_row_slice(nodes.len(), m, &values);
        Ok(HashCodes { nodes, bits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_matrix(r: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        DMatrix::from_fn(r, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
    }

    fn instance(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, SimilarityMatrix) {
        let x = lcg_matrix(n, 5, seed);
        let k = &x * x.transpose() + DMatrix::identity(n, n) * 0.1;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 1.0));
            for j in 0..n {
                if i != j && i % 3 == j % 3 && i < n - 2 && j < n - 2 {
                    trip.push((i, j, 0.5 + 0.01 * (i + j) as f64));
                }
            }
        }
        let s = SimilarityMatrix::from_triplets(n, trip).unwrap();
        (k.clone(), k, s)
    }

    #[test]
    fn landmarks_are_distinct_and_reproducible() {
        let a = select_landmarks(2708, 256, 3).unwrap();
        assert_eq!(a, select_landmarks(2708, 256, 3).unwrap());
        let mut sorted = a.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 256);
        assert!(sorted.iter().all(|&v| v < 2708));
        let mut all = select_landmarks(10, 10, 1).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(select_landmarks(3, 4, 0).is_err());
    }

    #[test]
    fn constraint_and_centering_hold() {
        let (k, krr, s) = instance(12, 5);
        let (model, diag) = solve_hashing_with(&k, &krr, &s, 3, 1e-4, &HashOptions::default()).unwrap();
        assert!(diag.constraint_error <= 1e-6, "{diag:?}");
        assert!(diag.eigen_residual <= 1e-8, "{diag:?}");
        let act = model.activations(&k).unwrap();
        let cov = &act * act.transpose() / 12.0;
        assert!((cov - DMatrix::identity(3, 3)).amax() <= 1e-6);
        for row in act.row_iter() {
            let scale: f64 = row.iter().map(|v| v.abs()).sum();
            assert!(row.sum().abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn unsupervised_unregularized_objective_is_zero() {
        let (k, krr, _) = instance(10, 9);
        let s = SimilarityMatrix::empty(10);
        let (_, diag) = solve_hashing_with(&k, &krr, &s, 2, 0.0, &HashOptions::default()).unwrap();
        assert!(diag.objective.abs() < 1e-9);
    }

    #[test]
    fn laplacian_quadratic_form_matches_pairwise_sum() {
        let (k, krr, s) = instance(12, 21);
        let model = solve_hashing(&k, &krr, &s, 2, 0.0).unwrap();
        let act = model.activations(&k).unwrap();
        let mut pairwise = 0.0;
        for &(i, j, v) in s.entries() {
            pairwise += 0.5 * v * (act.column(i) - act.column(j)).norm_squared();
        }
        let m = hashing_matrices(&k, &krr, &s, 0.0).unwrap();
        let trace = (model.w.transpose() * &m.c * &model.w).trace();
        assert!((pairwise - trace).abs() <= 1e-8 * pairwise.abs().max(1.0));
    }

    #[test]
    fn rank_deficiency_reduces_bits() {
        let x = lcg_matrix(8, 2, 4);
        let k = &x * x.transpose();
        let s = SimilarityMatrix::empty(8);
        let (model, diag) = solve_hashing_with(&k, &k, &s, 5, 1e-4, &HashOptions::default()).unwrap();
        assert_eq!(diag.rank, 2);
        assert_eq!(model.bits(), 2);
    }

    #[test]
    fn top_m_whitening_also_meets_constraint() {
        let (k, krr, s) = instance(12, 8);
        let opts = HashOptions {
            whitening: Whitening::TopM,
            ..Default::default()
        };
        let (_, diag) = solve_hashing_with(&k, &krr, &s, 3, 1e-4, &opts).unwrap();
        assert!(diag.constraint_error <= 1e-6);
    }

    #[test]
    fn sign_of_zero_is_positive() {
        let model = HashModel {
            landmarks: vec![0],
            w: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            b: DVector::from_vec(vec![0.0, 0.0]),
            lambda: 0.0,
        };
        let codes = encode(&DMatrix::from_row_slice(1, 2, &[0.0, 2.0]), &model, &[4, 7]).unwrap();
        assert_eq!(codes.bits.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
        assert_eq!(codes.bits.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0]);
    }

    #[test]
    fn file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (k, krr, s) = instance(12, 2);
        let model = solve_hashing(&k, &krr, &s, 3, 1e-4).unwrap();
        let path = dir.path().join("hash_model.bin");
        model.write_binary(&path).unwrap();
        assert_eq!(HashModel::read_binary(&path).unwrap(), model);
        let nodes: Vec<usize> = (0..12).collect();
        let codes = encode(&k, &model, &nodes).unwrap();
        let cpath = dir.path().join("codes.txt");
        codes.write(&cpath).unwrap();
        assert_eq!(HashCodes::read(&cpath).unwrap(), codes);
    }
}
