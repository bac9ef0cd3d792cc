//! Dense helpers shared by the kernel, hashing and span-bound code.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rayon::prelude::*;

/// Below this size the plain single-threaded product is faster.
const PAR_THRESHOLD: usize = 128;
const COLUMN_BLOCK: usize = 64;

/// `a * b`, split over column blocks of `b`.
///
/// Every output entry is produced by the same serial kernel regardless of
/// the thread count, so results are bit-for-bit reproducible.
pub fn matmul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    let (n, m) = (a.nrows(), b.ncols());
    if n.max(m).max(a.ncols()) < PAR_THRESHOLD || m <= COLUMN_BLOCK {
        return a * b;
    }
    let blocks: Vec<(usize, DMatrix<f64>)> = (0..m)
        .step_by(COLUMN_BLOCK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let width = COLUMN_BLOCK.min(m - start);
            (start, a * b.columns(start, width))
        })
        .collect();
    let mut out = DMatrix::zeros(n, m);
    for (start, block) in blocks {
        out.columns_mut(start, block.ncols()).copy_from(&block);
    }
    out
}

/// `a * bᵀ`.
pub fn matmul_nt(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    matmul(a, &b.transpose())
}

/// `aᵀ * b`.
pub fn matmul_tn(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    matmul(&a.transpose(), b)
}

/// Gram matrix `X Xᵀ` of the rows of `x`, exactly symmetric.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = matmul_nt(x, x);
    symmetrize_upper(&mut g);
    g
}

/// Copies the upper triangle onto the lower one.
pub fn symmetrize_upper(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// `(m + mᵀ) / 2`.
pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Frobenius inner product `Σ a_ij b_ij`.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Symmetric eigendecomposition with eigenvalues in ascending order.
///
/// Columns of the returned matrix are the matching unit eigenvectors.
pub fn sym_eigen_ascending(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        // fix the sign so the largest-magnitude component is positive
        let pivot = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Projects a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues at zero.
///
/// Returns the input unchanged (and `false`) when a Cholesky factorization
/// with a tiny relative ridge already succeeds.
pub fn project_psd(k: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let n = k.nrows();
    let scale = (0..n).map(|i| k[(i, i)].abs()).fold(1.0_f64, f64::max);
    let mut probe = k.clone();
    for i in 0..n {
        probe[(i, i)] += 1e-10 * scale;
    }
    if Cholesky::new(probe).is_some() {
        return (k.clone(), false);
    }
    let (values, vectors) = sym_eigen_ascending(&symmetric_part(k));
    let mut scaled = vectors.clone();
    for (j, &v) in values.iter().enumerate() {
        let s = v.max(0.0);
        scaled.column_mut(j).scale_mut(s);
    }
    let mut out = matmul_nt(&scaled, &vectors);
    symmetrize_upper(&mut out);
    (out, true)
}

/// Extracts the square submatrix at `idx × idx`.
pub fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Extracts the rows listed in `idx`.
pub fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Extracts the columns listed in `idx`.
pub fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
