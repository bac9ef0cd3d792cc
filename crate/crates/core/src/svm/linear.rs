//! One-vs-rest linear SVM with L2 regularization and hinge loss, trained by
//! dual coordinate descent with shrinking.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearSvmOptions {
    pub c: f64,
    /// Stop when the projected-gradient spread falls below this.
    pub tolerance: f64,
    pub max_epochs: usize,
    /// Seeds the coordinate visiting order.
    pub seed: u64,
}

impl Default for LinearSvmOptions {
    fn default() -> Self {
        LinearSvmOptions {
            c: 1.0,
            tolerance: 1e-4,
            max_epochs: 1000,
            seed: 0,
        }
    }
}

/// Per-class hyperplanes; class `k` scores `w_k · x + b_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvmModel {
    /// `num_classes × dim`
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
    pub c: f64,
}

/// Trains one binary problem per class on the rows of `x`.
///
/// A constant feature of `1.0` is appended so the bias is regularized along
/// with the weights.
pub fn train_linear_svm(
    x: &DMatrix<f64>,
    labels: &[usize],
    num_classes: usize,
    options: &LinearSvmOptions,
) -> Result<LinearSvmModel> {
    let (n, dim) = x.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    if !(options.c > 0.0 && options.c.is_finite()) {
        return Err(Error::Config(format!("SVM C must be positive, got {}", options.c)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: num_classes,
        });
    }
    let mut present = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Degenerate("linear SVM needs at least two classes in training data".into()));
    }
    // row-major copy with the bias feature appended
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r: Vec<f64> = x.row(i).iter().copied().collect();
            r.push(1.0);
            r
        })
        .collect();
    let fits: Vec<Vec<f64>> = (0..num_classes)
        .into_par_iter()
        .map(|class| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            dual_coordinate_descent(&rows, &y, options)
        })
        .collect();
    let mut weights = DMatrix::zeros(num_classes, dim);
    let mut bias = vec![0.0; num_classes];
    for (class, w) in fits.iter().enumerate() {
        for d in 0..dim {
            weights[(class, d)] = w[d];
        }
        bias[class] = w[dim];
    }
    Ok(LinearSvmModel {
        weights,
        bias,
        c: options.c,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dual_coordinate_descent(rows: &[Vec<f64>], y: &[f64], options: &LinearSvmOptions) -> Vec<f64> {
    let n = rows.len();
    let dim = rows.first().map_or(0, Vec::len);
    let upper = options.c;
    let qd: Vec<f64> = rows.iter().map(|r| dot(r, r)).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut index: Vec<usize> = (0..n).collect();
    let mut active = n;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let (mut pg_max_old, mut pg_min_old) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut epoch = 0;
    while epoch < options.max_epochs {
        let (mut pg_max_new, mut pg_min_new) = (f64::NEG_INFINITY, f64::INFINITY);
        index[..active].shuffle(&mut rng);
        let mut s = 0;
        while s < active {
            let i = index[s];
            let g = y[i] * dot(&w, &rows[i]) - 1.0;
            let mut pg = 0.0;
            if alpha[i] == 0.0 {
                if g > pg_max_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g < 0.0 {
                    pg = g;
                }
            } else if alpha[i] == upper {
                if g < pg_min_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                } else if g > 0.0 {
                    pg = g;
                }
            } else {
                pg = g;
            }
            pg_max_new = pg_max_new.max(pg);
            pg_min_new = pg_min_new.min(pg);
            if pg.abs() > 1e-12 && qd[i] > 0.0 {
                let old = alpha[i];
                alpha[i] = (alpha[i] - g / qd[i]).clamp(0.0, upper);
                let step = (alpha[i] - old) * y[i];
                for (wd, xd) in w.iter_mut().zip(&rows[i]) {
                    *wd += step * xd;
                }
            }
            s += 1;
        }
        epoch += 1;
        if pg_max_new - pg_min_new <= options.tolerance {
            if active == n {
                break;
            }
            active = n;
            pg_max_old = f64::INFINITY;
            pg_min_old = f64::NEG_INFINITY;
            continue;
        }
        pg_max_old = if pg_max_new <= 0.0 { f64::INFINITY } else { pg_max_new };
        pg_min_old = if pg_min_new >= 0.0 { f64::NEG_INFINITY } else { pg_min_new };
    }
    if epoch >= options.max_epochs {
        log::warn!("linear SVM reached {} epochs without meeting tolerance", options.max_epochs);
    }
    w
}

impl LinearSvmModel {
    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Per-class scores for one feature vector.
    pub fn scores(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: features.len(),
            });
        }
        let v = DVector::from_column_slice(features);
        let s = &self.weights * v;
        Ok(s.iter().zip(&self.bias).map(|(a, b)| a + b).collect())
    }

    /// Predicted class for every row of `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        if x.nrows() > 0 && x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.ncols(),
            });
        }
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                Ok(super::argmax_class(&self.scores(&row)?))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# dksh linear svm\nversion = 1\n");
        let _ = writeln!(s, "classes = {}", self.num_classes());
        let _ = writeln!(s, "dim = {}", self.dim());
        let _ = writeln!(s, "c = {:?}", self.c);
        for k in 0..self.num_classes() {
            let w: Vec<String> = self.weights.row(k).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "bias.{k} = {:?}", self.bias[k]);
            let _ = writeln!(s, "weights.{k} = {}", w.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<LinearSvmModel> {
        let map = parse_key_values(text)?;
        let get = |k: &str| map.get(k).ok_or_else(|| Error::Format(format!("missing key `{k}`")));
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad number for `{k}`")))
        };
        if get("version")? != "1" {
            return Err(Error::Format("unsupported svm file version".into()));
        }
        let classes = num("classes")? as usize;
        let dim = num("dim")? as usize;
        let mut weights = DMatrix::zeros(classes, dim);
        let mut bias = Vec::with_capacity(classes);
        for k in 0..classes {
            bias.push(num(&format!("bias.{k}"))?);
            let key = format!("weights.{k}");
            let values: Vec<f64> = get(&key)?
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::Format(format!("bad value in `{key}`"))))
                .collect::<Result<_>>()?;
            if values.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: values.len(),
                });
            }
            for (d, v) in values.into_iter().enumerate() {
                weights[(k, d)] = v;
            }
        }
        Ok(LinearSvmModel {
            weights,
            bias,
            c: num("c")?,
        })
    }
}

pub(crate) fn parse_key_values(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad line `{line}`")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}
