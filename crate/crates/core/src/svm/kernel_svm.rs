//! Binary C-SVM trained in the dual by sequential minimal optimization with
//! second-order working-set selection.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSvmOptions {
    pub c: f64,
    /// Stop once the maximal violating pair gap drops below this.
    pub tolerance: f64,
    /// Iteration cap; `None` means `max(10⁷, 100·n)`.
    pub max_iterations: Option<usize>,
}

impl Default for KernelSvmOptions {
    fn default() -> Self {
        KernelSvmOptions {
            c: 1.0,
            tolerance: 1e-4,
            max_iterations: None,
        }
    }
}

/// Decision function `f(x) = Σ α_i y_i K(x_i, x) + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSvmModel {
    pub alpha: Vec<f64>,
    pub y: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    /// Indices with `α_i > 0`, ascending.
    pub support: Vec<usize>,
    /// Maximal violating pair gap at termination.
    pub violation: f64,
    pub iterations: usize,
}

/// Trains on a precomputed `n × n` kernel and `±1` labels.
pub fn train_kernel_svm(k: &DMatrix<f64>, y: &[f64], options: &KernelSvmOptions) -> Result<KernelSvmModel> {
    let n = y.len();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: k.nrows(),
        });
    }
    if !(options.c > 0.0 && options.c.is_finite()) {
        return Err(Error::Config(format!("SVM C must be positive, got {}", options.c)));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Config("SVM labels must be +1 or -1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::Degenerate("SVM needs both positive and negative labels".into()));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            layer: 0,
            kernel: "svm kernel".into(),
        });
    }
    let c = options.c;
    let max_iter = options.max_iterations.unwrap_or_else(|| 10_000_000usize.max(100 * n));
    let q = |i: usize, j: usize| y[i] * y[j] * k[(i, j)];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let is_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let is_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    let violation = loop {
        // first index: maximal -y G over I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if is_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        // second index: largest objective decrease over I_low
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !is_low(alpha[t], y[t]) {
                continue;
            }
            let v = y[t] * grad[t];
            if v > gmax2 {
                gmax2 = v;
            }
            if i_sel == usize::MAX {
                continue;
            }
            let diff = gmax + v;
            if diff > 0.0 {
                let mut a = k[(i_sel, i_sel)] + k[(t, t)] - 2.0 * k[(i_sel, t)];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -diff * diff / a;
                if obj < best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        let gap = gmax + gmax2;
        if gap < options.tolerance || j_sel == usize::MAX {
            break gap.max(0.0);
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence {
                iterations,
                violation: gap,
            });
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k[(i, i)] + k[(j, j)] - 2.0 * k[(i, j)];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    };

    // bias from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    let support = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    Ok(KernelSvmModel {
        alpha,
        y: y.to_vec(),
        bias: -rho,
        c,
        support,
        violation,
        iterations,
    })
}

impl KernelSvmModel {
    /// `f(x)` given the kernel values between `x` and every training point.
    pub fn decision(&self, kernel_row: &[f64]) -> f64 {
        self.support
            .iter()
            .map(|&i| self.alpha[i] * self.y[i] * kernel_row[i])
            .sum::<f64>()
            + self.bias
    }

    /// Decision values on the training points themselves.
    pub fn training_decisions(&self, k: &DMatrix<f64>) -> Vec<f64> {
        (0..self.alpha.len())
            .map(|j| {
                self.support
                    .iter()
                    .map(|&i| self.alpha[i] * self.y[i] * k[(i, j)])
                    .sum::<f64>()
                    + self.bias
            })
            .collect()
    }

    /// Dual objective in minimization form, `½ αᵀQα - Σα`.
    pub fn dual_objective(&self, k: &DMatrix<f64>) -> f64 {
        dual_objective(k, &self.y, &self.alpha)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# dksh kernel svm\nversion = 1\n");
        let _ = writeln!(s, "n = {}", self.alpha.len());
        let _ = writeln!(s, "c = {:?}", self.c);
        let _ = writeln!(s, "bias = {:?}", self.bias);
        for (i, (a, y)) in self.alpha.iter().zip(&self.y).enumerate() {
            let _ = writeln!(s, "alpha.{i} = {a:?} {y:?}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<KernelSvmModel> {
        let map = super::linear::parse_key_values(text)?;
        let num = |k: &str| -> Result<f64> {
            map.get(k)
                .ok_or_else(|| Error::Format(format!("missing key `{k}`")))?
                .parse()
                .map_err(|_| Error::Format(format!("bad number for `{k}`")))
        };
        if map.get("version").map(String::as_str) != Some("1") {
            return Err(Error::Format("unsupported svm file version".into()));
        }
        let n = num("n")? as usize;
        let (mut alpha, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let key = format!("alpha.{i}");
            let v = map
                .get(&key)
                .ok_or_else(|| Error::Format(format!("missing key `{key}`")))?;
            let mut parts = v.split_whitespace().map(str::parse::<f64>);
            match (parts.next(), parts.next()) {
                (Some(Ok(a)), Some(Ok(l))) => {
                    alpha.push(a);
                    y.push(l);
                }
                _ => return Err(Error::Format(format!("bad value for `{key}`"))),
            }
        }
        let support = (0..n).filter(|&t| alpha[t] > 0.0).collect();
        Ok(KernelSvmModel {
            alpha,
            y,
            bias: num("bias")?,
            c: num("c")?,
            support,
            violation: 0.0,
            iterations: 0,
        })
    }
}

/// `½ αᵀQα - Σα` with `Q_ij = y_i y_j K_ij`.
pub(crate) fn dual_objective(k: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[(i, j)];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_kernel(points: &[[f64; 2]]) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |i, j| points[i][0] * points[j][0] + points[i][1] * points[j][1])
    }

    #[test]
    fn two_orthonormal_points() {
        let k = DMatrix::identity(2, 2);
        let opts = KernelSvmOptions {
            c: 10.0,
            ..Default::default()
        };
        let m = train_kernel_svm(&k, &[1.0, -1.0], &opts).unwrap();
        assert!((m.alpha[0] - 1.0).abs() < 1e-12);
        assert!((m.alpha[1] - 1.0).abs() < 1e-12);
        assert!(m.bias.abs() < 1e-12);
        assert_eq!(m.support, vec![0, 1]);
    }

    #[test]
    fn separable_points_are_fit_exactly() {
        let pts = [[2.0, 1.0], [3.0, 2.5], [2.5, -0.5], [-1.0, -2.0], [-2.0, 0.5], [-1.5, -1.0]];
        let y = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let k = linear_kernel(&pts);
        let m = train_kernel_svm(
            &k,
            &y,
            &KernelSvmOptions {
                c: 100.0,
                ..Default::default()
            },
        )
        .unwrap();
        let f = m.training_decisions(&k);
        for (fi, yi) in f.iter().zip(&y) {
            assert!(fi * yi > 0.0);
        }
        let eq: f64 = m.alpha.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!(eq.abs() < 1e-6);
        assert!(m.violation <= 1e-4);
    }

    #[test]
    fn single_class_is_rejected() {
        let k = DMatrix::identity(3, 3);
        assert!(matches!(
            train_kernel_svm(&k, &[1.0, 1.0, 1.0], &KernelSvmOptions::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_violation() {
        let pts = [[1.0, 0.2], [0.3, 1.0], [-1.0, 0.1], [-0.2, -1.0]];
        let k = linear_kernel(&pts);
        let opts = KernelSvmOptions {
            max_iterations: Some(0),
            ..Default::default()
        };
        match train_kernel_svm(&k, &[1.0, 1.0, -1.0, -1.0], &opts) {
            Err(Error::NoConvergence { violation, .. }) => assert!(violation > 1e-4),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn text_round_trip() {
        let k = DMatrix::identity(2, 2);
        let m = train_kernel_svm(&k, &[1.0, -1.0], &KernelSvmOptions::default()).unwrap();
        let back = KernelSvmModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back.alpha, m.alpha);
        assert_eq!(back.bias, m.bias);
        assert_eq!(back.support, m.support);
    }
}
