//! Fitting the deep kernel's mixing weights by descending a smoothed SVM
//! span bound.
//!
//! Each outer iteration fixes `μ`, evaluates the network, trains one
//! kernel SVM per class on the training block, and scores the result with
//! `Σ_classes Σ_SV φ(α_i D_i² - 1)`, where `D_i` is the span of support
//! vector `i` and `φ(x) = 1 / (1 + exp(-x / σ))`. With `α` held fixed the
//! bound is differentiated through the span formula and the layer
//! recursion, and `μ` takes a projected gradient step with backtracking.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{LabelMap, Split};
use crate::kernel::{DeepKernelNet, ForwardTrace};
use crate::linalg;
use crate::svm::{train_kernel_svm, KernelSvmModel, KernelSvmOptions};
use crate::walker::StructureMatrix;

const RIDGE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub max_outer_iters: usize,
    /// Initial step `η` of every line search.
    pub step_size: f64,
    /// Width `σ` of the smoothed step.
    pub sigma: f64,
    /// Stop when an accepted step improves the bound by less than this.
    pub convergence_tol: f64,
    /// Compare the analytic gradient against central differences on the
    /// first iteration and log the relative error.
    pub finite_diff_check: bool,
    pub svm_c: f64,
    pub max_halvings: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            max_outer_iters: 50,
            step_size: 0.01,
            sigma: 0.1,
            convergence_tol: 1e-6,
            finite_diff_check: false,
            svm_c: 1.0,
            max_halvings: 20,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("step_size", self.step_size),
            ("sigma", self.sigma),
            ("svm_c", self.svm_c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `1 / (1 + exp(-x / σ))`.
pub fn smoothed_step(x: f64, sigma: f64) -> f64 {
    1.0 / (1.0 + (-x / sigma).exp())
}

fn smoothed_step_derivative(x: f64, sigma: f64) -> f64 {
    let s = smoothed_step(x, sigma);
    s * (1.0 - s) / sigma
}

/// Span bound of one binary SVM.
#[derive(Clone, Debug)]
pub struct SpanBoundState {
    /// Support vector positions within the training block.
    pub support: Vec<usize>,
    /// `D_i²` per support vector, aligned with `support`.
    pub span_values: Vec<f64>,
    pub objective: f64,
    pub iteration: usize,
    /// `∂ objective / ∂K` over the training block, `α` fixed.
    pub kernel_gradient: DMatrix<f64>,
}

/// Spans `D_i² = 1 / Z_ii` with `Z = A⁻¹ - A⁻¹11ᵀA⁻¹ / (1ᵀA⁻¹1)`, the
/// support-vector block of the inverse of `A = K_SV` bordered by a row and
/// column of ones.
pub fn compute_span_bound(k_train: &DMatrix<f64>, svm: &KernelSvmModel, sigma: f64) -> Result<SpanBoundState> {
    let n = k_train.nrows();
    if svm.alpha.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: svm.alpha.len(),
        });
    }
    let sv = svm.support.clone();
    if sv.is_empty() {
        return Err(Error::Degenerate("span bound needs at least one support vector".into()));
    }
    let alpha: Vec<f64> = sv.iter().map(|&i| svm.alpha[i]).collect();
    let mut kernel_gradient = DMatrix::zeros(n, n);
    if sv.len() == 1 {
        log::debug!("single support vector; span taken as distance to the origin");
        let i = sv[0];
        let d2 = k_train[(i, i)];
        let x = alpha[0] * d2 - 1.0;
        kernel_gradient[(i, i)] = smoothed_step_derivative(x, sigma) * alpha[0];
        return Ok(SpanBoundState {
            support: sv,
            span_values: vec![d2],
            objective: smoothed_step(x, sigma),
            iteration: 0,
            kernel_gradient,
        });
    }
    let a = linalg::submatrix(k_train, &sv);
    let z = bordered_inverse_block(&a)
        .or_else(|| {
            log::warn!("support-vector kernel is singular; retrying with a ridge of {RIDGE:e}");
            let mut ridged = a.clone();
            for i in 0..ridged.nrows() {
                ridged[(i, i)] += RIDGE;
            }
            bordered_inverse_block(&ridged)
        })
        .ok_or_else(|| Error::Singular("bordered support-vector kernel".into()))?;
    let m = sv.len();
    let mut span_values = Vec::with_capacity(m);
    let mut weights = DVector::zeros(m);
    let mut objective = 0.0;
    for t in 0..m {
        let d2 = 1.0 / z[(t, t)];
        let x = alpha[t] * d2 - 1.0;
        objective += smoothed_step(x, sigma);
        weights[t] = smoothed_step_derivative(x, sigma) * alpha[t] * d2 * d2;
        span_values.push(d2);
    }
    // ∂D_t²/∂A_ab = D_t⁴ Z_ta Z_tb
    let zw = DMatrix::from_fn(m, m, |a, t| z[(a, t)] * weights[t]);
    let g = linalg::matmul(&zw, &z);
    for (a, &ia) in sv.iter().enumerate() {
        for (b, &ib) in sv.iter().enumerate() {
            kernel_gradient[(ia, ib)] = g[(a, b)];
        }
    }
    Ok(SpanBoundState {
        support: sv,
        span_values,
        objective,
        iteration: 0,
        kernel_gradient,
    })
}

fn bordered_inverse_block(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = a.nrows();
    let inv = Cholesky::new(a.clone())?.inverse();
    let v = &inv * DVector::from_element(m, 1.0);
    let s = v.sum();
    if !(s > 0.0 && s.is_finite()) {
        return None;
    }
    let z = inv - (&v * v.transpose()) / s;
    if (0..m).all(|t| z[(t, t)] > 0.0 && z[(t, t)].is_finite()) {
        Some(z)
    } else {
        None
    }
}

/// One-vs-rest kernel SVMs on the training block. Classes with no training
/// members, or covering every training node, are skipped.
pub fn fit_class_svms(
    k_train: &DMatrix<f64>,
    classes: &[usize],
    num_classes: usize,
    c: f64,
) -> Result<Vec<(usize, KernelSvmModel)>> {
    let active: Vec<usize> = (0..num_classes)
        .filter(|&k| {
            let count = classes.iter().filter(|&&l| l == k).count();
            count > 0 && count < classes.len()
        })
        .collect();
    if active.is_empty() {
        return Err(Error::Degenerate("training labels contain a single class".into()));
    }
    let opts = KernelSvmOptions {
        c,
        ..Default::default()
    };
    active
        .par_iter()
        .map(|&k| {
            let y: Vec<f64> = classes.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
            train_kernel_svm(k_train, &y, &opts).map(|m| (k, m))
        })
        .collect()
}

/// Summed span bound over the per-class SVMs and its gradient with respect
/// to the training block of the kernel.
pub fn span_objective(
    k_train: &DMatrix<f64>,
    svms: &[(usize, KernelSvmModel)],
    sigma: f64,
) -> Result<(f64, DMatrix<f64>, usize)> {
    let states: Vec<SpanBoundState> = svms
        .par_iter()
        .map(|(_, m)| compute_span_bound(k_train, m, sigma))
        .collect::<Result<_>>()?;
    let n = k_train.nrows();
    let mut grad = DMatrix::zeros(n, n);
    let mut total = 0.0;
    let mut num_sv = 0;
    for s in &states {
        total += s.objective;
        grad += &s.kernel_gradient;
        num_sv += s.support.len();
    }
    if !total.is_finite() {
        return Err(Error::NonFinite {
            layer: 0,
            kernel: "span bound".into(),
        });
    }
    Ok((total, grad, num_sv))
}

/// Backpropagates a training-block kernel gradient to `μ`.
pub fn grad_mu(
    trace: &ForwardTrace,
    net: &DeepKernelNet,
    train: &[usize],
    kernel_gradient: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = trace.output().nrows();
    let mut upstream = DMatrix::zeros(n, n);
    for (a, &ia) in train.iter().enumerate() {
        for (b, &ib) in train.iter().enumerate() {
            upstream[(ia, ib)] = kernel_gradient[(a, b)];
        }
    }
    trace.backward(net, &upstream)
}

/// Bound value, `μ` gradient and support vector count at one `μ`.
struct Evaluation {
    objective: f64,
    gradient: DMatrix<f64>,
    num_sv: usize,
    svms: Vec<(usize, KernelSvmModel)>,
}

struct Problem<'a> {
    p: &'a StructureMatrix,
    train: Vec<usize>,
    classes: Vec<usize>,
    num_classes: usize,
    config: &'a TrainerConfig,
}

impl Problem<'_> {
    fn training_kernel(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let block = linalg::submatrix(k, &self.train);
        let (projected, clipped) = linalg::project_psd(&linalg::symmetric_part(&block));
        if clipped {
            log::debug!("training kernel projected onto the PSD cone");
        }
        projected
    }

    fn evaluate(&self, net: &DeepKernelNet) -> Result<Evaluation> {
        let trace = net.forward_trace(self.p)?;
        let k_train = self.training_kernel(trace.output());
        let svms = fit_class_svms(&k_train, &self.classes, self.num_classes, self.config.svm_c)?;
        let (objective, kgrad, num_sv) = span_objective(&k_train, &svms, self.config.sigma)?;
        let gradient = grad_mu(&trace, net, &self.train, &kgrad)?;
        Ok(Evaluation {
            objective,
            gradient,
            num_sv,
            svms,
        })
    }

    /// Bound at `net` with the SVMs of another `μ` held fixed.
    fn fixed_alpha_objective(&self, net: &DeepKernelNet, svms: &[(usize, KernelSvmModel)]) -> Result<f64> {
        let k = net.forward(self.p)?;
        let k_train = self.training_kernel(&k);
        Ok(span_objective(&k_train, svms, self.config.sigma)?.0)
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub t_span: f64,
    pub step_size: f64,
    pub num_support_vectors: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: DeepKernelNet,
    pub log: Vec<LogEntry>,
    /// Relative error of the analytic gradient against central
    /// differences, when the check was requested.
    pub gradient_check: Option<f64>,
}

/// Alternates SVM fits with projected gradient steps on `μ`.
///
/// Steps that would increase the bound are halved up to
/// `max_halvings` times; the loop ends when no step is accepted, an
/// accepted step gains less than `convergence_tol`, or after
/// `max_outer_iters` iterations. The returned net carries the best `μ`
/// seen.
pub fn train(
    p: &StructureMatrix,
    net: &DeepKernelNet,
    labels: &LabelMap,
    split: &Split,
    config: &TrainerConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    net.validate()?;
    let mut log_rows = Vec::new();
    if config.max_outer_iters == 0 {
        return Ok(TrainOutcome {
            net: net.clone(),
            log: log_rows,
            gradient_check: None,
        });
    }
    let classes: Vec<usize> = split
        .train
        .iter()
        .map(|&i| {
            labels
                .get(i)
                .ok_or_else(|| Error::Split(format!("training node {i} has no label")))
        })
        .collect::<Result<_>>()?;
    if let Some(&bad) = split.train.iter().find(|&&i| i >= p.n()) {
        return Err(Error::IndexOutOfRange { index: bad, len: p.n() });
    }
    let problem = Problem {
        p,
        train: split.train.clone(),
        classes,
        num_classes: labels.num_classes(),
        config,
    };
    let mut current = net.clone();
    let mut eval = problem.evaluate(&current)?;
    log_rows.push(LogEntry {
        iteration: 0,
        t_span: eval.objective,
        step_size: 0.0,
        num_support_vectors: eval.num_sv,
    });
    let gradient_check = if config.finite_diff_check {
        let fd = finite_difference_gradient(&problem, &current, &eval.svms, 1e-5)?;
        let err = relative_error(&eval.gradient, &fd);
        if err > 1e-3 {
            log::warn!("span gradient disagrees with finite differences (relative error {err:e})");
        } else {
            log::info!("span gradient check passed (relative error {err:e})");
        }
        Some(err)
    } else {
        None
    };

    for iteration in 1..=config.max_outer_iters {
        let mut eta = config.step_size;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let mu = projected_step(current.mu(), &eval.gradient, eta);
            if &mu == current.mu() {
                break;
            }
            let mut candidate = current.clone();
            candidate.set_mu(mu)?;
            let next = problem.evaluate(&candidate)?;
            if next.objective <= eval.objective {
                accepted = Some((candidate, next));
                break;
            }
            eta *= 0.5;
        }
        let Some((candidate, next)) = accepted else {
            log::info!("no improving step at iteration {iteration}; stopping");
            break;
        };
        let gain = eval.objective - next.objective;
        current = candidate;
        eval = next;
        log_rows.push(LogEntry {
            iteration,
            t_span: eval.objective,
            step_size: eta,
            num_support_vectors: eval.num_sv,
        });
        if gain < config.convergence_tol {
            break;
        }
    }
    Ok(TrainOutcome {
        net: current,
        log: log_rows,
        gradient_check,
    })
}

/// `max(0, μ - η∇)`, with any all-zero layer reset to uniform weights.
fn projected_step(mu: &DMatrix<f64>, grad: &DMatrix<f64>, eta: f64) -> DMatrix<f64> {
    let mut out = mu.zip_map(grad, |m, g| (m - eta * g).max(0.0));
    let t = out.ncols();
    for layer in 0..out.nrows() {
        if out.row(layer).iter().all(|&v| v == 0.0) {
            log::warn!("layer {layer} weights all projected to zero; resetting to uniform");
            out.row_mut(layer).fill(1.0 / t as f64);
        }
    }
    out
}

fn finite_difference_gradient(
    problem: &Problem<'_>,
    net: &DeepKernelNet,
    svms: &[(usize, KernelSvmModel)],
    h: f64,
) -> Result<DMatrix<f64>> {
    let (l, t) = net.mu().shape();
    let mut fd = DMatrix::zeros(l, t);
    for a in 0..l {
        for b in 0..t {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut mp = net.mu().clone();
            let mut mm = net.mu().clone();
            mp[(a, b)] += h;
            mm[(a, b)] = (mm[(a, b)] - h).max(0.0);
            let width = mp[(a, b)] - mm[(a, b)];
            if plus.set_mu(mp).is_err() || minus.set_mu(mm).is_err() {
                continue;
            }
            let fp = problem.fixed_alpha_objective(&plus, svms)?;
            let fm = problem.fixed_alpha_objective(&minus, svms)?;
            fd[(a, b)] = (fp - fm) / width;
        }
    }
    Ok(fd)
}

/// `‖a - b‖ / max(‖b‖, 1e-12)` in the Frobenius norm.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Writes `iteration,T_span,step_size,num_support_vectors`.
pub fn write_log(rows: &[LogEntry], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "iteration,T_span,step_size,num_support_vectors").map_err(io)?;
    for r in rows {
        writeln!(
            w,
            "{},{:?},{:?},{}",
            r.iteration, r.t_span, r.step_size, r.num_support_vectors
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::ElementaryKernel;
    use std::collections::BTreeMap;

    fn model(alpha: Vec<f64>, y: Vec<f64>) -> KernelSvmModel {
        let support = (0..alpha.len()).filter(|&i| alpha[i] > 0.0).collect();
        KernelSvmModel {
            alpha,
            y,
            bias: 0.0,
            c: 10.0,
            support,
            violation: 0.0,
            iterations: 0,
        }
    }

    #[test]
    fn identity_kernel_span_is_two() {
        let k = DMatrix::identity(2, 2);
        let s = compute_span_bound(&k, &model(vec![1.0, 1.0], vec![1.0, -1.0]), 0.1).unwrap();
        for d in &s.span_values {
            assert!((d - 2.0).abs() < 1e-12);
        }
        let expect = 2.0 * smoothed_step(1.0, 0.1);
        assert!((s.objective - expect).abs() < 1e-12);
    }

    #[test]
    fn single_support_vector_uses_diagonal() {
        let k = DMatrix::from_row_slice(2, 2, &[2.5, 0.3, 0.3, 1.0]);
        let s = compute_span_bound(&k, &model(vec![0.4, 0.0], vec![1.0, -1.0]), 0.1).unwrap();
        assert_eq!(s.span_values, vec![2.5]);
        assert_eq!(s.support, vec![0]);
    }

    #[test]
    fn span_gradient_matches_differences_in_k() {
        let x = DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 0.2, 0.1, 0.0, 0.3, 1.0, -0.2, 0.1, -0.5, 0.4, 1.0, 0.2, 0.2, -0.3, 0.8, 0.9],
        );
        let k = &x * x.transpose();
        let svm = model(vec![0.6, 0.2, 0.5, 0.3], vec![1.0, -1.0, -1.0, 1.0]);
        let sigma = 1.0;
        let s = compute_span_bound(&k, &svm, sigma).unwrap();
        let h = 1e-6;
        // K stays symmetric, so perturb mirrored pairs together
        for a in 0..4 {
            for b in a..4 {
                let mut kp = k.clone();
                let mut km = k.clone();
                kp[(a, b)] += h;
                km[(a, b)] -= h;
                if a != b {
                    kp[(b, a)] += h;
                    km[(b, a)] -= h;
                }
                let fp = compute_span_bound(&kp, &svm, sigma).unwrap().objective;
                let fm = compute_span_bound(&km, &svm, sigma).unwrap().objective;
                let fd = (fp - fm) / (2.0 * h);
                let analytic = if a == b {
                    s.kernel_gradient[(a, a)]
                } else {
                    s.kernel_gradient[(a, b)] + s.kernel_gradient[(b, a)]
                };
                assert!((fd - analytic).abs() < 1e-6 * (1.0 + fd.abs()), "{a},{b}: {fd} vs {analytic}");
            }
        }
    }

    #[test]
    fn smoothed_step_is_monotone() {
        let xs = [-2.0, -0.5, 0.0, 0.1, 3.0];
        assert!(xs.windows(2).all(|w| smoothed_step(w[0], 0.1) < smoothed_step(w[1], 0.1)));
        assert_eq!(smoothed_step(0.0, 0.1), 0.5);
    }

    #[test]
    fn projection_resets_dead_layer() {
        let mu = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let grad = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 100.0, 100.0]);
        let out = projected_step(&mu, &grad, 0.01);
        assert_eq!(out[(0, 0)], 0.49);
        assert_eq!(out[(0, 1)], 0.51);
        assert_eq!(out.row(1).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
    }

    fn toy_problem() -> (StructureMatrix, LabelMap, Split) {
        let n = 8;
        let p = DMatrix::from_fn(n, n, |i, j| {
            let same = (i < 4) == (j < 4);
            if i == j {
                0.0
            } else if same {
                1.0 + 0.1 * ((i * 7 + j * 3) % 5) as f64
            } else {
                0.2 * ((i + j) % 3) as f64
            }
        });
        let p = StructureMatrix::new(linalg::symmetric_part(&p)).unwrap();
        let labels: BTreeMap<usize, usize> = (0..n).map(|i| (i, usize::from(i >= 4))).collect();
        let labels = LabelMap::new(labels, vec!["a".into(), "b".into()]).unwrap();
        let split = Split {
            train: vec![0, 1, 2, 4, 5, 6],
            test: vec![3, 7],
            ratio: 0.75,
            seed: 0,
        };
        (p, labels, split)
    }

    #[test]
    fn zero_iterations_return_initial_net() {
        let (p, labels, split) = toy_problem();
        let net = DeepKernelNet::uniform(2, ElementaryKernel::default_set()).unwrap();
        let cfg = TrainerConfig {
            max_outer_iters: 0,
            ..Default::default()
        };
        let out = train(&p, &net, &labels, &split, &cfg).unwrap();
        assert_eq!(out.net, net);
        assert!(out.log.is_empty());
    }

    #[test]
    fn training_is_monotone_and_deterministic() {
        let (p, labels, split) = toy_problem();
        let net = DeepKernelNet::uniform(2, vec![ElementaryKernel::Linear, ElementaryKernel::Rbf { gamma: 1.0 }]).unwrap();
        let cfg = TrainerConfig {
            max_outer_iters: 5,
            step_size: 0.1,
            ..Default::default()
        };
        let a = train(&p, &net, &labels, &split, &cfg).unwrap();
        let b = train(&p, &net, &labels, &split, &cfg).unwrap();
        assert_eq!(a.net, b.net);
        assert!(a.log.windows(2).all(|w| w[1].t_span <= w[0].t_span));
        assert!(a.net.mu().iter().all(|&v| v >= 0.0));
    }
}
