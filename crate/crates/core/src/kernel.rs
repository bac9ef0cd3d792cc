//! Elementary kernels and the layered multiple-kernel network.
//!
//! Layer 1 applies each elementary kernel to the rows of the structure
//! matrix. Every later layer mixes the previous layer's `T` kernel matrices
//! with nonnegative weights `μ`, treats row `i` of that `N × N` mix as node
//! `i`'s feature vector, and applies the elementary kernels again. The
//! network output is the `μ`-weighted sum of the last layer's kernels.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::walker::StructureMatrix;

/// A kernel function evaluated on pairs of feature rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementaryKernel {
    /// `xᵀy`
    Linear,
    /// `exp(-γ‖x - y‖²)`
    Rbf { gamma: f64 },
    /// `tanh(α xᵀy + β)`
    Sigmoid { alpha: f64, beta: f64 },
    /// `(α xᵀy + β)^δ`
    Polynomial { alpha: f64, beta: f64, degree: u32 },
}

impl ElementaryKernel {
    /// Linear, RBF(γ=1), sigmoid(α=-1e-4, β=1), polynomial(α=1, β=1, δ=2).
    pub fn default_set() -> Vec<ElementaryKernel> {
        vec![
            ElementaryKernel::Linear,
            ElementaryKernel::Rbf { gamma: 1.0 },
            ElementaryKernel::Sigmoid {
                alpha: -1e-4,
                beta: 1.0,
            },
            ElementaryKernel::Polynomial {
                alpha: 1.0,
                beta: 1.0,
                degree: 2,
            },
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ElementaryKernel::Linear => "linear",
            ElementaryKernel::Rbf { .. } => "rbf",
            ElementaryKernel::Sigmoid { .. } => "sigmoid",
            ElementaryKernel::Polynomial { .. } => "polynomial",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ElementaryKernel::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(Error::Config(format!("rbf gamma must be positive, got {gamma}")))
            }
            ElementaryKernel::Polynomial { degree, .. } if degree < 1 => {
                Err(Error::Config("polynomial degree must be at least 1".into()))
            }
            ElementaryKernel::Sigmoid { alpha, beta } if !(alpha.is_finite() && beta.is_finite()) => {
                Err(Error::Config("sigmoid parameters must be finite".into()))
            }
            ElementaryKernel::Polynomial { alpha, beta, .. } if !(alpha.is_finite() && beta.is_finite()) => {
                Err(Error::Config("polynomial parameters must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Kernel matrix from a Gram matrix `G = X Xᵀ`; `rbf_scale` multiplies γ.
    fn apply_to_gram(&self, g: &DMatrix<f64>, rbf_scale: f64) -> DMatrix<f64> {
        let n = g.nrows();
        match *self {
            ElementaryKernel::Linear => g.clone(),
            ElementaryKernel::Rbf { gamma } => {
                let gamma = gamma * rbf_scale;
                DMatrix::from_fn(n, n, |i, j| {
                    if i == j {
                        1.0
                    } else {
                        let d = (g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)]).max(0.0);
                        (-gamma * d).exp()
                    }
                })
            }
            ElementaryKernel::Sigmoid { alpha, beta } => g.map(|v| (alpha * v + beta).tanh()),
            ElementaryKernel::Polynomial {
                alpha,
                beta,
                degree,
            } => g.map(|v| (alpha * v + beta).powi(degree as i32)),
        }
    }

    /// Rectangular kernel block from cross products `X_R Xᵀ` and the squared
    /// norms of both row sets.
    fn apply_to_cross(
        &self,
        cross: &DMatrix<f64>,
        row_norms: &[f64],
        col_norms: &[f64],
        same: &[Option<usize>],
        rbf_scale: f64,
    ) -> DMatrix<f64> {
        let (r, n) = cross.shape();
        match *self {
            ElementaryKernel::Linear => cross.clone(),
            ElementaryKernel::Rbf { gamma } => {
                let gamma = gamma * rbf_scale;
                DMatrix::from_fn(r, n, |a, j| {
                    if same[a] == Some(j) {
                        1.0
                    } else {
                        let d = (row_norms[a] + col_norms[j] - 2.0 * cross[(a, j)]).max(0.0);
                        (-gamma * d).exp()
                    }
                })
            }
            _ => self.apply_to_gram(cross, rbf_scale),
        }
    }

    /// Adjoint with respect to the Gram matrix: given `∂f/∂K`, returns
    /// `∂f/∂G` (not symmetrized).
    fn gram_adjoint(&self, g: &DMatrix<f64>, k: &DMatrix<f64>, kbar: &DMatrix<f64>, rbf_scale: f64) -> DMatrix<f64> {
        let n = g.nrows();
        match *self {
            ElementaryKernel::Linear => kbar.clone(),
            ElementaryKernel::Sigmoid { alpha, .. } => {
                DMatrix::from_fn(n, n, |i, j| kbar[(i, j)] * alpha * (1.0 - k[(i, j)] * k[(i, j)]))
            }
            ElementaryKernel::Polynomial {
                alpha,
                beta,
                degree,
            } => DMatrix::from_fn(n, n, |i, j| {
                let base = alpha * g[(i, j)] + beta;
                kbar[(i, j)] * degree as f64 * alpha * base.powi(degree as i32 - 1)
            }),
            ElementaryKernel::Rbf { gamma } => {
                let gamma = gamma * rbf_scale;
                // D_ij = G_ii + G_jj - 2 G_ij, K = exp(-γ D)
                let mut out = DMatrix::zeros(n, n);
                let mut diag = vec![0.0; n];
                for j in 0..n {
                    for i in 0..n {
                        if i == j {
                            continue;
                        }
                        let dbar = -gamma * k[(i, j)] * kbar[(i, j)];
                        out[(i, j)] = -2.0 * dbar;
                        diag[i] += dbar;
                        diag[j] += dbar;
                    }
                }
                for i in 0..n {
                    out[(i, i)] = diag[i];
                }
                out
            }
        }
    }
}

impl fmt::Display for ElementaryKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ElementaryKernel::Linear => write!(f, "linear"),
            ElementaryKernel::Rbf { gamma } => write!(f, "rbf gamma={gamma:?}"),
            ElementaryKernel::Sigmoid { alpha, beta } => {
                write!(f, "sigmoid alpha={alpha:?} beta={beta:?}")
            }
            ElementaryKernel::Polynomial {
                alpha,
                beta,
                degree,
            } => write!(f, "polynomial alpha={alpha:?} beta={beta:?} degree={degree}"),
        }
    }
}

impl std::str::FromStr for ElementaryKernel {
    type Err = Error;

    /// Parses `linear`, `rbf gamma=1`, `sigmoid alpha=.. beta=..`,
    /// `polynomial alpha=.. beta=.. degree=..`. Missing parameters take the
    /// defaults of [`ElementaryKernel::default_set`].
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let mut params = std::collections::HashMap::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad kernel parameter `{p}`")))?;
            params.insert(k.to_string(), v.to_string());
        }
        let num = |key: &str, default: f64| -> Result<f64> {
            params.get(key).map_or(Ok(default), |v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("bad value for `{key}`: `{v}`")))
            })
        };
        let kernel = match kind {
            "linear" => ElementaryKernel::Linear,
            "rbf" => ElementaryKernel::Rbf {
                gamma: num("gamma", 1.0)?,
            },
            "sigmoid" => ElementaryKernel::Sigmoid {
                alpha: num("alpha", -1e-4)?,
                beta: num("beta", 1.0)?,
            },
            "polynomial" | "poly" => ElementaryKernel::Polynomial {
                alpha: num("alpha", 1.0)?,
                beta: num("beta", 1.0)?,
                degree: num("degree", 2.0)? as u32,
            },
            other => return Err(Error::Config(format!("unknown kernel `{other}`"))),
        };
        kernel.validate()?;
        Ok(kernel)
    }
}

/// Applies a kernel to every pair of rows of `features`.
pub fn elementary_kernel(features: &DMatrix<f64>, kernel: &ElementaryKernel) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            layer: 0,
            kernel: format!("{} input", kernel.name()),
        });
    }
    let g = linalg::gram(features);
    let k = kernel.apply_to_gram(&g, 1.0);
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            layer: 0,
            kernel: kernel.name().into(),
        });
    }
    Ok(k)
}

/// How each layer's input rows are scaled before the kernels see them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FeatureScaling {
    /// Raw rows.
    None,
    /// Each row divided by its Euclidean norm. Keeps every layer's kernels
    /// bounded; raw co-occurrence rows overflow polynomial kernels within a
    /// few layers.
    #[default]
    UnitRows,
}

/// Layered multiple-kernel network with an `L × T` grid of mixing weights.
///
/// Row `l` of `mu` mixes layer `l`'s kernels: into the input of layer
/// `l + 1` for `l < L - 1`, into the network output for the last layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepKernelNet {
    kernels: Vec<Vec<ElementaryKernel>>,
    mu: DMatrix<f64>,
    /// Per-layer multiplier on RBF γ.
    rbf_scale: Vec<f64>,
    scaling: FeatureScaling,
}

impl DeepKernelNet {
    /// Network with the same kernel row at every layer and uniform
    /// `μ = 1/T`.
    pub fn uniform(num_layers: usize, kernels: Vec<ElementaryKernel>) -> Result<DeepKernelNet> {
        if num_layers == 0 || kernels.is_empty() {
            return Err(Error::Config("network needs at least one layer and one kernel".into()));
        }
        let t = kernels.len();
        let net = DeepKernelNet {
            kernels: vec![kernels; num_layers],
            mu: DMatrix::from_element(num_layers, t, 1.0 / t as f64),
            rbf_scale: vec![1.0; num_layers],
            scaling: FeatureScaling::default(),
        };
        net.validate()?;
        Ok(net)
    }

    pub fn with_scaling(mut self, scaling: FeatureScaling) -> DeepKernelNet {
        self.scaling = scaling;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernels_per_layer(&self) -> usize {
        self.mu.ncols()
    }

    pub fn kernels(&self, layer: usize) -> &[ElementaryKernel] {
        &self.kernels[layer]
    }

    pub fn mu(&self) -> &DMatrix<f64> {
        &self.mu
    }

    pub fn scaling(&self) -> FeatureScaling {
        self.scaling
    }

    pub fn rbf_scale(&self) -> &[f64] {
        &self.rbf_scale
    }

    pub fn set_mu(&mut self, mu: DMatrix<f64>) -> Result<()> {
        if mu.shape() != self.mu.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.mu.len(),
                actual: mu.len(),
            });
        }
        let old = std::mem::replace(&mut self.mu, mu);
        if let Err(e) = self.validate() {
            self.mu = old;
            return Err(e);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let (l, t) = self.mu.shape();
        if self.kernels.len() != l || self.kernels.iter().any(|row| row.len() != t) {
            return Err(Error::Config("kernel grid does not match mu shape".into()));
        }
        for row in &self.kernels {
            for k in row {
                k.validate()?;
            }
        }
        if self.mu.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("mixing weights must be finite and nonnegative".into()));
        }
        for layer in 0..l {
            if self.mu.row(layer).iter().all(|&v| v == 0.0) {
                return Err(Error::Config(format!("layer {layer} has all-zero mixing weights")));
            }
        }
        Ok(())
    }

    /// Median-heuristic bandwidth for RBF units beyond the first layer:
    /// `γ_eff = γ / median pairwise squared distance` of that layer's input
    /// rows, measured at the current `μ` and then frozen so the network
    /// stays a smooth function of `μ`.
    pub fn calibrate_rbf(&mut self, p: &StructureMatrix) -> Result<()> {
        self.rbf_scale = vec![1.0; self.num_layers()];
        let has_rbf = |row: &[ElementaryKernel]| row.iter().any(|k| matches!(k, ElementaryKernel::Rbf { .. }));
        if !self.kernels.iter().skip(1).any(|row| has_rbf(row)) {
            return Ok(());
        }
        let trace = self.forward_trace(p)?;
        for layer in 1..self.num_layers() {
            if !has_rbf(&self.kernels[layer]) {
                continue;
            }
            let g = &trace.grams[layer];
            let n = g.nrows();
            let mut d: Vec<f64> = (0..n)
                .flat_map(|j| (0..j).map(move |i| (i, j)))
                .map(|(i, j)| (g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)]).max(0.0))
                .collect();
            if d.is_empty() {
                continue;
            }
            let mid = d.len() / 2;
            let (_, median, _) = d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
            if *median > 0.0 && median.is_finite() {
                self.rbf_scale[layer] = 1.0 / *median;
            }
        }
        Ok(())
    }

    /// Output kernel `K` (`N × N`).
    pub fn forward(&self, p: &StructureMatrix) -> Result<DMatrix<f64>> {
        Ok(self.forward_trace(p)?.output)
    }

    /// Rows of [`DeepKernelNet::forward`] at `landmarks` (`R × N`).
    pub fn forward_slice(&self, p: &StructureMatrix, landmarks: &[usize]) -> Result<DMatrix<f64>> {
        let n = p.n();
        if let Some(&bad) = landmarks.iter().find(|&&r| r >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let mut seen = std::collections::HashSet::new();
        if landmarks.iter().any(|r| !seen.insert(*r)) {
            log::warn!("duplicate landmark indices requested");
        }
        let k = self.forward(p)?;
        Ok(linalg::select_rows(&k, landmarks))
    }

    /// Like [`DeepKernelNet::forward_slice`] but evaluates only the
    /// requested rows of the last layer. Agrees with the full forward pass
    /// up to rounding; use it when `R ≪ N`.
    pub fn forward_rows(&self, p: &StructureMatrix, landmarks: &[usize]) -> Result<DMatrix<f64>> {
        let n = p.n();
        if let Some(&bad) = landmarks.iter().find(|&&r| r >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        let last = self.num_layers() - 1;
        let x = if last == 0 {
            scale_rows(p.matrix(), self.scaling).0
        } else {
            let trace = self.forward_layers(p, last)?;
            trace.features[last].clone()
        };
        let xr = linalg::select_rows(&x, landmarks);
        let cross = linalg::matmul_nt(&xr, &x);
        let col_norms: Vec<f64> = x.row_iter().map(|r| r.norm_squared()).collect();
        let row_norms: Vec<f64> = landmarks.iter().map(|&r| col_norms[r]).collect();
        let same: Vec<Option<usize>> = landmarks.iter().map(|&r| Some(r)).collect();
        let mut out = DMatrix::zeros(landmarks.len(), n);
        for (t, kernel) in self.kernels[last].iter().enumerate() {
            let w = self.mu[(last, t)];
            if w == 0.0 {
                continue;
            }
            let k = kernel.apply_to_cross(&cross, &row_norms, &col_norms, &same, self.rbf_scale[last]);
            out += &k * w;
        }
        check_finite(&out, last, "output")?;
        Ok(out)
    }

    /// Forward pass keeping every intermediate needed for backpropagation.
    pub fn forward_trace(&self, p: &StructureMatrix) -> Result<ForwardTrace> {
        self.forward_layers(p, self.num_layers())
    }

    /// Runs layers `0..upto` (and the output mix when `upto == L`).
    fn forward_layers(&self, p: &StructureMatrix, upto: usize) -> Result<ForwardTrace> {
        self.validate()?;
        if p.matrix().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: 0,
                kernel: "input".into(),
            });
        }
        let layers = self.num_layers();
        let mut trace = ForwardTrace {
            features: Vec::with_capacity(layers),
            norms: Vec::with_capacity(layers),
            grams: Vec::with_capacity(layers),
            kernels: Vec::with_capacity(layers),
            output: DMatrix::zeros(0, 0),
        };
        let (mut x, mut norms) = scale_rows(p.matrix(), self.scaling);
        for layer in 0..layers {
            trace.features.push(x);
            trace.norms.push(norms);
            if layer == upto {
                return Ok(trace);
            }
            let g = linalg::gram(&trace.features[layer]);
            let scale = self.rbf_scale[layer];
            let ks: Vec<DMatrix<f64>> = self.kernels[layer]
                .par_iter()
                .map(|k| k.apply_to_gram(&g, scale))
                .collect();
            for (k, kernel) in ks.iter().zip(&self.kernels[layer]) {
                check_finite(k, layer, kernel.name())?;
            }
            let n = g.nrows();
            let mut mix = DMatrix::zeros(n, n);
            for (t, k) in ks.iter().enumerate() {
                mix += k * self.mu[(layer, t)];
            }
            check_finite(&mix, layer, "mix")?;
            trace.grams.push(g);
            trace.kernels.push(ks);
            if layer + 1 == layers {
                trace.output = mix;
                break;
            }
            let scaled = scale_rows(&mix, self.scaling);
            x = scaled.0;
            norms = scaled.1;
        }
        Ok(trace)
    }

    /// Serializes to the versioned key-value text format.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# dksh deep kernel network\nversion = 1\n");
        s.push_str(&format!("layers = {}\n", self.num_layers()));
        s.push_str(&format!("kernels_per_layer = {}\n", self.kernels_per_layer()));
        s.push_str(&format!(
            "scaling = {}\n",
            match self.scaling {
                FeatureScaling::None => "none",
                FeatureScaling::UnitRows => "unit-rows",
            }
        ));
        for (l, row) in self.kernels.iter().enumerate() {
            s.push_str(&format!("rbf_scale.{l} = {:?}\n", self.rbf_scale[l]));
            for (t, k) in row.iter().enumerate() {
                s.push_str(&format!("kernel.{l}.{t} = {k}\n"));
                s.push_str(&format!("mu.{l}.{t} = {:?}\n", self.mu[(l, t)]));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<DeepKernelNet> {
        let mut map = std::collections::HashMap::new();
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
        let get = |k: &str| {
            map.get(k)
                .ok_or_else(|| Error::Format(format!("missing key `{k}`")))
        };
        if get("version")? != "1" {
            return Err(Error::Format("unsupported network file version".into()));
        }
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number for `{k}`")))
        };
        let layers = num("layers")? as usize;
        let t = num("kernels_per_layer")? as usize;
        let scaling = match get("scaling")?.as_str() {
            "none" => FeatureScaling::None,
            "unit-rows" => FeatureScaling::UnitRows,
            other => return Err(Error::Format(format!("unknown scaling `{other}`"))),
        };
        let mut kernels = Vec::with_capacity(layers);
        let mut mu = DMatrix::zeros(layers, t);
        let mut rbf_scale = Vec::with_capacity(layers);
        for l in 0..layers {
            rbf_scale.push(num(&format!("rbf_scale.{l}"))?);
            let mut row = Vec::with_capacity(t);
            for j in 0..t {
                row.push(get(&format!("kernel.{l}.{j}"))?.parse()?);
                mu[(l, j)] = num(&format!("mu.{l}.{j}"))?;
            }
            kernels.push(row);
        }
        let net = DeepKernelNet {
            kernels,
            mu,
            rbf_scale,
            scaling,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<DeepKernelNet> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DeepKernelNet::from_text(&text)
    }
}

fn check_finite(m: &DMatrix<f64>, layer: usize, kernel: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: layer + 1,
            kernel: kernel.to_string(),
        })
    }
}

/// Returns the scaled rows and the original row norms.
fn scale_rows(m: &DMatrix<f64>, scaling: FeatureScaling) -> (DMatrix<f64>, Vec<f64>) {
    match scaling {
        FeatureScaling::None => (m.clone(), Vec::new()),
        FeatureScaling::UnitRows => {
            let norms: Vec<f64> = m.row_iter().map(|r| r.norm()).collect();
            let mut out = m.clone();
            for (i, &nrm) in norms.iter().enumerate() {
                if nrm > 0.0 {
                    out.row_mut(i).scale_mut(1.0 / nrm);
                }
            }
            (out, norms)
        }
    }
}

/// Intermediates of one forward pass.
pub struct ForwardTrace {
    /// Scaled input rows of each layer.
    features: Vec<DMatrix<f64>>,
    /// Row norms before scaling (empty without scaling).
    norms: Vec<Vec<f64>>,
    grams: Vec<DMatrix<f64>>,
    kernels: Vec<Vec<DMatrix<f64>>>,
    output: DMatrix<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }

    pub fn into_output(self) -> DMatrix<f64> {
        self.output
    }

    /// Kernel matrix of unit `t` in layer `l`.
    pub fn kernel(&self, layer: usize, t: usize) -> &DMatrix<f64> {
        &self.kernels[layer][t]
    }

    /// Gradient of a scalar `f(K)` with respect to `μ`, given
    /// `upstream = ∂f/∂K` for the network output `K`.
    ///
    /// The structure matrix is constant, so the recursion stops at the
    /// first layer's input.
    pub fn backward(&self, net: &DeepKernelNet, upstream: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let layers = net.num_layers();
        let t_count = net.kernels_per_layer();
        let mut grad = DMatrix::zeros(layers, t_count);
        let last = layers - 1;
        let mut kbars: Vec<DMatrix<f64>> = Vec::with_capacity(t_count);
        for t in 0..t_count {
            grad[(last, t)] = linalg::frobenius_dot(upstream, &self.kernels[last][t]);
            kbars.push(upstream * net.mu[(last, t)]);
        }
        for layer in (1..layers).rev() {
            let g = &self.grams[layer];
            let scale = net.rbf_scale[layer];
            let parts: Vec<DMatrix<f64>> = net.kernels[layer]
                .par_iter()
                .enumerate()
                .map(|(t, k)| k.gram_adjoint(g, &self.kernels[layer][t], &kbars[t], scale))
                .collect();
            let mut gbar = DMatrix::zeros(g.nrows(), g.ncols());
            for part in parts {
                gbar += part;
            }
            let sym = &gbar + gbar.transpose();
            let xbar = linalg::matmul(&sym, &self.features[layer]);
            let mbar = match net.scaling {
                FeatureScaling::None => xbar,
                FeatureScaling::UnitRows => unit_rows_adjoint(&self.features[layer], &self.norms[layer], &xbar),
            };
            if mbar.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: layer + 1,
                    kernel: "gradient".into(),
                });
            }
            kbars.clear();
            for t in 0..t_count {
                grad[(layer - 1, t)] = linalg::frobenius_dot(&mbar, &self.kernels[layer - 1][t]);
                kbars.push(&mbar * net.mu[(layer - 1, t)]);
            }
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: 0,
                kernel: "gradient".into(),
            });
        }
        Ok(grad)
    }
}

/// Backpropagates through `y = x / ‖x‖` row by row.
fn unit_rows_adjoint(y: &DMatrix<f64>, norms: &[f64], ybar: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = ybar.clone();
    for (i, &nrm) in norms.iter().enumerate() {
        if nrm > 0.0 {
            let dot = y.row(i).dot(&ybar.row(i));
            for j in 0..y.ncols() {
                out[(i, j)] = (ybar[(i, j)] - y[(i, j)] * dot) / nrm;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[f64]]) -> DMatrix<f64> {
        let flat: Vec<f64> = data.iter().flat_map(|r| r.iter().copied()).collect();
        DMatrix::from_row_slice(data.len(), data[0].len(), &flat)
    }

    #[test]
    fn linear_of_identity_is_identity() {
        let k = elementary_kernel(&DMatrix::identity(2, 2), &ElementaryKernel::Linear).unwrap();
        assert_eq!(k, DMatrix::identity(2, 2));
    }

    #[test]
    fn rbf_of_identical_rows_is_one() {
        let x = rows(&[&[0.3, -1.2], &[0.3, -1.2]]);
        let k = elementary_kernel(&x, &ElementaryKernel::Rbf { gamma: 1.0 }).unwrap();
        assert!(k.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn polynomial_hand_values() {
        let x = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let k = elementary_kernel(
            &x,
            &ElementaryKernel::Polynomial {
                alpha: 1.0,
                beta: 1.0,
                degree: 2,
            },
        )
        .unwrap();
        assert_eq!(k[(0, 1)], 1.0);
        assert_eq!(k[(0, 0)], 4.0);
    }

    #[test]
    fn sigmoid_hand_value() {
        let x = rows(&[&[2.0, 0.0], &[1.0, 1.0]]);
        let k = elementary_kernel(&x, &ElementaryKernel::Sigmoid { alpha: 0.5, beta: -1.0 }).unwrap();
        assert_eq!(k[(0, 1)], (0.5f64 * 2.0 - 1.0).tanh());
        assert_eq!(k[(0, 0)], (0.5f64 * 4.0 - 1.0).tanh());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let x = rows(&[&[f64::NAN, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            elementary_kernel(&x, &ElementaryKernel::Linear),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn kernel_parsing_round_trips() {
        for k in ElementaryKernel::default_set() {
            let back: ElementaryKernel = k.to_string().parse().unwrap();
            assert_eq!(back, k);
        }
        assert!("rbf gamma=0".parse::<ElementaryKernel>().is_err());
        assert!("laplace".parse::<ElementaryKernel>().is_err());
    }

    #[test]
    fn net_rejects_zero_layer_weights() {
        let mut net = DeepKernelNet::uniform(2, ElementaryKernel::default_set()).unwrap();
        let mut mu = net.mu().clone();
        mu.row_mut(1).fill(0.0);
        assert!(net.set_mu(mu).is_err());
        assert!((net.mu()[(1, 0)] - 0.25).abs() < 1e-15);
        let mut neg = net.mu().clone();
        neg[(0, 0)] = -0.1;
        assert!(net.set_mu(neg).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut net = DeepKernelNet::uniform(3, ElementaryKernel::default_set()).unwrap();
        let mut mu = net.mu().clone();
        mu[(1, 2)] = 0.1 + 0.2;
        net.set_mu(mu).unwrap();
        net.rbf_scale[2] = 1.0 / 3.0;
        let back = DeepKernelNet::from_text(&net.to_text()).unwrap();
        assert_eq!(back, net);
    }
}
