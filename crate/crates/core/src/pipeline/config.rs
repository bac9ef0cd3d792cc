use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::SplitStrategy;
use crate::hashing::{EigenSelection, HashOptions, Whitening};
use crate::kernel::{ElementaryKernel, FeatureScaling};
use crate::mkl::TrainerConfig;
use crate::similarity::SupervisionScope;
use crate::walker::WalkConfig;

/// Everything one experiment needs. Read from a flat `key = value` file;
/// see [`ExperimentConfig::KEYS`] for the recognized keys.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub edges: PathBuf,
    pub labels: PathBuf,
    /// Drop label lines for nodes that have no edges.
    pub skip_unknown_labels: bool,
    /// Walk parameters; `walk.seed` is the walk seed, shared by all cells.
    pub walk: WalkConfig,
    pub layers: usize,
    pub kernels: Vec<ElementaryKernel>,
    pub feature_scaling: FeatureScaling,
    /// Rescale RBF bandwidths beyond the first layer by the median
    /// squared distance of their inputs.
    pub rbf_median: bool,
    pub trainer: TrainerConfig,
    pub landmarks: usize,
    pub code_bits: usize,
    pub lambda: f64,
    pub hashing: HashOptions,
    pub classifier_c: f64,
    pub ratios: Vec<f64>,
    /// Per-cell seeds; each drives the split and the landmark draw.
    pub seeds: Vec<u64>,
    pub split: SplitStrategy,
    pub supervision: SupervisionScope,
    pub out_dir: PathBuf,
    pub cache: bool,
    /// Cache location; `<out_dir>/cache` when unset.
    pub cache_dir: Option<PathBuf>,
    /// Recompute cached stages and fail on any byte difference.
    pub verify_cache: bool,
    /// Cells evaluated concurrently.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            edges: PathBuf::from("edges.txt"),
            labels: PathBuf::from("labels.txt"),
            skip_unknown_labels: false,
            walk: WalkConfig::default(),
            layers: 3,
            kernels: ElementaryKernel::default_set(),
            feature_scaling: FeatureScaling::default(),
            rbf_median: true,
            trainer: TrainerConfig::default(),
            landmarks: 256,
            code_bits: 128,
            lambda: 1e-4,
            hashing: HashOptions::default(),
            classifier_c: 1.0,
            ratios: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            seeds: vec![1, 2, 3, 4, 5],
            split: SplitStrategy::default(),
            supervision: SupervisionScope::default(),
            out_dir: PathBuf::from("out"),
            cache: true,
            cache_dir: None,
            verify_cache: false,
            workers: 1,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got `{v}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value for `{key}`: `{v}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join<T: std::fmt::Debug>(items: &[T]) -> String {
    items.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "edges",
        "labels",
        "skip_unknown_labels",
        "window_size",
        "walk_length",
        "walks_per_node",
        "walk_seed",
        "include_self_pairs",
        "layers",
        "kernels",
        "feature_scaling",
        "rbf_median",
        "max_outer_iters",
        "step_size",
        "sigma",
        "convergence_tol",
        "finite_diff_check",
        "svm_c",
        "landmarks",
        "code_bits",
        "lambda",
        "whitening",
        "eigen_selection",
        "classifier_c",
        "ratios",
        "seeds",
        "split",
        "supervision",
        "out_dir",
        "cache",
        "cache_dir",
        "verify_cache",
        "workers",
    ];

    /// Parses `key = value` lines; `#` starts a comment line. Relative
    /// paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        for p in [&mut cfg.edges, &mut cfg.labels, &mut cfg.out_dir]
            .into_iter()
            .chain(cfg.cache_dir.as_mut())
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        ExperimentConfig::parse(&text, base)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "edges" => self.edges = PathBuf::from(v),
            "labels" => self.labels = PathBuf::from(v),
            "skip_unknown_labels" => self.skip_unknown_labels = parse_bool(key, v)?,
            "window_size" => self.walk.window_size = parse_num(key, v)?,
            "walk_length" => self.walk.walk_length = parse_num(key, v)?,
            "walks_per_node" => self.walk.walks_per_node = parse_num(key, v)?,
            "walk_seed" => self.walk.seed = parse_num(key, v)?,
            "include_self_pairs" => self.walk.include_self_pairs = parse_bool(key, v)?,
            "layers" => self.layers = parse_num(key, v)?,
            "kernels" => {
                self.kernels = v
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "feature_scaling" => {
                self.feature_scaling = match v {
                    "none" => FeatureScaling::None,
                    "unit-rows" => FeatureScaling::UnitRows,
                    _ => return Err(Error::Config(format!("unknown feature_scaling `{v}`"))),
                }
            }
            "rbf_median" => self.rbf_median = parse_bool(key, v)?,
            "max_outer_iters" => self.trainer.max_outer_iters = parse_num(key, v)?,
            "step_size" => self.trainer.step_size = parse_num(key, v)?,
            "sigma" => self.trainer.sigma = parse_num(key, v)?,
            "convergence_tol" => self.trainer.convergence_tol = parse_num(key, v)?,
            "finite_diff_check" => self.trainer.finite_diff_check = parse_bool(key, v)?,
            "svm_c" => self.trainer.svm_c = parse_num(key, v)?,
            "landmarks" => self.landmarks = parse_num(key, v)?,
            "code_bits" => self.code_bits = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "whitening" => {
                self.hashing.whitening = match v {
                    "full-rank" => Whitening::FullRank,
                    "top-m" => Whitening::TopM,
                    _ => return Err(Error::Config(format!("unknown whitening `{v}`"))),
                }
            }
            "eigen_selection" => {
                self.hashing.selection = match v {
                    "smallest" => EigenSelection::Smallest,
                    "largest" => EigenSelection::Largest,
                    _ => return Err(Error::Config(format!("unknown eigen_selection `{v}`"))),
                }
            }
            "classifier_c" => self.classifier_c = parse_num(key, v)?,
            "ratios" => self.ratios = parse_list(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "split" => {
                self.split = match v {
                    "uniform" => SplitStrategy::Uniform,
                    "stratified" => SplitStrategy::Stratified,
                    _ => return Err(Error::Config(format!("unknown split `{v}`"))),
                }
            }
            "supervision" => {
                self.supervision = match v {
                    "train" => SupervisionScope::TrainOnly,
                    "all" => SupervisionScope::AllLabeled,
                    _ => return Err(Error::Config(format!("unknown supervision `{v}`"))),
                }
            }
            "out_dir" => self.out_dir = PathBuf::from(v),
            "cache" => self.cache = parse_bool(key, v)?,
            "cache_dir" => self.cache_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "verify_cache" => self.verify_cache = parse_bool(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.walk.validate()?;
        self.trainer.validate()?;
        if self.layers == 0 || self.kernels.is_empty() {
            return Err(Error::Config("need at least one layer and one kernel".into()));
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::Config("ratios must be a nonempty list inside (0, 1)".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.landmarks == 0 || self.code_bits == 0 {
            return Err(Error::Config("landmarks and code_bits must be positive".into()));
        }
        if self.code_bits > self.landmarks {
            return Err(Error::Config(format!(
                "code_bits ({}) cannot exceed landmarks ({})",
                self.code_bits, self.landmarks
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be finite and nonnegative".into()));
        }
        if !(self.classifier_c > 0.0 && self.classifier_c.is_finite()) {
            return Err(Error::Config("classifier_c must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn cache_root(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("edges", self.edges.display().to_string());
        kv("labels", self.labels.display().to_string());
        kv("skip_unknown_labels", self.skip_unknown_labels.to_string());
        kv("window_size", self.walk.window_size.to_string());
        kv("walk_length", self.walk.walk_length.to_string());
        kv("walks_per_node", self.walk.walks_per_node.to_string());
        kv("walk_seed", self.walk.seed.to_string());
        kv("include_self_pairs", self.walk.include_self_pairs.to_string());
        kv("layers", self.layers.to_string());
        kv(
            "kernels",
            self.kernels.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("; "),
        );
        kv(
            "feature_scaling",
            match self.feature_scaling {
                FeatureScaling::None => "none",
                FeatureScaling::UnitRows => "unit-rows",
            }
            .into(),
        );
        kv("rbf_median", self.rbf_median.to_string());
        kv("max_outer_iters", self.trainer.max_outer_iters.to_string());
        kv("step_size", format!("{:?}", self.trainer.step_size));
        kv("sigma", format!("{:?}", self.trainer.sigma));
        kv("convergence_tol", format!("{:?}", self.trainer.convergence_tol));
        kv("finite_diff_check", self.trainer.finite_diff_check.to_string());
        kv("svm_c", format!("{:?}", self.trainer.svm_c));
        kv("landmarks", self.landmarks.to_string());
        kv("code_bits", self.code_bits.to_string());
        kv("lambda", format!("{:?}", self.lambda));
        kv(
            "whitening",
            match self.hashing.whitening {
                Whitening::FullRank => "full-rank",
                Whitening::TopM => "top-m",
            }
            .into(),
        );
        kv(
            "eigen_selection",
            match self.hashing.selection {
                EigenSelection::Smallest => "smallest",
                EigenSelection::Largest => "largest",
            }
            .into(),
        );
        kv("classifier_c", format!("{:?}", self.classifier_c));
        kv("ratios", join(&self.ratios));
        kv("seeds", join(&self.seeds));
        kv(
            "split",
            match self.split {
                SplitStrategy::Uniform => "uniform",
                SplitStrategy::Stratified => "stratified",
            }
            .into(),
        );
        kv(
            "supervision",
            match self.supervision {
                SupervisionScope::TrainOnly => "train",
                SupervisionScope::AllLabeled => "all",
            }
            .into(),
        );
        kv("out_dir", self.out_dir.display().to_string());
        kv("cache", self.cache.to_string());
        kv(
            "cache_dir",
            self.cache_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        kv("verify_cache", self.verify_cache.to_string());
        kv("workers", self.workers.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_settings() {
        let c = ExperimentConfig::default();
        assert_eq!(
            (c.walk.window_size, c.walk.walk_length, c.walk.walks_per_node),
            (50, 200, 10)
        );
        assert_eq!((c.layers, c.kernels.len()), (3, 4));
        assert_eq!((c.landmarks, c.code_bits, c.lambda), (256, 128, 1e-4));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("ratios", "0.5, 0.9").unwrap();
        c.set("kernels", "linear; rbf gamma=0.5").unwrap();
        c.set("whitening", "top-m").unwrap();
        c.edges = PathBuf::from("/data/edges.txt");
        c.labels = PathBuf::from("/data/labels.txt");
        c.out_dir = PathBuf::from("/tmp/out");
        let back = ExperimentConfig::parse(&c.to_text(), Path::new("/")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_input_is_reported() {
        let base = Path::new(".");
        assert!(ExperimentConfig::parse("colour = red", base).is_err());
        assert!(ExperimentConfig::parse("ratios = 1.5", base).is_err());
        assert!(ExperimentConfig::parse("seeds =", base).is_err());
        assert!(ExperimentConfig::parse("landmarks = 8\ncode_bits = 16", base).is_err());
        assert!(ExperimentConfig::parse("just text", base).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let c = ExperimentConfig::parse("edges = g/e.txt", Path::new("/cfg")).unwrap();
        assert_eq!(c.edges, PathBuf::from("/cfg/g/e.txt"));
    }
}
