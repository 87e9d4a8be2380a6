//! Run configuration. Parsed strictly (unknown keys are rejected) and
//! validated before any data is touched.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use drkm::data::SplitSizes;
use drkm::{InitScheme, KernelKind, SplitSpec};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `f64` (default) or `f32`.
    #[serde(default = "default_precision")]
    pub precision: Precision,
    pub dataset: DatasetConfig,
    pub levels: Vec<LevelConfig>,
    pub head: HeadConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub smoother: SmootherConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

fn default_precision() -> Precision {
    Precision::F64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Libsvm,
    Paired,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub format: DataFormat,
    /// Data file (csv, libsvm) or feature file (paired).
    pub path: PathBuf,
    /// Label file for the paired format.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Separate test file; disables `split`.
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    #[serde(default)]
    pub has_header: bool,
    /// Feature dimension for libsvm input.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub standardize: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default)]
    pub test_fraction: Option<f64>,
    #[serde(default)]
    pub train: Option<usize>,
    #[serde(default)]
    pub test: Option<usize>,
    #[serde(default)]
    pub stratified: bool,
}

impl SplitConfig {
    pub fn spec(&self) -> Result<SplitSpec, CliError> {
        let sizes = match (self.test_fraction, self.train, self.test) {
            (Some(f), None, None) => SplitSizes::TestFraction(f),
            (None, Some(train), Some(test)) => SplitSizes::Counts { train, test },
            _ => {
                return Err(CliError::config(
                    "dataset.split needs either test_fraction or both train and test",
                ))
            }
        };
        Ok(SplitSpec {
            sizes,
            stratified: self.stratified,
        })
    }
}

/// A positive number or the word `"median"` (median pairwise distance of
/// the standardized training inputs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Value(f64),
    Word(MedianWord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MedianWord {
    Median,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    #[serde(default)]
    pub sigma: Option<Bandwidth>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub s: usize,
    pub kernel: KernelConfig,
    #[serde(default = "one")]
    pub eta: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKindConfig {
    Lssvm,
    Mlp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKindConfig,
    #[serde(default = "half")]
    pub lambda: f64,
    #[serde(default = "one")]
    pub eta: f64,
    #[serde(default = "hidden")]
    pub hidden: usize,
}

fn half() -> f64 {
    0.5
}

fn hidden() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSearchSection {
    #[serde(default = "one")]
    pub alpha0: f64,
    #[serde(default = "half")]
    pub shrink: f64,
    #[serde(default = "armijo_c")]
    pub c: f64,
    #[serde(default = "max_halvings")]
    pub max_halvings: usize,
}

fn armijo_c() -> f64 {
    1e-4
}

fn max_halvings() -> usize {
    30
}

impl Default for LineSearchSection {
    fn default() -> Self {
        LineSearchSection {
            alpha0: 1.0,
            shrink: 0.5,
            c: 1e-4,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamSection {
    #[serde(default = "adam_lr")]
    pub lr: f64,
    #[serde(default = "beta1")]
    pub beta1: f64,
    #[serde(default = "beta2")]
    pub beta2: f64,
    #[serde(default = "adam_eps")]
    pub eps: f64,
}

fn adam_lr() -> f64 {
    1e-3
}

fn beta1() -> f64 {
    0.9
}

fn beta2() -> f64 {
    0.999
}

fn adam_eps() -> f64 {
    1e-8
}

impl Default for AdamSection {
    fn default() -> Self {
        AdamSection {
            lr: adam_lr(),
            beta1: beta1(),
            beta2: beta2(),
            eps: adam_eps(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "max_iter")]
    pub max_iter: usize,
    #[serde(default = "init")]
    pub init: InitScheme,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "pretrain_max_iter")]
    pub pretrain_max_iter: usize,
    #[serde(default)]
    pub line_search: LineSearchSection,
    #[serde(default)]
    pub adam: AdamSection,
}

fn max_iter() -> usize {
    100
}

fn init() -> InitScheme {
    InitScheme::Random
}

fn grad_tol() -> f64 {
    1e-6
}

fn pretrain_max_iter() -> usize {
    500
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            max_iter: max_iter(),
            init: init(),
            seed: 0,
            grad_tol: grad_tol(),
            pretrain_max_iter: pretrain_max_iter(),
            line_search: LineSearchSection::default(),
            adam: AdamSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherConfig {
    #[serde(default = "median")]
    pub sigma_tilde: Bandwidth,
}

fn median() -> Bandwidth {
    Bandwidth::Word(MedianWord::Median)
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig { sigma_tilde: median() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LssvmBaselineConfig {
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "median")]
    pub sigma: Bandwidth,
}

impl Default for LssvmBaselineConfig {
    fn default() -> Self {
        LssvmBaselineConfig {
            gamma: 1.0,
            sigma: median(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpBaselineSection {
    #[serde(default = "hidden")]
    pub hidden: usize,
    #[serde(default = "mlp_steps")]
    pub steps: usize,
    #[serde(default = "mlp_lr")]
    pub lr: f64,
}

fn mlp_steps() -> usize {
    1000
}

fn mlp_lr() -> f64 {
    1e-2
}

impl Default for MlpBaselineSection {
    fn default() -> Self {
        MlpBaselineSection {
            hidden: hidden(),
            steps: mlp_steps(),
            lr: mlp_lr(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Each seed sets both the split seed and the training seed. Defaults to
    /// the training seed alone.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<InitScheme>,
    #[serde(default)]
    pub lssvm: LssvmBaselineConfig,
    #[serde(default)]
    pub mlp: MlpBaselineSection,
    /// Also run the MLP and LSSVM baselines.
    #[serde(default = "yes")]
    pub baselines: bool,
}

fn all_schemes() -> Vec<InitScheme> {
    vec![InitScheme::Random, InitScheme::Dkpca, InitScheme::DkpcaFinetune]
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            seeds: None,
            schemes: all_schemes(),
            lssvm: LssvmBaselineConfig::default(),
            mlp: MlpBaselineSection::default(),
            baselines: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default)]
    pub metrics_path: Option<PathBuf>,
}

fn positive(v: f64, key: &str) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(format!("{key} must be positive, got {v}")))
    }
}

fn in_unit(v: f64, key: &str, closed_low: bool) -> Result<(), CliError> {
    let ok = if closed_low { (0.0..1.0).contains(&v) } else { v > 0.0 && v < 1.0 };
    if ok {
        Ok(())
    } else {
        Err(CliError::config(format!("{key} must be in {}0, 1), got {v}", if closed_low { "[" } else { "(" })))
    }
}

fn bandwidth(b: &Bandwidth, key: &str) -> Result<(), CliError> {
    match b {
        Bandwidth::Value(v) => positive(*v, key),
        Bandwidth::Word(_) => Ok(()),
    }
}

impl RunConfig {
    /// Reads and validates a config, reporting the key path of any error.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.dataset;
        fix(&mut d.path);
        for p in [&mut d.labels, &mut d.test_path, &mut d.test_labels].into_iter().flatten() {
            fix(p);
        }
        for p in [&mut self.output.model_path, &mut self.output.metrics_path].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.dataset;
        if d.format == DataFormat::Paired && d.labels.is_none() {
            return Err(CliError::config("dataset.labels is required for the paired format"));
        }
        if d.format == DataFormat::Paired && d.test_path.is_some() && d.test_labels.is_none() {
            return Err(CliError::config("dataset.test_labels is required with a paired test_path"));
        }
        if d.test_path.is_some() && d.split.is_some() {
            return Err(CliError::config("dataset.split and dataset.test_path are mutually exclusive"));
        }
        if let Some(split) = &d.split {
            let spec = split.spec()?;
            if let SplitSizes::TestFraction(f) = spec.sizes {
                in_unit(f, "dataset.split.test_fraction", false)?;
            }
        }

        if self.levels.is_empty() {
            return Err(CliError::config("levels must contain at least one level"));
        }
        for (j, l) in self.levels.iter().enumerate() {
            if l.s == 0 {
                return Err(CliError::config(format!("levels[{j}].s must be at least 1")));
            }
            positive(l.eta, &format!("levels[{j}].eta"))?;
            match (l.kernel.kind, &l.kernel.sigma) {
                (KernelKind::Rbf, None) => {
                    return Err(CliError::config(format!("levels[{j}].kernel.sigma is required for rbf")))
                }
                (KernelKind::Rbf, Some(b)) => {
                    bandwidth(b, &format!("levels[{j}].kernel.sigma"))?;
                    if j > 0 && matches!(b, Bandwidth::Word(_)) {
                        return Err(CliError::config(format!(
                            "levels[{j}].kernel.sigma: \"median\" is only available for the first level"
                        )));
                    }
                }
                (kind, Some(_)) => {
                    return Err(CliError::config(format!(
                        "levels[{j}].kernel.sigma is not used by the {} kernel",
                        kind.name()
                    )))
                }
                (KernelKind::Cosine, None) if j > 0 => {
                    return Err(CliError::config(format!(
                        "levels[{j}].kernel.kind: cosine is only supported at the first level"
                    )))
                }
                _ => {}
            }
        }
        positive(self.head.lambda, "head.lambda")?;
        positive(self.head.eta, "head.eta")?;
        if self.head.hidden == 0 {
            return Err(CliError::config("head.hidden must be at least 1"));
        }

        let t = &self.train;
        if t.grad_tol < 0.0 || !t.grad_tol.is_finite() {
            return Err(CliError::config("train.grad_tol must be non-negative"));
        }
        positive(t.line_search.alpha0, "train.line_search.alpha0")?;
        in_unit(t.line_search.shrink, "train.line_search.shrink", false)?;
        in_unit(t.line_search.c, "train.line_search.c", false)?;
        positive(t.adam.lr, "train.adam.lr")?;
        in_unit(t.adam.beta1, "train.adam.beta1", true)?;
        in_unit(t.adam.beta2, "train.adam.beta2", true)?;
        positive(t.adam.eps, "train.adam.eps")?;
        bandwidth(&self.smoother.sigma_tilde, "smoother.sigma_tilde")?;

        positive(self.bench.lssvm.gamma, "bench.lssvm.gamma")?;
        bandwidth(&self.bench.lssvm.sigma, "bench.lssvm.sigma")?;
        positive(self.bench.mlp.lr, "bench.mlp.lr")?;
        if self.bench.mlp.hidden == 0 {
            return Err(CliError::config("bench.mlp.hidden must be at least 1"));
        }
        if self.bench.seeds.as_ref().is_some_and(Vec::is_empty) {
            return Err(CliError::config("bench.seeds must not be empty"));
        }
        Ok(())
    }
}
