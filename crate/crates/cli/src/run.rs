//! Command implementations, generic over the scalar type.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde_json::{json, Value};

use drkm::baselines::{LssvmOneVsAll, MlpBaselineConfig};
use drkm::data::{load_features_csv, split_indices};
use drkm::inference::{accuracy, per_class_accuracy};
use drkm::kernels::median_pairwise_distance;
use drkm::optimizer::{AdamConfig, LineSearchConfig};
use drkm::{
    load_csv, load_libsvm, load_paired, lssvm_dual_train, mlp_baseline_train, train_drkm, train_one_vs_all,
    Classifier, Dataset, HeadKind, InitScheme, KernelKind, KernelSpec, LevelConfig, Matrix, ModelFile, Real,
    Scaling, SmootherSpec, TrainConfig, TrainTrace,
};

use crate::config::{Bandwidth, DataFormat, DatasetConfig, HeadKindConfig, Precision, RunConfig};
use crate::error::CliError;
use crate::metrics::{mean_std, peak_rss_bytes, per_class_json, trace_json, VERSION};

type CliResult<T> = Result<T, CliError>;

/// Where `evaluate` takes its data from.
pub enum EvalSource {
    File {
        path: PathBuf,
        format: DataFormat,
        labels: Option<PathBuf>,
        has_header: bool,
        dim: Option<usize>,
    },
    /// The train or test part of a config's dataset, split exactly as in
    /// training.
    Split { config: PathBuf, test: bool },
}

fn load_file<T: Real>(
    format: DataFormat,
    path: &Path,
    labels: Option<&Path>,
    has_header: bool,
    dim: Option<usize>,
) -> CliResult<Dataset<T>> {
    Ok(match format {
        DataFormat::Csv => load_csv(path, has_header)?,
        DataFormat::Libsvm => load_libsvm(path, dim)?,
        DataFormat::Paired => {
            let labels = labels.ok_or_else(|| CliError::config("paired data needs a label file"))?;
            load_paired(path, labels)?
        }
    })
}

/// Re-indexes `data`'s labels against `names`.
fn align_labels<T: Real>(mut data: Dataset<T>, names: &[String]) -> CliResult<Dataset<T>> {
    let mut remap = Vec::with_capacity(data.label_names.len());
    for n in &data.label_names {
        let idx = names
            .iter()
            .position(|m| m == n)
            .ok_or_else(|| CliError::data(format!("label {n:?} does not occur in the training classes")))?;
        remap.push(idx);
    }
    for l in data.labels.iter_mut() {
        *l = remap[*l];
    }
    data.classes = names.len();
    data.label_names = names.to_vec();
    Ok(data)
}

/// Unstandardized train and optional test data.
fn load_raw<T: Real>(d: &DatasetConfig, seed: u64) -> CliResult<(Dataset<T>, Option<Dataset<T>>)> {
    let all = load_file::<T>(d.format, &d.path, d.labels.as_deref(), d.has_header, d.dim)?;
    if let Some(tp) = &d.test_path {
        let dim = d.dim.or(Some(all.d()));
        let test = load_file::<T>(d.format, tp, d.test_labels.as_deref(), d.has_header, dim)?;
        if test.d() != all.d() {
            return Err(CliError::data(format!(
                "test data has {} features, training data has {}",
                test.d(),
                all.d()
            )));
        }
        let test = align_labels(test, &all.label_names)?;
        return Ok((all, Some(test)));
    }
    match &d.split {
        Some(split) => {
            let (tr, te) = split_indices(&all, &split.spec()?, seed)?;
            Ok((all.select(&tr), Some(all.select(&te))))
        }
        None => Ok((all, None)),
    }
}

fn standardize<T: Real>(
    train: Dataset<T>,
    test: Option<Dataset<T>>,
    enabled: bool,
) -> CliResult<(Dataset<T>, Option<Dataset<T>>)> {
    if !enabled {
        return Ok((train, test));
    }
    let scaling = Scaling::fit(&train.x);
    let apply = |mut d: Dataset<T>| -> CliResult<Dataset<T>> {
        d.x = scaling.apply(&d.x)?;
        d.scaling = Some(scaling.clone());
        Ok(d)
    };
    let test = test.map(apply).transpose()?;
    Ok((apply(train)?, test))
}

fn prepare<T: Real>(cfg: &RunConfig, seed: u64) -> CliResult<(Dataset<T>, Option<Dataset<T>>)> {
    let (train, test) = load_raw::<T>(&cfg.dataset, seed)?;
    standardize(train, test, cfg.dataset.standardize)
}

fn resolve_bandwidth<T: Real>(b: &Bandwidth, x: &Matrix<T>) -> CliResult<T> {
    Ok(match b {
        Bandwidth::Value(v) => T::lit(*v),
        Bandwidth::Word(_) => median_pairwise_distance(x)?,
    })
}

fn level_configs<T: Real>(cfg: &RunConfig, x: &Matrix<T>) -> CliResult<Vec<LevelConfig<T>>> {
    cfg.levels
        .iter()
        .map(|l| {
            let kernel = match l.kernel.kind {
                KernelKind::Linear => KernelSpec::linear(),
                KernelKind::Cosine => KernelSpec::cosine(),
                KernelKind::Rbf => {
                    let b = l.kernel.sigma.as_ref().expect("validated: rbf has sigma");
                    KernelSpec::rbf(resolve_bandwidth(b, x)?)?
                }
            };
            Ok(LevelConfig::new(l.s, kernel, T::lit(l.eta)))
        })
        .collect()
}

fn train_config<T: Real>(cfg: &RunConfig, seed: u64, init: InitScheme) -> TrainConfig<T> {
    let t = &cfg.train;
    TrainConfig {
        max_iter: t.max_iter,
        lambda: T::lit(cfg.head.lambda),
        eta: T::lit(cfg.head.eta),
        init,
        seed,
        line_search: LineSearchConfig {
            alpha0: T::lit(t.line_search.alpha0),
            shrink: T::lit(t.line_search.shrink),
            c: T::lit(t.line_search.c),
            max_halvings: t.line_search.max_halvings,
        },
        grad_tol: T::lit(t.grad_tol),
        adam: AdamConfig {
            lr: T::lit(t.adam.lr),
            beta1: T::lit(t.adam.beta1),
            beta2: T::lit(t.adam.beta2),
            eps: T::lit(t.adam.eps),
        },
        mlp_hidden: cfg.head.hidden,
        pretrain_max_iter: t.pretrain_max_iter,
        feasibility_tol: T::feasibility_tol(),
    }
}

struct Trained<T: Real> {
    model: ModelFile<T>,
    traces: Vec<TrainTrace<T>>,
    seconds: f64,
}

fn train_on<T: Real>(cfg: &RunConfig, train: &Dataset<T>, seed: u64, init: InitScheme) -> CliResult<Trained<T>> {
    let levels = level_configs(cfg, &train.x)?;
    let smoother = SmootherSpec::new(resolve_bandwidth(&cfg.smoother.sigma_tilde, &train.x)?)?;
    let tc = train_config::<T>(cfg, seed, init);
    let x = Arc::new(train.x.clone());
    let start = Instant::now();
    let (classifier, traces) = match cfg.head.kind {
        HeadKindConfig::Lssvm if train.classes > 2 => {
            let (m, t) = train_one_vs_all(x, &train.labels, train.classes, &levels, &tc, smoother)?;
            (Classifier::OneVsAll(m), t)
        }
        kind => {
            let head = match kind {
                HeadKindConfig::Lssvm => HeadKind::Lssvm,
                HeadKindConfig::Mlp => HeadKind::Mlp,
            };
            let (m, t) = train_drkm(x, &train.labels, train.classes, &levels, head, &tc, smoother)?;
            (Classifier::Single(m), vec![t])
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    Ok(Trained {
        model: ModelFile {
            classifier,
            label_names: train.label_names.clone(),
            scaling: train.scaling.clone(),
        },
        traces,
        seconds,
    })
}

fn check_dim<T: Real>(model: &ModelFile<T>, data: &Dataset<T>) -> CliResult<()> {
    let d = model.classifier.input_dim();
    if data.d() != d {
        return Err(CliError::data(format!(
            "dimension mismatch: the model expects {d} features but the data has {}",
            data.d()
        )));
    }
    Ok(())
}

fn score<T: Real>(classifier: &Classifier<T>, data: &Dataset<T>) -> CliResult<(f64, Vec<Option<f64>>)> {
    let pred = classifier.predict(&data.x)?;
    Ok((
        accuracy(&pred, &data.labels)?,
        per_class_accuracy(&pred, &data.labels, data.classes),
    ))
}

fn write_json(path: Option<&Path>, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("metrics serialize");
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn train_typed<T: Real>(cfg: &RunConfig) -> CliResult<()> {
    let total = Instant::now();
    let (train, test) = prepare::<T>(cfg, cfg.dataset.seed)?;
    let trained = train_on(cfg, &train, cfg.train.seed, cfg.train.init)?;
    let classifier = &trained.model.classifier;
    let (train_acc, train_pc) = score(classifier, &train)?;
    let test_scores = test.as_ref().map(|t| score(classifier, t)).transpose()?;
    let (acc, per_class) = match &test_scores {
        Some((a, pc)) => (*a, pc.clone()),
        None => (train_acc, train_pc),
    };
    if let Some(p) = &cfg.output.model_path {
        drkm::save_model(&trained.model, p)?;
    }
    let report = json!({
        "version": VERSION,
        "command": "train",
        "precision": cfg.precision,
        "seed": cfg.train.seed,
        "dataset_seed": cfg.dataset.seed,
        "n_train": train.n(),
        "n_test": test.as_ref().map(Dataset::n),
        "accuracy": acc,
        "accuracy_split": if test.is_some() { "test" } else { "train" },
        "train_accuracy": train_acc,
        "test_accuracy": test_scores.as_ref().map(|s| s.0),
        "per_class_accuracy": per_class_json(&per_class, &train.label_names),
        "objective_trace": trained.traces.first().map(|t| trace_json_objective(t)),
        "traces": trained.traces.iter().map(trace_json).collect::<Vec<_>>(),
        "wall_time_s": trained.seconds,
        "total_time_s": total.elapsed().as_secs_f64(),
        "peak_rss_bytes": peak_rss_bytes(),
        "config": cfg,
    });
    write_json(cfg.output.metrics_path.as_deref(), &report)
}

fn trace_json_objective<T: Real>(t: &TrainTrace<T>) -> Vec<f64> {
    t.objective.iter().map(|v| v.as_f64()).collect()
}

pub fn cmd_train(config: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    match cfg.precision {
        Precision::F64 => train_typed::<f64>(&cfg),
        Precision::F32 => train_typed::<f32>(&cfg),
    }
}

/// Reads the `scalar` field of a model container without decoding it.
fn model_precision(text: &str) -> CliResult<Precision> {
    let v: Value = serde_json::from_str(text).map_err(|e| CliError::data(format!("corrupt model file: {e}")))?;
    match v.get("scalar").and_then(Value::as_str) {
        Some("f64") => Ok(Precision::F64),
        Some("f32") => Ok(Precision::F32),
        other => Err(CliError::data(format!("corrupt model file: unknown scalar {other:?}"))),
    }
}

fn read_model<T: Real>(text: &str) -> CliResult<ModelFile<T>> {
    drkm::deserialize_model(text).map_err(|e| CliError::data(format!("cannot load model: {e}")))
}

fn evaluate_typed<T: Real>(text: &str, source: &EvalSource) -> CliResult<()> {
    let start = Instant::now();
    let model = read_model::<T>(text)?;
    let raw = match source {
        EvalSource::File {
            path,
            format,
            labels,
            has_header,
            dim,
        } => load_file::<T>(*format, path, labels.as_deref(), *has_header, *dim)?,
        EvalSource::Split { config, test } => {
            let cfg = RunConfig::load(config)?;
            let (train, held_out) = load_raw::<T>(&cfg.dataset, cfg.dataset.seed)?;
            if *test {
                held_out.ok_or_else(|| CliError::config("the config defines no test data"))?
            } else {
                train
            }
        }
    };
    let mut data = align_labels(raw, &model.label_names)?;
    check_dim(&model, &data)?;
    if let Some(s) = &model.scaling {
        data.x = s.apply(&data.x)?;
    }
    let (acc, pc) = score(&model.classifier, &data)?;
    let report = json!({
        "version": VERSION,
        "command": "evaluate",
        "n": data.n(),
        "accuracy": acc,
        "per_class_accuracy": per_class_json(&pc, &model.label_names),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "peak_rss_bytes": peak_rss_bytes(),
    });
    write_json(None, &report)
}

fn read_model_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read model {}: {e}", path.display())))
}

pub fn cmd_evaluate(model: &Path, source: &EvalSource) -> CliResult<()> {
    let text = read_model_text(model)?;
    match model_precision(&text)? {
        Precision::F64 => evaluate_typed::<f64>(&text, source),
        Precision::F32 => evaluate_typed::<f32>(&text, source),
    }
}

fn predict_typed<T: Real>(text: &str, input: &Path, has_header: bool) -> CliResult<()> {
    let model = read_model::<T>(text)?;
    let x = load_features_csv::<T>(input, has_header)?;
    let d = model.classifier.input_dim();
    if x.ncols() != d {
        return Err(CliError::data(format!(
            "dimension mismatch: the model expects {d} features but the input has {}",
            x.ncols()
        )));
    }
    let pred = model.predict_raw(&x)?;
    let mut out = String::new();
    for p in pred {
        out.push_str(&model.label_names[p]);
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

pub fn cmd_predict(model: &Path, input: &Path, has_header: bool) -> CliResult<()> {
    let text = read_model_text(model)?;
    match model_precision(&text)? {
        Precision::F64 => predict_typed::<f64>(&text, input, has_header),
        Precision::F32 => predict_typed::<f32>(&text, input, has_header),
    }
}

fn scheme_name(s: InitScheme) -> &'static str {
    match s {
        InitScheme::Random => "random",
        InitScheme::Dkpca => "dkpca",
        InitScheme::DkpcaFinetune => "dkpca_finetune",
    }
}

#[derive(Default)]
struct MethodRuns {
    accuracy: Vec<f64>,
    seconds: Vec<f64>,
    monotone: Vec<bool>,
    feasibility: Vec<f64>,
}

impl MethodRuns {
    fn record_traces<T: Real>(&mut self, traces: &[TrainTrace<T>]) {
        let mut monotone = true;
        let mut worst = 0.0f64;
        let mut stack: Vec<&TrainTrace<T>> = traces.iter().collect();
        while let Some(t) = stack.pop() {
            monotone &= t.pgd_monotone();
            worst = t.feasibility.iter().fold(worst, |a, r| a.max(r.as_f64()));
            stack.extend(t.pretrain.as_deref());
        }
        self.monotone.push(monotone);
        self.feasibility.push(worst);
    }
}

impl MethodRuns {
    fn json(&self, name: &str) -> Value {
        let (mean, std) = mean_std(&self.accuracy);
        json!({
            "method": name,
            "accuracy": self.accuracy,
            "mean": mean,
            "std": std,
            "wall_time_s": self.seconds,
            "pgd_monotone": if self.monotone.is_empty() { None } else { Some(&self.monotone) },
            "max_feasibility": if self.feasibility.is_empty() { None } else { Some(&self.feasibility) },
        })
    }
}

fn bench_typed<T: Real>(cfg: &RunConfig) -> CliResult<()> {
    let seeds = cfg.bench.seeds.clone().unwrap_or_else(|| vec![cfg.train.seed]);
    let mut drkm_runs: Vec<MethodRuns> = cfg.bench.schemes.iter().map(|_| MethodRuns::default()).collect();
    let mut mlp_runs = MethodRuns::default();
    let mut lssvm_runs = MethodRuns::default();
    for &seed in &seeds {
        let (train, test) = prepare::<T>(cfg, seed)?;
        let test = test.ok_or_else(|| CliError::config("bench needs test data (dataset.split or dataset.test_path)"))?;
        for (runs, &scheme) in drkm_runs.iter_mut().zip(&cfg.bench.schemes) {
            let t = train_on(cfg, &train, seed, scheme)?;
            runs.accuracy.push(score(&t.model.classifier, &test)?.0);
            runs.seconds.push(t.seconds);
            runs.record_traces(&t.traces);
        }
        if !cfg.bench.baselines {
            continue;
        }

        let start = Instant::now();
        let mc = MlpBaselineConfig {
            hidden: cfg.bench.mlp.hidden,
            steps: cfg.bench.mlp.steps,
            adam: AdamConfig {
                lr: T::lit(cfg.bench.mlp.lr),
                ..AdamConfig::default()
            },
            seed,
            zero_init: false,
        };
        let mlp = mlp_baseline_train(&train.x, &train.labels, train.classes, &mc)?;
        mlp_runs.seconds.push(start.elapsed().as_secs_f64());
        mlp_runs.accuracy.push(accuracy(&mlp.predict(&test.x)?, &test.labels)?);

        let start = Instant::now();
        let spec = KernelSpec::rbf(resolve_bandwidth(&cfg.bench.lssvm.sigma, &train.x)?)?;
        let gamma = T::lit(cfg.bench.lssvm.gamma);
        let pred = if train.classes == 2 {
            let y: Vec<T> = train.labels.iter().map(|&l| if l == 1 { T::one() } else { -T::one() }).collect();
            let m = lssvm_dual_train(&train.x, &y, gamma, &spec)?;
            m.predict(&test.x)?
                .iter()
                .map(|v| usize::from(*v > T::zero()))
                .collect()
        } else {
            LssvmOneVsAll::train(&train.x, &train.labels, train.classes, gamma, &spec)?.predict(&test.x)?
        };
        lssvm_runs.seconds.push(start.elapsed().as_secs_f64());
        lssvm_runs.accuracy.push(accuracy(&pred, &test.labels)?);
    }
    let mut methods: Vec<Value> = drkm_runs
        .iter()
        .zip(&cfg.bench.schemes)
        .map(|(r, &s)| r.json(&format!("drkm_{}", scheme_name(s))))
        .collect();
    if cfg.bench.baselines {
        methods.push(mlp_runs.json("mlp"));
        methods.push(lssvm_runs.json("lssvm"));
    }
    let report = json!({
        "version": VERSION,
        "command": "bench",
        "seeds": seeds,
        "methods": methods,
        "peak_rss_bytes": peak_rss_bytes(),
        "config": cfg,
    });
    write_json(cfg.output.metrics_path.as_deref(), &report)?;
    if cfg.output.metrics_path.is_some() {
        write_json(None, &report)?;
    }
    Ok(())
}

pub fn cmd_bench(config: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    match cfg.precision {
        Precision::F64 => bench_typed::<f64>(&cfg),
        Precision::F32 => bench_typed::<f32>(&cfg),
    }
}
