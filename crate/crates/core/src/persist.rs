//! Versioned JSON model container.
//!
//! Every real is stored as the hex string of its IEEE-754 bits, so a
//! save/load cycle is bit exact. Hidden features are checked for
//! feasibility when a model is loaded.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::inference::OneVsAllModel;
use crate::kernels::KernelKind;
use crate::mlp::Mlp;
use crate::{
    Classifier, DrkmError, DrkmModel, DrkmState, Head, HeadLssvm, HeadMlp, KernelSpec, Level, LevelConfig, Real,
    Result, Scaling, SmootherSpec, StiefelPoint,
};

pub const MAGIC: &str = "drkm-model";
pub const FORMAT_VERSION: u32 = 1;

/// A classifier plus the preprocessing needed to apply it to raw inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile<T: Real> {
    pub classifier: Classifier<T>,
    pub label_names: Vec<String>,
    /// Standardization to apply to raw inputs before prediction.
    pub scaling: Option<Scaling<T>>,
}

impl<T: Real> ModelFile<T> {
    /// Applies the stored scaling (if any) and predicts class indices.
    pub fn predict_raw(&self, x: &DMatrix<T>) -> Result<Vec<usize>> {
        let d = self.classifier.input_dim();
        if x.ncols() != d {
            return Err(DrkmError::DimensionMismatch {
                expected: d,
                got: x.ncols(),
                context: "input feature dimension",
            });
        }
        match &self.scaling {
            Some(s) => self.classifier.predict(&s.apply(x)?),
            None => self.classifier.predict(x),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    /// Column-major.
    data: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelRepr {
    kind: KernelKind,
    sigma: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelRepr {
    s: usize,
    kernel: KernelRepr,
    eta: String,
    h: MatrixRepr,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum HeadRepr {
    Lssvm {
        w: Vec<String>,
        b: String,
        lambda: String,
        eta: String,
    },
    Mlp {
        w1: MatrixRepr,
        b1: Vec<String>,
        w2: MatrixRepr,
        b2: Vec<String>,
        lambda: String,
        eta: String,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateRepr {
    levels: Vec<LevelRepr>,
    head: HeadRepr,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScalingRepr {
    mean: Vec<String>,
    std: Vec<String>,
    constant: Vec<bool>,
}

#[derive(Serialize, Deserialize, PartialEq, Eq, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum ModelKind {
    Single,
    OneVsAll,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    magic: String,
    format_version: u32,
    scalar: String,
    kind: ModelKind,
    classes: usize,
    label_names: Vec<String>,
    scaling: Option<ScalingRepr>,
    smoother_sigma: String,
    x: MatrixRepr,
    models: Vec<StateRepr>,
}

fn hex_vec<T: Real>(v: &[T]) -> Vec<String> {
    v.iter().map(|x| x.to_hex()).collect()
}

fn mat<T: Real>(m: &DMatrix<T>) -> MatrixRepr {
    MatrixRepr {
        rows: m.nrows(),
        cols: m.ncols(),
        data: hex_vec(m.as_slice()),
    }
}

fn state_repr<T: Real>(s: &DrkmState<T>) -> StateRepr {
    StateRepr {
        levels: s
            .levels
            .iter()
            .map(|l| LevelRepr {
                s: l.config.components,
                kernel: KernelRepr {
                    kind: l.config.kernel.kind,
                    sigma: l.config.kernel.sigma.to_hex(),
                },
                eta: l.config.eta.to_hex(),
                h: mat(&l.h),
            })
            .collect(),
        head: match &s.head {
            Head::Lssvm(h) => HeadRepr::Lssvm {
                w: hex_vec(h.w.as_slice()),
                b: h.b.to_hex(),
                lambda: h.lambda.to_hex(),
                eta: h.eta.to_hex(),
            },
            Head::Mlp(h) => HeadRepr::Mlp {
                w1: mat(&h.mlp.w1),
                b1: hex_vec(h.mlp.b1.as_slice()),
                w2: mat(&h.mlp.w2),
                b2: hex_vec(h.mlp.b2.as_slice()),
                lambda: h.lambda.to_hex(),
                eta: h.eta.to_hex(),
            },
        },
    }
}

/// Encodes a model as pretty-printed JSON.
pub fn serialize_model<T: Real>(model: &ModelFile<T>) -> String {
    let (kind, members): (ModelKind, Vec<&DrkmModel<T>>) = match &model.classifier {
        Classifier::Single(m) => (ModelKind::Single, vec![m]),
        Classifier::OneVsAll(m) => (ModelKind::OneVsAll, m.models.iter().collect()),
    };
    let first = members[0];
    let repr = FileRepr {
        magic: MAGIC.into(),
        format_version: FORMAT_VERSION,
        scalar: T::NAME.into(),
        kind,
        classes: model.classifier.classes(),
        label_names: model.label_names.clone(),
        scaling: model.scaling.as_ref().map(|s| ScalingRepr {
            mean: hex_vec(&s.mean),
            std: hex_vec(&s.std),
            constant: s.constant.clone(),
        }),
        smoother_sigma: first.smoother.sigma.to_hex(),
        x: mat(&first.x),
        models: members.iter().map(|m| state_repr(&m.state)).collect(),
    };
    let mut s = serde_json::to_string_pretty(&repr).expect("model container serializes");
    s.push('\n');
    s
}

fn fmt_err(msg: impl Into<String>) -> DrkmError {
    DrkmError::Format(msg.into())
}

fn real<T: Real>(s: &str, what: &str) -> Result<T> {
    T::from_hex(s).ok_or_else(|| fmt_err(format!("{what}: {s:?} is not a {} hex float", T::NAME)))
}

fn reals<T: Real>(v: &[String], what: &str) -> Result<Vec<T>> {
    v.iter().map(|s| real(s, what)).collect()
}

fn matrix<T: Real>(m: &MatrixRepr, what: &str) -> Result<DMatrix<T>> {
    if m.data.len() != m.rows * m.cols {
        return Err(fmt_err(format!(
            "{what}: {} entries for a {}x{} matrix",
            m.data.len(),
            m.rows,
            m.cols
        )));
    }
    Ok(DMatrix::from_vec(m.rows, m.cols, reals(&m.data, what)?))
}

fn state<T: Real>(r: &StateRepr, idx: usize) -> Result<DrkmState<T>> {
    let mut levels = Vec::with_capacity(r.levels.len());
    for (j, l) in r.levels.iter().enumerate() {
        let what = format!("models[{idx}].levels[{j}]");
        let kernel = KernelSpec {
            kind: l.kernel.kind,
            sigma: real(&l.kernel.sigma, &what)?,
        };
        let h = matrix(&l.h, &what)?;
        if h.ncols() != l.s {
            return Err(fmt_err(format!("{what}: H has {} columns, expected {}", h.ncols(), l.s)));
        }
        let h = StiefelPoint::new(h, T::feasibility_tol())
            .map_err(|e| fmt_err(format!("{what}: hidden features fail the feasibility check ({e})")))?;
        levels.push(Level {
            config: LevelConfig::new(l.s, kernel, real(&l.eta, &what)?),
            h,
        });
    }
    let what = format!("models[{idx}].head");
    let head = match &r.head {
        HeadRepr::Lssvm { w, b, lambda, eta } => Head::Lssvm(HeadLssvm {
            w: DVector::from_vec(reals(w, &what)?),
            b: real(b, &what)?,
            lambda: real(lambda, &what)?,
            eta: real(eta, &what)?,
        }),
        HeadRepr::Mlp {
            w1,
            b1,
            w2,
            b2,
            lambda,
            eta,
        } => {
            let mlp = Mlp {
                w1: matrix(w1, &what)?,
                b1: DVector::from_vec(reals(b1, &what)?),
                w2: matrix(w2, &what)?,
                b2: DVector::from_vec(reals(b2, &what)?),
            };
            mlp.check_shapes().map_err(|e| fmt_err(format!("{what}: {e}")))?;
            Head::Mlp(HeadMlp {
                mlp,
                lambda: real(lambda, &what)?,
                eta: real(eta, &what)?,
            })
        }
    };
    Ok(DrkmState { levels, head })
}

/// Decodes and validates a model container.
pub fn deserialize_model<T: Real>(text: &str) -> Result<ModelFile<T>> {
    let repr: FileRepr = serde_json::from_str(text).map_err(|e| fmt_err(format!("not a model container: {e}")))?;
    if repr.magic != MAGIC {
        return Err(fmt_err(format!("bad magic {:?}", repr.magic)));
    }
    if repr.format_version != FORMAT_VERSION {
        return Err(fmt_err(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            repr.format_version
        )));
    }
    if repr.scalar != T::NAME {
        return Err(fmt_err(format!("model stores {} reals, expected {}", repr.scalar, T::NAME)));
    }
    if repr.label_names.len() != repr.classes {
        return Err(fmt_err("label_names does not match the class count"));
    }
    let x = Arc::new(matrix::<T>(&repr.x, "x")?);
    let smoother = SmootherSpec::new(real(&repr.smoother_sigma, "smoother_sigma")?)
        .map_err(|e| fmt_err(e.to_string()))?;
    let scaling = match &repr.scaling {
        Some(s) => {
            let sc = Scaling {
                mean: reals(&s.mean, "scaling.mean")?,
                std: reals(&s.std, "scaling.std")?,
                constant: s.constant.clone(),
            };
            if sc.std.len() != sc.dim() || sc.constant.len() != sc.dim() || sc.dim() != x.ncols() {
                return Err(fmt_err("scaling does not match the input dimension"));
            }
            Some(sc)
        }
        None => None,
    };
    let mut models = Vec::with_capacity(repr.models.len());
    for (i, r) in repr.models.iter().enumerate() {
        let st = state::<T>(r, i)?;
        let classes = if repr.kind == ModelKind::Single { repr.classes } else { 2 };
        models.push(DrkmModel::new(st, x.clone(), smoother, classes).map_err(|e| fmt_err(format!("models[{i}]: {e}")))?);
    }
    let classifier = match repr.kind {
        ModelKind::Single => {
            if models.len() != 1 {
                return Err(fmt_err("a single model container holds exactly one model"));
            }
            Classifier::Single(models.pop().expect("one model"))
        }
        ModelKind::OneVsAll => {
            if models.len() != repr.classes {
                return Err(fmt_err("one-vs-all container needs one model per class"));
            }
            Classifier::OneVsAll(OneVsAllModel::new(models).map_err(|e| fmt_err(e.to_string()))?)
        }
    };
    Ok(ModelFile {
        classifier,
        label_names: repr.label_names,
        scaling,
    })
}

pub fn save_model<T: Real>(model: &ModelFile<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serialize_model(model))?;
    Ok(())
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<ModelFile<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| fmt_err(format!("cannot read {}: {e}", path.display())))?;
    deserialize_model(&text)
}
