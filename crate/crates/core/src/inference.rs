//! Out-of-sample prediction.
//!
//! An unseen input `x*` gets the latent representation
//! `h* = sum_i k~(x_i, x*) h_i / sum_i k~(x_i, x*)` (Gaussian `k~` of
//! bandwidth `sigma~`, `h_i` the rows of the last level's hidden features),
//! which is then fed to the classification head.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::kernels::{cross_sq_dist, gaussian, median_pairwise_distance};
use crate::mlp::argmax;
use crate::model::{head_decision, Decision};
use crate::optimizer::{pgd_train, TrainTrace};
use crate::{
    Dataset, DrkmError, DrkmState, HeadKind, LevelConfig, Problem, Real, Result, Targets, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherSpec<T> {
    pub sigma: T,
}

impl<T: Real> SmootherSpec<T> {
    pub fn new(sigma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !sigma.is_finite_value() {
            return Err(DrkmError::Config("smoother.sigma_tilde must be positive".into()));
        }
        Ok(SmootherSpec { sigma })
    }

    /// Bandwidth set to the median pairwise distance between rows of `x`.
    pub fn median(x: &DMatrix<T>) -> Result<Self> {
        Self::new(median_pairwise_distance(x)?)
    }
}

/// Unnormalized smoother weights, one row per query.
fn smoother_weights<T: Real>(train: &DMatrix<T>, xs: &DMatrix<T>, spec: &SmootherSpec<T>) -> Result<DMatrix<T>> {
    if xs.ncols() != train.ncols() {
        return Err(DrkmError::DimensionMismatch {
            expected: train.ncols(),
            got: xs.ncols(),
            context: "query feature dimension",
        });
    }
    if xs.iter().any(|v| !v.is_finite_value()) {
        return Err(DrkmError::InvalidInput("query contains NaN or infinite values".into()));
    }
    Ok(cross_sq_dist(xs, train).map(|d| gaussian(d, spec.sigma)))
}

/// Normalized weighted average of the rows of `h`, summed in ascending
/// training-index order.
fn smooth_rows<T: Real>(weights: &DMatrix<T>, h: &DMatrix<T>) -> Result<DMatrix<T>> {
    let s = h.ncols();
    let rows: Vec<Vec<T>> = (0..weights.nrows())
        .into_par_iter()
        .map(|q| {
            let mut total = T::zero();
            let mut acc = vec![T::zero(); s];
            for i in 0..h.nrows() {
                let w = weights[(q, i)];
                total += w;
                for c in 0..s {
                    acc[c] += w * h[(i, c)];
                }
            }
            if !(total >= T::underflow_floor()) {
                return Err(DrkmError::SmootherUnderflow {
                    sum: total.as_f64(),
                    floor: T::underflow_floor().as_f64(),
                });
            }
            Ok(acc.into_iter().map(|v| v / total).collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(weights.nrows(), s, |q, c| rows[q][c]))
}

/// A trained binary or multi-class DRKM together with what prediction needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DrkmModel<T: Real> {
    pub state: DrkmState<T>,
    /// Training inputs exactly as seen by the first level.
    pub x: Arc<DMatrix<T>>,
    pub smoother: SmootherSpec<T>,
    pub classes: usize,
}

impl<T: Real> DrkmModel<T> {
    pub fn new(state: DrkmState<T>, x: Arc<DMatrix<T>>, smoother: SmootherSpec<T>, classes: usize) -> Result<Self> {
        state.validate(x.nrows())?;
        SmootherSpec::new(smoother.sigma)?;
        let residual = state.last_hidden().residual();
        if !(residual <= T::feasibility_tol()) {
            return Err(DrkmError::InvalidInput(format!(
                "hidden features are off the Stiefel manifold (residual {residual:e})"
            )));
        }
        if state.head.kind() == HeadKind::Lssvm && classes != 2 {
            return Err(DrkmError::InvalidInput("an LSSVM head is binary".into()));
        }
        Ok(DrkmModel { state, x, smoother, classes })
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    /// Latent representations of the rows of `xs` (`M x s_n`).
    pub fn latent(&self, xs: &DMatrix<T>) -> Result<DMatrix<T>> {
        let w = smoother_weights(&self.x, xs, &self.smoother)?;
        smooth_rows(&w, self.state.last_hidden())
    }

    fn decisions_from_latent(&self, latent: &DMatrix<T>) -> Result<Vec<Decision<T>>> {
        latent
            .row_iter()
            .map(|r| head_decision(&self.state.head, &r.transpose()))
            .collect()
    }

    /// Raw head outputs for the rows of `xs`.
    pub fn decisions(&self, xs: &DMatrix<T>) -> Result<Vec<Decision<T>>> {
        self.decisions_from_latent(&self.latent(xs)?)
    }

    /// Predicted class indices. For an LSSVM head class 1 is the `+1` side
    /// and a decision value of exactly zero predicts it.
    pub fn predict(&self, xs: &DMatrix<T>) -> Result<Vec<usize>> {
        Ok(self.decisions(xs)?.iter().map(decision_label).collect())
    }
}

fn decision_label<T: Real>(d: &Decision<T>) -> usize {
    match d {
        Decision::Score(v) => usize::from(*v >= T::zero()),
        Decision::Logits(l) => argmax(l.as_slice()),
    }
}

/// Binary DRKMs, one per class, trained on the same inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OneVsAllModel<T: Real> {
    pub models: Vec<DrkmModel<T>>,
}

impl<T: Real> OneVsAllModel<T> {
    pub fn new(models: Vec<DrkmModel<T>>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| DrkmError::InvalidInput("one-vs-all needs at least two models".into()))?;
        if models.len() < 2 {
            return Err(DrkmError::InvalidInput("one-vs-all needs at least two models".into()));
        }
        for m in &models {
            if m.state.head.kind() != HeadKind::Lssvm {
                return Err(DrkmError::InvalidInput("one-vs-all members must have LSSVM heads".into()));
            }
            if *m.x != *first.x || m.smoother != first.smoother {
                return Err(DrkmError::InvalidInput(
                    "one-vs-all members must share training inputs and smoother".into(),
                ));
            }
        }
        Ok(OneVsAllModel { models })
    }

    pub fn classes(&self) -> usize {
        self.models.len()
    }

    /// Per-class decision values `w_c^T h*_c + b_c` (`M x p`).
    pub fn scores(&self, xs: &DMatrix<T>) -> Result<DMatrix<T>> {
        let first = &self.models[0];
        let w = smoother_weights(&first.x, xs, &first.smoother)?;
        let mut out = DMatrix::zeros(xs.nrows(), self.models.len());
        for (c, m) in self.models.iter().enumerate() {
            let latent = smooth_rows(&w, m.state.last_hidden())?;
            for (q, d) in m.decisions_from_latent(&latent)?.into_iter().enumerate() {
                if let Decision::Score(v) = d {
                    out[(q, c)] = v;
                }
            }
        }
        Ok(out)
    }

    pub fn predict(&self, xs: &DMatrix<T>) -> Result<Vec<usize>> {
        let scores = self.scores(xs)?;
        Ok(scores
            .row_iter()
            .map(|r| argmax(&r.iter().copied().collect::<Vec<_>>()))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier<T: Real> {
    Single(DrkmModel<T>),
    OneVsAll(OneVsAllModel<T>),
}

impl<T: Real> Classifier<T> {
    pub fn predict(&self, xs: &DMatrix<T>) -> Result<Vec<usize>> {
        match self {
            Classifier::Single(m) => m.predict(xs),
            Classifier::OneVsAll(m) => m.predict(xs),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Classifier::Single(m) => m.classes,
            Classifier::OneVsAll(m) => m.classes(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Classifier::Single(m) => m.input_dim(),
            Classifier::OneVsAll(m) => m.models[0].input_dim(),
        }
    }
}

/// Latent representation of one query point.
pub fn smoother_latent<T: Real>(model: &DrkmModel<T>, x_star: &DVector<T>) -> Result<DVector<T>> {
    let q = DMatrix::from_row_slice(1, x_star.len(), x_star.as_slice());
    Ok(model.latent(&q)?.row(0).transpose())
}

/// Predicted class index of one query point.
pub fn predict<T: Real>(model: &Classifier<T>, x_star: &DVector<T>) -> Result<usize> {
    let q = DMatrix::from_row_slice(1, x_star.len(), x_star.as_slice());
    Ok(model.predict(&q)?[0])
}

/// Fraction of matching entries.
pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(DrkmError::InvalidInput("accuracy of an empty dataset".into()));
    }
    if pred.len() != labels.len() {
        return Err(DrkmError::DimensionMismatch {
            expected: labels.len(),
            got: pred.len(),
            context: "predictions",
        });
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy restricted to each true class; `None` for classes absent from
/// `labels`.
pub fn per_class_accuracy(pred: &[usize], labels: &[usize], classes: usize) -> Vec<Option<f64>> {
    (0..classes)
        .map(|c| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if idx.is_empty() {
                None
            } else {
                Some(idx.iter().filter(|&&i| pred[i] == c).count() as f64 / idx.len() as f64)
            }
        })
        .collect()
}

pub fn evaluate_accuracy<T: Real>(model: &Classifier<T>, data: &Dataset<T>) -> Result<f64> {
    if data.labels.is_empty() {
        return Err(DrkmError::InvalidInput("accuracy of an empty dataset".into()));
    }
    accuracy(&model.predict(&data.x)?, &data.labels)
}

fn check_class_counts(labels: &[usize], classes: usize) -> Result<()> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        if l >= classes {
            return Err(DrkmError::InvalidInput(format!("label {l} out of range for {classes} classes")));
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(DrkmError::InvalidInput(format!("class {c} has no training samples")));
    }
    Ok(())
}

/// Trains a single DRKM. LSSVM heads require two classes (class 1 encoded
/// `+1`); MLP heads take any number of classes.
pub fn train_drkm<T: Real>(
    x: Arc<DMatrix<T>>,
    labels: &[usize],
    classes: usize,
    levels: &[LevelConfig<T>],
    head: HeadKind,
    config: &TrainConfig<T>,
    smoother: SmootherSpec<T>,
) -> Result<(DrkmModel<T>, TrainTrace<T>)> {
    check_class_counts(labels, classes)?;
    let first = levels
        .first()
        .ok_or_else(|| DrkmError::Config("a DRKM needs at least one level".into()))?;
    let targets = match head {
        HeadKind::Lssvm if classes == 2 => Targets::one_vs_rest(labels, 1),
        HeadKind::Lssvm => {
            return Err(DrkmError::InvalidInput(
                "an LSSVM head is binary; use one-vs-all for more classes".into(),
            ))
        }
        HeadKind::Mlp => Targets::Classes {
            labels: labels.to_vec(),
            classes,
        },
    };
    let problem = Problem::new(&x, &first.kernel, targets)?;
    let (state, trace) = pgd_train(&problem, levels, head, config)?;
    Ok((DrkmModel::new(state, x, smoother, classes)?, trace))
}

/// Trains one binary LSSVM-head DRKM per class (class `c` against the
/// rest) with identical level and training settings. The first-level
/// kernel matrix is computed once and shared.
pub fn train_one_vs_all<T: Real>(
    x: Arc<DMatrix<T>>,
    labels: &[usize],
    classes: usize,
    levels: &[LevelConfig<T>],
    config: &TrainConfig<T>,
    smoother: SmootherSpec<T>,
) -> Result<(OneVsAllModel<T>, Vec<TrainTrace<T>>)> {
    if classes < 2 {
        return Err(DrkmError::InvalidInput("one-vs-all needs at least two classes".into()));
    }
    check_class_counts(labels, classes)?;
    let first = levels
        .first()
        .ok_or_else(|| DrkmError::Config("a DRKM needs at least one level".into()))?;
    let base = Problem::new(&x, &first.kernel, Targets::one_vs_rest(labels, 0))?;
    let trained = (0..classes)
        .into_par_iter()
        .map(|c| {
            let problem = base.with_targets(Targets::one_vs_rest(labels, c))?;
            let (state, trace) = pgd_train(&problem, levels, HeadKind::Lssvm, config)?;
            Ok((DrkmModel::new(state, x.clone(), smoother, 2)?, trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let (models, traces): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    Ok((OneVsAllModel::new(models)?, traces))
}
