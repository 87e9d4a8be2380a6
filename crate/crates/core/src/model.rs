//! DRKM state, the coupled training objective and its analytic gradients.
//!
//! With hidden features `H_1..H_n` (each on its Stiefel manifold), level
//! kernels `K_0 = k_1(X)` and `K_{j-1} = k_j(H_{j-1})`, the objective is
//!
//! ```text
//! J = - sum_j 1/(2 eta_j) Tr(H_j^T K_{j-1} H_j) + classification + regularization
//! ```
//!
//! where the LSSVM head contributes `1/(2 lambda) sum_i (1 - y_i (w^T h_i + b))^2`
//! and `eta/2 w^T w`, and the MLP head contributes
//! `1/(2 lambda N) sum_i CE(f(h_i), y_i)` and `eta/2 Tr(W^T W)` over the
//! output-layer weights only. The classification map on the last hidden
//! features is the identity.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::kernels::{kernel_input_gradient_with, kernel_matrix, KernelMatrix};
use crate::mlp::{cross_entropy, Mlp, MlpGrads};
use crate::{DrkmError, KernelSpec, Real, Result, StiefelPoint};

#[derive(Debug, Clone, PartialEq)]
pub struct LevelConfig<T> {
    /// Number of components `s_j` extracted by the level.
    pub components: usize,
    /// Kernel applied to this level's input (raw data for level 1, the
    /// previous level's hidden features otherwise).
    pub kernel: KernelSpec<T>,
    pub eta: T,
}

impl<T: Real> LevelConfig<T> {
    pub fn new(components: usize, kernel: KernelSpec<T>, eta: T) -> Self {
        LevelConfig {
            components,
            kernel,
            eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level<T: Real> {
    pub config: LevelConfig<T>,
    pub h: StiefelPoint<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadLssvm<T: Real> {
    pub w: DVector<T>,
    pub b: T,
    pub lambda: T,
    pub eta: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadMlp<T: Real> {
    pub mlp: Mlp<T>,
    pub lambda: T,
    pub eta: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head<T: Real> {
    Lssvm(HeadLssvm<T>),
    Mlp(HeadMlp<T>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Lssvm,
    Mlp,
}

impl<T: Real> Head<T> {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Lssvm(_) => HeadKind::Lssvm,
            Head::Mlp(_) => HeadKind::Mlp,
        }
    }

    pub fn lambda(&self) -> T {
        match self {
            Head::Lssvm(h) => h.lambda,
            Head::Mlp(h) => h.lambda,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Head::Lssvm(h) => h.w.len(),
            Head::Mlp(h) => h.mlp.inputs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrkmState<T: Real> {
    pub levels: Vec<Level<T>>,
    pub head: Head<T>,
}

impl<T: Real> DrkmState<T> {
    /// Checks shapes, positivity of every constant and kernel admissibility.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.levels.is_empty() {
            return Err(DrkmError::Config("a DRKM needs at least one level".into()));
        }
        for (j, level) in self.levels.iter().enumerate() {
            let cfg = &level.config;
            cfg.kernel.validate()?;
            if !(cfg.eta > T::zero()) {
                return Err(DrkmError::Config(format!("levels[{j}].eta must be positive")));
            }
            if cfg.components == 0 || cfg.components > n {
                return Err(DrkmError::Config(format!(
                    "levels[{j}].s = {} must be in 1..={n}",
                    cfg.components
                )));
            }
            if level.h.nrows() != n || level.h.ncols() != cfg.components {
                return Err(DrkmError::DimensionMismatch {
                    expected: n * cfg.components,
                    got: level.h.len(),
                    context: "hidden feature matrix",
                });
            }
            if j > 0 && !cfg.kernel.kind.has_input_gradient() {
                return Err(DrkmError::Config(format!(
                    "levels[{j}].kernel: the {} kernel is only allowed at the first level",
                    cfg.kernel.kind.name()
                )));
            }
        }
        let s_last = self.last_hidden().ncols();
        if self.head.input_dim() != s_last {
            return Err(DrkmError::DimensionMismatch {
                expected: s_last,
                got: self.head.input_dim(),
                context: "head input",
            });
        }
        let (lambda, eta) = match &self.head {
            Head::Lssvm(h) => (h.lambda, h.eta),
            Head::Mlp(h) => {
                h.mlp.check_shapes()?;
                (h.lambda, h.eta)
            }
        };
        if !(lambda > T::zero()) {
            return Err(DrkmError::Config("head.lambda must be positive".into()));
        }
        if !(eta > T::zero()) {
            return Err(DrkmError::Config("head.eta must be positive".into()));
        }
        Ok(())
    }

    pub fn last_hidden(&self) -> &StiefelPoint<T> {
        &self.levels.last().expect("at least one level").h
    }

    /// `max_j ||H_j^T H_j - I||_F`.
    pub fn feasibility_residual(&self) -> T {
        self.levels
            .iter()
            .map(|l| l.h.residual())
            .fold(T::zero(), |a, b| a.max(b))
    }
}

/// Training labels in the encoding the head expects.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T> {
    /// `+1 / -1` per sample, for the LSSVM head.
    Binary(Vec<T>),
    /// Class index per sample (one-hot in the loss), for the MLP head.
    Classes { labels: Vec<usize>, classes: usize },
}

impl<T: Real> Targets<T> {
    /// `+1` for samples of class `positive`, `-1` otherwise.
    pub fn one_vs_rest(labels: &[usize], positive: usize) -> Self {
        Targets::Binary(
            labels
                .iter()
                .map(|&l| if l == positive { T::one() } else { -T::one() })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Binary(y) => y.len(),
            Targets::Classes { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The fixed part of a training problem: the first-level kernel matrix and
/// the targets.
#[derive(Debug, Clone)]
pub struct Problem<T: Real> {
    k0: Arc<KernelMatrix<T>>,
    targets: Targets<T>,
}

impl<T: Real> Problem<T> {
    pub fn new(x: &DMatrix<T>, kernel: &KernelSpec<T>, targets: Targets<T>) -> Result<Self> {
        let k0 = kernel_matrix(kernel, x)?;
        Self::from_kernel(Arc::new(k0), targets)
    }

    pub fn from_kernel(k0: Arc<KernelMatrix<T>>, targets: Targets<T>) -> Result<Self> {
        if targets.len() != k0.nrows() {
            return Err(DrkmError::DimensionMismatch {
                expected: k0.nrows(),
                got: targets.len(),
                context: "targets",
            });
        }
        if let Targets::Binary(y) = &targets {
            if y.iter().any(|v| *v != T::one() && *v != -T::one()) {
                return Err(DrkmError::InvalidInput("binary targets must be +1 or -1".into()));
            }
        }
        if let Targets::Classes { labels, classes } = &targets {
            if labels.iter().any(|l| l >= classes) {
                return Err(DrkmError::InvalidInput("class label out of range".into()));
            }
        }
        Ok(Problem { k0, targets })
    }

    pub fn n(&self) -> usize {
        self.k0.nrows()
    }

    pub fn k0(&self) -> &KernelMatrix<T> {
        &self.k0
    }

    pub fn targets(&self) -> &Targets<T> {
        &self.targets
    }

    /// Same kernel, different targets (one-vs-all reuses the Gram matrix).
    pub fn with_targets(&self, targets: Targets<T>) -> Result<Self> {
        Self::from_kernel(self.k0.clone(), targets)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveBreakdown<T> {
    /// `-1/(2 eta_j) Tr(H_j^T K_{j-1} H_j)` per level.
    pub unsup_terms: Vec<T>,
    pub classification_term: T,
    pub regularization_term: T,
    pub total: T,
}

impl<T: Real> ObjectiveBreakdown<T> {
    pub fn unsupervised(&self) -> T {
        self.unsup_terms.iter().fold(T::zero(), |a, &b| a + b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadGradient<T: Real> {
    Lssvm { w: DVector<T>, b: T },
    Mlp(MlpGrads<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T: Real> {
    /// `dJ/dH_j` per level.
    pub h: Vec<DMatrix<T>>,
    pub head: HeadGradient<T>,
}

/// Kernel matrices of levels `2..=n` (built from hidden features) and the
/// products `K_{j-1} H_j` for every level.
struct Forward<T: Real> {
    deep_kernels: Vec<DMatrix<T>>,
    kh: Vec<DMatrix<T>>,
}

fn forward<T: Real>(state: &DrkmState<T>, problem: &Problem<T>) -> Result<Forward<T>> {
    let n = problem.n();
    state.validate(n)?;
    let mut deep_kernels: Vec<DMatrix<T>> = Vec::with_capacity(state.levels.len() - 1);
    for j in 1..state.levels.len() {
        let spec = &state.levels[j].config.kernel;
        deep_kernels.push(kernel_matrix(spec, &state.levels[j - 1].h)?.into_inner());
    }
    let kh = state
        .levels
        .iter()
        .enumerate()
        .map(|(j, level)| {
            let k: &DMatrix<T> = if j == 0 { problem.k0() } else { &deep_kernels[j - 1] };
            k * &*level.h
        })
        .collect();
    Ok(Forward { deep_kernels, kh })
}

fn finite<T: Real>(v: T, term: &str) -> Result<T> {
    if v.is_finite_value() {
        Ok(v)
    } else {
        Err(DrkmError::numerical(term, format!("value is {v}")))
    }
}

/// Residuals `e_i = 1 - y_i (w^T h_i + b)`.
fn lssvm_residuals<T: Real>(head: &HeadLssvm<T>, h: &DMatrix<T>, y: &[T]) -> DVector<T> {
    let scores = h * &head.w;
    DVector::from_iterator(
        y.len(),
        y.iter()
            .zip(scores.iter())
            .map(|(&yi, &si)| T::one() - yi * (si + head.b)),
    )
}

fn binary_targets<'a, T: Real>(problem: &'a Problem<T>) -> Result<&'a [T]> {
    match problem.targets() {
        Targets::Binary(y) => Ok(y),
        Targets::Classes { .. } => Err(DrkmError::InvalidInput(
            "LSSVM head needs +1/-1 targets".into(),
        )),
    }
}

fn class_targets<T: Real>(problem: &Problem<T>, mlp: &Mlp<T>) -> Result<Vec<usize>> {
    match problem.targets() {
        Targets::Classes { labels, classes } if *classes == mlp.classes() => Ok(labels.clone()),
        Targets::Classes { classes, .. } => Err(DrkmError::InvalidInput(format!(
            "MLP head has {} outputs but targets have {classes} classes",
            mlp.classes()
        ))),
        Targets::Binary(_) => Err(DrkmError::InvalidInput(
            "MLP head needs class-index targets".into(),
        )),
    }
}

/// `-1/(2 eta) Tr(H^T K H)` given `K H`.
fn unsup_term<T: Real>(h: &DMatrix<T>, kh: &DMatrix<T>, eta: T) -> T {
    -h.dot(kh) / (T::lit(2.0) * eta)
}

fn breakdown<T: Real>(state: &DrkmState<T>, problem: &Problem<T>, fw: &Forward<T>) -> Result<ObjectiveBreakdown<T>> {
    let unsup_terms = state
        .levels
        .iter()
        .zip(&fw.kh)
        .enumerate()
        .map(|(j, (level, kh))| {
            finite(unsup_term(&level.h, kh, level.config.eta), &format!("unsupervised term of level {}", j + 1))
        })
        .collect::<Result<Vec<T>>>()?;
    let h_last = state.last_hidden();
    let (classification_term, regularization_term) = match &state.head {
        Head::Lssvm(head) => {
            let y = binary_targets(problem)?;
            let e = lssvm_residuals(head, h_last, y);
            let class = e.norm_squared() / (T::lit(2.0) * head.lambda);
            let reg = head.eta / T::lit(2.0) * head.w.norm_squared();
            (class, reg)
        }
        Head::Mlp(head) => {
            let labels = class_targets(problem, &head.mlp)?;
            let logits = head.mlp.forward_batch(h_last);
            let mut ce = T::zero();
            for (i, &y) in labels.iter().enumerate() {
                let row: Vec<T> = logits.row(i).iter().copied().collect();
                ce += cross_entropy(&row, y);
            }
            let n = T::from_usize_lossy(labels.len());
            let class = ce / (T::lit(2.0) * head.lambda * n);
            let reg = head.eta / T::lit(2.0) * head.mlp.w2.norm_squared();
            (class, reg)
        }
    };
    let classification_term = finite(classification_term, "classification term")?;
    let regularization_term = finite(regularization_term, "regularization term")?;
    let total = unsup_terms.iter().fold(T::zero(), |a, &b| a + b) + classification_term + regularization_term;
    Ok(ObjectiveBreakdown {
        unsup_terms,
        classification_term,
        regularization_term,
        total: finite(total, "total objective")?,
    })
}

pub fn eval_objective<T: Real>(state: &DrkmState<T>, problem: &Problem<T>) -> Result<ObjectiveBreakdown<T>> {
    let fw = forward(state, problem)?;
    breakdown(state, problem, &fw)
}

/// Objective and gradients in one pass. With `include_head = false` only the
/// unsupervised terms are differentiated and the head gradient is zero.
pub fn eval_with_gradients<T: Real>(
    state: &DrkmState<T>,
    problem: &Problem<T>,
    include_head: bool,
) -> Result<(ObjectiveBreakdown<T>, Gradients<T>)> {
    let fw = forward(state, problem)?;
    let obj = breakdown(state, problem, &fw)?;
    let n_levels = state.levels.len();
    let mut grads: Vec<DMatrix<T>> = Vec::with_capacity(n_levels);
    for j in 0..n_levels {
        let level = &state.levels[j];
        let mut g = &fw.kh[j] * (-T::one() / level.config.eta);
        if j + 1 < n_levels {
            let next = &state.levels[j + 1];
            let weight = &*next.h * next.h.transpose();
            let coupling = kernel_input_gradient_with(
                &next.config.kernel,
                &level.h,
                &weight,
                Some(&fw.deep_kernels[j]),
            )?;
            g -= coupling * (T::one() / (T::lit(2.0) * next.config.eta));
        }
        grads.push(g);
    }
    let h_last = state.last_hidden();
    let head = match &state.head {
        Head::Lssvm(head) => {
            if include_head {
                let y = binary_targets(problem)?;
                let e = lssvm_residuals(head, h_last, y);
                let inv_lambda = T::one() / head.lambda;
                // c_i = -(1/lambda) e_i y_i
                let c = DVector::from_iterator(
                    y.len(),
                    e.iter().zip(y).map(|(&ei, &yi)| -inv_lambda * ei * yi),
                );
                let g_last = grads.last_mut().expect("at least one level");
                *g_last += &c * head.w.transpose();
                let gw = h_last.tr_mul(&c) + &head.w * head.eta;
                let gb = c.sum();
                HeadGradient::Lssvm { w: gw, b: gb }
            } else {
                HeadGradient::Lssvm {
                    w: DVector::zeros(head.w.len()),
                    b: T::zero(),
                }
            }
        }
        Head::Mlp(head) => {
            if include_head {
                let labels = class_targets(problem, &head.mlp)?;
                let n = T::from_usize_lossy(labels.len());
                let scale = T::one() / (T::lit(2.0) * head.lambda * n);
                let (_, mut pg, gx) = head.mlp.loss_and_grads(h_last, &labels, scale)?;
                pg.w2 += &head.mlp.w2 * head.eta;
                *grads.last_mut().expect("at least one level") += gx;
                HeadGradient::Mlp(pg)
            } else {
                let m = &head.mlp;
                HeadGradient::Mlp(MlpGrads {
                    w1: DMatrix::zeros(m.w1.nrows(), m.w1.ncols()),
                    b1: DVector::zeros(m.b1.len()),
                    w2: DMatrix::zeros(m.w2.nrows(), m.w2.ncols()),
                    b2: DVector::zeros(m.b2.len()),
                })
            }
        }
    };
    for (j, g) in grads.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite_value()) {
            return Err(DrkmError::numerical(
                format!("gradient of level {}", j + 1),
                "non-finite entries",
            ));
        }
    }
    Ok((obj, Gradients { h: grads, head }))
}

pub fn eval_gradients<T: Real>(state: &DrkmState<T>, problem: &Problem<T>) -> Result<Gradients<T>> {
    Ok(eval_with_gradients(state, problem, true)?.1)
}

/// Hidden feature eliminated from the RKM classification objective through
/// its stationarity condition: `(1/lambda)(1 - y (w^T h + b))`.
pub fn conjugate_features<T: Real>(head: &HeadLssvm<T>, h: &DVector<T>, y: T) -> Result<T> {
    if h.len() != head.w.len() {
        return Err(DrkmError::DimensionMismatch {
            expected: head.w.len(),
            got: h.len(),
            context: "conjugate feature input",
        });
    }
    Ok((T::one() - y * (head.w.dot(h) + head.b)) / head.lambda)
}

/// RKM binary classification objective with explicit conjugate hidden
/// features `hidden` (one scalar per sample):
/// `sum_i (1 - y_i (phi_i^T w + b)) h_i - lambda/2 h_i^2 + eta/2 w^T w`,
/// where `phi_i` are the rows of `features`.
pub fn rkm_classification_objective<T: Real>(
    features: &DMatrix<T>,
    y: &[T],
    head: &HeadLssvm<T>,
    hidden: &[T],
) -> T {
    let mut acc = T::zero();
    for i in 0..features.nrows() {
        let score = features.row(i).transpose().dot(&head.w) + head.b;
        let e = T::one() - y[i] * score;
        acc += e * hidden[i] - head.lambda / T::lit(2.0) * hidden[i] * hidden[i];
    }
    acc + head.eta / T::lit(2.0) * head.w.norm_squared()
}

/// The same objective after eliminating the hidden features:
/// `sum_i 1/(2 lambda) (1 - y_i (phi_i^T w + b))^2 + eta/2 w^T w`.
pub fn eliminated_classification_objective<T: Real>(features: &DMatrix<T>, y: &[T], head: &HeadLssvm<T>) -> T {
    let mut acc = T::zero();
    for i in 0..features.nrows() {
        let score = features.row(i).transpose().dot(&head.w) + head.b;
        let e = T::one() - y[i] * score;
        acc += e * e / (T::lit(2.0) * head.lambda);
    }
    acc + head.eta / T::lit(2.0) * head.w.norm_squared()
}

/// Single KPCA level coupled to an LSSVM head, written out directly.
pub fn one_level_objective<T: Real>(
    k0: &DMatrix<T>,
    h: &DMatrix<T>,
    eta1: T,
    head: &HeadLssvm<T>,
    y: &[T],
) -> T {
    let kpca = -h.dot(&(k0 * h)) / (T::lit(2.0) * eta1);
    let scores = h * &head.w;
    let e = DVector::from_fn(y.len(), |i, _| T::one() - y[i] * (scores[i] + head.b));
    let class = e.norm_squared() / (T::lit(2.0) * head.lambda);
    let reg = head.eta / T::lit(2.0) * head.w.norm_squared();
    kpca + class + reg
}

/// Output of the head for one hidden-feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision<T: Real> {
    /// `w^T h + b`; the caller takes the sign.
    Score(T),
    Logits(DVector<T>),
}

pub fn head_decision<T: Real>(head: &Head<T>, h: &DVector<T>) -> Result<Decision<T>> {
    match head {
        Head::Lssvm(head) => {
            if h.len() != head.w.len() {
                return Err(DrkmError::DimensionMismatch {
                    expected: head.w.len(),
                    got: h.len(),
                    context: "head input",
                });
            }
            Ok(Decision::Score(head.w.dot(h) + head.b))
        }
        Head::Mlp(head) => Ok(Decision::Logits(head.mlp.forward(h)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::stiefel::random_stiefel;
    use approx::assert_abs_diff_eq;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn labels(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
    }

    fn lssvm(s: usize, lambda: f64) -> HeadLssvm<f64> {
        HeadLssvm {
            w: DVector::zeros(s),
            b: 0.0,
            lambda,
            eta: 1.0,
        }
    }

    #[test]
    fn top_eigenvector_example() {
        let x = data(9, 3, 1);
        let spec = KernelSpec::linear();
        let problem = Problem::new(&x, &spec, Targets::Binary(labels(9, 2))).unwrap();
        let eig = SymmetricEigen::new((**problem.k0()).clone());
        let imax = eig.eigenvalues.imax();
        let top = eig.eigenvectors.column(imax).into_owned();
        let state = DrkmState {
            levels: vec![Level {
                config: LevelConfig::new(1, spec, 1.0),
                h: StiefelPoint::new(DMatrix::from_column_slice(9, 1, top.as_slice()), 1e-8).unwrap(),
            }],
            head: Head::Lssvm(lssvm(1, 0.5)),
        };
        let obj = eval_objective(&state, &problem).unwrap();
        assert_abs_diff_eq!(obj.unsup_terms[0], -eig.eigenvalues[imax] / 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(obj.classification_term, 9.0, epsilon = 1e-12);
        assert_eq!(obj.regularization_term, 0.0);
    }

    #[test]
    fn single_level_matches_direct_evaluator_exactly() {
        let x = data(10, 4, 3);
        let y = labels(10, 4);
        let spec = KernelSpec::rbf(1.1).unwrap();
        let problem = Problem::new(&x, &spec, Targets::Binary(y.clone())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = HeadLssvm {
            w: DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0)),
            b: 0.3,
            lambda: 0.5,
            eta: 1.0,
        };
        let h = random_stiefel::<f64>(10, 3, 6).unwrap();
        let direct = one_level_objective(problem.k0(), &h, 1.0, &head, &y);
        let state = DrkmState {
            levels: vec![Level {
                config: LevelConfig::new(3, spec, 1.0),
                h,
            }],
            head: Head::Lssvm(head),
        };
        assert_eq!(eval_objective(&state, &problem).unwrap().total, direct);
    }

    #[test]
    fn zero_mlp_head_costs_ln2_over_2lambda() {
        let x = data(8, 2, 7);
        let labels = vec![0, 1, 0, 1, 1, 0, 0, 1];
        let problem = Problem::new(&x, &KernelSpec::linear(), Targets::Classes { labels, classes: 2 }).unwrap();
        let state = DrkmState {
            levels: vec![Level {
                config: LevelConfig::new(2, KernelSpec::linear(), 1.0),
                h: random_stiefel::<f64>(8, 2, 1).unwrap(),
            }],
            head: Head::Mlp(HeadMlp {
                mlp: Mlp::zeros(2, 10, 2),
                lambda: 0.5,
                eta: 1.0,
            }),
        };
        let obj = eval_objective(&state, &problem).unwrap();
        assert_abs_diff_eq!(obj.classification_term, 2f64.ln() / (2.0 * 0.5), epsilon = 1e-14);
        assert_eq!(obj.regularization_term, 0.0);
    }

    #[test]
    fn head_gradient_at_origin() {
        let x = data(7, 3, 8);
        let y = labels(7, 9);
        let problem = Problem::new(&x, &KernelSpec::linear(), Targets::Binary(y.clone())).unwrap();
        let h = random_stiefel::<f64>(7, 2, 3).unwrap();
        let state = DrkmState {
            levels: vec![Level {
                config: LevelConfig::new(2, KernelSpec::linear(), 1.0),
                h: h.clone(),
            }],
            head: Head::Lssvm(lssvm(2, 0.5)),
        };
        let g = eval_gradients(&state, &problem).unwrap();
        let HeadGradient::Lssvm { w, b } = g.head else { panic!() };
        let yv = DVector::from_vec(y.clone());
        assert_abs_diff_eq!(w, -(h.tr_mul(&yv)) / 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b, -yv.sum() / 0.5, epsilon = 1e-12);
    }

    #[test]
    fn unsupervised_gradient_is_minus_gram_times_h() {
        let x = data(6, 3, 10);
        let problem = Problem::new(&x, &KernelSpec::linear(), Targets::Binary(labels(6, 1))).unwrap();
        let h = random_stiefel::<f64>(6, 2, 4).unwrap();
        let state = DrkmState {
            levels: vec![Level {
                config: LevelConfig::new(2, KernelSpec::linear(), 2.0),
                h: h.clone(),
            }],
            head: Head::Lssvm(lssvm(2, 0.5)),
        };
        let (_, g) = eval_with_gradients(&state, &problem, false).unwrap();
        let expected = (&x * x.transpose()) * &*h * (-1.0 / 2.0);
        assert_abs_diff_eq!(g.h[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn validation_errors() {
        let x = data(5, 2, 1);
        let problem = Problem::new(&x, &KernelSpec::linear(), Targets::Binary(labels(5, 1))).unwrap();
        let level = |s: usize, kernel: KernelSpec<f64>, seed| Level {
            config: LevelConfig::new(s, kernel, 1.0),
            h: random_stiefel::<f64>(5, s, seed).unwrap(),
        };
        let cosine_deep = DrkmState {
            levels: vec![level(2, KernelSpec::linear(), 1), level(2, KernelSpec::cosine(), 2)],
            head: Head::Lssvm(lssvm(2, 0.5)),
        };
        assert!(matches!(eval_objective(&cosine_deep, &problem), Err(DrkmError::Config(_))));
        let wrong_head = DrkmState {
            levels: vec![level(2, KernelSpec::linear(), 1)],
            head: Head::Lssvm(lssvm(3, 0.5)),
        };
        assert!(eval_objective(&wrong_head, &problem).is_err());
        let mlp_on_binary = DrkmState {
            levels: vec![level(2, KernelSpec::linear(), 1)],
            head: Head::Mlp(HeadMlp {
                mlp: Mlp::zeros(2, 10, 2),
                lambda: 0.5,
                eta: 1.0,
            }),
        };
        assert!(matches!(eval_objective(&mlp_on_binary, &problem), Err(DrkmError::InvalidInput(_))));
        assert!(Problem::new(&x, &KernelSpec::linear(), Targets::Binary(vec![1.0, 0.0, 1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn non_finite_objective_names_the_term() {
        let x = data(4, 2, 1);
        let problem = Problem::new(&x, &KernelSpec::linear(), Targets::Binary(labels(4, 1))).unwrap();
        let mut head = lssvm(1, 0.5);
        head.w[0] = f64::INFINITY;
        let state = DrkmState {
            levels: vec![Level {
                config: LevelConfig::new(1, KernelSpec::linear(), 1.0),
                h: random_stiefel::<f64>(4, 1, 1).unwrap(),
            }],
            head: Head::Lssvm(head),
        };
        match eval_objective(&state, &problem) {
            Err(DrkmError::Numerical { term, .. }) => assert!(term.contains("classification")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conjugate_feature_examples() {
        let mut head = lssvm(2, 0.5);
        let h = DVector::from_vec(vec![0.2, -0.4]);
        assert_eq!(conjugate_features(&head, &h, 1.0).unwrap(), 2.0);
        head.w = DVector::from_vec(vec![1.0, 0.0]);
        head.b = 0.8;
        // y (w^T h + b) = 1
        assert_abs_diff_eq!(conjugate_features(&head, &h, 1.0).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn head_decision_examples() {
        let mut head = lssvm(3, 0.5);
        head.b = 0.25;
        let h = DVector::from_vec(vec![3.0, -1.0, 2.0]);
        assert_eq!(head_decision(&Head::Lssvm(head), &h).unwrap(), Decision::Score(0.25));
        let mlp = Head::Mlp(HeadMlp {
            mlp: Mlp::zeros(3, 10, 4),
            lambda: 0.5,
            eta: 1.0,
        });
        assert_eq!(head_decision(&mlp, &h).unwrap(), Decision::Logits(DVector::zeros(4)));
        assert!(head_decision(&mlp, &DVector::zeros(2)).is_err());
    }
}
