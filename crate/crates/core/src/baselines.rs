//! Reference solvers and competitors: the dual KPCA eigenproblem, a dual
//! LSSVM classifier and a standalone MLP.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::kernels::{check_symmetric, cross_kernel, kernel_matrix, KernelMatrix};
use crate::mlp::{argmax, Mlp, DEFAULT_HIDDEN};
use crate::optimizer::{adam_update, AdamConfig, AdamState};
use crate::stiefel::canonical_sign;
use crate::{DrkmError, KernelSpec, Real, Result};

/// Top eigenpairs of `K / eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult<T: Real> {
    /// `N x s`, orthonormal columns.
    pub h: DMatrix<T>,
    /// Descending.
    pub lambda: DVector<T>,
}

pub fn kpca_eigen<T: Real>(k: &KernelMatrix<T>, eta: T, s: usize) -> Result<EigenResult<T>> {
    let n = k.nrows();
    if s == 0 || s > n {
        return Err(DrkmError::InvalidInput(format!("kpca_eigen needs 1 <= s <= {n}, got {s}")));
    }
    if !(eta > T::zero()) {
        return Err(DrkmError::InvalidInput("eta must be positive".into()));
    }
    check_symmetric(k, T::lit(1e-10), "kernel matrix")?;
    let scaled = &**k / eta;
    let eig = SymmetricEigen::try_new(scaled, T::default_epsilon(), 10_000)
        .ok_or_else(|| DrkmError::numerical("kpca eigensolver", "did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the original index order on exact ties.
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut h = DMatrix::zeros(n, s);
    let mut lambda = DVector::zeros(s);
    for (c, &idx) in order.iter().take(s).enumerate() {
        let v = eig.eigenvectors.column(idx).into_owned();
        let sign = canonical_sign(&v);
        h.set_column(c, &(v * sign));
        lambda[c] = eig.eigenvalues[idx];
    }
    Ok(EigenResult { h, lambda })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LssvmDualModel<T: Real> {
    pub alpha: DVector<T>,
    pub b: T,
    pub gamma: T,
    pub kernel: KernelSpec<T>,
    /// Training inputs and their +1/-1 labels.
    pub x: Arc<DMatrix<T>>,
    pub y: Vec<T>,
}

fn check_binary<T: Real>(y: &[T]) -> Result<()> {
    if y.iter().any(|v| *v != T::one() && *v != -T::one()) {
        return Err(DrkmError::InvalidInput("LSSVM labels must be +1 or -1".into()));
    }
    Ok(())
}

/// Solves the bordered system given a precomputed Gram matrix.
fn lssvm_solve<T: Real>(k: &DMatrix<T>, y: &[T], gamma: T) -> Result<(DVector<T>, T)> {
    let n = k.nrows();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        a[(0, i + 1)] = y[i];
        a[(i + 1, 0)] = y[i];
        for j in 0..n {
            a[(i + 1, j + 1)] = y[i] * y[j] * k[(i, j)];
        }
        a[(i + 1, i + 1)] += T::one() / gamma;
    }
    let mut rhs = DVector::from_element(n + 1, T::one());
    rhs[0] = T::zero();
    let sol = a.clone().lu().solve(&rhs);
    let sol = match sol {
        Some(s) if s.iter().all(|v| v.is_finite_value()) => s,
        _ => {
            let sv = a.singular_values();
            let max = sv.max();
            let min = sv.min();
            let cond = if min > T::zero() { (max / min).as_f64() } else { f64::INFINITY };
            return Err(DrkmError::numerical(
                "LSSVM dual system",
                format!("matrix is singular (condition estimate {cond:e})"),
            ));
        }
    };
    let b = sol[0];
    let alpha = sol.rows(1, n).into_owned();
    Ok((alpha, b))
}

pub fn lssvm_dual_train<T: Real>(
    x: &DMatrix<T>,
    y: &[T],
    gamma: T,
    kernel: &KernelSpec<T>,
) -> Result<LssvmDualModel<T>> {
    if x.nrows() != y.len() {
        return Err(DrkmError::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
            context: "LSSVM labels",
        });
    }
    if !(gamma > T::zero()) {
        return Err(DrkmError::InvalidInput("gamma must be positive".into()));
    }
    check_binary(y)?;
    let k = kernel_matrix(kernel, x)?;
    let (alpha, b) = lssvm_solve(&k, y, gamma)?;
    Ok(LssvmDualModel {
        alpha,
        b,
        gamma,
        kernel: kernel.clone(),
        x: Arc::new(x.clone()),
        y: y.to_vec(),
    })
}

impl<T: Real> LssvmDualModel<T> {
    /// `sum_i alpha_i y_i k(x_i, x*) + b` for each row of `xs`.
    pub fn decision_values(&self, xs: &DMatrix<T>) -> Result<DVector<T>> {
        let c = cross_kernel(&self.kernel, xs, &self.x)?;
        let ay = DVector::from_iterator(self.y.len(), self.alpha.iter().zip(&self.y).map(|(a, y)| *a * *y));
        Ok(c * ay + DVector::from_element(xs.nrows(), self.b))
    }

    /// +1/-1 predictions; a decision value of exactly zero maps to +1.
    pub fn predict(&self, xs: &DMatrix<T>) -> Result<Vec<T>> {
        Ok(self
            .decision_values(xs)?
            .iter()
            .map(|v| if *v >= T::zero() { T::one() } else { -T::one() })
            .collect())
    }
}

/// One dual LSSVM per class, class `c` against the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct LssvmOneVsAll<T: Real> {
    pub models: Vec<LssvmDualModel<T>>,
}

impl<T: Real> LssvmOneVsAll<T> {
    pub fn train(x: &DMatrix<T>, labels: &[usize], classes: usize, gamma: T, kernel: &KernelSpec<T>) -> Result<Self> {
        if classes < 2 {
            return Err(DrkmError::InvalidInput("one-vs-all needs at least two classes".into()));
        }
        if x.nrows() != labels.len() {
            return Err(DrkmError::DimensionMismatch {
                expected: x.nrows(),
                got: labels.len(),
                context: "LSSVM labels",
            });
        }
        if !(gamma > T::zero()) {
            return Err(DrkmError::InvalidInput("gamma must be positive".into()));
        }
        let k = kernel_matrix(kernel, x)?;
        let shared = Arc::new(x.clone());
        let models = (0..classes)
            .into_par_iter()
            .map(|c| {
                let y: Vec<T> = labels
                    .iter()
                    .map(|&l| if l == c { T::one() } else { -T::one() })
                    .collect();
                let (alpha, b) = lssvm_solve(&k, &y, gamma)?;
                Ok(LssvmDualModel {
                    alpha,
                    b,
                    gamma,
                    kernel: kernel.clone(),
                    x: shared.clone(),
                    y,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LssvmOneVsAll { models })
    }

    pub fn predict(&self, xs: &DMatrix<T>) -> Result<Vec<usize>> {
        let scores = self
            .models
            .iter()
            .map(|m| m.decision_values(xs))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..xs.nrows())
            .map(|i| argmax(&scores.iter().map(|s| s[i]).collect::<Vec<_>>()))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpBaselineConfig<T> {
    pub hidden: usize,
    /// Full-batch Adam steps.
    pub steps: usize,
    pub adam: AdamConfig<T>,
    pub seed: u64,
    /// Start from all-zero parameters instead of a random draw.
    pub zero_init: bool,
}

impl<T: Real> Default for MlpBaselineConfig<T> {
    fn default() -> Self {
        MlpBaselineConfig {
            hidden: DEFAULT_HIDDEN,
            steps: 1000,
            adam: AdamConfig {
                lr: T::lit(1e-2),
                ..AdamConfig::default()
            },
            seed: 0,
            zero_init: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier<T: Real> {
    pub mlp: Mlp<T>,
    /// Mean cross-entropy before each step and after the last one.
    pub loss_trace: Vec<T>,
}

impl<T: Real> MlpClassifier<T> {
    pub fn predict(&self, xs: &DMatrix<T>) -> Result<Vec<usize>> {
        if xs.ncols() != self.mlp.inputs() {
            return Err(DrkmError::DimensionMismatch {
                expected: self.mlp.inputs(),
                got: xs.ncols(),
                context: "MLP input",
            });
        }
        let logits = self.mlp.forward_batch(xs);
        Ok(logits
            .row_iter()
            .map(|r| argmax(&r.iter().copied().collect::<Vec<_>>()))
            .collect())
    }
}

/// Trains `X -> hidden ReLU -> classes` on the mean cross-entropy.
pub fn mlp_baseline_train<T: Real>(
    x: &DMatrix<T>,
    labels: &[usize],
    classes: usize,
    config: &MlpBaselineConfig<T>,
) -> Result<MlpClassifier<T>> {
    if x.nrows() == 0 {
        return Err(DrkmError::InvalidInput("empty training set".into()));
    }
    let mut mlp = if config.zero_init {
        Mlp::zeros(x.ncols(), config.hidden, classes)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Mlp::random(x.ncols(), config.hidden, classes, &mut rng)
    };
    let scale = T::one() / T::from_usize_lossy(x.nrows());
    let mut state = AdamState::new(mlp.num_params());
    let mut trace = Vec::with_capacity(config.steps + 1);
    for _ in 0..config.steps {
        let (loss, grads, _) = mlp.loss_and_grads(x, labels, scale)?;
        if !loss.is_finite_value() {
            return Err(DrkmError::numerical("MLP baseline loss", "non-finite value"));
        }
        trace.push(loss);
        let (theta, next) = adam_update(&mlp.to_flat(), &grads.to_flat(), &state, &config.adam)?;
        mlp.set_flat(&theta)?;
        state = next;
    }
    trace.push(mlp.loss_and_grads(x, labels, scale)?.0);
    Ok(MlpClassifier { mlp, loss_trace: trace })
}
