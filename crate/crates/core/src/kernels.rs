//! Kernel functions, kernel-matrix assembly and input gradients of kernel
//! matrices.
//!
//! Kernel matrices are never centered: every objective in this crate works
//! with the raw Gram matrix.

use std::ops::Deref;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{DrkmError, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
    Cosine,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Linear => "linear",
            KernelKind::Rbf => "rbf",
            KernelKind::Cosine => "cosine",
        }
    }

    /// Whether [`kernel_input_gradient`] is available for this family.
    pub fn has_input_gradient(self) -> bool {
        !matches!(self, KernelKind::Cosine)
    }
}

/// A kernel family together with its bandwidth. `sigma` is only read for
/// [`KernelKind::Rbf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<T> {
    pub kind: KernelKind,
    pub sigma: T,
}

impl<T: Real> KernelSpec<T> {
    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            sigma: T::one(),
        }
    }

    pub fn cosine() -> Self {
        KernelSpec {
            kind: KernelKind::Cosine,
            sigma: T::one(),
        }
    }

    pub fn rbf(sigma: T) -> Result<Self> {
        let spec = KernelSpec {
            kind: KernelKind::Rbf,
            sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::Rbf && !(self.sigma > T::zero() && self.sigma.is_finite_value()) {
            return Err(DrkmError::InvalidInput(format!(
                "rbf bandwidth must be positive and finite, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Symmetric `N x N` Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix<T: Real>(DMatrix<T>);

impl<T: Real> KernelMatrix<T> {
    /// Wraps a matrix after checking it is square and symmetric to `1e-12`.
    pub fn from_matrix(m: DMatrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(DrkmError::InvalidInput(format!(
                "kernel matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_symmetric(&m, T::lit(1e-12), "kernel matrix")?;
        Ok(KernelMatrix(m))
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.0
    }
}

impl<T: Real> Deref for KernelMatrix<T> {
    type Target = DMatrix<T>;

    fn deref(&self) -> &DMatrix<T> {
        &self.0
    }
}

fn check_finite<T: Real>(values: &[T], what: &str) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite_value()) {
        return Err(DrkmError::InvalidInput(format!(
            "non-finite value in {what} at position {pos}"
        )));
    }
    Ok(())
}

pub(crate) fn check_symmetric<T: Real>(m: &DMatrix<T>, tol: T, what: &str) -> Result<()> {
    let n = m.nrows();
    let scale = m.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    for j in 0..n {
        for i in (j + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return Err(DrkmError::InvalidInput(format!(
                    "{what} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Evaluates `k(x, z)`.
pub fn eval_kernel<T: Real>(spec: &KernelSpec<T>, x: &[T], z: &[T]) -> Result<T> {
    spec.validate()?;
    if x.len() != z.len() {
        return Err(DrkmError::DimensionMismatch {
            expected: x.len(),
            got: z.len(),
            context: "kernel arguments",
        });
    }
    check_finite(x, "kernel argument x")?;
    check_finite(z, "kernel argument z")?;
    match spec.kind {
        KernelKind::Linear => Ok(dot(x, z)),
        KernelKind::Rbf => Ok(gaussian(sq_dist(x, z), spec.sigma)),
        KernelKind::Cosine => {
            let nx = dot(x, x).sqrt();
            let nz = dot(z, z).sqrt();
            if nx == T::zero() || nz == T::zero() {
                return Err(DrkmError::InvalidInput(
                    "cosine kernel is undefined for the zero vector".into(),
                ));
            }
            Ok(dot(x, z) / (nx * nz))
        }
    }
}

#[inline]
pub(crate) fn gaussian<T: Real>(sq_dist: T, sigma: T) -> T {
    (-sq_dist / (T::lit(2.0) * sigma * sigma)).exp()
}

/// Rows of `x` as contiguous slices (the transpose is column-major with one
/// sample per column).
fn sample_columns<T: Real>(x: &DMatrix<T>) -> DMatrix<T> {
    x.transpose()
}

/// Assembles `K_ik = k(x_i, x_k)` over the rows of `x`.
///
/// Rows are processed in parallel; each entry is a fixed-order sum, so the
/// result does not depend on the number of threads.
pub fn kernel_matrix<T: Real>(spec: &KernelSpec<T>, x: &DMatrix<T>) -> Result<KernelMatrix<T>> {
    spec.validate()?;
    let n = x.nrows();
    if n == 0 || x.ncols() == 0 {
        return Err(DrkmError::InvalidInput(
            "kernel matrix needs at least one row and one column".into(),
        ));
    }
    check_finite(x.as_slice(), "kernel input matrix")?;
    let cols = sample_columns(x);
    let d = x.ncols();
    let sample = |i: usize| &cols.as_slice()[i * d..(i + 1) * d];

    let norms: Vec<T> = if spec.kind == KernelKind::Cosine {
        let norms: Vec<T> = (0..n).map(|i| dot(sample(i), sample(i)).sqrt()).collect();
        if let Some(i) = norms.iter().position(|v| *v == T::zero()) {
            return Err(DrkmError::InvalidInput(format!(
                "cosine kernel is undefined for the zero vector (row {i})"
            )));
        }
        norms
    } else {
        Vec::new()
    };

    // Upper triangle, row by row.
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = sample(i);
            (i..n)
                .map(|k| {
                    let xk = sample(k);
                    match spec.kind {
                        KernelKind::Linear => dot(xi, xk),
                        KernelKind::Rbf => {
                            if i == k {
                                T::one()
                            } else {
                                gaussian(sq_dist(xi, xk), spec.sigma)
                            }
                        }
                        KernelKind::Cosine => dot(xi, xk) / (norms[i] * norms[k]),
                    }
                })
                .collect()
        })
        .collect();

    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (offset, v) in row.into_iter().enumerate() {
            let j = i + offset;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(KernelMatrix(k))
}

/// Gradient of `Tr(G K(H))` with respect to `H`, for symmetric `G`.
///
/// * linear: `2 G H`
/// * rbf: row `i` is `sum_k 2 G_ik K_ik (h_k - h_i) / sigma^2`
pub fn kernel_input_gradient<T: Real>(
    spec: &KernelSpec<T>,
    h: &DMatrix<T>,
    g: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let k = match spec.kind {
        KernelKind::Rbf => Some(kernel_matrix(spec, h)?),
        _ => None,
    };
    kernel_input_gradient_with(spec, h, g, k.as_deref())
}

/// Same as [`kernel_input_gradient`] but reuses an already assembled `K(H)`
/// for the rbf case.
pub(crate) fn kernel_input_gradient_with<T: Real>(
    spec: &KernelSpec<T>,
    h: &DMatrix<T>,
    g: &DMatrix<T>,
    k: Option<&DMatrix<T>>,
) -> Result<DMatrix<T>> {
    spec.validate()?;
    let n = h.nrows();
    if g.nrows() != n || g.ncols() != n {
        return Err(DrkmError::DimensionMismatch {
            expected: n,
            got: g.nrows().max(g.ncols()),
            context: "weight matrix G of kernel input gradient",
        });
    }
    check_symmetric(g, T::lit(1e-12), "weight matrix G")?;
    match spec.kind {
        KernelKind::Cosine => Err(DrkmError::UnsupportedGradient("cosine")),
        KernelKind::Linear => Ok((g * h) * T::lit(2.0)),
        KernelKind::Rbf => {
            let owned;
            let k = match k {
                Some(k) => k,
                None => {
                    owned = kernel_matrix(spec, h)?.into_inner();
                    &owned
                }
            };
            let m = g.component_mul(k);
            let mut out = &m * h;
            let row_sums = m.column_sum();
            for i in 0..n {
                let w = row_sums[i];
                for c in 0..h.ncols() {
                    out[(i, c)] -= w * h[(i, c)];
                }
            }
            Ok(out * (T::lit(2.0) / (spec.sigma * spec.sigma)))
        }
    }
}

/// Builds a kernel matrix from column blocks of the data, holding only the
/// `N x N` Gram matrix and the current block.
#[derive(Debug, Clone)]
pub struct BlockKernelBuilder<T: Real> {
    gram: DMatrix<T>,
    columns: usize,
}

impl<T: Real> BlockKernelBuilder<T> {
    pub fn new(n: usize) -> Self {
        BlockKernelBuilder {
            gram: DMatrix::zeros(n, n),
            columns: 0,
        }
    }

    /// Adds the features in `block` (`N x width`).
    pub fn push(&mut self, block: &DMatrix<T>) -> Result<()> {
        if block.nrows() != self.gram.nrows() {
            return Err(DrkmError::DimensionMismatch {
                expected: self.gram.nrows(),
                got: block.nrows(),
                context: "rows of a kernel column block",
            });
        }
        check_finite(block.as_slice(), "kernel column block")?;
        self.gram += block * block.transpose();
        self.columns += block.ncols();
        Ok(())
    }

    pub fn finish(self, spec: &KernelSpec<T>) -> Result<KernelMatrix<T>> {
        spec.validate()?;
        let n = self.gram.nrows();
        if n == 0 || self.columns == 0 {
            return Err(DrkmError::InvalidInput("no kernel columns were added".into()));
        }
        let g = self.gram;
        let k = match spec.kind {
            KernelKind::Linear => g,
            KernelKind::Rbf => DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    T::one()
                } else {
                    let sq = g[(i, i)] + g[(j, j)] - g[(i, j)] * T::lit(2.0);
                    gaussian(if sq > T::zero() { sq } else { T::zero() }, spec.sigma)
                }
            }),
            KernelKind::Cosine => {
                if let Some(i) = (0..n).find(|&i| g[(i, i)] == T::zero()) {
                    return Err(DrkmError::InvalidInput(format!(
                        "cosine kernel is undefined for the zero vector (row {i})"
                    )));
                }
                DMatrix::from_fn(n, n, |i, j| g[(i, j)] / (g[(i, i)] * g[(j, j)]).sqrt())
            }
        };
        KernelMatrix::from_matrix(k)
    }
}

/// `C_ik = k(a_i, b_k)` for rows `a_i` of `a` and `b_k` of `b`.
pub fn cross_kernel<T: Real>(spec: &KernelSpec<T>, a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    if a.ncols() != b.ncols() {
        return Err(DrkmError::DimensionMismatch {
            expected: b.ncols(),
            got: a.ncols(),
            context: "cross-kernel feature dimension",
        });
    }
    let d = a.ncols();
    let (ac, bc) = (sample_columns(a), sample_columns(b));
    let rows: Vec<Vec<T>> = (0..a.nrows())
        .into_par_iter()
        .map(|i| {
            let ai = &ac.as_slice()[i * d..(i + 1) * d];
            (0..b.nrows())
                .map(|k| eval_kernel(spec, ai, &bc.as_slice()[k * d..(k + 1) * d]))
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, k| rows[i][k]))
}

/// Squared Euclidean distances between rows of `a` and rows of `b`.
pub(crate) fn cross_sq_dist<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let d = a.ncols();
    let (ac, bc) = (sample_columns(a), sample_columns(b));
    let rows: Vec<Vec<T>> = (0..a.nrows())
        .into_par_iter()
        .map(|i| {
            let ai = &ac.as_slice()[i * d..(i + 1) * d];
            (0..b.nrows())
                .map(|k| sq_dist(ai, &bc.as_slice()[k * d..(k + 1) * d]))
                .collect()
        })
        .collect();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, k| rows[i][k])
}

/// Median of the pairwise Euclidean distances between rows of `x`.
///
/// Offered as an explicit helper for choosing an rbf or smoother bandwidth;
/// nothing in the crate calls it implicitly.
pub fn median_pairwise_distance<T: Real>(x: &DMatrix<T>) -> Result<T> {
    let n = x.nrows();
    if n < 2 {
        return Err(DrkmError::InvalidInput(
            "median pairwise distance needs at least two rows".into(),
        ));
    }
    let cols = sample_columns(x);
    let d = x.ncols();
    let sample = |i: usize| &cols.as_slice()[i * d..(i + 1) * d];
    let mut dists: Vec<T> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for k in (i + 1)..n {
            dists.push(sq_dist(sample(i), sample(k)).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        (dists[m / 2 - 1] + dists[m / 2]) / T::lit(2.0)
    };
    Ok(med)
}
