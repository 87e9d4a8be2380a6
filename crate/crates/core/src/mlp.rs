//! One-hidden-layer ReLU perceptron: `f(h) = W2 relu(W1 h + b1) + b2`.
//!
//! Used both as the DRKM classification head (inputs are the last level's
//! hidden features) and as the standalone MLP baseline (inputs are raw
//! features).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{DrkmError, Real, Result};

pub const DEFAULT_HIDDEN: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Real> {
    /// `hidden x input`
    pub w1: DMatrix<T>,
    pub b1: DVector<T>,
    /// `classes x hidden`; the output-layer weights.
    pub w2: DMatrix<T>,
    pub b2: DVector<T>,
}

/// Gradient with the same layout as [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T: Real> {
    pub w1: DMatrix<T>,
    pub b1: DVector<T>,
    pub w2: DMatrix<T>,
    pub b2: DVector<T>,
}

impl<T: Real> Mlp<T> {
    pub fn zeros(inputs: usize, hidden: usize, classes: usize) -> Self {
        Mlp {
            w1: DMatrix::zeros(hidden, inputs),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(classes, hidden),
            b2: DVector::zeros(classes),
        }
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn random<R: Rng>(inputs: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut draw = |rows: usize, cols: usize| {
            let std = 1.0 / (cols as f64).sqrt();
            DMatrix::from_iterator(
                rows,
                cols,
                (0..rows * cols).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal) * std)),
            )
        };
        let w1 = draw(hidden, inputs);
        let w2 = draw(classes, hidden);
        Mlp {
            w1,
            b1: DVector::zeros(hidden),
            w2,
            b2: DVector::zeros(classes),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn classes(&self) -> usize {
        self.w2.nrows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let ok = self.b1.len() == self.w1.nrows()
            && self.w2.ncols() == self.w1.nrows()
            && self.b2.len() == self.w2.nrows();
        if !ok {
            return Err(DrkmError::InvalidInput("inconsistent MLP layer shapes".into()));
        }
        Ok(())
    }

    /// Logits for one input vector.
    pub fn forward(&self, h: &DVector<T>) -> Result<DVector<T>> {
        if h.len() != self.inputs() {
            return Err(DrkmError::DimensionMismatch {
                expected: self.inputs(),
                got: h.len(),
                context: "MLP input",
            });
        }
        let z = &self.w1 * h + &self.b1;
        let a = z.map(relu);
        Ok(&self.w2 * a + &self.b2)
    }

    /// Logits for every row of `x` (`N x inputs` -> `N x classes`).
    pub fn forward_batch(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let (_, a) = self.hidden_batch(x);
        let mut out = a * self.w2.transpose();
        for mut row in out.row_iter_mut() {
            row += self.b2.transpose();
        }
        out
    }

    fn hidden_batch(&self, x: &DMatrix<T>) -> (DMatrix<T>, DMatrix<T>) {
        let mut z = x * self.w1.transpose();
        for mut row in z.row_iter_mut() {
            row += self.b1.transpose();
        }
        let a = z.map(relu);
        (z, a)
    }

    /// Sum over rows of the softmax cross-entropy, its gradient with respect
    /// to the parameters and to the inputs, all multiplied by `scale`.
    pub fn loss_and_grads(
        &self,
        x: &DMatrix<T>,
        labels: &[usize],
        scale: T,
    ) -> Result<(T, MlpGrads<T>, DMatrix<T>)> {
        if x.ncols() != self.inputs() {
            return Err(DrkmError::DimensionMismatch {
                expected: self.inputs(),
                got: x.ncols(),
                context: "MLP input",
            });
        }
        if labels.len() != x.nrows() {
            return Err(DrkmError::DimensionMismatch {
                expected: x.nrows(),
                got: labels.len(),
                context: "MLP labels",
            });
        }
        let p = self.classes();
        let (z, a) = self.hidden_batch(x);
        let mut logits = &a * self.w2.transpose();
        for mut row in logits.row_iter_mut() {
            row += self.b2.transpose();
        }
        let mut total = T::zero();
        // dL/dlogits = softmax - onehot
        let mut delta = DMatrix::zeros(x.nrows(), p);
        for (i, &y) in labels.iter().enumerate() {
            if y >= p {
                return Err(DrkmError::InvalidInput(format!(
                    "label {y} out of range for {p} classes"
                )));
            }
            let row: Vec<T> = logits.row(i).iter().copied().collect();
            let lse = log_sum_exp(&row);
            total += lse - row[y];
            for k in 0..p {
                delta[(i, k)] = (row[k] - lse).exp() * scale;
            }
            delta[(i, y)] -= scale;
        }
        let g_w2 = delta.transpose() * &a;
        let g_b2 = delta.row_sum().transpose();
        let mut back = &delta * &self.w2;
        back.zip_apply(&z, |g, zv| {
            if zv <= T::zero() {
                *g = T::zero();
            }
        });
        let g_w1 = back.transpose() * x;
        let g_b1 = back.row_sum().transpose();
        let g_x = back * &self.w1;
        Ok((
            total * scale,
            MlpGrads {
                w1: g_w1,
                b1: g_b1,
                w2: g_w2,
                b2: g_b2,
            },
            g_x,
        ))
    }

    /// Parameters flattened in the order `w1, b1, w2, b2` (column-major).
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(self.b1.as_slice());
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(self.b2.as_slice());
        v
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(DrkmError::DimensionMismatch {
                expected: self.num_params(),
                got: flat.len(),
                context: "flattened MLP parameters",
            });
        }
        let mut off = 0;
        for dst in [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ] {
            let len = dst.len();
            dst.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }
}

impl<T: Real> MlpGrads<T> {
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = Vec::new();
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(self.b1.as_slice());
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(self.b2.as_slice());
        v
    }

    pub fn norm_squared(&self) -> T {
        self.w1.norm_squared() + self.b1.norm_squared() + self.w2.norm_squared() + self.b2.norm_squared()
    }
}

#[inline]
fn relu<T: Real>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

pub(crate) fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let m = row.iter().copied().fold(row[0], |a, b| a.max(b));
    let s = row.iter().fold(T::zero(), |acc, &v| acc + (v - m).exp());
    m + s.ln()
}

/// Softmax cross-entropy of one logit vector against class `label`.
pub fn cross_entropy<T: Real>(logits: &[T], label: usize) -> T {
    log_sum_exp(logits) - logits[label]
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_has_uniform_loss() {
        let mlp = Mlp::<f64>::zeros(3, 10, 2);
        let x = DMatrix::from_element(4, 3, 0.7);
        let (loss, _, _) = mlp.loss_and_grads(&x, &[0, 1, 1, 0], 1.0).unwrap();
        assert_abs_diff_eq!(loss, 4.0 * 2f64.ln(), epsilon = 1e-14);
        assert_eq!(mlp.forward(&DVector::from_element(3, 1.0)).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn cross_entropy_is_shift_invariant_and_stable() {
        let l = [0.3, -1.2, 2.5];
        let shifted: Vec<f64> = l.iter().map(|v| v + 1000.0).collect();
        assert_abs_diff_eq!(cross_entropy(&l, 1), cross_entropy(&shifted, 1), epsilon = 1e-12);
        assert!(cross_entropy(&[1e308f64, -1e308], 0).is_finite());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mlp::<f64>::random(4, 5, 3, &mut rng);
        let mut b = Mlp::<f64>::zeros(4, 5, 3);
        b.set_flat(&a.to_flat()).unwrap();
        assert_eq!(a, b);
        assert!(b.set_flat(&[1.0]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mlp = Mlp::<f64>::random(3, 6, 4, &mut rng);
        let x = DMatrix::from_fn(7, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let labels = [0, 1, 2, 3, 1, 0, 2];
        let (_, g, gx) = mlp.loss_and_grads(&x, &labels, 0.5).unwrap();
        let f = |m: &Mlp<f64>, x: &DMatrix<f64>| m.loss_and_grads(x, &labels, 0.5).unwrap().0;
        let step = 1e-6;
        let flat = mlp.to_flat();
        let gflat = g.to_flat();
        for k in 0..flat.len() {
            let mut p = mlp.clone();
            let mut v = flat.clone();
            v[k] += step;
            p.set_flat(&v).unwrap();
            let mut q = mlp.clone();
            v[k] -= 2.0 * step;
            q.set_flat(&v).unwrap();
            let fd = (f(&p, &x) - f(&q, &x)) / (2.0 * step);
            assert_abs_diff_eq!(fd, gflat[k], epsilon = 1e-7);
        }
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let mut a = x.clone();
                a[(i, j)] += step;
                let mut b = x.clone();
                b[(i, j)] -= step;
                let fd = (f(&mlp, &a) - f(&mlp, &b)) / (2.0 * step);
                assert_abs_diff_eq!(fd, gx[(i, j)], epsilon = 1e-7);
            }
        }
    }
}
