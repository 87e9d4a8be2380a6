//! The Stiefel manifold `St(s, N) = { H in R^{N x s} : H^T H = I_s }`.
//!
//! Points are produced by Euclidean projection, computed from the compact
//! SVD `M = U S V^T` as `U V^T`. Rank-deficient inputs have no unique
//! projection; the deficient left singular directions are replaced by the
//! first standard basis vectors (in index order) that are independent of the
//! retained ones, and the result is flagged.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{DrkmError, Real, Result};

/// An `N x s` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint<T: Real>(DMatrix<T>);

impl<T: Real> StiefelPoint<T> {
    /// Accepts `m` if `||m^T m - I||_F <= tol`.
    pub fn new(m: DMatrix<T>, tol: T) -> Result<Self> {
        let residual = feasibility_residual(&m);
        if m.ncols() > m.nrows() || !(residual <= tol) {
            return Err(DrkmError::InvalidInput(format!(
                "matrix of shape {}x{} is not on the Stiefel manifold (residual {:e} > {:e})",
                m.nrows(),
                m.ncols(),
                residual,
                tol
            )));
        }
        Ok(StiefelPoint(m))
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.0
    }

    pub fn residual(&self) -> T {
        feasibility_residual(&self.0)
    }
}

impl<T: Real> Deref for StiefelPoint<T> {
    type Target = DMatrix<T>;

    fn deref(&self) -> &DMatrix<T> {
        &self.0
    }
}

/// Result of [`project_stiefel`].
#[derive(Debug, Clone)]
pub struct Projection<T: Real> {
    pub point: StiefelPoint<T>,
    /// Set when some singular value was below [`Real::rank_tol`] and the
    /// projection had to be completed arbitrarily (but deterministically).
    pub rank_deficient: bool,
}

/// `||H^T H - I||_F`.
pub fn feasibility_residual<T: Real>(h: &DMatrix<T>) -> T {
    let gram = h.tr_mul(h);
    let s = gram.nrows();
    (gram - DMatrix::identity(s, s)).norm()
}

pub fn is_on_stiefel<T: Real>(h: &DMatrix<T>, tol: T) -> bool {
    h.ncols() <= h.nrows() && feasibility_residual(h) <= tol
}

/// Sign that makes the largest-magnitude entry of `v` (first one on ties)
/// positive.
pub(crate) fn canonical_sign<T: Real>(v: &DVector<T>) -> T {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

/// Euclidean projection of `m` (`N x s`, `s <= N`) onto `St(s, N)`.
pub fn project_stiefel<T: Real>(m: &DMatrix<T>) -> Result<Projection<T>> {
    let (n, s) = m.shape();
    if s == 0 || s > n {
        return Err(DrkmError::InvalidInput(format!(
            "Stiefel projection needs 1 <= s <= N, got N={n}, s={s}"
        )));
    }
    if m.iter().any(|v| !v.is_finite_value()) {
        return Err(DrkmError::numerical(
            "stiefel projection",
            "input matrix has non-finite entries",
        ));
    }
    let svd = m.clone().svd(true, true);
    let mut u = svd.u.ok_or_else(|| DrkmError::numerical("stiefel projection", "SVD returned no U"))?;
    let mut v_t = svd
        .v_t
        .ok_or_else(|| DrkmError::numerical("stiefel projection", "SVD returned no V^T"))?;
    let sv = svd.singular_values;

    let tol = T::rank_tol();
    let deficient: Vec<usize> = (0..s).filter(|&i| !(sv[i] >= tol)).collect();
    if deficient.is_empty() {
        return Ok(Projection {
            point: StiefelPoint(u * v_t),
            rank_deficient: false,
        });
    }

    // Retained singular pairs get the canonical sign (applied to both u_i
    // and v_i, so u_i v_i^T is unchanged). Deficient left directions are
    // filled from the standard basis by two-pass Gram-Schmidt, in index order.
    for i in (0..s).filter(|i| !deficient.contains(i)) {
        let sign = canonical_sign(&u.column(i).into_owned());
        if sign < T::zero() {
            u.column_mut(i).neg_mut();
            v_t.row_mut(i).neg_mut();
        }
    }
    let mut basis: Vec<DVector<T>> = (0..s)
        .filter(|i| !deficient.contains(i))
        .map(|i| u.column(i).into_owned())
        .collect();
    let mut e = 0;
    for &slot in &deficient {
        let col = loop {
            if e >= n {
                return Err(DrkmError::numerical(
                    "stiefel projection",
                    "could not complete a rank-deficient basis",
                ));
            }
            let mut cand = DVector::zeros(n);
            cand[e] = T::one();
            e += 1;
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&cand);
                    cand -= b * c;
                }
            }
            let norm = cand.norm();
            if norm > T::lit(0.5) {
                cand /= norm;
                let sign = canonical_sign(&cand);
                break cand * sign;
            }
        };
        u.set_column(slot, &col);
        basis.push(col);
        let row = v_t.row(slot).transpose();
        if canonical_sign(&row) < T::zero() {
            v_t.row_mut(slot).neg_mut();
        }
    }
    Ok(Projection {
        point: StiefelPoint(u * v_t),
        rank_deficient: true,
    })
}

/// Seeded random point: a standard-normal `N x s` matrix, projected.
pub fn random_stiefel<T: Real>(n: usize, s: usize, seed: u64) -> Result<StiefelPoint<T>> {
    if s == 0 || s > n {
        return Err(DrkmError::InvalidInput(format!(
            "random Stiefel point needs 1 <= s <= N, got N={n}, s={s}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_iterator(
        n,
        s,
        (0..n * s).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::lit(z)
        }),
    );
    Ok(project_stiefel(&m)?.point)
}

/// Projection of an ambient direction `g` onto the tangent space at `h`:
/// `g - h sym(h^T g)`.
pub fn tangent_project<T: Real>(h: &DMatrix<T>, g: &DMatrix<T>) -> DMatrix<T> {
    let hg = h.tr_mul(g);
    let sym = (&hg + hg.transpose()) * T::lit(0.5);
    g - h * sym
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn embedding(n: usize, s: usize) -> DMatrix<f64> {
        DMatrix::identity(n, s)
    }

    #[test]
    fn orthonormal_input_is_fixed() {
        let q = random_stiefel::<f64>(7, 3, 5).unwrap();
        let p = project_stiefel(&q).unwrap();
        assert!(!p.rank_deficient);
        assert_abs_diff_eq!(*p.point, *q, epsilon = 1e-10);
    }

    #[test]
    fn uniform_scaling_cancels() {
        let q = random_stiefel::<f64>(6, 2, 9).unwrap();
        let p = project_stiefel(&(&*q * 3.0)).unwrap();
        assert_abs_diff_eq!(*p.point, *q, epsilon = 1e-10);
    }

    #[test]
    fn projection_is_nearest_among_random_feasible_points() {
        let m = gaussian_matrix(8, 3, 4);
        let p = project_stiefel(&m).unwrap().point;
        assert!(is_on_stiefel(&p, 1e-8));
        let best = (&m - &*p).norm();
        for seed in 0..1000 {
            let q = random_stiefel::<f64>(8, 3, 10_000 + seed).unwrap();
            assert!(best <= (&m - &*q).norm() + 1e-12);
        }
    }

    #[test]
    fn feasibility_checks() {
        assert!(is_on_stiefel(&embedding(5, 2), 1e-10));
        let h = random_stiefel::<f64>(5, 2, 1).unwrap();
        assert!(!is_on_stiefel(&(&*h * 2.0), 1e-8));
        let p = project_stiefel(&gaussian_matrix(9, 4, 2)).unwrap();
        assert!(is_on_stiefel(&p.point, 1e-8));
        assert!(StiefelPoint::new(&*h * 2.0, 1e-8).is_err());
        assert!(StiefelPoint::new(h.clone().into_inner(), 1e-8).is_ok());
    }

    #[test]
    fn random_points() {
        let a = random_stiefel::<f64>(5, 2, 7).unwrap();
        let b = random_stiefel::<f64>(5, 2, 7).unwrap();
        assert_eq!(a, b);
        let sq = random_stiefel::<f64>(5, 5, 1).unwrap();
        assert_abs_diff_eq!(sq.determinant().abs(), 1.0, epsilon = 1e-8);
        let tall = random_stiefel::<f64>(50, 3, 3).unwrap();
        assert!(is_on_stiefel(&tall, 1e-8));
        assert!(random_stiefel::<f64>(2, 3, 0).is_err());
        assert!(random_stiefel::<f64>(2, 0, 0).is_err());
    }

    #[test]
    fn f32_points_meet_their_own_tolerance() {
        let h = random_stiefel::<f32>(30, 4, 2).unwrap();
        assert!(is_on_stiefel(&h, f32::feasibility_tol()));
    }

    #[test]
    fn rank_deficient_projection_is_completed_and_flagged() {
        // Second column is zero: only one direction is determined.
        let mut m = DMatrix::zeros(4, 2);
        m[(1, 0)] = 2.0;
        let p = project_stiefel(&m).unwrap();
        assert!(p.rank_deficient);
        assert!(is_on_stiefel(&p.point, 1e-12));
        assert_abs_diff_eq!(p.point[(1, 0)], 1.0, epsilon = 1e-12);
        let again = project_stiefel(&m).unwrap();
        assert_eq!(p.point, again.point);

        let zero = project_stiefel(&DMatrix::<f64>::zeros(3, 2)).unwrap();
        assert!(zero.rank_deficient);
        assert!(is_on_stiefel(&zero.point, 1e-12));
    }

    #[test]
    fn projection_errors() {
        assert!(project_stiefel(&DMatrix::<f64>::zeros(2, 3)).is_err());
        let mut m = gaussian_matrix(3, 2, 1);
        m[(0, 0)] = f64::NAN;
        assert!(matches!(project_stiefel(&m), Err(DrkmError::Numerical { .. })));
    }

    #[test]
    fn tangent_projection_is_tangent() {
        let h = random_stiefel::<f64>(6, 2, 3).unwrap();
        let g = gaussian_matrix(6, 2, 4);
        let t = tangent_project(&h, &g);
        let ht = h.tr_mul(&t);
        assert_abs_diff_eq!(&ht + ht.transpose(), DMatrix::zeros(2, 2), epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projection_is_idempotent(seed in any::<u64>(), n in 2usize..12, s in 1usize..4) {
            prop_assume!(s <= n);
            let m = gaussian_matrix(n, s, seed);
            let p = project_stiefel(&m).unwrap().point;
            let pp = project_stiefel(&p).unwrap().point;
            prop_assert!((&*pp - &*p).norm() <= 1e-10);
        }

        #[test]
        fn projection_commutes_with_right_rotation(seed in any::<u64>(), n in 3usize..10, s in 1usize..4) {
            prop_assume!(s <= n);
            let m = gaussian_matrix(n, s, seed);
            let r = random_stiefel::<f64>(s, s, seed ^ 0x5555).unwrap();
            let lhs = project_stiefel(&(&m * &*r)).unwrap().point;
            let rhs = &*project_stiefel(&m).unwrap().point * &*r;
            prop_assert!((&*lhs - rhs).norm() <= 1e-8);
        }

        #[test]
        fn projection_is_feasible(seed in any::<u64>(), n in 1usize..15, s in 1usize..5, scale in 1e-3f64..1e3) {
            prop_assume!(s <= n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(n, s, |_, _| rng.random_range(-1.0..1.0) * scale);
            let p = project_stiefel(&m).unwrap();
            prop_assert!(is_on_stiefel(&p.point, 1e-8));
        }
    }
}
