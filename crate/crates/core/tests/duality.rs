use drkm::model::{eliminated_classification_objective, rkm_classification_objective};
use drkm::{conjugate_features, HeadLssvm};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn eliminating_conjugate_features_preserves_the_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for draw in 0..100 {
        let n = rng.random_range(1..=30);
        let s = rng.random_range(1..=6);
        let features = DMatrix::from_fn(n, s, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let head = HeadLssvm {
            w: DVector::from_fn(s, |_, _| rng.sample::<f64, _>(StandardNormal)),
            b: rng.sample(StandardNormal),
            lambda: rng.random_range(0.05..5.0),
            eta: rng.random_range(0.05..5.0),
        };
        let hidden: Vec<f64> = (0..n)
            .map(|i| conjugate_features(&head, &features.row(i).transpose(), y[i]).unwrap())
            .collect();
        let with_hidden = rkm_classification_objective(&features, &y, &head, &hidden);
        let eliminated = eliminated_classification_objective(&features, &y, &head);
        let rel = (with_hidden - eliminated).abs() / eliminated.abs().max(1e-300);
        assert!(rel <= 1e-10, "draw {draw}: {with_hidden} vs {eliminated}");
    }
}

#[test]
fn conjugate_features_maximize_the_inner_concave_term() {
    // e h - lambda/2 h^2 is maximized at h = e / lambda.
    let head = HeadLssvm {
        w: DVector::from_vec(vec![0.3, -1.2]),
        b: 0.4,
        lambda: 0.7,
        eta: 1.0,
    };
    let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
    let y = [1.0];
    let h = conjugate_features(&head, &x.row(0).transpose(), 1.0).unwrap();
    let best = rkm_classification_objective(&x, &y, &head, &[h]);
    for delta in [-0.1, -1e-3, 1e-3, 0.1] {
        assert!(rkm_classification_objective(&x, &y, &head, &[h + delta]) < best);
    }
}
