//! Gromov delta checks shared by the core tests and the acceptance harness.
//! Each case panics on failure.

use hyp3d::hyperbolicity::{
    delta_rel, distance_matrix_euclidean, distance_matrix_geodesic, gromov_delta, gromov_delta_bruteforce,
    DistanceMatrix,
};
use hyp3d::lorentz::{expmap_origin, CurvatureSpace, LorentzPoint, TangentAtOrigin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random tree on `n` nodes with edge weights from `weight`; distances are
/// path sums.
pub fn random_tree_metric(
    n: usize,
    rng: &mut ChaCha8Rng,
    mut weight: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> DistanceMatrix {
    let mut parent = vec![0usize; n];
    let mut w = vec![0.0; n];
    for v in 1..n {
        parent[v] = rng.random_range(0..v);
        w[v] = weight(rng);
    }
    let root_path = |mut v: usize| {
        let mut path = vec![v];
        while v != 0 {
            v = parent[v];
            path.push(v);
        }
        path
    };
    let depth: Vec<f64> = (0..n)
        .map(|v| root_path(v).iter().map(|&u| w[u]).sum())
        .collect();
    DistanceMatrix::from_fn(n, |i, j| {
        let pi = root_path(i);
        let pj = root_path(j);
        let lca = *pi.iter().find(|u| pj.contains(u)).unwrap();
        depth[i] + depth[j] - 2.0 * depth[lca]
    })
    .unwrap()
}

pub fn fast_equals_bruteforce_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let s = CurvatureSpace::with_curvature(1.0).unwrap().shared();
    for trial in 0..100 {
        let d = match trial % 3 {
            0 => {
                let pts: Vec<Vec<f64>> =
                    (0..32).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                distance_matrix_euclidean(&pts).unwrap()
            }
            1 => {
                let pts: Vec<LorentzPoint> = (0..32)
                    .map(|_| {
                        let u = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
                        expmap_origin(&TangentAtOrigin::new(u), &s).unwrap()
                    })
                    .collect();
                distance_matrix_geodesic(&pts).unwrap()
            }
            _ => {
                let vals: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(0.1..1.0)).collect();
                DistanceMatrix::from_fn(32, |i, j| vals[i * 32 + j]).unwrap()
            }
        };
        let base = rng.random_range(0..32);
        assert_eq!(
            gromov_delta(&d, base).unwrap(),
            gromov_delta_bruteforce(&d, base).unwrap(),
            "trial {trial}"
        );
    }
}

pub fn random_tree_metrics_are_exactly_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let n = rng.random_range(4..=64);
        let d = random_tree_metric(n, &mut rng, |r| r.random_range(1..=10) as f64);
        for base in [0, n / 2, n - 1] {
            assert_eq!(gromov_delta(&d, base).unwrap(), 0.0);
            assert_eq!(gromov_delta_bruteforce(&d, base).unwrap(), 0.0);
        }
    }
}

pub fn delta_rel_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pts: Vec<Vec<f64>> = (0..32).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
    let d = distance_matrix_euclidean(&pts).unwrap();
    let r = delta_rel(&d, 0).unwrap();
    assert!((0.0..=1.0).contains(&r));
    for s in [1e-3, 1e3] {
        let rs = delta_rel(&d.scaled(s).unwrap(), 0).unwrap();
        assert!(((rs - r) / r).abs() < 1e-12);
    }
}

#[allow(dead_code)]
pub const ALL: &[(&str, fn())] = &[
    ("fast_equals_bruteforce_on_random_matrices", fast_equals_bruteforce_on_random_matrices),
    ("random_tree_metrics_are_exactly_zero", random_tree_metrics_are_exactly_zero),
    ("delta_rel_is_scale_invariant", delta_rel_is_scale_invariant),
];
