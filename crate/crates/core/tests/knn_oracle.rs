use dsne::knn::{build_vptree, knn_all, nearest_neighbors};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_force(points: &Array2<f64>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = points.nrows();
    (0..n)
        .map(|i| {
            let mut all: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d2: f64 = points
                        .row(i)
                        .iter()
                        .zip(points.row(j).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (j, d2.sqrt())
                })
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            all.truncate(k);
            all
        })
        .collect()
}

fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0))
}

fn assert_matches_brute_force(points: &Array2<f64>, k: usize, seed: u64) {
    let table = nearest_neighbors(points.view(), k, seed).unwrap();
    let expected = brute_force(points, k);
    for (i, exp) in expected.iter().enumerate() {
        let idx: Vec<usize> = exp.iter().map(|e| e.0).collect();
        assert_eq!(table.row(i), idx.as_slice(), "point {i}");
        for (d, e) in table.distances(i).iter().zip(exp) {
            assert!((d - e.1).abs() <= 1e-12 * e.1.max(1.0));
        }
    }
}

#[test]
fn random_50x5_matches_brute_force() {
    let pts = random_points(50, 5, 11);
    for k in [1, 5, 16, 49] {
        assert_matches_brute_force(&pts, k, 3);
    }
}

#[test]
fn random_100x10_k6_matches_brute_force() {
    assert_matches_brute_force(&random_points(100, 10, 12), 6, 0);
}

#[test]
fn collinear_hand_check() {
    let pts = array![[0.0], [1.0], [3.0]];
    let table = nearest_neighbors(pts.view(), 1, 0).unwrap();
    assert_eq!(table.row(1), &[0]);
    assert_eq!(table.row(2), &[1]);
}

#[test]
fn square_corners_pick_adjacent() {
    let pts = array![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let table = nearest_neighbors(pts.view(), 2, 5).unwrap();
    for i in 0..4 {
        let mut row = table.row(i).to_vec();
        row.sort();
        let mut adj = vec![(i + 1) % 4, (i + 3) % 4];
        adj.sort();
        assert_eq!(row, adj, "corner {i}");
    }
}

#[test]
fn duplicates_come_first() {
    let pts = array![[0.0, 0.0], [5.0, 5.0], [0.0, 0.0], [0.1, 0.0], [0.0, 0.0]];
    let table = nearest_neighbors(pts.view(), 3, 1).unwrap();
    assert_eq!(table.row(0), &[2, 4, 3]);
    assert_eq!(table.distances(0)[..2], [0.0, 0.0]);
}

#[test]
fn grid_ties_resolve_by_index() {
    let pts = Array2::from_shape_fn((25, 2), |(i, c)| if c == 0 { (i % 5) as f64 } else { (i / 5) as f64 });
    for seed in 0..5 {
        assert_matches_brute_force(&pts, 4, seed);
    }
}

#[test]
fn full_neighborhood_is_a_permutation() {
    let pts = random_points(30, 3, 4);
    let table = knn_all(&build_vptree(pts.view(), 9).unwrap(), 29).unwrap();
    for i in 0..30 {
        let mut row = table.row(i).to_vec();
        row.sort();
        let expected: Vec<usize> = (0..30).filter(|&j| j != i).collect();
        assert_eq!(row, expected);
    }
}

#[test]
fn k_range_is_enforced() {
    let pts = random_points(10, 2, 0);
    assert!(nearest_neighbors(pts.view(), 0, 0).is_err());
    assert!(nearest_neighbors(pts.view(), 10, 0).is_err());
    assert!(nearest_neighbors(pts.slice(ndarray::s![..1, ..]), 1, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_cloud_matches_brute_force(
        n in 2usize..500,
        d in 1usize..8,
        k_frac in 0.0f64..1.0,
        data_seed in any::<u64>(),
        tree_seed in any::<u64>(),
    ) {
        let k = 1 + ((n - 2) as f64 * k_frac) as usize;
        let k = k.min(20);
        assert_matches_brute_force(&random_points(n, d, data_seed), k, tree_seed);
    }

    #[test]
    fn integer_lattices_keep_tie_order(n in 2usize..120, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = Array2::from_shape_simple_fn((n, 2), || rng.random_range(0..4) as f64);
        assert_matches_brute_force(&pts, (n - 1).min(5), seed);
    }
}
