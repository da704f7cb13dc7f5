mod common;

use common::*;
use poolforge::diversity::{d_ent, d_med, d_mst, d_nn, d_pair, mst_weight};
use poolforge::geometry::{medoid, select_anchors, AnchorRule};
use rand::Rng;

#[test]
fn metrics_match_brute_force_on_random_pools() {
    let mut r = rng(11);
    for _ in 0..50 {
        let n = r.random_range(3..=10);
        let d = mock_pool(&mut r, n);
        let m = dense(&d);
        assert!((d_pair(&d).unwrap() - oracle_d_pair(&m)).abs() < 1e-9);
        assert!((d_nn(&d).unwrap() - oracle_d_nn(&m)).abs() < 1e-9);
        assert!((d_med(&d) - oracle_d_med(&m)).abs() < 1e-9);
        assert!((d_mst(&d).unwrap() - oracle_mst_weight(&m) / (n - 1) as f64).abs() < 1e-9);
        if n <= 7 {
            assert!((mst_weight(&d) - enumerate_mst_weight(&m)).abs() < 1e-9);
        }
    }
}

#[test]
fn mst_with_tied_weights() {
    let mut r = rng(12);
    for _ in 0..100 {
        let n = r.random_range(2..=7);
        let d = tied_matrix(&mut r, n, 3);
        assert!((mst_weight(&d) - enumerate_mst_weight(&dense(&d))).abs() < 1e-12);
    }
}

#[test]
fn medoid_ties_go_low() {
    let mut r = rng(13);
    for _ in 0..200 {
        let n = r.random_range(2..=8);
        let d = tied_matrix(&mut r, n, 2);
        assert_eq!(medoid(&d), oracle_medoid(&dense(&d)));
    }
}

#[test]
fn entropy_exact_cases() {
    assert_eq!(d_ent(&[4; 12], 12).unwrap(), 0.0);
    let uniform: Vec<usize> = (0..24).map(|i| i % 12).collect();
    assert!((d_ent(&uniform, 12).unwrap() - 1.0).abs() < 1e-9);
    let three: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let want = 3f64.ln() / 12f64.ln();
    assert!((d_ent(&three, 12).unwrap() - want).abs() < 1e-9);
    assert!((want - 0.4421).abs() < 5e-5);
    let mut r = rng(14);
    for _ in 0..100 {
        let k = r.random_range(2..=15);
        let labels: Vec<usize> = (0..r.random_range(1..40)).map(|_| r.random_range(0..k)).collect();
        let e = d_ent(&labels, k).unwrap();
        assert!((e - oracle_entropy(&labels, k)).abs() < 1e-9);
        assert!((0.0..=1.0 + 1e-12).contains(&e));
    }
}

#[test]
fn anchors_match_recomputed_greedy() {
    let mut r = rng(15);
    for trial in 0..200 {
        let n = r.random_range(3..=8);
        let m = r.random_range(1..=3);
        let d = if trial % 2 == 0 { tied_matrix(&mut r, n, 3) } else { mock_pool(&mut r, n) };
        assert_eq!(select_anchors(&d, m, AnchorRule::MaxMin).unwrap(), oracle_anchors(&dense(&d), m));
    }
}
