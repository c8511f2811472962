mod common;

use common::*;
use l3o_core::design::{self, BuildOptions, Dataset, Encoding, WeightKind};
use l3o_core::l3o_variance::{self as lv, L3oOptions, LeaveOutKernel, SingularPolicy};
use l3o_core::linalg::{self, Mat};
use l3o_core::numeric::Lin;
use l3o_core::Error;

fn check_fast_vs_naive(ds: &Dataset, kind: WeightKind, beta0: f64) {
    let ws = design::build_weights(ds, kind).unwrap();
    let naive = lv::l3o_variance_naive(ds, &ws, beta0).unwrap();
    let fast = lv::l3o_variance_fast(ds, &ws, beta0).unwrap();
    assert!(rel_err(fast, naive) <= 1e-8, "fast {fast} naive {naive}");
}

#[test]
fn fast_matches_naive_dense() {
    for seed in 0..4 {
        check_fast_vs_naive(&dense_instance(seed, 30, 4), WeightKind::Jive, 0.1 * seed as f64);
    }
}

#[test]
fn fast_matches_naive_judges() {
    check_fast_vs_naive(&judge_instance(11, &[5, 4, 6, 5]), WeightKind::Jive, 0.0);
    check_fast_vs_naive(&judge_instance(12, &[5, 5, 5, 5]), WeightKind::Jive, 0.3);
}

#[test]
fn one_judge_block_of_five() {
    // n = 20 with a single judge of five and the rest in singleton-free groups.
    check_fast_vs_naive(&judge_instance(5, &[5, 7, 8]), WeightKind::Jive, 0.0);
}

#[test]
fn fast_matches_naive_with_covariates() {
    let ds = covariate_instance(3, 28, 3);
    check_fast_vs_naive(&ds, WeightKind::Jive, -0.2);
    check_fast_vs_naive(&ds, WeightKind::Ujive, 0.4);
    check_fast_vs_naive(&ds, WeightKind::Sive, 0.0);
}

#[test]
fn fast_matches_naive_saturated() {
    let ds = saturated_instance(4, 4, 4);
    check_fast_vs_naive(&ds, WeightKind::Ujive, 0.25);
    check_fast_vs_naive(&ds, WeightKind::Jive, 0.25);
}

#[test]
fn exchangeable_path_matches_general() {
    let ds = judge_instance(21, &[6, 9, 12, 30]);
    let ws = design::build_weights(&ds, WeightKind::Jive).unwrap();
    let e: Vec<Lin> = ds.y.iter().zip(&ds.x).map(|(y, x)| Lin::new(*y, -*x)).collect();
    let fast = lv::l3o_kernel(&ws, &e, &ds.x, L3oOptions::default()).unwrap();
    let general = lv::l3o_kernel(
        &ws,
        &e,
        &ds.x,
        L3oOptions { exchangeable: false, ..Default::default() },
    )
    .unwrap();
    for t in 0..5 {
        let (a, b) = (fast.terms[t], general.terms[t]);
        let scale = b.q0.abs() + b.q1.abs() + b.q2.abs() + 1e-12;
        let d = (a.q0 - b.q0).abs() + (a.q1 - b.q1).abs() + (a.q2 - b.q2).abs();
        assert!(d <= 1e-9 * scale, "term {t}: {a:?} vs {b:?}");
    }
}

#[test]
fn block_and_dense_paths_agree() {
    let ds = judge_instance(8, &[5, 6, 4]);
    let wb = design::build_weights(&ds, WeightKind::Jive).unwrap();
    let wd = design::build_weights_with(&ds, WeightKind::Jive, BuildOptions { force_dense: true }).unwrap();
    assert!(wb.structured && !wd.structured);
    let a = lv::l3o_quadratic(&ds, &wb).unwrap();
    let b = lv::l3o_quadratic(&ds, &wd).unwrap();
    for (u, v) in [(a.b0, b.b0), (a.b1, b.b1), (a.b2, b.b2)] {
        assert!(rel_err(u, v) < 1e-8, "{u} vs {v}");
    }
}

#[test]
fn quadratic_matches_direct_evaluation() {
    let ds = dense_instance(9, 40, 5);
    let ws = design::build_weights(&ds, WeightKind::Jive).unwrap();
    let q = lv::l3o_quadratic(&ds, &ws).unwrap();
    assert!(rel_err(q.b0, lv::l3o_variance_fast(&ds, &ws, 0.0).unwrap()) < 1e-10);
    for b in [-1.7, -0.3, 0.0, 0.8, 2.5] {
        let direct = lv::l3o_variance_fast(&ds, &ws, b).unwrap();
        assert!(rel_err(q.value(b), direct) < 1e-8);
    }
    // Interpolating three evaluations recovers the coefficients.
    let v: Vec<f64> = [-1.0, 0.0, 1.0].iter().map(|b| lv::l3o_variance_fast(&ds, &ws, *b).unwrap()).collect();
    let b0 = v[1];
    let b1 = (v[2] - v[0]) / 2.0;
    let b2 = (v[2] + v[0]) / 2.0 - v[1];
    let scale = q.b0.abs() + q.b1.abs() + q.b2.abs();
    assert!((b0 - q.b0).abs() < 1e-8 * scale);
    assert!((b1 - q.b1).abs() < 1e-8 * scale);
    assert!((b2 - q.b2).abs() < 1e-8 * scale);
}

#[test]
fn zero_regressor_has_no_beta_dependence() {
    let mut ds = dense_instance(10, 25, 3);
    ds.x = vec![0.0; 25];
    let ws = design::build_weights(&ds, WeightKind::Jive).unwrap();
    let q = lv::l3o_quadratic(&ds, &ws).unwrap();
    assert_eq!(q.b1, 0.0);
    assert_eq!(q.b2, 0.0);
}

fn leave_out_inverse(q: &Mat, drop: &[usize]) -> Mat {
    let mut s = q.gram();
    for &l in drop {
        for a in 0..q.cols() {
            for b in 0..q.cols() {
                s[(a, b)] -= q[(l, a)] * q[(l, b)];
            }
        }
    }
    linalg::inverse(&s).unwrap()
}

#[test]
fn pair_kernel_matches_projection_form() {
    let ds = dense_instance(13, 20, 3);
    let ws = design::build_weights(&ds, WeightKind::Jive).unwrap();
    let kern = LeaveOutKernel::new(&ws);
    let q = ds.q_matrix();
    for (i, j, k) in [(0, 1, 2), (3, 7, 11), (19, 4, 8)] {
        let inv = leave_out_inverse(&q, &[i, j]);
        let rhs = -linalg::dot(q.row(i), &inv.matvec(q.row(k)));
        assert!((kern.m_pair(i, k, j) - rhs).abs() < 1e-8);
    }
}

#[test]
fn triple_recursion_matches_projection_form() {
    let ds = dense_instance(14, 22, 3);
    let ws = design::build_weights(&ds, WeightKind::Jive).unwrap();
    let kern = LeaveOutKernel::new(&ws);
    let q = ds.q_matrix();
    for (i, j, k, l) in [(0, 1, 2, 5), (3, 7, 11, 4), (19, 4, 8, 0)] {
        let inv = leave_out_inverse(&q, &[i, j, k]);
        let rhs = -linalg::dot(q.row(i), &inv.matvec(q.row(l)));
        assert!((kern.m_triple(i, l, j, k) - rhs).abs() < 1e-8);
    }
}

#[test]
fn leave_two_out_residual_identity() {
    let ds = dense_instance(15, 24, 4);
    let ws = design::build_weights(&ds, WeightKind::Jive).unwrap();
    let kern = LeaveOutKernel::new(&ws);
    let q = ds.q_matrix();
    let n = ds.n();
    for (i, j) in [(0, 1), (5, 17), (23, 2)] {
        let inv = leave_out_inverse(&q, &[i, j]);
        let mut rhs = q.tr_matvec(&ds.x);
        for &l in &[i, j] {
            for a in 0..q.cols() {
                rhs[a] -= q[(l, a)] * ds.x[l];
            }
        }
        let tau = inv.matvec(&rhs);
        let lhs = ds.x[i] - linalg::dot(q.row(i), &tau);
        let sum: f64 = (0..n).filter(|&k| k != j).map(|k| kern.m_pair(i, k, j) * ds.x[k]).sum();
        assert!((lhs - sum).abs() < 1e-8, "{lhs} vs {sum}");
    }
}

#[test]
fn feasibility_judge_sizes() {
    let five = judge_instance(1, &[5, 5, 5]);
    let rep = lv::feasibility(&five).unwrap();
    assert!(rep.invertible_all_triples);
    assert!(rep.offending_triples.is_empty());
    assert!(rep.min_abs_d_triple > 0.0);

    let four = judge_instance(2, &[4, 4, 4]);
    let rep = lv::feasibility(&four).unwrap();
    assert!(rep.invertible_all_triples);
    // det(I₃ − J/4) = 1 − 3/4.
    assert!((rep.min_abs_d_triple - 0.25).abs() < 1e-12);

    let ids: Vec<i64> = vec![0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2];
    let ds = Dataset::new(vec![0.5; 13], (0..13).map(|i| i as f64).collect(), Encoding::categorical(&ids), None)
        .unwrap();
    let rep = lv::feasibility(&ds).unwrap();
    assert!(!rep.invertible_all_triples);
    assert_eq!(rep.offending_triples, vec![(0, 1, 2)]);
}

#[test]
fn singular_triples_error_or_drop() {
    let ids: Vec<i64> = vec![0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2];
    let mut r = rng(3);
    let ds = Dataset::new(normals(&mut r, 13), normals(&mut r, 13), Encoding::categorical(&ids), None).unwrap();
    let ws = design::build_weights(&ds, WeightKind::Jive).unwrap();
    assert!(matches!(lv::l3o_variance_fast(&ds, &ws, 0.0), Err(Error::TripleSingular { .. })));
    let (_, out) = lv::l3o_quadratic_with(
        &ds,
        &ws,
        L3oOptions { policy: SingularPolicy::Conservative, ..Default::default() },
    )
    .unwrap();
    assert!(out.conservative_applied());
}
