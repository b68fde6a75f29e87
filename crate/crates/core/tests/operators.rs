mod common;

use std::f64::consts::PI;

use chemosense::mesh::{
    apply_k, apply_k_with, apply_l_nu, apply_lambda_nu, grad_dot, grad_sq_norm, laplacian_neumann, ResolventOp,
};
use chemosense::{Field, Grid};
use common::*;

const ORACLE_TOL: f64 = 1e-8;

fn grids() -> Vec<Grid> {
    vec![
        Grid::new(1, 64).unwrap(),
        Grid::new(1, 1024).unwrap(),
        Grid::new(2, 16).unwrap(),
        Grid::new(2, 32).unwrap(),
    ]
}

#[test]
fn laplacian_matches_dense_stencil() {
    for g in grids() {
        let f = random_field(&g, 1, -1.0, 1.0);
        let dense = dense_neg_laplacian(&g) * nalgebra::DVector::from_column_slice(f.values());
        let lap = laplacian_neumann(&f);
        let neg: Vec<f64> = lap.values().iter().map(|x| -x).collect();
        assert!(rel_l2(&neg, dense.as_slice()) < 1e-13);
        assert!(
            rel_l2(
                to_dense(&g.neg_laplacian()).as_slice(),
                dense_neg_laplacian(&g).as_slice()
            ) < 1e-15
        );
    }
}

#[test]
fn k_matches_dense_lu() {
    for g in grids() {
        let f = random_field(&g, 2, 0.0, 2.0);
        let k = apply_k(&f).unwrap();
        let e = rel_l2(k.values(), &dense_k(&f));
        assert!(e < ORACLE_TOL, "{g:?}: {e:e}");
        assert!(k.mean().abs() < 1e-12);
    }
}

#[test]
fn lambda_and_l_nu_match_dense_lu() {
    for g in grids() {
        let f = random_field(&g, 3, 0.0, 1.0);
        for nu in [1e-1, 1e-3] {
            let l = apply_lambda_nu(&f, nu).unwrap();
            let oracle = dense_lambda(&f, nu);
            assert!(rel_l2(l.values(), &oracle) < ORACLE_TOL);
            let ld = apply_l_nu(&f, nu).unwrap();
            let oracle_d = if g.dim() == 1 {
                oracle
            } else {
                dense_lambda(&Field::new(g, oracle), nu)
            };
            assert!(rel_l2(ld.values(), &oracle_d) < ORACLE_TOL);
        }
    }
}

#[test]
fn k_flags_nonzero_mean_input() {
    let g = Grid::new(2, 8).unwrap();
    let f = g.constant(1.0);
    let r = apply_k_with(&f, &g.neg_laplacian(), 1e-12).unwrap();
    assert!(r.mean_adjusted);
    assert!(r.field.values().iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn resolvent_rejects_nonpositive_nu() {
    let g = Grid::new(1, 8).unwrap();
    assert!(ResolventOp::new(g, 0.0).is_err());
    assert!(ResolventOp::new(g, -1.0).is_err());
}

fn observed_orders(errs: &[f64]) -> Vec<f64> {
    errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Max-norm errors on `n = 8, 16, …, 128` for an operator applied to the
/// eigenfunction `φ` against `λ φ`.
fn eigen_errors(dim: usize, op: impl Fn(&Field) -> Field, lambda: f64) -> Vec<f64> {
    [8, 16, 32, 64, 128]
        .iter()
        .map(|&n| {
            let g = Grid::new(dim, n).unwrap();
            let phi = g.sample(|x| (0..dim).map(|k| (PI * x[k]).cos()).product());
            op(&phi).zip_map(&phi, |a, p| a - lambda * p).lp_norm(f64::INFINITY)
        })
        .collect()
}

#[test]
fn eigenfunctions_converge_at_second_order() {
    for dim in [1, 2] {
        let mu = dim as f64 * PI * PI;
        let cases: Vec<(&str, Vec<f64>)> = vec![
            ("laplacian", eigen_errors(dim, laplacian_neumann, -mu)),
            ("K", eigen_errors(dim, |f| apply_k(f).unwrap(), 1.0 / mu)),
            (
                "Lambda",
                eigen_errors(dim, |f| apply_lambda_nu(f, 0.1).unwrap(), 1.0 / (1.0 + 0.1 * mu)),
            ),
        ];
        for (name, errs) in cases {
            let orders = observed_orders(&errs);
            assert!(
                orders.iter().all(|&p| p >= 1.9),
                "{name} in {dim}D: errors {errs:?}, orders {orders:?}"
            );
        }
    }
}

#[test]
fn gradient_norm_quadrature() {
    for dim in [1, 2] {
        let g = Grid::new(dim, 256).unwrap();
        let phi = g.sample(|x| (0..dim).map(|k| (PI * x[k]).cos()).product());
        // ∫|∇φ|² = d π² / 2^d on the unit cube.
        let exact = dim as f64 * PI * PI / (1 << dim) as f64;
        assert!((grad_sq_norm(&phi) - exact).abs() / exact < 1e-4);
        assert!((grad_dot(&phi, &phi) - grad_sq_norm(&phi)).abs() < 1e-12);
    }
}
