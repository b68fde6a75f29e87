//! Dense reference assemblies for the oracle tests. Everything here is
//! built from the stencil definitions directly, not from library matrices.
#![allow(dead_code)]

use chemosense::linsolve::SparseOperator;
use chemosense::{Field, Grid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Neighbour pairs `(i, j)` with `i < j` sharing a face.
pub fn neighbour_pairs(g: &Grid) -> Vec<(usize, usize)> {
    let n = g.n_per_axis();
    let mut out = Vec::new();
    if g.dim() == 1 {
        for i in 0..n - 1 {
            out.push((i, i + 1));
        }
    } else {
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                if i + 1 < n {
                    out.push((k, k + 1));
                }
                if j + 1 < n {
                    out.push((k, k + n));
                }
            }
        }
    }
    out
}

/// `−Δ_h` with homogeneous Neumann conditions.
pub fn dense_neg_laplacian(g: &Grid) -> DMatrix<f64> {
    let n = g.cell_count();
    let s = 1.0 / (g.h() * g.h());
    let mut a = DMatrix::zeros(n, n);
    for (i, j) in neighbour_pairs(g) {
        a[(i, i)] += s;
        a[(j, j)] += s;
        a[(i, j)] -= s;
        a[(j, i)] -= s;
    }
    a
}

pub fn to_dense(a: &SparseOperator) -> DMatrix<f64> {
    let n = a.size();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, v) in a.row(i) {
            d[(i, j)] += v;
        }
    }
    d
}

pub fn lu_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    a.clone()
        .lu()
        .solve(&DVector::from_column_slice(b))
        .expect("dense oracle matrix is singular")
        .as_slice()
        .to_vec()
}

pub fn rel_l2(x: &[f64], y: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = y.iter().map(|b| b * b).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Zero-mean solution of `−Δ_h x = f − mean(f)` via the
/// rank-one fix `−Δ_h + 𝟙𝟙ᵀ/N`.
pub fn dense_k(f: &Field) -> Vec<f64> {
    let g = f.grid();
    let n = g.cell_count();
    let a = dense_neg_laplacian(g).add_scalar(1.0 / n as f64);
    let mean = f.values().iter().sum::<f64>() / n as f64;
    let rhs: Vec<f64> = f.values().iter().map(|x| x - mean).collect();
    lu_solve(&a, &rhs)
}

/// `(I + ν(−Δ_h))⁻¹ f`.
pub fn dense_lambda(f: &Field, nu: f64) -> Vec<f64> {
    let g = f.grid();
    let a = DMatrix::identity(g.cell_count(), g.cell_count()) + dense_neg_laplacian(g) * nu;
    lu_solve(&a, f.values())
}

/// `x / (eˣ − 1)` evaluated directly (1 at 0).
pub fn bernoulli_direct(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x / x.exp_m1()
    }
}

/// `I + dt·D` for the face fluxes `(c_ij u_i − c_ji u_j)/h²`, with
/// `coeff(i, j) = (c_ij, c_ji)`.
pub fn dense_flux_system(g: &Grid, dt: f64, coeff: impl Fn(usize, usize) -> (f64, f64)) -> DMatrix<f64> {
    let n = g.cell_count();
    let s = dt / (g.h() * g.h());
    let mut a = DMatrix::identity(n, n);
    for (i, j) in neighbour_pairs(g) {
        let (ci, cj) = coeff(i, j);
        a[(i, i)] += s * ci;
        a[(i, j)] -= s * cj;
        a[(j, j)] += s * cj;
        a[(j, i)] -= s * ci;
    }
    a
}

/// Local-sensing type system with motility `a`.
pub fn dense_laplace_system(g: &Grid, dt: f64, a: &[f64]) -> DMatrix<f64> {
    dense_flux_system(g, dt, |i, j| (a[i], a[j]))
}

/// Drift-diffusion system for `−(∇u − u∇V)`, optionally scaled per face by
/// the arithmetic mean of `mobility`.
pub fn dense_sg_system(g: &Grid, dt: f64, v: &[f64], mobility: Option<&[f64]>) -> DMatrix<f64> {
    dense_flux_system(g, dt, |i, j| {
        let d = v[j] - v[i];
        let mu = mobility.map_or(1.0, |m| 0.5 * (m[i] + m[j]));
        (mu * bernoulli_direct(-d), mu * bernoulli_direct(d))
    })
}

/// `(1 + dt β) I + dt ε (−Δ_h)`.
pub fn dense_v_system(g: &Grid, dt: f64, eps: f64, beta: f64) -> DMatrix<f64> {
    let n = g.cell_count();
    DMatrix::identity(n, n) * (1.0 + dt * beta) + dense_neg_laplacian(g) * (dt * eps)
}

pub fn random_field(g: &Grid, seed: u64, lo: f64, hi: f64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Field::new(*g, (0..g.cell_count()).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Pairwise cell averaging from `2n` to `n` cells per axis.
pub fn restrict(f: &Field) -> Field {
    let g = f.grid();
    let n = g.n_per_axis() / 2;
    let coarse = Grid::new(g.dim(), n).unwrap();
    let fv = f.values();
    let vals = (0..coarse.cell_count())
        .map(|k| {
            if g.dim() == 1 {
                0.5 * (fv[2 * k] + fv[2 * k + 1])
            } else {
                let (i, j) = (k % n, k / n);
                let m = 2 * n;
                0.25 * (fv[2 * j * m + 2 * i]
                    + fv[2 * j * m + 2 * i + 1]
                    + fv[(2 * j + 1) * m + 2 * i]
                    + fv[(2 * j + 1) * m + 2 * i + 1])
            }
        })
        .collect();
    Field::new(coarse, vals)
}
