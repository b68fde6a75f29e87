//! Sparse linear algebra for the stencil systems.
//!
//! Two Krylov solvers cover every system the steppers produce:
//!
//! * [`solve_spd`]: Jacobi-preconditioned conjugate gradients for symmetric
//!   systems. With [`SolveOptions::zero_mean`] set it handles the singular
//!   Neumann Laplacian by projecting the right-hand side and every search
//!   direction onto the zero-mean subspace.
//! * [`solve_mmatrix`]: Jacobi-preconditioned BiCGSTAB for the nonsymmetric
//!   M-matrices that come out of the Laplace-form and exponentially fitted
//!   flux discretizations.
//!
//! A converged [`SolveReport`] always refers to the true residual `b - A x`,
//! recomputed from scratch, never the recursively updated one.

/// Compressed-row sparse matrix.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    size: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    /// Builds an operator from per-row `(column, value)` lists. Duplicate
    /// columns within a row are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, symmetric: bool) -> Self {
        let size = rows.len();
        let mut row_ptr = Vec::with_capacity(size + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < size, "column {c} out of range for size {size}");
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            size,
            row_ptr,
            col_idx,
            values,
            symmetric,
        }
    }

    pub fn identity(size: usize) -> Self {
        Self::from_rows((0..size).map(|i| vec![(i, 1.0)]).collect(), true)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates `(column, value)` over one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.size)
            .map(|i| self.row(i).find(|&(c, _)| c == i).map(|(_, v)| v).unwrap_or(0.0))
            .collect()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.size);
        debug_assert_eq!(y.len(), self.size);
        for (i, yi) in y.iter_mut().enumerate() {
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            let mut acc = 0.0;
            for (c, v) in self.col_idx[span.clone()].iter().zip(&self.values[span]) {
                acc += v * x[*c];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.size];
        self.matvec_into(x, &mut y);
        y
    }

    /// Row sums, `A 1`.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.size).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Column sums, `1ᵀ A`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.size];
        for i in 0..self.size {
            for (c, v) in self.row(i) {
                sums[c] += v;
            }
        }
        sums
    }

    /// Sign pattern and weak diagonal dominance (by rows or by columns)
    /// sufficient for the M-matrix property.
    pub fn is_m_matrix(&self) -> bool {
        let mut off_row = vec![0.0; self.size];
        let mut off_col = vec![0.0; self.size];
        let diag = self.diagonal();
        for (i, row_total) in off_row.iter_mut().enumerate() {
            for (c, v) in self.row(i) {
                if c == i {
                    continue;
                }
                if v > 0.0 {
                    return false;
                }
                *row_total -= v;
                off_col[c] -= v;
            }
        }
        let slack = |d: f64| 1e-12 * d.abs().max(1.0);
        let rows_ok = (0..self.size).all(|i| diag[i] > 0.0 && diag[i] + slack(diag[i]) >= off_row[i]);
        let cols_ok = (0..self.size).all(|i| diag[i] > 0.0 && diag[i] + slack(diag[i]) >= off_col[i]);
        rows_ok || cols_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// True relative residual `‖b − A x‖₂ / ‖b‖₂`.
    pub residual_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    /// `None` means `20 · size`.
    pub max_iter: Option<usize>,
    /// Treat the system as the singular Neumann problem: solve on the
    /// zero-mean subspace and return the zero-mean solution.
    pub zero_mean: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            zero_mean: false,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    pub fn zero_mean(mut self) -> Self {
        self.zero_mean = true;
        self
    }

    fn max_iter(&self, size: usize) -> usize {
        self.max_iter.unwrap_or(20 * size.max(1))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn project_mean(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

fn true_residual(a: &SparseOperator, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.matvec(x);
    b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
}

// Restarts after the recursive residual claims convergence but the true one
// disagrees.
const MAX_RESTARTS: usize = 8;

/// Conjugate gradients with diagonal preconditioning.
pub fn solve_spd(a: &SparseOperator, b: &[f64], opts: &SolveOptions) -> (Vec<f64>, SolveReport) {
    let n = a.size();
    assert_eq!(b.len(), n, "right-hand side length does not match operator");
    let mut rhs = b.to_vec();
    if opts.zero_mean {
        project_mean(&mut rhs);
    }
    let b_norm = norm(&rhs);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return (
            x,
            SolveReport {
                iterations: 0,
                residual_norm: 0.0,
                converged: true,
            },
        );
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let max_iter = opts.max_iter(n);
    let mut iterations = 0;
    let mut ap = vec![0.0; n];

    for _ in 0..=MAX_RESTARTS {
        let mut r = true_residual(a, &x, &rhs);
        if opts.zero_mean {
            project_mean(&mut r);
        }
        let rel = norm(&r) / b_norm;
        if rel <= opts.tol {
            return (
                x,
                SolveReport {
                    iterations,
                    residual_norm: rel,
                    converged: true,
                },
            );
        }
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        if opts.zero_mean {
            project_mean(&mut z);
        }
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            iterations += 1;
            a.matvec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 || !pap.is_finite() {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if opts.zero_mean {
                project_mean(&mut r);
            }
            if norm(&r) / b_norm <= opts.tol {
                break;
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            if opts.zero_mean {
                project_mean(&mut z);
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        if opts.zero_mean {
            project_mean(&mut x);
        }
        if iterations >= max_iter {
            break;
        }
    }
    let mut r = true_residual(a, &x, &rhs);
    if opts.zero_mean {
        project_mean(&mut r);
    }
    let rel = norm(&r) / b_norm;
    (
        x,
        SolveReport {
            iterations,
            residual_norm: rel,
            converged: rel <= opts.tol && rel.is_finite(),
        },
    )
}

/// Right-preconditioned BiCGSTAB for nonsymmetric M-matrix systems.
pub fn solve_mmatrix(a: &SparseOperator, b: &[f64], opts: &SolveOptions) -> (Vec<f64>, SolveReport) {
    let n = a.size();
    assert_eq!(b.len(), n, "right-hand side length does not match operator");
    debug_assert!(a.is_m_matrix(), "solve_mmatrix called on a non-M-matrix");
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return (
            x,
            SolveReport {
                iterations: 0,
                residual_norm: 0.0,
                converged: true,
            },
        );
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let max_iter = opts.max_iter(n);
    let mut iterations = 0;

    let mut v = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s_hat = vec![0.0; n];

    for _ in 0..=MAX_RESTARTS {
        let mut r = true_residual(a, &x, b);
        if norm(&r) / b_norm <= opts.tol {
            break;
        }
        let r0 = r.clone();
        let mut p = vec![0.0; n];
        v.iter_mut().for_each(|e| *e = 0.0);
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        while iterations < max_iter {
            iterations += 1;
            let rho_new = dot(&r0, &r);
            if rho_new == 0.0 || !rho_new.is_finite() {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
                p_hat[i] = p[i] * inv_diag[i];
            }
            a.matvec_into(&p_hat, &mut v);
            let r0v = dot(&r0, &v);
            if r0v == 0.0 || !r0v.is_finite() {
                break;
            }
            alpha = rho / r0v;
            // r now holds s = r - alpha v
            for i in 0..n {
                r[i] -= alpha * v[i];
            }
            if norm(&r) / b_norm <= opts.tol {
                for i in 0..n {
                    x[i] += alpha * p_hat[i];
                }
                break;
            }
            for i in 0..n {
                s_hat[i] = r[i] * inv_diag[i];
            }
            a.matvec_into(&s_hat, &mut t);
            let tt = dot(&t, &t);
            if tt == 0.0 || !tt.is_finite() {
                break;
            }
            omega = dot(&t, &r) / tt;
            for i in 0..n {
                x[i] += alpha * p_hat[i] + omega * s_hat[i];
                r[i] -= omega * t[i];
            }
            if norm(&r) / b_norm <= opts.tol || omega == 0.0 {
                break;
            }
        }
        if iterations >= max_iter {
            break;
        }
    }
    let r = true_residual(a, &x, b);
    let rel = norm(&r) / b_norm;
    (
        x,
        SolveReport {
            iterations,
            residual_norm: rel,
            converged: rel <= opts.tol && rel.is_finite(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, off: f64, diag: f64) -> SparseOperator {
        let rows = (0..n)
            .map(|i| {
                let mut row = vec![(i, diag)];
                if i > 0 {
                    row.push((i - 1, off));
                }
                if i + 1 < n {
                    row.push((i + 1, off));
                }
                row
            })
            .collect();
        SparseOperator::from_rows(rows, true)
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let a = SparseOperator::identity(7);
        let b: Vec<f64> = (0..7).map(|i| i as f64 - 2.5).collect();
        let (x, rep) = solve_spd(&a, &b, &SolveOptions::default());
        assert!(rep.converged);
        assert!(rep.iterations <= 1);
        assert_eq!(x, b);
        let (x, rep) = solve_mmatrix(&a, &b, &SolveOptions::default());
        assert!(rep.converged);
        assert!(rep.iterations <= 1);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = tridiag(5, -1.0, 3.0);
        let (x, rep) = solve_spd(&a, &[0.0; 5], &SolveOptions::default());
        assert!(rep.converged);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let a = SparseOperator::from_rows(vec![vec![(0, 1.0), (0, 2.0)], vec![(1, 1.0)]], true);
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.diagonal(), vec![3.0, 1.0]);
    }

    #[test]
    fn m_matrix_flags() {
        assert!(tridiag(4, -1.0, 2.0).is_m_matrix());
        assert!(!tridiag(4, 1.0, 3.0).is_m_matrix());
        assert!(!tridiag(4, -1.0, 1.0).is_m_matrix());
    }

    #[test]
    fn singular_neumann_solution_has_zero_mean() {
        // 1D Neumann Laplacian, rows sum to zero
        let n = 12;
        let rows = (0..n)
            .map(|i| {
                let mut row = Vec::new();
                let mut d = 0.0;
                if i > 0 {
                    row.push((i - 1, -1.0));
                    d += 1.0;
                }
                if i + 1 < n {
                    row.push((i + 1, -1.0));
                    d += 1.0;
                }
                row.push((i, d));
                row
            })
            .collect();
        let a = SparseOperator::from_rows(rows, true);
        assert!(a.row_sums().iter().all(|s| s.abs() < 1e-15));
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.3).collect();
        let (x, rep) = solve_spd(&a, &b, &SolveOptions::with_tol(1e-12).zero_mean());
        assert!(rep.converged, "{rep:?}");
        let mean = x.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-13);
        let bm = b.iter().sum::<f64>() / n as f64;
        let ax = a.matvec(&x);
        for (ai, bi) in ax.iter().zip(&b) {
            assert!((ai - (bi - bm)).abs() < 1e-10);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let a = tridiag(50, -1.0, 2.0);
        let b = vec![1.0; 50];
        let opts = SolveOptions {
            tol: 1e-14,
            max_iter: Some(2),
            zero_mean: false,
        };
        let (_, rep) = solve_spd(&a, &b, &opts);
        assert!(!rep.converged);
        let (_, rep) = solve_mmatrix(&a, &b, &opts);
        assert!(!rep.converged);
    }
}
