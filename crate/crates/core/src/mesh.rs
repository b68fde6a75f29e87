//! Uniform cell-centered grid on the unit interval or unit square and the
//! discrete Neumann operators built on it.
//!
//! Cells are stored row-major: in 2D the cell `(i, j)` (x-index `i`,
//! y-index `j`) lives at `j * n + i`. Homogeneous Neumann conditions come
//! from mirror ghost cells, which is the same as dropping boundary faces
//! from the two-point flux sums.

use crate::error::{Error, Result};
use crate::linsolve::{solve_spd, SolveOptions, SolveReport, SparseOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, n_per_axis: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if n_per_axis < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 cells per axis, got {n_per_axis}"
            )));
        }
        Ok(Self { dim, n: n_per_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn cell_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// `h^dim`, the quadrature weight of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Cell-center coordinates; the second entry is 0 in 1D.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let h = self.h();
        let i = idx % self.n;
        let j = idx / self.n;
        if self.dim == 1 {
            [(i as f64 + 0.5) * h, 0.0]
        } else {
            [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]
        }
    }

    /// Visits every interior face as `(left, right)` with `left < right`,
    /// x-faces first, then y-faces. The order is fixed; face-indexed
    /// coefficient arrays rely on it.
    pub fn for_each_face(&self, mut f: impl FnMut(usize, usize)) {
        let n = self.n;
        match self.dim {
            1 => {
                for i in 0..n - 1 {
                    f(i, i + 1);
                }
            }
            _ => {
                for j in 0..n {
                    for i in 0..n - 1 {
                        f(j * n + i, j * n + i + 1);
                    }
                }
                for j in 0..n - 1 {
                    for i in 0..n {
                        f(j * n + i, (j + 1) * n + i);
                    }
                }
            }
        }
    }

    pub fn face_count(&self) -> usize {
        self.dim * (self.n - 1) * self.n.pow(self.dim as u32 - 1)
    }

    /// Samples a function of the cell center.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Field {
        let values = (0..self.cell_count()).map(|i| f(self.center(i))).collect();
        Field::new(*self, values)
    }

    pub fn constant(&self, c: f64) -> Field {
        Field::new(*self, vec![c; self.cell_count()])
    }

    /// `−Δ_h` as a sparse matrix (symmetric, rows and columns sum to zero).
    pub fn neg_laplacian(&self) -> SparseOperator {
        self.shifted_laplacian(0.0, 1.0)
    }

    /// `shift · I + scale · (−Δ_h)`.
    pub fn shifted_laplacian(&self, shift: f64, scale: f64) -> SparseOperator {
        let inv_h2 = scale / (self.h() * self.h());
        let mut rows: Vec<Vec<(usize, f64)>> = (0..self.cell_count()).map(|i| vec![(i, shift)]).collect();
        self.for_each_face(|l, r| {
            rows[l].push((l, inv_h2));
            rows[l].push((r, -inv_h2));
            rows[r].push((r, inv_h2));
            rows[r].push((l, -inv_h2));
        });
        SparseOperator::from_rows(rows, true)
    }
}

/// Cell values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            grid.cell_count(),
            "field length does not match grid cell count"
        );
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        grid.constant(0.0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::new(self.grid, self.values.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        self.check_same_grid(other);
        Field::new(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    fn check_same_grid(&self, other: &Field) {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
    }

    /// Midpoint quadrature `h^d Σ f_i`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// Equal to [`integral`](Self::integral) since `|Ω| = 1`.
    pub fn mean(&self) -> f64 {
        self.integral()
    }

    /// Discrete `L²(Ω)` inner product.
    pub fn dot(&self, other: &Field) -> f64 {
        self.check_same_grid(other);
        self.grid.cell_volume() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Discrete `L^p` norm; `p = f64::INFINITY` gives `max |f_i|`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        assert!(p >= 1.0, "lp_norm needs p >= 1");
        if p.is_infinite() {
            return self.values.iter().fold(0.0, |m, v| m.max(v.abs()));
        }
        let s: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        (self.grid.cell_volume() * s).powf(1.0 / p)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sub_scalar(&self, c: f64) -> Field {
        self.map(|x| x - c)
    }
}

/// Default tolerance of the operator inversions (`K`, `Λ_ν`).
pub const OPERATOR_TOL: f64 = 1e-10;

/// Cell-centered `Δ_h` with mirror ghost cells. The result has zero
/// integral up to round-off because every face flux is added to one cell
/// and subtracted from its neighbour.
pub fn laplacian_neumann(f: &Field) -> Field {
    let grid = *f.grid();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let v = f.values();
    let mut out = vec![0.0; v.len()];
    grid.for_each_face(|l, r| {
        let flux = (v[r] - v[l]) * inv_h2;
        out[l] += flux;
        out[r] -= flux;
    });
    Field::new(grid, out)
}

/// Discrete Dirichlet energy `∫ |∇_h f|²`, summed over interior faces.
/// Equals `⟨f, −Δ_h f⟩` exactly.
pub fn grad_sq_norm(f: &Field) -> f64 {
    let grid = *f.grid();
    let v = f.values();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut acc = 0.0;
    grid.for_each_face(|l, r| {
        let d = v[r] - v[l];
        acc += d * d * inv_h2;
    });
    acc * grid.cell_volume()
}

/// Discrete `⟨∇_h f, ∇_h g⟩`.
pub fn grad_dot(f: &Field, g: &Field) -> f64 {
    let grid = *f.grid();
    assert_eq!(grid, *g.grid(), "fields live on different grids");
    let (a, b) = (f.values(), g.values());
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut acc = 0.0;
    grid.for_each_face(|l, r| {
        acc += (a[r] - a[l]) * (b[r] - b[l]) * inv_h2;
    });
    acc * grid.cell_volume()
}

/// Outcome of one application of `K`.
#[derive(Debug, Clone)]
pub struct KSolve {
    pub field: Field,
    /// Set when the input mean exceeded `1e-10 ‖f‖₁` and was subtracted.
    pub mean_adjusted: bool,
    pub report: SolveReport,
}

/// Inverse Neumann Laplacian on zero-mean fields: returns the zero-mean `w`
/// with `−Δ_h w = f − mean(f)`.
pub fn apply_k(f: &Field) -> Result<Field> {
    apply_k_with(f, &f.grid().neg_laplacian(), OPERATOR_TOL).map(|k| k.field)
}

/// [`apply_k`] with a pre-assembled `−Δ_h` and explicit tolerance.
pub fn apply_k_with(f: &Field, neg_lap: &SparseOperator, tol: f64) -> Result<KSolve> {
    let mean = f.mean();
    let l1 = f.lp_norm(1.0);
    let mean_adjusted = mean.abs() > 1e-10 * l1;
    if mean_adjusted {
        log::debug!("apply_k: input mean {mean:.3e} subtracted");
    }
    let (w, report) = solve_spd(neg_lap, f.values(), &SolveOptions::with_tol(tol).zero_mean());
    if !report.converged {
        return Err(Error::NotConverged {
            iterations: report.iterations,
            residual: report.residual_norm,
        });
    }
    Ok(KSolve {
        field: Field::new(*f.grid(), w),
        mean_adjusted,
        report,
    })
}

/// `Λ_ν f = (I − ν Δ_h)^{-1} f`.
pub fn apply_lambda_nu(f: &Field, nu: f64) -> Result<Field> {
    let op = ResolventOp::new(*f.grid(), nu)?;
    op.apply(f)
}

/// `L_ν = Λ_ν^d`.
pub fn apply_l_nu(f: &Field, nu: f64) -> Result<Field> {
    let op = ResolventOp::new(*f.grid(), nu)?;
    op.apply_l(f)
}

/// Assembled `I − ν Δ_h`, reusable across applications.
#[derive(Debug, Clone)]
pub struct ResolventOp {
    grid: Grid,
    nu: f64,
    matrix: SparseOperator,
    tol: f64,
}

impl ResolventOp {
    pub fn new(grid: Grid, nu: f64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(crate::error::invalid("nu", format!("must be positive, got {nu}")));
        }
        Ok(Self {
            grid,
            nu,
            matrix: grid.shifted_laplacian(1.0, nu),
            tol: OPERATOR_TOL,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        assert_eq!(*f.grid(), self.grid, "field grid does not match operator grid");
        let (g, report) = solve_spd(&self.matrix, f.values(), &SolveOptions::with_tol(self.tol));
        if !report.converged {
            return Err(Error::NotConverged {
                iterations: report.iterations,
                residual: report.residual_norm,
            });
        }
        Ok(Field::new(self.grid, g))
    }

    pub fn apply_l(&self, f: &Field) -> Result<Field> {
        let mut out = self.apply(f)?;
        for _ in 1..self.grid.dim() {
            out = self.apply(&out)?;
        }
        Ok(out)
    }
}
