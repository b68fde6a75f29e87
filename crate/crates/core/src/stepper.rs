//! Linearly implicit time stepping for all five systems.
//!
//! Every `u`-update has the two-point flux form
//!
//! ```text
//! u_L^{n+1} − u_L^n = −dt/h² Σ_faces (c_L u_L^{n+1} − c_R u_R^{n+1})
//! ```
//!
//! with nonnegative face coefficients: `(a_L, a_R)` with `a = e^{−v}` for
//! the Laplace form, and Scharfetter–Gummel weights `(B(−δ), B(δ))` for the
//! drift-diffusion forms. The implicit matrix is then an M-matrix with unit
//! column sums, so the update is positivity preserving and conservative.
//! After the linear solve the new density is rebuilt as
//! `u^n − dt · D(u*)` from the face fluxes of the solution `u*`, which
//! makes discrete mass conservation independent of the solver tolerance.
//!
//! `v` is advanced by one backward-Euler step of `∂t v = εΔv − βv + f`.

use crate::diagnostics::{DiagRecord, Recorder};
use crate::error::{invalid, Error, Result};
use crate::linsolve::{solve_mmatrix, solve_spd, SolveOptions, SparseOperator};
use crate::mesh::{Field, Grid, ResolventOp};
use crate::model::{ModelKind, ModelSpec, SimState};

/// Negative values above `−NONNEG_BAND · max` are round-off and get clamped.
pub const NONNEG_BAND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOrder {
    /// `u^{n+1}` first (motility at `v^n`), then `v^{n+1}` sourced by `u^{n+1}`.
    UFirst,
    /// `v^{n+1}` first (sourced by `u^n`), then `u^{n+1}` with motility at `v^{n+1}`.
    VFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_end: f64,
    pub order: UpdateOrder,
    /// Explicit `‖u‖_∞` blow-up threshold. Takes precedence over
    /// `blowup_cell_fraction`; with neither set the threshold is `1e6 · m`.
    pub blowup_linf_threshold: Option<f64>,
    /// Threshold as a fraction of `m / h^d`, the value reached when all
    /// mass sits in one cell. The grid-independent `1e6 · m` default is out
    /// of reach on any grid with fewer than a million cells.
    pub blowup_cell_fraction: Option<f64>,
    pub blowup_dt_floor_flag: bool,
    pub solver_tol: f64,
    /// Steps with `‖u^{n+1} − u^n‖₂ / ‖u^n‖₂` above this are retried at `dt/2`.
    pub max_rel_change: f64,
    /// Accepted steps in a row before `dt` grows by [`DT_GROWTH`].
    pub grow_after: usize,
}

pub const DT_GROWTH: f64 = 1.2;

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            dt_init: 1e-3,
            dt_min: 1e-9,
            dt_max: 1e-2,
            t_end: 1.0,
            order: UpdateOrder::UFirst,
            blowup_linf_threshold: None,
            blowup_cell_fraction: None,
            blowup_dt_floor_flag: true,
            solver_tol: 1e-12,
            max_rel_change: 0.1,
            grow_after: 5,
        }
    }
}

impl StepConfig {
    /// A configuration that never changes `dt` (unless a solve fails).
    pub fn fixed(dt: f64, t_end: f64) -> Self {
        Self {
            dt_init: dt,
            dt_min: dt,
            dt_max: dt,
            t_end,
            max_rel_change: f64::INFINITY,
            blowup_dt_floor_flag: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !pos(self.dt_min) || !pos(self.dt_init) || !pos(self.dt_max) {
            return Err(invalid("dt", "dt_min, dt_init and dt_max must be positive"));
        }
        if !(self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(invalid("dt", "need dt_min <= dt_init <= dt_max"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(invalid("t_end", "must be finite and nonnegative"));
        }
        if !pos(self.solver_tol) {
            return Err(invalid("solver_tol", "must be positive"));
        }
        if let Some(th) = self.blowup_linf_threshold {
            if !(th > 0.0) {
                return Err(invalid("blowup_linf_threshold", "must be positive"));
            }
        }
        if let Some(f) = self.blowup_cell_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(invalid("blowup_cell_fraction", "must lie in (0, 1]"));
            }
        }
        if !(self.max_rel_change > 0.0) {
            return Err(invalid("max_rel_change", "must be positive"));
        }
        Ok(())
    }

    pub fn blowup_threshold(&self, mass: f64, grid: &Grid) -> f64 {
        match (self.blowup_linf_threshold, self.blowup_cell_fraction) {
            (Some(th), _) => th,
            (None, Some(f)) => f * mass / grid.cell_volume(),
            (None, None) => 1e6 * mass,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Ok,
    DtReduced,
    BlowupDetected,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SimState,
    pub dt_used: f64,
    pub status: StepStatus,
    /// `2 dt ∫ e^{−v} (u^{n+1})²` with the motility the step used; `None`
    /// for the drift-diffusion systems.
    pub duality_increment: Option<f64>,
    /// Cells clamped from the round-off band to 0.
    pub clamped: usize,
}

/// Exponential-fitting weight `B(x) = x / (eᵡ − 1)`, with the series
/// `1 − x/2 + x²/12` near 0.
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - 0.5 * x + x * x / 12.0
    } else {
        x / x.exp_m1()
    }
}

/// Face coefficients `(c_L, c_R)` in [`Grid::for_each_face`] order.
fn laplace_coefficients(grid: &Grid, motility: &[f64]) -> Vec<(f64, f64)> {
    let mut c = Vec::with_capacity(grid.face_count());
    grid.for_each_face(|l, r| c.push((motility[l], motility[r])));
    c
}

/// Scharfetter–Gummel weights for the flux `−(∇u − u∇V)`, each face scaled
/// by `mobility` (arithmetic mean of the two cells) when given.
fn sg_coefficients(grid: &Grid, potential: &[f64], mobility: Option<&[f64]>) -> Vec<(f64, f64)> {
    let mut c = Vec::with_capacity(grid.face_count());
    grid.for_each_face(|l, r| {
        let delta = potential[r] - potential[l];
        let mu = mobility.map_or(1.0, |m| 0.5 * (m[l] + m[r]));
        c.push((mu * bernoulli(-delta), mu * bernoulli(delta)));
    });
    c
}

/// `I + dt · D`, with `D u` the flux divergence for `coeffs`.
fn implicit_flux_matrix(grid: &Grid, coeffs: &[(f64, f64)], dt: f64) -> SparseOperator {
    let s = dt / (grid.h() * grid.h());
    let mut rows: Vec<Vec<(usize, f64)>> = (0..grid.cell_count()).map(|i| vec![(i, 1.0)]).collect();
    let mut k = 0;
    grid.for_each_face(|l, r| {
        let (cl, cr) = coeffs[k];
        k += 1;
        rows[l].push((l, s * cl));
        rows[l].push((r, -s * cr));
        rows[r].push((r, s * cr));
        rows[r].push((l, -s * cl));
    });
    SparseOperator::from_rows(rows, false)
}

/// `D u`: each face flux `(c_L u_L − c_R u_R)/h²` leaves `L` and enters `R`.
fn flux_divergence(grid: &Grid, coeffs: &[(f64, f64)], u: &[f64]) -> Vec<f64> {
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut out = vec![0.0; u.len()];
    let mut k = 0;
    grid.for_each_face(|l, r| {
        let (cl, cr) = coeffs[k];
        k += 1;
        let flux = (cl * u[l] - cr * u[r]) * inv_h2;
        out[l] += flux;
        out[r] -= flux;
    });
    out
}

#[derive(Debug)]
enum Reject {
    Solver(Error),
    Negative { min: f64, max: f64 },
    TooFast(f64),
}

struct Attempt {
    state: SimState,
    duality_increment: Option<f64>,
    clamped: usize,
}

/// Clamps values in the round-off band to 0. When `conservative`, the mass
/// added by clamping is removed proportionally from the positive cells.
fn clamp_nonneg(values: &mut [f64], conservative: bool) -> std::result::Result<usize, Reject> {
    let max = values.iter().copied().fold(0.0, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !min.is_finite() || !max.is_finite() {
        return Err(Reject::Negative { min, max });
    }
    if min >= 0.0 {
        return Ok(0);
    }
    if min < -NONNEG_BAND * max {
        return Err(Reject::Negative { min, max });
    }
    let mut added = 0.0;
    let mut count = 0;
    for x in values.iter_mut() {
        if *x < 0.0 {
            added -= *x;
            *x = 0.0;
            count += 1;
        }
    }
    if conservative && added > 0.0 {
        let total: f64 = values.iter().sum();
        if total > 0.0 {
            let f = 1.0 - added / total;
            values.iter_mut().for_each(|x| *x *= f);
        }
    }
    Ok(count)
}

fn rel_l2_change(new: &[f64], old: &[f64]) -> f64 {
    let num: f64 = new.iter().zip(old).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = old.iter().map(|b| b * b).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Advances one model on one grid; holds the assembled operators.
#[derive(Debug, Clone)]
pub struct Stepper {
    model: ModelSpec,
    grid: Grid,
    config: StepConfig,
    resolvent: Option<ResolventOp>,
    theta_mobility: Option<Vec<f64>>,
}

impl Stepper {
    pub fn new(model: &ModelSpec, grid: Grid, config: &StepConfig) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        let resolvent = match model.kind {
            ModelKind::Regularized { nu } => Some(ResolventOp::new(grid, nu)?.with_tol(config.solver_tol)),
            _ => None,
        };
        let theta_mobility = match &model.kind {
            ModelKind::Theta { theta, potential } => {
                if *potential.grid() != grid {
                    return Err(invalid("potential", "potential lives on a different grid"));
                }
                Some(potential.values().iter().map(|&p| (-theta * p).exp()).collect())
            }
            _ => None,
        };
        Ok(Self {
            model: model.clone(),
            grid,
            config: config.clone(),
            resolvent,
            theta_mobility,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn config(&self) -> &StepConfig {
        &self.config
    }

    /// Face coefficients of the `u` update given the chemical field that
    /// drives it (`v^{n+1}` for the parabolic-elliptic model).
    fn u_coefficients(&self, v: &Field) -> Result<Vec<(f64, f64)>> {
        let exp_neg = |f: &Field| -> Vec<f64> { f.values().iter().map(|&x| crate::model::motility(x)).collect() };
        Ok(match &self.model.kind {
            ModelKind::LocalSensing | ModelKind::ParabolicElliptic => laplace_coefficients(&self.grid, &exp_neg(v)),
            ModelKind::Regularized { .. } => {
                let lv = self
                    .resolvent
                    .as_ref()
                    .expect("regularized model without resolvent")
                    .apply_l(v)?;
                laplace_coefficients(&self.grid, &exp_neg(&lv))
            }
            ModelKind::MinimalKs => sg_coefficients(&self.grid, v.values(), None),
            ModelKind::Theta { potential, .. } => {
                sg_coefficients(&self.grid, potential.values(), self.theta_mobility.as_deref())
            }
        })
    }

    /// The implicit `u` system `I + dt·D`: column sums 1, an M-matrix.
    pub fn u_matrix(&self, v: &Field, dt: f64) -> Result<SparseOperator> {
        Ok(implicit_flux_matrix(&self.grid, &self.u_coefficients(v)?, dt))
    }

    /// The implicit `v` system `(1 + dt β) I + dt ε (−Δ_h)`.
    pub fn v_matrix(&self, dt: f64) -> SparseOperator {
        self.grid
            .shifted_laplacian(1.0 + dt * self.model.beta, dt * self.model.epsilon)
    }

    fn solver_error(iterations: usize, residual: f64) -> Reject {
        Reject::Solver(Error::NotConverged { iterations, residual })
    }

    /// One backward-Euler `v` step with source `f`.
    fn v_update(&self, v: &Field, source: &Field, dt: f64) -> std::result::Result<(Field, usize), Reject> {
        let a = self.v_matrix(dt);
        let rhs: Vec<f64> = v
            .values()
            .iter()
            .zip(source.values())
            .map(|(vi, fi)| vi + dt * fi)
            .collect();
        let (mut x, rep) = solve_spd(&a, &rhs, &SolveOptions::with_tol(self.config.solver_tol));
        if !rep.converged {
            return Err(Self::solver_error(rep.iterations, rep.residual_norm));
        }
        let clamped = clamp_nonneg(&mut x, false)?;
        Ok((Field::new(self.grid, x), clamped))
    }

    /// Elliptic `v`: `(ε(−Δ_h) + β) v = u`.
    fn v_elliptic(&self, u: &Field) -> std::result::Result<(Field, usize), Reject> {
        let a = self.grid.shifted_laplacian(self.model.beta, self.model.epsilon);
        let (mut x, rep) = solve_spd(&a, u.values(), &SolveOptions::with_tol(self.config.solver_tol));
        if !rep.converged {
            return Err(Self::solver_error(rep.iterations, rep.residual_norm));
        }
        let clamped = clamp_nonneg(&mut x, false)?;
        Ok((Field::new(self.grid, x), clamped))
    }

    /// Implicit two-point-flux `u` step.
    fn u_update(&self, u: &Field, coeffs: &[(f64, f64)], dt: f64) -> std::result::Result<(Field, usize), Reject> {
        let a = implicit_flux_matrix(&self.grid, coeffs, dt);
        let (star, rep) = solve_mmatrix(&a, u.values(), &SolveOptions::with_tol(self.config.solver_tol));
        if !rep.converged {
            return Err(Self::solver_error(rep.iterations, rep.residual_norm));
        }
        let div = flux_divergence(&self.grid, coeffs, &star);
        let mut next: Vec<f64> = u.values().iter().zip(&div).map(|(ui, di)| ui - dt * di).collect();
        let clamped = clamp_nonneg(&mut next, true)?;
        Ok((Field::new(self.grid, next), clamped))
    }

    fn l_nu(&self, f: &Field) -> std::result::Result<Field, Reject> {
        self.resolvent
            .as_ref()
            .expect("regularized model without resolvent")
            .apply_l(f)
            .map_err(Reject::Solver)
    }

    fn duality_increment(u: &Field, motility: &[f64], dt: f64) -> f64 {
        let w = u.grid().cell_volume();
        2.0 * dt * w * u.values().iter().zip(motility).map(|(ui, a)| a * ui * ui).sum::<f64>()
    }

    fn laplace_step(
        &self,
        s: &SimState,
        dt: f64,
        motility_of: impl Fn(&Field) -> std::result::Result<Vec<f64>, Reject>,
        source_of: impl Fn(&Field) -> std::result::Result<Field, Reject>,
    ) -> std::result::Result<Attempt, Reject> {
        match self.config.order {
            UpdateOrder::UFirst => {
                let a = motility_of(&s.v)?;
                let (u, c1) = self.u_update(&s.u, &laplace_coefficients(&self.grid, &a), dt)?;
                let (v, c2) = self.v_update(&s.v, &source_of(&u)?, dt)?;
                let inc = Self::duality_increment(&u, &a, dt);
                Ok(self.attempt(s, dt, u, v, Some(inc), c1 + c2))
            }
            UpdateOrder::VFirst => {
                let (v, c2) = self.v_update(&s.v, &source_of(&s.u)?, dt)?;
                let a = motility_of(&v)?;
                let (u, c1) = self.u_update(&s.u, &laplace_coefficients(&self.grid, &a), dt)?;
                let inc = Self::duality_increment(&u, &a, dt);
                Ok(self.attempt(s, dt, u, v, Some(inc), c1 + c2))
            }
        }
    }

    fn attempt(&self, s: &SimState, dt: f64, u: Field, v: Field, inc: Option<f64>, clamped: usize) -> Attempt {
        Attempt {
            state: SimState {
                t: s.t + dt,
                u,
                v,
                mass: s.mass,
            },
            duality_increment: inc,
            clamped,
        }
    }

    fn try_step(&self, s: &SimState, dt: f64) -> std::result::Result<Attempt, Reject> {
        let exp_neg = |f: &Field| -> std::result::Result<Vec<f64>, Reject> {
            Ok(f.values().iter().map(|&x| crate::model::motility(x)).collect())
        };
        let attempt = match &self.model.kind {
            ModelKind::LocalSensing => self.laplace_step(s, dt, exp_neg, |u| Ok(u.clone()))?,
            ModelKind::Regularized { .. } => self.laplace_step(s, dt, |v| exp_neg(&self.l_nu(v)?), |u| self.l_nu(u))?,
            ModelKind::ParabolicElliptic => {
                let (v, c2) = self.v_elliptic(&s.u)?;
                let a = exp_neg(&v)?;
                let (u, c1) = self.u_update(&s.u, &laplace_coefficients(&self.grid, &a), dt)?;
                let inc = Self::duality_increment(&u, &a, dt);
                self.attempt(s, dt, u, v, Some(inc), c1 + c2)
            }
            ModelKind::MinimalKs => match self.config.order {
                UpdateOrder::UFirst => {
                    let coeffs = sg_coefficients(&self.grid, s.v.values(), None);
                    let (u, c1) = self.u_update(&s.u, &coeffs, dt)?;
                    let (v, c2) = self.v_update(&s.v, &u, dt)?;
                    self.attempt(s, dt, u, v, None, c1 + c2)
                }
                UpdateOrder::VFirst => {
                    let (v, c2) = self.v_update(&s.v, &s.u, dt)?;
                    let coeffs = sg_coefficients(&self.grid, v.values(), None);
                    let (u, c1) = self.u_update(&s.u, &coeffs, dt)?;
                    self.attempt(s, dt, u, v, None, c1 + c2)
                }
            },
            ModelKind::Theta { potential, .. } => {
                let coeffs = sg_coefficients(&self.grid, potential.values(), self.theta_mobility.as_deref());
                let (u, c1) = self.u_update(&s.u, &coeffs, dt)?;
                self.attempt(s, dt, u, s.v.clone(), None, c1)
            }
        };
        let change = rel_l2_change(attempt.state.u.values(), s.u.values());
        if change > self.config.max_rel_change {
            return Err(Reject::TooFast(change));
        }
        Ok(attempt)
    }

    /// Advances `s` by `dt`, halving on rejection. Returns
    /// [`StepStatus::BlowupDetected`] (with `s` unchanged) when halving
    /// would go below `dt_min` and the floor flag is set, or with the new
    /// state when `‖u‖_∞` crosses the blow-up threshold.
    pub fn step(&self, s: &SimState, dt: f64) -> Result<StepOutcome> {
        assert_eq!(*s.grid(), self.grid, "state grid does not match stepper grid");
        let floor = self.config.dt_min.min(dt);
        let mut dt_try = dt;
        let mut reduced = false;
        loop {
            match self.try_step(s, dt_try) {
                Ok(a) => {
                    let threshold = self.config.blowup_threshold(s.mass, &self.grid);
                    let status = if a.state.u.lp_norm(f64::INFINITY) > threshold {
                        StepStatus::BlowupDetected
                    } else if reduced {
                        StepStatus::DtReduced
                    } else {
                        StepStatus::Ok
                    };
                    return Ok(StepOutcome {
                        state: a.state,
                        dt_used: dt_try,
                        status,
                        duality_increment: a.duality_increment,
                        clamped: a.clamped,
                    });
                }
                Err(reject) => {
                    match &reject {
                        Reject::TooFast(change) => {
                            log::debug!("t = {:.6e}, dt = {dt_try:.3e}: relative change {change:.3e}", s.t)
                        }
                        other => log::debug!("t = {:.6e}, dt = {dt_try:.3e} rejected: {other:?}", s.t),
                    }
                    if dt_try * 0.5 < floor {
                        if self.config.blowup_dt_floor_flag {
                            return Ok(StepOutcome {
                                state: s.clone(),
                                dt_used: dt_try,
                                status: StepStatus::BlowupDetected,
                                duality_increment: None,
                                clamped: 0,
                            });
                        }
                        return match reject {
                            Reject::Solver(e) => Err(e),
                            Reject::Negative { min, max } => Err(Error::InvalidParameter {
                                name: "dt",
                                reason: format!("negative density {min:.3e} (max {max:.3e}) at the smallest step"),
                            }),
                            Reject::TooFast(_) => self.accept_unchecked(s, dt_try, reduced),
                        };
                    }
                    dt_try *= 0.5;
                    reduced = true;
                }
            }
        }
    }

    fn accept_unchecked(&self, s: &SimState, dt: f64, reduced: bool) -> Result<StepOutcome> {
        let relaxed = Stepper {
            config: StepConfig {
                max_rel_change: f64::INFINITY,
                ..self.config.clone()
            },
            ..self.clone()
        };
        let mut out = relaxed.step(s, dt)?;
        if reduced && out.status == StepStatus::Ok {
            out.status = StepStatus::DtReduced;
        }
        Ok(out)
    }
}

fn single_step(s: &SimState, p: &ModelSpec, c: &StepConfig) -> Result<StepOutcome> {
    Stepper::new(p, *s.grid(), c)?.step(s, c.dt_init)
}

fn expect_kind(p: &ModelSpec, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(invalid("model", format!("stepper called with model {}", p.kind.name())))
    }
}

/// One step of `dt_init` for the local-sensing system.
pub fn step_local_sensing(s: &SimState, p: &ModelSpec, c: &StepConfig) -> Result<StepOutcome> {
    expect_kind(p, p.kind == ModelKind::LocalSensing)?;
    single_step(s, p, c)
}

pub fn step_minimal_ks(s: &SimState, p: &ModelSpec, c: &StepConfig) -> Result<StepOutcome> {
    expect_kind(p, p.kind == ModelKind::MinimalKs)?;
    single_step(s, p, c)
}

pub fn step_parabolic_elliptic(s: &SimState, p: &ModelSpec, c: &StepConfig) -> Result<StepOutcome> {
    expect_kind(p, p.kind == ModelKind::ParabolicElliptic)?;
    single_step(s, p, c)
}

pub fn step_regularized(s: &SimState, p: &ModelSpec, c: &StepConfig) -> Result<StepOutcome> {
    expect_kind(p, matches!(p.kind, ModelKind::Regularized { .. }))?;
    single_step(s, p, c)
}

pub fn step_theta(s: &SimState, p: &ModelSpec, c: &StepConfig) -> Result<StepOutcome> {
    expect_kind(p, matches!(p.kind, ModelKind::Theta { .. }))?;
    single_step(s, p, c)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    BlowupDetected {
        t: f64,
    },
    /// A step failed outright; the trajectory up to the failure is kept.
    Failed(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    pub reduced_steps: usize,
    pub clamped_cells: usize,
    pub dt_max_used: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub records: Vec<DiagRecord>,
    pub final_state: SimState,
    pub status: RunStatus,
    pub stats: RunStats,
}

/// Runs to `t_end`, sampling at every multiple of `sample_every`, at
/// `t_end`, and at the blow-up time if one is detected.
pub fn run(model: &ModelSpec, init: &SimState, config: &StepConfig, sample_every: f64) -> Result<RunResult> {
    run_with(model, init, config, sample_every, |_, _| {})
}

/// [`run`] with a callback invoked at every sample.
pub fn run_with(
    model: &ModelSpec,
    init: &SimState,
    config: &StepConfig,
    sample_every: f64,
    mut on_sample: impl FnMut(&SimState, &DiagRecord),
) -> Result<RunResult> {
    if !(sample_every > 0.0) {
        return Err(invalid("sample_every", "must be positive"));
    }
    let grid = *init.grid();
    let stepper = Stepper::new(model, grid, config)?;
    let mut stats = RunStats::default();
    let mut state = init.clone();
    if config.t_end == 0.0 {
        return Ok(RunResult {
            records: Vec::new(),
            final_state: state,
            status: RunStatus::Completed,
            stats,
        });
    }
    let mut recorder = Recorder::new(model, &grid)?;
    let mut cumulative = model.kind.has_duality().then_some(0.0);
    let mut records = Vec::new();
    let first = recorder.record(&state, cumulative, 0.0)?;
    on_sample(&state, &first);
    records.push(first);

    let t_end = config.t_end;
    let mut dt = config.dt_init;
    let mut streak = 0;
    let mut next_sample = 1usize;
    let mut dt_since_sample: f64 = 0.0;
    let snap = 1e-12 * t_end.max(1.0);

    let status = loop {
        let target = (next_sample as f64 * sample_every).min(t_end);
        let remaining = target - state.t;
        let clipped = remaining < dt;
        let dt_step = if clipped { remaining } else { dt };
        let outcome = match stepper.step(&state, dt_step) {
            Ok(o) => o,
            Err(e) => break RunStatus::Failed(e.to_string()),
        };
        if outcome.status == StepStatus::BlowupDetected && outcome.state.t == state.t {
            break RunStatus::BlowupDetected { t: state.t };
        }
        stats.steps += 1;
        stats.clamped_cells += outcome.clamped;
        stats.dt_max_used = stats.dt_max_used.max(outcome.dt_used);
        dt_since_sample = dt_since_sample.max(outcome.dt_used);
        if let (Some(c), Some(inc)) = (cumulative.as_mut(), outcome.duality_increment) {
            *c += inc;
        }
        state = outcome.state;
        match outcome.status {
            StepStatus::DtReduced => {
                stats.reduced_steps += 1;
                streak = 0;
                dt = outcome.dt_used;
            }
            _ => {
                streak += 1;
                if streak >= config.grow_after {
                    dt = (dt * DT_GROWTH).min(config.dt_max);
                    streak = 0;
                }
            }
        }
        if outcome.status == StepStatus::BlowupDetected {
            break RunStatus::BlowupDetected { t: state.t };
        }
        if (target - state.t).abs() <= snap {
            state.t = target;
            let rec = recorder.record(&state, cumulative, dt_since_sample)?;
            on_sample(&state, &rec);
            records.push(rec);
            dt_since_sample = 0.0;
            next_sample += 1;
            if target >= t_end {
                break RunStatus::Completed;
            }
        }
    };
    if !matches!(status, RunStatus::Completed) && records.last().map(|r| r.t) != Some(state.t) {
        let rec = recorder.record(&state, cumulative, dt_since_sample)?;
        on_sample(&state, &rec);
        records.push(rec);
    }
    Ok(RunResult {
        records,
        final_state: state,
        status,
        stats,
    })
}
