//! Functionals evaluated along trajectories and the a priori inequalities
//! checked against them.
//!
//! The dual norm convention is `‖u − m‖²_{(H¹)'} := ⟨u − m, K(u − m)⟩`,
//! which is also `‖∇_h K(u − m)‖²` by summation by parts.

use crate::error::{invalid, Result};
use crate::linsolve::SparseOperator;
use crate::mesh::{apply_k_with, grad_dot, grad_sq_norm, laplacian_neumann, Field, ResolventOp, OPERATOR_TOL};
use crate::model::{ModelKind, ModelSpec, SimState};

/// Values in `[−SQRT_GUARD, 0)` are treated as 0 under square roots.
const SQRT_GUARD: f64 = 1e-14;

fn x_log_x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn guarded_sqrt(x: f64) -> f64 {
    debug_assert!(x >= -SQRT_GUARD, "sqrt of {x}");
    x.max(0.0).sqrt()
}

/// `∫ (u log u − u + 1)` with `0 log 0 = 0`.
fn boltzmann_part(u: &Field) -> f64 {
    let w = u.grid().cell_volume();
    w * u.values().iter().map(|&x| x_log_x(x) - x + 1.0).sum::<f64>()
}

/// `∫ (ε/2 |∇v|² + β/2 v² − u v + u log u − u + 1)`.
pub fn entropy(u: &Field, v: &Field, epsilon: f64, beta: f64) -> f64 {
    0.5 * epsilon * grad_sq_norm(v) + 0.5 * beta * v.dot(v) - u.dot(v) + boltzmann_part(u)
}

/// Entropy of the regularized system: the cross term becomes `∫ (L_ν u) v`.
pub fn entropy_nu(u: &Field, v: &Field, epsilon: f64, beta: f64, nu: f64) -> Result<f64> {
    let lu = ResolventOp::new(*u.grid(), nu)?.apply_l(u)?;
    Ok(entropy_nu_with(u, &lu, v, epsilon, beta))
}

fn entropy_nu_with(u: &Field, l_nu_u: &Field, v: &Field, epsilon: f64, beta: f64) -> f64 {
    0.5 * epsilon * grad_sq_norm(v) + 0.5 * beta * v.dot(v) - l_nu_u.dot(v) + boltzmann_part(u)
}

/// `‖∇_h K(u − m)‖²`.
pub fn dual_norm_sq(u: &Field, m: f64) -> Result<f64> {
    dual_norm_sq_with(u, m, &u.grid().neg_laplacian())
}

pub(crate) fn dual_norm_sq_with(u: &Field, m: f64, neg_lap: &SparseOperator) -> Result<f64> {
    let centered = u.sub_scalar(m);
    let mean = centered.mean();
    debug_assert!(
        mean.abs() <= 1e-8 * m.abs().max(u.lp_norm(1.0)),
        "dual_norm_sq: integral(u) = {} differs from m = {m}",
        u.integral()
    );
    let k = apply_k_with(&centered, neg_lap, OPERATOR_TOL)?;
    Ok(grad_sq_norm(&k.field))
}

/// `(4 ∫|∇√(e^{−v}u)|², ∫(εΔv + u − βv)²)`.
pub fn dissipation_terms(u: &Field, v: &Field, epsilon: f64, beta: f64) -> (f64, f64) {
    let root = u.zip_map(v, |ui, vi| guarded_sqrt((-vi.max(0.0)).exp() * ui));
    let fisher = 4.0 * grad_sq_norm(&root);
    let lap = laplacian_neumann(v);
    let w = u.grid().cell_volume();
    let resid: f64 = lap
        .values()
        .iter()
        .zip(u.values())
        .zip(v.values())
        .map(|((l, ui), vi)| {
            let r = epsilon * l + ui - beta * vi;
            r * r
        })
        .sum();
    (fisher, w * resid)
}

/// Entropy floor `−C²/ε − m²/β` valid while `‖u − m‖_{(H¹)'} ≤ C`.
pub fn entropy_lower_bound(c: f64, m: f64, epsilon: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(invalid("beta", "entropy lower bound needs beta > 0"));
    }
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    Ok(-c * c / epsilon - m * m / beta)
}

/// The nonnegative remainder in the entropy floor chain:
/// `∫(ε/4|∇v|² + β/4 v²)`.
pub fn entropy_floor_margin(v: &Field, epsilon: f64, beta: f64) -> f64 {
    0.25 * epsilon * grad_sq_norm(v) + 0.25 * beta * v.dot(v)
}

/// `∫(∇_h K(u − m)) · ∇_h v`, the cross term the floor chain bounds.
pub fn dual_pairing(u: &Field, m: f64, v: &Field) -> Result<f64> {
    let k = apply_k_with(&u.sub_scalar(m), &u.grid().neg_laplacian(), OPERATOR_TOL)?;
    Ok(grad_dot(&k.field, v))
}

/// Diagnostics at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRecord {
    pub t: f64,
    pub mass: f64,
    pub v_mean: f64,
    pub entropy: f64,
    /// Only for regularized runs.
    pub entropy_nu: Option<f64>,
    pub dual_norm_sq: f64,
    pub dissipation_fisher: f64,
    pub dissipation_v: f64,
    /// `2 Σ dt ∫ e^{−v} u²` so far; `None` where no duality estimate holds.
    pub duality_lhs_cumulative: Option<f64>,
    pub umax: f64,
    pub umin: f64,
    pub vmax: f64,
    pub l1_u: f64,
    pub l2_u: f64,
    pub l4_u: f64,
    pub linf_u: f64,
    /// `−C(t)²/ε − m²/β` with `C(t)` the running max of the dual norm;
    /// NaN when `β = 0`.
    pub entropy_lower_bound: f64,
    /// Largest step taken since the previous sample.
    pub dt_used: f64,
}

/// Builds [`DiagRecord`]s for one run, tracking the running maximum of the
/// dual norm.
#[derive(Debug, Clone)]
pub struct Recorder {
    model: ModelSpec,
    neg_lap: SparseOperator,
    resolvent: Option<ResolventOp>,
    c_max: f64,
}

impl Recorder {
    pub fn new(model: &ModelSpec, grid: &crate::mesh::Grid) -> Result<Self> {
        let resolvent = match model.kind {
            ModelKind::Regularized { nu } => Some(ResolventOp::new(*grid, nu)?),
            _ => None,
        };
        Ok(Self {
            model: model.clone(),
            neg_lap: grid.neg_laplacian(),
            resolvent,
            c_max: 0.0,
        })
    }

    pub fn record(&mut self, s: &SimState, cumulative: Option<f64>, dt_used: f64) -> Result<DiagRecord> {
        let (eps, beta) = (self.model.epsilon, self.model.beta);
        let (u, v) = (&s.u, &s.v);
        let mass = u.integral();
        let dual = dual_norm_sq_with(u, s.mass, &self.neg_lap)?;
        self.c_max = self.c_max.max(guarded_sqrt(dual));
        let entropy_nu = match &self.resolvent {
            Some(op) => Some(entropy_nu_with(u, &op.apply_l(u)?, v, eps, beta)),
            None => None,
        };
        let (fisher, v_res) = dissipation_terms(u, v, eps, beta);
        let lower = entropy_lower_bound(self.c_max, s.mass, eps, beta).unwrap_or(f64::NAN);
        Ok(DiagRecord {
            t: s.t,
            mass,
            v_mean: v.mean(),
            entropy: entropy(u, v, eps, beta),
            entropy_nu,
            dual_norm_sq: dual,
            dissipation_fisher: fisher,
            dissipation_v: v_res,
            duality_lhs_cumulative: cumulative,
            umax: u.max(),
            umin: u.min(),
            vmax: v.max(),
            l1_u: u.lp_norm(1.0),
            l2_u: u.lp_norm(2.0),
            l4_u: u.lp_norm(4.0),
            linf_u: u.lp_norm(f64::INFINITY),
            entropy_lower_bound: lower,
            dt_used,
        })
    }
}

/// Slack of the discrete duality check, `2 m² · 10 · dt_max · t`.
pub fn duality_slack(m: f64, dt_max: f64, t: f64) -> f64 {
    2.0 * m * m * 10.0 * dt_max * t
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityCheck {
    /// `RHS(t) − LHS(t)` per sample.
    pub residuals: Vec<f64>,
    /// `√(D₀ + 2m²t) − √D(t)` per sample (the √t envelope margin).
    pub envelope_margins: Vec<f64>,
    pub slacks: Vec<f64>,
    /// Samples where either check fell below `−slack`.
    pub violations: Vec<usize>,
}

impl DualityCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn min_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates the duality inequality and its √t envelope on every sample.
/// Samples without a cumulative dissipation term only get the envelope
/// check.
pub fn check_duality(records: &[DiagRecord], dt_max: f64) -> DualityCheck {
    let mut out = DualityCheck {
        residuals: Vec::with_capacity(records.len()),
        envelope_margins: Vec::with_capacity(records.len()),
        slacks: Vec::with_capacity(records.len()),
        violations: Vec::new(),
    };
    let Some(first) = records.first() else {
        return out;
    };
    let (m, d0, t0) = (first.mass, first.dual_norm_sq, first.t);
    for (k, r) in records.iter().enumerate() {
        let t = r.t - t0;
        let rhs = d0 + 2.0 * m * m * t;
        let slack = duality_slack(m, dt_max, t);
        let residual = rhs - (r.dual_norm_sq + r.duality_lhs_cumulative.unwrap_or(0.0));
        let margin = rhs.sqrt() - guarded_sqrt(r.dual_norm_sq);
        if residual < -slack || margin < -slack {
            out.violations.push(k);
        }
        out.residuals.push(residual);
        out.envelope_margins.push(margin);
        out.slacks.push(slack);
    }
    out
}

/// Samples where `entropy < entropy_lower_bound` beyond a round-off
/// allowance of `1e-10 (|E| + |bound|)`.
pub fn check_entropy_floor(records: &[DiagRecord]) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.entropy_lower_bound.is_finite() && {
                let tol = 1e-10 * (r.entropy.abs() + r.entropy_lower_bound.abs());
                r.entropy < r.entropy_lower_bound - tol
            }
        })
        .map(|(k, _)| k)
        .collect()
}

/// Largest positive entropy increase per unit time between consecutive
/// samples (0 if the entropy never increases).
pub fn max_entropy_increment_rate(records: &[DiagRecord]) -> f64 {
    records
        .windows(2)
        .filter(|w| w[1].t > w[0].t)
        .map(|w| ((w[1].entropy - w[0].entropy) / (w[1].t - w[0].t)).max(0.0))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMonotonicity {
    pub coarse_increment: f64,
    pub fine_increment: f64,
    /// `coarse / fine`; infinite when the fine run never increases.
    pub ratio: f64,
    /// `max_t E(t) − E(0)` on the fine run.
    pub fine_rise: f64,
    pub passed: bool,
}

/// Increment rates at or below this count as "no increase".
pub const ENTROPY_INCREMENT_FLOOR: f64 = 1e-10;

/// Compares the worst entropy increase of a run at `(dt, h)` against its
/// refinement at `(dt/2, h/2)`. Passes when the increment shrinks by at
/// least 1.5×, or when neither run shows an increase above
/// [`ENTROPY_INCREMENT_FLOOR`] relative to the entropy scale.
pub fn check_entropy_monotonicity(coarse: &[DiagRecord], fine: &[DiagRecord]) -> EntropyMonotonicity {
    let scale = |rs: &[DiagRecord]| rs.iter().map(|r| r.entropy.abs()).fold(1.0, f64::max);
    let floor_c = ENTROPY_INCREMENT_FLOOR * scale(coarse);
    let floor_f = ENTROPY_INCREMENT_FLOOR * scale(fine);
    let c = max_entropy_increment_rate(coarse);
    let f = max_entropy_increment_rate(fine);
    let c_eff = if c <= floor_c { 0.0 } else { c };
    let f_eff = if f <= floor_f { 0.0 } else { f };
    let ratio = if f_eff == 0.0 { f64::INFINITY } else { c_eff / f_eff };
    let fine_rise = match fine.first() {
        Some(first) => fine.iter().map(|r| r.entropy - first.entropy).fold(0.0, f64::max),
        None => 0.0,
    };
    EntropyMonotonicity {
        coarse_increment: c,
        fine_increment: f,
        ratio,
        fine_rise,
        passed: f_eff == 0.0 || ratio >= 1.5,
    }
}
