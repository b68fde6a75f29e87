//! Batch execution: per-scenario trajectories on disk, verdicts that can be
//! recomputed from those files, and cross-scenario group reports.
//!
//! Layout under the output directory:
//!
//! ```text
//! <out>/summary.txt
//! <out>/<scenario>/trajectory.csv
//! <out>/<scenario>/snapshot_0000.txt   # "# dim n t", then u row-major
//! ```

use std::fmt::{self, Write as _};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::diagnostics::{check_duality, check_entropy_floor, DiagRecord};
use crate::error::{Error, Result};
use crate::mesh::{Field, Grid};
use crate::scenario::{ModelChoice, Scenario};
use crate::stepper::{run_with, RunStatus};

/// Column order of every trajectory CSV.
pub const CSV_COLUMNS: [&str; 16] = [
    "t",
    "mass",
    "v_mean",
    "entropy",
    "dual_norm_sq",
    "dissipation_fisher",
    "dissipation_v",
    "duality_lhs_cumulative",
    "umax",
    "umin",
    "vmax",
    "l2_u",
    "l4_u",
    "linf_u",
    "entropy_lower_bound",
    "dt_used",
];

/// Relative mass drift allowed by the trajectory checks.
pub const MASS_DRIFT_TOL: f64 = 1e-9;
/// Relative ℓ² distance to `e^V` allowed at the end of a θ-family run.
pub const THETA_EQUILIBRIUM_TOL: f64 = 1e-3;

// ---------------------------------------------------------------------------
// CSV and snapshots

/// One CSV row, in [`CSV_COLUMNS`] order. Missing values are written as NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow(pub [f64; 16]);

impl CsvRow {
    pub fn from_record(r: &DiagRecord) -> Self {
        CsvRow([
            r.t,
            r.mass,
            r.v_mean,
            r.entropy,
            r.dual_norm_sq,
            r.dissipation_fisher,
            r.dissipation_v,
            r.duality_lhs_cumulative.unwrap_or(f64::NAN),
            r.umax,
            r.umin,
            r.vmax,
            r.l2_u,
            r.l4_u,
            r.linf_u,
            r.entropy_lower_bound,
            r.dt_used,
        ])
    }

    pub fn get(&self, column: &str) -> f64 {
        let k = CSV_COLUMNS
            .iter()
            .position(|c| *c == column)
            .unwrap_or_else(|| panic!("no CSV column `{column}`"));
        self.0[k]
    }

    /// The subset of a [`DiagRecord`] that the CSV carries. Fields absent
    /// from the schema are NaN.
    pub fn to_record(&self) -> DiagRecord {
        let c = |k: usize| self.0[k];
        DiagRecord {
            t: c(0),
            mass: c(1),
            v_mean: c(2),
            entropy: c(3),
            entropy_nu: None,
            dual_norm_sq: c(4),
            dissipation_fisher: c(5),
            dissipation_v: c(6),
            duality_lhs_cumulative: (!c(7).is_nan()).then_some(c(7)),
            umax: c(8),
            umin: c(9),
            vmax: c(10),
            l1_u: f64::NAN,
            l2_u: c(11),
            l4_u: c(12),
            linf_u: c(13),
            entropy_lower_bound: c(14),
            dt_used: c(15),
        }
    }
}

pub fn write_csv(path: &Path, records: &[DiagRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", CSV_COLUMNS.join(","))?;
    for r in records {
        let row = CsvRow::from_record(r);
        let line: Vec<String> = row.0.iter().map(|x| format!("{x}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Csv("empty file".into()))?;
    if header.split(',').map(str::trim).ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::Csv(format!("unexpected header `{header}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            let vals: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Csv(format!("row {}: {e}", k + 2)))?;
            let arr: [f64; 16] = vals
                .try_into()
                .map_err(|v: Vec<f64>| Error::Csv(format!("row {}: expected 16 values, got {}", k + 2, v.len())))?;
            Ok(CsvRow(arr))
        })
        .collect()
}

pub fn write_snapshot(path: &Path, u: &Field, t: f64) -> Result<()> {
    let g = u.grid();
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# {} {} {t}", g.dim(), g.n_per_axis())?;
    for x in u.values() {
        writeln!(w, "{x:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a snapshot back into `(field, t)`.
pub fn read_snapshot(path: &Path) -> Result<(Field, f64)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |m: &str| Error::Csv(format!("{}: {m}", path.display()));
    let header = lines.next().ok_or_else(|| bad("empty snapshot"))?;
    let parts: Vec<&str> = header
        .strip_prefix('#')
        .ok_or_else(|| bad("missing `#` header"))?
        .split_whitespace()
        .collect();
    let [dim, n, t] = parts.as_slice() else {
        return Err(bad("header must be `# dim n t`"));
    };
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header"));
    let grid = Grid::new(parse_usize(dim)?, parse_usize(n)?)?;
    let t: f64 = t.parse().map_err(|_| bad("bad time"))?;
    let values: Vec<f64> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|_| bad("bad value")))
        .collect::<Result<_>>()?;
    if values.len() != grid.cell_count() {
        return Err(bad("value count does not match the header"));
    }
    Ok((Field::new(grid, values), t))
}

// ---------------------------------------------------------------------------
// Trajectory verdicts

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Checks that only need the CSV: mass drift, nonnegativity, the duality
/// inequality with its envelope (slack from the largest `dt_used`), and the
/// entropy floor.
pub fn trajectory_verdicts(rows: &[CsvRow]) -> Vec<Verdict> {
    let mut out = Vec::new();
    let Some(first) = rows.first() else {
        out.push(Verdict {
            name: "nonempty",
            passed: false,
            detail: "no samples".into(),
        });
        return out;
    };
    let records: Vec<DiagRecord> = rows.iter().map(CsvRow::to_record).collect();
    let m0 = first.get("mass");
    let drift = records.iter().map(|r| (r.mass - m0).abs() / m0).fold(0.0, f64::max);
    out.push(Verdict {
        name: "mass",
        passed: drift <= MASS_DRIFT_TOL,
        detail: format!("max relative drift {drift:.3e} (limit {MASS_DRIFT_TOL:e})"),
    });
    let umin = records.iter().map(|r| r.umin).fold(f64::INFINITY, f64::min);
    out.push(Verdict {
        name: "nonnegativity",
        passed: umin >= 0.0,
        detail: format!("min u {umin:.3e}"),
    });
    if records.iter().all(|r| r.duality_lhs_cumulative.is_some()) {
        let dt_max = records.iter().map(|r| r.dt_used).fold(0.0, f64::max);
        let d = check_duality(&records, dt_max);
        // The t = 0 sample has zero residual by construction.
        let later = |v: &[f64]| v.iter().skip(1).copied().fold(f64::INFINITY, f64::min);
        out.push(Verdict {
            name: "duality",
            passed: d.passed(),
            detail: format!(
                "min residual for t > 0 {:.3e}, min envelope margin {:.3e}, {} violation(s)",
                later(&d.residuals),
                later(&d.envelope_margins),
                d.violations.len()
            ),
        });
        let monotone = records.windows(2).all(|w| {
            let (a, b) = (
                w[0].duality_lhs_cumulative.unwrap(),
                w[1].duality_lhs_cumulative.unwrap(),
            );
            b >= a
        });
        out.push(Verdict {
            name: "dissipation_monotone",
            passed: monotone,
            detail: "cumulative dissipation nondecreasing".into(),
        });
    }
    if records.iter().any(|r| r.entropy_lower_bound.is_finite()) {
        let bad = check_entropy_floor(&records);
        let margin = records
            .iter()
            .filter(|r| r.entropy_lower_bound.is_finite())
            .map(|r| r.entropy - r.entropy_lower_bound)
            .fold(f64::INFINITY, f64::min);
        out.push(Verdict {
            name: "entropy_floor",
            passed: bad.is_empty(),
            detail: format!("min margin {margin:.6e}, {} violation(s)", bad.len()),
        });
    }
    out
}

/// Re-verifies a stored trajectory.
pub fn check_csv(path: &Path) -> Result<Vec<Verdict>> {
    Ok(trajectory_verdicts(&read_csv(path)?))
}

// ---------------------------------------------------------------------------
// Running

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    /// Overrides every scenario's `output_dir`.
    pub out: Option<PathBuf>,
    /// Worker threads; 0 lets rayon decide, 1 runs sequentially.
    pub parallel: usize,
    /// Blow-up in a scenario that is not part of a comparison also fails.
    pub strict: bool,
}

pub const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub name: String,
    pub group: Option<String>,
    pub dir: PathBuf,
    pub status: RunStatus,
    pub t_end: f64,
    pub final_t: f64,
    pub final_umax: f64,
    pub steps: usize,
    pub verdicts: Vec<Verdict>,
    pub final_u: Option<Field>,
}

impl ScenarioReport {
    pub fn csv_path(&self) -> PathBuf {
        self.dir.join("trajectory.csv")
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

fn status_str(s: &RunStatus) -> String {
    match s {
        RunStatus::Completed => "completed".into(),
        RunStatus::BlowupDetected { t } => format!("blowup_detected at t* = {t}"),
        RunStatus::Failed(m) => format!("failed: {m}"),
    }
}

fn run_one(s: &Scenario, root: &Path) -> ScenarioReport {
    let dir = root.join(&s.name);
    let mut report = ScenarioReport {
        name: s.name.clone(),
        group: s.group.clone(),
        dir: dir.clone(),
        status: RunStatus::Completed,
        t_end: s.step.t_end,
        final_t: 0.0,
        final_umax: f64::NAN,
        steps: 0,
        verdicts: Vec::new(),
        final_u: None,
    };
    let fail = |mut r: ScenarioReport, e: Error| {
        r.status = RunStatus::Failed(e.to_string());
        r.verdicts.push(Verdict {
            name: "run",
            passed: false,
            detail: e.to_string(),
        });
        r
    };
    if let Err(e) = fs::create_dir_all(&dir) {
        return fail(report, e.into());
    }
    let (model, init) = match s.model_spec().and_then(|m| Ok((m, s.initial_state()?))) {
        Ok(x) => x,
        Err(e) => return fail(report, e),
    };
    info!("running {} ({})", s.name, s.model.name());
    let mut sample = 0usize;
    let mut snap_err = None;
    let mut last_written = None;
    let result = run_with(&model, &init, &s.step, s.sample_every, |state, _| {
        if sample == 0 || (s.snapshot_every > 0 && sample.is_multiple_of(s.snapshot_every)) {
            let p = dir.join(format!("snapshot_{sample:04}.txt"));
            if let Err(e) = write_snapshot(&p, &state.u, state.t) {
                snap_err.get_or_insert(e);
            }
            last_written = Some(sample);
        }
        sample += 1;
    });
    let result = match result {
        Ok(r) => r,
        Err(e) => return fail(report, e),
    };
    if let Some(e) = snap_err {
        return fail(report, e);
    }
    // The final state is always on disk.
    let last = sample.saturating_sub(1);
    if last_written != Some(last) {
        if let Err(e) = write_snapshot(
            &dir.join(format!("snapshot_{last:04}.txt")),
            &result.final_state.u,
            result.final_state.t,
        ) {
            return fail(report, e);
        }
    }
    if let Err(e) = write_csv(&report.csv_path(), &result.records) {
        return fail(report, e);
    }
    let rows: Vec<CsvRow> = result.records.iter().map(CsvRow::from_record).collect();
    report.verdicts = trajectory_verdicts(&rows);
    if let RunStatus::Failed(m) = &result.status {
        report.verdicts.push(Verdict {
            name: "run",
            passed: false,
            detail: m.clone(),
        });
    }
    report.status = result.status;
    report.final_t = result.final_state.t;
    report.final_umax = result.final_state.u.max();
    report.steps = result.stats.steps;
    report.final_u = Some(result.final_state.u);
    report
}

// ---------------------------------------------------------------------------
// Group reports

/// Local sensing against minimal Keller-Segel from the same data.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub group: String,
    pub local_sensing: String,
    pub minimal_ks: String,
    pub ls_status: RunStatus,
    pub ks_status: RunStatus,
    pub ls_final_umax: f64,
    pub ks_final_umax: f64,
    pub envelope_ok: bool,
    pub floor_ok: bool,
}

impl ComparisonReport {
    pub fn ks_blew_up(&self) -> bool {
        matches!(self.ks_status, RunStatus::BlowupDetected { .. })
    }

    pub fn ls_completed(&self) -> bool {
        self.ls_status == RunStatus::Completed && self.ls_final_umax.is_finite()
    }

    pub fn passed(&self) -> bool {
        self.ks_blew_up() && self.ls_completed() && self.envelope_ok && self.floor_ok
    }
}

#[derive(Debug, Clone)]
pub struct NuTable {
    pub group: String,
    /// The ν = 0 run of the group, or its smallest-ν run.
    pub reference: String,
    /// `(ν, ‖u_ν(T) − u_ref(T)‖₂)` in batch order.
    pub rows: Vec<(f64, f64)>,
}

impl NuTable {
    /// Distances strictly decrease as ν decreases.
    pub fn passed(&self) -> bool {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));
        !rows.is_empty() && rows.windows(2).all(|w| w[1].1 < w[0].1)
    }
}

#[derive(Debug, Clone)]
pub struct ThetaTable {
    pub group: String,
    /// `(θ, ‖u(T) − u∞‖₂ / ‖u∞‖₂)`.
    pub rows: Vec<(f64, f64)>,
}

impl ThetaTable {
    pub fn passed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.1 <= THETA_EQUILIBRIUM_TOL)
    }
}

#[derive(Debug, Clone)]
pub enum GroupReport {
    Comparison(ComparisonReport),
    Nu(NuTable),
    Theta(ThetaTable),
    /// Grouped scenarios with no cross-run assertion.
    Plain(String),
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        match self {
            GroupReport::Comparison(c) => c.passed(),
            GroupReport::Nu(t) => t.passed(),
            GroupReport::Theta(t) => t.passed(),
            GroupReport::Plain(_) => true,
        }
    }
}

/// `m e^V / ∫ e^V`.
pub fn theta_equilibrium(potential: &Field, mass: f64) -> Field {
    let w = potential.map(f64::exp);
    let z = w.integral();
    w.map(|x| mass * x / z)
}

fn l2_distance(a: &Field, b: &Field) -> f64 {
    a.zip_map(b, |x, y| x - y).lp_norm(2.0)
}

fn verdict_of(r: &ScenarioReport, name: &str) -> bool {
    r.verdicts.iter().filter(|v| v.name == name).all(|v| v.passed)
}

fn group_report(group: &str, members: &[(&Scenario, &ScenarioReport)]) -> GroupReport {
    let find = |pred: fn(&ModelChoice) -> bool| members.iter().find(|(s, _)| pred(&s.model));
    if members
        .iter()
        .all(|(s, _)| matches!(s.model, ModelChoice::Theta { .. }))
    {
        let rows = members
            .iter()
            .map(|(s, r)| {
                let ModelChoice::Theta {
                    theta,
                    potential: Some(p),
                } = &s.model
                else {
                    return (f64::NAN, f64::INFINITY);
                };
                let err = match (&r.final_u, s.grid()) {
                    (Some(u), Ok(g)) => {
                        let eq = theta_equilibrium(&p.field(&g), s.initial.mass);
                        l2_distance(u, &eq) / eq.lp_norm(2.0)
                    }
                    _ => f64::INFINITY,
                };
                (*theta, err)
            })
            .collect();
        return GroupReport::Theta(ThetaTable {
            group: group.into(),
            rows,
        });
    }
    let nu_of = |s: &Scenario| match s.model {
        ModelChoice::Regularized { nu } => Some(nu),
        _ => None,
    };
    if members.iter().any(|(s, _)| nu_of(s).is_some()) {
        // Reference: the ν = 0 run if present, else the smallest ν.
        let reference = find(|m| matches!(m, ModelChoice::LocalSensing)).or_else(|| {
            members
                .iter()
                .filter(|(s, _)| nu_of(s).is_some())
                .min_by(|a, b| nu_of(a.0).unwrap().total_cmp(&nu_of(b.0).unwrap()))
        });
        let (ref_s, ref_r) = reference.expect("group has a regularized member");
        let rows = members
            .iter()
            .filter(|(s, _)| nu_of(s).is_some() && s.name != ref_s.name)
            .map(|(s, r)| {
                let d = match (&r.final_u, &ref_r.final_u) {
                    (Some(a), Some(b)) if a.grid() == b.grid() => l2_distance(a, b),
                    _ => f64::INFINITY,
                };
                (nu_of(s).unwrap(), d)
            })
            .collect();
        return GroupReport::Nu(NuTable {
            group: group.into(),
            reference: ref_s.name.clone(),
            rows,
        });
    }
    if let (Some((_, ls)), Some((_, ks))) = (
        find(|m| matches!(m, ModelChoice::LocalSensing)),
        find(|m| matches!(m, ModelChoice::MinimalKs)),
    ) {
        return GroupReport::Comparison(ComparisonReport {
            group: group.into(),
            local_sensing: ls.name.clone(),
            minimal_ks: ks.name.clone(),
            ls_status: ls.status.clone(),
            ks_status: ks.status.clone(),
            ls_final_umax: ls.final_umax,
            ks_final_umax: ks.final_umax,
            envelope_ok: verdict_of(ls, "duality"),
            floor_ok: verdict_of(ls, "entropy_floor"),
        });
    }
    GroupReport::Plain(group.into())
}

#[derive(Debug, Clone)]
pub struct BatchReport {
    pub out: PathBuf,
    pub scenarios: Vec<ScenarioReport>,
    pub groups: Vec<GroupReport>,
    pub strict: bool,
}

impl BatchReport {
    fn scenario_ok(&self, r: &ScenarioReport) -> bool {
        let blowup_ok = !(self.strict && r.group.is_none() && matches!(r.status, RunStatus::BlowupDetected { .. }));
        r.passed() && blowup_ok
    }

    /// Every verdict and group assertion holds.
    pub fn passed(&self) -> bool {
        self.scenarios.iter().all(|r| self.scenario_ok(r)) && self.groups.iter().all(GroupReport::passed)
    }

    pub fn scenario(&self, name: &str) -> Option<&ScenarioReport> {
        self.scenarios.iter().find(|r| r.name == name)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.scenarios {
            let tag = if self.scenario_ok(r) { "PASS" } else { "FAIL" };
            let _ = writeln!(
                s,
                "[{tag}] {}: {} (t = {}, T = {}, steps = {}, final umax = {:.6e})",
                r.name,
                status_str(&r.status),
                r.final_t,
                r.t_end,
                r.steps,
                r.final_umax
            );
            for v in &r.verdicts {
                let _ = writeln!(s, "    {v}");
            }
        }
        for g in &self.groups {
            let tag = if g.passed() { "PASS" } else { "FAIL" };
            match g {
                GroupReport::Comparison(c) => {
                    let _ = writeln!(s, "[{tag}] comparison {}", c.group);
                    let _ = writeln!(
                        s,
                        "    {}: {} (final umax {:.6e})",
                        c.local_sensing,
                        status_str(&c.ls_status),
                        c.ls_final_umax
                    );
                    let _ = writeln!(
                        s,
                        "    {}: {} (final umax {:.6e})",
                        c.minimal_ks,
                        status_str(&c.ks_status),
                        c.ks_final_umax
                    );
                    let _ = writeln!(
                        s,
                        "    envelope: {}, entropy floor: {}",
                        ok(c.envelope_ok),
                        ok(c.floor_ok)
                    );
                }
                GroupReport::Nu(t) => {
                    let _ = writeln!(
                        s,
                        "[{tag}] nu table {} (‖u_ν(T) − u_ref(T)‖₂, ref {})",
                        t.group, t.reference
                    );
                    for (nu, d) in &t.rows {
                        let _ = writeln!(s, "    nu = {nu:e}: {d:.6e}");
                    }
                }
                GroupReport::Theta(t) => {
                    let _ = writeln!(
                        s,
                        "[{tag}] theta table {} (relative distance to e^V, limit {THETA_EQUILIBRIUM_TOL:e})",
                        t.group
                    );
                    for (th, d) in &t.rows {
                        let _ = writeln!(s, "    theta = {th}: {d:.6e}");
                    }
                }
                GroupReport::Plain(g) => {
                    let _ = writeln!(s, "[{tag}] group {g}");
                }
            }
        }
        let _ = writeln!(s, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "violated"
    }
}

/// Runs every scenario, writes artifacts and the summary, and returns the
/// report. Scenario failures are reported, not returned as errors.
pub fn run_batch(batch: &[Scenario], opts: &BatchOptions) -> Result<BatchReport> {
    let root_of = |s: &Scenario| {
        opts.out
            .clone()
            .or_else(|| s.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    };
    let out = batch.first().map(root_of).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let scenarios: Vec<ScenarioReport> = pool.install(|| batch.par_iter().map(|s| run_one(s, &root_of(s))).collect());

    let mut groups = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for s in batch {
        let Some(g) = s.group.as_deref() else { continue };
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let members: Vec<(&Scenario, &ScenarioReport)> = batch
            .iter()
            .zip(&scenarios)
            .filter(|(s, _)| s.group.as_deref() == Some(g))
            .collect();
        groups.push(group_report(g, &members));
    }
    let report = BatchReport {
        out: out.clone(),
        scenarios,
        groups,
        strict: opts.strict,
    };
    let summary = report.summary();
    fs::write(out.join("summary.txt"), &summary)?;
    if !report.passed() {
        warn!(
            "batch has failing assertions; see {}",
            out.join("summary.txt").display()
        );
    }
    Ok(report)
}
