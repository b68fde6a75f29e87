//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Every tolerance is pinned below.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use chemosense::batch::{read_csv, run_batch, BatchOptions, BatchReport, CsvRow, GroupReport, THETA_EQUILIBRIUM_TOL};
use chemosense::diagnostics::{check_duality, check_entropy_floor, check_entropy_monotonicity, DiagRecord};
use chemosense::mesh::{apply_k, apply_l_nu, apply_lambda_nu, laplacian_neumann};
use chemosense::model::jump_rate;
use chemosense::scenario::{preset, preset_names, Scenario};
use chemosense::{run, Field, Grid, ModelSpec, RunStatus, SimState, StepConfig, Stepper};
use common::*;

const ORACLE_TOL: f64 = 1e-8;
const EIGEN_ORDER_MIN: f64 = 1.9;
const MASS_DRIFT_TOL: f64 = 1e-9;
const MASS_STEPS: usize = 1000;
const V_MEAN_LAW_TOL: f64 = 5e-3;
const GROWTH_FACTOR_MAX: f64 = 10.0;
const ENTROPY_RATIO_MIN: f64 = 1.5;
/// Allowance for `E(t) ≤ E(0)` on the refined run, relative to `|E(0)|`.
const ENTROPY_RISE_TOL: f64 = 1e-10;
const PE_V_MEAN_TOL: f64 = 1e-9;

struct Outcome {
    id: u32,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn main() {
    let start = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let batch = all_presets();
    let first = run_batch(
        &batch,
        &BatchOptions {
            out: Some(dir.path().join("a")),
            parallel: 0,
            strict: false,
        },
    )
    .expect("preset batch runs");

    let outcomes = vec![
        operator_oracles(),
        mass_conservation(),
        v_mean_law(),
        duality_envelope(&first),
        entropy_floor(&first),
        delayed_blowup(&first),
        subcritical_boundedness(&first),
        regularized_convergence(&first),
        theta_family(&first),
        parabolic_elliptic(),
        determinism(&batch, &first, &dir.path().join("b")),
    ];
    let mut failed = 0;
    for o in &outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{:>2}] {}: {}", o.id, o.title, o.detail);
        failed += usize::from(!o.passed);
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        outcomes.len() - failed,
        outcomes.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn all_presets() -> Vec<Scenario> {
    preset_names().flat_map(|n| preset(n).unwrap()).collect()
}

fn records(report: &BatchReport, name: &str) -> Vec<DiagRecord> {
    let r = report.scenario(name).unwrap_or_else(|| panic!("no scenario {name}"));
    read_csv(&r.csv_path()).unwrap().iter().map(CsvRow::to_record).collect()
}

fn max_dt(records: &[DiagRecord]) -> f64 {
    records.iter().map(|r| r.dt_used).fold(0.0, f64::max)
}

// 1 ---------------------------------------------------------------------------

fn operator_oracles() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for g in [Grid::new(1, 1024).unwrap(), Grid::new(2, 32).unwrap()] {
        let f = random_field(&g, 1, 0.0, 2.0);
        worst = worst.max(rel_l2(apply_k(&f).unwrap().values(), &dense_k(&f)));
        let nu = 1e-2;
        let lam = dense_lambda(&f, nu);
        worst = worst.max(rel_l2(apply_lambda_nu(&f, nu).unwrap().values(), &lam));
        let l = if g.dim() == 1 {
            lam
        } else {
            dense_lambda(&Field::new(g, lam), nu)
        };
        worst = worst.max(rel_l2(apply_l_nu(&f, nu).unwrap().values(), &l));

        // Both stepper families: a Laplace-form and a drift-diffusion step.
        let s = SimState::new(0.0, f.clone(), random_field(&g, 2, 0.0, 1.0));
        let dt = 1e-3;
        let ls = ModelSpec::local_sensing(1.0, 1.0).unwrap();
        let a: Vec<f64> = s.v.values().iter().map(|v| (-v).exp()).collect();
        let u_ls = lu_solve(&dense_laplace_system(&g, dt, &a), s.u.values());
        let ks = ModelSpec::minimal_ks(1.0, 1.0).unwrap();
        let u_ks = lu_solve(&dense_sg_system(&g, dt, s.v.values(), None), s.u.values());
        for (model, oracle_u) in [(ls, u_ls), (ks, u_ks)] {
            let next = Stepper::new(&model, g, &StepConfig::fixed(dt, 1.0))
                .unwrap()
                .step(&s, dt)
                .unwrap()
                .state;
            worst = worst.max(rel_l2(next.u.values(), &oracle_u));
            let rhs: Vec<f64> = s.v.values().iter().zip(&oracle_u).map(|(v, u)| v + dt * u).collect();
            let oracle_v = lu_solve(&dense_v_system(&g, dt, 1.0, 1.0), &rhs);
            worst = worst.max(rel_l2(next.v.values(), &oracle_v));
        }
    }
    let mut min_order = f64::INFINITY;
    for dim in [1, 2] {
        let errs: Vec<f64> = [8, 16, 32, 64, 128]
            .iter()
            .map(|&n| {
                let g = Grid::new(dim, n).unwrap();
                let phi = g.sample(|x| (0..dim).map(|k| (PI * x[k]).cos()).product());
                let mu = dim as f64 * PI * PI;
                laplacian_neumann(&phi)
                    .zip_map(&phi, |l, p| l + mu * p)
                    .lp_norm(f64::INFINITY)
            })
            .collect();
        let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        let lo = orders.iter().copied().fold(f64::INFINITY, f64::min);
        notes.push(format!("{dim}D order {lo:.3}"));
        min_order = min_order.min(lo);
    }
    Outcome {
        id: 1,
        title: "operator oracle suite",
        passed: worst <= ORACLE_TOL && min_order >= EIGEN_ORDER_MIN,
        detail: format!(
            "max relative error vs dense LU {worst:.2e} (limit {ORACLE_TOL:e}); {} (min {EIGEN_ORDER_MIN})",
            notes.join(", ")
        ),
    }
}

// 2 ---------------------------------------------------------------------------

fn mass_conservation() -> Outcome {
    let g = Grid::new(2, 16).unwrap();
    let pot = g.sample(|x| (-((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)) / 0.05).exp());
    let models = [
        ModelSpec::local_sensing(1.0, 1.0).unwrap(),
        ModelSpec::minimal_ks(1.0, 1.0).unwrap(),
        ModelSpec::parabolic_elliptic(1.0, 1.0).unwrap(),
        ModelSpec::regularized(1.0, 1.0, 1e-2).unwrap(),
        ModelSpec::theta(1.0, 1.0, 0.5, pot.clone()).unwrap(),
    ];
    let dt = 1e-3;
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, model) in models.iter().enumerate() {
        let u = random_field(&g, 100 + k as u64, 0.0, 4.0);
        let v = match model.kind {
            chemosense::ModelKind::Theta { .. } => pot.clone(),
            _ => random_field(&g, 200 + k as u64, 0.0, 2.0),
        };
        let mut s = SimState::new(0.0, u, v);
        let m0 = s.u.integral();
        let st = Stepper::new(model, g, &StepConfig::fixed(dt, 1.0)).unwrap();
        let mut drift: f64 = 0.0;
        for _ in 0..MASS_STEPS {
            s = st.step(&s, dt).unwrap().state;
            drift = drift.max((s.u.integral() - m0).abs() / m0);
        }
        parts.push(format!("{} {drift:.1e}", model.kind.name()));
        worst = worst.max(drift);
    }
    Outcome {
        id: 2,
        title: "mass conservation",
        passed: worst <= MASS_DRIFT_TOL,
        detail: format!(
            "{MASS_STEPS} steps, relative drift: {} (limit {MASS_DRIFT_TOL:e})",
            parts.join(", ")
        ),
    }
}

// 3 ---------------------------------------------------------------------------

fn v_mean_law() -> Outcome {
    let g = Grid::new(2, 32).unwrap();
    let u = g.sample(|x| 1.0 + 0.5 * (PI * x[0]).cos() * (PI * x[1]).cos());
    let s = SimState::new(0.0, u.map(|x| x / u.integral()), g.constant(0.0));
    let model = ModelSpec::local_sensing(1.0, 1.0).unwrap();
    let r = run(&model, &s, &StepConfig::fixed(1e-3, 1.0), 0.01).unwrap();
    let err = r
        .records
        .iter()
        .map(|rec| (rec.v_mean - (1.0 - (-rec.t).exp())).abs())
        .fold(0.0, f64::max);
    Outcome {
        id: 3,
        title: "mean-of-v law",
        passed: err <= V_MEAN_LAW_TOL && r.records.len() == 101,
        detail: format!(
            "max |v̄ − (1 − e^(−t))| = {err:.3e} over {} samples (limit {V_MEAN_LAW_TOL:e})",
            r.records.len()
        ),
    }
}

// 4 ---------------------------------------------------------------------------

fn duality_envelope(report: &BatchReport) -> Outcome {
    let runs = [
        "subcritical2d",
        "supercritical2d",
        "ks_blowup_pair.local_sensing",
        "dim1_smooth",
        "nu_sweep.reference",
        "nu_sweep.nu_1e-1",
        "nu_sweep.nu_1e-2",
        "nu_sweep.nu_1e-3",
        "nu_sweep.nu_1e-4",
    ];
    let mut ok = true;
    let mut headroom: f64 = f64::INFINITY;
    for name in runs {
        let recs = records(report, name);
        let d = check_duality(&recs, max_dt(&recs));
        ok &= d.passed() && recs.iter().all(|r| r.duality_lhs_cumulative.is_some());
        // Smallest margin in units of the slack, over t > 0.
        for k in 1..recs.len() {
            headroom = headroom.min(d.residuals[k].min(d.envelope_margins[k]) / d.slacks[k]);
        }
    }
    Outcome {
        id: 4,
        title: "duality √t envelope",
        passed: ok,
        detail: format!(
            "{} local-sensing/regularized trajectories, no residual or envelope margin below −slack (min margin/slack {headroom:.3e})",
            runs.len()
        ),
    }
}

// 5 ---------------------------------------------------------------------------

fn entropy_floor(report: &BatchReport) -> Outcome {
    let recs = records(report, "supercritical2d");
    let bad = check_entropy_floor(&recs);
    let margin = recs
        .iter()
        .map(|r| r.entropy - r.entropy_lower_bound)
        .fold(f64::INFINITY, f64::min);
    let finite = recs.iter().all(|r| r.entropy_lower_bound.is_finite());
    Outcome {
        id: 5,
        title: "entropy floor",
        passed: bad.is_empty() && finite && !recs.is_empty(),
        detail: format!(
            "supercritical2d, {} samples, {} below floor, min E − floor = {margin:.4e}",
            recs.len(),
            bad.len()
        ),
    }
}

// 6 ---------------------------------------------------------------------------

fn delayed_blowup(report: &BatchReport) -> Outcome {
    let Some(GroupReport::Comparison(c)) = report
        .groups
        .iter()
        .find(|g| matches!(g, GroupReport::Comparison(c) if c.group == "ks_blowup_pair"))
    else {
        return Outcome {
            id: 6,
            title: "delayed blow-up",
            passed: false,
            detail: "no comparison report".into(),
        };
    };
    let t_end = report.scenario(&c.local_sensing).unwrap().t_end;
    let t_star = match c.ks_status {
        RunStatus::BlowupDetected { t } => t,
        _ => f64::NAN,
    };
    // Same verdicts straight from the CSVs.
    let ls = records(report, &c.local_sensing);
    let ks = records(report, &c.minimal_ks);
    let from_csv = ls.last().map(|r| r.t) == Some(t_end)
        && ks.last().is_some_and(|r| r.t < t_end)
        && check_duality(&ls, max_dt(&ls)).passed()
        && check_entropy_floor(&ls).is_empty();
    Outcome {
        id: 6,
        title: "delayed blow-up",
        passed: c.passed() && t_star < t_end && from_csv,
        detail: format!(
            "minimal KS blowup_detected at t* = {t_star:.5} < T = {t_end} (‖u‖∞ = {:.3e}); local sensing completed with ‖u‖∞ = {:.3e}, envelope {}, floor {}",
            c.ks_final_umax,
            c.ls_final_umax,
            if c.envelope_ok { "ok" } else { "violated" },
            if c.floor_ok { "ok" } else { "violated" }
        ),
    }
}

// 7 ---------------------------------------------------------------------------

fn subcritical_boundedness(report: &BatchReport) -> Outcome {
    let r = report.scenario("subcritical2d").unwrap();
    let recs = records(report, "subcritical2d");
    let u0 = recs[0].linf_u;
    let peak = recs.iter().map(|r| r.linf_u).fold(0.0, f64::max);
    let bounded = r.status == RunStatus::Completed && peak <= GROWTH_FACTOR_MAX * u0;

    // One (dt, h) halving at fixed dt.
    let base = preset("subcritical2d").unwrap().remove(0);
    let at = |n: usize, dt: f64| {
        let mut s = base.clone();
        s.n = n;
        s.step = StepConfig::fixed(dt, s.step.t_end);
        run(
            &s.model_spec().unwrap(),
            &s.initial_state().unwrap(),
            &s.step,
            s.sample_every,
        )
        .unwrap()
        .records
    };
    let coarse = at(base.n, base.step.dt_max);
    let fine = at(2 * base.n, base.step.dt_max / 2.0);
    let mono = check_entropy_monotonicity(&coarse, &fine);
    let e0 = fine[0].entropy;
    let rise = fine.iter().map(|r| r.entropy - e0).fold(f64::NEG_INFINITY, f64::max);
    let no_rise = rise <= ENTROPY_RISE_TOL * e0.abs().max(1.0);
    Outcome {
        id: 7,
        title: "subcritical boundedness",
        passed: bounded && mono.passed && no_rise,
        detail: format!(
            "max ‖u‖∞/‖u₀‖∞ = {:.3} (limit {GROWTH_FACTOR_MAX}); entropy increment rates {:.3e} → {:.3e} (ratio {}, min {ENTROPY_RATIO_MIN}); refined max E(t) − E(0) = {rise:.3e}",
            peak / u0,
            mono.coarse_increment,
            mono.fine_increment,
            if mono.ratio.is_finite() { format!("{:.3}", mono.ratio) } else { "∞, no increase".into() }
        ),
    }
}

// 8 ---------------------------------------------------------------------------

fn regularized_convergence(report: &BatchReport) -> Outcome {
    let Some(GroupReport::Nu(t)) = report.groups.iter().find(|g| matches!(g, GroupReport::Nu(_))) else {
        return Outcome {
            id: 8,
            title: "regularized convergence",
            passed: false,
            detail: "no nu table".into(),
        };
    };
    let expected = [1e-1, 1e-2, 1e-3, 1e-4];
    let nus: Vec<f64> = t.rows.iter().map(|r| r.0).collect();
    let table: Vec<String> = t.rows.iter().map(|(nu, d)| format!("{nu:e}: {d:.4e}")).collect();
    Outcome {
        id: 8,
        title: "regularized convergence",
        passed: t.passed() && nus == expected && t.reference == "nu_sweep.reference",
        detail: format!("‖u_ν(T) − u(T)‖₂ strictly decreasing: {}", table.join(", ")),
    }
}

// 9 ---------------------------------------------------------------------------

fn theta_family(report: &BatchReport) -> Outcome {
    let Some(GroupReport::Theta(t)) = report.groups.iter().find(|g| matches!(g, GroupReport::Theta(_))) else {
        return Outcome {
            id: 9,
            title: "θ-family equilibrium",
            passed: false,
            detail: "no theta table".into(),
        };
    };
    let thetas: Vec<f64> = t.rows.iter().map(|r| r.0).collect();
    let table: Vec<String> = t.rows.iter().map(|(th, d)| format!("θ={th}: {d:.2e}")).collect();
    let h = 1.0 / 128.0;
    let destination_free = [(0.2, -1.0, 3.0), (1.5, 0.0, 0.7), (-0.4, 2.2, -5.0)]
        .iter()
        .all(|&(vi, a, b)| jump_rate(1.0, h, vi, a) == jump_rate(1.0, h, vi, b));
    Outcome {
        id: 9,
        title: "θ-family equilibrium",
        passed: t.passed() && thetas == [0.0, 0.5, 1.0] && destination_free,
        detail: format!(
            "relative ℓ² distance to e^V at T: {} (limit {THETA_EQUILIBRIUM_TOL:e}); θ = 1 jump rate destination-independent: {destination_free}",
            table.join(", ")
        ),
    }
}

// 10 --------------------------------------------------------------------------

fn parabolic_elliptic() -> Outcome {
    let g = Grid::new(2, 16).unwrap();
    let (eps, beta) = (1.0, 2.0);
    let model = ModelSpec::parabolic_elliptic(eps, beta).unwrap();
    let u = random_field(&g, 300, 0.0, 4.0);
    let mut s = SimState::new(0.0, u, g.constant(0.0));
    let m0 = s.mass;
    let dt = 1e-3;
    let st = Stepper::new(&model, g, &StepConfig::fixed(dt, 1.0)).unwrap();
    let (mut v_err, mut drift): (f64, f64) = (0.0, 0.0);
    for _ in 0..MASS_STEPS {
        s = st.step(&s, dt).unwrap().state;
        v_err = v_err.max((s.v_mean() - m0 / beta).abs() / (m0 / beta));
        drift = drift.max((s.u.integral() - m0).abs() / m0);
    }
    let mut sc = preset("supercritical2d").unwrap().remove(0);
    sc.model = chemosense::scenario::ModelChoice::ParabolicElliptic;
    sc.n = 48;
    sc.step.t_end = 0.5;
    let r = run(
        &sc.model_spec().unwrap(),
        &sc.initial_state().unwrap(),
        &sc.step,
        sc.sample_every,
    )
    .unwrap();
    let d = check_duality(&r.records, max_dt(&r.records));
    let completed = r.status == RunStatus::Completed;
    Outcome {
        id: 10,
        title: "parabolic-elliptic variant",
        passed: v_err <= PE_V_MEAN_TOL && drift <= MASS_DRIFT_TOL && d.passed() && completed,
        detail: format!(
            "max relative |v̄ − m/β| = {v_err:.2e} (limit {PE_V_MEAN_TOL:e}), mass drift {drift:.2e} over {MASS_STEPS} steps; duality from the supercritical bump on 48², T = 0.5: {} ({} samples)",
            if d.passed() { "ok" } else { "violated" },
            r.records.len()
        ),
    }
}

// 11 --------------------------------------------------------------------------

fn files_under(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else if p.file_name().is_some_and(|n| n != "summary.txt") {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn determinism(batch: &[Scenario], first: &BatchReport, second_dir: &Path) -> Outcome {
    let second = run_batch(
        batch,
        &BatchOptions {
            out: Some(second_dir.to_path_buf()),
            parallel: 0,
            strict: false,
        },
    )
    .expect("second batch runs");
    let a = files_under(&first.out);
    let b = files_under(&second.out);
    let rel = |root: &Path, p: &Path| p.strip_prefix(root).unwrap().to_path_buf();
    let same_names = a
        .iter()
        .map(|p| rel(&first.out, p))
        .eq(b.iter().map(|p| rel(&second.out, p)));
    let differing: Vec<String> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| fs::read(x).unwrap() != fs::read(y).unwrap())
        .map(|(x, _)| rel(&first.out, x).display().to_string())
        .collect();
    let csvs = a.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
    Outcome {
        id: 11,
        title: "determinism",
        passed: same_names && differing.is_empty() && csvs == batch.len(),
        detail: format!(
            "{} presets rerun: {csvs} CSVs and {} snapshots compared, {} differ",
            preset_names().count(),
            a.len() - csvs,
            differing.len()
        ),
    }
}
