//! Scenario descriptions, the INI-style config grammar and named presets.
//!
//! ```text
//! # comment
//! [scenario.flagship]
//! preset = "ks_blowup_pair"     # expand a preset, then apply overrides
//! t_end = 1.5
//!
//! [scenario.custom]
//! model = local_sensing
//! epsilon = 1
//! beta = 1
//! dim = 2
//! n = 64
//! u_profile = gaussian_bump
//! u_center = 0.5, 0.5
//! u_width = 0.1
//! mass = 6.0
//! ```
//!
//! Keys are strict: anything not listed in [`KEYS`] is an error. `nu` and
//! `theta` accept comma lists, which expand the scenario into a sweep.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::mesh::{Field, Grid};
use crate::model::{critical_mass, make_initial, InitialData, ModelKind, ModelSpec, Profile, SimState};
use crate::stepper::{StepConfig, UpdateOrder};

/// Static potential of the θ-family: `amplitude · exp(−|x − c|²/(2 w²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub amplitude: f64,
    pub width: f64,
    pub center: [f64; 2],
}

impl PotentialSpec {
    pub fn field(&self, grid: &Grid) -> Field {
        let (a, w, c) = (self.amplitude, self.width, self.center);
        let dim = grid.dim();
        grid.sample(|x| {
            let r2: f64 = (0..dim).map(|k| (x[k] - c[k]).powi(2)).sum();
            a * (-r2 / (2.0 * w * w)).exp()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelChoice {
    LocalSensing,
    MinimalKs,
    ParabolicElliptic,
    Regularized {
        nu: f64,
    },
    Theta {
        theta: f64,
        potential: Option<PotentialSpec>,
    },
}

impl ModelChoice {
    pub fn name(&self) -> &'static str {
        match self {
            ModelChoice::LocalSensing => "local_sensing",
            ModelChoice::MinimalKs => "minimal_ks",
            ModelChoice::ParabolicElliptic => "parabolic_elliptic",
            ModelChoice::Regularized { .. } => "regularized",
            ModelChoice::Theta { .. } => "theta_family",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Scenarios sharing a group are compared after the batch finishes.
    pub group: Option<String>,
    pub model: ModelChoice,
    pub epsilon: f64,
    pub beta: f64,
    pub dim: usize,
    pub n: usize,
    pub initial: InitialData,
    pub step: StepConfig,
    pub sample_every: f64,
    /// Write a snapshot every this many samples (first and last always).
    pub snapshot_every: usize,
    pub output_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let kind = match &self.model {
            ModelChoice::LocalSensing => ModelKind::LocalSensing,
            ModelChoice::MinimalKs => ModelKind::MinimalKs,
            ModelChoice::ParabolicElliptic => ModelKind::ParabolicElliptic,
            ModelChoice::Regularized { nu } => ModelKind::Regularized { nu: *nu },
            ModelChoice::Theta { theta, potential } => {
                let p = potential.as_ref().ok_or_else(|| {
                    Error::Config(format!("scenario `{}`: theta_family needs a `potential`", self.name))
                })?;
                ModelKind::Theta {
                    theta: *theta,
                    potential: p.field(&self.grid()?),
                }
            }
        };
        ModelSpec::new(kind, self.epsilon, self.beta)
    }

    /// Initial state. For the θ-family `v` carries the static potential.
    pub fn initial_state(&self) -> Result<SimState> {
        let grid = self.grid()?;
        let s = make_initial(&grid, &self.initial)?;
        match &self.model {
            ModelChoice::Theta { potential: Some(p), .. } => Ok(SimState::new(0.0, s.u, p.field(&grid))),
            _ => Ok(s),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |e: Error| Error::Config(format!("scenario `{}`: {e}", self.name));
        self.grid().map_err(ctx)?;
        self.model_spec().map_err(ctx)?;
        self.step.validate().map_err(ctx)?;
        if !(self.sample_every > 0.0) {
            return Err(Error::Config(format!(
                "scenario `{}`: sample_every must be positive",
                self.name
            )));
        }
        self.initial_state().map_err(ctx)?;
        Ok(())
    }

    /// Config text that parses back to this scenario.
    pub fn to_config(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[scenario.{}]", self.name);
        if let Some(g) = &self.group {
            let _ = writeln!(s, "group = \"{g}\"");
        }
        let _ = writeln!(s, "model = {}", self.model.name());
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(s, "beta = {}", self.beta);
        match &self.model {
            ModelChoice::Regularized { nu } => {
                let _ = writeln!(s, "nu = {nu}");
            }
            ModelChoice::Theta { theta, potential } => {
                let _ = writeln!(s, "theta = {theta}");
                if let Some(p) = potential {
                    let _ = writeln!(s, "potential = bump");
                    let _ = writeln!(s, "potential_amplitude = {}", p.amplitude);
                    let _ = writeln!(s, "potential_width = {}", p.width);
                    let _ = writeln!(s, "potential_center = {}, {}", p.center[0], p.center[1]);
                }
            }
            _ => {}
        }
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "mass = {}", self.initial.mass);
        write_profile(&mut s, "u", &self.initial.u);
        write_profile(&mut s, "v", &self.initial.v);
        let _ = writeln!(s, "v_mean = {}", self.initial.v_mean);
        let _ = writeln!(s, "noise = {}", self.initial.noise);
        let _ = writeln!(s, "seed = {}", self.initial.seed);
        let st = &self.step;
        let _ = writeln!(s, "dt_init = {}", st.dt_init);
        let _ = writeln!(s, "dt_min = {}", st.dt_min);
        let _ = writeln!(s, "dt_max = {}", st.dt_max);
        let _ = writeln!(s, "t_end = {}", st.t_end);
        let _ = writeln!(
            s,
            "order = {}",
            match st.order {
                UpdateOrder::UFirst => "u_first",
                UpdateOrder::VFirst => "v_first",
            }
        );
        if let Some(th) = st.blowup_linf_threshold {
            let _ = writeln!(s, "blowup_threshold = {th}");
        }
        if let Some(f) = st.blowup_cell_fraction {
            let _ = writeln!(s, "blowup_cell_fraction = {f}");
        }
        let _ = writeln!(s, "dt_floor_flag = {}", st.blowup_dt_floor_flag);
        let _ = writeln!(s, "solver_tol = {}", st.solver_tol);
        let _ = writeln!(s, "max_rel_change = {}", st.max_rel_change);
        let _ = writeln!(s, "sample_every = {}", self.sample_every);
        let _ = writeln!(s, "snapshot_every = {}", self.snapshot_every);
        if let Some(d) = &self.output_dir {
            let _ = writeln!(s, "output_dir = \"{}\"", d.display());
        }
        s
    }
}

fn write_profile(s: &mut String, prefix: &str, p: &Profile) {
    let _ = writeln!(s, "{prefix}_profile = {}", p.name());
    match *p {
        Profile::Constant => {}
        Profile::GaussianBump { center, width } => {
            let _ = writeln!(s, "{prefix}_center = {}, {}", center[0], center[1]);
            let _ = writeln!(s, "{prefix}_width = {width}");
        }
        Profile::CosinePerturbation {
            baseline,
            amplitude,
            wavenumber,
        } => {
            let _ = writeln!(s, "{prefix}_baseline = {baseline}");
            let _ = writeln!(s, "{prefix}_amplitude = {amplitude}");
            let _ = writeln!(s, "{prefix}_wavenumber = {wavenumber}");
        }
        Profile::Checkerboard { low, high, blocks } => {
            let _ = writeln!(s, "{prefix}_low = {low}");
            let _ = writeln!(s, "{prefix}_high = {high}");
            let _ = writeln!(s, "{prefix}_blocks = {blocks}");
        }
    }
}

// ---------------------------------------------------------------------------
// Presets

pub const PRESETS: &[(&str, &str)] = &[
    (
        "subcritical2d",
        "local sensing, 64², m = 0.5·4πε, cosine perturbation, T = 5",
    ),
    (
        "supercritical2d",
        "local sensing, 96², m = 2·4πε, corner bump of width 0.05, T = 2",
    ),
    (
        "ks_blowup_pair",
        "supercritical2d for local sensing and minimal Keller-Segel side by side",
    ),
    (
        "nu_sweep",
        "regularized system for ν ∈ {1e-1, 1e-2, 1e-3, 1e-4} against the ν = 0 limit",
    ),
    (
        "theta_sweep",
        "θ-family for θ ∈ {0, 0.5, 1} relaxing to the equilibrium e^V",
    ),
    ("dim1_smooth", "1D local sensing from a smooth cosine perturbation"),
];

fn base(name: &str, model: ModelChoice, dim: usize, n: usize, initial: InitialData, step: StepConfig) -> Scenario {
    Scenario {
        name: name.to_string(),
        group: None,
        model,
        epsilon: 1.0,
        beta: 1.0,
        dim,
        n,
        initial,
        step,
        sample_every: 0.05,
        snapshot_every: 0,
        output_dir: None,
    }
}

fn subcritical2d() -> Scenario {
    let eps = 1.0;
    let initial = InitialData::new(
        Profile::CosinePerturbation {
            baseline: 1.0,
            amplitude: 0.5,
            wavenumber: 1,
        },
        0.5 * critical_mass(eps),
    );
    let step = StepConfig {
        dt_init: 1e-3,
        dt_min: 1e-8,
        dt_max: 1e-2,
        t_end: 5.0,
        ..StepConfig::default()
    };
    let mut s = base("subcritical2d", ModelChoice::LocalSensing, 2, 64, initial, step);
    s.sample_every = 0.1;
    s.epsilon = eps;
    s
}

fn supercritical2d() -> Scenario {
    let eps = 1.0;
    let initial = InitialData::new(
        Profile::GaussianBump {
            center: [0.0, 0.0],
            width: 0.05,
        },
        2.0 * critical_mass(eps),
    );
    let step = StepConfig {
        dt_init: 1e-4,
        dt_min: 1e-9,
        dt_max: 1e-2,
        t_end: 2.0,
        blowup_cell_fraction: Some(0.5),
        ..StepConfig::default()
    };
    let mut s = base("supercritical2d", ModelChoice::LocalSensing, 2, 96, initial, step);
    s.epsilon = eps;
    s
}

fn nu_sweep() -> Vec<Scenario> {
    let initial = InitialData::new(
        Profile::GaussianBump {
            center: [0.35, 0.4],
            width: 0.15,
        },
        0.5 * critical_mass(1.0),
    );
    let step = StepConfig::fixed(1e-3, 0.5);
    let mut reference = base("nu_sweep.reference", ModelChoice::LocalSensing, 2, 32, initial, step);
    reference.group = Some("nu_sweep".into());
    let mut out = vec![reference.clone()];
    for (label, nu) in [("1e-1", 1e-1), ("1e-2", 1e-2), ("1e-3", 1e-3), ("1e-4", 1e-4)] {
        let mut s = reference.clone();
        s.name = format!("nu_sweep.nu_{label}");
        s.model = ModelChoice::Regularized { nu };
        out.push(s);
    }
    out
}

fn theta_sweep() -> Vec<Scenario> {
    let potential = PotentialSpec {
        amplitude: 1.0,
        width: 0.15,
        center: [0.5, 0.5],
    };
    let step = StepConfig {
        dt_init: 1e-3,
        dt_min: 1e-9,
        dt_max: 5e-2,
        t_end: 10.0,
        ..StepConfig::default()
    };
    [("0", 0.0), ("0.5", 0.5), ("1", 1.0)]
        .into_iter()
        .map(|(label, theta)| {
            let mut s = base(
                &format!("theta_sweep.theta_{label}"),
                ModelChoice::Theta {
                    theta,
                    potential: Some(potential.clone()),
                },
                1,
                128,
                InitialData::new(Profile::Constant, 1.0),
                step.clone(),
            );
            s.group = Some("theta_sweep".into());
            s.sample_every = 0.5;
            s
        })
        .collect()
}

fn dim1_smooth() -> Scenario {
    let initial = InitialData::new(
        Profile::CosinePerturbation {
            baseline: 1.0,
            amplitude: 0.5,
            wavenumber: 1,
        },
        0.5 * critical_mass(1.0),
    );
    let step = StepConfig {
        dt_init: 1e-3,
        dt_min: 1e-8,
        dt_max: 1e-2,
        t_end: 1.0,
        ..StepConfig::default()
    };
    base("dim1_smooth", ModelChoice::LocalSensing, 1, 256, initial, step)
}

/// Expands a named preset into its scenarios.
pub fn preset(name: &str) -> Result<Vec<Scenario>> {
    Ok(match name {
        "subcritical2d" => vec![subcritical2d()],
        "supercritical2d" => vec![supercritical2d()],
        "ks_blowup_pair" => {
            let mut ls = supercritical2d();
            ls.name = "ks_blowup_pair.local_sensing".into();
            ls.group = Some("ks_blowup_pair".into());
            let mut ks = ls.clone();
            ks.name = "ks_blowup_pair.minimal_ks".into();
            ks.model = ModelChoice::MinimalKs;
            vec![ls, ks]
        }
        "nu_sweep" => nu_sweep(),
        "theta_sweep" => theta_sweep(),
        "dim1_smooth" => vec![dim1_smooth()],
        other => return Err(Error::Config(format!("unknown preset `{other}`"))),
    })
}

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

// ---------------------------------------------------------------------------
// Config parsing

/// Every key a scenario section accepts.
pub const KEYS: &[&str] = &[
    "preset",
    "group",
    "model",
    "epsilon",
    "beta",
    "nu",
    "theta",
    "potential",
    "potential_amplitude",
    "potential_width",
    "potential_center",
    "dim",
    "n",
    "mass",
    "u_profile",
    "u_center",
    "u_width",
    "u_baseline",
    "u_amplitude",
    "u_wavenumber",
    "u_low",
    "u_high",
    "u_blocks",
    "v_profile",
    "v_center",
    "v_width",
    "v_baseline",
    "v_amplitude",
    "v_wavenumber",
    "v_low",
    "v_high",
    "v_blocks",
    "v_mean",
    "noise",
    "seed",
    "dt_init",
    "dt_min",
    "dt_max",
    "t_end",
    "order",
    "blowup_threshold",
    "blowup_cell_fraction",
    "dt_floor_flag",
    "solver_tol",
    "max_rel_change",
    "sample_every",
    "snapshot_every",
    "output_dir",
];

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone)]
struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    if s.len() >= 2 && ((s.starts_with('"') && s.ends_with('"')) || (s.starts_with('\'') && s.ends_with('\''))) {
        &s[1..s.len() - 1]
    } else {
        s
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' | ';' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn lex(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let l = strip_comment(raw).trim();
        if l.is_empty() {
            continue;
        }
        if let Some(rest) = l.strip_prefix('[') {
            let inner = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: "unterminated section header".into(),
                })?
                .trim();
            let name = inner.strip_prefix("scenario.").ok_or_else(|| Error::Parse {
                line,
                msg: format!("section `[{inner}]` must be `[scenario.<name>]`"),
            })?;
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
                return Err(Error::Parse {
                    line,
                    msg: format!("invalid scenario name `{name}`"),
                });
            }
            if !seen.insert(name.to_string()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("duplicate scenario `{name}`"),
                });
            }
            sections.push(Section {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `key = value`, got `{l}`"),
        })?;
        let key = k.trim();
        if !KEYS.contains(&key) {
            return Err(Error::Parse {
                line,
                msg: format!("unknown key `{key}`"),
            });
        }
        let section = sections.last_mut().ok_or_else(|| Error::Parse {
            line,
            msg: format!("key `{key}` outside of a [scenario.<name>] section"),
        })?;
        if section.entries.iter().any(|e| e.key == key) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate key `{key}`"),
            });
        }
        section.entries.push(Entry {
            key: key.to_string(),
            value: unquote(v).to_string(),
            line,
        });
    }
    Ok(sections)
}

fn num(e: &Entry) -> Result<f64> {
    e.value.trim().parse::<f64>().map_err(|_| Error::Parse {
        line: e.line,
        msg: format!("`{}` expects a number, got `{}`", e.key, e.value),
    })
}

fn int(e: &Entry) -> Result<usize> {
    e.value.trim().parse::<usize>().map_err(|_| Error::Parse {
        line: e.line,
        msg: format!("`{}` expects a nonnegative integer, got `{}`", e.key, e.value),
    })
}

fn list(e: &Entry) -> Result<Vec<f64>> {
    e.value
        .split(',')
        .map(|p| {
            p.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: e.line,
                msg: format!("`{}` expects a comma list of numbers, got `{}`", e.key, e.value),
            })
        })
        .collect()
}

fn point(e: &Entry) -> Result<[f64; 2]> {
    let v = list(e)?;
    match v.as_slice() {
        [x] => Ok([*x, 0.0]),
        [x, y] => Ok([*x, *y]),
        _ => Err(Error::Parse {
            line: e.line,
            msg: format!("`{}` expects one or two coordinates", e.key),
        }),
    }
}

fn boolean(e: &Entry) -> Result<bool> {
    match e.value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::Parse {
            line: e.line,
            msg: format!("`{}` expects true/false, got `{other}`", e.key),
        }),
    }
}

/// Updates `profile` in place from the `{prefix}_*` keys of a section.
fn apply_profile(profile: &mut Profile, prefix: &str, entries: &[Entry]) -> Result<()> {
    let get = |suffix: &str| entries.iter().find(|e| e.key == format!("{prefix}_{suffix}"));
    if let Some(e) = get("profile") {
        *profile = match e.value.as_str() {
            "constant" => Profile::Constant,
            "gaussian_bump" => Profile::GaussianBump {
                center: [0.5, 0.5],
                width: 0.1,
            },
            "cosine_perturbation" => Profile::CosinePerturbation {
                baseline: 1.0,
                amplitude: 0.5,
                wavenumber: 1,
            },
            "checkerboard" => Profile::Checkerboard {
                low: 0.5,
                high: 1.5,
                blocks: 4,
            },
            other => {
                return Err(Error::Parse {
                    line: e.line,
                    msg: format!("unknown profile `{other}`"),
                })
            }
        };
    }
    let kind = profile.name();
    let mismatch = |e: &Entry| Error::Parse {
        line: e.line,
        msg: format!("`{}` does not apply to a {kind} profile", e.key),
    };
    for e in entries.iter().filter(|e| e.key.starts_with(&format!("{prefix}_"))) {
        let suffix = &e.key[prefix.len() + 1..];
        match (suffix, &mut *profile) {
            ("profile", _) | ("mean", _) => {}
            ("center", Profile::GaussianBump { center, .. }) => *center = point(e)?,
            ("width", Profile::GaussianBump { width, .. }) => *width = num(e)?,
            ("baseline", Profile::CosinePerturbation { baseline, .. }) => *baseline = num(e)?,
            ("amplitude", Profile::CosinePerturbation { amplitude, .. }) => *amplitude = num(e)?,
            ("wavenumber", Profile::CosinePerturbation { wavenumber, .. }) => *wavenumber = int(e)? as u32,
            ("low", Profile::Checkerboard { low, .. }) => *low = num(e)?,
            ("high", Profile::Checkerboard { high, .. }) => *high = num(e)?,
            ("blocks", Profile::Checkerboard { blocks, .. }) => *blocks = int(e)?,
            _ => return Err(mismatch(e)),
        }
    }
    Ok(())
}

fn default_scenario(name: &str) -> Scenario {
    base(
        name,
        ModelChoice::LocalSensing,
        2,
        64,
        InitialData::new(Profile::Constant, 1.0),
        StepConfig::default(),
    )
}

fn apply_entries(s: &mut Scenario, entries: &[Entry], model_override: Option<ModelChoice>) -> Result<()> {
    if let Some(m) = model_override {
        s.model = m;
    }
    for e in entries {
        match e.key.as_str() {
            "preset" | "model" | "nu" | "theta" => {}
            "group" => s.group = Some(e.value.clone()),
            "epsilon" => s.epsilon = num(e)?,
            "beta" => s.beta = num(e)?,
            "dim" => s.dim = int(e)?,
            "n" => s.n = int(e)?,
            "mass" => s.initial.mass = num(e)?,
            "v_mean" => s.initial.v_mean = num(e)?,
            "noise" => s.initial.noise = num(e)?,
            "seed" => {
                s.initial.seed = e.value.trim().parse::<u64>().map_err(|_| Error::Parse {
                    line: e.line,
                    msg: format!("`seed` expects a 64-bit unsigned integer, got `{}`", e.value),
                })?
            }
            "dt_init" => s.step.dt_init = num(e)?,
            "dt_min" => s.step.dt_min = num(e)?,
            "dt_max" => s.step.dt_max = num(e)?,
            "t_end" => s.step.t_end = num(e)?,
            "order" => {
                s.step.order = match e.value.as_str() {
                    "u_first" => UpdateOrder::UFirst,
                    "v_first" => UpdateOrder::VFirst,
                    other => {
                        return Err(Error::Parse {
                            line: e.line,
                            msg: format!("`order` must be u_first or v_first, got `{other}`"),
                        })
                    }
                }
            }
            "blowup_threshold" => s.step.blowup_linf_threshold = Some(num(e)?),
            "blowup_cell_fraction" => s.step.blowup_cell_fraction = Some(num(e)?),
            "dt_floor_flag" => s.step.blowup_dt_floor_flag = boolean(e)?,
            "solver_tol" => s.step.solver_tol = num(e)?,
            "max_rel_change" => s.step.max_rel_change = num(e)?,
            "sample_every" => s.sample_every = num(e)?,
            "snapshot_every" => s.snapshot_every = int(e)?,
            "output_dir" => s.output_dir = Some(PathBuf::from(&e.value)),
            k if k.starts_with("potential") => {}
            k if k.starts_with("u_") || k.starts_with("v_") => {}
            other => unreachable!("key `{other}` listed in KEYS but not handled"),
        }
    }
    apply_profile(&mut s.initial.u, "u", entries)?;
    apply_profile(&mut s.initial.v, "v", entries)?;
    if let ModelChoice::Theta { potential, .. } = &mut s.model {
        apply_potential(potential, entries)?;
    }
    Ok(())
}

fn apply_potential(potential: &mut Option<PotentialSpec>, entries: &[Entry]) -> Result<()> {
    let get = |k: &str| entries.iter().find(|e| e.key == k);
    if let Some(e) = get("potential") {
        match e.value.as_str() {
            "bump" => {
                potential.get_or_insert(PotentialSpec {
                    amplitude: 1.0,
                    width: 0.15,
                    center: [0.5, 0.5],
                });
            }
            "none" => *potential = None,
            other => {
                return Err(Error::Parse {
                    line: e.line,
                    msg: format!("unknown potential `{other}` (expected `bump`)"),
                })
            }
        }
    }
    for key in ["potential_amplitude", "potential_width", "potential_center"] {
        if let Some(e) = get(key) {
            let p = potential.as_mut().ok_or_else(|| Error::Parse {
                line: e.line,
                msg: format!("`{key}` given without `potential = bump`"),
            })?;
            match key {
                "potential_amplitude" => p.amplitude = num(e)?,
                "potential_width" => p.width = num(e)?,
                _ => p.center = point(e)?,
            }
        }
    }
    Ok(())
}

/// Model choices named by the `model`, `nu` and `theta` keys. A list in
/// `nu` or `theta` yields one choice per value.
/// A model choice and the suffix it adds to the scenario name in a sweep.
type LabeledChoice = (Option<String>, ModelChoice);

fn model_choices(sec: &Section, current: &ModelChoice) -> Result<Option<Vec<LabeledChoice>>> {
    let get = |k: &str| sec.entries.iter().find(|e| e.key == k);
    let model_name = get("model").map(|e| (e.value.as_str(), e.line));
    let nu = get("nu").map(list).transpose()?;
    let theta = get("theta").map(list).transpose()?;
    if model_name.is_none() && nu.is_none() && theta.is_none() {
        return Ok(None);
    }
    let name = model_name.map(|(n, _)| n).unwrap_or(current.name());
    let line = model_name.map(|(_, l)| l).unwrap_or(sec.line);
    let label = |v: f64, count: usize, key: &str| (count > 1).then(|| format!("{key}_{v}"));
    let choices = match name {
        "local_sensing" => vec![(None, ModelChoice::LocalSensing)],
        "minimal_ks" => vec![(None, ModelChoice::MinimalKs)],
        "parabolic_elliptic" => vec![(None, ModelChoice::ParabolicElliptic)],
        "regularized" => {
            let nus = match (nu, current) {
                (Some(v), _) => v,
                (None, ModelChoice::Regularized { nu }) => vec![*nu],
                (None, _) => {
                    return Err(Error::Config(format!(
                        "scenario `{}`: regularized model needs `nu`",
                        sec.name
                    )))
                }
            };
            let count = nus.len();
            nus.into_iter()
                .map(|nu| (label(nu, count, "nu"), ModelChoice::Regularized { nu }))
                .collect()
        }
        "theta_family" => {
            let (thetas, pot) = match current {
                ModelChoice::Theta {
                    theta: current_theta,
                    potential,
                } => (theta.clone().unwrap_or_else(|| vec![*current_theta]), potential.clone()),
                _ => (theta.clone().unwrap_or_else(|| vec![1.0]), None),
            };
            let count = thetas.len();
            thetas
                .into_iter()
                .map(|t| {
                    (
                        label(t, count, "theta"),
                        ModelChoice::Theta {
                            theta: t,
                            potential: pot.clone(),
                        },
                    )
                })
                .collect()
        }
        other => {
            return Err(Error::Parse {
                line,
                msg: format!("unknown model `{other}`"),
            })
        }
    };
    Ok(Some(choices))
}

/// Parses a config into a validated batch of scenarios.
pub fn parse_config(text: &str) -> Result<Vec<Scenario>> {
    let sections = lex(text)?;
    if sections.is_empty() {
        return Err(Error::Config("no scenario".into()));
    }
    let mut batch = Vec::new();
    for sec in &sections {
        let bases: Vec<Scenario> = match sec.entries.iter().find(|e| e.key == "preset") {
            Some(e) => {
                let expanded = preset(&e.value).map_err(|err| Error::Parse {
                    line: e.line,
                    msg: err.to_string(),
                })?;
                let single = expanded.len() == 1;
                expanded
                    .into_iter()
                    .map(|mut s| {
                        s.name = if single {
                            sec.name.clone()
                        } else {
                            let suffix = s.name.split_once('.').map_or(s.name.as_str(), |(_, r)| r).to_string();
                            format!("{}.{}", sec.name, suffix)
                        };
                        if let Some(g) = &mut s.group {
                            *g = sec.name.clone();
                        }
                        s
                    })
                    .collect()
            }
            None => vec![default_scenario(&sec.name)],
        };
        for b in bases {
            match model_choices(sec, &b.model)? {
                None => {
                    let mut s = b;
                    apply_entries(&mut s, &sec.entries, None)?;
                    batch.push(s);
                }
                Some(choices) => {
                    let sweep = choices.len() > 1;
                    for (label, choice) in choices {
                        let mut s = b.clone();
                        if let Some(l) = label {
                            s.name = format!("{}.{l}", b.name);
                        }
                        if sweep && s.group.is_none() {
                            s.group = Some(b.name.clone());
                        }
                        apply_entries(&mut s, &sec.entries, Some(choice))?;
                        batch.push(s);
                    }
                }
            }
        }
    }
    let mut names = BTreeSet::new();
    for s in &batch {
        if !names.insert(s.name.clone()) {
            return Err(Error::Config(format!("scenario name `{}` is not unique", s.name)));
        }
        s.validate()?;
    }
    Ok(batch)
}

/// `0.5 · 4πε` and `2 · 4πε`, for reference in docs and tests.
pub fn preset_masses(epsilon: f64) -> (f64, f64) {
    (2.0 * PI * epsilon, 8.0 * PI * epsilon)
}
