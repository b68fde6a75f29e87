//! The five evolution systems, their parameters, and initial data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::mesh::{Field, Grid};

/// Round-off band below zero that [`motility`] silently clamps.
pub const MOTILITY_CLAMP_BAND: f64 = 1e-13;

/// Cell motility `γ(s) = e^{−s}`.
///
/// Slightly negative inputs (round-off from the solvers) are clamped to 0.
pub fn motility(v: f64) -> f64 {
    debug_assert!(
        v >= -MOTILITY_CLAMP_BAND * v.abs().max(1.0) || v.is_nan(),
        "motility called with negative concentration {v}"
    );
    (-v.max(0.0)).exp()
}

/// Mass threshold `4πε` separating bounded from aggregating dynamics in 2D.
pub fn critical_mass(epsilon: f64) -> f64 {
    4.0 * std::f64::consts::PI * epsilon
}

/// Rate of a nearest-neighbour jump `i → j` of the microscopic model
/// interpolating local (`θ = 1`) and gradient (`θ = 0`) sensing.
pub fn jump_rate(theta: f64, h: f64, v_from: f64, v_to: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&theta));
    debug_assert!(h > 0.0);
    (-theta * v_from - (1.0 - theta) * h * (v_from - v_to)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    /// `∂t u = Δ(e^{−v} u)`, `∂t v = εΔv − βv + u`.
    LocalSensing,
    /// `∂t u = ∇·(∇u − u∇v)`, same `v` equation.
    MinimalKs,
    /// Local sensing with `0 = εΔv − βv + u`.
    ParabolicElliptic,
    /// `∂t u = Δ(e^{−L_ν v} u)`, `∂t v = εΔv − βv + L_ν u`.
    Regularized { nu: f64 },
    /// `∂t u = ∇·(e^{−θV}(∇u − u∇V))` with a static potential `V`.
    Theta { theta: f64, potential: Field },
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::LocalSensing => "local_sensing",
            ModelKind::MinimalKs => "minimal_ks",
            ModelKind::ParabolicElliptic => "parabolic_elliptic",
            ModelKind::Regularized { .. } => "regularized",
            ModelKind::Theta { .. } => "theta_family",
        }
    }

    /// Whether the duality estimate applies to this system.
    pub fn has_duality(&self) -> bool {
        matches!(
            self,
            ModelKind::LocalSensing | ModelKind::ParabolicElliptic | ModelKind::Regularized { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Chemoattractant diffusivity.
    pub epsilon: f64,
    /// Degradation rate.
    pub beta: f64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, epsilon: f64, beta: f64) -> Result<Self> {
        let spec = Self { kind, epsilon, beta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn local_sensing(epsilon: f64, beta: f64) -> Result<Self> {
        Self::new(ModelKind::LocalSensing, epsilon, beta)
    }

    pub fn minimal_ks(epsilon: f64, beta: f64) -> Result<Self> {
        Self::new(ModelKind::MinimalKs, epsilon, beta)
    }

    pub fn parabolic_elliptic(epsilon: f64, beta: f64) -> Result<Self> {
        Self::new(ModelKind::ParabolicElliptic, epsilon, beta)
    }

    pub fn regularized(epsilon: f64, beta: f64, nu: f64) -> Result<Self> {
        Self::new(ModelKind::Regularized { nu }, epsilon, beta)
    }

    pub fn theta(epsilon: f64, beta: f64, theta: f64, potential: Field) -> Result<Self> {
        Self::new(ModelKind::Theta { theta, potential }, epsilon, beta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(invalid("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta", format!("must be nonnegative, got {}", self.beta)));
        }
        match &self.kind {
            ModelKind::ParabolicElliptic if self.beta <= 0.0 => {
                Err(invalid("beta", "parabolic_elliptic needs beta > 0"))
            }
            ModelKind::Regularized { nu } if !(*nu > 0.0 && nu.is_finite()) => {
                Err(invalid("nu", format!("must be positive, got {nu}")))
            }
            ModelKind::Theta { theta, .. } if !(0.0..=1.0).contains(theta) => {
                Err(invalid("theta", format!("must lie in [0, 1], got {theta}")))
            }
            _ => Ok(()),
        }
    }

    /// Spatially homogeneous steady state `(m, m/β)`, when `β > 0`.
    pub fn homogeneous_v(&self, mass: f64) -> Option<f64> {
        (self.beta > 0.0).then(|| mass / self.beta)
    }
}

/// `(t, u, v)` with the conserved mass cached.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub u: Field,
    pub v: Field,
    pub mass: f64,
}

impl SimState {
    pub fn new(t: f64, u: Field, v: Field) -> Self {
        assert_eq!(u.grid(), v.grid(), "u and v live on different grids");
        let mass = u.integral();
        Self { t, u, v, mass }
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    pub fn v_mean(&self) -> f64 {
        self.v.mean()
    }
}

/// Shape of an initial profile before scaling.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Constant,
    /// `exp(−|x − c|² / (2 w²))`.
    GaussianBump {
        center: [f64; 2],
        width: f64,
    },
    /// `baseline + amplitude · Π_k cos(kπ x_k)`.
    CosinePerturbation {
        baseline: f64,
        amplitude: f64,
        wavenumber: u32,
    },
    /// Alternating `low`/`high` blocks, `blocks` per axis.
    Checkerboard {
        low: f64,
        high: f64,
        blocks: usize,
    },
}

impl Profile {
    pub fn name(&self) -> &'static str {
        match self {
            Profile::Constant => "constant",
            Profile::GaussianBump { .. } => "gaussian_bump",
            Profile::CosinePerturbation { .. } => "cosine_perturbation",
            Profile::Checkerboard { .. } => "checkerboard",
        }
    }

    fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        let dim = grid.dim();
        let values: Vec<f64> = match *self {
            Profile::Constant => vec![1.0; grid.cell_count()],
            Profile::GaussianBump { center, width } => {
                if !(width > 0.0) {
                    return Err(invalid("width", format!("must be positive, got {width}")));
                }
                (0..grid.cell_count())
                    .map(|i| {
                        let x = grid.center(i);
                        let r2: f64 = (0..dim).map(|k| (x[k] - center[k]).powi(2)).sum();
                        (-r2 / (2.0 * width * width)).exp()
                    })
                    .collect()
            }
            Profile::CosinePerturbation {
                baseline,
                amplitude,
                wavenumber,
            } => {
                if amplitude.abs() > baseline {
                    return Err(Error::InvalidInitialData(format!(
                        "cosine amplitude {amplitude} exceeds baseline {baseline}; profile would go negative"
                    )));
                }
                let k = wavenumber as f64 * std::f64::consts::PI;
                (0..grid.cell_count())
                    .map(|i| {
                        let x = grid.center(i);
                        let prod: f64 = (0..dim).map(|d| (k * x[d]).cos()).product();
                        baseline + amplitude * prod
                    })
                    .collect()
            }
            Profile::Checkerboard { low, high, blocks } => {
                if blocks == 0 {
                    return Err(invalid("blocks", "must be at least 1"));
                }
                let n = grid.n_per_axis();
                (0..grid.cell_count())
                    .map(|idx| {
                        let (i, j) = (idx % n, idx / n);
                        let bi = i * blocks / n;
                        let bj = if dim == 2 { j * blocks / n } else { 0 };
                        if (bi + bj).is_multiple_of(2) {
                            low
                        } else {
                            high
                        }
                    })
                    .collect()
            }
        };
        if values.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidInitialData(format!(
                "{} profile produced negative or non-finite values",
                self.name()
            )));
        }
        Ok(values)
    }
}

/// Initial data generator. `u` is scaled to the target mass and `v` to the
/// target mean after the optional seeded multiplicative noise is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub u: Profile,
    pub mass: f64,
    pub v: Profile,
    pub v_mean: f64,
    /// Relative noise amplitude in `[0, 1)`; 0 disables noise.
    pub noise: f64,
    pub seed: u64,
}

impl InitialData {
    pub fn new(u: Profile, mass: f64) -> Self {
        Self {
            u,
            mass,
            v: Profile::Constant,
            v_mean: 0.0,
            noise: 0.0,
            seed: 0,
        }
    }

    pub fn with_v(mut self, v: Profile, v_mean: f64) -> Self {
        self.v = v;
        self.v_mean = v_mean;
        self
    }

    pub fn with_noise(mut self, noise: f64, seed: u64) -> Self {
        self.noise = noise;
        self.seed = seed;
        self
    }
}

fn scale_to_mean(grid: &Grid, mut values: Vec<f64>, target: f64, what: &str) -> Result<Field> {
    let integral = grid.cell_volume() * values.iter().sum::<f64>();
    if target == 0.0 {
        return Ok(Field::zeros(*grid));
    }
    if !(integral > 0.0) {
        return Err(Error::InvalidInitialData(format!(
            "{what} profile is nonpositive everywhere; cannot scale to {target}"
        )));
    }
    let s = target / integral;
    values.iter_mut().for_each(|x| *x *= s);
    Ok(Field::new(*grid, values))
}

/// Builds the `t = 0` state.
pub fn make_initial(grid: &Grid, spec: &InitialData) -> Result<SimState> {
    if !(spec.mass > 0.0 && spec.mass.is_finite()) {
        return Err(invalid("mass", format!("must be positive, got {}", spec.mass)));
    }
    if !(spec.v_mean >= 0.0 && spec.v_mean.is_finite()) {
        return Err(invalid("v_mean", format!("must be nonnegative, got {}", spec.v_mean)));
    }
    if !(0.0..1.0).contains(&spec.noise) {
        return Err(invalid("noise", format!("must lie in [0, 1), got {}", spec.noise)));
    }
    let mut u = spec.u.sample(grid)?;
    let mut v = spec.v.sample(grid)?;
    if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for x in u.iter_mut().chain(v.iter_mut()) {
            *x *= 1.0 + spec.noise * rng.gen_range(-1.0..1.0);
        }
    }
    let u = scale_to_mean(grid, u, spec.mass, "u")?;
    let v = scale_to_mean(grid, v, spec.v_mean, "v")?;
    Ok(SimState::new(0.0, u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    #[test]
    fn motility_values() {
        assert_eq!(motility(0.0), 1.0);
        assert!((motility(LN_2) - 0.5).abs() < 1e-15);
        assert_eq!(motility(-1e-15), 1.0);
        let samples: Vec<f64> = (0..200).map(|i| motility(i as f64 * 0.1)).collect();
        assert!(samples.windows(2).all(|w| w[1] < w[0]));
        assert!(samples.iter().all(|&g| g > 0.0 && g <= 1.0));
    }

    #[test]
    fn critical_mass_values() {
        assert!((critical_mass(1.0) - 12.566370614359172).abs() < 1e-12);
        assert!((critical_mass(1.0 / (4.0 * PI)) - 1.0).abs() < 1e-15);
        assert!((critical_mass(2.0) - 8.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn jump_rate_values() {
        for vj in [0.0, 0.7, 5.0] {
            assert_eq!(jump_rate(1.0, 0.1, 1.3, vj), (-1.3f64).exp());
        }
        assert_eq!(jump_rate(0.0, 0.3, 2.0, 2.0), 1.0);
        assert!((jump_rate(0.5, 0.1, 2.0, 0.0) - (-1.1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn model_validation() {
        assert!(ModelSpec::local_sensing(0.0, 1.0).is_err());
        assert!(ModelSpec::local_sensing(1.0, -1.0).is_err());
        assert!(ModelSpec::local_sensing(1.0, 0.0).is_ok());
        assert!(ModelSpec::parabolic_elliptic(1.0, 0.0).is_err());
        assert!(ModelSpec::regularized(1.0, 1.0, 0.0).is_err());
        let g = Grid::new(1, 8).unwrap();
        assert!(ModelSpec::theta(1.0, 1.0, 1.5, Field::zeros(g)).is_err());
        assert!(ModelSpec::theta(1.0, 1.0, 0.5, Field::zeros(g)).is_ok());
    }

    #[test]
    fn constant_initial_data() {
        let g = Grid::new(2, 10).unwrap();
        let s = make_initial(&g, &InitialData::new(Profile::Constant, 3.0)).unwrap();
        assert!(s.u.values().iter().all(|&x| (x - 3.0).abs() < 1e-14));
        assert!(s.v.values().iter().all(|&x| x == 0.0));
        assert!((s.mass - 3.0).abs() < 1e-14);
    }

    #[test]
    fn bump_is_normalized() {
        let g = Grid::new(2, 40).unwrap();
        let spec = InitialData::new(
            Profile::GaussianBump {
                center: [0.3, 0.6],
                width: 0.05,
            },
            1.0,
        );
        let s = make_initial(&g, &spec).unwrap();
        assert!((s.u.integral() - 1.0).abs() < 1e-12);
        assert!(s.u.min() >= 0.0);
    }

    #[test]
    fn cosine_amplitude_above_baseline_rejected() {
        let g = Grid::new(1, 16).unwrap();
        let spec = InitialData::new(
            Profile::CosinePerturbation {
                baseline: 1.0,
                amplitude: 1.5,
                wavenumber: 1,
            },
            1.0,
        );
        assert!(matches!(make_initial(&g, &spec), Err(Error::InvalidInitialData(_))));
    }

    #[test]
    fn zero_profile_rejected() {
        let g = Grid::new(1, 16).unwrap();
        let spec = InitialData::new(
            Profile::Checkerboard {
                low: 0.0,
                high: 0.0,
                blocks: 2,
            },
            1.0,
        );
        assert!(make_initial(&g, &spec).is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let g = Grid::new(2, 12).unwrap();
        let spec = InitialData::new(Profile::Constant, 2.0)
            .with_v(Profile::Constant, 0.5)
            .with_noise(0.4, 17);
        let a = make_initial(&g, &spec).unwrap();
        let b = make_initial(&g, &spec).unwrap();
        assert_eq!(a, b);
        let c = make_initial(&g, &spec.clone().with_noise(0.4, 18)).unwrap();
        assert_ne!(a.u, c.u);
        assert!(a.u.min() > 0.0);
        assert!((a.v.mean() - 0.5).abs() < 1e-13);
    }
}
