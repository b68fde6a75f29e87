//! Structure-preserving finite-volume simulation of local-sensing
//! chemotaxis
//!
//! ```text
//! ∂t u = Δ(e^{−v} u),    ∂t v = εΔv − βv + u,    Neumann boundary,
//! ```
//!
//! alongside the minimal Keller-Segel system, the parabolic-elliptic
//! variant, the `L_ν`-regularized system and the θ-interpolation family.
//! Each stepper conserves mass to round-off and keeps densities
//! nonnegative; [`diagnostics`] evaluates the entropy, its dissipation,
//! the `(H¹)'` duality bound and the entropy floor along trajectories.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability, and the `chemosense` binary for batch runs from config files.

// Negated comparisons double as NaN rejection.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod diagnostics;
pub mod error;
pub mod linsolve;
pub mod mesh;
pub mod model;
pub mod scenario;
pub mod stepper;

pub use error::{Error, Result};
pub use mesh::{Field, Grid};
pub use model::{make_initial, InitialData, ModelKind, ModelSpec, Profile, SimState};
pub use stepper::{run, run_with, RunResult, RunStatus, StepConfig, Stepper};
