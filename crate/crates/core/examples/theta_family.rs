//! The θ-interpolation family in a static potential `V`. Every θ relaxes
//! to the same equilibrium `u∞ ∝ e^V`; at θ = 1 the jump rate ignores the
//! destination.
//!
//! ```text
//! cargo run --release --example theta_family
//! ```

use chemosense::batch::theta_equilibrium;
use chemosense::model::jump_rate;
use chemosense::scenario::{preset, ModelChoice};
use chemosense::{run, Result};

fn main() -> Result<()> {
    for s in preset("theta_sweep")? {
        let ModelChoice::Theta {
            theta,
            potential: Some(p),
        } = &s.model
        else {
            unreachable!()
        };
        let r = run(&s.model_spec()?, &s.initial_state()?, &s.step, s.step.t_end)?;
        let eq = theta_equilibrium(&p.field(&s.grid()?), s.initial.mass);
        let err = r.final_state.u.zip_map(&eq, |a, b| a - b).lp_norm(2.0) / eq.lp_norm(2.0);
        println!(
            "θ = {theta:<4} ‖u(T) − u∞‖₂/‖u∞‖₂ = {err:.3e} after {} steps",
            r.stats.steps
        );
    }

    let h = 1.0 / 64.0;
    println!("\njump rates out of a node with V = 0.3:");
    for theta in [0.0, 0.5, 1.0] {
        let rates: Vec<String> = [0.0, 0.3, 1.0]
            .iter()
            .map(|&vj| format!("{:.6}", jump_rate(theta, h, 0.3, vj)))
            .collect();
        println!("  θ = {theta:<4} to V ∈ {{0, 0.3, 1}}: {}", rates.join(", "));
    }
    Ok(())
}
