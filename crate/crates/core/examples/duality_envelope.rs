//! Tracks the `(H¹)'` duality bound and the entropy floor along a
//! subcritical local-sensing run in 2D.
//!
//! ```text
//! cargo run --release --example duality_envelope
//! ```

use chemosense::diagnostics::{check_duality, check_entropy_floor};
use chemosense::scenario::preset;
use chemosense::{run, Result};

fn main() -> Result<()> {
    let mut s = preset("subcritical2d")?.remove(0);
    s.n = 32;
    s.step.t_end = 1.0;
    s.sample_every = 0.1;
    let r = run(&s.model_spec()?, &s.initial_state()?, &s.step, s.sample_every)?;
    let m = s.initial.mass;
    let d0 = r.records[0].dual_norm_sq;
    println!(
        "{:>5} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "t", "√D(t)", "√(D0+2m²t)", "LHS", "entropy", "floor"
    );
    for rec in &r.records {
        let lhs = rec.dual_norm_sq + rec.duality_lhs_cumulative.unwrap_or(0.0);
        println!(
            "{:>5.2} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5} {:>12.5}",
            rec.t,
            rec.dual_norm_sq.sqrt(),
            (d0 + 2.0 * m * m * rec.t).sqrt(),
            lhs,
            rec.entropy,
            rec.entropy_lower_bound
        );
    }
    let d = check_duality(&r.records, r.stats.dt_max_used);
    println!(
        "\nduality: {} violation(s), min residual over t > 0 = {:.4e}",
        d.violations.len(),
        d.residuals[1..].iter().copied().fold(f64::INFINITY, f64::min)
    );
    println!("entropy floor: {} violation(s)", check_entropy_floor(&r.records).len());
    Ok(())
}
