//! The `L_ν`-regularized system approaches local sensing as ν → 0.
//!
//! ```text
//! cargo run --release --example regularized_limit
//! ```

use chemosense::scenario::preset;
use chemosense::{run, Result};

fn main() -> Result<()> {
    let mut sweep = preset("nu_sweep")?;
    let reference = sweep.remove(0);
    let final_u = |s: &chemosense::scenario::Scenario| -> Result<_> {
        Ok(run(&s.model_spec()?, &s.initial_state()?, &s.step, s.step.t_end)?
            .final_state
            .u)
    };
    let u0 = final_u(&reference)?;
    println!("{:>8} {:>16}", "ν", "‖u_ν(T) − u(T)‖₂");
    for s in &sweep {
        let u = final_u(s)?;
        let d = u.zip_map(&u0, |a, b| a - b).lp_norm(2.0);
        let chemosense::scenario::ModelChoice::Regularized { nu } = s.model else {
            unreachable!()
        };
        println!("{nu:>8.0e} {d:>16.6e}");
    }
    Ok(())
}
