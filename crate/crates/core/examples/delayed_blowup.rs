//! Local sensing against minimal Keller-Segel from the same supercritical
//! corner bump (m = 8π, ε = β = 1).
//!
//! ```text
//! cargo run --release --example delayed_blowup [n]
//! ```
//!
//! `n` defaults to the preset's 96 cells per axis.

use chemosense::scenario::preset;
use chemosense::{run, Result, RunStatus};

fn main() -> Result<()> {
    let n = std::env::args()
        .nth(1)
        .map(|a| a.parse().expect("n must be an integer"));
    for mut s in preset("ks_blowup_pair")? {
        if let Some(n) = n {
            s.n = n;
        }
        let threshold = s.step.blowup_threshold(s.initial.mass, &s.grid()?);
        let r = run(&s.model_spec()?, &s.initial_state()?, &s.step, s.sample_every)?;
        let last = r.records.last().expect("at least one sample");
        let status = match r.status {
            RunStatus::Completed => format!("completed at T = {}", last.t),
            RunStatus::BlowupDetected { t } => format!("blowup_detected at t* = {t:.6}"),
            RunStatus::Failed(m) => format!("failed: {m}"),
        };
        println!("{:<30} {status}", s.name);
        println!(
            "{:<30} ‖u‖∞ = {:.4e} (threshold {threshold:.4e}), {} steps",
            "", last.linf_u, r.stats.steps
        );
    }
    Ok(())
}
