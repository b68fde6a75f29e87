//! Parses a config, runs the batch and prints the summary, as the
//! `chemosense run` command does.
//!
//! ```text
//! cargo run --release --example config_batch [config.ini]
//! ```

use chemosense::batch::{check_csv, run_batch, BatchOptions};
use chemosense::scenario::parse_config;
use chemosense::Result;

const DEFAULT: &str = r#"
# A homogeneous steady state and a small 1D run.
[scenario.flat]
dim = 1
n = 32
mass = 1
v_mean = 1
t_end = 0.2
sample_every = 0.05

[scenario.bump]
dim = 1
n = 128
u_profile = gaussian_bump
u_center = 0.3
u_width = 0.05
mass = 3
t_end = 0.5
sample_every = 0.1
snapshot_every = 1
"#;

fn main() -> Result<()> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => DEFAULT.to_string(),
    };
    let batch = parse_config(&text)?;
    let out = std::env::temp_dir().join("chemosense-config-batch");
    let report = run_batch(
        &batch,
        &BatchOptions {
            out: Some(out.clone()),
            parallel: 0,
            strict: true,
        },
    )?;
    print!("{}", report.summary());

    let csv = report.scenarios[0].csv_path();
    println!("\nre-checking {}:", csv.display());
    for v in check_csv(&csv)? {
        println!("  {v}");
    }
    Ok(())
}
