//! Discrete Neumann operators on the unit square: the Laplacian, the
//! zero-mean inverse `K`, and the resolvent `Λ_ν`.
//!
//! ```text
//! cargo run --example operators
//! ```

use std::f64::consts::PI;

use chemosense::mesh::{apply_k, apply_lambda_nu, grad_sq_norm, laplacian_neumann};
use chemosense::{Grid, Result};

fn main() -> Result<()> {
    println!("cos(πx)cos(πy) is an eigenfunction of −Δ with eigenvalue 2π²");
    println!("{:>6} {:>14} {:>8}", "n", "max error", "order");
    let mut prev: Option<f64> = None;
    for n in [8, 16, 32, 64, 128] {
        let g = Grid::new(2, n)?;
        let f = g.sample(|x| (PI * x[0]).cos() * (PI * x[1]).cos());
        let lap = laplacian_neumann(&f);
        let err = lap.zip_map(&f, |l, v| l + 2.0 * PI * PI * v).lp_norm(f64::INFINITY);
        let order = prev.map(|p| (p / err).log2());
        println!(
            "{n:>6} {err:>14.6e} {:>8}",
            order.map_or("-".into(), |o| format!("{o:.3}"))
        );
        prev = Some(err);
    }

    let g = Grid::new(2, 64)?;
    let f = g.sample(|x| (PI * x[0]).cos() + 0.5 * (2.0 * PI * x[1]).cos());
    println!("\n‖∇f‖² = ⟨f, −Δf⟩ = {:.6}", grad_sq_norm(&f));

    let k = apply_k(&f)?;
    let back = laplacian_neumann(&k).map(|x| -x);
    let residual = back.zip_map(&f, |a, b| a - b).lp_norm(2.0);
    println!("K f has mean {:.2e}; ‖−ΔKf − f‖₂ = {residual:.2e}", k.mean());

    for nu in [1e-1, 1e-2, 1e-3] {
        let l = apply_lambda_nu(&f, nu)?;
        println!(
            "Λ_ν f for ν = {nu:e}: mean {:.6} (f: {:.6}), ‖Λ_ν f − f‖₂ = {:.4e}",
            l.mean(),
            f.mean(),
            l.zip_map(&f, |a, b| a - b).lp_norm(2.0)
        );
    }
    Ok(())
}
