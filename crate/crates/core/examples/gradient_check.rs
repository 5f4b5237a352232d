//! Finite-difference checks of every layer op and the three training
//! objectives in 64-bit.

use avsep::checks::{gradient_suite, GRAD_TOL};

fn main() -> avsep::Result<()> {
    let suite = gradient_suite(1)?;
    for c in &suite {
        let flag = if c.max_rel_err < GRAD_TOL { "ok" } else { "FAIL" };
        println!("{flag:<4} {:<32} {:.2e}", c.name, c.max_rel_err);
    }
    let worst = suite.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    println!("{} checks, worst {worst:.2e}", suite.len());
    Ok(())
}
