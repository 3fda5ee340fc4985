//! Finite-difference gradient check of every differentiable op.
//!
//! `cargo run --example gradcheck -- warp_ops` restricts the run to one group.

use daflow::gradcheck::{run, GradcheckOptions};

fn main() -> daflow::Result<()> {
    let filter = std::env::args().nth(1);
    let report = run(&GradcheckOptions {
        filter,
        ..GradcheckOptions::default()
    })?;
    print!("{}", report.to_text());
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
