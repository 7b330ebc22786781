//! Audits every analytic gradient against central differences and prints a
//! pass/fail table. An optional first argument sets the seed.
//!
//! Run with: `cargo run --release -p dva --example gradient_check [seed]`

use std::process::ExitCode;

use dva::gradcheck::{check_all, THRESHOLD};

fn main() -> ExitCode {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let reports = match check_all(seed, None) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut all_pass = true;
    for report in &reports {
        println!(
            "{:<8} max rel err {:>12.6e}  {}",
            report.name,
            report.max_err,
            if report.passed() { "pass" } else { "FAIL" }
        );
        all_pass &= report.passed();
    }
    if all_pass {
        println!(
            "all {} components below the {THRESHOLD:e} threshold (seed {seed})",
            reports.len()
        );
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    }
}
