//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance -- 1 4 7` runs a subset. A failed
//! verdict is reported, not turned into a test failure; an error while
//! running a criterion is. `she verify` exits non-zero on either. Set
//! `SHE_VERBOSE` to print every row.

use std::process::ExitCode;

use she_core::harness::acceptance::{run_criterion, CRITERIA};

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut errors = 0;
    let mut failed = Vec::new();
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = std::time::Instant::now();
        match run_criterion(c) {
            Ok(report) => {
                let ok = report.passed();
                let secs = start.elapsed().as_secs_f64();
                println!("{} criterion {:>2} {} ({secs:.1} s)", if ok { "PASS" } else { "FAIL" }, c.id, c.name);
                if std::env::var_os("SHE_VERBOSE").is_some() {
                    println!("{}", report.to_text());
                }
                for row in report.failures() {
                    println!("       {} {} = {:e} [{}]", row.case, row.quantity, row.measured, row.verdict.as_str());
                }
                if !ok {
                    failed.push(c.id);
                }
            }
            Err(e) => {
                println!("FAIL criterion {:>2} {}: error: {e}", c.id, c.name);
                errors += 1;
            }
        }
    }
    println!("failed criteria: {failed:?}");
    if errors > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
