//! Runs the twelve acceptance criteria and prints one line per criterion.
//! Criteria listed in `KNOWN_UNATTAINABLE` are reported but do not fail the run.

use kmplab::acceptance::{run_criterion, CRITERIA, KNOWN_UNATTAINABLE};
use kmplab::exec::ExecMode;
use std::process::ExitCode;

fn main() -> ExitCode {
    // `cargo test -- --list` and filters from other targets must not run the suite
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance_criteria: test");
        return ExitCode::SUCCESS;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance_criteria".contains(filter.as_str()) {
            return ExitCode::SUCCESS;
        }
    }
    let mut failures = Vec::new();
    for (id, name) in CRITERIA {
        let line = match run_criterion(id, ExecMode::default()) {
            Ok(r) => {
                if !r.passed && !KNOWN_UNATTAINABLE.contains(&id) {
                    failures.push(id);
                }
                let mut line = r.line();
                if KNOWN_UNATTAINABLE.contains(&id) {
                    line.push_str(" (known unattainable)");
                }
                line
            }
            Err(e) => {
                failures.push(id);
                format!("criterion {id:>2} {name:<28} ERROR {e}")
            }
        };
        println!("{line}");
    }
    if failures.is_empty() {
        println!("acceptance: all required criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failures:?}");
        ExitCode::FAILURE
    }
}
