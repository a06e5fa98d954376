//! Acceptance matrix: one pass/fail line per criterion, then the details.
//!
//! Runs without the libtest harness (`harness = false`); the process exits
//! non-zero when any criterion fails. Set `SPIKELAB_CRITERIA=1,2,5` to run a
//! subset.

use spikelab::verify::{matrix, run_criterion, CriterionReport};
use std::process::ExitCode;

fn selected() -> Vec<u8> {
    match std::env::var("SPIKELAB_CRITERIA") {
        Ok(list) if !list.trim().is_empty() => list
            .split(',')
            .filter_map(|s| s.trim().parse().ok())
            .filter(|id| (1..=10).contains(id))
            .collect(),
        _ => (1..=10).collect(),
    }
}

fn main() -> ExitCode {
    let reports: Vec<CriterionReport> = selected()
        .into_iter()
        .map(|id| {
            let r = run_criterion(id);
            println!("{}", r.summary_line());
            r
        })
        .collect();
    println!();
    for r in &reports {
        print!("{}", r.detail());
    }
    println!();
    print!("{}", matrix(&reports));
    if reports.iter().all(CriterionReport::passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
