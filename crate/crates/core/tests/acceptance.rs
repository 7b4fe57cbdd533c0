//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Numeric arguments restrict the run to those ids,
//! e.g. `cargo test --test acceptance -- 4 7`; other arguments are ignored.

use std::process::ExitCode;
use std::thread;

use chemolab::verify::{self, CRITERIA};

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids: Vec<u32> =
        CRITERIA.iter().map(|&(id, _)| id).filter(|id| wanted.is_empty() || wanted.contains(id)).collect();
    let results: Vec<_> = thread::scope(|s| {
        let handles: Vec<_> = ids.iter().map(|&id| s.spawn(move || verify::run_criterion(id))).collect();
        handles.into_iter().map(|h| h.join().expect("criterion panicked").expect("known id")).collect()
    });
    let mut failed = 0;
    for r in &results {
        println!("{}", r.line());
        failed += usize::from(!r.passed);
    }
    println!("acceptance: {} passed, {} failed", results.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
