//! End-to-end acceptance run. Prints one line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test -p amr-core --test acceptance -- 1 2 8`.

mod desk;
mod endpoints;
mod frontier;
mod persistence;
mod probe;
mod props;
mod solver;
mod symmetry;
mod training;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

/// Detail line on success, reason on failure.
pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}
pub(crate) use ensure;

/// Converts any displayable error into a failure reason.
pub fn fail<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> String + '_ {
    move |e| format!("{what}: {e}")
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "property suite", props::run),
        (2, "solver verification", solver::run),
        (3, "symmetry", symmetry::run),
        (4, "metric endpoints", endpoints::run),
        (5, "desk-scale training", training::run),
        (6, "anticipatory probe", probe::run),
        (7, "multi-objective sweep", frontier::run),
        (8, "persistence", persistence::run),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} {name}: PASS ({secs:.1}s) {detail}"),
            Err(reason) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({secs:.1}s) {reason}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
