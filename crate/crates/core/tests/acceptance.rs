//! Acceptance battery: one line per criterion, non-zero exit on any failure.

use polyflow_core::suite::{run_criterion, CRITERIA};
use polyflow_core::Status;

const SEED: u64 = 42;

fn main() {
    let mut failed = 0;
    for &(id, _, _) in &CRITERIA {
        match run_criterion(id, SEED) {
            Ok(out) => {
                let in_time = out.elapsed <= out.time_limit;
                let ok = out.passed && in_time;
                if !ok {
                    failed += 1;
                }
                println!(
                    "criterion {id} [{}] {}: {} ({:.1}s, limit {}s)",
                    if ok { "PASS" } else { "FAIL" },
                    out.title,
                    out.summary(),
                    out.elapsed.as_secs_f64(),
                    out.time_limit.as_secs(),
                );
                for c in &out.checks {
                    let mark = match c.status {
                        Status::Pass => "ok",
                        Status::Fail => "FAIL",
                        Status::Info => "info",
                    };
                    match c.tol {
                        Some(t) => println!("    {mark:4} {}: {:.3e} (tol {:.0e})", c.name, c.worst, t),
                        None => println!("    {mark:4} {}: {:.3e}", c.name, c.worst),
                    }
                }
            }
            Err(e) => {
                failed += 1;
                println!("criterion {id} [FAIL] error: {e}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
