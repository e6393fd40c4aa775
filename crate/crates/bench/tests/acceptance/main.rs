//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! fails.

use std::time::{Duration, Instant};

mod cm;
mod fabric;
mod flight;
mod idl;
mod ifmodel;
mod kvs;
mod rings;
mod wire;
mod zipf;

/// A check returns a short summary of what it measured, or why it failed.
type Check = fn() -> Result<String, String>;

fn main() {
    let criteria: [(u32, &str, Check, u64); 10] = [
        (1, "ring safety", rings::check, 60),
        (2, "connection cache 1W3R", cm::check, 30),
        (3, "wire round trip", wire::check, 10),
        (4, "interface model calibration", ifmodel::check_calibration, 30),
        (5, "latency curve shape", ifmodel::check_curves, 60),
        (6, "zipf generator", zipf::check, 20),
        (7, "kvs correctness under load", kvs::check, 120),
        (8, "flight registration", flight::check, 180),
        (9, "idl golden and stubs", idl::check, 10),
        (10, "fabric fairness and isolation", fabric::check, 30),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check, limit) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let took = t.elapsed();
        let outcome = match outcome {
            Ok(m) if took > Duration::from_secs(limit) => Err(format!("{m}; took {took:.1?}, limit {limit} s")),
            other => other,
        };
        match outcome {
            Ok(m) => println!("PASS {n:>2} {name}: {m} [{:.1} s]", took.as_secs_f64()),
            Err(m) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {m} [{:.1} s]", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

/// `Err(msg)` unless `cond`.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
