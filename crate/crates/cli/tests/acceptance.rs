//! Acceptance suite: criteria 1-10 on the default configuration, one
//! PASS/FAIL line each. `LGTIME_CRITERIA=2,7` restricts the run.
//!
//! Criteria listed in `KNOWN_RED` are evaluated in full and reported, but
//! their failure does not fail this target. Anything else failing, or any
//! criterion that cannot be evaluated, does.

use std::process::ExitCode;
use std::time::Instant;

use lgtime_cli::validation::{run_criterion, ALL};
use lgtime_cli::ExperimentConfig;

const KNOWN_RED: &[u32] = &[4, 5, 9];

fn selected() -> Vec<u32> {
    match std::env::var("LGTIME_CRITERIA") {
        Ok(s) if !s.trim().is_empty() => s.split(',').filter_map(|t| t.trim().parse().ok()).collect(),
        _ => ALL.to_vec(),
    }
}

fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cfg = ExperimentConfig::default();
    let mut unexpected = Vec::new();
    let mut passed = 0;
    let mut known = Vec::new();
    let ids = selected();
    for &id in &ids {
        let t0 = Instant::now();
        let r = run_criterion(id, &cfg);
        println!("{}  [{:.1} s]", r.line(), t0.elapsed().as_secs_f64());
        if r.passed {
            passed += 1;
        } else if r.error.is_some() || !KNOWN_RED.contains(&id) {
            unexpected.push(id);
        } else {
            known.push(id);
        }
    }
    println!("acceptance: {passed}/{} criteria passed", ids.len());
    if !known.is_empty() {
        println!("acceptance: known failures {known:?}");
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected failures {unexpected:?}");
        ExitCode::FAILURE
    }
}
