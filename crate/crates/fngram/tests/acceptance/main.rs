//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs under `cargo test` with its own `main`.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

#[path = "../../../core/tests/suites/beam_oracle.rs"]
mod beam_oracle;
#[path = "../../../core/tests/suites/causality.rs"]
mod causality;
#[path = "../../../core/tests/suites/dialog.rs"]
mod dialog;
#[path = "../../../core/tests/suites/gradients.rs"]
mod gradients;
#[path = "../../../core/tests/suites/loss_identities.rs"]
mod loss_identities;
#[path = "../../../core/tests/suites/masking.rs"]
mod masking;
#[path = "../../../core/tests/suites/metric_oracle.rs"]
mod metric_oracle;
mod persistence;

const GRADIENT_BUDGET_SECS: f64 = 300.0;
const OVERFIT_BUDGET_SECS: f64 = 600.0;
const OVERFIT_STEPS: u64 = 500;
const OVERFIT_LOSS: f64 = 0.1;
const OVERFIT_EXACT: usize = 31;

fn gradients() -> Result<String, String> {
    let start = Instant::now();
    let summary = gradients::run()?;
    let secs = start.elapsed().as_secs_f64();
    if secs >= GRADIENT_BUDGET_SECS {
        return Err(format!("{summary}; took {secs:.0}s, budget {GRADIENT_BUDGET_SECS:.0}s"));
    }
    Ok(format!("{summary}; {secs:.1}s"))
}

fn overfit() -> Result<String, String> {
    let o = overfit::run(OVERFIT_STEPS, 0.003, 8);
    let detail = format!(
        "{} steps, stream-0 loss {:.5}, {}/{} exact, {:.1}s",
        o.steps, o.stream0_loss, o.exact, o.total, o.seconds
    );
    if o.total != 32 || o.stream0_loss >= OVERFIT_LOSS || o.exact < OVERFIT_EXACT || o.seconds >= OVERFIT_BUDGET_SECS {
        return Err(detail);
    }
    Ok(detail)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<String, String>); 9] = [
        ("gradient suite", gradients),
        ("causality suite", causality::run),
        ("loss identities", loss_identities::run),
        ("masking arithmetic", masking::run),
        ("dialog expansion", dialog::run),
        ("overfit end-to-end", overfit),
        ("beam oracle", beam_oracle::run),
        ("metric oracle", metric_oracle::run),
        ("persistence", persistence::run),
    ];
    // `cargo test -- <filter>` runs only matching criteria.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
