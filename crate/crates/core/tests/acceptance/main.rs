//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `cargo test --test acceptance -- A4 A9` runs a subset.

mod fixtures;
mod oracles;
mod training;

use std::process::ExitCode;
use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Criterion = (&'static str, &'static str, fn() -> Outcome);

const CRITERIA: &[Criterion] = &[
    ("A1", "conditional slice matches dense Gaussian conditioning", oracles::a1_conditioning_oracle),
    ("A2", "tiled render matches per-pixel compositing", oracles::a2_compositing_oracle),
    ("A3", "analytic gradients match finite differences", oracles::a3_gradient_check),
    ("A4", "free shapes never materially worse than frozen shapes (static)", training::a4_static_lower_bound),
    ("A5", "free shapes beat frozen shapes on view-dependent scene", training::a5_view_dependent_gap),
    ("A6", "learned b_t separates transient and static clusters", training::a6_temporal_decomposition),
    ("A7", "coincident clones render like the original", oracles::a7_clone_render),
    ("A8", "per-primitive parameter count 35 / 44", oracles::a8_parameter_count),
    ("A9", "bit-identical results across thread counts", training::a9_thread_determinism),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, run) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| f.eq_ignore_ascii_case(id)) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        ran += 1;
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("{id} {verdict}  {name}: {} [{:.1}s]", out.detail, start.elapsed().as_secs_f64());
        if !out.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
