//! Measure what classification costs on top of bare parsing, on a
//! synthetic mixed workload. Runs the full comparison twice: once from an
//! empty net and once with residual tokens parked on every watch place,
//! since a primed net exercises the more expensive matching paths.
//!
//! The acceptance-grade run uses 100 000 statements and 10 repetitions;
//! this example trims both so it finishes in a few seconds. Build with
//! `--release` for meaningful numbers.
//!
//! ```sh
//! cargo run --release --example bench_overhead
//! ```

use qns::harness::{bench, render_bench, synthetic_queries};
use qns::policy::SecurityPolicy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let queries = synthetic_queries(20_000);
    println!("workload: {} statements (~3% catalog listings)", queries.len());

    let policy = SecurityPolicy::default_policy();
    let report = bench(&queries, &policy, 5)?;
    print!("{}", render_bench(&report));

    println!(
        "\nfresh and populated intervals overlap: {}",
        report.fresh.overlaps(&report.populated)
    );
    Ok(())
}
