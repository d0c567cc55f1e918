//! Replay the bundled benign workload — roughly five thousand statements
//! of ordinary application traffic — and confirm the net stays quiet: no
//! alerts, and a final marking that matches the committed fixture.
//!
//! ```sh
//! cargo run --example replay_corpus
//! ```

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use qns::harness::{parse_plain, render_summary, replay, ReplayOptions};
use qns::policy::SecurityPolicy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus");

    // One statement per line, one second apart, single connection.
    let queries = parse_plain(BufReader::new(File::open(corpus.join("benign_mini.sql"))?), 0.0, 1.0)?;
    println!("loaded {} statements", queries.len());

    let policy = SecurityPolicy::default_policy();
    // The corpus spans hours of virtual time; disabling the timeout makes
    // the final marking deterministic (nothing depends on replay pace).
    let options = ReplayOptions { disable_timeout: true, ..ReplayOptions::default() };
    let report = replay(&queries, &policy, options)?;

    print!("{}", render_summary(&report));

    let expected: serde_json::Value =
        serde_json::from_reader(BufReader::new(File::open(corpus.join("benign_mini.expected.json"))?))?;
    let actual = serde_json::to_value(&report.snapshot)?;
    println!(
        "\nfinal marking matches committed fixture: {}",
        if actual == expected { "yes" } else { "NO" }
    );
    println!("alerts raised: {}", report.alerts.len());
    Ok(())
}
