//! Enumerate the combinatorial attack corpus — every ordering of listing,
//! staging, message, and drop variants — then replay one case and its
//! defanged twin to show the detector separates them.
//!
//! ```sh
//! cargo run --example generate_attacks
//! ```

use qns::harness::{benign_twin, generate_attacks, replay, AttackGenConfig, ReplayOptions};
use qns::policy::SecurityPolicy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = AttackGenConfig::default_config();
    let cases = generate_attacks(&config)?;
    println!(
        "{} attack cases = {} orderings x {} listings x {} creates x {} messages x {} drops",
        cases.len(),
        config.orderings.len(),
        config.listing_variants.len(),
        config.create_variants.len(),
        config.message_variants.len(),
        config.drop_variants.len(),
    );

    let case = &cases[cases.len() / 2];
    println!("\ncase `{}` ({} statements):", case.name, case.queries.len());
    for q in &case.queries {
        println!("  {}", q.sql);
    }

    let policy = SecurityPolicy::default_policy();
    let report = replay(&case.queries, &policy, ReplayOptions::default())?;
    println!(
        "replayed -> alerts: {}, expected alert: {}",
        report.alerts.len(),
        case.expects_alert
    );

    // The benign twin neuters only the ransom message; everything else —
    // the listing, the staging table, the drop — stays identical.
    let twin = benign_twin(case);
    println!("\ntwin `{}` differs at statement {}:", twin.name, case.insert_index + 1);
    println!("  was: {}", case.queries[case.insert_index].sql);
    println!("  now: {}", twin.queries[twin.insert_index].sql);
    let report = replay(&twin.queries, &policy, ReplayOptions::default())?;
    println!("replayed -> alerts: {}, expected alert: {}", report.alerts.len(), twin.expects_alert);
    Ok(())
}
