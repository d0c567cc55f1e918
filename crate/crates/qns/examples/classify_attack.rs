//! Feed the canonical four-statement ransom sequence through the
//! classifier and watch the verdict escalate, then assemble the incident
//! report an operator would receive.
//!
//! ```sh
//! cargo run --example classify_attack
//! ```

use qns::classifier::{Classifier, Disposition};
use qns::policy::SecurityPolicy;
use qns::resolver::{build_report, render_message};
use qns::sql::classify_statement;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let policy = SecurityPolicy::default_policy();
    let mut classifier = Classifier::new(&policy)?;

    // The sequence every strain in the wild shares: enumerate, stage a
    // table for the ransom note, write the note, destroy the original.
    let attack = [
        "SHOW TABLES",
        "CREATE TABLE payme (note TEXT)",
        "INSERT INTO payme (note) VALUES ('send 5 BTC to get your data back')",
        "DROP TABLE customers",
    ];

    let mut alert = None;
    for (i, sql) in attack.iter().enumerate() {
        let ts = i as f64; // one statement per second
        for event in classify_statement(sql, Some("shop"), &policy.object_prefix) {
            let verdict = classifier.process(&event.with_time(ts, 7))?;
            println!("[{}] {:<10} {}", i + 1, verdict.disposition.to_string(), sql);
            for action in &verdict.actions {
                println!("      action: {:?} on {}", action.action, action.place);
            }
            if verdict.disposition == Disposition::Alert {
                alert = Some(verdict);
            }
        }
    }

    let verdict = alert.expect("the full sequence must raise an alert");
    let notify = verdict
        .actions
        .iter()
        .find(|a| a.place == "Notify_Admin")
        .expect("alert carries a notification request");

    // The token that reached Notify_Admin remembers which events built
    // it; the classifier can turn those ids back into statements.
    let contributing = classifier.events_for(&notify.token.provenance);
    let report = build_report(notify, contributing, Vec::new(), &policy.notification_target);

    println!("\nincident traced to {} statement(s):", report.contributing_events.len());
    for e in &report.contributing_events {
        println!("  t={:>4} conn {} {:<12} {}", e.ts, e.conn_id, e.kind.as_str(), e.raw_sql);
    }
    println!("ransom excerpt: {:?}", report.ransom_excerpt);

    println!("\n--- as delivered to {} ---", report.notification_target);
    print!("{}", render_message(&report));
    Ok(())
}
