//! What happens to a destructive statement under enforcement: instead of
//! executing the drop, the proxy renames the doomed objects into a hidden
//! storage space. This example only plans — it prints the statements that
//! would be sent upstream.
//!
//! ```sh
//! cargo run --example plan_backups
//! ```

use qns::policy::SecurityPolicy;
use qns::resolver::{backup_plan, BackupNamer};
use qns::sql::classify_statement;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let policy = SecurityPolicy::default_policy();
    let mut namer = BackupNamer::new(&policy);
    let now = 1_700_000_000.0;

    let event = |sql: &str| {
        classify_statement(sql, None, &policy.object_prefix)
            .pop()
            .expect("one event")
            .with_time(now, 7)
    };

    // A table drop is replaced outright: the original statement never
    // reaches the server, the rename goes instead.
    let plan = backup_plan(&event("DROP TABLE shop.customers"), &[], &mut namer)
        .expect("drops produce a plan");
    println!("DROP TABLE shop.customers");
    println!("  replaces original: {}", plan.replaces_original);
    for step in &plan.renames {
        println!("  upstream: {}", step.sql);
    }

    // A database drop renames every table out of the doomed schema first,
    // then lets the (now empty) DROP DATABASE proceed.
    let tables = ["customers".to_string(), "orders".to_string(), "invoices".to_string()];
    let plan = backup_plan(&event("DROP DATABASE shop"), &tables, &mut namer)
        .expect("drops produce a plan");
    println!("\nDROP DATABASE shop  (3 tables inside)");
    println!("  replaces original: {}", plan.replaces_original);
    for step in &plan.renames {
        println!("  upstream: {}", step.sql);
    }

    // Names are minted once per object; backing up the same table again in
    // the same second still yields a distinct name.
    let again = namer.target_name(Some("shop"), "customers", now as i64);
    println!("\nsecond backup of the same table: {again}");

    // Non-destructive statements have nothing to back up.
    let none = backup_plan(&event("SELECT 1"), &[], &mut namer);
    println!("SELECT 1 -> plan: {none:?}");
    Ok(())
}
