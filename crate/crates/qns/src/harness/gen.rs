//! Generator for the malicious test corpus.
//!
//! Every test is nine statements: five that set up two victim databases,
//! then the four attack-relevant ones — a listing, a table creation, a
//! ransom-message insert, and a drop — in one of the configured orders.
//! The full cartesian product over orderings and statement variants forms
//! the corpus; the shipped default multiplies out to
//! 3 orderings × 31 listings × 1 create × 29 messages × 5 drops = 13 485
//! tests (53 940 attack-relevant statements).
//!
//! Variant choices are constrained so that *every* product member completes
//! the signature: listings are table- or column-level (they mark both the
//! database and the table as reconnoitered) and drops target tables. A
//! database-level drop consumes the database token that a later table
//! creation would need, so it can only alert in create-first orders; the
//! default config avoids such order-sensitive pairs rather than special-
//! casing the product.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::sql::{classify_statement, SqlEventKind, TimedQuery};

/// Replacement payload used by [`benign_twin`]; deliberately free of
/// anything the ransom pattern could match.
const BENIGN_NOTE: &str = "your quarterly report is attached for review";

/// Seconds between consecutive statements of one test.
const STEP_SECS: f64 = 1.0;

/// One of the four attack-relevant statements in a test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStep {
    Listing,
    Create,
    Insert,
    Drop,
}

/// Cartesian-product description of the malicious corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackGenConfig {
    /// Reconnaissance statements; each must mark tables as listed.
    pub listing_variants: Vec<String>,
    /// Statements creating the table the ransom message lands in.
    pub create_variants: Vec<String>,
    /// Complete ransom-insert statements, one per message wording.
    pub message_variants: Vec<String>,
    /// Destructive statements.
    pub drop_variants: Vec<String>,
    /// Orders the four steps may take; creation must precede insertion.
    pub orderings: Vec<Vec<AttackStep>>,
    /// Statements prepended to every test (victim schema setup).
    pub setup: Vec<String>,
    /// Statements appended to every test.
    pub teardown: Vec<String>,
}

/// One generated test: statements plus the label replay must reproduce.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackCase {
    /// `o<ordering>-l<listing>-c<create>-m<message>-d<drop>` indices into
    /// the generating config.
    pub name: String,
    pub queries: Vec<TimedQuery>,
    /// Whether replaying this test must raise an alert.
    pub expects_alert: bool,
    /// Position of the ransom insert within `queries`.
    pub insert_index: usize,
}

impl AttackGenConfig {
    /// The shipped corpus: multiplies out to exactly 13 485 tests.
    pub fn default_config() -> AttackGenConfig {
        use AttackStep::*;
        AttackGenConfig {
            listing_variants: LISTINGS.iter().map(|s| s.to_string()).collect(),
            create_variants: vec![
                "CREATE TABLE victim_a.README_NOW (note TEXT)".to_string(),
            ],
            message_variants: MESSAGES
                .iter()
                .map(|m| format!("INSERT INTO victim_a.README_NOW VALUES ('{m}')"))
                .collect(),
            drop_variants: DROPS.iter().map(|s| s.to_string()).collect(),
            orderings: vec![
                vec![Listing, Create, Insert, Drop],
                vec![Listing, Create, Drop, Insert],
                vec![Listing, Drop, Create, Insert],
            ],
            setup: vec![
                "CREATE DATABASE IF NOT EXISTS victim_a".to_string(),
                "CREATE TABLE IF NOT EXISTS victim_a.customers (id INT, name TEXT)".to_string(),
                "CREATE TABLE IF NOT EXISTS victim_a.invoices (id INT, total INT)".to_string(),
                "CREATE DATABASE IF NOT EXISTS victim_b".to_string(),
                "CREATE TABLE IF NOT EXISTS victim_b.assets (id INT, label TEXT)".to_string(),
            ],
            teardown: Vec::new(),
        }
    }

    /// Tests the full product will contain.
    pub fn case_count(&self) -> usize {
        self.orderings.len()
            * self.listing_variants.len()
            * self.create_variants.len()
            * self.message_variants.len()
            * self.drop_variants.len()
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let lists = [
            ("listing_variants", &self.listing_variants),
            ("create_variants", &self.create_variants),
            ("message_variants", &self.message_variants),
            ("drop_variants", &self.drop_variants),
        ];
        for (name, list) in lists {
            if list.is_empty() {
                return Err(HarnessError::BadConfig(format!("{name} is empty")));
            }
        }
        if self.orderings.is_empty() {
            return Err(HarnessError::BadConfig("orderings is empty".into()));
        }
        for (i, ordering) in self.orderings.iter().enumerate() {
            let position = |step| ordering.iter().position(|s| *s == step);
            let all_four = ordering.len() == 4
                && position(AttackStep::Listing).is_some()
                && position(AttackStep::Create).is_some()
                && position(AttackStep::Insert).is_some()
                && position(AttackStep::Drop).is_some();
            if !all_four {
                return Err(HarnessError::BadConfig(format!(
                    "ordering {i} must contain each of the four steps exactly once"
                )));
            }
            if position(AttackStep::Create) > position(AttackStep::Insert) {
                return Err(HarnessError::BadConfig(format!(
                    "ordering {i} inserts the message before creating its table"
                )));
            }
        }
        Ok(())
    }
}

/// Expands the config into the full labeled corpus.
pub fn generate_attacks(config: &AttackGenConfig) -> Result<Vec<AttackCase>, HarnessError> {
    config.validate()?;
    let mut cases = Vec::with_capacity(config.case_count());
    for (oi, ordering) in config.orderings.iter().enumerate() {
        for (li, listing) in config.listing_variants.iter().enumerate() {
            for (ci, create) in config.create_variants.iter().enumerate() {
                for (mi, message) in config.message_variants.iter().enumerate() {
                    for (di, drop) in config.drop_variants.iter().enumerate() {
                        let mut statements: Vec<&str> =
                            config.setup.iter().map(String::as_str).collect();
                        let attack_base = statements.len();
                        for step in ordering {
                            statements.push(match step {
                                AttackStep::Listing => listing,
                                AttackStep::Create => create,
                                AttackStep::Insert => message,
                                AttackStep::Drop => drop,
                            });
                        }
                        statements.extend(config.teardown.iter().map(String::as_str));

                        let insert_index = attack_base
                            + ordering
                                .iter()
                                .position(|s| *s == AttackStep::Insert)
                                .expect("validated ordering");
                        let queries = statements
                            .iter()
                            .enumerate()
                            .map(|(i, sql)| TimedQuery {
                                ts: i as f64 * STEP_SECS,
                                conn_id: 1,
                                sql: (*sql).to_string(),
                            })
                            .collect();
                        cases.push(AttackCase {
                            name: format!("o{oi}-l{li}-c{ci}-m{mi}-d{di}"),
                            queries,
                            expects_alert: true,
                            insert_index,
                        });
                    }
                }
            }
        }
    }
    Ok(cases)
}

/// The same test with the ransom payload swapped for an inconspicuous
/// string — everything else (order, timing, targets) is identical, so the
/// pair isolates the message pattern as the deciding feature.
pub fn benign_twin(case: &AttackCase) -> AttackCase {
    let mut twin = case.clone();
    let insert = &mut twin.queries[case.insert_index];
    let target = classify_statement(&insert.sql, None, "\u{0}")
        .into_iter()
        .find(|e| e.kind == SqlEventKind::InsertValues)
        .map(|e| match (e.db, e.table) {
            (Some(db), Some(table)) => format!("{db}.{table}"),
            (None, Some(table)) => table,
            _ => "victim_a.README_NOW".to_string(),
        })
        .unwrap_or_else(|| "victim_a.README_NOW".to_string());
    insert.sql = format!("INSERT INTO {target} VALUES ('{BENIGN_NOTE}')");
    twin.name = format!("{}-benign", case.name);
    twin.expects_alert = false;
    twin
}

/// Reconnaissance variants. All are table- or column-level listings: each
/// marks both the database and table layers, so every drop variant finds
/// its requisite token regardless of ordering.
const LISTINGS: [&str; 31] = [
    "SHOW TABLES FROM victim_a",
    "SHOW TABLES FROM victim_b",
    "SHOW FULL TABLES FROM victim_a",
    "SHOW FULL TABLES FROM victim_b",
    "SHOW TABLES FROM victim_a LIKE '%'",
    "SHOW COLUMNS FROM victim_a.customers",
    "SHOW COLUMNS FROM victim_a.invoices",
    "SHOW COLUMNS FROM victim_b.assets",
    "SHOW FULL COLUMNS FROM victim_a.customers",
    "SELECT TABLE_SCHEMA, TABLE_NAME FROM information_schema.tables",
    "SELECT * FROM information_schema.tables WHERE TABLE_SCHEMA = 'victim_a'",
    "SELECT TABLE_NAME FROM information_schema.tables WHERE TABLE_SCHEMA LIKE 'victim%'",
    "SELECT COUNT(*) FROM information_schema.tables",
    "SELECT COLUMN_NAME FROM information_schema.columns WHERE TABLE_SCHEMA = 'victim_a'",
    "SELECT * FROM information_schema.columns",
    "SELECT COLUMN_NAME, DATA_TYPE FROM information_schema.columns WHERE TABLE_NAME = 'customers'",
    "SELECT * FROM information_schema.key_column_usage",
    "SELECT CONSTRAINT_NAME FROM information_schema.key_column_usage WHERE TABLE_SCHEMA = 'victim_a'",
    "SELECT * FROM information_schema.partitions",
    "SELECT TABLE_NAME FROM information_schema.partitions WHERE TABLE_SCHEMA = 'victim_b'",
    "SELECT * FROM information_schema.files",
    "SELECT FILE_NAME FROM information_schema.files",
    "SELECT * FROM performance_schema.table_handles",
    "SELECT OBJECT_NAME FROM performance_schema.table_handles",
    "SELECT * FROM performance_schema.table_io_waits_summary_by_table",
    "SELECT OBJECT_SCHEMA, OBJECT_NAME FROM performance_schema.table_io_waits_summary_by_table",
    "SELECT * FROM performance_schema.table_io_waits_summary_by_index_usage",
    "SELECT * FROM performance_schema.table_lock_waits_summary_by_table",
    "SELECT * FROM performance_schema.objects_summary_global_by_type",
    "SELECT * FROM performance_schema.file_instances",
    "SELECT FILE_NAME FROM performance_schema.file_instances WHERE FILE_NAME LIKE '%.ibd'",
];

/// Ransom notes; every one carries a cryptocurrency amount the default
/// pattern matches, with varied casing, spacing, and number forms.
const MESSAGES: [&str; 29] = [
    "All your data is encrypted. Send 1 BTC to wallet 1FfmbHfnpaZjKFvyi1okTjJJusN455paPH to recover it.",
    "Pay 0.5 BTC within 48 hours or your databases are gone forever.",
    "We have your tables. Transfer 2 BTC to get them back.",
    "Recovery price: .5 Bitcoin. No negotiation.",
    "Deposit 20.1 btc or the backups are deleted.",
    "Your files are locked. 0.08 BTC unlocks them.",
    "Send exactly 1.5 Bitcoin to the address below.",
    "3 BTC. One week. Then everything is published.",
    "Wire 0.25 BTC to restore your schema.",
    "The decryption key costs 10 BTC.",
    "Pay up: 0.75 bitcoin to the usual address.",
    "You have 24 hours to send 5BTC.",
    "Transfer 12 btc and we will restore the dump.",
    "Your database was exported and wiped. 0.33 BTC buys silence.",
    "Need your orders table back? 1.25 Bitcoin.",
    "Ransom: 0.9 BTC. Contact us after payment.",
    "We kept a copy. It costs 4 BTC.",
    "Every table is gone until you pay 2.5 bitcoin.",
    "Send .75 BTC and read the recovery manual.",
    "Price doubles tomorrow: today 6 BTC.",
    "0.15 Bitcoin per database, pay for what you need.",
    "Management ignored us. Now it is 25 BTC.",
    "One-time offer: 0.6 btc for the master key.",
    "We escrow keys. Deposit 1 Bitcoin to start.",
    "The clock is running. 8 BTC stops it.",
    "Think of it as consulting fees: 3.5 BTC.",
    "Your DBA cannot help you. 0.45 BTC can.",
    "Full restore guaranteed after 7 bitcoin.",
    "Last warning. 15 BTC or permanent deletion.",
];

/// Destructive variants. Table-level only: see the module docs for why a
/// database-level drop cannot alert in every configured ordering.
const DROPS: [&str; 5] = [
    "DROP TABLE victim_a.customers",
    "DROP TABLE IF EXISTS victim_a.invoices",
    "DROP TABLE victim_b.assets",
    "DROP TABLE IF EXISTS victim_b.assets",
    "DROP TABLE victim_a.customers, victim_a.invoices",
];
