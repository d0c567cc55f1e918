//! # qns — query-net sentinel
//!
//! Detects ransomware-style attack sequences against SQL databases by
//! matching the stream of observed statements against a colored Petri net
//! signature, and responds with listing rewrites, rename-based backups and
//! administrator notifications.
//!
//! The pipeline, front to back:
//!
//! 1. [`sql`] parses each statement (MySQL grammar) into typed
//!    [`SqlEvent`](sql::SqlEvent)s — listings, table creation, value
//!    inserts, drops, renames, tamper attempts.
//! 2. [`classifier`] drives those events through the signature net from
//!    [`policy`] and produces a [`Verdict`](classifier::Verdict) per event:
//!    benign, suspicious, or alert, plus the place actions the net requests.
//! 3. [`resolver`] turns actions into countermeasures: hidden-object
//!    filters appended to listing queries, `DROP`s replaced by `RENAME`s
//!    into a hidden storage space, incident reports assembled from token
//!    provenance, and notification delivery.
//! 4. [`proxy`] taps the MySQL wire protocol between client and server and
//!    applies the pipeline inline; [`harness`] replays query logs offline,
//!    generates labelled attack corpora, and benchmarks throughput.
//!
//! The net engine itself ([`cpn`]) is generic: places hold timed,
//! attribute-colored tokens; transitions are triggered by named events or
//! fire automatically; tokens merge when identical up to timestamp and
//! expire per-place. Nothing in it knows about SQL.
//!
//! ## Example
//!
//! ```
//! use qns::classifier::{Classifier, Disposition};
//! use qns::policy::SecurityPolicy;
//!
//! let policy = SecurityPolicy::default_policy();
//! let mut clf = Classifier::new(&policy).unwrap();
//!
//! let mut at = |t: f64, sql: &str| {
//!     let events = qns::sql::classify_statement(sql, None, &policy.object_prefix);
//!     events
//!         .into_iter()
//!         .map(|e| clf.process(&e.with_time(t, 1)).unwrap().disposition)
//!         .max()
//!         .unwrap()
//! };
//!
//! assert_eq!(at(0.0, "SHOW TABLES"), Disposition::Suspicious);
//! assert_eq!(at(1.0, "CREATE TABLE please_read (warning TEXT)"), Disposition::Suspicious);
//! assert_eq!(
//!     at(2.0, "INSERT INTO please_read (warning) VALUES ('send 5 BTC to x')"),
//!     Disposition::Suspicious
//! );
//! // Dropping a listed table completes the signature.
//! assert_eq!(at(3.0, "DROP TABLE please_read"), Disposition::Alert);
//! ```

pub mod classifier;
pub mod cpn;
pub mod harness;
pub mod policy;
pub mod proxy;
pub mod resolver;
pub mod sql;
