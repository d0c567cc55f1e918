//! Offline replay: drives a statement list through event extraction and
//! the classifier, exactly as the proxy would online.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::classifier::{Classifier, MarkingSnapshot};
use crate::cpn::ActionKind;
use crate::policy::SecurityPolicy;
use crate::resolver::{build_report, IncidentReport};
use crate::sql::{classify_statement, TimedQuery};

#[derive(Debug, Clone, Copy, Default)]
pub struct ReplayOptions {
    /// Strip every place timeout, so tokens never expire. Useful when a
    /// corpus spans more wall-clock time than the correlation window and
    /// the point under test is token merging, not expiry.
    pub disable_timeout: bool,
    /// Stop after event extraction; nothing reaches the net. This is the
    /// measurement baseline: all parsing cost, none of the classification.
    pub parse_only: bool,
}

/// Verdict counts over one replay, one bucket per disposition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictTotals {
    pub benign: usize,
    pub suspicious: usize,
    pub alerts: usize,
}

/// Everything a replay produced.
#[derive(Debug, Serialize)]
pub struct ReplayReport {
    /// Statements fed in.
    pub queries: usize,
    /// Events extracted from them (a statement can hold several).
    pub events: usize,
    pub totals: VerdictTotals,
    /// Marking after the last statement.
    pub snapshot: MarkingSnapshot,
    /// One report per notification request, in occurrence order.
    pub alerts: Vec<IncidentReport>,
    pub queries_per_second: f64,
}

/// Replays `queries` in timestamp order against a fresh classifier.
pub fn replay(
    queries: &[TimedQuery],
    policy: &SecurityPolicy,
    options: ReplayOptions,
) -> Result<ReplayReport, HarnessError> {
    let policy = effective_policy(policy, options);
    let mut classifier = Classifier::new(&policy)?;

    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.sort_by(|&a, &b| {
        queries[a].ts.partial_cmp(&queries[b].ts).unwrap_or(std::cmp::Ordering::Equal)
    });

    let started = Instant::now();
    let mut totals = VerdictTotals::default();
    let mut events = 0usize;
    let mut alerts = Vec::new();

    for &i in &order {
        let query = &queries[i];
        let extracted = classify_statement(&query.sql, None, &policy.object_prefix);
        events += extracted.len();
        if options.parse_only {
            // Keep the extraction observable so the baseline measures real
            // parsing work rather than an optimized-out loop.
            std::hint::black_box(&extracted);
            continue;
        }
        for event in extracted {
            let event = event.with_time(query.ts, query.conn_id);
            let verdict = classifier.process(&event)?;
            match verdict.disposition {
                crate::classifier::Disposition::Benign => totals.benign += 1,
                crate::classifier::Disposition::Suspicious => totals.suspicious += 1,
                crate::classifier::Disposition::Alert => totals.alerts += 1,
            }
            for action in &verdict.actions {
                if action.action == ActionKind::CreateNotification {
                    let contributing = classifier.events_for(&action.token.provenance);
                    alerts.push(build_report(
                        action,
                        contributing,
                        Vec::new(),
                        &policy.notification_target,
                    ));
                }
            }
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    Ok(ReplayReport {
        queries: queries.len(),
        events,
        totals,
        snapshot: classifier.snapshot(),
        alerts,
        queries_per_second: if elapsed > 0.0 { queries.len() as f64 / elapsed } else { 0.0 },
    })
}

/// Renders the report as a small fixed-width table — places across the
/// top, token counts underneath — plus the verdict and throughput lines.
pub fn render_summary(report: &ReplayReport) -> String {
    let mut header = String::from("");
    let mut counts = String::from("");
    for place in &report.snapshot.places {
        let width = place.place.len().max(5);
        header.push_str(&format!("{:>width$}  ", place.place, width = width));
        counts.push_str(&format!("{:>width$}  ", place.count, width = width));
    }
    let mut out = String::new();
    out.push_str(header.trim_end());
    out.push('\n');
    out.push_str(counts.trim_end());
    out.push('\n');
    out.push_str(&format!(
        "statements: {}  events: {}  benign: {}  suspicious: {}  alerts: {}\n",
        report.queries,
        report.events,
        report.totals.benign,
        report.totals.suspicious,
        report.totals.alerts,
    ));
    out.push_str(&format!("throughput: {:.0} queries/second\n", report.queries_per_second));
    out
}

fn effective_policy(policy: &SecurityPolicy, options: ReplayOptions) -> SecurityPolicy {
    let mut policy = policy.clone();
    if options.disable_timeout {
        for place in &mut policy.places {
            place.timeout = None;
        }
    }
    policy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{benign_twin, generate_attacks, AttackGenConfig};

    fn queries(statements: &[&str]) -> Vec<TimedQuery> {
        statements
            .iter()
            .enumerate()
            .map(|(i, sql)| TimedQuery { ts: i as f64, conn_id: 1, sql: (*sql).to_string() })
            .collect()
    }

    #[test]
    fn empty_input_reports_the_initial_marking() {
        let report = replay(&[], &SecurityPolicy::default(), ReplayOptions::default()).unwrap();
        assert_eq!(report.queries, 0);
        assert_eq!(report.totals, VerdictTotals::default());
        assert!(report.alerts.is_empty());
        let total_tokens: usize = report.snapshot.places.iter().map(|p| p.count).sum();
        assert_eq!(total_tokens, 3, "only the eternal initial tokens");
    }

    #[test]
    fn the_canonical_attack_sequence_alerts_once() {
        let qs = queries(&[
            "SHOW DATABASES",
            "CREATE TABLE please_read.warning (note TEXT)",
            "INSERT INTO please_read.warning VALUES ('send 0.2 BTC to 1abc')",
            "DROP DATABASE shop",
        ]);
        let report = replay(&qs, &SecurityPolicy::default(), ReplayOptions::default()).unwrap();
        assert_eq!(report.totals.alerts, 1);
        assert_eq!(report.alerts.len(), 1);
        assert_eq!(report.alerts[0].contributing_events.len(), 4);
        let notify = report
            .snapshot
            .places
            .iter()
            .find(|p| p.place == "Notify_Admin")
            .unwrap();
        assert_eq!(notify.count, 1);
    }

    #[test]
    fn parse_only_never_touches_the_net() {
        let qs = queries(&[
            "SHOW DATABASES",
            "CREATE TABLE please_read.warning (note TEXT)",
            "INSERT INTO please_read.warning VALUES ('send 0.2 BTC to 1abc')",
            "DROP DATABASE shop",
        ]);
        let options = ReplayOptions { parse_only: true, ..Default::default() };
        let report = replay(&qs, &SecurityPolicy::default(), options).unwrap();
        assert_eq!(report.events, 4);
        assert_eq!(report.totals, VerdictTotals::default());
        let total_tokens: usize = report.snapshot.places.iter().map(|p| p.count).sum();
        assert_eq!(total_tokens, 3);
    }

    #[test]
    fn statements_replay_in_timestamp_order_not_list_order() {
        // Same attack, shuffled in the list but ordered by ts.
        let mut qs = queries(&[
            "SHOW DATABASES",
            "CREATE TABLE please_read.warning (note TEXT)",
            "INSERT INTO please_read.warning VALUES ('send 0.2 BTC to 1abc')",
            "DROP DATABASE shop",
        ]);
        qs.reverse();
        let report = replay(&qs, &SecurityPolicy::default(), ReplayOptions::default()).unwrap();
        assert_eq!(report.totals.alerts, 1);
    }

    #[test]
    fn generated_cases_and_twins_reproduce_their_labels() {
        let mut config = AttackGenConfig::default_config();
        // A slice of the product is enough here; the full corpus is the
        // acceptance suite's job.
        config.listing_variants.truncate(3);
        config.message_variants.truncate(2);
        let policy = SecurityPolicy::default();
        let cases = generate_attacks(&config).unwrap();
        assert_eq!(cases.len(), 3 * 3 * 2 * 5);
        for case in &cases {
            let report = replay(&case.queries, &policy, ReplayOptions::default()).unwrap();
            assert!(
                (report.totals.alerts > 0) == case.expects_alert,
                "label mismatch for {}",
                case.name
            );
            let twin = benign_twin(case);
            let report = replay(&twin.queries, &policy, ReplayOptions::default()).unwrap();
            assert_eq!(report.totals.alerts, 0, "twin of {} alerted", case.name);
        }
    }

    #[test]
    fn replays_are_deterministic() {
        let qs = queries(&[
            "SHOW TABLES FROM shop",
            "CREATE TABLE shop.note (v TEXT)",
            "INSERT INTO shop.note VALUES ('pay 3 BTC')",
            "DROP TABLE shop.orders",
        ]);
        let policy = SecurityPolicy::default();
        let a = replay(&qs, &policy, ReplayOptions::default()).unwrap();
        let b = replay(&qs, &policy, ReplayOptions::default()).unwrap();
        assert_eq!(a.totals, b.totals);
        assert_eq!(
            serde_json::to_value(&a.snapshot).unwrap(),
            serde_json::to_value(&b.snapshot).unwrap()
        );
        assert_eq!(a.alerts.len(), b.alerts.len());
    }

    #[test]
    fn summaries_carry_place_counts_and_totals() {
        let report = replay(&[], &SecurityPolicy::default(), ReplayOptions::default()).unwrap();
        let text = render_summary(&report);
        assert!(text.contains("Notify_Admin"));
        assert!(text.contains("alerts: 0"));
    }
}
