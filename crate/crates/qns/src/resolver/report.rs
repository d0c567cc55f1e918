//! Incident reports: a notification request plus the event metadata its
//! token provenance points at, flattened into one serializable document.

use serde::{Deserialize, Serialize};

use crate::classifier::{EventMeta, TAMPER_GUARD};
use crate::cpn::ActionRequest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentReport {
    /// Timestamp of the newest contributing statement.
    pub detected_at: f64,
    /// `signature_complete` or `tamper_attempt`.
    pub cause: String,
    /// Net place (or guard) that raised the notification.
    pub place: String,
    /// The statements that drove the net there, oldest first.
    pub contributing_events: Vec<EventMeta>,
    /// Matched ransom-message fragment, when one was involved.
    pub ransom_excerpt: Option<String>,
    /// Storage-qualified names of backups taken while responding.
    pub backups: Vec<String>,
    pub notification_target: String,
}

/// Assembles the report for one notification request. `events` is the
/// expansion of the request token's provenance
/// ([`Classifier::events_for`](crate::classifier::Classifier::events_for));
/// order does not matter, the report sorts chronologically.
pub fn build_report(
    notification: &ActionRequest,
    mut events: Vec<EventMeta>,
    backups: Vec<String>,
    notification_target: &str,
) -> IncidentReport {
    events.sort_by_key(|e| e.id);
    let detected_at = events
        .iter()
        .map(|e| e.ts)
        .fold(f64::NEG_INFINITY, f64::max);
    let detected_at = if detected_at.is_finite() {
        detected_at
    } else {
        notification.token.color.timestamp as f64
    };
    IncidentReport {
        detected_at,
        cause: if notification.place == TAMPER_GUARD {
            "tamper_attempt".to_string()
        } else {
            "signature_complete".to_string()
        },
        place: notification.place.clone(),
        ransom_excerpt: notification.token.color.attributes.get("msg_excerpt").cloned(),
        contributing_events: events,
        backups,
        notification_target: notification_target.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Classifier;
    use crate::cpn::ActionKind;
    use crate::policy::SecurityPolicy;
    use crate::sql::{classify_statement, SqlEventKind};

    fn run_attack() -> (Classifier, ActionRequest) {
        let policy = SecurityPolicy::default_policy();
        let mut clf = Classifier::new(&policy).unwrap();
        let mut last = None;
        for (t, sql) in [
            (0.0, "SHOW TABLES"),
            (1.0, "CREATE TABLE payme (note TEXT)"),
            (2.0, "INSERT INTO payme (note) VALUES ('wire 5 BTC today')"),
            (3.5, "DROP TABLE payme"),
        ] {
            for ev in classify_statement(sql, Some("shop"), "dimaqs") {
                last = Some(clf.process(&ev.with_time(t, 9)).unwrap());
            }
        }
        let notify = last
            .unwrap()
            .actions
            .into_iter()
            .find(|a| a.action == ActionKind::CreateNotification)
            .unwrap();
        (clf, notify)
    }

    #[test]
    fn report_cites_the_full_attack_chronologically() {
        let (clf, notify) = run_attack();
        let events = clf.events_for(&notify.token.provenance);
        let report = build_report(&notify, events, vec!["dimaqs_backup.x".into()], "dba@example.org");

        assert_eq!(report.cause, "signature_complete");
        assert_eq!(report.place, "Notify_Admin");
        assert_eq!(report.detected_at, 3.5);
        assert_eq!(report.contributing_events.len(), 4);
        let kinds: Vec<_> = report.contributing_events.iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![
                SqlEventKind::ListTables,
                SqlEventKind::CreateTable,
                SqlEventKind::InsertValues,
                SqlEventKind::DropTable,
            ]
        );
        assert_eq!(report.ransom_excerpt.as_deref(), Some("wire 5 BTC today"));
        assert_eq!(report.backups, vec!["dimaqs_backup.x"]);
    }

    #[test]
    fn tamper_reports_carry_their_cause() {
        let policy = SecurityPolicy::default_policy();
        let mut clf = Classifier::new(&policy).unwrap();
        let ev = classify_statement("DROP DATABASE dimaqs_backup", None, "dimaqs")
            .remove(0)
            .with_time(10.0, 3);
        let verdict = clf.process(&ev).unwrap();
        let notify = verdict
            .actions
            .iter()
            .find(|a| a.action == ActionKind::CreateNotification)
            .unwrap();
        let report = build_report(
            notify,
            clf.events_for(&notify.token.provenance),
            vec![],
            "dba@example.org",
        );
        assert_eq!(report.cause, "tamper_attempt");
        assert_eq!(report.contributing_events.len(), 1);
        assert_eq!(report.contributing_events[0].raw_sql, "DROP DATABASE dimaqs_backup");
    }

    #[test]
    fn reports_round_trip_through_json() {
        let (clf, notify) = run_attack();
        let report =
            build_report(&notify, clf.events_for(&notify.token.provenance), vec![], "dba@x");
        let json = serde_json::to_string(&report).unwrap();
        let back: IncidentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
