//! Drives classified SQL events through the policy's signature net and
//! grades each one: benign, suspicious, or alert.
//!
//! The classifier owns the net, the live marking, and a monotonically
//! increasing event-id counter. Every event advances the engine clock —
//! expiry and merging run even for statements the net ignores — and the
//! ids of events that actually fired transitions are kept so an alert's
//! token provenance can be expanded back into the statements that caused
//! it.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::cpn::{
    ActionKind, ActionRequest, ColorData, ColoredToken, ConditionEval, EngineEvent, EventId,
    FiredRecord, Marking, Net, StepError,
};
use crate::policy::{PolicyError, SecurityPolicy, COND_INSERT_TARGET_MATCHES};
use crate::sql::{SqlEvent, SqlEventKind};

/// Severity of a single processed event, in increasing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    /// The net did not react.
    Benign,
    /// Part of the signature matched: tokens appeared on watch places.
    Suspicious,
    /// The signature completed (or tampering was attempted); a
    /// notification action was requested.
    Alert,
}

impl std::fmt::Display for Disposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Disposition::Benign => "benign",
            Disposition::Suspicious => "suspicious",
            Disposition::Alert => "alert",
        };
        f.write_str(s)
    }
}

/// Outcome of processing one event.
#[derive(Debug, Clone)]
pub struct Verdict {
    /// Id assigned to the event (provenance entries refer to these).
    pub event_id: EventId,
    pub disposition: Disposition,
    /// Countermeasures requested by places that received new tokens.
    pub actions: Vec<ActionRequest>,
    /// Transition firings, in order.
    pub fired: Vec<FiredRecord>,
    /// Tokens dropped by per-place timeout before matching.
    pub expired: usize,
}

/// Everything worth keeping about a processed statement, retained for
/// events that fired transitions so reports can cite them later.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EventMeta {
    pub id: EventId,
    pub ts: f64,
    pub conn_id: u64,
    pub kind: SqlEventKind,
    pub db: Option<String>,
    pub table: Option<String>,
    pub raw_sql: String,
}

/// Point-in-time view of the marking: token counts and attribute tuples
/// per place (timestamps and provenance omitted so snapshots compare
/// across runs).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct MarkingSnapshot {
    pub places: Vec<PlaceSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct PlaceSnapshot {
    pub place: String,
    pub count: usize,
    pub tokens: Vec<BTreeMap<String, String>>,
}

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("transition `{transition}` names unknown condition `{condition}`")]
    UnknownCondition { transition: String, condition: String },
    #[error("no place named `{0}`")]
    UnknownPlace(String),
    #[error(transparent)]
    Engine(#[from] StepError),
}

/// Longest ransom-message excerpt carried on a token, in characters.
const EXCERPT_CHARS: usize = 256;

/// Pseudo-place named in actions for statements that touch protected
/// objects directly; such statements bypass the net entirely.
pub const TAMPER_GUARD: &str = "Tamper_Guard";

pub struct Classifier {
    policy: SecurityPolicy,
    net: Net,
    marking: Marking,
    next_id: EventId,
    /// Metadata for events that fired transitions (or tampered) — the only
    /// ids that can ever appear in token provenance.
    meta: BTreeMap<EventId, EventMeta>,
    /// True when no epsilon transition can be enabled: every [`Net::step`]
    /// ends at epsilon quiescence, and only token arrivals can enable a
    /// transition, so the flag survives any number of non-firing events.
    /// Seeding or resetting bypasses the net and clears it.
    quiescent: bool,
    /// Names of places that start empty; a token arriving on one of these
    /// marks progress along a signature.
    watched_places: Vec<String>,
}

impl Classifier {
    pub fn new(policy: &SecurityPolicy) -> Result<Classifier, ClassifierError> {
        policy.validate()?;
        let net = policy.build_net()?;
        for t in net.transitions() {
            for condition in &t.conditions {
                if condition != COND_INSERT_TARGET_MATCHES {
                    return Err(ClassifierError::UnknownCondition {
                        transition: t.name.clone(),
                        condition: condition.clone(),
                    });
                }
            }
        }
        let marking = net.initial_marking();
        let watched_places = net
            .places()
            .iter()
            .filter(|p| p.initial_tokens == 0)
            .map(|p| p.name.clone())
            .collect();
        Ok(Classifier {
            policy: policy.clone(),
            net,
            marking,
            next_id: 1,
            meta: BTreeMap::new(),
            quiescent: false,
            watched_places,
        })
    }

    /// Feeds one event through the net and grades the outcome.
    pub fn process(&mut self, event: &SqlEvent) -> Result<Verdict, ClassifierError> {
        let id = self.next_id;
        self.next_id += 1;
        let now = event.ts.floor() as i64;

        if event.kind == SqlEventKind::TamperAttempt {
            // Direct interference with protected objects is an alert in
            // its own right; the clock still advances for everyone else.
            let expired = self.marking.expire(&self.net, now).len();
            self.remember(id, event);
            let mut color = ColorData::plain(now);
            color.attributes.insert("reason".into(), "tamper_attempt".into());
            if let Some(db) = &event.db {
                color.attributes.insert("db".into(), db.clone());
            }
            if let Some(table) = &event.table {
                color.attributes.insert("table".into(), table.clone());
            }
            let token = ColoredToken::with_provenance(color, vec![id]);
            let actions = [ActionKind::CreateBackup, ActionKind::CreateNotification]
                .into_iter()
                .map(|action| ActionRequest {
                    place: TAMPER_GUARD.to_string(),
                    action,
                    token: token.clone(),
                })
                .collect();
            return Ok(Verdict {
                event_id: id,
                disposition: Disposition::Alert,
                actions,
                fired: Vec::new(),
                expired,
            });
        }

        let kind = self.trigger_kind(event);
        if self.quiescent && !self.net.has_trigger_kind(kind) {
            // Nothing listens to this kind and no epsilon work is pending,
            // so the net cannot move; only the clock advances. Ordinary
            // traffic takes this path and stays near parse speed.
            let expired = self.marking.expire(&self.net, now).len();
            return Ok(Verdict {
                event_id: id,
                disposition: Disposition::Benign,
                actions: Vec::new(),
                fired: Vec::new(),
                expired,
            });
        }

        // Attributes only matter to transitions this kind can trigger;
        // skipping them for inert statements keeps replay near parse speed.
        let attributes = if self.net.has_trigger_kind(kind) {
            self.event_attributes(event)
        } else {
            BTreeMap::new()
        };
        let engine_event = EngineEvent { id, kind: kind.to_string(), attributes };
        let outcome = self.net.step(&mut self.marking, &engine_event, now, &Conditions)?;
        self.quiescent = true;
        if !outcome.fired.is_empty() {
            self.remember(id, event);
        }

        let disposition = if outcome
            .actions
            .iter()
            .any(|a| a.action == ActionKind::CreateNotification)
        {
            Disposition::Alert
        } else if outcome.fired.iter().any(|f| {
            f.produced
                .iter()
                .any(|(place, _)| self.watched_places.iter().any(|w| w == place))
        }) {
            Disposition::Suspicious
        } else {
            Disposition::Benign
        };

        Ok(Verdict {
            event_id: id,
            disposition,
            actions: outcome.actions,
            fired: outcome.fired,
            expired: outcome.expired.len(),
        })
    }

    /// Engine trigger for the event. Inserts and updates only interest the
    /// net when a value matches the ransom pattern; they are then offered
    /// as a synthesized ransom-insert occurrence.
    fn trigger_kind(&self, event: &SqlEvent) -> &'static str {
        match event.kind {
            SqlEventKind::InsertValues | SqlEventKind::UpdateValues => {
                if event.values.iter().any(|v| self.policy.matches_ransom(v)) {
                    crate::policy::kinds::RANSOM_INSERT
                } else {
                    event.kind.as_str()
                }
            }
            other => other.as_str(),
        }
    }

    fn event_attributes(&self, event: &SqlEvent) -> BTreeMap<String, String> {
        let mut attrs = BTreeMap::new();
        // A rename is tracked under the table's new identity, so a later
        // ransom insert into the renamed table matches.
        let (db, table) = match (&event.kind, &event.rename_to) {
            (SqlEventKind::RenameTable, Some(target)) => {
                let mut parts = target.rsplitn(2, '.');
                let table = parts.next().map(str::to_string);
                let db = parts.next().map(str::to_string).or_else(|| event.db.clone());
                (db, table)
            }
            _ => (event.db.clone(), event.table.clone()),
        };
        if let Some(db) = db {
            attrs.insert("db".into(), db);
        }
        if let Some(table) = table {
            attrs.insert("table".into(), table);
        }
        if matches!(event.kind, SqlEventKind::InsertValues | SqlEventKind::UpdateValues) {
            if let Some(hit) = event.values.iter().find(|v| self.policy.matches_ransom(v)) {
                attrs.insert("msg_excerpt".into(), hit.chars().take(EXCERPT_CHARS).collect());
            }
        }
        attrs
    }

    fn remember(&mut self, id: EventId, event: &SqlEvent) {
        self.meta.insert(id, EventMeta {
            id,
            ts: event.ts,
            conn_id: event.conn_id,
            kind: event.kind,
            db: event.db.clone(),
            table: event.table.clone(),
            raw_sql: event.raw_sql.clone(),
        });
    }

    pub fn event_meta(&self, id: EventId) -> Option<&EventMeta> {
        self.meta.get(&id)
    }

    /// Expands token provenance into the recorded statements, oldest first.
    pub fn events_for(&self, provenance: &[EventId]) -> Vec<EventMeta> {
        provenance.iter().filter_map(|id| self.meta.get(id).cloned()).collect()
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn marking(&self) -> &Marking {
        &self.marking
    }

    pub fn policy(&self) -> &SecurityPolicy {
        &self.policy
    }

    /// Puts the classifier back at the initial marking with no history.
    pub fn reset(&mut self) {
        self.marking = self.net.initial_marking();
        self.meta.clear();
        self.next_id = 1;
        self.quiescent = false;
    }

    /// Places a token directly, bypassing the net (used to reconstruct a
    /// busy marking for measurements and drills).
    pub fn seed_token(
        &mut self,
        place: &str,
        attributes: BTreeMap<String, String>,
        ts: f64,
    ) -> Result<(), ClassifierError> {
        let pid = self
            .net
            .place_id(place)
            .ok_or_else(|| ClassifierError::UnknownPlace(place.to_string()))?;
        self.marking
            .add_token(pid, ColoredToken::new(ColorData::new(attributes, ts.floor() as i64)));
        self.quiescent = false;
        Ok(())
    }

    pub fn snapshot(&self) -> MarkingSnapshot {
        let places = self
            .net
            .places()
            .iter()
            .enumerate()
            .map(|(pid, place)| {
                let mut tokens: Vec<BTreeMap<String, String>> = self
                    .marking
                    .tokens(pid)
                    .iter()
                    .map(|t| t.color.attributes.clone())
                    .collect();
                tokens.sort();
                PlaceSnapshot { place: place.name.clone(), count: tokens.len(), tokens }
            })
            .collect();
        MarkingSnapshot { places }
    }
}

/// One serializable log record per processed event.
pub fn verdict_log_line(event: &SqlEvent, verdict: &Verdict) -> serde_json::Value {
    serde_json::json!({
        "ts": event.ts,
        "conn_id": event.conn_id,
        "kind": event.kind,
        "disposition": verdict.disposition,
        "fired": verdict.fired.iter().map(|f| f.transition.as_str()).collect::<Vec<_>>(),
        "actions": verdict.actions.iter().map(|a| &a.action).collect::<Vec<_>>(),
    })
}

/// Evaluates the conditions the bundled policies may name.
struct Conditions;

impl ConditionEval for Conditions {
    fn token_admissible(
        &self,
        condition: &str,
        event: Option<&EngineEvent>,
        _place: &str,
        token: &ColoredToken,
    ) -> bool {
        match condition {
            // The insert must target the very table the candidate token
            // recorded: same table name, and same database when both
            // sides know theirs.
            COND_INSERT_TARGET_MATCHES => {
                let Some(event) = event else { return false };
                let attrs = &token.color.attributes;
                match (attrs.get("table"), event.attributes.get("table")) {
                    (Some(a), Some(b)) if a == b => {}
                    _ => return false,
                }
                match (attrs.get("db"), event.attributes.get("db")) {
                    (Some(a), Some(b)) => a == b,
                    _ => true,
                }
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::classify_statement;
    use proptest::prelude::*;

    fn classifier() -> Classifier {
        Classifier::new(&SecurityPolicy::default_policy()).unwrap()
    }

    fn feed(clf: &mut Classifier, ts: f64, sql: &str) -> Verdict {
        let events = classify_statement(sql, Some("shop"), "dimaqs");
        let mut last = None;
        for event in events {
            last = Some(clf.process(&event.with_time(ts, 1)).unwrap());
        }
        last.expect("statement should classify to at least one event")
    }

    #[test]
    fn canonical_attack_sequence_alerts_with_full_provenance() {
        let mut clf = classifier();

        let v1 = feed(&mut clf, 10.0, "SHOW TABLES");
        assert_eq!(v1.disposition, Disposition::Suspicious);
        assert!(v1.actions.iter().any(|a| a.action == ActionKind::Rewriting));

        let v2 = feed(&mut clf, 20.0, "CREATE TABLE read_me (note TEXT)");
        assert_eq!(v2.disposition, Disposition::Suspicious);
        assert!(v2.actions.iter().any(|a| a.action == ActionKind::TriggerCreation));

        let v3 = feed(&mut clf, 30.0, "INSERT INTO read_me (note) VALUES ('pay 5 BTC')");
        assert_eq!(v3.disposition, Disposition::Suspicious);
        assert!(v3.actions.is_empty());

        let v4 = feed(&mut clf, 40.0, "DROP TABLE read_me");
        assert_eq!(v4.disposition, Disposition::Alert);

        let notify = v4
            .actions
            .iter()
            .find(|a| a.action == ActionKind::CreateNotification)
            .expect("notification requested");
        assert_eq!(notify.place, "Notify_Admin");
        // All four contributing statements, nothing else.
        assert_eq!(notify.token.provenance, vec![1, 2, 3, 4]);
        assert!(v4.actions.iter().any(|a| a.action == ActionKind::CreateBackup));

        let cited = clf.events_for(&notify.token.provenance);
        assert_eq!(cited.len(), 4);
        assert_eq!(cited[0].kind, SqlEventKind::ListTables);
        assert_eq!(cited[3].kind, SqlEventKind::DropTable);
    }

    #[test]
    fn ransom_pattern_gates_the_insert_transition() {
        let mut clf = classifier();
        feed(&mut clf, 0.0, "SHOW TABLES");
        feed(&mut clf, 1.0, "CREATE TABLE read_me (note TEXT)");

        // Harmless content: the net must not advance.
        let v = feed(&mut clf, 2.0, "INSERT INTO read_me (note) VALUES ('hello world')");
        assert_eq!(v.disposition, Disposition::Benign);
        assert!(v.fired.is_empty());

        let v = feed(&mut clf, 3.0, "INSERT INTO read_me (note) VALUES ('send .5 Bitcoin')");
        assert_eq!(v.disposition, Disposition::Suspicious);
        assert_eq!(v.fired[0].transition, "Insert_Msg");
        let (_, token) = &v.fired[0].produced[0];
        assert!(token.color.attributes["msg_excerpt"].contains(".5 Bitcoin"));
    }

    #[test]
    fn ransom_insert_into_unrelated_table_is_ignored() {
        let mut clf = classifier();
        feed(&mut clf, 0.0, "SHOW TABLES");
        feed(&mut clf, 1.0, "CREATE TABLE read_me (note TEXT)");
        let v = feed(&mut clf, 2.0, "INSERT INTO other_tab (note) VALUES ('send 9 BTC')");
        assert_eq!(v.disposition, Disposition::Benign);
        assert!(v.fired.is_empty());
    }

    #[test]
    fn rename_counts_as_creation_under_the_new_name() {
        let mut clf = classifier();
        feed(&mut clf, 0.0, "SHOW COLUMNS FROM customers");
        let v = feed(&mut clf, 1.0, "RENAME TABLE customers TO read_me");
        assert_eq!(v.disposition, Disposition::Suspicious);
        assert_eq!(v.fired[0].transition, "Mod_Tab");

        let v = feed(&mut clf, 2.0, "INSERT INTO read_me (name) VALUES ('wire 20.1 btc')");
        assert_eq!(v.fired[0].transition, "Insert_Msg");
    }

    #[test]
    fn tamper_attempt_bypasses_the_net() {
        let mut clf = classifier();
        let v = feed(&mut clf, 5.0, "DROP DATABASE dimaqs_backup");
        assert_eq!(v.disposition, Disposition::Alert);
        assert!(v.fired.is_empty());
        let kinds: Vec<_> = v.actions.iter().map(|a| a.action).collect();
        assert_eq!(kinds, vec![ActionKind::CreateBackup, ActionKind::CreateNotification]);
        for a in &v.actions {
            assert_eq!(a.place, TAMPER_GUARD);
            assert_eq!(a.token.provenance, vec![v.event_id]);
        }
        assert!(clf.event_meta(v.event_id).is_some());
    }

    #[test]
    fn stale_listings_expire_before_use() {
        let mut clf = classifier();
        feed(&mut clf, 0.0, "SHOW TABLES");
        // Well past the 120s window: the listing token is gone.
        let v = feed(&mut clf, 300.0, "CREATE TABLE read_me (note TEXT)");
        assert_eq!(v.disposition, Disposition::Benign);
        assert!(v.fired.is_empty());
        assert_eq!(v.expired, 2); // DB_Listed and Tab_Listed tokens

        // Within the window it still matches.
        feed(&mut clf, 400.0, "SHOW TABLES");
        let v = feed(&mut clf, 460.0, "CREATE TABLE read_me2 (note TEXT)");
        assert_eq!(v.disposition, Disposition::Suspicious);
    }

    #[test]
    fn repeated_listings_merge_to_one_token() {
        let mut clf = classifier();
        for i in 0..100 {
            feed(&mut clf, i as f64 * 0.5, "SHOW DATABASES");
        }
        let pid = clf.net().place_id("DB_Listed").unwrap();
        assert_eq!(clf.marking().count(pid), 1);
    }

    #[test]
    fn snapshot_lists_counts_and_attributes() {
        let mut clf = classifier();
        feed(&mut clf, 0.0, "SHOW TABLES FROM shop");
        feed(&mut clf, 1.0, "CREATE TABLE shop.read_me (note TEXT)");
        let snap = clf.snapshot();
        let by_name: BTreeMap<_, _> =
            snap.places.iter().map(|p| (p.place.as_str(), p)).collect();
        assert_eq!(by_name["Initial_1"].count, 1);
        assert_eq!(by_name["DB_Listed"].count, 1);
        assert_eq!(by_name["Tab_Created"].count, 1);
        assert_eq!(by_name["Tab_Created"].tokens[0]["table"], "read_me");
        assert_eq!(by_name["Notify_Admin"].count, 0);

        // Snapshots are plain data: they round-trip through JSON.
        let json = serde_json::to_string(&snap).unwrap();
        let back: MarkingSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn seeding_and_reset() {
        let mut clf = classifier();
        clf.seed_token("Tab_Created", BTreeMap::from([("table".into(), "x".into())]), 0.0)
            .unwrap();
        let pid = clf.net().place_id("Tab_Created").unwrap();
        assert_eq!(clf.marking().count(pid), 1);
        assert!(clf.seed_token("NoSuchPlace", BTreeMap::new(), 0.0).is_err());

        clf.reset();
        assert_eq!(clf.marking().count(pid), 0);
        assert_eq!(clf.marking().total(), 3);
    }

    #[test]
    fn unknown_condition_is_rejected_up_front() {
        let mut policy = SecurityPolicy::default_policy();
        for t in &mut policy.transitions {
            if t.name == "Insert_Msg" {
                t.conditions = vec!["no_such_condition".into()];
            }
        }
        let err = Classifier::new(&policy).err().expect("construction must fail");
        match err {
            ClassifierError::UnknownCondition { transition, condition } => {
                assert_eq!(transition, "Insert_Msg");
                assert_eq!(condition, "no_such_condition");
            }
            other => panic!("expected UnknownCondition, got {other:?}"),
        }
    }

    #[test]
    fn verdict_log_line_shape() {
        let mut clf = classifier();
        let event = classify_statement("SHOW DATABASES", None, "dimaqs")
            .remove(0)
            .with_time(7.25, 42);
        let verdict = clf.process(&event).unwrap();
        let line = verdict_log_line(&event, &verdict);
        assert_eq!(line["ts"], 7.25);
        assert_eq!(line["conn_id"], 42);
        assert_eq!(line["kind"], "ListDatabases");
        assert_eq!(line["disposition"], "suspicious");
        assert_eq!(line["fired"][0], "List_DB");
    }

    proptest! {
        /// Shifting every timestamp by the same whole-second offset never
        /// changes what the classifier decides.
        #[test]
        fn dispositions_are_translation_invariant(
            shift in 0i64..1_000_000,
            gaps in proptest::collection::vec(0i64..200, 1..12),
        ) {
            let pool = [
                "SHOW TABLES",
                "CREATE TABLE read_me (note TEXT)",
                "INSERT INTO read_me (note) VALUES ('pay 5 BTC')",
                "DROP TABLE read_me",
                "SELECT 1",
            ];
            let run = |base: i64| -> Vec<Disposition> {
                let mut clf = classifier();
                let mut t = base;
                let mut out = Vec::new();
                for (i, gap) in gaps.iter().enumerate() {
                    t += gap;
                    let sql = pool[i % pool.len()];
                    for ev in classify_statement(sql, Some("shop"), "dimaqs") {
                        out.push(clf.process(&ev.with_time(t as f64, 1)).unwrap().disposition);
                    }
                }
                out
            };
            prop_assert_eq!(run(0), run(shift));
        }
    }
}
