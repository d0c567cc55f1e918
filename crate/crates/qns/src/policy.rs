//! Security policy: the signature net, the ransom-message pattern, naming
//! conventions for hidden objects, and notification routing — everything
//! an operator may tune, in one JSON-serializable document.
//!
//! The built-in [`SecurityPolicy::default_policy`] encodes the
//! listing → creation → ransom-insert → destruction signature: three
//! eternal `Initial_*` places self-loop into the listing transitions, the
//! listed/created/deleted places carry the countermeasure actions, and the
//! automatic `Always` transition raises `Notify_Admin` once an object
//! deletion coincides with a fresh ransom insert. See
//! `docs/policy-schema.md` for the file format.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpn::{
    ActionKind, ColorProducer, InputArc, Net, NetError, OutputArc, Place, Transition, Trigger,
};

/// Environment variable consulted when no explicit policy path is given.
pub const POLICY_ENV_VAR: &str = "QNS_POLICY";

/// Seconds a token may rest on a non-initial place before it expires.
pub const DEFAULT_TIMEOUT_SECS: i64 = 120;

/// Name prefix of every object the sentinel hides and protects.
pub const DEFAULT_OBJECT_PREFIX: &str = "dimaqs";

/// Database that receives renamed copies of objects slated for deletion.
pub const DEFAULT_STORAGE_SPACE: &str = "dimaqs_backup";

/// Matched (case-insensitively) against inserted or updated values: an
/// amount followed by a bitcoin denomination. "Bitcoin" alone, with no
/// digits, does not match.
pub const DEFAULT_RANSOM_PATTERN: &str = r"(\d*[.]){0,1}\d+\s*(BTC|Bitcoin)";

pub const DEFAULT_NOTIFICATION_TARGET: &str = "dba@localhost";

/// Condition on `Insert_Msg`: the insert's target table must equal the
/// `table` attribute of the bound `Tab_Created` token.
pub const COND_INSERT_TARGET_MATCHES: &str = "insert_target_matches_created_table";

// Event kinds the default net's triggers name; the classifier emits these.
pub mod kinds {
    pub const LIST_DATABASES: &str = "ListDatabases";
    pub const LIST_TABLES: &str = "ListTables";
    pub const LIST_COLUMNS: &str = "ListColumns";
    pub const CREATE_TABLE: &str = "CreateTable";
    pub const DROP_TABLE: &str = "DropTable";
    pub const DROP_DATABASE: &str = "DropDatabase";
    pub const RENAME_TABLE: &str = "RenameTable";
    /// Synthesized by the classifier for inserts/updates whose values
    /// match the ransom pattern.
    pub const RANSOM_INSERT: &str = "RansomInsert";
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot read policy file `{path}`: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("policy file `{path}` is not valid JSON: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid policy: {0}")]
    Validation(String),
    #[error("invalid policy net: {0}")]
    Net(#[from] NetError),
}

/// Where an effective policy came from (for startup logging).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySource {
    Flag(PathBuf),
    Environment(PathBuf),
    BuiltIn,
}

impl std::fmt::Display for PolicySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicySource::Flag(p) => write!(f, "--policy {}", p.display()),
            PolicySource::Environment(p) => write!(f, "{}={}", POLICY_ENV_VAR, p.display()),
            PolicySource::BuiltIn => write!(f, "built-in default"),
        }
    }
}

/// The complete, validated configuration of the sentinel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecurityPolicy {
    pub places: Vec<Place>,
    pub transitions: Vec<Transition>,
    /// Case-insensitive regex applied to inserted/updated values.
    pub ransom_pattern: String,
    /// Timeout stamped on non-initial places by the default constructor;
    /// loaded files carry explicit per-place timeouts.
    pub default_timeout: i64,
    pub storage_space: String,
    pub object_prefix: String,
    /// Recipient of incident notifications (address or webhook URL,
    /// depending on the sink).
    pub notification_target: String,
    #[serde(skip)]
    ransom_compiled: OnceLock<Regex>,
}

impl PartialEq for SecurityPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.places == other.places
            && self.transitions == other.transitions
            && self.ransom_pattern == other.ransom_pattern
            && self.default_timeout == other.default_timeout
            && self.storage_space == other.storage_space
            && self.object_prefix == other.object_prefix
            && self.notification_target == other.notification_target
    }
}

impl Default for SecurityPolicy {
    fn default() -> Self {
        Self::default_policy()
    }
}

fn timed(name: &str, timeout: i64, actions: Vec<ActionKind>) -> Place {
    Place::new(name).with_timeout(timeout).with_actions(actions)
}

/// `in_` and `out` name places; every input arc is weight-1/any-color, and
/// the first output per input place forms the self-loop.
fn transition(
    name: &str,
    trigger: Trigger,
    conditions: Vec<String>,
    in_: &[&str],
    out: &[(&str, ColorProducer)],
) -> Transition {
    Transition {
        name: name.into(),
        trigger,
        conditions,
        inputs: in_.iter().map(|p| InputArc::any(*p)).collect(),
        outputs: out
            .iter()
            .map(|(p, producer)| OutputArc { place: (*p).into(), weight: 1, producer: producer.clone() })
            .collect(),
    }
}

impl SecurityPolicy {
    /// The built-in signature: databases/tables/columns get listed, a table
    /// is created or renamed, a ransom note lands in it, and an object is
    /// destroyed — at which point the net notifies the administrator.
    pub fn default_policy() -> SecurityPolicy {
        use ActionKind::*;
        use ColorProducer::{FromEvent, MergeInputs};
        let t = DEFAULT_TIMEOUT_SECS;

        let places = vec![
            Place::new("Initial_1").with_initial_tokens(1),
            Place::new("Initial_2").with_initial_tokens(1),
            Place::new("Initial_3").with_initial_tokens(1),
            timed("DB_Listed", t, vec![Rewriting]),
            timed("Tab_Listed", t, vec![Rewriting]),
            timed("Col_Listed", t, vec![Rewriting]),
            timed("Tab_Created", t, vec![TriggerCreation]),
            timed("Obj_Del", t, vec![CreateBackup]),
            timed("Msg_Inserted", t, vec![]),
            timed("Notify_Admin", t, vec![CreateNotification]),
        ];

        let ev = |k: &str| Trigger::Event(k.to_string());
        let transitions = vec![
            transition("List_DB", ev(kinds::LIST_DATABASES), vec![], &["Initial_1"], &[
                ("Initial_1", FromEvent),
                ("DB_Listed", FromEvent),
            ]),
            transition("List_Tab", ev(kinds::LIST_TABLES), vec![], &["Initial_2"], &[
                ("Initial_2", FromEvent),
                ("DB_Listed", FromEvent),
                ("Tab_Listed", FromEvent),
            ]),
            transition("List_Col", ev(kinds::LIST_COLUMNS), vec![], &["Initial_3"], &[
                ("Initial_3", FromEvent),
                ("DB_Listed", FromEvent),
                ("Tab_Listed", FromEvent),
                ("Col_Listed", FromEvent),
            ]),
            transition("Create_Tab", ev(kinds::CREATE_TABLE), vec![], &["DB_Listed"], &[
                ("DB_Listed", FromEvent),
                ("Tab_Created", FromEvent),
            ]),
            transition("Del_DB", ev(kinds::DROP_DATABASE), vec![], &["DB_Listed"], &[
                ("DB_Listed", FromEvent),
                ("Obj_Del", FromEvent),
            ]),
            transition("Del_Tab", ev(kinds::DROP_TABLE), vec![], &["Tab_Listed"], &[
                ("Tab_Listed", FromEvent),
                ("Obj_Del", FromEvent),
            ]),
            transition("Mod_Tab", ev(kinds::RENAME_TABLE), vec![], &["Col_Listed"], &[
                ("Col_Listed", FromEvent),
                ("Tab_Created", FromEvent),
            ]),
            transition(
                "Insert_Msg",
                ev(kinds::RANSOM_INSERT),
                vec![COND_INSERT_TARGET_MATCHES.to_string()],
                &["Tab_Created"],
                &[("Tab_Created", FromEvent), ("Msg_Inserted", FromEvent)],
            ),
            // Automatic: an object deletion while a ransom message sits in
            // a created table completes the signature. Consumes the
            // deletion, keeps the message, raises the notification.
            transition("Always", Trigger::Epsilon, vec![], &["Obj_Del", "Msg_Inserted"], &[
                ("Msg_Inserted", MergeInputs),
                ("Notify_Admin", MergeInputs),
            ]),
        ];

        let policy = SecurityPolicy {
            places,
            transitions,
            ransom_pattern: DEFAULT_RANSOM_PATTERN.to_string(),
            default_timeout: DEFAULT_TIMEOUT_SECS,
            storage_space: DEFAULT_STORAGE_SPACE.to_string(),
            object_prefix: DEFAULT_OBJECT_PREFIX.to_string(),
            notification_target: DEFAULT_NOTIFICATION_TARGET.to_string(),
            ransom_compiled: OnceLock::new(),
        };
        policy.validate().expect("built-in policy must validate");
        policy
    }

    /// Loads and validates a policy file (JSON).
    pub fn load(path: impl AsRef<Path>) -> Result<SecurityPolicy, PolicyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })?;
        let policy: SecurityPolicy = serde_json::from_str(&text)
            .map_err(|source| PolicyError::Parse { path: path.to_path_buf(), source })?;
        policy.validate()?;
        Ok(policy)
    }

    /// Serializes the policy to `path` as pretty-printed JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("policy serializes");
        fs::write(path, text.as_bytes())
            .map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })
    }

    /// Picks the effective policy: explicit path, else [`POLICY_ENV_VAR`],
    /// else the built-in default.
    pub fn resolve(explicit: Option<&Path>) -> Result<(SecurityPolicy, PolicySource), PolicyError> {
        if let Some(path) = explicit {
            return Ok((Self::load(path)?, PolicySource::Flag(path.to_path_buf())));
        }
        if let Some(path) = std::env::var_os(POLICY_ENV_VAR).filter(|v| !v.is_empty()) {
            let path = PathBuf::from(path);
            return Ok((Self::load(&path)?, PolicySource::Environment(path)));
        }
        Ok((Self::default_policy(), PolicySource::BuiltIn))
    }

    /// Structural and value validation; called by every constructor path.
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.default_timeout <= 0 {
            return Err(PolicyError::Validation(format!(
                "default_timeout must be positive, got {}",
                self.default_timeout
            )));
        }
        if !is_identifier(&self.object_prefix) {
            return Err(PolicyError::Validation(format!(
                "object_prefix `{}` is not a valid identifier prefix",
                self.object_prefix
            )));
        }
        if !is_identifier(&self.storage_space) {
            return Err(PolicyError::Validation(format!(
                "storage_space `{}` is not a valid identifier",
                self.storage_space
            )));
        }
        compile_pattern(&self.ransom_pattern).map_err(|e| {
            PolicyError::Validation(format!("ransom_pattern does not compile: {e}"))
        })?;
        // Arc references, duplicate names, timeout signs.
        self.build_net()?;
        Ok(())
    }

    /// Compiles the policy's places and transitions into an executable net.
    pub fn build_net(&self) -> Result<Net, PolicyError> {
        Ok(Net::new(self.places.clone(), self.transitions.clone())?)
    }

    /// True when `text` contains a ransom-amount mention per the policy
    /// pattern (case-insensitive).
    pub fn matches_ransom(&self, text: &str) -> bool {
        self.ransom_compiled
            .get_or_init(|| {
                compile_pattern(&self.ransom_pattern).expect("validated pattern compiles")
            })
            .is_match(text)
    }

    /// Names of places whose initial marking is non-empty. The classifier
    /// treats token arrivals everywhere else as suspicious.
    pub fn initial_places(&self) -> Vec<&str> {
        self.places
            .iter()
            .filter(|p| p.initial_tokens > 0)
            .map(|p| p.name.as_str())
            .collect()
    }
}

fn compile_pattern(pattern: &str) -> Result<Regex, regex::Error> {
    RegexBuilder::new(pattern).case_insensitive(true).build()
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_policy_builds_the_signature_net() {
        let policy = SecurityPolicy::default_policy();
        let net = policy.build_net().unwrap();
        assert_eq!(net.places().len(), 10);
        assert_eq!(net.transitions().len(), 9);

        // Exactly one place notifies, and it is the signature's sink.
        let notifying: Vec<_> = net
            .places()
            .iter()
            .filter(|p| p.actions.contains(&ActionKind::CreateNotification))
            .collect();
        assert_eq!(notifying.len(), 1);
        assert_eq!(notifying[0].name, "Notify_Admin");

        // Initial places hold one eternal token each; every other place
        // expires tokens after the default window.
        for p in net.places() {
            if p.initial_tokens > 0 {
                assert!(p.name.starts_with("Initial_"));
                assert_eq!(p.timeout, None);
            } else {
                assert_eq!(p.timeout, Some(DEFAULT_TIMEOUT_SECS));
            }
        }
        assert_eq!(net.initial_marking().total(), 3);
    }

    #[test]
    fn ransom_pattern_vectors() {
        let p = SecurityPolicy::default_policy();
        for hit in ["5 BTC", ".5 Bitcoin", "20.1 btc", "Send 5 BTC to 1abc", "pay .5 bitcoin now", "100BTC"] {
            assert!(p.matches_ransom(hit), "should match: {hit}");
        }
        for miss in ["Bitcoin", "I love Bitcoin", "btc", "no digits here", ""] {
            assert!(!p.matches_ransom(miss), "should not match: {miss}");
        }
    }

    #[test]
    fn save_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let policy = SecurityPolicy::default_policy();
        policy.save(&path).unwrap();
        let loaded = SecurityPolicy::load(&path).unwrap();
        assert_eq!(policy, loaded);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut p = SecurityPolicy::default_policy();
        p.default_timeout = -5;
        assert!(matches!(p.validate(), Err(PolicyError::Validation(_))));

        let mut p = SecurityPolicy::default_policy();
        p.ransom_pattern = "(unclosed".into();
        assert!(matches!(p.validate(), Err(PolicyError::Validation(_))));

        let mut p = SecurityPolicy::default_policy();
        p.object_prefix = "1bad prefix".into();
        assert!(matches!(p.validate(), Err(PolicyError::Validation(_))));

        let mut p = SecurityPolicy::default_policy();
        p.places[3].timeout = Some(-1);
        assert!(p.validate().is_err());

        let mut p = SecurityPolicy::default_policy();
        p.transitions[0].inputs[0].place = "NoSuchPlace".into();
        assert!(matches!(p.validate(), Err(PolicyError::Net(_))));
    }

    #[test]
    fn load_reports_parse_and_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.json");
        std::fs::write(&path, b"{ not json").unwrap();
        assert!(matches!(SecurityPolicy::load(&path), Err(PolicyError::Parse { .. })));
        assert!(matches!(
            SecurityPolicy::load(dir.path().join("missing.json")),
            Err(PolicyError::Io { .. })
        ));
    }

    #[test]
    fn minimal_hand_written_policy_parses() {
        let text = r#"{
            "places": [
                {"name": "start", "initial_tokens": 1},
                {"name": "seen", "timeout": 60, "actions": ["rewriting"]}
            ],
            "transitions": [
                {
                    "name": "observe",
                    "trigger": "ListDatabases",
                    "inputs": [{"place": "start"}],
                    "outputs": [{"place": "start"}, {"place": "seen"}]
                },
                {
                    "name": "decay",
                    "trigger": null,
                    "inputs": [{"place": "seen", "weight": 2}]
                }
            ],
            "ransom_pattern": "\\d+ ?coins",
            "default_timeout": 60,
            "storage_space": "vault",
            "object_prefix": "hidden",
            "notification_target": "ops@example.org"
        }"#;
        let policy: SecurityPolicy = serde_json::from_str(text).unwrap();
        policy.validate().unwrap();
        assert_eq!(policy.transitions[1].trigger, Trigger::Epsilon);
        assert_eq!(policy.transitions[0].inputs[0].weight, 1);
        assert!(policy.matches_ransom("send 30 coins"));
    }
}
