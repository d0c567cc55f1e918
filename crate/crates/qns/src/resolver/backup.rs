//! Rename-based backups: destruction aimed at monitored objects is turned
//! into `RENAME TABLE` statements that move the data into the hidden
//! storage space, where listing rewrites keep it invisible.
//!
//! A `DROP TABLE` is *replaced* by one rename — the drop never reaches the
//! server. A `DROP DATABASE` cannot be replaced wholesale (the attacker
//! would notice the database surviving), so every table inside it is
//! renamed away first and the then-empty database is dropped as asked.

use std::collections::HashSet;

use crate::policy::SecurityPolicy;
use crate::sql::{SqlEvent, SqlEventKind};

/// Maximum identifier length MySQL accepts.
const MAX_IDENT: usize = 64;

/// Mints unique backup table names:
/// `<object_prefix>_<db>_<table>_<epoch>`, with a numeric suffix when the
/// same object is backed up twice within one second.
#[derive(Debug, Clone)]
pub struct BackupNamer {
    storage_space: String,
    prefix: String,
    used: HashSet<String>,
}

impl BackupNamer {
    pub fn new(policy: &SecurityPolicy) -> BackupNamer {
        BackupNamer {
            storage_space: policy.storage_space.clone(),
            prefix: policy.object_prefix.clone(),
            used: HashSet::new(),
        }
    }

    pub fn storage_space(&self) -> &str {
        &self.storage_space
    }

    /// Next free backup name for `db`.`table` at `epoch` seconds.
    pub fn target_name(&mut self, db: Option<&str>, table: &str, epoch: i64) -> String {
        let base = format!(
            "{}_{}_{}_{}",
            self.prefix,
            sanitize(db.unwrap_or("unknown")),
            sanitize(table),
            epoch
        );
        let mut candidate = clip(&base, MAX_IDENT);
        let mut n = 2;
        while !self.used.insert(candidate.clone()) {
            let suffix = format!("_{n}");
            candidate = format!("{}{}", clip(&base, MAX_IDENT - suffix.len()), suffix);
            n += 1;
        }
        candidate
    }
}

/// One table moved out of harm's way.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenameStep {
    pub from_db: Option<String>,
    pub from_table: String,
    pub to_space: String,
    pub to_name: String,
    /// Ready-to-execute statement.
    pub sql: String,
}

impl RenameStep {
    /// The backup object, storage-qualified, for reports.
    pub fn target(&self) -> String {
        format!("{}.{}", self.to_space, self.to_name)
    }
}

/// How to neutralize one destructive statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackupPlan {
    pub renames: Vec<RenameStep>,
    /// When true the renames run *instead of* the original statement;
    /// when false they run before it and the original still executes.
    pub replaces_original: bool,
}

/// Plans the backups for a destructive event; `None` when the event needs
/// none. `tables_in_db` is the current table inventory of the dropped
/// database (ignored for table drops).
pub fn backup_plan(
    event: &SqlEvent,
    tables_in_db: &[String],
    namer: &mut BackupNamer,
) -> Option<BackupPlan> {
    let epoch = event.ts.floor() as i64;
    match event.kind {
        SqlEventKind::DropTable => {
            let table = event.table.as_deref()?;
            let step = rename_step(event.db.as_deref(), table, namer, epoch);
            Some(BackupPlan { renames: vec![step], replaces_original: true })
        }
        SqlEventKind::DropDatabase => {
            let db = event.db.as_deref()?;
            let renames = tables_in_db
                .iter()
                .map(|table| rename_step(Some(db), table, namer, epoch))
                .collect();
            Some(BackupPlan { renames, replaces_original: false })
        }
        _ => None,
    }
}

fn rename_step(db: Option<&str>, table: &str, namer: &mut BackupNamer, epoch: i64) -> RenameStep {
    let to_name = namer.target_name(db, table, epoch);
    let from = match db {
        Some(db) => format!("{}.{}", quote_ident(db), quote_ident(table)),
        None => quote_ident(table),
    };
    let sql = format!(
        "RENAME TABLE {} TO {}.{}",
        from,
        quote_ident(namer.storage_space()),
        quote_ident(&to_name)
    );
    RenameStep {
        from_db: db.map(str::to_string),
        from_table: table.to_string(),
        to_space: namer.storage_space().to_string(),
        to_name,
        sql,
    }
}

fn quote_ident(ident: &str) -> String {
    format!("`{}`", ident.replace('`', "``"))
}

/// Backup names must be well-formed identifiers regardless of the source
/// name; anything exotic becomes `_`.
fn sanitize(part: &str) -> String {
    part.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

fn clip(s: &str, max: usize) -> String {
    // `sanitize` output is pure ASCII, so byte slicing is char-safe.
    s[..s.len().min(max)].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::classify_statement;

    fn namer() -> BackupNamer {
        BackupNamer::new(&SecurityPolicy::default_policy())
    }

    fn event(sql: &str, ts: f64) -> SqlEvent {
        classify_statement(sql, Some("shop"), "dimaqs").remove(0).with_time(ts, 1)
    }

    #[test]
    fn drop_table_becomes_a_single_replacing_rename() {
        let mut namer = namer();
        let plan = backup_plan(&event("DROP TABLE shop.orders", 1000.0), &[], &mut namer).unwrap();
        assert!(plan.replaces_original);
        assert_eq!(plan.renames.len(), 1);
        assert_eq!(
            plan.renames[0].sql,
            "RENAME TABLE `shop`.`orders` TO `dimaqs_backup`.`dimaqs_shop_orders_1000`"
        );
        assert_eq!(plan.renames[0].target(), "dimaqs_backup.dimaqs_shop_orders_1000");
    }

    #[test]
    fn drop_database_renames_inventory_then_keeps_the_drop() {
        let mut namer = namer();
        let tables = ["customers".to_string(), "orders".to_string(), "invoices".to_string()];
        let plan =
            backup_plan(&event("DROP DATABASE victim", 2000.0), &tables, &mut namer).unwrap();
        assert!(!plan.replaces_original);
        assert_eq!(plan.renames.len(), 3);
        for (step, table) in plan.renames.iter().zip(&tables) {
            assert_eq!(step.from_db.as_deref(), Some("victim"));
            assert_eq!(&step.from_table, table);
            assert!(step.to_name.starts_with("dimaqs_victim_"));
        }
        // Distinct targets even though everything happens the same second.
        let mut names: Vec<_> = plan.renames.iter().map(|s| &s.to_name).collect();
        names.dedup();
        assert_eq!(names.len(), 3);
    }

    #[test]
    fn same_object_same_second_gets_numeric_suffixes() {
        let mut namer = namer();
        let a = namer.target_name(Some("shop"), "orders", 42);
        let b = namer.target_name(Some("shop"), "orders", 42);
        let c = namer.target_name(Some("shop"), "orders", 42);
        assert_eq!(a, "dimaqs_shop_orders_42");
        assert_eq!(b, "dimaqs_shop_orders_42_2");
        assert_eq!(c, "dimaqs_shop_orders_42_3");
        // A different second is a different base name again.
        assert_eq!(namer.target_name(Some("shop"), "orders", 43), "dimaqs_shop_orders_43");
    }

    #[test]
    fn names_are_sanitized_and_fit_mysql_limits() {
        let mut namer = namer();
        let name = namer.target_name(Some("we!rd db"), "täble", 7);
        assert!(name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));

        let long = "x".repeat(80);
        let name = namer.target_name(Some("shop"), &long, 7);
        assert!(name.len() <= 64);
        let again = namer.target_name(Some("shop"), &long, 7);
        assert!(again.len() <= 64);
        assert_ne!(name, again);
    }

    #[test]
    fn unqualified_drop_without_session_db() {
        let mut namer = namer();
        let ev = classify_statement("DROP TABLE loose", None, "dimaqs").remove(0).with_time(5.0, 1);
        let plan = backup_plan(&ev, &[], &mut namer).unwrap();
        assert_eq!(plan.renames[0].sql, "RENAME TABLE `loose` TO `dimaqs_backup`.`dimaqs_unknown_loose_5`");
    }

    #[test]
    fn non_destructive_events_need_no_plan() {
        let mut namer = namer();
        for sql in ["SHOW TABLES", "CREATE TABLE t (a INT)", "INSERT INTO t VALUES (1)"] {
            assert!(backup_plan(&event(sql, 0.0), &[], &mut namer).is_none(), "for {sql}");
        }
    }
}
