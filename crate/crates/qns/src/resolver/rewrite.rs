//! Listing-query rewriting: hides objects under the protected prefix by
//! appending a `NOT LIKE` filter to every statement that enumerates
//! databases, tables, columns, or server metadata.
//!
//! The filter is inserted *textually* — a small quote/paren-aware scanner
//! finds the right spot — so the statement the server sees is the client's
//! original bytes plus one appended predicate. `WHERE` is used when the
//! statement has no top-level `WHERE` yet, `AND` otherwise, and insertion
//! happens before any trailing `GROUP BY`/`ORDER BY`/`LIMIT`-style clause.
//!
//! Three listing forms get no filter: `SHOW TABLES` and `SHOW COLUMNS`
//! enumerate within one database, where protected objects never live, and
//! `SHOW PLUGINS` has no name column to filter on — it passes through
//! annotated so operators know.

use std::ops::ControlFlow;

use sqlparser::ast::{visit_relations, ObjectName, Statement};
use sqlparser::dialect::MySqlDialect;
use sqlparser::keywords::Keyword;
use sqlparser::parser::Parser;
use sqlparser::tokenizer::{Token, Tokenizer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RewriteError {
    #[error("not a listing statement")]
    NotListing,
    #[error("listing statement could not be parsed: {0}")]
    Unparseable(String),
}

/// Result of rewriting one listing statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewrite {
    /// Statement to forward; identical to the input when `changed` is false.
    pub sql: String,
    pub changed: bool,
    /// Why an unchanged statement was left alone.
    pub note: Option<&'static str>,
}

/// The listing statements the rewriter recognizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListingForm {
    ShowDatabases,
    ShowTables,
    ShowColumns,
    ShowTriggers,
    ShowVariables,
    ShowPlugins,
    /// `SELECT` against one of the monitored catalog relations.
    CatalogSelect(CatalogRelation),
}

/// System catalog relations whose rows can expose protected names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogRelation {
    InfoSchemaColumns,
    InfoSchemaFiles,
    InfoSchemaKeyColumnUsage,
    InfoSchemaPartitions,
    InfoSchemaSchemata,
    InfoSchemaTables,
    MysqlDb,
    PerfSchemaFileInstances,
    PerfSchemaObjectsSummaryGlobalByType,
    PerfSchemaTableHandles,
    PerfSchemaTableIoWaitsSummaryByIndexUsage,
    PerfSchemaTableIoWaitsSummaryByTable,
    PerfSchemaTableLockWaitsSummaryByTable,
}

/// True when [`rewrite_listing`] would accept the statement.
pub fn is_rewritable_listing(sql: &str) -> bool {
    detect_listing_form(sql).is_some()
}

/// Appends the hiding filter appropriate for the statement's form.
///
/// Returns [`RewriteError::NotListing`] for anything that is not a
/// recognized listing; callers stream every statement through and skip
/// those.
pub fn rewrite_listing(sql: &str, hidden_prefix: &str) -> Result<Rewrite, RewriteError> {
    let form = detect_listing_form(sql).ok_or(RewriteError::NotListing)?;

    let filter = match form {
        ListingForm::ShowTables | ListingForm::ShowColumns => {
            return Ok(Rewrite {
                sql: sql.to_string(),
                changed: false,
                note: Some("rewriting not needed: listing is scoped to one database"),
            });
        }
        ListingForm::ShowPlugins => {
            return Ok(Rewrite {
                sql: sql.to_string(),
                changed: false,
                note: Some("no rewriting possible: no name column to filter on"),
            });
        }
        ListingForm::ShowDatabases => format!("`Database` NOT LIKE '{hidden_prefix}%'"),
        ListingForm::ShowTriggers => format!("`Trigger` NOT LIKE '{hidden_prefix}%'"),
        ListingForm::ShowVariables => format!("`Variable_name` NOT LIKE '{hidden_prefix}%'"),
        ListingForm::CatalogSelect(relation) => catalog_filter(relation, hidden_prefix),
    };

    // Already filtered (e.g. the statement came back through the tap).
    if sql.contains(&filter) {
        return Ok(Rewrite { sql: sql.to_string(), changed: false, note: Some("filter already present") });
    }

    let scan = match form {
        ListingForm::CatalogSelect(_) => scan_select(sql),
        _ => scan_show(sql),
    };

    if scan.like_pos.is_some() && scan.where_pos.is_none() {
        // `SHOW DATABASES LIKE 'x'` admits no additional WHERE; the
        // pattern already restricts output, and probing for the protected
        // prefix by name is caught upstream as tampering.
        return Ok(Rewrite {
            sql: sql.to_string(),
            changed: false,
            note: Some("LIKE clause present; cannot attach a filter"),
        });
    }

    let connective = if scan.where_pos.is_some() { "AND" } else { "WHERE" };
    let mut out = String::with_capacity(sql.len() + filter.len() + 8);
    out.push_str(&sql[..scan.insert_at]);
    out.push(' ');
    out.push_str(connective);
    out.push(' ');
    out.push_str(&filter);
    out.push_str(&sql[scan.insert_at..]);
    Ok(Rewrite { sql: out, changed: true, note: None })
}

fn catalog_filter(relation: CatalogRelation, prefix: &str) -> String {
    use CatalogRelation::*;
    match relation {
        InfoSchemaColumns | InfoSchemaSchemata | InfoSchemaTables => {
            format!("SCHEMA_NAME NOT LIKE '{prefix}%'")
        }
        InfoSchemaFiles => format!("FILE_NAME NOT LIKE './{prefix}%'"),
        InfoSchemaKeyColumnUsage | InfoSchemaPartitions => {
            format!("TABLE_SCHEMA NOT LIKE '{prefix}%'")
        }
        MysqlDb => format!("Db NOT LIKE '{prefix}%'"),
        PerfSchemaFileInstances => format!("FILE_NAME NOT LIKE '%/{prefix}%/'"),
        PerfSchemaObjectsSummaryGlobalByType
        | PerfSchemaTableHandles
        | PerfSchemaTableIoWaitsSummaryByIndexUsage
        | PerfSchemaTableIoWaitsSummaryByTable
        | PerfSchemaTableLockWaitsSummaryByTable => {
            format!("OBJECT_SCHEMA NOT LIKE '{prefix}%'")
        }
    }
}

/// Identifies the statement's listing form, if any, from its leading
/// keywords (for `SHOW`) or its relations (for `SELECT`).
pub fn detect_listing_form(sql: &str) -> Option<ListingForm> {
    let tokens = Tokenizer::new(&MySqlDialect {}, sql).tokenize().ok()?;
    let mut words = tokens.iter().filter_map(|t| match t {
        Token::Word(w) => Some(w),
        _ => None,
    });

    match words.next()?.keyword {
        Keyword::SHOW => {
            // Skip display modifiers: SHOW [FULL|EXTENDED|GLOBAL|SESSION] <what>
            let what = words.find(|w| {
                !matches!(
                    w.keyword,
                    Keyword::FULL | Keyword::EXTENDED | Keyword::GLOBAL | Keyword::SESSION
                )
            })?;
            match what.value.to_ascii_uppercase().as_str() {
                "DATABASES" | "SCHEMAS" => Some(ListingForm::ShowDatabases),
                "TABLES" => Some(ListingForm::ShowTables),
                "COLUMNS" | "FIELDS" => Some(ListingForm::ShowColumns),
                "TRIGGERS" => Some(ListingForm::ShowTriggers),
                "VARIABLES" => Some(ListingForm::ShowVariables),
                "PLUGINS" => Some(ListingForm::ShowPlugins),
                _ => None,
            }
        }
        Keyword::SELECT => {
            let statements = Parser::parse_sql(&MySqlDialect {}, sql).ok()?;
            let query = match statements.as_slice() {
                [Statement::Query(q)] => q,
                _ => return None,
            };
            let mut found = None;
            let _ = visit_relations(query.as_ref(), |name: &ObjectName| {
                if found.is_none() {
                    found = catalog_relation(name);
                }
                ControlFlow::<()>::Continue(())
            });
            found.map(ListingForm::CatalogSelect)
        }
        _ => None,
    }
}

fn catalog_relation(name: &ObjectName) -> Option<CatalogRelation> {
    let parts = &name.0;
    if parts.len() != 2 {
        return None;
    }
    let db = parts[0].value.to_ascii_lowercase();
    let table = parts[1].value.to_ascii_lowercase();
    use CatalogRelation::*;
    let relation = match (db.as_str(), table.as_str()) {
        ("information_schema", "columns") => InfoSchemaColumns,
        ("information_schema", "files") => InfoSchemaFiles,
        ("information_schema", "key_column_usage") => InfoSchemaKeyColumnUsage,
        ("information_schema", "partitions") => InfoSchemaPartitions,
        ("information_schema", "schemata") => InfoSchemaSchemata,
        ("information_schema", "tables") => InfoSchemaTables,
        ("mysql", "db") => MysqlDb,
        ("performance_schema", "file_instances") => PerfSchemaFileInstances,
        ("performance_schema", "objects_summary_global_by_type") => {
            PerfSchemaObjectsSummaryGlobalByType
        }
        ("performance_schema", "table_handles") => PerfSchemaTableHandles,
        ("performance_schema", "table_io_waits_summary_by_index_usage") => {
            PerfSchemaTableIoWaitsSummaryByIndexUsage
        }
        ("performance_schema", "table_io_waits_summary_by_table") => {
            PerfSchemaTableIoWaitsSummaryByTable
        }
        ("performance_schema", "table_lock_waits_summary_by_table") => {
            PerfSchemaTableLockWaitsSummaryByTable
        }
        _ => return None,
    };
    Some(relation)
}

// ---------------------------------------------------------------------
// Byte-level scanning. Works on the original text so the rewrite
// preserves the client's bytes exactly; understands MySQL quoting
// ('..', "..", `..`), comments (--, #, /* */), and parenthesis depth.
// ---------------------------------------------------------------------

struct Scan {
    /// First top-level `WHERE` (for `SELECT`: after the top-level `FROM`).
    where_pos: Option<usize>,
    /// First top-level `LIKE` outside any `WHERE` (SHOW-style pattern).
    like_pos: Option<usize>,
    /// Byte offset at which the filter text is inserted: right after the
    /// last significant byte before any trailing clause — or before the
    /// final `;`/whitespace/comment when there is none.
    insert_at: usize,
}

/// Trailing clauses the appended predicate must precede.
fn is_trailing_clause(word: &str) -> bool {
    const TRAILING: &[&str] = &[
        "GROUP", "HAVING", "WINDOW", "ORDER", "LIMIT", "OFFSET", "FETCH", "UNION", "EXCEPT",
        "INTERSECT", "INTO", "FOR", "LOCK", "PROCEDURE",
    ];
    TRAILING.iter().any(|t| word.eq_ignore_ascii_case(t))
}

fn scan_select(sql: &str) -> Scan {
    scan(sql, true)
}

fn scan_show(sql: &str) -> Scan {
    scan(sql, false)
}

fn scan(sql: &str, clauses_follow_from: bool) -> Scan {
    let bytes = sql.as_bytes();
    let mut i = 0;
    let mut depth = 0usize;
    let mut from_seen = !clauses_follow_from;
    let mut where_pos = None;
    let mut like_pos = None;
    // Captured the moment a trailing clause is seen; `sig_end` tracks the
    // end of the last significant byte (comments, whitespace and `;` do
    // not count), which is exactly where inserted text belongs.
    let mut insert_at: Option<usize> = None;
    let mut sig_end = 0usize;

    while i < bytes.len() {
        match bytes[i] {
            b'\'' | b'"' => {
                i = skip_quoted(bytes, i);
                sig_end = i;
            }
            b'`' => {
                i = skip_backquoted(bytes, i);
                sig_end = i;
            }
            b'#' => i = skip_line_comment(bytes, i),
            b'-' if bytes.get(i + 1) == Some(&b'-') => i = skip_line_comment(bytes, i),
            b'/' if bytes.get(i + 1) == Some(&b'*') => i = skip_block_comment(bytes, i),
            b'(' => {
                depth += 1;
                i += 1;
                sig_end = i;
            }
            b')' => {
                depth = depth.saturating_sub(1);
                i += 1;
                sig_end = i;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$')
                {
                    i += 1;
                }
                if depth == 0 && insert_at.is_none() {
                    let word = &sql[start..i];
                    if word.eq_ignore_ascii_case("FROM") {
                        from_seen = true;
                    } else if from_seen {
                        if word.eq_ignore_ascii_case("WHERE") {
                            if where_pos.is_none() {
                                where_pos = Some(start);
                            }
                        } else if word.eq_ignore_ascii_case("LIKE") {
                            if like_pos.is_none() && where_pos.is_none() {
                                like_pos = Some(start);
                            }
                        } else if is_trailing_clause(word) {
                            insert_at = Some(sig_end);
                        }
                    }
                }
                sig_end = i;
            }
            b';' => i += 1,
            c if c.is_ascii_whitespace() => i += 1,
            _ => {
                i += 1;
                sig_end = i;
            }
        }
    }

    Scan { where_pos, like_pos, insert_at: insert_at.unwrap_or(sig_end) }
}

/// `'...'` / `"..."` with backslash escapes and doubled quotes.
fn skip_quoted(bytes: &[u8], start: usize) -> usize {
    let quote = bytes[start];
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b if b == quote => {
                if bytes.get(i + 1) == Some(&quote) {
                    i += 2; // doubled quote inside the literal
                } else {
                    return i + 1;
                }
            }
            _ => i += 1,
        }
    }
    i
}

/// `` `...` `` with doubled backquotes.
fn skip_backquoted(bytes: &[u8], start: usize) -> usize {
    let mut i = start + 1;
    while i < bytes.len() {
        if bytes[i] == b'`' {
            if bytes.get(i + 1) == Some(&b'`') {
                i += 2;
            } else {
                return i + 1;
            }
        } else {
            i += 1;
        }
    }
    i
}

fn skip_line_comment(bytes: &[u8], start: usize) -> usize {
    let mut i = start;
    while i < bytes.len() && bytes[i] != b'\n' {
        i += 1;
    }
    i
}

fn skip_block_comment(bytes: &[u8], start: usize) -> usize {
    let mut i = start + 2;
    while i + 1 < bytes.len() {
        if bytes[i] == b'*' && bytes[i + 1] == b'/' {
            return i + 2;
        }
        i += 1;
    }
    bytes.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: &str = "dimaqs";

    fn rewritten(sql: &str) -> String {
        let r = rewrite_listing(sql, P).unwrap();
        assert!(r.changed, "expected a rewrite for {sql:?}");
        r.sql
    }

    fn unchanged(sql: &str) -> Rewrite {
        let r = rewrite_listing(sql, P).unwrap();
        assert!(!r.changed, "expected pass-through for {sql:?}");
        assert_eq!(r.sql, sql);
        r
    }

    #[test]
    fn show_statements_gain_where_filters() {
        assert_eq!(rewritten("SHOW DATABASES"), "SHOW DATABASES WHERE `Database` NOT LIKE 'dimaqs%'");
        assert_eq!(rewritten("SHOW TRIGGERS"), "SHOW TRIGGERS WHERE `Trigger` NOT LIKE 'dimaqs%'");
        assert_eq!(
            rewritten("SHOW VARIABLES"),
            "SHOW VARIABLES WHERE `Variable_name` NOT LIKE 'dimaqs%'"
        );
        assert_eq!(
            rewritten("SHOW GLOBAL VARIABLES"),
            "SHOW GLOBAL VARIABLES WHERE `Variable_name` NOT LIKE 'dimaqs%'"
        );
        assert_eq!(
            rewritten("SHOW TRIGGERS FROM shop"),
            "SHOW TRIGGERS FROM shop WHERE `Trigger` NOT LIKE 'dimaqs%'"
        );
    }

    #[test]
    fn existing_where_gets_an_and_conjunct() {
        assert_eq!(
            rewritten("SHOW DATABASES WHERE `Database` != 'test'"),
            "SHOW DATABASES WHERE `Database` != 'test' AND `Database` NOT LIKE 'dimaqs%'"
        );
        assert_eq!(
            rewritten("SELECT * FROM information_schema.tables WHERE TABLE_TYPE = 'BASE TABLE'"),
            "SELECT * FROM information_schema.tables WHERE TABLE_TYPE = 'BASE TABLE' \
             AND SCHEMA_NAME NOT LIKE 'dimaqs%'"
        );
    }

    #[test]
    fn catalog_selects_gain_their_columns() {
        let cases = [
            ("information_schema.columns", "SCHEMA_NAME NOT LIKE 'dimaqs%'"),
            ("information_schema.files", "FILE_NAME NOT LIKE './dimaqs%'"),
            ("information_schema.key_column_usage", "TABLE_SCHEMA NOT LIKE 'dimaqs%'"),
            ("information_schema.partitions", "TABLE_SCHEMA NOT LIKE 'dimaqs%'"),
            ("information_schema.schemata", "SCHEMA_NAME NOT LIKE 'dimaqs%'"),
            ("information_schema.tables", "SCHEMA_NAME NOT LIKE 'dimaqs%'"),
            ("mysql.db", "Db NOT LIKE 'dimaqs%'"),
            ("performance_schema.file_instances", "FILE_NAME NOT LIKE '%/dimaqs%/'"),
            ("performance_schema.objects_summary_global_by_type", "OBJECT_SCHEMA NOT LIKE 'dimaqs%'"),
            ("performance_schema.table_handles", "OBJECT_SCHEMA NOT LIKE 'dimaqs%'"),
            (
                "performance_schema.table_io_waits_summary_by_index_usage",
                "OBJECT_SCHEMA NOT LIKE 'dimaqs%'",
            ),
            ("performance_schema.table_io_waits_summary_by_table", "OBJECT_SCHEMA NOT LIKE 'dimaqs%'"),
            ("performance_schema.table_lock_waits_summary_by_table", "OBJECT_SCHEMA NOT LIKE 'dimaqs%'"),
        ];
        for (relation, filter) in cases {
            let sql = format!("SELECT * FROM {relation}");
            assert_eq!(rewritten(&sql), format!("{sql} WHERE {filter}"), "for {relation}");
        }
    }

    #[test]
    fn pass_through_forms_are_annotated() {
        assert!(unchanged("SHOW TABLES").note.unwrap().contains("not needed"));
        assert!(unchanged("SHOW TABLES FROM shop").note.is_some());
        assert!(unchanged("SHOW COLUMNS FROM customers").note.unwrap().contains("not needed"));
        assert!(unchanged("SHOW PLUGINS").note.unwrap().contains("no rewriting possible"));
    }

    #[test]
    fn non_listing_statements_are_refused() {
        for sql in [
            "SELECT * FROM customers",
            "INSERT INTO t VALUES (1)",
            "DROP TABLE x",
            "SHOW STATUS",
            "SET NAMES utf8",
        ] {
            assert_eq!(rewrite_listing(sql, P), Err(RewriteError::NotListing), "for {sql}");
            assert!(!is_rewritable_listing(sql));
        }
        assert!(is_rewritable_listing("SHOW DATABASES"));
        assert!(is_rewritable_listing("SELECT 1 FROM information_schema.tables"));
    }

    #[test]
    fn filter_lands_before_trailing_clauses() {
        assert_eq!(
            rewritten("SELECT table_name FROM information_schema.tables ORDER BY table_name LIMIT 5"),
            "SELECT table_name FROM information_schema.tables WHERE SCHEMA_NAME NOT LIKE 'dimaqs%' \
             ORDER BY table_name LIMIT 5"
        );
        assert_eq!(
            rewritten(
                "SELECT table_schema, COUNT(*) FROM information_schema.tables \
                 WHERE engine = 'InnoDB' GROUP BY table_schema"
            ),
            "SELECT table_schema, COUNT(*) FROM information_schema.tables \
             WHERE engine = 'InnoDB' AND SCHEMA_NAME NOT LIKE 'dimaqs%' GROUP BY table_schema"
        );
    }

    #[test]
    fn quoting_and_comments_do_not_confuse_the_scanner() {
        // WHERE inside a string literal is content, not a clause.
        assert_eq!(
            rewritten("SELECT 'WHERE', table_name FROM information_schema.tables"),
            "SELECT 'WHERE', table_name FROM information_schema.tables \
             WHERE SCHEMA_NAME NOT LIKE 'dimaqs%'"
        );
        // WHERE inside a subquery is below top level.
        assert_eq!(
            rewritten(
                "SELECT * FROM information_schema.tables t \
                 JOIN (SELECT 1 AS x WHERE 1 = 1) s ON 1 = 1"
            ),
            "SELECT * FROM information_schema.tables t \
             JOIN (SELECT 1 AS x WHERE 1 = 1) s ON 1 = 1 WHERE SCHEMA_NAME NOT LIKE 'dimaqs%'"
        );
        // A trailing semicolon stays trailing.
        assert_eq!(
            rewritten("SHOW DATABASES;"),
            "SHOW DATABASES WHERE `Database` NOT LIKE 'dimaqs%';"
        );
        // Line comment at the end does not swallow the filter.
        assert_eq!(
            rewritten("SELECT * FROM mysql.db -- audit"),
            "SELECT * FROM mysql.db WHERE Db NOT LIKE 'dimaqs%' -- audit"
        );
    }

    #[test]
    fn rewriting_is_idempotent() {
        let first = rewritten("SHOW DATABASES");
        let second = rewrite_listing(&first, P).unwrap();
        assert!(!second.changed);
        assert_eq!(second.sql, first);

        let first = rewritten("SELECT * FROM information_schema.schemata");
        let second = rewrite_listing(&first, P).unwrap();
        assert!(!second.changed);
    }

    #[test]
    fn show_like_patterns_pass_through() {
        let r = unchanged("SHOW DATABASES LIKE 'prod%'");
        assert!(r.note.unwrap().contains("LIKE"));
        // ... but LIKE inside an existing WHERE is a normal predicate.
        assert_eq!(
            rewritten("SHOW DATABASES WHERE `Database` LIKE 'prod%'"),
            "SHOW DATABASES WHERE `Database` LIKE 'prod%' AND `Database` NOT LIKE 'dimaqs%'"
        );
    }

    #[test]
    fn prefix_is_parameterized() {
        assert_eq!(
            rewrite_listing("SHOW DATABASES", "vault").unwrap().sql,
            "SHOW DATABASES WHERE `Database` NOT LIKE 'vault%'"
        );
        assert_eq!(
            rewrite_listing("SELECT * FROM information_schema.files", "vault").unwrap().sql,
            "SELECT * FROM information_schema.files WHERE FILE_NAME NOT LIKE './vault%'"
        );
    }
}
