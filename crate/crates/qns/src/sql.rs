//! Statement classification: raw MySQL query text → typed [`SqlEvent`]s.
//!
//! Parsing is delegated to [`sqlparser`]'s MySQL dialect. Two statement
//! forms that dialect rejects — `RENAME TABLE a TO b` and
//! `INSERT INTO t SET col = val` — are recovered by small token-level
//! parsers so renames and SET-style inserts still produce proper events.
//! Anything that references an identifier carrying the protected name
//! prefix is classified as a tamper attempt before normal rules apply,
//! and text that cannot be parsed at all degrades to [`SqlEventKind::Other`]
//! with a warning rather than being dropped.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{
    visit_expressions, visit_relations, AlterTableOperation, Expr, ObjectName, ObjectType, SetExpr,
    Statement, TableFactor, Use, Value,
};
use sqlparser::dialect::MySqlDialect;
use sqlparser::keywords::Keyword;
use sqlparser::parser::Parser;
use sqlparser::tokenizer::{Token, Tokenizer};

/// What a statement *does*, as far as the detection net cares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SqlEventKind {
    ListDatabases,
    ListTables,
    ListColumns,
    CreateTable,
    DropTable,
    DropDatabase,
    RenameTable,
    /// Insert with an explicit `VALUES`/`SET` payload.
    InsertValues,
    UpdateValues,
    /// The statement references an object under the protected name prefix.
    TamperAttempt,
    Other,
}

impl SqlEventKind {
    /// Stable name, also used as the engine trigger kind (hot path: avoids
    /// formatter machinery).
    pub fn as_str(self) -> &'static str {
        match self {
            SqlEventKind::ListDatabases => "ListDatabases",
            SqlEventKind::ListTables => "ListTables",
            SqlEventKind::ListColumns => "ListColumns",
            SqlEventKind::CreateTable => "CreateTable",
            SqlEventKind::DropTable => "DropTable",
            SqlEventKind::DropDatabase => "DropDatabase",
            SqlEventKind::RenameTable => "RenameTable",
            SqlEventKind::InsertValues => "InsertValues",
            SqlEventKind::UpdateValues => "UpdateValues",
            SqlEventKind::TamperAttempt => "TamperAttempt",
            SqlEventKind::Other => "Other",
        }
    }
}

impl std::fmt::Display for SqlEventKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A classified statement. `db`/`table` are best-effort attributions using
/// the session's default database for unqualified names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlEvent {
    pub kind: SqlEventKind,
    pub db: Option<String>,
    pub table: Option<String>,
    /// Target of a `RENAME TABLE`/`ALTER TABLE .. RENAME`, possibly
    /// `db`-qualified.
    pub rename_to: Option<String>,
    /// Literal values carried by inserts and updates, in source order.
    pub values: Vec<String>,
    pub raw_sql: String,
    pub conn_id: u64,
    /// Seconds; sub-second precision preserved from query logs.
    pub ts: f64,
    /// Present when the text defeated the parser and classification fell
    /// back to raw-text heuristics.
    pub parse_warning: Option<String>,
}

impl SqlEvent {
    fn new(kind: SqlEventKind, raw_sql: &str) -> SqlEvent {
        SqlEvent {
            kind,
            db: None,
            table: None,
            rename_to: None,
            values: Vec::new(),
            raw_sql: raw_sql.to_string(),
            conn_id: 0,
            ts: 0.0,
            parse_warning: None,
        }
    }

    /// Stamps when and on which connection the statement was observed.
    pub fn with_time(mut self, ts: f64, conn_id: u64) -> SqlEvent {
        self.ts = ts;
        self.conn_id = conn_id;
        self
    }
}

/// One log line ready for replay: when, who, what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedQuery {
    pub ts: f64,
    pub conn_id: u64,
    pub sql: String,
}

/// Classifies one statement (or a `;`-separated batch) into events.
///
/// `default_db` fills in unqualified object names; `hidden_prefix` is the
/// reserved name prefix whose mention marks a statement as tampering.
pub fn classify_statement(sql: &str, default_db: Option<&str>, hidden_prefix: &str) -> Vec<SqlEvent> {
    if sql.trim().is_empty() {
        return Vec::new();
    }

    let dialect = MySqlDialect {};
    let tokens = match Tokenizer::new(&dialect, sql).tokenize() {
        Ok(tokens) => tokens,
        Err(e) => {
            // Not even tokenizable. A raw-text sweep still catches tamper
            // attempts hiding behind exotic syntax.
            let kind = if contains_ignore_case(sql, hidden_prefix) {
                SqlEventKind::TamperAttempt
            } else {
                SqlEventKind::Other
            };
            let mut ev = SqlEvent::new(kind, sql);
            ev.parse_warning = Some(format!("tokenizer error: {e}"));
            return vec![ev];
        }
    };

    // Identifier tokens only: a ransom note *mentioning* the prefix inside
    // a string literal is not a tamper attempt, touching an object named
    // with it is.
    if let Some(ident) = tokens.iter().find_map(|t| match t {
        Token::Word(w)
            if w.keyword == Keyword::NoKeyword
                && starts_with_ignore_case(&w.value, hidden_prefix) =>
        {
            Some(w.value.clone())
        }
        _ => None,
    }) {
        let mut ev = SqlEvent::new(SqlEventKind::TamperAttempt, sql);
        ev.table = Some(ident);
        return vec![ev];
    }

    match Parser::parse_sql(&dialect, sql) {
        Ok(statements) => statements
            .iter()
            .flat_map(|s| classify_parsed(s, default_db, sql))
            .collect(),
        Err(parse_err) => {
            let significant: Vec<&Token> = tokens
                .iter()
                .filter(|t| !matches!(t, Token::Whitespace(_) | Token::EOF))
                .collect();
            if let Some(events) = parse_rename_table(&significant, default_db, sql) {
                return events;
            }
            if let Some(event) = parse_insert_set(&significant, default_db, sql) {
                return vec![event];
            }
            let mut ev = SqlEvent::new(SqlEventKind::Other, sql);
            ev.parse_warning = Some(format!("parse error: {parse_err}"));
            vec![ev]
        }
    }
}

/// Cheap `USE <db>` detector for session tracking. Returns the database
/// name for plain `USE` statements, `None` otherwise.
pub fn use_target(sql: &str) -> Option<String> {
    let trimmed = sql.trim().trim_end_matches(';').trim();
    if trimmed.len() < 4 || !trimmed[..3].eq_ignore_ascii_case("use") {
        return None;
    }
    let tokens = Tokenizer::new(&MySqlDialect {}, trimmed).tokenize().ok()?;
    let mut words = tokens.iter().filter_map(|t| match t {
        Token::Word(w) => Some(w),
        Token::Whitespace(_) | Token::EOF => None,
        _ => Some(&UNUSABLE),
    });
    let first = words.next()?;
    if first.keyword != Keyword::USE {
        return None;
    }
    let db = words.next()?;
    if db.keyword != Keyword::NoKeyword && db.quote_style.is_none() {
        return None;
    }
    match words.next() {
        None => Some(db.value.clone()),
        Some(_) => None,
    }
}

// Sentinel for non-word tokens in `use_target`'s iterator; its keyword
// never matches, so any punctuation aborts the match.
static UNUSABLE: sqlparser::tokenizer::Word = sqlparser::tokenizer::Word {
    value: String::new(),
    quote_style: None,
    keyword: Keyword::NULL,
};

fn classify_parsed(stmt: &Statement, default_db: Option<&str>, raw: &str) -> Vec<SqlEvent> {
    match stmt {
        Statement::ShowDatabases { .. } => vec![SqlEvent::new(SqlEventKind::ListDatabases, raw)],
        Statement::ShowTables { db_name, .. } => {
            let mut ev = SqlEvent::new(SqlEventKind::ListTables, raw);
            ev.db = db_name
                .as_ref()
                .map(|i| i.value.clone())
                .or_else(|| default_db.map(str::to_string));
            vec![ev]
        }
        Statement::ShowColumns { table_name, .. } => {
            let mut ev = SqlEvent::new(SqlEventKind::ListColumns, raw);
            let (db, table) = split_object(table_name, default_db);
            ev.db = db;
            ev.table = table;
            vec![ev]
        }
        Statement::Query(query) => {
            let mut kinds = Vec::new();
            let _ = visit_relations(query.as_ref(), |name: &ObjectName| {
                if let Some(kind) = monitored_listing_kind(name, default_db) {
                    if !kinds.contains(&kind) {
                        kinds.push(kind);
                    }
                }
                ControlFlow::<()>::Continue(())
            });
            if kinds.is_empty() {
                vec![SqlEvent::new(SqlEventKind::Other, raw)]
            } else {
                kinds.into_iter().map(|k| SqlEvent::new(k, raw)).collect()
            }
        }
        Statement::Insert(insert) => {
            let values = insert
                .source
                .as_deref()
                .and_then(|query| match query.body.as_ref() {
                    SetExpr::Values(v) => Some(v),
                    _ => None,
                })
                .map(|values| {
                    let mut out = Vec::new();
                    for row in &values.rows {
                        for expr in row {
                            collect_literals(expr, &mut out);
                        }
                    }
                    out
                });
            match values {
                Some(values) => {
                    let mut ev = SqlEvent::new(SqlEventKind::InsertValues, raw);
                    let (db, table) = split_object(&insert.table_name, default_db);
                    ev.db = db;
                    ev.table = table;
                    ev.values = values;
                    vec![ev]
                }
                // INSERT .. SELECT and friends carry no literal payload.
                None => vec![SqlEvent::new(SqlEventKind::Other, raw)],
            }
        }
        Statement::Update { table, assignments, .. } => {
            let mut ev = SqlEvent::new(SqlEventKind::UpdateValues, raw);
            if let TableFactor::Table { name, .. } = &table.relation {
                let (db, table) = split_object(name, default_db);
                ev.db = db;
                ev.table = table;
            }
            for assignment in assignments {
                collect_literals(&assignment.value, &mut ev.values);
            }
            vec![ev]
        }
        Statement::Drop { object_type: ObjectType::Table, temporary, names, .. } => {
            if *temporary {
                // Session-scoped scratch tables are not monitored objects.
                return vec![SqlEvent::new(SqlEventKind::Other, raw)];
            }
            names
                .iter()
                .map(|name| {
                    let mut ev = SqlEvent::new(SqlEventKind::DropTable, raw);
                    let (db, table) = split_object(name, default_db);
                    ev.db = db;
                    ev.table = table;
                    ev
                })
                .collect()
        }
        Statement::Drop { object_type: ObjectType::Database | ObjectType::Schema, names, .. } => {
            names
                .iter()
                .map(|name| {
                    let mut ev = SqlEvent::new(SqlEventKind::DropDatabase, raw);
                    ev.db = name.0.last().map(|i| i.value.clone());
                    ev
                })
                .collect()
        }
        Statement::CreateTable(ct) => {
            if ct.temporary {
                return vec![SqlEvent::new(SqlEventKind::Other, raw)];
            }
            let mut ev = SqlEvent::new(SqlEventKind::CreateTable, raw);
            let (db, table) = split_object(&ct.name, default_db);
            ev.db = db;
            ev.table = table;
            vec![ev]
        }
        Statement::AlterTable { name, operations, .. } => {
            for op in operations {
                if let AlterTableOperation::RenameTable { table_name } = op {
                    let mut ev = SqlEvent::new(SqlEventKind::RenameTable, raw);
                    let (db, table) = split_object(name, default_db);
                    ev.db = db;
                    ev.table = table;
                    ev.rename_to = Some(object_name_string(table_name));
                    return vec![ev];
                }
            }
            vec![SqlEvent::new(SqlEventKind::Other, raw)]
        }
        Statement::Use(u) => {
            let mut ev = SqlEvent::new(SqlEventKind::Other, raw);
            if let Use::Object(name) | Use::Database(name) | Use::Schema(name) = u {
                ev.db = name.0.first().map(|i| i.value.clone());
            }
            vec![ev]
        }
        _ => vec![SqlEvent::new(SqlEventKind::Other, raw)],
    }
}

/// System catalog relations whose `SELECT` reveals database structure,
/// mapped to the listing kind they amount to.
fn monitored_listing_kind(name: &ObjectName, default_db: Option<&str>) -> Option<SqlEventKind> {
    let (db, table) = split_object(name, default_db);
    let db = db?.to_ascii_lowercase();
    let table = table?.to_ascii_lowercase();
    let kind = match (db.as_str(), table.as_str()) {
        ("information_schema", "schemata") | ("mysql", "db") => SqlEventKind::ListDatabases,
        ("information_schema", "tables")
        | ("information_schema", "partitions")
        | ("information_schema", "files")
        | ("performance_schema", "file_instances")
        | ("performance_schema", "objects_summary_global_by_type")
        | ("performance_schema", "table_handles")
        | ("performance_schema", "table_io_waits_summary_by_index_usage")
        | ("performance_schema", "table_io_waits_summary_by_table")
        | ("performance_schema", "table_lock_waits_summary_by_table") => SqlEventKind::ListTables,
        ("information_schema", "columns") | ("information_schema", "key_column_usage") => {
            SqlEventKind::ListColumns
        }
        _ => return None,
    };
    Some(kind)
}

fn split_object(name: &ObjectName, default_db: Option<&str>) -> (Option<String>, Option<String>) {
    let parts = &name.0;
    let table = parts.last().map(|i| i.value.clone());
    let db = if parts.len() >= 2 {
        Some(parts[parts.len() - 2].value.clone())
    } else {
        default_db.map(str::to_string)
    };
    (db, table)
}

fn object_name_string(name: &ObjectName) -> String {
    name.0.iter().map(|i| i.value.as_str()).collect::<Vec<_>>().join(".")
}

fn collect_literals(expr: &Expr, out: &mut Vec<String>) {
    let _ = visit_expressions(expr, |e: &Expr| {
        if let Expr::Value(v) = e {
            if let Some(s) = literal_string(v) {
                out.push(s);
            }
        }
        ControlFlow::<()>::Continue(())
    });
}

fn literal_string(value: &Value) -> Option<String> {
    match value {
        Value::Number(n, _) => Some(n.clone()),
        Value::SingleQuotedString(s)
        | Value::DoubleQuotedString(s)
        | Value::TripleSingleQuotedString(s)
        | Value::TripleDoubleQuotedString(s)
        | Value::EscapedStringLiteral(s)
        | Value::NationalStringLiteral(s)
        | Value::HexStringLiteral(s) => Some(s.clone()),
        Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

fn starts_with_ignore_case(s: &str, prefix: &str) -> bool {
    s.len() >= prefix.len() && s[..prefix.len()].eq_ignore_ascii_case(prefix)
}

fn contains_ignore_case(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    haystack.to_ascii_lowercase().contains(&needle.to_ascii_lowercase())
}

// ---------------------------------------------------------------------
// Token-level fallbacks for MySQL forms the parser rejects.
// ---------------------------------------------------------------------

/// `RENAME TABLE old TO new [, old2 TO new2 ...]` → one event per pair.
fn parse_rename_table(
    tokens: &[&Token],
    default_db: Option<&str>,
    raw: &str,
) -> Option<Vec<SqlEvent>> {
    let mut cursor = TokenCursor { tokens, pos: 0 };
    cursor.keyword(Keyword::RENAME)?;
    cursor.keyword(Keyword::TABLE)?;

    let mut events = Vec::new();
    loop {
        let from = cursor.object_name()?;
        cursor.keyword(Keyword::TO)?;
        let to = cursor.object_name()?;

        let mut ev = SqlEvent::new(SqlEventKind::RenameTable, raw);
        ev.table = from.last().cloned();
        ev.db = if from.len() >= 2 {
            Some(from[from.len() - 2].clone())
        } else {
            default_db.map(str::to_string)
        };
        ev.rename_to = Some(to.join("."));
        events.push(ev);

        match cursor.peek() {
            Some(Token::Comma) => {
                cursor.pos += 1;
            }
            Some(Token::SemiColon) | None => break,
            Some(_) => return None,
        }
    }
    Some(events)
}

/// `INSERT [INTO] tbl SET col = val [, col = val ...]` — MySQL-only
/// syntax; literal values are harvested from the assignment list.
fn parse_insert_set(tokens: &[&Token], default_db: Option<&str>, raw: &str) -> Option<SqlEvent> {
    let mut cursor = TokenCursor { tokens, pos: 0 };
    cursor.keyword(Keyword::INSERT)?;
    let _ = cursor.keyword(Keyword::INTO); // optional
    let name = cursor.object_name()?;
    cursor.keyword(Keyword::SET)?;

    let rest = &cursor.tokens[cursor.pos..];
    if !rest.iter().any(|t| matches!(t, Token::Eq)) {
        return None;
    }
    let values = rest
        .iter()
        .filter_map(|t| match t {
            Token::SingleQuotedString(s) | Token::DoubleQuotedString(s) => Some(s.clone()),
            Token::Number(n, _) => Some(n.clone()),
            _ => None,
        })
        .collect();

    let mut ev = SqlEvent::new(SqlEventKind::InsertValues, raw);
    ev.table = name.last().cloned();
    ev.db = if name.len() >= 2 {
        Some(name[name.len() - 2].clone())
    } else {
        default_db.map(str::to_string)
    };
    ev.values = values;
    Some(ev)
}

struct TokenCursor<'a> {
    tokens: &'a [&'a Token],
    pos: usize,
}

impl TokenCursor<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).copied()
    }

    fn keyword(&mut self, kw: Keyword) -> Option<()> {
        match self.peek() {
            Some(Token::Word(w)) if w.keyword == kw => {
                self.pos += 1;
                Some(())
            }
            _ => None,
        }
    }

    /// `ident (DOT ident)*`; returns the part values.
    fn object_name(&mut self) -> Option<Vec<String>> {
        let mut parts = Vec::new();
        loop {
            match self.peek() {
                Some(Token::Word(w)) => {
                    parts.push(w.value.clone());
                    self.pos += 1;
                }
                _ => return None,
            }
            match self.peek() {
                Some(Token::Period) => {
                    self.pos += 1;
                }
                _ => return Some(parts),
            }
        }
    }
}
