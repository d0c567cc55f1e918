//! Readers for the two statement-stream formats the replay tooling accepts.
//!
//! The general query log is what a stock MySQL server writes with
//! `general_log=ON` — one timestamped entry per client interaction, with
//! multi-line statements continued on bare lines. The plain format is just
//! one statement per line, for hand-written corpora.

use std::io::{self, BufRead};

use chrono::DateTime;

use crate::sql::TimedQuery;

/// Result of parsing a general query log.
#[derive(Debug, Default)]
pub struct LogParse {
    /// `Query` entries, in file order.
    pub queries: Vec<TimedQuery>,
    /// Lines that were neither a parseable entry nor a continuation.
    pub malformed: usize,
}

/// Parses MySQL general-query-log text: lines of the form
/// `<ISO-8601>Z\t<thread-id> <command>\t<argument>`.
///
/// Only `Query` entries become statements; session bookkeeping (`Connect`,
/// `Quit`, `Init DB`, ...) is skipped. A line without a timestamp prefix
/// continues the previous statement (statements may contain newlines).
pub fn parse_general_log(reader: impl BufRead) -> io::Result<LogParse> {
    let mut out = LogParse::default();
    let mut current: Option<TimedQuery> = None;

    for line in reader.lines() {
        let line = line?;
        let Some((ts, rest)) = split_timestamp(&line) else {
            match current.as_mut() {
                Some(query) => {
                    query.sql.push('\n');
                    query.sql.push_str(&line);
                }
                // Preamble like the "Time Id Command Argument" header.
                None => out.malformed += 1,
            }
            continue;
        };

        // A fresh entry always terminates the previous statement.
        if let Some(done) = current.take() {
            out.queries.push(done);
        }
        match parse_entry(ts, rest) {
            Entry::Query(query) => current = Some(query),
            Entry::Skip => {}
            Entry::Malformed => {
                log::warn!("unparseable log line: {line}");
                out.malformed += 1;
            }
        }
    }
    if let Some(done) = current.take() {
        out.queries.push(done);
    }
    Ok(out)
}

/// Parses plain one-statement-per-line text. Statement `i` is stamped
/// `base_ts + i * dt` on connection 1; blank lines and `--` comments are
/// ignored.
pub fn parse_plain(reader: impl BufRead, base_ts: f64, dt: f64) -> io::Result<Vec<TimedQuery>> {
    let mut queries = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let sql = line.trim();
        if sql.is_empty() || sql.starts_with("--") {
            continue;
        }
        queries.push(TimedQuery {
            ts: base_ts + queries.len() as f64 * dt,
            conn_id: 1,
            sql: sql.to_string(),
        });
    }
    Ok(queries)
}

enum Entry {
    Query(TimedQuery),
    Skip,
    Malformed,
}

/// Splits `2018-05-22T10:00:00.123456Z\t...` into epoch seconds and rest.
fn split_timestamp(line: &str) -> Option<(f64, &str)> {
    let (stamp, rest) = line.split_once('\t')?;
    let parsed = DateTime::parse_from_rfc3339(stamp).ok()?;
    Some((parsed.timestamp_micros() as f64 / 1e6, rest))
}

/// Decodes `   42 Query\tSHOW DATABASES` — thread id, command, argument.
fn parse_entry(ts: f64, rest: &str) -> Entry {
    let (head, argument) = rest.split_once('\t').unwrap_or((rest, ""));
    let head = head.trim();
    let (id, command) = head.split_once(char::is_whitespace).unwrap_or((head, ""));
    let Ok(conn_id) = id.parse::<u64>() else {
        return Entry::Malformed;
    };
    match command.trim() {
        "Query" => Entry::Query(TimedQuery { ts, conn_id, sql: argument.to_string() }),
        // Connect, Quit, Init DB, Prepare, Execute, ... — session noise.
        _ => Entry::Skip,
    }
}
