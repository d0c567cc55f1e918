//! Inline wire-protocol tap: a TCP proxy that reads every client statement,
//! grades it through the classifier, and — in enforcing mode — rewrites or
//! blocks it before the server ever sees it.
//!
//! The proxy sits between an unmodified client and an unmodified MySQL
//! server. Server-to-client traffic is pumped through verbatim (handshakes,
//! resultsets, errors); only client commands are inspected. Each statement
//! is processed synchronously before being forwarded, so by the time the
//! client sees a response, any alert it caused has already been delivered.
//!
//! Enforcement has three levers:
//!
//! * **Rewriting** — catalog listings gain a `NOT LIKE` filter so protected
//!   objects stay invisible ([`resolver::rewrite`](crate::resolver)).
//! * **Backups** — a `DROP TABLE` that the net flags destructive is replaced
//!   on the wire by a `RENAME TABLE` into the storage space; a
//!   `DROP DATABASE` is preceded by renames executed over the proxy's own
//!   maintenance connection, then forwarded (the database is empty by then).
//! * **Blocking** — statements that touch the storage space or other
//!   protected objects directly are answered with an access-denied error
//!   and never forwarded.

pub mod client;
pub mod packet;
pub mod stub;

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::classifier::{verdict_log_line, Classifier, ClassifierError};
use crate::cpn::{ActionKind, EventId};
use crate::policy::{PolicyError, SecurityPolicy};
use crate::resolver::{backup_plan, build_report, notify, BackupNamer, IncidentReport, NotifySink};
use crate::sql::{classify_statement, use_target, SqlEvent, SqlEventKind};
use client::{AdminConn, AdminCredentials, ClientError};
use packet::{err_packet, extract_query, read_packet, write_packet, COM_INIT_DB, COM_QUIT};

/// MySQL "access denied; you need (at least one of) ..." — the least
/// surprising error code for a statement the proxy refuses to forward.
const BLOCKED_ERR_CODE: u16 = 1227;

/// Whether the proxy only observes or actively intervenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProxyMode {
    /// Classify and alert, but forward every statement untouched.
    Detect,
    /// Additionally rewrite listings, divert drops into backups, and block
    /// statements that touch protected objects.
    Enforce,
}

/// Everything needed to start a proxy.
pub struct ProxyConfig {
    /// Address to listen on, e.g. `127.0.0.1:0` for an ephemeral port.
    pub listen: String,
    /// Address of the real server.
    pub upstream: String,
    pub mode: ProxyMode,
    pub policy: SecurityPolicy,
    /// Where incident reports go.
    pub sink: NotifySink,
    /// Credentials for the proxy's own maintenance connection. Without
    /// them, table drops are still diverted (the rename rides the client's
    /// session) but database drops cannot be inventoried and are blocked.
    pub admin: Option<AdminCredentials>,
    /// Append one JSON line per classified statement here.
    pub verdict_log: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ProxyError {
    #[error("proxy I/O error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("maintenance connection failed: {0}")]
    Admin(#[from] ClientError),
}

/// Running proxy; keeps the listener alive until shut down or dropped.
pub struct ProxyHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ProxyHandle {
    /// The address the proxy actually bound (port resolved).
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting connections and waits for the accept loop to exit.
    /// Connections already established keep running until they close.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.accept.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for ProxyHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

/// Binds the listener, prepares the shared pipeline, and starts serving.
pub fn run_proxy(config: ProxyConfig) -> Result<ProxyHandle, ProxyError> {
    let classifier = Classifier::new(&config.policy)?;
    let namer = BackupNamer::new(&config.policy);

    let admin = match (&config.mode, &config.admin) {
        (ProxyMode::Enforce, Some(creds)) => {
            let mut session = AdminSession::connect(config.upstream.clone(), creds.clone())?;
            // Make sure the storage space exists before the first backup
            // needs it; renames cannot create databases on the fly.
            session.run(|conn| {
                conn.execute(&format!(
                    "CREATE DATABASE IF NOT EXISTS `{}`",
                    config.policy.storage_space.replace('`', "``")
                ))
            })?;
            Some(session)
        }
        (ProxyMode::Enforce, None) => {
            log::warn!(
                "enforcing without a maintenance connection: database drops will be blocked"
            );
            None
        }
        _ => None,
    };

    let verdict_log = match &config.verdict_log {
        Some(path) => Some(OpenOptions::new().create(true).append(true).open(path)?),
        None => None,
    };

    let pipeline = Arc::new(Mutex::new(Pipeline {
        classifier,
        namer,
        sink: config.sink,
        mode: config.mode,
        admin,
        verdict_log,
        notification_target: config.policy.notification_target.clone(),
        object_prefix: config.policy.object_prefix.clone(),
    }));

    let listener = TcpListener::bind(&config.listen)?;
    listener.set_nonblocking(true)?;
    let local_addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let upstream = config.upstream;

    let accept = {
        let stop = Arc::clone(&stop);
        let next_conn = AtomicU64::new(1);
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        let conn_id = next_conn.fetch_add(1, Ordering::Relaxed);
                        log::info!("connection {conn_id} from {peer}");
                        let pipeline = Arc::clone(&pipeline);
                        let upstream = upstream.clone();
                        thread::spawn(move || {
                            if let Err(err) = serve_client(stream, &upstream, &pipeline, conn_id) {
                                log::debug!("connection {conn_id} ended: {err}");
                            }
                        });
                    }
                    Err(ref e) if e.kind() == io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(10));
                    }
                    Err(err) => {
                        log::error!("accept failed: {err}");
                        break;
                    }
                }
            }
        })
    };

    Ok(ProxyHandle { local_addr, stop, accept: Some(accept) })
}

/// What to do with one client statement.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Decision {
    Forward,
    Substitute(String),
    Block(String),
}

/// Per-connection loop: pump server traffic through verbatim, inspect every
/// client command packet.
fn serve_client(
    mut client: TcpStream,
    upstream_addr: &str,
    pipeline: &Arc<Mutex<Pipeline>>,
    conn_id: u64,
) -> io::Result<()> {
    client.set_nodelay(true).ok();
    let mut upstream = TcpStream::connect(upstream_addr)?;
    upstream.set_nodelay(true).ok();

    let pump = {
        let mut from_server = upstream.try_clone()?;
        let mut to_client = client.try_clone()?;
        thread::spawn(move || {
            let _ = io::copy(&mut from_server, &mut to_client);
            let _ = to_client.shutdown(Shutdown::Write);
        })
    };

    let mut default_db: Option<String> = None;
    loop {
        let Some(pkt) = read_packet(&mut client)? else { break };

        if let Some(sql) = extract_query(&pkt) {
            if let Some(db) = use_target(&sql) {
                default_db = Some(db);
            }
            let decision = pipeline
                .lock()
                .expect("pipeline lock")
                .process_statement(&sql, conn_id, default_db.as_deref());
            match decision {
                Decision::Forward => write_packet(&mut upstream, &pkt)?,
                Decision::Substitute(new_sql) => {
                    log::info!("conn {conn_id}: substituting `{sql}` -> `{new_sql}`");
                    match packet::substitute_query(&pkt, &new_sql) {
                        Ok(replacement) => write_packet(&mut upstream, &replacement)?,
                        Err(err) => {
                            // Oversized replacement — should not happen for
                            // our rewrites; fail open rather than hang.
                            log::error!("conn {conn_id}: substitution failed ({err}), forwarding original");
                            write_packet(&mut upstream, &pkt)?;
                        }
                    }
                }
                Decision::Block(message) => {
                    log::warn!("conn {conn_id}: blocked `{sql}`: {message}");
                    write_packet(
                        &mut client,
                        &err_packet(pkt.seq.wrapping_add(1), BLOCKED_ERR_CODE, &message),
                    )?;
                }
            }
            continue;
        }

        // Non-query traffic: track schema switches, otherwise pass through
        // (handshake responses, pings, prepared-statement plumbing, ...).
        if pkt.seq == 0 {
            match pkt.payload.first() {
                Some(&COM_INIT_DB) => {
                    default_db =
                        Some(String::from_utf8_lossy(&pkt.payload[1..]).into_owned());
                }
                Some(&COM_QUIT) => {
                    write_packet(&mut upstream, &pkt)?;
                    break;
                }
                _ => {}
            }
        }
        write_packet(&mut upstream, &pkt)?;
    }

    let _ = upstream.shutdown(Shutdown::Both);
    let _ = pump.join();
    Ok(())
}

/// Shared statement-processing state behind one mutex: classifier marking,
/// backup naming, the maintenance session, and the alert sink.
struct Pipeline {
    classifier: Classifier,
    namer: BackupNamer,
    sink: NotifySink,
    mode: ProxyMode,
    admin: Option<AdminSession>,
    verdict_log: Option<File>,
    notification_target: String,
    object_prefix: String,
}

impl Pipeline {
    /// Classifies one statement and decides its fate. Backups run (or are
    /// planned as substitutions) before notifications are assembled, so
    /// reports list the backups the statement triggered.
    fn process_statement(
        &mut self,
        sql: &str,
        conn_id: u64,
        default_db: Option<&str>,
    ) -> Decision {
        let now = epoch_now();
        let enforce = self.mode == ProxyMode::Enforce;
        let mut decision = Decision::Forward;
        let mut rename_clauses: Vec<String> = Vec::new();
        let mut backups: Vec<String> = Vec::new();
        let mut notifications = Vec::new();

        for event in classify_statement(sql, default_db, &self.object_prefix) {
            let event = event.with_time(now, conn_id);
            let verdict = match self.classifier.process(&event) {
                Ok(v) => v,
                Err(err) => {
                    log::error!("classifier refused statement: {err}");
                    continue;
                }
            };
            self.log_verdict(&event, &verdict);

            if enforce && event.kind == SqlEventKind::TamperAttempt {
                decision = Decision::Block(
                    "statement references objects reserved for database protection".into(),
                );
            }

            for action in &verdict.actions {
                match action.action {
                    ActionKind::CreateBackup if enforce => match event.kind {
                        SqlEventKind::DropTable => {
                            if let Some(plan) = backup_plan(&event, &[], &mut self.namer) {
                                for step in plan.renames {
                                    backups.push(step.target());
                                    rename_clauses.push(rename_clause(&step.sql));
                                }
                            }
                        }
                        SqlEventKind::DropDatabase => {
                            match backup_database(
                                self.admin.as_mut(),
                                &mut self.namer,
                                &event,
                            ) {
                                Ok(mut targets) => backups.append(&mut targets),
                                Err(note) => {
                                    decision = Decision::Block(note.clone());
                                    self.escalate(verdict.event_id, &event, &note);
                                }
                            }
                        }
                        // Tampering is contained by the block above; there
                        // is no single object to move aside.
                        _ => {}
                    },
                    ActionKind::CreateNotification => notifications.push(action.clone()),
                    _ => {}
                }
            }
        }

        // Notifications go out once the statement's backups are settled, so
        // each report can name them.
        for request in notifications {
            let events = self.classifier.events_for(&request.token.provenance);
            let report =
                build_report(&request, events, backups.clone(), &self.notification_target);
            log::warn!(
                "ALERT ({}): {} contributing statement(s)",
                report.cause,
                report.contributing_events.len()
            );
            if let Err(err) = notify(&report, &self.sink) {
                log::error!("alert delivery failed: {err}");
            }
        }

        if enforce && decision == Decision::Forward {
            if !rename_clauses.is_empty() {
                decision = Decision::Substitute(format!(
                    "RENAME TABLE {}",
                    rename_clauses.join(", ")
                ));
            } else if let Ok(rewrite) = crate::resolver::rewrite_listing(sql, &self.object_prefix)
            {
                if rewrite.changed {
                    decision = Decision::Substitute(rewrite.sql);
                } else if let Some(note) = rewrite.note {
                    log::debug!("listing left as-is: {note}");
                }
            }
        }
        decision
    }

    fn log_verdict(&mut self, event: &SqlEvent, verdict: &crate::classifier::Verdict) {
        let line = verdict_log_line(event, verdict);
        log::debug!("{line}");
        if let Some(file) = &mut self.verdict_log {
            if let Err(err) = writeln!(file, "{line}") {
                log::error!("verdict log write failed: {err}");
            }
        }
    }

    /// A backup could not be taken: the statement is being held, and the
    /// administrator needs to hear about the failure itself.
    fn escalate(&mut self, event_id: EventId, event: &SqlEvent, note: &str) {
        let report = IncidentReport {
            detected_at: event.ts,
            cause: format!("backup_failure: {note}"),
            place: "Obj_Del".into(),
            contributing_events: self.classifier.events_for(&[event_id]),
            ransom_excerpt: None,
            backups: Vec::new(),
            notification_target: self.notification_target.clone(),
        };
        if let Err(err) = notify(&report, &self.sink) {
            log::error!("escalation delivery failed: {err}");
        }
    }
}

/// Moves every table of the to-be-dropped database into the storage space
/// over the maintenance connection. Returns the backup object names.
fn backup_database(
    admin: Option<&mut AdminSession>,
    namer: &mut BackupNamer,
    event: &SqlEvent,
) -> Result<Vec<String>, String> {
    let Some(session) = admin else {
        return Err("no maintenance connection available for database backups".into());
    };
    let db = event.db.as_deref().unwrap_or_default();
    let inventory_sql = format!(
        "SELECT TABLE_NAME FROM information_schema.tables WHERE TABLE_SCHEMA = '{}'",
        db.replace('\'', "''")
    );
    let rows = session
        .run(|conn| conn.query_rows(&inventory_sql))
        .map_err(|err| format!("table inventory for `{db}` failed: {err}"))?;
    let tables: Vec<String> = rows
        .into_iter()
        .filter_map(|row| row.into_iter().next().flatten())
        .collect();

    let Some(plan) = backup_plan(event, &tables, namer) else {
        return Ok(Vec::new());
    };
    let mut targets = Vec::with_capacity(plan.renames.len());
    for step in &plan.renames {
        session
            .run(|conn| conn.execute(&step.sql))
            .map_err(|err| format!("backup of `{}` failed: {err}", step.from_table))?;
        targets.push(step.target());
    }
    Ok(targets)
}

/// `RENAME TABLE a TO b` → `a TO b`, so several steps can share one
/// statement.
fn rename_clause(sql: &str) -> String {
    sql.strip_prefix("RENAME TABLE ").unwrap_or(sql).to_string()
}

/// The proxy's own authenticated server connection, reconnecting once on
/// transport failure (a long-idle session may have been dropped server-side).
struct AdminSession {
    upstream: String,
    creds: AdminCredentials,
    conn: Option<AdminConn>,
}

impl AdminSession {
    fn connect(upstream: String, creds: AdminCredentials) -> Result<AdminSession, ClientError> {
        let conn = AdminConn::connect(upstream.as_str(), &creds, None)?;
        Ok(AdminSession { upstream, creds, conn: Some(conn) })
    }

    fn run<T>(
        &mut self,
        op: impl Fn(&mut AdminConn) -> Result<T, ClientError>,
    ) -> Result<T, ClientError> {
        if self.conn.is_none() {
            self.conn = Some(AdminConn::connect(self.upstream.as_str(), &self.creds, None)?);
        }
        let conn = self.conn.as_mut().expect("connection just ensured");
        match op(conn) {
            Ok(value) => Ok(value),
            // The server answered; retrying would just repeat the refusal.
            Err(err @ ClientError::Server { .. }) => Err(err),
            Err(_) => {
                self.conn = Some(AdminConn::connect(self.upstream.as_str(), &self.creds, None)?);
                op(self.conn.as_mut().expect("fresh connection"))
            }
        }
    }
}

fn epoch_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}
