//! Notification delivery. Reports are rendered as an email-style message
//! — headers, blank line, then the report as pretty JSON — and delivered
//! to stderr, appended to a file, or POSTed to a plain-HTTP webhook.
//! Delivery is attempted twice before giving up.

use std::fs::OpenOptions;
use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use super::report::IncidentReport;

const IO_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NotifySink {
    Stderr,
    /// Append messages to this file.
    File(PathBuf),
    /// POST the report JSON to this `http://` URL.
    Webhook(String),
}

impl NotifySink {
    /// Picks a sink for a policy's notification target: URLs become
    /// webhooks, anything else (e.g. a mail address) is printed to stderr
    /// for the operator's mail glue to pick up.
    pub fn from_target(target: &str) -> NotifySink {
        if target.starts_with("http://") || target.starts_with("https://") {
            NotifySink::Webhook(target.to_string())
        } else {
            NotifySink::Stderr
        }
    }
}

#[derive(Debug, Error)]
pub enum NotifyError {
    #[error("cannot append notification to `{path}`: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("webhook URL `{0}` is not supported (plain http:// only)")]
    BadUrl(String),
    #[error("webhook delivery failed: {0}")]
    Delivery(String),
}

/// Renders the report as an email-style message. The body after the first
/// blank line is the report as JSON and parses back losslessly.
pub fn render_message(report: &IncidentReport) -> String {
    format!(
        "Subject: [qns] {cause}: {n} statement(s) involved\n\
         To: {to}\n\
         Auto-Submitted: auto-generated\n\
         \n\
         {body}\n",
        cause = report.cause,
        n = report.contributing_events.len(),
        to = report.notification_target,
        body = serde_json::to_string_pretty(report).expect("report serializes"),
    )
}

/// Delivers the report, retrying once on failure.
pub fn notify(report: &IncidentReport, sink: &NotifySink) -> Result<(), NotifyError> {
    attempt(report, sink).or_else(|first| {
        log::warn!("notification delivery failed, retrying: {first}");
        attempt(report, sink)
    })
}

fn attempt(report: &IncidentReport, sink: &NotifySink) -> Result<(), NotifyError> {
    match sink {
        NotifySink::Stderr => {
            eprintln!("{}", render_message(report));
            Ok(())
        }
        NotifySink::File(path) => {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|source| NotifyError::File { path: path.clone(), source })?;
            file.write_all(render_message(report).as_bytes())
                .and_then(|_| file.write_all(b"\n"))
                .map_err(|source| NotifyError::File { path: path.clone(), source })
        }
        NotifySink::Webhook(url) => http_post(url, &serde_json::to_string(report).unwrap()),
    }
}

/// Minimal HTTP/1.1 POST over a plain socket — enough for an in-network
/// alerting endpoint without pulling in a client stack.
fn http_post(url: &str, body: &str) -> Result<(), NotifyError> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| NotifyError::BadUrl(url.to_string()))?;
    let (host_port, path) = match rest.find('/') {
        Some(idx) => (&rest[..idx], &rest[idx..]),
        None => (rest, "/"),
    };
    if host_port.is_empty() {
        return Err(NotifyError::BadUrl(url.to_string()));
    }
    let authority =
        if host_port.contains(':') { host_port.to_string() } else { format!("{host_port}:80") };

    let addr = authority
        .to_socket_addrs()
        .map_err(|e| NotifyError::Delivery(format!("resolve {authority}: {e}")))?
        .next()
        .ok_or_else(|| NotifyError::Delivery(format!("no address for {authority}")))?;
    let mut stream = TcpStream::connect_timeout(&addr, IO_TIMEOUT)
        .map_err(|e| NotifyError::Delivery(format!("connect {addr}: {e}")))?;
    stream.set_read_timeout(Some(IO_TIMEOUT)).ok();
    stream.set_write_timeout(Some(IO_TIMEOUT)).ok();

    let request = format!(
        "POST {path} HTTP/1.1\r\n\
         Host: {host_port}\r\n\
         Content-Type: application/json\r\n\
         Content-Length: {len}\r\n\
         Connection: close\r\n\
         \r\n\
         {body}",
        len = body.len(),
    );
    stream
        .write_all(request.as_bytes())
        .map_err(|e| NotifyError::Delivery(format!("send: {e}")))?;

    let mut response = String::new();
    stream
        .take(8192)
        .read_to_string(&mut response)
        .map_err(|e| NotifyError::Delivery(format!("read response: {e}")))?;
    let status_line = response.lines().next().unwrap_or_default();
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| NotifyError::Delivery(format!("bad response: {status_line:?}")))?;
    if (200..300).contains(&status) {
        Ok(())
    } else {
        Err(NotifyError::Delivery(format!("webhook answered {status}")))
    }
}
