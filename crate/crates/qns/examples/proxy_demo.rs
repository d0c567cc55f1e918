//! End-to-end enforcement against a scripted upstream: a client drives the
//! full ransom sequence through the proxy and we inspect what actually
//! reached the "server" — the rewritten listing, the drop turned into a
//! rename — plus the incident report written to disk.
//!
//! No real MySQL server is needed; the bundled stub speaks just enough of
//! the wire protocol for a handshake and `COM_QUERY` round trips.
//!
//! ```sh
//! cargo run --example proxy_demo
//! ```

use std::time::Duration;

use qns::policy::SecurityPolicy;
use qns::proxy::client::{AdminConn, AdminCredentials};
use qns::proxy::stub::{StubResponse, StubUpstream};
use qns::proxy::{run_proxy, ProxyConfig, ProxyMode};
use qns::resolver::NotifySink;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A fake server that records every query. It answers the schema
    // listing with rows (including one it should never be asked about
    // once the proxy filters the query) and OK to everything else.
    let stub = StubUpstream::with_handler(|sql| {
        if sql.trim_start().to_ascii_uppercase().starts_with("SHOW DATABASES") {
            StubResponse::Rows(vec![
                vec!["information_schema".into()],
                vec!["shop".into()],
            ])
        } else {
            StubResponse::Ok
        }
    })?;

    let dir = tempfile::tempdir()?;
    let report_path = dir.path().join("incident.txt");

    let policy = SecurityPolicy::default_policy();
    let creds = AdminCredentials { user: "qns_proxy".into(), password: "maintenance".into() };
    let handle = run_proxy(ProxyConfig {
        listen: "127.0.0.1:0".into(),
        upstream: stub.addr().to_string(),
        mode: ProxyMode::Enforce,
        policy,
        sink: NotifySink::File(report_path.clone()),
        admin: Some(creds.clone()),
        verdict_log: None,
    })?;
    println!("proxy listening on {}, upstream {}", handle.local_addr(), stub.addr());

    // The "attacker" connects through the proxy like any client would.
    let mut conn = AdminConn::connect(handle.local_addr(), &creds, Some("shop"))?;

    let listing = conn.query_rows("SHOW DATABASES")?;
    println!("\nclient sees {} schema(s) from SHOW DATABASES", listing.len());

    for sql in [
        "SHOW TABLES",
        "CREATE TABLE payme (note TEXT)",
        "INSERT INTO payme (note) VALUES ('transfer 5 BTC or the data is gone')",
        "DROP TABLE customers",
    ] {
        conn.execute(sql)?;
        println!("client sent: {sql}  -> OK");
    }

    // Give the detached notification write a moment, then shut down.
    for _ in 0..100 {
        if report_path.exists() {
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    handle.shutdown();

    println!("\nwhat the upstream actually received:");
    for sql in stub.received() {
        println!("  {sql}");
    }

    println!("\nincident report delivered to {}:", report_path.display());
    println!("{}", std::fs::read_to_string(&report_path)?);
    Ok(())
}
