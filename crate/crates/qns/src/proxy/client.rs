//! Minimal MySQL client used by the proxy for maintenance statements.
//!
//! The proxy needs a second, fully authenticated connection so it can run
//! backup `RENAME TABLE` statements and inventory queries without borrowing
//! the (possibly compromised) client session. Only the slice of the protocol
//! required for that job is implemented: the `mysql_native_password` plugin,
//! `COM_QUERY`, and the classic text resultset encoding. TLS, compression,
//! and `CLIENT_DEPRECATE_EOF` are deliberately left out.

use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use sha1::{Digest, Sha1};

use super::packet::{read_packet, write_packet, WirePacket, COM_QUERY};

const CLIENT_LONG_PASSWORD: u32 = 0x0000_0001;
const CLIENT_CONNECT_WITH_DB: u32 = 0x0000_0008;
const CLIENT_PROTOCOL_41: u32 = 0x0000_0200;
const CLIENT_SECURE_CONNECTION: u32 = 0x0000_8000;
const CLIENT_PLUGIN_AUTH: u32 = 0x0008_0000;

const NATIVE_PLUGIN: &str = "mysql_native_password";
const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
const IO_TIMEOUT: Duration = Duration::from_secs(10);

/// Errors raised while talking to the upstream server as a client.
#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("connection failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed server packet: {0}")]
    Protocol(String),
    #[error("server requested unsupported auth plugin `{0}`")]
    UnsupportedAuth(String),
    #[error("server error {code}: {message}")]
    Server { code: u16, message: String },
}

/// Credentials for the proxy's own maintenance connection.
#[derive(Debug, Clone)]
pub struct AdminCredentials {
    pub user: String,
    pub password: String,
}

/// One row of a text resultset; `None` marks SQL NULL.
pub type Row = Vec<Option<String>>;

/// An authenticated connection owned by the proxy itself.
pub struct AdminConn {
    stream: TcpStream,
}

impl AdminConn {
    /// Connects and authenticates with `mysql_native_password`.
    pub fn connect(
        addr: impl ToSocketAddrs,
        creds: &AdminCredentials,
        database: Option<&str>,
    ) -> Result<Self, ClientError> {
        let target = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| ClientError::Protocol("address resolved to nothing".into()))?;
        let stream = TcpStream::connect_timeout(&target, CONNECT_TIMEOUT)?;
        stream.set_read_timeout(Some(IO_TIMEOUT))?;
        stream.set_write_timeout(Some(IO_TIMEOUT))?;
        stream.set_nodelay(true).ok();
        let mut conn = AdminConn { stream };
        conn.handshake(creds, database)?;
        Ok(conn)
    }

    fn handshake(
        &mut self,
        creds: &AdminCredentials,
        database: Option<&str>,
    ) -> Result<(), ClientError> {
        let greeting = self.expect_packet()?;
        let (nonce, plugin) = parse_greeting(&greeting.payload)?;
        if plugin != NATIVE_PLUGIN {
            return Err(ClientError::UnsupportedAuth(plugin));
        }

        let mut caps = CLIENT_LONG_PASSWORD
            | CLIENT_PROTOCOL_41
            | CLIENT_SECURE_CONNECTION
            | CLIENT_PLUGIN_AUTH;
        if database.is_some() {
            caps |= CLIENT_CONNECT_WITH_DB;
        }
        let auth = scramble_native(creds.password.as_bytes(), &nonce);

        let mut payload = Vec::with_capacity(128);
        payload.extend_from_slice(&caps.to_le_bytes());
        payload.extend_from_slice(&(16 * 1024 * 1024u32).to_le_bytes());
        payload.push(33); // utf8_general_ci
        payload.extend_from_slice(&[0u8; 23]);
        payload.extend_from_slice(creds.user.as_bytes());
        payload.push(0);
        payload.push(auth.len() as u8);
        payload.extend_from_slice(&auth);
        if let Some(db) = database {
            payload.extend_from_slice(db.as_bytes());
            payload.push(0);
        }
        payload.extend_from_slice(NATIVE_PLUGIN.as_bytes());
        payload.push(0);

        write_packet(
            &mut self.stream,
            &WirePacket::new(greeting.seq.wrapping_add(1), payload),
        )?;

        let reply = self.expect_packet()?;
        match reply.payload.first() {
            Some(0x00) => Ok(()),
            Some(0xff) => Err(server_error(&reply.payload)),
            Some(0xfe) => {
                // AuthSwitchRequest: the server may re-ask for the same plugin
                // with a fresh nonce (common when the account predates the
                // connection's default plugin).
                let (plugin, fresh) = parse_auth_switch(&reply.payload)?;
                if plugin != NATIVE_PLUGIN {
                    return Err(ClientError::UnsupportedAuth(plugin));
                }
                let auth = scramble_native(creds.password.as_bytes(), &fresh);
                write_packet(
                    &mut self.stream,
                    &WirePacket::new(reply.seq.wrapping_add(1), auth),
                )?;
                let final_reply = self.expect_packet()?;
                match final_reply.payload.first() {
                    Some(0x00) => Ok(()),
                    Some(0xff) => Err(server_error(&final_reply.payload)),
                    other => Err(ClientError::Protocol(format!(
                        "unexpected auth reply marker {other:?}"
                    ))),
                }
            }
            other => Err(ClientError::Protocol(format!(
                "unexpected handshake reply marker {other:?}"
            ))),
        }
    }

    /// Runs a statement that must not return rows (DDL, `RENAME`, …).
    pub fn execute(&mut self, sql: &str) -> Result<(), ClientError> {
        self.send_query(sql)?;
        let first = self.expect_packet()?;
        match first.payload.first() {
            Some(0x00) => Ok(()),
            Some(0xff) => Err(server_error(&first.payload)),
            Some(_) => {
                // A resultset where none was expected; drain it so the
                // connection stays usable, then report the surprise.
                self.drain_resultset(&first.payload)?;
                Err(ClientError::Protocol(format!(
                    "statement unexpectedly returned rows: {sql}"
                )))
            }
            None => Err(ClientError::Protocol("empty response packet".into())),
        }
    }

    /// Runs a query and collects the full text resultset.
    pub fn query_rows(&mut self, sql: &str) -> Result<Vec<Row>, ClientError> {
        self.send_query(sql)?;
        let first = self.expect_packet()?;
        match first.payload.first() {
            Some(0x00) => Ok(Vec::new()),
            Some(0xff) => Err(server_error(&first.payload)),
            Some(_) => self.read_resultset(&first.payload),
            None => Err(ClientError::Protocol("empty response packet".into())),
        }
    }

    fn send_query(&mut self, sql: &str) -> Result<(), ClientError> {
        let mut payload = Vec::with_capacity(sql.len() + 1);
        payload.push(COM_QUERY);
        payload.extend_from_slice(sql.as_bytes());
        write_packet(&mut self.stream, &WirePacket::new(0, payload))?;
        Ok(())
    }

    fn read_resultset(&mut self, head: &[u8]) -> Result<Vec<Row>, ClientError> {
        let mut pos = 0usize;
        let columns = lenenc_int(head, &mut pos)
            .ok_or_else(|| ClientError::Protocol("bad column count".into()))?
            as usize;
        // Column definitions, terminated by EOF.
        loop {
            let pkt = self.expect_packet()?;
            if is_eof(&pkt.payload) {
                break;
            }
        }
        let mut rows = Vec::new();
        loop {
            let pkt = self.expect_packet()?;
            if is_eof(&pkt.payload) {
                return Ok(rows);
            }
            if pkt.payload.first() == Some(&0xff) {
                return Err(server_error(&pkt.payload));
            }
            rows.push(decode_text_row(&pkt.payload, columns)?);
        }
    }

    fn drain_resultset(&mut self, head: &[u8]) -> Result<(), ClientError> {
        self.read_resultset(head).map(|_| ())
    }

    fn expect_packet(&mut self) -> Result<WirePacket, ClientError> {
        match read_packet(&mut self.stream) {
            Ok(Some(pkt)) => Ok(pkt),
            Ok(None) => Err(ClientError::Protocol(
                "server closed the connection".into(),
            )),
            Err(err) => Err(ClientError::Io(err)),
        }
    }
}

impl std::fmt::Debug for AdminConn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdminConn")
            .field("peer", &self.stream.peer_addr().ok())
            .finish()
    }
}

/// Initial Handshake V10: extracts the 20-byte nonce and the auth plugin name.
fn parse_greeting(payload: &[u8]) -> Result<(Vec<u8>, String), ClientError> {
    let bad = |what: &str| ClientError::Protocol(format!("truncated greeting ({what})"));
    if payload.first() != Some(&0x0a) {
        return Err(ClientError::Protocol(format!(
            "unsupported protocol version {:?}",
            payload.first()
        )));
    }
    let mut pos = 1usize;
    let version_end = payload[pos..]
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| bad("server version"))?;
    pos += version_end + 1;
    pos += 4; // connection id
    if payload.len() < pos + 8 {
        return Err(bad("auth data part 1"));
    }
    let mut nonce = payload[pos..pos + 8].to_vec();
    pos += 8 + 1; // first nonce half + filler
    if payload.len() < pos + 2 {
        return Err(bad("capabilities"));
    }
    let cap_low = u16::from_le_bytes([payload[pos], payload[pos + 1]]) as u32;
    pos += 2;
    if payload.len() < pos + 1 + 2 + 2 + 1 + 10 {
        return Err(bad("status block"));
    }
    pos += 1 + 2; // charset, status flags
    let cap_high = u16::from_le_bytes([payload[pos], payload[pos + 1]]) as u32;
    pos += 2;
    let caps = cap_low | (cap_high << 16);
    let auth_len = payload[pos] as usize;
    pos += 1 + 10; // auth data length, reserved
    if caps & CLIENT_SECURE_CONNECTION != 0 {
        let tail = auth_len.saturating_sub(8).max(13);
        if payload.len() < pos + tail {
            return Err(bad("auth data part 2"));
        }
        // The trailing NUL is padding, not nonce material.
        let part2 = &payload[pos..pos + tail];
        let part2 = part2.strip_suffix(&[0]).unwrap_or(part2);
        nonce.extend_from_slice(part2);
        pos += tail;
    }
    let plugin = if caps & CLIENT_PLUGIN_AUTH != 0 {
        let end = payload[pos..]
            .iter()
            .position(|&b| b == 0)
            .unwrap_or(payload.len() - pos);
        String::from_utf8_lossy(&payload[pos..pos + end]).into_owned()
    } else {
        NATIVE_PLUGIN.to_string()
    };
    nonce.truncate(20);
    Ok((nonce, plugin))
}

/// AuthSwitchRequest: 0xfe, plugin name NUL, fresh auth data.
fn parse_auth_switch(payload: &[u8]) -> Result<(String, Vec<u8>), ClientError> {
    let body = &payload[1..];
    let split = body
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| ClientError::Protocol("truncated auth switch".into()))?;
    let plugin = String::from_utf8_lossy(&body[..split]).into_owned();
    let data = body[split + 1..].to_vec();
    let data = data.strip_suffix(&[0]).map(<[u8]>::to_vec).unwrap_or(data);
    Ok((plugin, data))
}

/// `mysql_native_password` proof: SHA1(pw) XOR SHA1(nonce ++ SHA1(SHA1(pw))).
fn scramble_native(password: &[u8], nonce: &[u8]) -> Vec<u8> {
    if password.is_empty() {
        return Vec::new();
    }
    let h1 = Sha1::digest(password);
    let h2 = Sha1::digest(h1);
    let mut outer = Sha1::new();
    outer.update(nonce);
    outer.update(h2);
    let h3 = outer.finalize();
    h1.iter().zip(h3.iter()).map(|(a, b)| a ^ b).collect()
}

fn server_error(payload: &[u8]) -> ClientError {
    if payload.len() < 3 {
        return ClientError::Protocol("truncated error packet".into());
    }
    let code = u16::from_le_bytes([payload[1], payload[2]]);
    let mut body = &payload[3..];
    // Protocol 4.1 inserts a '#' + five-byte SQL state before the message.
    if body.first() == Some(&b'#') && body.len() >= 6 {
        body = &body[6..];
    }
    ClientError::Server {
        code,
        message: String::from_utf8_lossy(body).into_owned(),
    }
}

/// EOF packets are 0xfe-marked and short; lenenc u64 values share the marker
/// but only appear in payloads of nine bytes or more.
fn is_eof(payload: &[u8]) -> bool {
    payload.first() == Some(&0xfe) && payload.len() < 9
}

/// Reads a length-encoded integer, advancing `pos`.
pub(crate) fn lenenc_int(buf: &[u8], pos: &mut usize) -> Option<u64> {
    let first = *buf.get(*pos)?;
    *pos += 1;
    match first {
        0xfb | 0xff => None,
        0xfc => {
            let b = buf.get(*pos..*pos + 2)?;
            *pos += 2;
            Some(u16::from_le_bytes([b[0], b[1]]) as u64)
        }
        0xfd => {
            let b = buf.get(*pos..*pos + 3)?;
            *pos += 3;
            Some(u32::from_le_bytes([b[0], b[1], b[2], 0]) as u64)
        }
        0xfe => {
            let b = buf.get(*pos..*pos + 8)?;
            *pos += 8;
            Some(u64::from_le_bytes(b.try_into().ok()?))
        }
        v => Some(v as u64),
    }
}

/// Appends a length-encoded integer.
pub(crate) fn push_lenenc_int(out: &mut Vec<u8>, value: u64) {
    match value {
        0..=0xfa => out.push(value as u8),
        0xfb..=0xffff => {
            out.push(0xfc);
            out.extend_from_slice(&(value as u16).to_le_bytes());
        }
        0x1_0000..=0xff_ffff => {
            out.push(0xfd);
            out.extend_from_slice(&(value as u32).to_le_bytes()[..3]);
        }
        _ => {
            out.push(0xfe);
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
}

/// Appends a length-encoded string.
pub(crate) fn push_lenenc_str(out: &mut Vec<u8>, value: &[u8]) {
    push_lenenc_int(out, value.len() as u64);
    out.extend_from_slice(value);
}

/// Decodes one text-protocol row: `columns` lenenc strings, 0xfb for NULL.
fn decode_text_row(payload: &[u8], columns: usize) -> Result<Row, ClientError> {
    let mut pos = 0usize;
    let mut row = Vec::with_capacity(columns);
    for _ in 0..columns {
        if payload.get(pos) == Some(&0xfb) {
            pos += 1;
            row.push(None);
            continue;
        }
        let len = lenenc_int(payload, &mut pos)
            .ok_or_else(|| ClientError::Protocol("bad cell length".into()))?
            as usize;
        let bytes = payload
            .get(pos..pos + len)
            .ok_or_else(|| ClientError::Protocol("truncated cell".into()))?;
        pos += len;
        row.push(Some(String::from_utf8_lossy(bytes).into_owned()));
    }
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scramble_matches_reference_vector() {
        let nonce: Vec<u8> = (1..=20).collect();
        let proof = scramble_native(b"sentinel-pw", &nonce);
        let hex: String = proof.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, "96899881e088855cb999c107b088d961c22774f9");
    }

    #[test]
    fn empty_password_sends_empty_proof() {
        let nonce: Vec<u8> = (1..=20).collect();
        assert!(scramble_native(b"", &nonce).is_empty());
    }

    #[test]
    fn lenenc_integers_round_trip() {
        for value in [0u64, 0xfa, 0xfb, 0xffff, 0x1_0000, 0xff_ffff, u64::MAX] {
            let mut buf = Vec::new();
            push_lenenc_int(&mut buf, value);
            let mut pos = 0;
            assert_eq!(lenenc_int(&buf, &mut pos), Some(value), "value {value:#x}");
            assert_eq!(pos, buf.len());
        }
    }

    #[test]
    fn greeting_parse_recovers_nonce_and_plugin() {
        let mut payload = vec![0x0a];
        payload.extend_from_slice(b"8.0.0-test\0");
        payload.extend_from_slice(&42u32.to_le_bytes());
        payload.extend_from_slice(b"abcdefgh");
        payload.push(0); // filler
        let caps = CLIENT_PROTOCOL_41 | CLIENT_SECURE_CONNECTION | CLIENT_PLUGIN_AUTH;
        payload.extend_from_slice(&(caps as u16).to_le_bytes());
        payload.push(33);
        payload.extend_from_slice(&2u16.to_le_bytes());
        payload.extend_from_slice(&((caps >> 16) as u16).to_le_bytes());
        payload.push(21);
        payload.extend_from_slice(&[0u8; 10]);
        payload.extend_from_slice(b"ijklmnopqrst\0");
        payload.extend_from_slice(b"mysql_native_password\0");

        let (nonce, plugin) = parse_greeting(&payload).expect("greeting should parse");
        assert_eq!(nonce, b"abcdefghijklmnopqrst");
        assert_eq!(plugin, "mysql_native_password");
    }

    #[test]
    fn error_packets_surface_code_and_message() {
        let mut payload = vec![0xff];
        payload.extend_from_slice(&1045u16.to_le_bytes());
        payload.extend_from_slice(b"#28000Access denied");
        match server_error(&payload) {
            ClientError::Server { code, message } => {
                assert_eq!(code, 1045);
                assert_eq!(message, "Access denied");
            }
            other => panic!("unexpected variant: {other:?}"),
        }
    }

    #[test]
    fn text_rows_decode_nulls_and_values() {
        let mut payload = Vec::new();
        push_lenenc_str(&mut payload, b"orders");
        payload.push(0xfb);
        push_lenenc_str(&mut payload, b"12");
        let row = decode_text_row(&payload, 3).expect("row should decode");
        assert_eq!(
            row,
            vec![Some("orders".into()), None, Some("12".into())]
        );
    }
}
