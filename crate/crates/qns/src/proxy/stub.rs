//! A scripted MySQL server for proxy tests and examples.
//!
//! The stub speaks just enough of the wire protocol to let a real client (or
//! [`AdminConn`](super::client::AdminConn)) complete a handshake and exchange
//! `COM_QUERY` round trips. Every query it receives is recorded verbatim, so
//! tests can assert on exactly what crossed the wire after the proxy had its
//! say. Responses come from a caller-supplied handler, defaulting to OK.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::client::{push_lenenc_int, push_lenenc_str};
use super::packet::{
    err_packet, ok_packet, read_packet, write_packet, WirePacket, COM_INIT_DB, COM_QUERY,
    COM_QUIT,
};

/// What the stub should answer to one query.
pub enum StubResponse {
    /// Plain OK, as for DDL or DML.
    Ok,
    /// A text resultset; every row must have the same arity.
    Rows(Vec<Vec<String>>),
    /// A server-side error.
    Err { code: u16, message: String },
}

type Handler = dyn Fn(&str) -> StubResponse + Send + Sync;

/// Handle to a running stub server; dropping it stops the accept loop.
pub struct StubUpstream {
    addr: SocketAddr,
    received: Arc<Mutex<Vec<String>>>,
    stop: Arc<AtomicBool>,
}

impl StubUpstream {
    /// Starts a stub that answers OK to everything.
    pub fn spawn() -> io::Result<Self> {
        Self::with_handler(|_| StubResponse::Ok)
    }

    /// Starts a stub whose responses are computed from the query text.
    pub fn with_handler(
        handler: impl Fn(&str) -> StubResponse + Send + Sync + 'static,
    ) -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let received: Arc<Mutex<Vec<String>>> = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);

        {
            let received = Arc::clone(&received);
            let stop = Arc::clone(&stop);
            thread::spawn(move || {
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let received = Arc::clone(&received);
                            let handler = Arc::clone(&handler);
                            thread::spawn(move || {
                                let _ = serve_connection(stream, &received, handler.as_ref());
                            });
                        }
                        Err(ref e) if e.kind() == io::ErrorKind::WouldBlock => {
                            thread::sleep(Duration::from_millis(10));
                        }
                        Err(_) => break,
                    }
                }
            });
        }

        Ok(StubUpstream {
            addr,
            received,
            stop,
        })
    }

    /// Address the stub listens on (an ephemeral loopback port).
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Every `COM_QUERY` text received so far, in arrival order.
    pub fn received(&self) -> Vec<String> {
        self.received.lock().expect("stub log lock").clone()
    }
}

impl Drop for StubUpstream {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

fn serve_connection(
    mut stream: TcpStream,
    received: &Mutex<Vec<String>>,
    handler: &Handler,
) -> io::Result<()> {
    stream.set_nodelay(true).ok();
    write_packet(&mut stream, &WirePacket::new(0, greeting_payload()))?;

    // HandshakeResponse41; contents are irrelevant to the stub.
    let Some(_response) = read_packet(&mut stream)? else {
        return Ok(());
    };
    write_packet(&mut stream, &ok_packet(2))?;

    loop {
        let Some(packet) = read_packet(&mut stream)? else {
            return Ok(());
        };
        match packet.payload.first() {
            Some(&COM_QUERY) => {
                let sql = String::from_utf8_lossy(&packet.payload[1..]).into_owned();
                received.lock().expect("stub log lock").push(sql.clone());
                match handler(&sql) {
                    StubResponse::Ok => write_packet(&mut stream, &ok_packet(1))?,
                    StubResponse::Err { code, message } => {
                        write_packet(&mut stream, &err_packet(1, code, &message))?
                    }
                    StubResponse::Rows(rows) => write_resultset(&mut stream, &rows)?,
                }
            }
            Some(&COM_INIT_DB) => write_packet(&mut stream, &ok_packet(1))?,
            Some(&COM_QUIT) | None => return Ok(()),
            Some(_) => write_packet(&mut stream, &ok_packet(1))?,
        }
    }
}

/// Handshake V10 greeting advertising `mysql_native_password`.
fn greeting_payload() -> Vec<u8> {
    const CAPS: u32 = 0x0200 | 0x8000 | 0x0008_0000; // protocol 41, secure connection, plugin auth
    let mut payload = vec![0x0a];
    payload.extend_from_slice(b"8.0.0-stub\0");
    payload.extend_from_slice(&99u32.to_le_bytes());
    payload.extend_from_slice(b"abcdefgh");
    payload.push(0);
    payload.extend_from_slice(&(CAPS as u16).to_le_bytes());
    payload.push(33); // utf8_general_ci
    payload.extend_from_slice(&2u16.to_le_bytes()); // autocommit
    payload.extend_from_slice(&((CAPS >> 16) as u16).to_le_bytes());
    payload.push(21);
    payload.extend_from_slice(&[0u8; 10]);
    payload.extend_from_slice(b"ijklmnopqrst\0");
    payload.extend_from_slice(b"mysql_native_password\0");
    payload
}

/// Classic text resultset: column count, definitions, EOF, rows, EOF.
fn write_resultset(stream: &mut TcpStream, rows: &[Vec<String>]) -> io::Result<()> {
    let columns = rows.first().map_or(1, Vec::len).max(1);
    let mut seq = 1u8;

    let mut count = Vec::new();
    push_lenenc_int(&mut count, columns as u64);
    write_packet(stream, &WirePacket::new(seq, count))?;
    seq = seq.wrapping_add(1);

    for index in 0..columns {
        write_packet(stream, &WirePacket::new(seq, column_definition(index)))?;
        seq = seq.wrapping_add(1);
    }
    write_packet(stream, &WirePacket::new(seq, eof_payload()))?;
    seq = seq.wrapping_add(1);

    for row in rows {
        let mut payload = Vec::new();
        for cell in row {
            push_lenenc_str(&mut payload, cell.as_bytes());
        }
        write_packet(stream, &WirePacket::new(seq, payload))?;
        seq = seq.wrapping_add(1);
    }
    write_packet(stream, &WirePacket::new(seq, eof_payload()))
}

/// Protocol 4.1 column definition; everything but the name is boilerplate.
fn column_definition(index: usize) -> Vec<u8> {
    let mut payload = Vec::new();
    push_lenenc_str(&mut payload, b"def");
    push_lenenc_str(&mut payload, b"");
    push_lenenc_str(&mut payload, b"");
    push_lenenc_str(&mut payload, b"");
    push_lenenc_str(&mut payload, format!("c{index}").as_bytes());
    push_lenenc_str(&mut payload, b"");
    payload.push(0x0c); // fixed-length block
    payload.extend_from_slice(&33u16.to_le_bytes()); // charset
    payload.extend_from_slice(&255u32.to_le_bytes()); // display length
    payload.push(0xfd); // VAR_STRING
    payload.extend_from_slice(&0u16.to_le_bytes()); // flags
    payload.push(0); // decimals
    payload.extend_from_slice(&[0u8; 2]);
    payload
}

fn eof_payload() -> Vec<u8> {
    vec![0xfe, 0x00, 0x00, 0x02, 0x00]
}
