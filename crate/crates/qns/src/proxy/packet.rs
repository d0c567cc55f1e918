//! MySQL wire framing: `3-byte little-endian payload length · 1-byte
//! sequence id · payload`. The tap only ever *interprets* command-phase
//! packets (a client packet with sequence id 0 starts a new command);
//! everything else is relayed byte-for-byte.

use std::io::{self, Read, Write};

use thiserror::Error;

/// Largest payload one frame can carry; longer payloads continue in the
/// next frame.
pub const MAX_PAYLOAD: usize = 0xFF_FFFF;

pub const COM_QUIT: u8 = 0x01;
pub const COM_INIT_DB: u8 = 0x02;
pub const COM_QUERY: u8 = 0x03;

#[derive(Debug, Error)]
pub enum FramingError {
    #[error("substituted statement is {0} bytes; one frame carries at most {MAX_PAYLOAD}")]
    TooLong(usize),
}

/// One frame as it appeared on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WirePacket {
    pub seq: u8,
    pub payload: Vec<u8>,
}

impl WirePacket {
    pub fn new(seq: u8, payload: Vec<u8>) -> WirePacket {
        WirePacket { seq, payload }
    }

    /// Command packet carrying `sql` (sequence 0, as clients send them).
    pub fn query(sql: &str) -> WirePacket {
        let mut payload = Vec::with_capacity(sql.len() + 1);
        payload.push(COM_QUERY);
        payload.extend_from_slice(sql.as_bytes());
        WirePacket { seq: 0, payload }
    }
}

/// Reads one frame. `Ok(None)` means the peer closed cleanly between
/// frames; EOF inside a frame is an error.
pub fn read_packet(r: &mut impl Read) -> io::Result<Option<WirePacket>> {
    let mut header = [0u8; 4];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes([header[0], header[1], header[2], 0]) as usize;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(WirePacket { seq: header[3], payload }))
}

pub fn write_packet(w: &mut impl Write, packet: &WirePacket) -> io::Result<()> {
    debug_assert!(packet.payload.len() <= MAX_PAYLOAD);
    let len = (packet.payload.len() as u32).to_le_bytes();
    w.write_all(&[len[0], len[1], len[2], packet.seq])?;
    w.write_all(&packet.payload)
}

/// The SQL text, if this frame starts a `COM_QUERY` command. Frames at the
/// continuation limit are left opaque — their tail lives in the next frame.
pub fn extract_query(packet: &WirePacket) -> Option<String> {
    if packet.seq == 0
        && packet.payload.first() == Some(&COM_QUERY)
        && packet.payload.len() < MAX_PAYLOAD
    {
        Some(String::from_utf8_lossy(&packet.payload[1..]).into_owned())
    } else {
        None
    }
}

/// Re-frames the command with different SQL, preserving the sequence id.
pub fn substitute_query(packet: &WirePacket, sql: &str) -> Result<WirePacket, FramingError> {
    if sql.len() + 1 > MAX_PAYLOAD {
        return Err(FramingError::TooLong(sql.len() + 1));
    }
    let mut payload = Vec::with_capacity(sql.len() + 1);
    payload.push(COM_QUERY);
    payload.extend_from_slice(sql.as_bytes());
    Ok(WirePacket { seq: packet.seq, payload })
}

/// ERR packet (protocol 4.1 form: `0xff`, code, `#` + SQL state, message).
pub fn err_packet(seq: u8, code: u16, message: &str) -> WirePacket {
    let mut payload = vec![0xff];
    payload.extend_from_slice(&code.to_le_bytes());
    payload.push(b'#');
    payload.extend_from_slice(b"HY000");
    payload.extend_from_slice(message.as_bytes());
    WirePacket { seq, payload }
}

/// OK packet with no affected rows (autocommit status set).
pub fn ok_packet(seq: u8) -> WirePacket {
    WirePacket { seq, payload: vec![0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00] }
}
