//! The wire protocol. Fixed-width integers are big-endian so the format is
//! bit-exact across implementations.
//!
//! Layout:
//!
//! ```text
//! magic "EBF1" | version u8 | msg_type u8 | request_id u64 | class u8
//! | payload_len u32 | payload bytes
//! | ts_count u16 | ts_count × (component_hash u64, enqueue u64, start u64, end u64)
//! ```
//!
//! Services append timestamp entries as they finish work; entries are never
//! mutated. Response payloads start with one status byte (0 = ok) followed by
//! a flags byte and an optional UTF-8 detail message.

use std::io::{Read, Write};

use ebf_core::hash::fnv64;
use ebf_core::time::Ns;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"EBF1";
pub const VERSION: u8 = 1;

/// Caps protect against garbage lengths from corrupt frames.
pub const MAX_PAYLOAD: u32 = 16 * 1024 * 1024;
pub const MAX_TS_ENTRIES: u16 = 4096;

pub const STATUS_OK: u8 = 0;
pub const STATUS_DOWNSTREAM_UNREACHABLE: u8 = 1;
pub const STATUS_INTERNAL: u8 = 2;
/// Response flag: tiered search probed every tier without reaching its quota.
pub const FLAG_QUOTA_SHORTFALL: u8 = 0b0000_0001;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Request = 0,
    Response = 1,
    /// Reserved for chained station-to-station relaying; the shipped
    /// composition model has the entry component orchestrate and every other
    /// service respond to its caller.
    Forward = 2,
    Health = 3,
}

impl TryFrom<u8> for MsgType {
    type Error = FrameError;

    fn try_from(v: u8) -> Result<Self, FrameError> {
        match v {
            0 => Ok(MsgType::Request),
            1 => Ok(MsgType::Response),
            2 => Ok(MsgType::Forward),
            3 => Ok(MsgType::Health),
            other => Err(FrameError::Corrupt(format!("unknown msg_type {other}"))),
        }
    }
}

/// One appended span record: which component (as an FNV-1a 64 tag of its id)
/// and its enqueue/start/end stamps on that host's monotonic clock.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TsEntry {
    pub component_hash: u64,
    pub enqueue_ns: Ns,
    pub start_ns: Ns,
    pub end_ns: Ns,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub request_id: u64,
    pub class: u8,
    pub payload: Vec<u8>,
    pub timestamps: Vec<TsEntry>,
}

impl Frame {
    pub fn request(request_id: u64, class: u8, payload: Vec<u8>) -> Self {
        Frame {
            msg_type: MsgType::Request,
            request_id,
            class,
            payload,
            timestamps: Vec::new(),
        }
    }

    pub fn health() -> Self {
        Frame {
            msg_type: MsgType::Health,
            request_id: 0,
            class: 0,
            payload: Vec::new(),
            timestamps: Vec::new(),
        }
    }

    pub fn response(request_id: u64, class: u8, status: u8, flags: u8, detail: &str) -> Self {
        let mut payload = vec![status, flags];
        payload.extend_from_slice(detail.as_bytes());
        Frame {
            msg_type: MsgType::Response,
            request_id,
            class,
            payload,
            timestamps: Vec::new(),
        }
    }

    pub fn status(&self) -> u8 {
        self.payload.first().copied().unwrap_or(STATUS_INTERNAL)
    }

    pub fn flags(&self) -> u8 {
        self.payload.get(1).copied().unwrap_or(0)
    }

    pub fn component_hash(id: &str) -> u64 {
        fnv64(id.as_bytes())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(19 + self.payload.len() + 2 + self.timestamps.len() * 32);
        buf.extend_from_slice(&MAGIC);
        buf.push(VERSION);
        buf.push(self.msg_type as u8);
        buf.extend_from_slice(&self.request_id.to_be_bytes());
        buf.push(self.class);
        buf.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        buf.extend_from_slice(&self.payload);
        buf.extend_from_slice(&(self.timestamps.len() as u16).to_be_bytes());
        for ts in &self.timestamps {
            buf.extend_from_slice(&ts.component_hash.to_be_bytes());
            buf.extend_from_slice(&ts.enqueue_ns.to_be_bytes());
            buf.extend_from_slice(&ts.start_ns.to_be_bytes());
            buf.extend_from_slice(&ts.end_ns.to_be_bytes());
        }
        buf
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("corrupt frame: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FrameError {
    /// True when the underlying cause is a read timeout rather than protocol
    /// damage or a closed peer.
    pub fn is_timeout(&self) -> bool {
        matches!(
            self,
            FrameError::Io(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut)
        )
    }
}

fn read_exact_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], FrameError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Reads one frame. Bad magic, version, type, or length limits close the
/// conversation with a `Corrupt` error.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, FrameError> {
    let magic: [u8; 4] = read_exact_array(r)?;
    if magic != MAGIC {
        return Err(FrameError::Corrupt(format!("bad magic {magic:02x?}")));
    }
    let version = read_exact_array::<_, 1>(r)?[0];
    if version != VERSION {
        return Err(FrameError::Corrupt(format!(
            "unsupported version {version}"
        )));
    }
    let msg_type = MsgType::try_from(read_exact_array::<_, 1>(r)?[0])?;
    let request_id = u64::from_be_bytes(read_exact_array(r)?);
    let class = read_exact_array::<_, 1>(r)?[0];
    let payload_len = u32::from_be_bytes(read_exact_array(r)?);
    if payload_len > MAX_PAYLOAD {
        return Err(FrameError::Corrupt(format!(
            "payload length {payload_len} exceeds cap"
        )));
    }
    let mut payload = vec![0u8; payload_len as usize];
    r.read_exact(&mut payload)?;
    let ts_count = u16::from_be_bytes(read_exact_array(r)?);
    if ts_count > MAX_TS_ENTRIES {
        return Err(FrameError::Corrupt(format!(
            "{ts_count} timestamp entries exceeds cap"
        )));
    }
    let mut timestamps = Vec::with_capacity(ts_count as usize);
    for _ in 0..ts_count {
        timestamps.push(TsEntry {
            component_hash: u64::from_be_bytes(read_exact_array(r)?),
            enqueue_ns: u64::from_be_bytes(read_exact_array(r)?),
            start_ns: u64::from_be_bytes(read_exact_array(r)?),
            end_ns: u64::from_be_bytes(read_exact_array(r)?),
        });
    }
    Ok(Frame {
        msg_type,
        request_id,
        class,
        payload,
        timestamps,
    })
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> std::io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}
