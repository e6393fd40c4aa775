//! Frame and message formats.
//!
//! Every unit on the wire is one 64-byte frame: a 16-byte header followed by a
//! 48-byte payload slice. Messages longer than one slice are split into
//! consecutive frames sharing `(connection_id, rpc_id)` and put back together
//! by a [`Reassembler`] on the receiving side.
//!
//! ```text
//!  0      2          6          10    11    12    13    14      16             64
//!  +------+----------+----------+-----+-----+-----+-----+-------+--------------+
//!  | dst  | conn id  | rpc id   |kind | fn  | idx | cnt | total |  payload     |
//!  | u16  | u32      | u32      | u8  | u8  | u8  | u8  | u16   |  48 bytes    |
//!  +------+----------+----------+-----+-----+-----+-----+-------+--------------+
//! ```
//!
//! All integers are little-endian. Only the low nibble of the kind byte is
//! used; the high nibble is reserved and must be zero. The polling phase byte
//! is not part of the frame, it lives in the ring entry that carries it.

use std::borrow::Cow;
use std::collections::{HashMap, HashSet, VecDeque};

use thiserror::Error;

pub const FRAME_SIZE: usize = 64;
pub const HEADER_SIZE: usize = 16;
pub const FRAME_PAYLOAD: usize = FRAME_SIZE - HEADER_SIZE;
pub const DEFAULT_MAX_MESSAGE: usize = 4096;
/// Hard ceiling imposed by the 8-bit frame counter.
pub const MAX_FRAMES: usize = u8::MAX as usize;
pub const DEFAULT_REASSEMBLY_TIMEOUT_NS: u64 = 10_000_000;

/// Address of a tenant (one virtual NIC) on the switch.
pub type TenantAddr = u16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("message payload of {len} bytes exceeds the {max} byte limit")]
    OversizeMessage { len: usize, max: usize },
    #[error("invalid message: {0}")]
    InvalidMessage(&'static str),
    #[error("frame buffer must be {FRAME_SIZE} bytes, got {0}")]
    BadFrameLength(usize),
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
    #[error("frame for ({connection_id}, {rpc_id}) disagrees with the frames already received")]
    FrameMismatch { connection_id: u32, rpc_id: u32 },
    #[error("reassembly of ({connection_id}, {rpc_id}) timed out")]
    ReassemblyTimeout { connection_id: u32, rpc_id: u32 },
    #[error("field `{field}`: type mismatch")]
    TypeMismatch { field: String },
    #[error("field `{field}`: {len} bytes do not fit in char[{cap}]")]
    LengthOverflow { field: String, len: usize, cap: usize },
    #[error("argument buffer has {got} bytes, layout needs {want}")]
    ArgsLength { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameKind {
    Request = 0,
    Response = 1,
    Connect = 2,
    ConnectAck = 3,
    Disconnect = 4,
}

impl FrameKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => FrameKind::Request,
            1 => FrameKind::Response,
            2 => FrameKind::Connect,
            3 => FrameKind::ConnectAck,
            4 => FrameKind::Disconnect,
            _ => return None,
        })
    }

    pub fn is_control(self) -> bool {
        matches!(
            self,
            FrameKind::Connect | FrameKind::ConnectAck | FrameKind::Disconnect
        )
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct RpcFrame {
    pub dst_addr: TenantAddr,
    pub connection_id: u32,
    pub rpc_id: u32,
    pub kind: FrameKind,
    pub function_id: u8,
    pub frame_index: u8,
    pub frame_count: u8,
    pub payload_len_total: u16,
    pub payload: [u8; FRAME_PAYLOAD],
}

impl std::fmt::Debug for RpcFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RpcFrame")
            .field("dst", &self.dst_addr)
            .field("conn", &self.connection_id)
            .field("rpc", &self.rpc_id)
            .field("kind", &self.kind)
            .field("fn", &self.function_id)
            .field("frame", &format_args!("{}/{}", self.frame_index, self.frame_count))
            .field("total", &self.payload_len_total)
            .finish()
    }
}

impl RpcFrame {
    /// Single-frame control message with a short payload.
    pub fn control(
        kind: FrameKind,
        dst_addr: TenantAddr,
        connection_id: u32,
        body: &[u8],
    ) -> Self {
        assert!(!body.is_empty() && body.len() <= FRAME_PAYLOAD);
        let mut payload = [0u8; FRAME_PAYLOAD];
        payload[..body.len()].copy_from_slice(body);
        RpcFrame {
            dst_addr,
            connection_id,
            rpc_id: 0,
            kind,
            function_id: 0,
            frame_index: 0,
            frame_count: 1,
            payload_len_total: body.len() as u16,
            payload,
        }
    }

    pub fn encode(&self) -> [u8; FRAME_SIZE] {
        let mut out = [0u8; FRAME_SIZE];
        out[0..2].copy_from_slice(&self.dst_addr.to_le_bytes());
        out[2..6].copy_from_slice(&self.connection_id.to_le_bytes());
        out[6..10].copy_from_slice(&self.rpc_id.to_le_bytes());
        out[10] = self.kind as u8;
        out[11] = self.function_id;
        out[12] = self.frame_index;
        out[13] = self.frame_count;
        out[14..16].copy_from_slice(&self.payload_len_total.to_le_bytes());
        out[HEADER_SIZE..].copy_from_slice(&self.payload);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        if buf.len() != FRAME_SIZE {
            return Err(WireError::BadFrameLength(buf.len()));
        }
        if buf[10] & 0xF0 != 0 {
            return Err(WireError::MalformedFrame("reserved kind bits set"));
        }
        let kind =
            FrameKind::from_u8(buf[10]).ok_or(WireError::MalformedFrame("unknown frame kind"))?;
        let mut payload = [0u8; FRAME_PAYLOAD];
        payload.copy_from_slice(&buf[HEADER_SIZE..]);
        let frame = RpcFrame {
            dst_addr: u16::from_le_bytes([buf[0], buf[1]]),
            connection_id: u32::from_le_bytes([buf[2], buf[3], buf[4], buf[5]]),
            rpc_id: u32::from_le_bytes([buf[6], buf[7], buf[8], buf[9]]),
            kind,
            function_id: buf[11],
            frame_index: buf[12],
            frame_count: buf[13],
            payload_len_total: u16::from_le_bytes([buf[14], buf[15]]),
            payload,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if self.frame_count == 0 {
            return Err(WireError::MalformedFrame("frame_count is zero"));
        }
        if self.frame_index >= self.frame_count {
            return Err(WireError::MalformedFrame("frame_index out of range"));
        }
        let total = self.payload_len_total as usize;
        let count = self.frame_count as usize;
        if total > count * FRAME_PAYLOAD || total <= (count - 1) * FRAME_PAYLOAD {
            return Err(WireError::MalformedFrame(
                "payload_len_total inconsistent with frame_count",
            ));
        }
        Ok(())
    }

    /// The bytes of the message payload carried by this frame.
    pub fn chunk(&self) -> &[u8] {
        let start = self.frame_index as usize * FRAME_PAYLOAD;
        let len = (self.payload_len_total as usize - start).min(FRAME_PAYLOAD);
        &self.payload[..len]
    }

    pub fn is_last(&self) -> bool {
        self.frame_index + 1 == self.frame_count
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpcMessage {
    pub connection_id: u32,
    pub rpc_id: u32,
    pub kind: FrameKind,
    pub function_id: u8,
    pub payload: Vec<u8>,
}

/// Number of frames needed for a payload of `len` bytes.
pub fn frames_for(len: usize) -> usize {
    len.div_ceil(FRAME_PAYLOAD).max(1)
}

/// Split a message into cache-line frames addressed to `dst`.
pub fn fragment(
    msg: &RpcMessage,
    dst: TenantAddr,
    max_message: usize,
) -> Result<Vec<RpcFrame>, WireError> {
    let len = msg.payload.len();
    if len == 0 {
        return Err(WireError::InvalidMessage("empty payload"));
    }
    let max = max_message.min(MAX_FRAMES * FRAME_PAYLOAD);
    if len > max {
        return Err(WireError::OversizeMessage { len, max });
    }
    let count = frames_for(len);
    let frames = msg
        .payload
        .chunks(FRAME_PAYLOAD)
        .enumerate()
        .map(|(i, chunk)| {
            let mut payload = [0u8; FRAME_PAYLOAD];
            payload[..chunk.len()].copy_from_slice(chunk);
            RpcFrame {
                dst_addr: dst,
                connection_id: msg.connection_id,
                rpc_id: msg.rpc_id,
                kind: msg.kind,
                function_id: msg.function_id,
                frame_index: i as u8,
                frame_count: count as u8,
                payload_len_total: len as u16,
                payload,
            }
        })
        .collect();
    Ok(frames)
}

#[derive(Debug)]
struct Partial {
    kind: FrameKind,
    function_id: u8,
    frame_count: u8,
    payload_len_total: u16,
    received: [u64; 4],
    received_count: u8,
    buf: Vec<u8>,
    first_ns: u64,
}

impl Partial {
    fn has(&self, idx: u8) -> bool {
        self.received[idx as usize / 64] & (1 << (idx % 64)) != 0
    }

    fn mark(&mut self, idx: u8) {
        self.received[idx as usize / 64] |= 1 << (idx % 64);
        self.received_count += 1;
    }
}

type ReassemblyKey = (u32, u32, FrameKind);

/// Per-receiver reassembly state.
///
/// Frames of one message may interleave with frames of other messages. A
/// presence bitmap is enough because the fabric never reorders frames within
/// one direction of a connection, so no resequencing buffer is kept.
#[derive(Debug)]
pub struct Reassembler {
    partial: HashMap<ReassemblyKey, Partial>,
    recent: HashSet<ReassemblyKey>,
    recent_order: VecDeque<ReassemblyKey>,
    recent_cap: usize,
    timeout_ns: u64,
}

impl Default for Reassembler {
    fn default() -> Self {
        Self::new(DEFAULT_REASSEMBLY_TIMEOUT_NS)
    }
}

impl Reassembler {
    pub fn new(timeout_ns: u64) -> Self {
        Reassembler {
            partial: HashMap::new(),
            recent: HashSet::new(),
            recent_order: VecDeque::new(),
            recent_cap: 4096,
            timeout_ns,
        }
    }

    pub fn pending(&self) -> usize {
        self.partial.len()
    }

    /// Feed one frame. Returns the message once its last missing frame arrives.
    pub fn push(&mut self, frame: &RpcFrame, now_ns: u64) -> Result<Option<RpcMessage>, WireError> {
        frame.validate()?;
        let key = (frame.connection_id, frame.rpc_id, frame.kind);
        if self.recent.contains(&key) {
            return Ok(None);
        }
        if let Some(p) = self.partial.get(&key) {
            if now_ns.saturating_sub(p.first_ns) > self.timeout_ns {
                self.partial.remove(&key);
                return Err(WireError::ReassemblyTimeout {
                    connection_id: frame.connection_id,
                    rpc_id: frame.rpc_id,
                });
            }
            if p.frame_count != frame.frame_count
                || p.payload_len_total != frame.payload_len_total
                || p.function_id != frame.function_id
            {
                return Err(WireError::FrameMismatch {
                    connection_id: frame.connection_id,
                    rpc_id: frame.rpc_id,
                });
            }
        }

        if frame.frame_count == 1 {
            self.remember(key);
            return Ok(Some(RpcMessage {
                connection_id: frame.connection_id,
                rpc_id: frame.rpc_id,
                kind: frame.kind,
                function_id: frame.function_id,
                payload: frame.chunk().to_vec(),
            }));
        }

        let entry = self.partial.entry(key).or_insert_with(|| Partial {
            kind: frame.kind,
            function_id: frame.function_id,
            frame_count: frame.frame_count,
            payload_len_total: frame.payload_len_total,
            received: [0; 4],
            received_count: 0,
            buf: vec![0; frame.payload_len_total as usize],
            first_ns: now_ns,
        });
        if entry.has(frame.frame_index) {
            return Ok(None);
        }
        let start = frame.frame_index as usize * FRAME_PAYLOAD;
        let chunk = frame.chunk();
        entry.buf[start..start + chunk.len()].copy_from_slice(chunk);
        entry.mark(frame.frame_index);
        if entry.received_count < entry.frame_count {
            return Ok(None);
        }
        let done = self.partial.remove(&key).expect("entry present");
        self.remember(key);
        Ok(Some(RpcMessage {
            connection_id: key.0,
            rpc_id: key.1,
            kind: done.kind,
            function_id: done.function_id,
            payload: done.buf,
        }))
    }

    /// Evict every entry older than the timeout, returning their ids.
    pub fn expire(&mut self, now_ns: u64) -> Vec<(u32, u32)> {
        let timeout = self.timeout_ns;
        let stale: Vec<ReassemblyKey> = self
            .partial
            .iter()
            .filter(|(_, p)| now_ns.saturating_sub(p.first_ns) > timeout)
            .map(|(k, _)| *k)
            .collect();
        for k in &stale {
            self.partial.remove(k);
        }
        stale.into_iter().map(|(c, r, _)| (c, r)).collect()
    }

    fn remember(&mut self, key: ReassemblyKey) {
        if self.recent.insert(key) {
            self.recent_order.push_back(key);
            if self.recent_order.len() > self.recent_cap {
                if let Some(old) = self.recent_order.pop_front() {
                    self.recent.remove(&old);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Flat argument layout

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldType {
    Int32,
    Int64,
    /// Fixed-width byte string, zero padded.
    Char(usize),
}

impl FieldType {
    pub fn width(self) -> usize {
        match self {
            FieldType::Int32 => 4,
            FieldType::Int64 => 8,
            FieldType::Char(n) => n,
        }
    }
}

impl std::fmt::Display for FieldType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldType::Int32 => f.write_str("int32"),
            FieldType::Int64 => f.write_str("int64"),
            FieldType::Char(n) => write!(f, "char[{n}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDesc {
    pub name: Cow<'static, str>,
    pub ty: FieldType,
}

impl FieldDesc {
    pub const fn new(name: &'static str, ty: FieldType) -> Self {
        FieldDesc {
            name: Cow::Borrowed(name),
            ty,
        }
    }
}

/// A decoded argument. `Chars` holds the string without its zero padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Int32(i32),
    Int64(i64),
    Chars(Vec<u8>),
}

pub fn args_len(fields: &[FieldDesc]) -> usize {
    fields.iter().map(|f| f.ty.width()).sum()
}

/// Lay out `values` in declaration order: fixed-width little-endian integers,
/// `char[N]` as exactly N zero-padded bytes.
pub fn encode_args(fields: &[FieldDesc], values: &[FieldValue]) -> Result<Vec<u8>, WireError> {
    if fields.len() != values.len() {
        let field = fields
            .get(values.len())
            .map(|f| f.name.to_string())
            .unwrap_or_else(|| "<extra value>".into());
        return Err(WireError::TypeMismatch { field });
    }
    let mut out = Vec::with_capacity(args_len(fields));
    for (desc, value) in fields.iter().zip(values) {
        match (desc.ty, value) {
            (FieldType::Int32, FieldValue::Int32(v)) => out.extend_from_slice(&v.to_le_bytes()),
            (FieldType::Int64, FieldValue::Int64(v)) => out.extend_from_slice(&v.to_le_bytes()),
            (FieldType::Char(n), FieldValue::Chars(bytes)) => {
                if bytes.len() > n {
                    return Err(WireError::LengthOverflow {
                        field: desc.name.to_string(),
                        len: bytes.len(),
                        cap: n,
                    });
                }
                out.extend_from_slice(bytes);
                out.resize(out.len() + (n - bytes.len()), 0);
            }
            _ => {
                return Err(WireError::TypeMismatch {
                    field: desc.name.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn decode_args(fields: &[FieldDesc], bytes: &[u8]) -> Result<Vec<FieldValue>, WireError> {
    let want = args_len(fields);
    if bytes.len() != want {
        return Err(WireError::ArgsLength {
            got: bytes.len(),
            want,
        });
    }
    let mut at = 0;
    let mut values = Vec::with_capacity(fields.len());
    for desc in fields {
        let w = desc.ty.width();
        let raw = &bytes[at..at + w];
        values.push(match desc.ty {
            FieldType::Int32 => FieldValue::Int32(i32::from_le_bytes(raw.try_into().unwrap())),
            FieldType::Int64 => FieldValue::Int64(i64::from_le_bytes(raw.try_into().unwrap())),
            FieldType::Char(_) => FieldValue::Chars(trim_padding(raw).to_vec()),
        });
        at += w;
    }
    Ok(values)
}

/// Strip the zero padding of a `char[N]` field.
pub fn trim_padding(raw: &[u8]) -> &[u8] {
    let end = raw.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1);
    &raw[..end]
}
