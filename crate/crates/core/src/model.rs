//! Shared domain vocabulary: addresses, signatures, tickets, packet
//! headers, stamps and transfer plans, plus the canonical byte layouts
//! that the crypto and stamp layers digest.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::Tick;

/// Opaque simulated network address. Totally ordered so it can key
/// rate-limit and session tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceAddr(pub u32);

/// Index of one receive endpoint, always `< I` for a deployment with
/// `I` endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EndpointId(pub u16);

/// Id assigned to a client when its signature is accepted; unique per
/// authenticated session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClientId(pub u64);

/// Client identity credential: issuer id, serial, and a checksum over
/// both. The checksum is the public form check; validity against the
/// signature registry is a separate question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub issuer: u16,
    pub serial: u64,
    pub checksum: u16,
}

impl Signature {
    /// Builds a signature with the correct checksum for `(issuer, serial)`.
    pub fn new(issuer: u16, serial: u64) -> Self {
        Self {
            issuer,
            serial,
            checksum: signature_checksum(issuer, serial),
        }
    }

    /// True iff the stored checksum matches the checksum function of the
    /// other two fields.
    pub fn is_well_formed(&self) -> bool {
        self.checksum == signature_checksum(self.issuer, self.serial)
    }
}

/// 16-bit one's-complement sum (with end-around carry) of the canonical
/// bytes of `(issuer, serial)`: issuer as 2 big-endian bytes followed by
/// serial as 8, summed as five 16-bit words. All-zero input sums to 0.
pub fn signature_checksum(issuer: u16, serial: u64) -> u16 {
    let mut bytes = [0u8; 10];
    bytes[..2].copy_from_slice(&issuer.to_be_bytes());
    bytes[2..].copy_from_slice(&serial.to_be_bytes());
    let mut sum: u32 = 0;
    for word in bytes.chunks_exact(2) {
        sum += u32::from(u16::from_be_bytes([word[0], word[1]]));
    }
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    sum as u16
}

/// Service classes a ticket can grant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceCategory {
    Message,
    FileUpload,
    Query,
}

impl ServiceCategory {
    pub fn as_byte(self) -> u8 {
        match self {
            ServiceCategory::Message => 0,
            ServiceCategory::FileUpload => 1,
            ServiceCategory::Query => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(ServiceCategory::Message),
            1 => Some(ServiceCategory::FileUpload),
            2 => Some(ServiceCategory::Query),
            _ => None,
        }
    }
}

/// Small closed set of [`ServiceCategory`] values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ServiceSet(u8);

impl ServiceSet {
    pub const EMPTY: ServiceSet = ServiceSet(0);

    pub fn insert(&mut self, cat: ServiceCategory) {
        self.0 |= 1 << cat.as_byte();
    }

    pub fn contains(&self, cat: ServiceCategory) -> bool {
        self.0 & (1 << cat.as_byte()) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
}

impl FromIterator<ServiceCategory> for ServiceSet {
    fn from_iter<T: IntoIterator<Item = ServiceCategory>>(iter: T) -> Self {
        let mut set = ServiceSet::EMPTY;
        for cat in iter {
            set.insert(cat);
        }
        set
    }
}

/// Grant issued after authentication: which services the client may use
/// and for how long.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ticket {
    pub client: ClientId,
    pub services: ServiceSet,
    pub issued_at: Tick,
    pub expires_at: Tick,
}

impl Ticket {
    pub fn is_live(&self, now: Tick) -> bool {
        now < self.expires_at
    }

    pub fn permits(&self, cat: ServiceCategory) -> bool {
        self.services.contains(cat)
    }
}

/// Whether a packet carries transfer data or a control message on the
/// reserved control plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacketKind {
    Data,
    Control,
}

impl PacketKind {
    pub fn as_byte(self) -> u8 {
        match self {
            PacketKind::Data => 0,
            PacketKind::Control => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(PacketKind::Data),
            1 => Some(PacketKind::Control),
            _ => None,
        }
    }
}

/// Clear packet header. Every field is fixed by the server when it
/// designs the packet; the sealed body carries an identical inner copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketHeader {
    pub plan_id: u64,
    pub seq: u32,
    pub payload_len: u32,
    pub source: SourceAddr,
    pub dest: EndpointId,
    pub kind: PacketKind,
}

/// Canonical header layout: `plan_id[8] seq[4] payload_len[4] source[4]
/// dest[2] kind[1]`, all big-endian.
pub const HEADER_LEN: usize = 23;

/// Fixed-width big-endian serialization of a header, injective over valid
/// headers. Stamp digests and inner header copies are computed over these
/// bytes, so the layout is part of the wire contract.
pub fn canonical_header_bytes(h: &PacketHeader) -> [u8; HEADER_LEN] {
    let mut out = [0u8; HEADER_LEN];
    out[0..8].copy_from_slice(&h.plan_id.to_be_bytes());
    out[8..12].copy_from_slice(&h.seq.to_be_bytes());
    out[12..16].copy_from_slice(&h.payload_len.to_be_bytes());
    out[16..20].copy_from_slice(&h.source.0.to_be_bytes());
    out[20..22].copy_from_slice(&h.dest.0.to_be_bytes());
    out[22] = h.kind.as_byte();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeaderParseError {
    BadLength,
    BadKind,
}

/// Inverse of [`canonical_header_bytes`].
pub fn parse_header(bytes: &[u8]) -> Result<PacketHeader, HeaderParseError> {
    if bytes.len() != HEADER_LEN {
        return Err(HeaderParseError::BadLength);
    }
    let kind = PacketKind::from_byte(bytes[22]).ok_or(HeaderParseError::BadKind)?;
    Ok(PacketHeader {
        plan_id: u64::from_be_bytes(bytes[0..8].try_into().unwrap()),
        seq: u32::from_be_bytes(bytes[8..12].try_into().unwrap()),
        payload_len: u32::from_be_bytes(bytes[12..16].try_into().unwrap()),
        source: SourceAddr(u32::from_be_bytes(bytes[16..20].try_into().unwrap())),
        dest: EndpointId(u16::from_be_bytes(bytes[20..22].try_into().unwrap())),
        kind,
    })
}

/// Wire datagram: clear header plus the body sealed under the per-packet
/// dynamic key. The body opens only under the correct key and contains an
/// inner copy of the header that must match the clear one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub clear_header: PacketHeader,
    pub sealed_body: Vec<u8>,
}

/// Sealed stamp token. Opaque without the stamp key; once opened it
/// yields a header digest, issue tick, and unique serial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stamp(pub Vec<u8>);

impl Stamp {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Client-declared description of one message or file transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferSpec {
    pub client: ClientId,
    pub total_size: u64,
    pub name: String,
    pub content_digest: [u8; 32],
}

/// One server-designed packet slot: the header, its stamp, and the
/// endpoint that must receive it (always equal to `header.dest`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanEntry {
    pub header: PacketHeader,
    pub stamp: Stamp,
    pub endpoint: EndpointId,
}

/// Server-designed layout of a whole transfer: one entry per packet, the
/// endpoint the client should use after this exchange, and a receive
/// bitmap used to stop duplicates.
#[derive(Debug, Clone)]
pub struct TransferPlan {
    pub plan_id: u64,
    pub spec: TransferSpec,
    pub entries: Vec<PlanEntry>,
    pub next_endpoint: EndpointId,
    pub received: SeqBitmap,
}

/// Monotone bitmap over packet sequence numbers: bits are only ever set.
#[derive(Debug, Clone)]
pub struct SeqBitmap {
    blocks: Vec<u64>,
    len: usize,
    set_count: usize,
}

impl SeqBitmap {
    pub fn new(len: usize) -> Self {
        Self {
            blocks: alloc::vec![0u64; len.div_ceil(64)],
            len,
            set_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_set(&self, idx: usize) -> bool {
        idx < self.len && self.blocks[idx / 64] & (1 << (idx % 64)) != 0
    }

    /// Sets `idx`; returns false if it was already set.
    pub fn set(&mut self, idx: usize) -> bool {
        debug_assert!(idx < self.len);
        let mask = 1 << (idx % 64);
        if self.blocks[idx / 64] & mask != 0 {
            return false;
        }
        self.blocks[idx / 64] |= mask;
        self.set_count += 1;
        true
    }

    pub fn set_count(&self) -> usize {
        self.set_count
    }

    pub fn all_set(&self) -> bool {
        self.set_count == self.len
    }
}
