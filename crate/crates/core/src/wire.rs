//! Byte layouts for sealed datagram bodies and control messages.
//!
//! A datagram is a 23-byte clear header plus a sealed body. Data bodies
//! hold `stamp[64] inner_header[23] payload`; control bodies hold
//! `inner_header[23] control_payload`. The inner header must equal the
//! clear one after opening, which is what defeats clear-header rewrites.
//! Control messages ride plan id 0 with even sequence numbers client to
//! server and odd ones for the sealed replies.

use alloc::string::String;
use alloc::vec::Vec;

use crate::crypto::{self, derive_key, packet_key, MasterKey};
use crate::model::{
    canonical_header_bytes, parse_header, ClientId, EndpointId, Packet, PacketHeader, PacketKind,
    ServiceCategory, SourceAddr, Stamp, TransferSpec, HEADER_LEN,
};
use crate::packets::CONTROL_PLAN_ID;
use crate::stamp::STAMP_TOKEN_LEN;

const TAG_TRANSFER_REQUEST: u8 = 0x01;
const TAG_NEXT_ENDPOINT_REQUEST: u8 = 0x02;
const TAG_PLAN_GRANT: u8 = 0x81;
const TAG_NEXT_ENDPOINT_GRANT: u8 = 0x82;
const TAG_REJECTED: u8 = 0x83;

/// Client-to-server control message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlRequest {
    Transfer {
        spec: TransferSpec,
        category: ServiceCategory,
    },
    NextEndpoint,
}

/// One designed packet slot as delivered to the client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrantEntry {
    pub seq: u32,
    pub payload_len: u32,
    pub dest: EndpointId,
    pub stamp: Stamp,
}

/// Everything the client needs to send one transfer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanGrant {
    pub plan_id: u64,
    pub next_endpoint: EndpointId,
    pub entries: Vec<GrantEntry>,
}

impl PlanGrant {
    /// Reconstructs the exact header the server designed for one entry.
    pub fn header_for(&self, entry: &GrantEntry, client_source: SourceAddr) -> PacketHeader {
        PacketHeader {
            plan_id: self.plan_id,
            seq: entry.seq,
            payload_len: entry.payload_len,
            source: client_source,
            dest: entry.dest,
            kind: PacketKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    ServiceNotPermitted,
    EmptyTransfer,
    UnknownClient,
}

impl RejectReason {
    fn as_byte(self) -> u8 {
        match self {
            RejectReason::ServiceNotPermitted => 1,
            RejectReason::EmptyTransfer => 2,
            RejectReason::UnknownClient => 3,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(RejectReason::ServiceNotPermitted),
            2 => Some(RejectReason::EmptyTransfer),
            3 => Some(RejectReason::UnknownClient),
            _ => None,
        }
    }
}

/// Server-to-client control reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlReply {
    PlanGrant(PlanGrant),
    NextEndpointGrant(EndpointId),
    Rejected(RejectReason),
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, at: 0 }
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let slice = self.bytes.get(self.at..self.at + n)?;
        self.at += n;
        Some(slice)
    }

    fn u8(&mut self) -> Option<u8> {
        Some(self.take(1)?[0])
    }

    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finished(&self) -> bool {
        self.at == self.bytes.len()
    }
}

pub fn encode_control_request(req: &ControlRequest) -> Vec<u8> {
    let mut out = Vec::new();
    match req {
        ControlRequest::Transfer { spec, category } => {
            out.push(TAG_TRANSFER_REQUEST);
            put_u64(&mut out, spec.client.0);
            put_u64(&mut out, spec.total_size);
            out.extend_from_slice(&spec.content_digest);
            out.push(category.as_byte());
            put_u16(&mut out, spec.name.len() as u16);
            out.extend_from_slice(spec.name.as_bytes());
        }
        ControlRequest::NextEndpoint => out.push(TAG_NEXT_ENDPOINT_REQUEST),
    }
    out
}

pub fn decode_control_request(bytes: &[u8]) -> Option<ControlRequest> {
    let mut r = Reader::new(bytes);
    let req = match r.u8()? {
        TAG_TRANSFER_REQUEST => {
            let client = ClientId(r.u64()?);
            let total_size = r.u64()?;
            let content_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
            let category = ServiceCategory::from_byte(r.u8()?)?;
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).ok()?;
            ControlRequest::Transfer {
                spec: TransferSpec {
                    client,
                    total_size,
                    name,
                    content_digest,
                },
                category,
            }
        }
        TAG_NEXT_ENDPOINT_REQUEST => ControlRequest::NextEndpoint,
        _ => return None,
    };
    r.finished().then_some(req)
}

pub fn encode_control_reply(reply: &ControlReply) -> Vec<u8> {
    let mut out = Vec::new();
    match reply {
        ControlReply::PlanGrant(grant) => {
            out.push(TAG_PLAN_GRANT);
            put_u64(&mut out, grant.plan_id);
            put_u16(&mut out, grant.next_endpoint.0);
            put_u32(&mut out, grant.entries.len() as u32);
            for entry in &grant.entries {
                put_u32(&mut out, entry.seq);
                put_u32(&mut out, entry.payload_len);
                put_u16(&mut out, entry.dest.0);
                debug_assert_eq!(entry.stamp.as_bytes().len(), STAMP_TOKEN_LEN);
                out.extend_from_slice(entry.stamp.as_bytes());
            }
        }
        ControlReply::NextEndpointGrant(endpoint) => {
            out.push(TAG_NEXT_ENDPOINT_GRANT);
            put_u16(&mut out, endpoint.0);
        }
        ControlReply::Rejected(reason) => {
            out.push(TAG_REJECTED);
            out.push(reason.as_byte());
        }
    }
    out
}

pub fn decode_control_reply(bytes: &[u8]) -> Option<ControlReply> {
    let mut r = Reader::new(bytes);
    let reply = match r.u8()? {
        TAG_PLAN_GRANT => {
            let plan_id = r.u64()?;
            let next_endpoint = EndpointId(r.u16()?);
            let count = r.u32()? as usize;
            let mut entries = Vec::with_capacity(count);
            for _ in 0..count {
                entries.push(GrantEntry {
                    seq: r.u32()?,
                    payload_len: r.u32()?,
                    dest: EndpointId(r.u16()?),
                    stamp: Stamp(r.take(STAMP_TOKEN_LEN)?.to_vec()),
                });
            }
            ControlReply::PlanGrant(PlanGrant {
                plan_id,
                next_endpoint,
                entries,
            })
        }
        TAG_NEXT_ENDPOINT_GRANT => ControlReply::NextEndpointGrant(EndpointId(r.u16()?)),
        TAG_REJECTED => ControlReply::Rejected(RejectReason::from_byte(r.u8()?)?),
        _ => return None,
    };
    r.finished().then_some(reply)
}

/// Minimum sealed-data-body plaintext: stamp token plus inner header.
pub const DATA_BODY_MIN: usize = STAMP_TOKEN_LEN + HEADER_LEN;

/// Sealed-body plaintext for a data packet.
pub fn encode_data_body(stamp: &Stamp, header: &PacketHeader, payload: &[u8]) -> Vec<u8> {
    debug_assert_eq!(stamp.as_bytes().len(), STAMP_TOKEN_LEN);
    let mut out = Vec::with_capacity(DATA_BODY_MIN + payload.len());
    out.extend_from_slice(stamp.as_bytes());
    out.extend_from_slice(&canonical_header_bytes(header));
    out.extend_from_slice(payload);
    out
}

/// Splits an opened data body into stamp, inner header, and payload.
pub fn decode_data_body(body: &[u8]) -> Option<(Stamp, PacketHeader, &[u8])> {
    if body.len() < DATA_BODY_MIN {
        return None;
    }
    let stamp = Stamp(body[..STAMP_TOKEN_LEN].to_vec());
    let inner = parse_header(&body[STAMP_TOKEN_LEN..DATA_BODY_MIN]).ok()?;
    Some((stamp, inner, &body[DATA_BODY_MIN..]))
}

/// Sealed-body plaintext for a control packet.
pub fn encode_control_body(header: &PacketHeader, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&canonical_header_bytes(header));
    out.extend_from_slice(payload);
    out
}

/// Splits an opened control body into inner header and payload.
pub fn decode_control_body(body: &[u8]) -> Option<(PacketHeader, &[u8])> {
    if body.len() < HEADER_LEN {
        return None;
    }
    let inner = parse_header(&body[..HEADER_LEN]).ok()?;
    Some((inner, &body[HEADER_LEN..]))
}

/// Client-side constructor for one planned data packet.
pub fn build_data_packet(
    master: &MasterKey,
    header: PacketHeader,
    stamp: &Stamp,
    payload: &[u8],
) -> Packet {
    debug_assert_eq!(payload.len(), header.payload_len as usize);
    let body = encode_data_body(stamp, &header, payload);
    Packet {
        clear_header: header,
        sealed_body: crypto::seal(&packet_key(master, header.plan_id, header.seq), &body),
    }
}

/// Client-side constructor for a control packet on sequence `ctrl_seq`.
pub fn build_control_packet(
    master: &MasterKey,
    source: SourceAddr,
    dest: EndpointId,
    ctrl_seq: u32,
    req: &ControlRequest,
) -> Packet {
    let payload = encode_control_request(req);
    let header = PacketHeader {
        plan_id: CONTROL_PLAN_ID,
        seq: ctrl_seq,
        payload_len: payload.len() as u32,
        source,
        dest,
        kind: PacketKind::Control,
    };
    let body = encode_control_body(&header, &payload);
    Packet {
        clear_header: header,
        sealed_body: crypto::seal(&packet_key(master, CONTROL_PLAN_ID, ctrl_seq), &body),
    }
}

/// Seals a control reply for the client; replies use the odd sequence
/// right after the request they answer.
pub fn seal_control_reply(master: &MasterKey, reply_seq: u32, reply: &ControlReply) -> Vec<u8> {
    crypto::seal(
        &packet_key(master, CONTROL_PLAN_ID, reply_seq),
        &encode_control_reply(reply),
    )
}

/// Client-side opener for a sealed control reply.
pub fn open_control_reply(
    master: &MasterKey,
    reply_seq: u32,
    sealed: &[u8],
) -> Option<ControlReply> {
    let body = crypto::open(&packet_key(master, CONTROL_PLAN_ID, reply_seq), sealed).ok()?;
    decode_control_reply(&body)
}

/// Master-key dispatch sealed under the client's own key material (the
/// stand-in for public-key encryption to the client).
pub fn seal_master_grant(
    client_pki: &MasterKey,
    master: &MasterKey,
    client: ClientId,
    endpoint: EndpointId,
) -> Vec<u8> {
    let mut plaintext = Vec::with_capacity(42);
    plaintext.extend_from_slice(master.as_bytes());
    put_u64(&mut plaintext, client.0);
    put_u16(&mut plaintext, endpoint.0);
    crypto::seal(&derive_key(client_pki, 0), &plaintext)
}

/// Client-side opener for the master-key dispatch.
pub fn open_master_grant(
    client_pki: &MasterKey,
    sealed: &[u8],
) -> Option<(MasterKey, ClientId, EndpointId)> {
    let plaintext = crypto::open(&derive_key(client_pki, 0), sealed).ok()?;
    if plaintext.len() != 42 {
        return None;
    }
    let master = MasterKey::from_bytes(plaintext[..32].try_into().unwrap());
    let client = ClientId(u64::from_be_bytes(plaintext[32..40].try_into().unwrap()));
    let endpoint = EndpointId(u16::from_be_bytes(plaintext[40..42].try_into().unwrap()));
    Some((master, client, endpoint))
}
