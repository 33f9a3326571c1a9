//! Per-packet dynamic key schedule and the sealing primitive used for
//! stamps, packet bodies, and key dispatches.
//!
//! Keys change for every packet: a per-client master key is stretched
//! through a keyed PRF over a counter, so sniffing one packet's key tells
//! an attacker nothing about the next. Sealing is a deterministic
//! encrypt-then-MAC construction over HMAC-SHA256 with a 128-bit tag;
//! any modification of sealed bytes, or opening under the wrong key,
//! fails with [`TamperError`].

use alloc::vec::Vec;

use hmac::{Hmac, KeyInit, Mac};
use rand_core::RngCore;
use sha2::{Digest, Sha256};

type HmacSha256 = Hmac<Sha256>;

/// Secret key length for master, dynamic, and stamp keys.
pub const KEY_LEN: usize = 32;

/// Bytes added by [`seal`]: the 128-bit integrity tag.
pub const SEAL_OVERHEAD: usize = 16;

/// Per-client secret issued once at authentication and never reused
/// across clients.
#[derive(Clone)]
pub struct MasterKey([u8; KEY_LEN]);

impl MasterKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

/// One packet's key: a pure function of `(master, counter)`.
#[derive(Clone)]
pub struct DynamicKey {
    counter: u128,
    key: [u8; KEY_LEN],
}

impl DynamicKey {
    pub fn counter(&self) -> u128 {
        self.counter
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.key
    }
}

fn hmac256(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    for part in parts {
        mac.update(part);
    }
    mac.finalize().into_bytes().into()
}

/// Derives the dynamic key for `counter` from a master key. The PRF input
/// is the 16 big-endian counter bytes, so distinct counters give distinct
/// keys except with negligible probability.
pub fn derive_key(master: &MasterKey, counter: u128) -> DynamicKey {
    DynamicKey {
        counter,
        key: hmac256(&master.0, &[&counter.to_be_bytes()]),
    }
}

/// Key for packet `seq` of plan `plan_id`: the counter bytes are the
/// 8-byte big-endian sequence number followed by the 8-byte plan id, so
/// keys are unique per (plan, packet). Plan id 0 is the control stream.
pub fn packet_key(master: &MasterKey, plan_id: u64, seq: u32) -> DynamicKey {
    derive_key(master, (u128::from(seq) << 64) | u128::from(plan_id))
}

/// Integrity check failed: the sealed bytes were modified or the key is
/// wrong. The two cases are deliberately indistinguishable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TamperError;

impl core::fmt::Display for TamperError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("sealed data failed its integrity check")
    }
}

fn subkey(key: &DynamicKey, label: &[u8]) -> [u8; 32] {
    hmac256(&key.key, &[label])
}

fn apply_keystream(enc_key: &[u8; 32], tag: &[u8; SEAL_OVERHEAD], data: &mut [u8]) {
    for (block_idx, chunk) in data.chunks_mut(32).enumerate() {
        let block = hmac256(enc_key, &[tag, &(block_idx as u32).to_be_bytes()]);
        for (byte, pad) in chunk.iter_mut().zip(block.iter()) {
            *byte ^= pad;
        }
    }
}

/// Seals `plaintext` under `key`: output is a 16-byte tag over the
/// plaintext followed by the keystream-encrypted bytes. Deterministic;
/// `|sealed| = |plaintext| + SEAL_OVERHEAD`.
///
/// The tag doubles as the keystream synthetic IV, so a key that seals
/// multiple distinct plaintexts (the stamp key does) still never reuses
/// a keystream.
pub fn seal(key: &DynamicKey, plaintext: &[u8]) -> Vec<u8> {
    assert!(!plaintext.is_empty(), "seal requires non-empty plaintext");
    let mac_key = subkey(key, b"seal/mac");
    let enc_key = subkey(key, b"seal/enc");
    let full_tag = hmac256(&mac_key, &[plaintext]);
    let mut tag = [0u8; SEAL_OVERHEAD];
    tag.copy_from_slice(&full_tag[..SEAL_OVERHEAD]);

    let mut out = Vec::with_capacity(SEAL_OVERHEAD + plaintext.len());
    out.extend_from_slice(&tag);
    out.extend_from_slice(plaintext);
    apply_keystream(&enc_key, &tag, &mut out[SEAL_OVERHEAD..]);
    out
}

/// Opens bytes produced by [`seal`]. Any single-bit change to the sealed
/// bytes, and any mismatched key, yields [`TamperError`].
pub fn open(key: &DynamicKey, sealed: &[u8]) -> Result<Vec<u8>, TamperError> {
    if sealed.len() <= SEAL_OVERHEAD {
        return Err(TamperError);
    }
    let mac_key = subkey(key, b"seal/mac");
    let enc_key = subkey(key, b"seal/enc");
    let mut tag = [0u8; SEAL_OVERHEAD];
    tag.copy_from_slice(&sealed[..SEAL_OVERHEAD]);

    let mut plaintext = sealed[SEAL_OVERHEAD..].to_vec();
    apply_keystream(&enc_key, &tag, &mut plaintext);

    let expected = hmac256(&mac_key, &[&plaintext]);
    let mut diff = 0u8;
    for (a, b) in expected[..SEAL_OVERHEAD].iter().zip(tag.iter()) {
        diff |= a ^ b;
    }
    if diff != 0 {
        return Err(TamperError);
    }
    Ok(plaintext)
}

/// 256-bit digest used for header binding and content checks.
pub fn digest256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}
