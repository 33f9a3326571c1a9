//! Stamp issue and verification. A stamp is a sealed token binding a
//! packet header digest to an issue tick and a never-repeating serial, so
//! a packet can only be the one the server designed, presented while the
//! stamp is still fresh.

use rand_core::RngCore;

use crate::crypto::{self, derive_key, DynamicKey, MasterKey, SEAL_OVERHEAD};
use crate::model::{canonical_header_bytes, PacketHeader, Stamp};
use crate::Tick;

/// Stamp plaintext layout: `digest[32] issued_at[8] serial[8]`.
pub const STAMP_PLAINTEXT_LEN: usize = 48;

/// Sealed stamp token length.
pub const STAMP_TOKEN_LEN: usize = STAMP_PLAINTEXT_LEN + SEAL_OVERHEAD;

/// Server-side stamp secret; never leaves the engine.
#[derive(Clone)]
pub struct StampKey([u8; crypto::KEY_LEN]);

impl StampKey {
    pub fn from_bytes(bytes: [u8; crypto::KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; crypto::KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }
}

/// How long a stamp stays verifiable after issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreshnessWindow {
    max_age: Tick,
}

impl FreshnessWindow {
    pub fn new(max_age: Tick) -> Self {
        assert!(max_age > 0, "freshness window must be positive");
        Self { max_age }
    }

    pub fn max_age(&self) -> Tick {
        self.max_age
    }
}

/// Verification verdict, checked in a fixed order: the token must open,
/// then be fresh, then match the header it claims to represent. Anything
/// but `Ok` means the packet is suspect and the session must end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyOutcome {
    Ok,
    /// Issued too long ago, or claims a future issue tick.
    Stale,
    /// Fresh, but stamped for a different header.
    Mismatch,
    /// Token failed to open or has the wrong shape.
    Garbled,
}

/// Issues and verifies stamps. Issue requires `&mut self` (the serial
/// counter); verification is pure.
pub struct StampEngine {
    seal_key: DynamicKey,
    next_serial: u64,
}

impl StampEngine {
    pub fn new(key: StampKey) -> Self {
        Self {
            seal_key: derive_key(&MasterKey::from_bytes(key.0), 0),
            next_serial: 0,
        }
    }

    pub fn issued_count(&self) -> u64 {
        self.next_serial
    }

    /// Issues a sealed stamp for `h` at `now`. Serials strictly increase,
    /// so two stamps are never identical even for identical headers.
    pub fn issue_stamp(&mut self, h: &PacketHeader, now: Tick) -> Stamp {
        let serial = self.next_serial;
        self.next_serial += 1;

        let mut plaintext = [0u8; STAMP_PLAINTEXT_LEN];
        plaintext[..32].copy_from_slice(&crypto::digest256(&canonical_header_bytes(h)));
        plaintext[32..40].copy_from_slice(&now.to_be_bytes());
        plaintext[40..48].copy_from_slice(&serial.to_be_bytes());
        Stamp(crypto::seal(&self.seal_key, &plaintext))
    }

    /// Opens a stamp and checks freshness then header match.
    pub fn verify_stamp(
        &self,
        stamp: &Stamp,
        h: &PacketHeader,
        now: Tick,
        window: FreshnessWindow,
    ) -> VerifyOutcome {
        let plaintext = match crypto::open(&self.seal_key, stamp.as_bytes()) {
            Ok(p) if p.len() == STAMP_PLAINTEXT_LEN => p,
            _ => return VerifyOutcome::Garbled,
        };
        let issued_at = Tick::from_be_bytes(plaintext[32..40].try_into().unwrap());
        if issued_at > now || now - issued_at > window.max_age() {
            return VerifyOutcome::Stale;
        }
        if plaintext[..32] != crypto::digest256(&canonical_header_bytes(h)) {
            return VerifyOutcome::Mismatch;
        }
        VerifyOutcome::Ok
    }

    /// Opens a stamp without judging it; test support for serial checks.
    #[doc(hidden)]
    pub fn open_stamp(&self, stamp: &Stamp) -> Option<(Tick, u64)> {
        let plaintext = crypto::open(&self.seal_key, stamp.as_bytes()).ok()?;
        if plaintext.len() != STAMP_PLAINTEXT_LEN {
            return None;
        }
        Some((
            Tick::from_be_bytes(plaintext[32..40].try_into().unwrap()),
            u64::from_be_bytes(plaintext[40..48].try_into().unwrap()),
        ))
    }
}
