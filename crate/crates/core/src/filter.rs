//! The only window for unauthenticated traffic: fixed-format request
//! intake, one-request-per-source dynamic blocking, and the black list of
//! invalid signatures, sorted by how often each one has been replayed so
//! the hottest entries are found first.
//!
//! Every failure is a drop outcome rather than an error; drops must stay
//! cheap because hostile input is the common case here.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::model::{Signature, SourceAddr};
use crate::{Tick, Units};

/// Unauthenticated requests are exactly this many bytes.
pub const REQUEST_LEN: usize = 256;

/// Leading magic of a well-formed request.
pub const REQUEST_MAGIC: [u8; 4] = *b"HACS";

const PHASE_CONTACT: u8 = 0;
const PHASE_SUBMIT: u8 = 1;
const SIG_OFFSET: usize = 5;
const SIG_LEN: usize = 12;

/// Builds a phase-0 initial-contact request.
pub fn encode_contact_request() -> Vec<u8> {
    let mut out = alloc::vec![0u8; REQUEST_LEN];
    out[..4].copy_from_slice(&REQUEST_MAGIC);
    out[4] = PHASE_CONTACT;
    out
}

/// Builds a phase-1 signature submission request.
pub fn encode_signature_request(sig: &Signature) -> Vec<u8> {
    let mut out = alloc::vec![0u8; REQUEST_LEN];
    out[..4].copy_from_slice(&REQUEST_MAGIC);
    out[4] = PHASE_SUBMIT;
    out[SIG_OFFSET..SIG_OFFSET + 2].copy_from_slice(&sig.issuer.to_be_bytes());
    out[SIG_OFFSET + 2..SIG_OFFSET + 10].copy_from_slice(&sig.serial.to_be_bytes());
    out[SIG_OFFSET + 10..SIG_OFFSET + 12].copy_from_slice(&sig.checksum.to_be_bytes());
    out
}

/// 1-based position in the black list.
pub type Rank = usize;

/// How the filter disposed of one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterOutcome {
    /// Format-valid, not black-listed: hand the signature to the ticket
    /// engine.
    ForwardToTicketEngine(Signature),
    /// Correct initial contact: reply with the public key.
    ReplyPublicKey,
    /// Wrong size, magic, phase, padding, or signature checksum.
    DropMalformed,
    /// The source is inside its dynamic block window.
    DropRateLimited,
    /// Signature found in the top checked slice of the black list.
    DropBlacklisted(Rank),
    /// The source is mid-authentication or already holds a session.
    DropAlreadyAuthenticated,
}

/// `capacity` was zero when computing a block duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacityZero;

/// Dynamic per-source block window: `t_fixed * served / capacity`, rounded
/// up to a whole tick. An idle system blocks for almost nothing so honest
/// clients get through quickly; a busy one holds each source off longer.
pub fn block_duration(t_fixed: Tick, served: u64, capacity: u64) -> Result<Tick, CapacityZero> {
    if capacity == 0 {
        return Err(CapacityZero);
    }
    let num = u128::from(t_fixed) * u128::from(served);
    Ok(num.div_ceil(u128::from(capacity)) as Tick)
}

#[derive(Debug, Clone)]
struct BlackEntry {
    sig: Signature,
    count: u64,
    inserted: u64,
}

/// Invalid signatures with spoof counts, kept sorted by count descending
/// (ties broken by earlier insertion). Lookups scan only the top
/// `check_depth` entries, so probing stays O(depth) no matter how long the
/// list grows.
#[derive(Debug, Clone)]
pub struct BlackSignatureList {
    entries: Vec<BlackEntry>,
    check_depth: usize,
    next_insertion: u64,
    probe_comparisons: u64,
}

impl BlackSignatureList {
    pub fn new(check_depth: usize) -> Self {
        Self {
            entries: Vec::new(),
            check_depth,
            next_insertion: 0,
            probe_comparisons: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn check_depth(&self) -> usize {
        self.check_depth
    }

    /// Cumulative number of equality comparisons performed by committed
    /// probes; lets callers assert the O(depth) probe cost.
    pub fn probe_comparisons(&self) -> u64 {
        self.probe_comparisons
    }

    /// Signatures in list order, with counts, for oracle checks.
    pub fn snapshot(&self) -> Vec<(Signature, u64)> {
        self.entries.iter().map(|e| (e.sig, e.count)).collect()
    }

    fn position(&self, count: u64, inserted: u64) -> usize {
        // First index whose entry sorts after (count desc, inserted asc).
        self.entries
            .partition_point(|e| e.count > count || (e.count == count && e.inserted < inserted))
    }

    /// Records one more sighting of an invalid signature and returns its
    /// new 1-based rank.
    pub fn insert(&mut self, sig: Signature) -> Rank {
        let (count, inserted) = match self.entries.iter().position(|e| e.sig == sig) {
            Some(idx) => {
                let entry = self.entries.remove(idx);
                (entry.count + 1, entry.inserted)
            }
            None => {
                let stamp = self.next_insertion;
                self.next_insertion += 1;
                (1, stamp)
            }
        };
        let at = self.position(count, inserted);
        self.entries.insert(
            at,
            BlackEntry {
                sig,
                count,
                inserted,
            },
        );
        at + 1
    }

    /// Scans the top `check_depth` entries for `sig`, returning its rank
    /// and the number of comparisons performed. Read-only; callers commit
    /// the comparison count via [`Self::note_probe`].
    pub fn probe_top(&self, sig: &Signature) -> (Option<Rank>, u64) {
        let depth = self.check_depth.min(self.entries.len());
        let mut comparisons = 0;
        for (idx, entry) in self.entries[..depth].iter().enumerate() {
            comparisons += 1;
            if entry.sig == *sig {
                return (Some(idx + 1), comparisons);
            }
        }
        (None, comparisons)
    }

    pub fn note_probe(&mut self, comparisons: u64) {
        self.probe_comparisons += comparisons;
    }
}

/// Per-source block windows. An entry with `blocked_until <= now` is
/// semantically absent.
#[derive(Debug, Default, Clone)]
pub struct SourceGate {
    blocked: BTreeMap<SourceAddr, Tick>,
}

impl SourceGate {
    pub fn is_blocked(&self, src: SourceAddr, now: Tick) -> bool {
        self.blocked.get(&src).is_some_and(|until| now < *until)
    }

    pub fn blocked_until(&self, src: SourceAddr) -> Option<Tick> {
        self.blocked.get(&src).copied()
    }

    pub fn arm(&mut self, src: SourceAddr, until: Tick) {
        self.blocked.insert(src, until);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AuthState {
    Pending,
    Authenticated { expires_at: Tick },
}

/// Served-client count and capacity sampled when a request arrives; the
/// inputs to the dynamic block window.
#[derive(Debug, Clone, Copy)]
pub struct LoadSample {
    pub served: u64,
    pub capacity: u64,
}

/// Everything the filter decided about one request. Produced by the
/// read-only [`FilterEngine::classify_request`] and applied by
/// [`FilterEngine::commit_request`], so a caller can weigh the cost of a
/// request before mutating any state.
#[derive(Debug, Clone)]
pub struct RequestDecision {
    pub outcome: FilterOutcome,
    /// Black-list equality comparisons this classification performed.
    pub probes: u64,
    /// Gate window to arm on commit (requests that pass the gate re-arm it).
    pub arm_gate_until: Option<Tick>,
    /// Load sample behind `arm_gate_until`, kept for reporting.
    pub load: LoadSample,
}

/// Sealed master key and first endpoint handed to a freshly authenticated
/// client.
#[derive(Debug, Clone)]
pub struct MasterKeyDispatch {
    pub sealed_master: Vec<u8>,
    pub next_endpoint: crate::model::EndpointId,
}

/// `on_authenticated` was called for a source with no pending
/// authentication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownSource;

/// Intake state machine for the unauthenticated channel.
#[derive(Debug, Clone)]
pub struct FilterEngine {
    pub gate: SourceGate,
    pub blacklist: BlackSignatureList,
    auth: BTreeMap<SourceAddr, AuthState>,
    t_fixed: Tick,
}

impl FilterEngine {
    pub fn new(t_fixed: Tick, check_depth: usize) -> Self {
        Self {
            gate: SourceGate::default(),
            blacklist: BlackSignatureList::new(check_depth),
            auth: BTreeMap::new(),
            t_fixed,
        }
    }

    fn auth_state(&self, src: SourceAddr, now: Tick) -> Option<AuthState> {
        match self.auth.get(&src) {
            Some(AuthState::Authenticated { expires_at }) if *expires_at <= now => None,
            other => other.copied(),
        }
    }

    fn parse(raw: &[u8]) -> Option<Option<Signature>> {
        if raw.len() != REQUEST_LEN || raw[..4] != REQUEST_MAGIC {
            return None;
        }
        match raw[4] {
            PHASE_CONTACT => raw[5..].iter().all(|b| *b == 0).then_some(None),
            PHASE_SUBMIT => {
                if !raw[SIG_OFFSET + SIG_LEN..].iter().all(|b| *b == 0) {
                    return None;
                }
                let issuer = u16::from_be_bytes(raw[SIG_OFFSET..SIG_OFFSET + 2].try_into().unwrap());
                let serial =
                    u64::from_be_bytes(raw[SIG_OFFSET + 2..SIG_OFFSET + 10].try_into().unwrap());
                let checksum =
                    u16::from_be_bytes(raw[SIG_OFFSET + 10..SIG_OFFSET + 12].try_into().unwrap());
                Some(Some(Signature {
                    issuer,
                    serial,
                    checksum,
                }))
            }
            _ => None,
        }
    }

    /// Classifies a request without touching state. Checks run in a fixed
    /// order: format, source gate, authentication state, then (for
    /// signature submissions) checksum and black list.
    pub fn classify_request(
        &self,
        raw: &[u8],
        src: SourceAddr,
        now: Tick,
        load: LoadSample,
    ) -> Result<RequestDecision, CapacityZero> {
        let mut decision = RequestDecision {
            outcome: FilterOutcome::DropMalformed,
            probes: 0,
            arm_gate_until: None,
            load,
        };

        let parsed = match Self::parse(raw) {
            Some(p) => p,
            None => return Ok(decision),
        };

        if self.gate.is_blocked(src, now) {
            decision.outcome = FilterOutcome::DropRateLimited;
            return Ok(decision);
        }
        // The request is being processed: it consumes this source's slot
        // for the current window whatever happens next.
        decision.arm_gate_until = Some(now + block_duration(self.t_fixed, load.served, load.capacity)?);

        if self.auth_state(src, now).is_some() {
            decision.outcome = FilterOutcome::DropAlreadyAuthenticated;
            return Ok(decision);
        }

        let sig = match parsed {
            None => {
                decision.outcome = FilterOutcome::ReplyPublicKey;
                return Ok(decision);
            }
            Some(sig) => sig,
        };

        if !sig.is_well_formed() {
            decision.outcome = FilterOutcome::DropMalformed;
            return Ok(decision);
        }

        let (hit, comparisons) = self.blacklist.probe_top(&sig);
        decision.probes = comparisons;
        decision.outcome = match hit {
            Some(rank) => FilterOutcome::DropBlacklisted(rank),
            None => FilterOutcome::ForwardToTicketEngine(sig),
        };
        Ok(decision)
    }

    /// Applies a decision's state changes: arms the gate, records probe
    /// work, and marks forwarded sources as authenticating.
    pub fn commit_request(&mut self, src: SourceAddr, decision: &RequestDecision) {
        if let Some(until) = decision.arm_gate_until {
            self.gate.arm(src, until);
        }
        self.blacklist.note_probe(decision.probes);
        if let FilterOutcome::ForwardToTicketEngine(_) = decision.outcome {
            self.auth.insert(src, AuthState::Pending);
        }
    }

    /// Classify-and-commit in one step.
    pub fn handle_request(
        &mut self,
        raw: &[u8],
        src: SourceAddr,
        now: Tick,
        load: LoadSample,
    ) -> Result<FilterOutcome, CapacityZero> {
        let decision = self.classify_request(raw, src, now, load)?;
        self.commit_request(src, &decision);
        Ok(decision.outcome)
    }

    /// Marks a source authenticated after the ticket engine issued for it,
    /// returning the dispatch record to queue back to the client. Future
    /// requests from the source are dropped until the ticket expires.
    pub fn on_authenticated(
        &mut self,
        src: SourceAddr,
        sealed_master: Vec<u8>,
        next_endpoint: crate::model::EndpointId,
        expires_at: Tick,
    ) -> Result<MasterKeyDispatch, UnknownSource> {
        match self.auth.get(&src) {
            Some(AuthState::Pending) => {
                self.auth.insert(src, AuthState::Authenticated { expires_at });
                Ok(MasterKeyDispatch {
                    sealed_master,
                    next_endpoint,
                })
            }
            _ => Err(UnknownSource),
        }
    }

    /// Clears the pending mark after a rejected authentication so the
    /// source can retry once it renews its signature.
    pub fn on_auth_rejected(&mut self, src: SourceAddr) {
        if let Some(AuthState::Pending) = self.auth.get(&src) {
            self.auth.remove(&src);
        }
    }

    /// Forgets an authenticated source (session terminated); the source
    /// may authenticate again through the normal path.
    pub fn on_session_closed(&mut self, src: SourceAddr) {
        if let Some(AuthState::Authenticated { .. }) = self.auth.get(&src) {
            self.auth.remove(&src);
        }
    }

    pub fn is_authenticated(&self, src: SourceAddr, now: Tick) -> bool {
        matches!(
            self.auth_state(src, now),
            Some(AuthState::Authenticated { .. })
        )
    }

    /// Insert an SIV-rejected signature into the black list.
    pub fn blacklist_insert(&mut self, sig: Signature) -> Rank {
        self.blacklist.insert(sig)
    }

    /// Process-unit cost of a classified request under `costs`.
    pub fn decision_cost(decision: &RequestDecision, costs: &FilterCosts) -> Units {
        match decision.outcome {
            FilterOutcome::ReplyPublicKey => costs.header_inspect,
            FilterOutcome::ForwardToTicketEngine(_) => {
                costs.header_inspect + decision.probes * costs.blacklist_probe + costs.siv_validate
            }
            FilterOutcome::DropBlacklisted(_) => {
                costs.drop + decision.probes * costs.blacklist_probe
            }
            FilterOutcome::DropMalformed
            | FilterOutcome::DropRateLimited
            | FilterOutcome::DropAlreadyAuthenticated => costs.drop,
        }
    }
}

/// The slice of the cost table the filter path consumes.
#[derive(Debug, Clone, Copy)]
pub struct FilterCosts {
    pub header_inspect: Units,
    pub drop: Units,
    pub blacklist_probe: Units,
    pub siv_validate: Units,
}
