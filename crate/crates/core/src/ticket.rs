//! Signature validation against the (simulated) issuing authority and
//! ticket issuance. The registry stands in for the third-party verifier;
//! membership is the whole validity question here.

use alloc::collections::{BTreeMap, BTreeSet};

use crate::model::{ClientId, ServiceSet, Signature, SourceAddr, Ticket};
use crate::Tick;

/// Set of signatures the issuing authority currently vouches for, plus a
/// call counter so tests can assert validation happens at most once per
/// authentication attempt.
#[derive(Debug, Default, Clone)]
pub struct SignatureRegistry {
    valid: BTreeSet<Signature>,
    validate_calls: u64,
}

impl SignatureRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, sig: Signature) {
        self.valid.insert(sig);
    }

    pub fn contains(&self, sig: &Signature) -> bool {
        self.valid.contains(sig)
    }

    /// One round-trip to the authority.
    pub fn validate(&mut self, sig: &Signature) -> bool {
        self.validate_calls += 1;
        self.valid.contains(sig)
    }

    pub fn validate_calls(&self) -> u64 {
        self.validate_calls
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }
}

/// Which services each issuer's clients are granted, and for how long a
/// ticket lives. Every issuer present in the registry must have a row.
#[derive(Debug, Clone)]
pub struct ServicePolicy {
    rows: BTreeMap<u16, ServiceSet>,
    ticket_lifetime: Tick,
}

impl ServicePolicy {
    pub fn new(ticket_lifetime: Tick) -> Self {
        Self {
            rows: BTreeMap::new(),
            ticket_lifetime,
        }
    }

    pub fn set_issuer(&mut self, issuer: u16, services: ServiceSet) {
        debug_assert!(!services.is_empty());
        self.rows.insert(issuer, services);
    }

    pub fn services_for(&self, issuer: u16) -> Option<ServiceSet> {
        self.rows.get(&issuer).copied()
    }

    pub fn ticket_lifetime(&self) -> Tick {
        self.ticket_lifetime
    }
}

/// Result of one authentication attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthOutcome {
    Issued(Ticket, ClientId),
    Invalid,
}

/// Validates signatures and issues tickets. Black-list insertion and
/// notifications to the filter and endpoint director are the caller's
/// responsibility so the engines stay decoupled.
#[derive(Debug, Clone)]
pub struct TicketEngine {
    pub registry: SignatureRegistry,
    pub policy: ServicePolicy,
    next_client: u64,
}

impl TicketEngine {
    pub fn new(registry: SignatureRegistry, policy: ServicePolicy) -> Self {
        Self {
            registry,
            policy,
            next_client: 1,
        }
    }

    /// Validates `sig` against the registry; on a hit, allocates a fresh
    /// client id and issues a ticket from the issuer's policy row.
    pub fn authenticate(&mut self, sig: &Signature, _src: SourceAddr, now: Tick) -> AuthOutcome {
        if !self.registry.validate(sig) {
            return AuthOutcome::Invalid;
        }
        let services = match self.policy.services_for(sig.issuer) {
            Some(s) if !s.is_empty() => s,
            // A registered issuer without a policy row is a configuration
            // gap; refuse rather than grant nothing.
            _ => return AuthOutcome::Invalid,
        };
        let client = ClientId(self.next_client);
        self.next_client += 1;
        let ticket = Ticket {
            client,
            services,
            issued_at: now,
            expires_at: now + self.policy.ticket_lifetime(),
        };
        AuthOutcome::Issued(ticket, client)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ServiceCategory;

    fn engine() -> TicketEngine {
        let mut registry = SignatureRegistry::new();
        registry.register(Signature::new(1, 100));
        let mut policy = ServicePolicy::new(10_000);
        policy.set_issuer(
            1,
            [ServiceCategory::Message, ServiceCategory::Query]
                .into_iter()
                .collect(),
        );
        TicketEngine::new(registry, policy)
    }

    #[test]
    fn registered_signature_gets_policy_services() {
        let mut e = engine();
        match e.authenticate(&Signature::new(1, 100), SourceAddr(1), 5) {
            AuthOutcome::Issued(ticket, client) => {
                assert_eq!(client, ClientId(1));
                assert!(ticket.permits(ServiceCategory::Message));
                assert!(ticket.permits(ServiceCategory::Query));
                assert!(!ticket.permits(ServiceCategory::FileUpload));
                assert_eq!(ticket.issued_at, 5);
                assert_eq!(ticket.expires_at, 10_005);
            }
            AuthOutcome::Invalid => panic!("registered signature rejected"),
        }
    }

    #[test]
    fn unregistered_signature_is_invalid() {
        let mut e = engine();
        assert_eq!(
            e.authenticate(&Signature::new(1, 999), SourceAddr(1), 0),
            AuthOutcome::Invalid
        );
    }

    #[test]
    fn client_ids_are_unique_per_issue() {
        let mut e = engine();
        e.registry.register(Signature::new(1, 101));
        let a = e.authenticate(&Signature::new(1, 100), SourceAddr(1), 0);
        let b = e.authenticate(&Signature::new(1, 101), SourceAddr(2), 0);
        match (a, b) {
            (AuthOutcome::Issued(_, ca), AuthOutcome::Issued(_, cb)) => assert_ne!(ca, cb),
            _ => panic!("both should issue"),
        }
    }

    #[test]
    fn validation_counter_tracks_authority_calls() {
        let mut e = engine();
        assert_eq!(e.registry.validate_calls(), 0);
        e.authenticate(&Signature::new(1, 100), SourceAddr(1), 0);
        e.authenticate(&Signature::new(2, 7), SourceAddr(2), 0);
        assert_eq!(e.registry.validate_calls(), 2);
    }

    #[test]
    fn registered_issuer_without_policy_row_is_refused() {
        let mut registry = SignatureRegistry::new();
        registry.register(Signature::new(9, 1));
        let mut e = TicketEngine::new(registry, ServicePolicy::new(100));
        assert_eq!(
            e.authenticate(&Signature::new(9, 1), SourceAddr(1), 0),
            AuthOutcome::Invalid
        );
    }
}
