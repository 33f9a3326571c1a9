//! Engine suite for a server-controlled anti-DoS gateway.
//!
//! The server splits traffic into two channels. Unauthenticated requests
//! pass through a fixed-format filter with per-source dynamic blocking and
//! a frequency-sorted black list of invalid signatures. Authenticated
//! clients speak a sealed packet protocol in which every packet is designed
//! by the server, carries a sealed stamp binding its header to an issue
//! time, and must arrive at the exact endpoint announced for it.
//!
//! Everything here is deterministic: the [`netsim`] module drives the
//! engines under seeded honest and adversarial actors and produces
//! reproducible reports, and [`metrics`] evaluates closed-form capacity and
//! savings predictions against those reports.
//!
//! The crate is `no_std` (with `alloc`); file formats and the CLI live in
//! the companion `stampgate-cli` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod assembly;
pub mod crypto;
pub mod director;
pub mod filter;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod netsim;
pub mod packets;
pub mod stamp;
pub mod ticket;
pub mod wire;

/// Simulation time in abstract ticks.
pub type Tick = u64;

/// Processing cost in abstract process units.
pub type Units = u64;
