//! Discrete-time simulator and algorithm library for a hybrid cloud/peer
//! MMOG backend.
//!
//! The crate is organized around five subsystems:
//!
//! * [`workload`] — synthetic MMOG load: hotspot world layout, Zipfian object
//!   placement, Markov-chain avatar mobility, seasonal player population and
//!   the per-step bandwidth demand derived from AOI membership.
//! * [`vsdht`] — a Chord-like ring DHT with a virtual-server layer: entity
//!   placement by hashing, VS-to-node mapping, the migration protocol and an
//!   analytic TCP model for migration time.
//! * [`sam`] — the epoch-driven state manager: per-VS load prediction,
//!   risk/cost/load-factor accounting, VS selection, destination selection,
//!   cloud recruiting, plus a brute-force optimal-assignment oracle.
//! * [`pam`] — the positional manager: a periodic-update server model, the
//!   two-layer gossip overlay, tile-approximated AOI coverage with score-based
//!   and greedy neighbor selection, and the JC/AC quality metrics.
//! * [`sim`] — the harness tying everything together: clock, configuration,
//!   scenario presets and CSV metric emission.
//!
//! Every run is a pure function of `(config, seed)`: all randomness flows
//! through named [`rand_chacha`] streams derived from the master seed.

pub mod config;
pub mod geom;
pub mod pam;
pub mod rng;
pub mod sam;
pub mod sim;
pub mod vsdht;
pub mod workload;
