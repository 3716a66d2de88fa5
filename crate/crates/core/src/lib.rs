//! Private recommendation over an anonymizing relay.
//!
//! Clients mask their interaction sets with fake items, cut the mask into
//! additive shares and relay the shares through random peers before they
//! reach the server. Recommendations travel back the same way, steered by
//! previous-hop tables the clients built during upload.
//!
//! * [`split`]: masking, splitting, reconstruction and the share-summing attack
//! * [`protocol`]: virtual ids, triplets, client/server state machines, wire size
//! * [`simnet`]: round-synchronous network driver with byte accounting
//! * [`recommender`]: interaction matrix and the popularity baseline
//! * [`pipeline`]: upload, recommend, download with fidelity checks
//! * [`experiments`]: security, id-collision and communication-cost sweeps

pub mod dataset;
pub mod experiments;
pub mod pipeline;
pub mod protocol;
pub mod recommender;
pub mod rng;
pub mod simnet;
pub mod split;
pub mod stats;

pub use protocol::{ClientAddr, ClientState, ServerState, Triplet, VirtualId};
pub use simnet::{PhaseMetrics, SimConfig};
pub use split::{InteractionVector, SplitConfig, SplitError, SplitShare};
