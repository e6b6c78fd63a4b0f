//! Positional manager: periodic server updates, the two-layer gossip
//! overlay, tile-approximated coverage ranking and the JC/AC metrics.

mod heuristics;
pub mod metrics;
pub mod overlay;
mod system;
pub mod tiles;

pub use heuristics::{brute_force_max_coverage, greedy_heuristic, score_heuristic, CoverError};
pub use metrics::{ac, jc, AcSample};
pub use overlay::{LocalReplica, PeerDescriptor, PeerView, ReplicaRecord, Source};
pub use system::{EntityIndex, PamPeer, PamStepReport, PamSystem};
pub use tiles::{coverage, coverage_at, GridSpec, TileGrid, TileSet};

use crate::geom::{Disk, Point};

/// An area of interest: the disk around an avatar inside which it perceives
/// entities.
pub fn aoi(center: Point, radius: f64) -> Disk {
    debug_assert!(radius > 0.0);
    Disk::new(center, radius)
}
