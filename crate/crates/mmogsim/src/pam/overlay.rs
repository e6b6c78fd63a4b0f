//! Two-layer gossip state: a uniform random sample for connectivity and
//! bootstrap, and a coverage-ranked neighbor set for interest management.
//! Links are one-directional: a view names who a peer reads from, nothing
//! more.

use super::heuristics::{greedy_heuristic, score_heuristic};
use super::tiles::GridSpec;
use crate::config::Heuristic;
use crate::geom::{Disk, Point};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeMap;

/// What one peer knows about another: identity, last observed position and
/// the gossip iteration of the observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeerDescriptor {
    pub peer: u32,
    pub position: Point,
    pub timestamp: u64,
}

impl PeerDescriptor {
    pub fn age(&self, now: u64) -> u64 {
        now.saturating_sub(self.timestamp)
    }
}

/// The two gossip views of one peer.
#[derive(Debug, Clone, Default)]
pub struct PeerView {
    pub random_layer: Vec<PeerDescriptor>,
    pub coverage_layer: Vec<PeerDescriptor>,
}

impl PeerView {
    /// Did the coverage layer register this peer?
    pub fn covers(&self, peer: u32) -> bool {
        self.coverage_layer.iter().any(|d| d.peer == peer)
    }
}

/// Merge descriptor lists: freshest observation wins per peer, own entries
/// and entries older than the staleness threshold are dropped, the result
/// comes out freshest-first (ties toward the lower id). Feeding the ranking
/// heuristics in this order makes them favor fresh entries on equal rank.
pub fn merge_candidates(
    sources: &[&[PeerDescriptor]],
    self_id: u32,
    now: u64,
    stale_threshold: u64,
) -> Vec<PeerDescriptor> {
    let mut best: BTreeMap<u32, PeerDescriptor> = BTreeMap::new();
    for list in sources {
        for d in *list {
            if d.peer == self_id || d.age(now) > stale_threshold {
                continue;
            }
            match best.get(&d.peer) {
                Some(cur) if cur.timestamp >= d.timestamp => {}
                _ => {
                    best.insert(d.peer, *d);
                }
            }
        }
    }
    let mut out: Vec<PeerDescriptor> = best.into_values().collect();
    out.sort_by(|a, b| b.timestamp.cmp(&a.timestamp).then(a.peer.cmp(&b.peer)));
    out
}

/// Re-rank the coverage layer from a merged candidate list: candidates'
/// AOIs are disks of the shared radius around their observed positions, and
/// the configured heuristic keeps at most `d` of them.
pub fn rank_coverage_layer(
    own_position: Point,
    aoi_radius: f64,
    candidates: &[PeerDescriptor],
    d: usize,
    heuristic: Heuristic,
    spec: &GridSpec,
) -> Vec<PeerDescriptor> {
    if candidates.is_empty() || d == 0 {
        return Vec::new();
    }
    let own = Disk::new(own_position, aoi_radius);
    let disks: Vec<Disk> = candidates
        .iter()
        .map(|c| Disk::new(c.position, aoi_radius))
        .collect();
    let picked = match heuristic {
        Heuristic::Score => score_heuristic(&own, &disks, d, spec),
        Heuristic::Greedy => greedy_heuristic(&own, &disks, d, spec),
    };
    picked.into_iter().map(|i| candidates[i]).collect()
}

/// Refresh the random layer after an exchange: merge, age out, then keep a
/// uniform sample of at most `cap` entries.
pub fn refresh_random_layer<R: Rng>(
    view: &mut PeerView,
    incoming: &[PeerDescriptor],
    self_id: u32,
    now: u64,
    stale_threshold: u64,
    cap: usize,
    rng: &mut R,
) {
    let mut merged = merge_candidates(
        &[&view.random_layer, incoming],
        self_id,
        now,
        stale_threshold,
    );
    if merged.len() > cap {
        merged.shuffle(rng);
        merged.truncate(cap);
    }
    view.random_layer = merged;
}

/// The freshest half of a view (plus nothing else): the subset offered to a
/// gossip partner.
pub fn exchange_sample(layer: &[PeerDescriptor]) -> Vec<PeerDescriptor> {
    let mut s: Vec<PeerDescriptor> = layer.to_vec();
    s.sort_by(|a, b| b.timestamp.cmp(&a.timestamp).then(a.peer.cmp(&b.peer)));
    s.truncate((s.len() + 1) / 2);
    s
}

/// Where a replica record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Server,
    Overlay,
}

#[derive(Debug, Clone, Copy)]
pub struct ReplicaRecord {
    pub position: Point,
    pub timestamp: u64,
    pub source: Source,
}

/// A client's local picture of the entities around it: one record per uid,
/// freshest observation wins.
#[derive(Debug, Clone, Default)]
pub struct LocalReplica {
    pub records: BTreeMap<u32, ReplicaRecord>,
}

impl LocalReplica {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Insert keeping the freshest timestamp per uid.
    pub fn merge(&mut self, uid: u32, rec: ReplicaRecord) {
        match self.records.get(&uid) {
            Some(cur) if cur.timestamp >= rec.timestamp => {}
            _ => {
                self.records.insert(uid, rec);
            }
        }
    }

    /// Replace the server-sourced part wholesale with a fresh authoritative
    /// snapshot; overlay records stay unless the snapshot is fresher.
    pub fn refresh_from_server(&mut self, entries: &[(u32, Point)], now: u64) {
        self.records.retain(|_, r| r.source != Source::Server);
        for (uid, p) in entries {
            self.merge(
                *uid,
                ReplicaRecord {
                    position: *p,
                    timestamp: now,
                    source: Source::Server,
                },
            );
        }
    }

    /// Drop records whose recorded position left the client's AOI.
    pub fn evict_outside(&mut self, aoi: &Disk) {
        self.records.retain(|_, r| aoi.contains(&r.position));
    }
}

/// Import a neighbor's knowledge: records falling inside the querying
/// peer's AOI, freshest per uid; the querying client's own entity is never
/// imported. Import order does not matter because equal timestamps carry
/// equal observations.
pub fn import_from_neighbor(
    replica: &mut LocalReplica,
    neighbor: &LocalReplica,
    own_aoi: &Disk,
    own_uid: u32,
) {
    for (uid, rec) in &neighbor.records {
        if *uid == own_uid {
            continue;
        }
        if own_aoi.contains(&rec.position) {
            replica.merge(
                *uid,
                ReplicaRecord {
                    position: rec.position,
                    timestamp: rec.timestamp,
                    source: Source::Overlay,
                },
            );
        }
    }
}
