//! Chord-like ring DHT with a virtual-server layer: entity placement by
//! hashing, VS-to-node mapping, size accounting and the migration machinery.

mod migration;

pub use migration::{
    migrate_vs, rtt_multiplier, sample_migration_time, slow_start_rounds, MigrationRecord,
    RttDistribution, RttError, RttModel, MSS_BYTES,
};

use crate::workload::EntityDescriptor;
use sha1::{Digest, Sha1};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DhtError {
    #[error("ring cannot be partitioned into zero ranges")]
    EmptyPartition,
    #[error("node {0:?} is not a peer; only peers fail")]
    NotAPeer(NodeId),
    #[error("corruption: peer-hosted VS {vs} has no backup replica")]
    MissingBackup { vs: usize },
}

/// 160-bit ring identifier. Stored as three big-endian limbs, the most
/// significant limited to 32 bits; all arithmetic is modulo 2^160.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DhtId(pub [u64; 3]);

impl DhtId {
    pub const ZERO: DhtId = DhtId([0, 0, 0]);

    pub fn from_bytes(bytes: &[u8; 20]) -> DhtId {
        let hi = u32::from_be_bytes(bytes[0..4].try_into().unwrap()) as u64;
        let mid = u64::from_be_bytes(bytes[4..12].try_into().unwrap());
        let lo = u64::from_be_bytes(bytes[12..20].try_into().unwrap());
        DhtId([hi, mid, lo])
    }

    pub fn to_bytes(self) -> [u8; 20] {
        let mut out = [0u8; 20];
        out[0..4].copy_from_slice(&(self.0[0] as u32).to_be_bytes());
        out[4..12].copy_from_slice(&self.0[1].to_be_bytes());
        out[12..20].copy_from_slice(&self.0[2].to_be_bytes());
        out
    }

    /// SHA-1 digest of arbitrary content, as a ring id.
    pub fn digest(content: &[u8]) -> DhtId {
        let d = Sha1::digest(content);
        DhtId::from_bytes(&d.into())
    }

    /// `floor(i * 2^160 / n)` — the i-th boundary of an n-way equal split.
    pub fn nth_boundary(i: u64, n: u64) -> DhtId {
        assert!(n > 0 && i < n);
        // numerator = i << 160 as a 256-bit big-endian limb array
        let num = [i >> 32, (i & 0xFFFF_FFFF) << 32, 0u64, 0u64];
        let mut rem: u128 = 0;
        let mut q = [0u64; 4];
        for k in 0..4 {
            let cur = (rem << 64) | num[k] as u128;
            q[k] = (cur / n as u128) as u64;
            rem = cur % n as u128;
        }
        debug_assert_eq!(q[0], 0);
        debug_assert!(q[1] <= u32::MAX as u64);
        DhtId([q[1], q[2], q[3]])
    }

    pub fn to_hex(self) -> String {
        let b = self.to_bytes();
        b.iter().map(|x| format!("{x:02x}")).collect()
    }
}

/// Half-open ring range `[start, end)`. `start == end` denotes the full
/// ring (the single-VS partition), never the empty range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingRange {
    pub start: DhtId,
    pub end: DhtId,
}

impl RingRange {
    pub fn contains(&self, id: DhtId) -> bool {
        use std::cmp::Ordering::*;
        match self.start.cmp(&self.end) {
            Less => self.start <= id && id < self.end,
            Greater => id >= self.start || id < self.end,
            Equal => true,
        }
    }
}

/// Physical node identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Cloud,
    Peer,
}

/// A physical resource. Cloud nodes never fail; peers cost nothing.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Upload capacity, bytes/second.
    pub cap: f64,
    /// Bandwidth price, dollars per byte.
    pub bcost: f64,
    /// Rent, dollars per second of presence.
    pub rcost_per_s: f64,
    /// Failure probability per epoch.
    pub fprob: f64,
}

impl NodeSpec {
    pub fn cloud(id: NodeId, cap: f64, bcost: f64, rcost_per_s: f64) -> NodeSpec {
        NodeSpec {
            id,
            kind: NodeKind::Cloud,
            cap,
            bcost,
            rcost_per_s,
            fprob: 0.0,
        }
    }

    pub fn peer(id: NodeId, cap: f64, fprob: f64) -> NodeSpec {
        NodeSpec {
            id,
            kind: NodeKind::Peer,
            cap,
            bcost: 0.0,
            rcost_per_s: 0.0,
            fprob,
        }
    }

    pub fn is_cloud(&self) -> bool {
        self.kind == NodeKind::Cloud
    }
}

/// Size accounting constants: access entry is uid+ip+port (3 x 32 bit),
/// routing entry is a ring id plus an address (160 + 32 bit).
pub const ACCESS_ENTRY_BYTES: u64 = 12;
pub const ROUTING_ENTRY_BYTES: u64 = 24;

/// One client connection record in a VS access list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEntry {
    pub client_uid: u32,
    pub ip: u32,
    pub port: u32,
}

/// A migratable unit owning a ring range and the entities hashed into it.
/// Migrations move hosting, never ranges.
#[derive(Debug, Clone)]
pub struct VirtualServer {
    pub vs_id: DhtId,
    pub range: RingRange,
    pub entities: BTreeSet<u32>,
    pub access_list: Vec<AccessEntry>,
    pub routing_table: Vec<(DhtId, u32)>,
    pub host: NodeId,
    /// Set while the VS runs on its backup cloud host after a peer failure;
    /// cleared by the next reclamation migration.
    pub backed_up: bool,
    /// Monotone write counter used to check snapshot staleness.
    pub state_version: u64,
    /// First step at which the VS is reachable again after a migration.
    pub accessible_from: u64,
}

impl VirtualServer {
    pub fn is_accessible(&self, step: u64) -> bool {
        step >= self.accessible_from
    }
}

pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// Split the ring into `n` equal contiguous half-open ranges and attach a
/// `ceil(log2 n)`-entry routing table (successors at power-of-two offsets)
/// to each VS. All VSs start on `initial_host`.
pub fn partition_ring(n: usize, initial_host: NodeId) -> Result<Vec<VirtualServer>, DhtError> {
    if n == 0 {
        return Err(DhtError::EmptyPartition);
    }
    let bounds: Vec<DhtId> = (0..n as u64).map(|i| DhtId::nth_boundary(i, n as u64)).collect();
    let table_len = ceil_log2(n) as usize;
    let mut vss = Vec::with_capacity(n);
    for i in 0..n {
        let start = bounds[i];
        let end = bounds[(i + 1) % n];
        let routing_table = (0..table_len)
            .map(|k| {
                let succ = (i + (1usize << k)) % n;
                (bounds[succ], succ as u32)
            })
            .collect();
        vss.push(VirtualServer {
            vs_id: start,
            range: RingRange { start, end },
            entities: BTreeSet::new(),
            access_list: Vec::new(),
            routing_table,
            host: initial_host,
            backed_up: false,
            state_version: 0,
            accessible_from: 0,
        });
    }
    Ok(vss)
}

/// Ring id of an entity: digest of the canonical serialization of its
/// initial content. Stable across runs and platforms.
pub fn hash_entity(descriptor: &EntityDescriptor) -> DhtId {
    DhtId::digest(&descriptor.content_bytes())
}

/// Index of the VS whose range contains `id`. Total given the partition
/// invariant; binary search over the sorted range starts.
pub fn lookup(id: DhtId, vss: &[VirtualServer]) -> usize {
    debug_assert!(!vss.is_empty());
    match vss.binary_search_by(|vs| vs.range.start.cmp(&id)) {
        Ok(i) => i,
        // predecessor of the insertion point; id below the first start wraps
        // to the last VS
        Err(0) => vss.len() - 1,
        Err(i) => i - 1,
    }
}

/// Serialized size of a VS: entity descriptors, access list and routing
/// table. `total_vs` is the (initial) partition size fixing the routing
/// table length.
pub fn vs_size_bytes(entity_count: u64, access_count: u64, total_vs: usize) -> u64 {
    entity_count * EntityDescriptor::WIRE_BYTES
        + access_count * ACCESS_ENTRY_BYTES
        + ceil_log2(total_vs) as u64 * ROUTING_ENTRY_BYTES
}

/// Backup replica of a peer-hosted VS, pinned to a cloud node and refreshed
/// on the periodic synchronization schedule.
#[derive(Debug, Clone)]
pub struct BackupVs {
    pub cloud_host: NodeId,
    pub synced_version: u64,
    pub last_sync_step: u64,
}

/// Promote the backups of every VS hosted on `failed_peer`: hosting moves to
/// the backup cloud node, state reverts to the last synchronized snapshot
/// and the VS is marked backed-up so a later epoch reclaims it.
///
/// Returns the reassignments `(vs index, new host)`.
pub fn promote_backup(
    failed_peer: NodeId,
    failed_kind: NodeKind,
    vss: &mut [VirtualServer],
    backups: &std::collections::BTreeMap<usize, BackupVs>,
) -> Result<Vec<(usize, NodeId)>, DhtError> {
    if failed_kind != NodeKind::Peer {
        return Err(DhtError::NotAPeer(failed_peer));
    }
    let mut moves = Vec::new();
    for (i, vs) in vss.iter_mut().enumerate() {
        if vs.host != failed_peer {
            continue;
        }
        let b = backups.get(&i).ok_or(DhtError::MissingBackup { vs: i })?;
        vs.host = b.cloud_host;
        vs.backed_up = true;
        vs.state_version = b.synced_version;
        moves.push((i, b.cloud_host));
    }
    Ok(moves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::child_rng;
    use rand::Rng;

    fn descriptor(rng: &mut impl Rng) -> EntityDescriptor {
        let mut attrs = [(0u32, 0u64); 10];
        for a in &mut attrs {
            *a = (rng.gen(), rng.gen());
        }
        EntityDescriptor::new(rng.gen(), [rng.gen(), rng.gen()], attrs, rng.gen())
    }

    #[test]
    fn hashing_is_deterministic() {
        let mut rng = child_rng(1, "hash");
        let d = descriptor(&mut rng);
        assert_eq!(hash_entity(&d), hash_entity(&d));
        assert_eq!(d.dht_id, hash_entity(&d));
    }

    #[test]
    fn ids_are_uniform_over_ring_buckets() {
        // chi-square over 16 buckets, 10^4 ids, 15 degrees of freedom;
        // the p > 0.01 critical value is 30.58
        let mut rng = child_rng(2, "hash");
        let mut buckets = [0u64; 16];
        let n = 10_000;
        for _ in 0..n {
            let id = hash_entity(&descriptor(&mut rng));
            buckets[(id.0[0] >> 28) as usize] += 1;
        }
        let expected = n as f64 / 16.0;
        let chi2: f64 = buckets
            .iter()
            .map(|b| {
                let d = *b as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 30.58, "chi2 = {chi2}, buckets {buckets:?}");
    }

    #[test]
    fn single_attribute_change_flips_the_id() {
        let mut rng = child_rng(3, "hash");
        for _ in 0..1_000_000 {
            let d = descriptor(&mut rng);
            let mut d2 = d.clone();
            let slot = rng.gen_range(0..10);
            d2.attributes[slot].1 = d2.attributes[slot].1.wrapping_add(1);
            let d2 = EntityDescriptor::new(d2.uid, d2.position, d2.attributes, d2.has_think);
            assert_ne!(d.dht_id, d2.dht_id);
        }
    }

    #[test]
    fn partition_n1_is_the_whole_ring() {
        let vss = partition_ring(1, NodeId(0)).unwrap();
        assert_eq!(vss.len(), 1);
        assert_eq!(vss[0].range.start, vss[0].range.end);
        assert!(vss[0].range.contains(DhtId::ZERO));
        assert!(vss[0].range.contains(DhtId([u32::MAX as u64, 1, 2])));
        assert!(vss[0].routing_table.is_empty());
    }

    #[test]
    fn partition_n4_has_exact_boundaries() {
        let vss = partition_ring(4, NodeId(0)).unwrap();
        // 2^160 / 4 = 2^158: boundary i has top limb i * 2^30
        for (i, vs) in vss.iter().enumerate() {
            assert_eq!(vs.range.start, DhtId([(i as u64) << 30, 0, 0]));
        }
        assert_eq!(vss[0].routing_table.len(), 2);
    }

    #[test]
    fn partition_balances_uniform_entities() {
        // 1000 uniformly hashed entities over 100 VSs; compare the observed
        // chi-square statistic against the 99th percentile of a simulated
        // multinomial reference, which is the independent oracle here.
        let vss = partition_ring(100, NodeId(0)).unwrap();
        let mut rng = child_rng(4, "hash");
        let mut counts = vec![0u32; 100];
        for _ in 0..1000 {
            let id = hash_entity(&descriptor(&mut rng));
            counts[lookup(id, &vss)] += 1;
        }
        let chi2_of = |counts: &[u32]| -> f64 {
            counts
                .iter()
                .map(|c| {
                    let d = *c as f64 - 10.0;
                    d * d / 10.0
                })
                .sum()
        };
        let observed = chi2_of(&counts);
        let mut sims: Vec<f64> = (0..200)
            .map(|_| {
                let mut c = vec![0u32; 100];
                for _ in 0..1000 {
                    c[rng.gen_range(0..100)] += 1;
                }
                chi2_of(&c)
            })
            .collect();
        sims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p99 = sims[197];
        assert!(observed < p99, "chi2 {observed} above simulated p99 {p99}");
    }

    #[test]
    fn lookup_boundaries_are_half_open() {
        let vss = partition_ring(8, NodeId(0)).unwrap();
        for i in 0..8 {
            assert_eq!(lookup(vss[i].range.start, &vss), i);
            assert_eq!(lookup(vss[i].range.end, &vss), (i + 1) % 8);
        }
    }

    #[test]
    fn lookup_agrees_with_linear_scan() {
        let vss = partition_ring(37, NodeId(0)).unwrap();
        let mut rng = child_rng(5, "hash");
        for _ in 0..10_000 {
            let id = hash_entity(&descriptor(&mut rng));
            let fast = lookup(id, &vss);
            let slow = vss.iter().position(|vs| vs.range.contains(id)).unwrap();
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn vs_size_matches_published_accounting() {
        // 10^4 VSs, no entities, no clients: 14 routing entries, 336 bytes
        assert_eq!(vs_size_bytes(0, 0, 10_000), 336);
        // 1 entity, no clients, 2 VSs: 140 + 24
        assert_eq!(vs_size_bytes(1, 0, 2), 164);
        assert_eq!(ceil_log2(10_000), 14);
        assert_eq!(ceil_log2(1), 0);
    }

    #[test]
    fn promotion_moves_hosting_to_the_backup_cloud() {
        let mut vss = partition_ring(3, NodeId(9)).unwrap();
        vss[1].host = NodeId(5);
        vss[1].state_version = 42;
        let mut backups = std::collections::BTreeMap::new();
        backups.insert(
            1,
            BackupVs {
                cloud_host: NodeId(0),
                synced_version: 40,
                last_sync_step: 100,
            },
        );
        let moves =
            promote_backup(NodeId(5), NodeKind::Peer, &mut vss, &backups).unwrap();
        assert_eq!(moves, vec![(1, NodeId(0))]);
        assert_eq!(vss[1].host, NodeId(0));
        assert!(vss[1].backed_up);
        // state is the last synchronized snapshot
        assert_eq!(vss[1].state_version, 40);
    }

    #[test]
    fn clouds_never_fail() {
        let mut vss = partition_ring(1, NodeId(0)).unwrap();
        let backups = std::collections::BTreeMap::new();
        assert!(matches!(
            promote_backup(NodeId(0), NodeKind::Cloud, &mut vss, &backups),
            Err(DhtError::NotAPeer(_))
        ));
    }

    #[test]
    fn missing_backup_is_corruption() {
        let mut vss = partition_ring(1, NodeId(5)).unwrap();
        let backups = std::collections::BTreeMap::new();
        assert!(matches!(
            promote_backup(NodeId(5), NodeKind::Peer, &mut vss, &backups),
            Err(DhtError::MissingBackup { vs: 0 })
        ));
    }
}
