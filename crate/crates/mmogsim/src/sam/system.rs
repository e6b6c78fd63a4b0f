//! Epoch-driven manager runtime: applies plans, ingests prediction traffic,
//! handles peer failures and backup promotion, and accounts cost, risk and
//! availability step by step.

use super::selection::{select_destination, select_vs, CloudCard, SelectionParams, VirtualSystem};
use super::{apply_prediction_updates, EpochPlan, LoadPredictor, Prediction, PredictionMessage};
use crate::config::ManagerConfig;
use crate::vsdht::{
    hash_entity, lookup, migrate_vs, partition_ring, promote_backup, BackupVs, MigrationRecord,
    NodeId, NodeKind, NodeSpec, RttModel, VirtualServer,
};
use crate::workload::EntityDescriptor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Per-step outputs fed into the metrics aggregation.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub cost: f64,
    pub gamma_r: f64,
    pub requests_ok: u64,
    pub requests_bad: u64,
    pub overloaded_nodes: u32,
    pub migrations_started: u32,
    pub cloud_nodes: u32,
    pub peer_failures: u32,
}

/// One line of the epoch decision log.
#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: u64,
    pub migrations: u32,
    pub recruits: u32,
    pub releases: u32,
    pub cost: f64,
    pub gamma_r: f64,
    pub availability: f64,
}

impl EpochRow {
    pub const CSV_HEADER: &'static str =
        "epoch,migrations,recruits,releases,cost,gamma_r,availability";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6}",
            self.epoch,
            self.migrations,
            self.recruits,
            self.releases,
            self.cost,
            self.gamma_r,
            self.availability
        )
    }
}

/// The state-manager side of a simulation: ring, node roster, predictors and
/// the planning loop. The base cloud node (id 0) hosts the manager and every
/// backup replica and is never released.
pub struct SamSystem {
    pub cfg: ManagerConfig,
    pub delta_t: f64,
    pub vss: Vec<VirtualServer>,
    pub nodes: BTreeMap<NodeId, NodeSpec>,
    pub store: Vec<Prediction>,
    predictors: Vec<LoadPredictor>,
    msg_queue: VecDeque<(u64, PredictionMessage)>,
    pending_plan: Option<EpochPlan>,
    pending_releases: BTreeSet<NodeId>,
    backups: BTreeMap<usize, BackupVs>,
    pub rtt: RttModel,
    base_node: NodeId,
    next_node_id: u32,
    last_loads: Vec<f64>,
    epoch_index: u64,
    epoch_cost: f64,
    epoch_ok: u64,
    epoch_bad: u64,
    pub epoch_log: Vec<EpochRow>,
    pub migration_log: Vec<MigrationRecord>,
    rng_plan: ChaCha8Rng,
    rng_fail: ChaCha8Rng,
    rng_mt: ChaCha8Rng,
}

impl SamSystem {
    /// Smoothing factor for the node-local load estimators.
    pub const ALPHA: f64 = 0.5;

    pub fn new(
        cfg: ManagerConfig,
        delta_t: f64,
        vs_count: usize,
        peer_count: usize,
        rtt: RttModel,
        rng_plan: ChaCha8Rng,
        rng_fail: ChaCha8Rng,
        rng_mt: ChaCha8Rng,
    ) -> Self {
        let base_node = NodeId(0);
        let mut nodes = BTreeMap::new();
        nodes.insert(
            base_node,
            NodeSpec::cloud(
                base_node,
                cfg.cloud_cap,
                cfg.cloud_cost_per_byte(),
                cfg.cloud_rent_per_hour / 3600.0,
            ),
        );
        for i in 0..peer_count {
            let id = NodeId(1 + i as u32);
            nodes.insert(id, NodeSpec::peer(id, cfg.peer_cap, cfg.peer_fprob));
        }
        let vss = partition_ring(vs_count, base_node).expect("vs_count >= 1");
        let next_node_id = 1 + peer_count as u32;
        SamSystem {
            delta_t,
            vss,
            nodes,
            store: vec![Prediction::default(); vs_count],
            predictors: vec![LoadPredictor::new(Self::ALPHA); vs_count],
            msg_queue: VecDeque::new(),
            pending_plan: None,
            pending_releases: BTreeSet::new(),
            backups: BTreeMap::new(),
            rtt,
            base_node,
            next_node_id,
            last_loads: vec![0.0; vs_count],
            epoch_index: 0,
            epoch_cost: 0.0,
            epoch_ok: 0,
            epoch_bad: 0,
            epoch_log: Vec::new(),
            migration_log: Vec::new(),
            rng_plan,
            rng_fail,
            rng_mt,
            cfg,
        }
    }

    /// Hash every object into its VS. The entity-to-VS association is fixed
    /// for the system lifetime.
    pub fn assign_entities(&mut self, objects: &[EntityDescriptor]) {
        for o in objects {
            let vs = lookup(hash_entity(o), &self.vss);
            self.vss[vs].entities.insert(o.uid);
        }
    }

    /// Index of the VS owning entity uid `uid` (by its stored id).
    pub fn vs_of_entity(&self, dht_id: crate::vsdht::DhtId) -> usize {
        lookup(dht_id, &self.vss)
    }

    pub fn cloud_card(&self) -> CloudCard {
        CloudCard {
            cap: self.cfg.cloud_cap,
            bcost: self.cfg.cloud_cost_per_byte(),
            rcost_per_s: self.cfg.cloud_rent_per_hour / 3600.0,
        }
    }

    fn selection_params(&self) -> SelectionParams {
        SelectionParams {
            lf_up: self.cfg.lf_up,
            lf_bot: self.cfg.lf_bot,
            p_size: self.cfg.p_size,
            risk_limit: self.cfg.risk_limit,
            epoch_seconds: self.cfg.epoch_steps as f64 * self.delta_t,
        }
    }

    pub fn gamma_max(&self) -> f64 {
        self.vss
            .iter()
            .map(|vs| vs.entities.len() as f64 * self.cfg.peer_fprob)
            .sum()
    }

    pub fn gamma_r(&self) -> f64 {
        let gamma_max = self.gamma_max();
        if gamma_max <= 0.0 {
            return 0.0;
        }
        let gamma: f64 = self
            .vss
            .iter()
            .map(|vs| {
                let fprob = self.nodes.get(&vs.host).map_or(0.0, |n| n.fprob);
                vs.entities.len() as f64 * fprob
            })
            .sum();
        gamma / gamma_max
    }

    fn node_loads(&self, loads: &[f64]) -> BTreeMap<NodeId, f64> {
        let mut m: BTreeMap<NodeId, f64> = self.nodes.keys().map(|&n| (n, 0.0)).collect();
        for (vs, load) in self.vss.iter().zip(loads) {
            if let Some(e) = m.get_mut(&vs.host) {
                *e += *load;
            }
        }
        m
    }

    /// Advance one step. `loads` are per-VS bytes/second for this step;
    /// `requests` are per-VS client state-action counts.
    pub fn step(&mut self, t: u64, loads: &[f64], requests: &[u32]) -> StepReport {
        let mut report = StepReport::default();

        // epoch boundary: apply the previous plan, ingest coefficient
        // messages that arrived before now, compute the next plan
        if t % self.cfg.epoch_steps == 0 {
            report.migrations_started = self.run_epoch(t);
        }

        // peer failures, spread uniformly over the epoch so that the
        // per-epoch failure probability matches the configured value
        let per_step = 1.0 - (1.0 - self.cfg.peer_fprob).powf(1.0 / self.cfg.epoch_steps as f64);
        let peers: Vec<NodeId> = self
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Peer)
            .map(|n| n.id)
            .collect();
        for peer in peers {
            if self.rng_fail.gen::<f64>() < per_step {
                self.fail_peer(peer);
                report.peer_failures += 1;
            }
        }

        // periodic backup synchronization
        let sync_steps = (self.cfg.bvs_sync_seconds / self.delta_t).round().max(1.0) as u64;
        if t % sync_steps == 0 {
            for (vs_idx, b) in self.backups.iter_mut() {
                b.synced_version = self.vss[*vs_idx].state_version;
                b.last_sync_step = t;
            }
        }

        // client requests: unavailable when the VS is mid-migration or its
        // host is overloaded
        let node_loads = self.node_loads(loads);
        let mut overloaded: BTreeSet<NodeId> = BTreeSet::new();
        for (id, spec) in &self.nodes {
            if node_loads[id] / spec.cap >= 1.0 {
                overloaded.insert(*id);
            }
        }
        for (idx, (vs, req)) in self.vss.iter_mut().zip(requests).enumerate() {
            let _ = idx;
            if *req == 0 {
                continue;
            }
            if vs.is_accessible(t) && !overloaded.contains(&vs.host) {
                report.requests_ok += *req as u64;
                vs.state_version += *req as u64;
            } else {
                report.requests_bad += *req as u64;
            }
        }
        report.overloaded_nodes = overloaded.len() as u32;

        // node-local estimators observe and possibly emit coefficients
        for (v, load) in loads.iter().enumerate() {
            let cap = self.nodes.get(&self.vss[v].host).map_or(self.cfg.peer_cap, |n| n.cap);
            let xi_abs = self.cfg.xi_est * cap;
            if let Some(msg) = self.predictors[v].observe(v, *load, xi_abs, self.delta_t) {
                self.msg_queue.push_back((t, msg));
            }
        }
        self.last_loads.copy_from_slice(loads);

        // cost accrual: bandwidth on the hosting node plus rent of every
        // present node
        let mut step_cost = 0.0;
        for (vs, load) in self.vss.iter().zip(loads) {
            if let Some(n) = self.nodes.get(&vs.host) {
                step_cost += load * self.delta_t * n.bcost;
            }
        }
        for n in self.nodes.values() {
            step_cost += n.rcost_per_s * self.delta_t;
        }
        self.epoch_cost += step_cost;
        self.epoch_ok += report.requests_ok;
        self.epoch_bad += report.requests_bad;

        report.cost = step_cost;
        report.gamma_r = self.gamma_r();
        report.cloud_nodes = self
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Cloud)
            .count() as u32;
        report
    }

    fn fail_peer(&mut self, peer: NodeId) {
        let kind = self.nodes[&peer].kind;
        let moves = promote_backup(peer, kind, &mut self.vss, &self.backups)
            .expect("every peer-hosted VS carries a backup");
        for (vs_idx, _) in &moves {
            self.backups.remove(vs_idx);
        }
        self.nodes.remove(&peer);
        // churn replacement keeps the peer pool size constant
        let id = NodeId(self.next_node_id);
        self.next_node_id += 1;
        self.nodes
            .insert(id, NodeSpec::peer(id, self.cfg.peer_cap, self.cfg.peer_fprob));
    }

    fn run_epoch(&mut self, t: u64) -> u32 {
        let mut migrations_started = 0u32;

        // 1. apply the plan drafted at the previous boundary
        if let Some(plan) = self.pending_plan.take() {
            for spec in &plan.recruits {
                self.nodes.insert(spec.id, spec.clone());
            }
            let total_vs = self.vss.len();
            for (v, dst) in &plan.migrations {
                if !self.nodes.contains_key(dst) {
                    continue; // destination failed since planning; retain at source
                }
                if self.vss[*v].host == *dst {
                    continue;
                }
                let rec = migrate_vs(
                    &mut self.vss,
                    *v,
                    *dst,
                    total_vs,
                    &self.rtt,
                    t,
                    self.delta_t,
                    &mut self.rng_mt,
                );
                migrations_started += 1;
                self.migration_log.push(rec);
                if self.nodes[dst].kind == NodeKind::Peer {
                    self.backups.insert(
                        *v,
                        BackupVs {
                            cloud_host: self.base_node,
                            synced_version: self.vss[*v].state_version,
                            last_sync_step: t,
                        },
                    );
                } else {
                    self.backups.remove(v);
                }
            }
            for n in &plan.releases {
                self.pending_releases.insert(*n);
            }
        }
        self.process_releases();

        // runtime restatement of assignment totality
        for vs in &self.vss {
            assert!(
                self.nodes.contains_key(&vs.host),
                "VS hosted on a node outside the system"
            );
        }

        // 2. ingest coefficient messages that arrived before this boundary
        let mut batch = Vec::new();
        while let Some((arrival, _)) = self.msg_queue.front() {
            if *arrival < t {
                batch.push(self.msg_queue.pop_front().unwrap().1);
            } else {
                break;
            }
        }
        let rejected = apply_prediction_updates(&mut self.store, &batch);
        assert!(rejected.is_empty(), "manager store covers all VSs");

        // 3. draft the next plan on a virtual copy
        let params = self.selection_params();
        let mut sys = VirtualSystem {
            nodes: self.nodes.clone(),
            predictions: self.store.clone(),
            current_loads: self.last_loads.clone(),
            vs_objects: self.vss.iter().map(|vs| vs.entities.len() as u32).collect(),
            hosts: self.vss.iter().map(|vs| Some(vs.host)).collect(),
            backed_up: self.vss.iter().map(|vs| vs.backed_up).collect(),
            gamma_max: self.gamma_max(),
            card: self.cloud_card(),
            next_node_id: self.next_node_id,
            protected: vec![self.base_node],
        };
        let pool = select_vs(&mut sys, &params, &mut self.rng_plan);
        let draft = select_destination(&mut sys, &pool, &params);
        self.next_node_id = sys.next_node_id;
        assert!(
            draft.projected_gamma_r < params.risk_limit || draft.projected_gamma_r == 0.0,
            "plan projects risk {} at limit {}",
            draft.projected_gamma_r,
            params.risk_limit
        );

        let migrations: Vec<(usize, NodeId)> = draft
            .assignments
            .iter()
            .filter(|(v, dst)| self.vss[*v].host != *dst)
            .copied()
            .collect();
        self.pending_plan = Some(EpochPlan {
            epoch: self.epoch_index,
            migrations,
            recruits: draft.recruits,
            releases: draft.releases,
        });

        // 4. close the elapsed epoch's books
        if t > 0 {
            let total = self.epoch_ok + self.epoch_bad;
            let availability = if total == 0 {
                1.0
            } else {
                self.epoch_ok as f64 / total as f64
            };
            self.epoch_log.push(EpochRow {
                epoch: self.epoch_index,
                migrations: migrations_started,
                recruits: self
                    .pending_plan
                    .as_ref()
                    .map(|p| p.recruits.len() as u32)
                    .unwrap_or(0),
                releases: self
                    .pending_plan
                    .as_ref()
                    .map(|p| p.releases.len() as u32)
                    .unwrap_or(0),
                cost: self.epoch_cost,
                gamma_r: self.gamma_r(),
                availability,
            });
        }
        self.epoch_cost = 0.0;
        self.epoch_ok = 0;
        self.epoch_bad = 0;
        self.epoch_index += 1;
        migrations_started
    }

    fn process_releases(&mut self) {
        let mut released = Vec::new();
        for &n in &self.pending_releases {
            let hosts_any = self.vss.iter().any(|vs| vs.host == n);
            if !hosts_any && n != self.base_node {
                released.push(n);
            }
        }
        for n in released {
            self.pending_releases.remove(&n);
            let gone = self.nodes.remove(&n);
            debug_assert!(gone.map_or(true, |g| g.kind == NodeKind::Cloud));
        }
    }

    /// Count of VSs currently hosted on peers.
    pub fn peer_hosted(&self) -> usize {
        self.vss
            .iter()
            .filter(|vs| super::is_peer(&self.nodes, vs.host))
            .count()
    }

    /// Invariant: every peer-hosted VS has exactly one backup on a cloud
    /// node. Panics on violation.
    pub fn assert_backup_invariant(&self) {
        for (i, vs) in self.vss.iter().enumerate() {
            if super::is_peer(&self.nodes, vs.host) {
                let b = self
                    .backups
                    .get(&i)
                    .unwrap_or_else(|| panic!("peer-hosted VS {i} lacks a backup"));
                assert!(
                    self.nodes.get(&b.cloud_host).map_or(false, |n| n.is_cloud()),
                    "backup of VS {i} is not on a cloud node"
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::child_rng;

    fn mk(vs: usize, peers: usize, risk: f64) -> SamSystem {
        let mut cfg = ManagerConfig::default();
        cfg.risk_limit = risk;
        cfg.epoch_steps = 10;
        SamSystem::new(
            cfg,
            0.2,
            vs,
            peers,
            RttModel::from_samples(vec![80.0], 0.001).unwrap(),
            child_rng(1, "plan"),
            child_rng(1, "fail"),
            child_rng(1, "mt"),
        )
    }

    #[test]
    fn quiescent_steady_state_stops_migrating() {
        let mut sys = mk(10, 5, 0.9);
        // moderate constant loads
        let loads = vec![1e4; 10];
        let requests = vec![0u32; 10];
        let mut migrations_after_convergence = 0;
        for t in 0..200u64 {
            let rep = sys.step(t, &loads, &requests);
            if t > 100 {
                migrations_after_convergence += rep.migrations_started;
            }
        }
        assert_eq!(
            migrations_after_convergence, 0,
            "steady load keeps the plan quiet"
        );
        // cost flat across the last epochs
        let rows = &sys.epoch_log;
        let last = &rows[rows.len() - 1];
        let prev = &rows[rows.len() - 2];
        assert!((last.cost - prev.cost).abs() < 1e-9);
    }

    #[test]
    fn scripted_peer_failure_promotes_then_reclaims() {
        let mut sys = mk(4, 3, 0.9);
        // give VSs entities so risk/backup bookkeeping is live
        for (i, vs) in sys.vss.iter_mut().enumerate() {
            vs.entities.insert(i as u32);
        }
        let loads = vec![1e4; 4];
        let requests = vec![0u32; 4];
        // run until some VS lands on a peer
        let mut t = 0;
        while sys.peer_hosted() == 0 && t < 200 {
            sys.step(t, &loads, &requests);
            t += 1;
        }
        assert!(sys.peer_hosted() > 0, "risk budget 0.9 sends VSs to peers");
        sys.assert_backup_invariant();

        // force a failure of the first peer hosting a VS
        let peer = sys
            .vss
            .iter()
            .find(|vs| super::super::is_peer(&sys.nodes, vs.host))
            .map(|vs| vs.host)
            .unwrap();
        let victim_vs: Vec<usize> = sys
            .vss
            .iter()
            .enumerate()
            .filter(|(_, vs)| vs.host == peer)
            .map(|(i, _)| i)
            .collect();
        sys.fail_peer(peer);
        for &v in &victim_vs {
            assert_eq!(sys.vss[v].host, NodeId(0), "promoted to the backup cloud");
            assert!(sys.vss[v].backed_up);
        }
        // a later epoch reclaims the backed-up VSs (pool stage 2)
        for _ in 0..3 {
            for _ in 0..10 {
                sys.step(t, &loads, &requests);
                t += 1;
            }
        }
        for &v in &victim_vs {
            assert!(!sys.vss[v].backed_up, "reclaimed by a later plan");
        }
        sys.assert_backup_invariant();
    }

    #[test]
    fn snapshot_staleness_bounded_by_sync_period() {
        let mut sys = mk(1, 1, 1.0);
        // push the next epoch boundary far out so the plan never interferes
        sys.cfg.epoch_steps = 100_000;
        sys.vss[0].entities.insert(0);
        // put the VS on the only peer by hand with a fresh backup
        let peer = *sys
            .nodes
            .keys()
            .find(|n| super::super::is_peer(&sys.nodes, **n))
            .unwrap();
        sys.vss[0].host = peer;
        sys.backups.insert(
            0,
            BackupVs {
                cloud_host: NodeId(0),
                synced_version: 0,
                last_sync_step: 0,
            },
        );
        // writes bump the version; sync every 150 steps (30s / 0.2s)
        let loads = vec![1e4];
        for t in 0..160u64 {
            sys.step(t, &loads, &[3]);
        }
        // sync happened at t=150 with the version as of then
        let synced = sys.backups[&0].synced_version;
        let now = sys.vss[0].state_version;
        assert!(synced < now, "writes after the sync are not in the snapshot");
        sys.fail_peer(peer);
        assert_eq!(sys.vss[0].state_version, synced, "promotion restores the snapshot");
    }

    #[test]
    fn released_nodes_host_nothing() {
        let mut sys = mk(6, 2, 0.0);
        let loads = vec![1e5; 6];
        let requests = vec![0u32; 6];
        for t in 0..60u64 {
            sys.step(t, &loads, &requests);
            for n in &sys.pending_releases {
                assert!(sys.vss.iter().all(|vs| vs.host != *n));
            }
        }
        // with risk 0, nothing may sit on a peer
        assert_eq!(sys.peer_hosted(), 0);
    }
}
