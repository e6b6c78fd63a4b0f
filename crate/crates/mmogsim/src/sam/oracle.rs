//! Exhaustive assignment oracle for small instances, standing in for the
//! integer-programming formulation: minimize cost subject to the risk bound,
//! per-node capacity and totality, with rent charged only to nodes hosting
//! at least one VS.

use super::selection::{select_destination, CloudCard, SelectionParams, VirtualSystem};
use super::Prediction;
use crate::vsdht::{NodeId, NodeKind, NodeSpec};
use std::collections::BTreeMap;
use thiserror::Error;

pub const MAX_ORACLE_VS: usize = 12;
pub const MAX_ORACLE_NODES: usize = 6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for exhaustive search ({vs} VSs, {nodes} nodes)")]
    TooLarge { vs: usize, nodes: usize },
}

/// A self-contained assignment instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub nodes: Vec<NodeSpec>,
    /// Predicted load per VS, bytes/second.
    pub loads: Vec<f64>,
    /// Objects per VS.
    pub objects: Vec<u32>,
    pub risk_limit: f64,
    /// Failure probability assumed for the all-peer worst case.
    pub peer_fprob: f64,
    pub epoch_seconds: f64,
    /// Template for clouds the greedy may recruit beyond the fixed roster.
    pub card: CloudCard,
}

impl Instance {
    pub fn gamma_max(&self) -> f64 {
        self.objects.iter().map(|o| *o as f64 * self.peer_fprob).sum()
    }

    /// Cost of a complete assignment (indices into `self.nodes` are not
    /// required; any node map works) with rent-on-use semantics.
    pub fn cost_of(&self, hosts: &[NodeId], nodes: &BTreeMap<NodeId, NodeSpec>) -> f64 {
        super::assignment_cost(hosts, &self.loads, nodes, self.epoch_seconds)
    }
}

/// Minimum-cost feasible assignment by exhaustive search with cost pruning.
/// Returns `Ok(None)` when no assignment satisfies the constraints. Refuses
/// instances beyond 12 VSs or 6 nodes.
pub fn optimal_assignment(inst: &Instance) -> Result<Option<(Vec<NodeId>, f64)>, OracleError> {
    let nv = inst.loads.len();
    let nn = inst.nodes.len();
    if nv > MAX_ORACLE_VS || nn > MAX_ORACLE_NODES {
        return Err(OracleError::TooLarge { vs: nv, nodes: nn });
    }
    let gamma_max = inst.gamma_max();
    let max_gamma = inst.risk_limit * gamma_max;

    // order VSs by descending load so capacity conflicts prune early
    let mut order: Vec<usize> = (0..nv).collect();
    order.sort_by(|a, b| inst.loads[*b].partial_cmp(&inst.loads[*a]).unwrap());

    struct Search<'a> {
        inst: &'a Instance,
        order: &'a [usize],
        max_gamma: f64,
        node_load: Vec<f64>,
        node_used: Vec<u32>,
        assign: Vec<usize>,
        best_cost: f64,
        best: Option<Vec<usize>>,
    }

    impl Search<'_> {
        fn dfs(&mut self, depth: usize, cost: f64, gamma: f64) {
            if cost >= self.best_cost {
                return;
            }
            if depth == self.order.len() {
                self.best_cost = cost;
                self.best = Some(self.assign.clone());
                return;
            }
            let v = self.order[depth];
            let load = self.inst.loads[v];
            let objs = self.inst.objects[v] as f64;
            for (ni, n) in self.inst.nodes.iter().enumerate() {
                if self.node_load[ni] + load > n.cap {
                    continue;
                }
                let extra_gamma = objs * n.fprob;
                if gamma + extra_gamma > self.max_gamma + 1e-12 {
                    continue;
                }
                let mut extra_cost = load * self.inst.epoch_seconds * n.bcost;
                if self.node_used[ni] == 0 {
                    extra_cost += n.rcost_per_s * self.inst.epoch_seconds;
                }
                self.node_load[ni] += load;
                self.node_used[ni] += 1;
                self.assign[v] = ni;
                self.dfs(depth + 1, cost + extra_cost, gamma + extra_gamma);
                self.node_load[ni] -= load;
                self.node_used[ni] -= 1;
            }
        }
    }

    let mut s = Search {
        inst,
        order: &order,
        max_gamma,
        node_load: vec![0.0; nn],
        node_used: vec![0; nn],
        assign: vec![usize::MAX; nv],
        best_cost: f64::INFINITY,
        best: None,
    };
    s.dfs(0, 0.0, 0.0);

    Ok(s.best.map(|assign| {
        let hosts: Vec<NodeId> = assign.iter().map(|ni| inst.nodes[*ni].id).collect();
        (hosts, s.best_cost)
    }))
}

/// Outcome of a one-shot heuristic pass over an instance.
pub struct HeuristicOutcome {
    pub hosts: Vec<NodeId>,
    pub nodes: BTreeMap<NodeId, NodeSpec>,
    pub cost: f64,
}

fn run_heuristic(inst: &Instance, peers_allowed: bool) -> HeuristicOutcome {
    let nodes: BTreeMap<NodeId, NodeSpec> = inst
        .nodes
        .iter()
        .filter(|n| peers_allowed || n.kind == NodeKind::Cloud)
        .map(|n| (n.id, n.clone()))
        .collect();
    let next_node_id = inst.nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0);
    let nv = inst.loads.len();
    let mut sys = VirtualSystem {
        nodes,
        predictions: inst
            .loads
            .iter()
            .map(|l| Prediction { level: *l, slope: 0.0 })
            .collect(),
        current_loads: inst.loads.clone(),
        vs_objects: inst.objects.clone(),
        hosts: vec![None; nv],
        backed_up: vec![false; nv],
        gamma_max: inst.gamma_max(),
        card: inst.card,
        next_node_id,
        protected: vec![],
    };
    let params = SelectionParams {
        lf_up: 0.8,
        lf_bot: 0.2,
        p_size: 0,
        risk_limit: inst.risk_limit,
        epoch_seconds: inst.epoch_seconds,
    };
    let pool: Vec<usize> = (0..nv).collect();
    let draft = select_destination(&mut sys, &pool, &params);
    let hosts: Vec<NodeId> = (0..nv).map(|v| sys.hosts[v].unwrap()).collect();
    let cost = super::assignment_cost(&hosts, &inst.loads, &sys.nodes, inst.epoch_seconds);
    let _ = draft;
    HeuristicOutcome {
        hosts,
        nodes: sys.nodes,
        cost,
    }
}

/// The production destination-selection pass applied to a bare instance
/// (every VS pooled), peers allowed.
pub fn greedy_assignment(inst: &Instance) -> HeuristicOutcome {
    run_heuristic(inst, true)
}

/// Worst-case baseline: the same pass restricted to cloud nodes.
pub fn all_cloud_assignment(inst: &Instance) -> HeuristicOutcome {
    run_heuristic(inst, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn card() -> CloudCard {
        CloudCard {
            cap: 12.5e6,
            bcost: 0.12 / 1e9,
            rcost_per_s: 0.26 / 3600.0,
        }
    }

    fn cloud(id: u32) -> NodeSpec {
        card().instantiate(NodeId(id))
    }

    #[test]
    fn forced_single_assignment() {
        let inst = Instance {
            nodes: vec![cloud(0)],
            loads: vec![1e6],
            objects: vec![5],
            risk_limit: 0.5,
            peer_fprob: 0.01,
            epoch_seconds: 60.0,
            card: card(),
        };
        let (hosts, cost) = optimal_assignment(&inst).unwrap().unwrap();
        assert_eq!(hosts, vec![NodeId(0)]);
        let expect = 1e6 * 60.0 * (0.12 / 1e9) + 0.26 / 3600.0 * 60.0;
        assert!((cost - expect).abs() < 1e-12);
    }

    #[test]
    fn infeasible_when_risk_budget_is_zero_and_only_peers() {
        let inst = Instance {
            nodes: vec![NodeSpec::peer(NodeId(0), 5e5, 0.01)],
            loads: vec![1e4],
            objects: vec![3],
            risk_limit: 0.0,
            peer_fprob: 0.01,
            epoch_seconds: 60.0,
            card: card(),
        };
        assert!(optimal_assignment(&inst).unwrap().is_none());
    }

    #[test]
    fn refuses_oversized_instances() {
        let inst = Instance {
            nodes: (0..7).map(cloud).collect(),
            loads: vec![1.0; 3],
            objects: vec![1; 3],
            risk_limit: 0.5,
            peer_fprob: 0.01,
            epoch_seconds: 60.0,
            card: card(),
        };
        assert!(matches!(
            optimal_assignment(&inst),
            Err(OracleError::TooLarge { .. })
        ));
    }

    #[test]
    fn optimum_prefers_free_peers_within_risk() {
        let inst = Instance {
            nodes: vec![cloud(0), NodeSpec::peer(NodeId(1), 5e5, 0.01)],
            loads: vec![1e5, 1e5],
            objects: vec![10, 10],
            risk_limit: 0.6,
            peer_fprob: 0.01,
            epoch_seconds: 60.0,
            card: card(),
        };
        let (hosts, _) = optimal_assignment(&inst).unwrap().unwrap();
        // one VS fits on the peer under the 0.6 risk bound (0.5 < 0.6); two
        // would hit 1.0
        let peers = hosts.iter().filter(|h| **h == NodeId(1)).count();
        assert_eq!(peers, 1);
    }
}
