//! Balancer: VS selection and destination selection.
//!
//! Both phases work on a [`VirtualSystem`] copy of the live state, so
//! removals are virtual until the plan is applied at the next epoch.

use super::{is_peer, Prediction};
use crate::vsdht::{NodeId, NodeKind, NodeSpec};
use rand::Rng;
use std::collections::BTreeMap;

/// Thresholds driving one planning round.
#[derive(Debug, Clone, Copy)]
pub struct SelectionParams {
    pub lf_up: f64,
    pub lf_bot: f64,
    pub p_size: usize,
    pub risk_limit: f64,
    /// Seconds of one epoch, used to weigh bandwidth against rent when
    /// ranking candidate destinations.
    pub epoch_seconds: f64,
}

/// Fresh-cloud template used when the balancer recruits.
#[derive(Debug, Clone, Copy)]
pub struct CloudCard {
    pub cap: f64,
    pub bcost: f64,
    pub rcost_per_s: f64,
}

impl CloudCard {
    pub fn instantiate(&self, id: NodeId) -> NodeSpec {
        NodeSpec::cloud(id, self.cap, self.bcost, self.rcost_per_s)
    }
}

/// The manager's working copy of the system: node roster, stored load
/// functions, object counts and a (possibly partially detached) assignment.
#[derive(Debug, Clone)]
pub struct VirtualSystem {
    pub nodes: BTreeMap<NodeId, NodeSpec>,
    pub predictions: Vec<Prediction>,
    pub current_loads: Vec<f64>,
    pub vs_objects: Vec<u32>,
    /// Host per VS; `None` while pooled for reassignment.
    pub hosts: Vec<Option<NodeId>>,
    pub backed_up: Vec<bool>,
    pub gamma_max: f64,
    pub card: CloudCard,
    pub next_node_id: u32,
    /// Nodes that are never released (manager/backup infrastructure).
    pub protected: Vec<NodeId>,
}

impl VirtualSystem {
    fn predicted_load_of(&self, node: NodeId) -> f64 {
        self.hosts
            .iter()
            .zip(&self.predictions)
            .filter(|(h, _)| **h == Some(node))
            .map(|(_, p)| p.level)
            .sum()
    }

    fn current_load_of(&self, node: NodeId) -> f64 {
        self.hosts
            .iter()
            .zip(&self.current_loads)
            .filter(|(h, _)| **h == Some(node))
            .map(|(_, l)| l)
            .sum()
    }

    /// Absolute risk of the currently attached VSs.
    fn gamma(&self) -> f64 {
        self.hosts
            .iter()
            .zip(&self.vs_objects)
            .filter_map(|(h, o)| h.map(|n| (n, *o)))
            .map(|(n, o)| o as f64 * self.nodes.get(&n).map_or(0.0, |s| s.fprob))
            .sum()
    }
}

/// Decisions drafted by destination selection.
#[derive(Debug, Clone, Default)]
pub struct PlanDraft {
    /// Final host per pooled VS, in pool order.
    pub assignments: Vec<(usize, NodeId)>,
    pub recruits: Vec<NodeSpec>,
    pub releases: Vec<NodeId>,
    /// Projected relative risk of the complete assignment.
    pub projected_gamma_r: f64,
}

/// Build the pool of VSs to reassign, in four stages: shed from nodes whose
/// predicted load factor exceeds the upper threshold (highest prediction
/// slope first), collect every backed-up VS, drain under-loaded nodes if the
/// pool is still short, and finally pad with random VSs up to the minimum
/// pool size. Selected VSs are detached from the virtual assignment.
pub fn select_vs<R: Rng>(
    sys: &mut VirtualSystem,
    params: &SelectionParams,
    rng: &mut R,
) -> Vec<usize> {
    let mut pool: Vec<usize> = Vec::new();
    let node_ids: Vec<NodeId> = sys.nodes.keys().copied().collect();

    // 1. nodes predicted above LF_up shed their steepest VSs first
    for &n in &node_ids {
        let cap = sys.nodes[&n].cap;
        let mut plf = sys.predicted_load_of(n) / cap;
        while plf > params.lf_up {
            let candidate = sys
                .hosts
                .iter()
                .enumerate()
                .filter(|(_, h)| **h == Some(n))
                .max_by(|(ai, _), (bi, _)| {
                    let a = sys.predictions[*ai].slope;
                    let b = sys.predictions[*bi].slope;
                    a.partial_cmp(&b)
                        .unwrap()
                        .then(bi.cmp(ai)) // ties: lowest vs index wins
                })
                .map(|(i, _)| i);
            match candidate {
                Some(v) => {
                    sys.hosts[v] = None;
                    plf -= sys.predictions[v].level / cap;
                    pool.push(v);
                }
                None => break,
            }
        }
    }

    // 2. every backed-up VS re-enters the pool until reclaimed
    for v in 0..sys.hosts.len() {
        if sys.backed_up[v] && sys.hosts[v].is_some() {
            sys.hosts[v] = None;
            pool.push(v);
        }
    }

    // 3. drain nodes whose current load factor is under LF_bot
    if pool.len() < params.p_size {
        for &n in &node_ids {
            let clf = sys.current_load_of(n) / sys.nodes[&n].cap;
            if clf < params.lf_bot {
                for v in 0..sys.hosts.len() {
                    if sys.hosts[v] == Some(n) {
                        sys.hosts[v] = None;
                        pool.push(v);
                    }
                }
            }
        }
    }

    // 4. pad with random VSs
    while pool.len() < params.p_size {
        let attached: Vec<usize> = (0..sys.hosts.len())
            .filter(|v| sys.hosts[*v].is_some())
            .collect();
        if attached.is_empty() {
            break;
        }
        let v = attached[rng.gen_range(0..attached.len())];
        sys.hosts[v] = None;
        pool.push(v);
    }

    pool
}

/// Assign every pooled VS, in pool order: keep candidates whose predicted
/// load factor stays under the upper threshold with the VS added, recruit a
/// fresh cloud node when none qualifies, otherwise drop candidates that
/// would push relative risk to the limit, and take the cheapest survivor
/// (marginal bandwidth cost plus rent if it is currently empty; ties to the
/// lowest node id). Cloud nodes left hosting nothing are released.
pub fn select_destination(
    sys: &mut VirtualSystem,
    pool: &[usize],
    params: &SelectionParams,
) -> PlanDraft {
    let mut pred_load: BTreeMap<NodeId, f64> = sys
        .nodes
        .keys()
        .map(|&n| (n, sys.predicted_load_of(n)))
        .collect();
    let mut gamma = sys.gamma();
    let mut recruits = Vec::new();
    let mut assignments = Vec::new();

    for &v in pool {
        let level = sys.predictions[v].level;
        let objs = sys.vs_objects[v] as f64;

        let fits: Vec<NodeId> = sys
            .nodes
            .values()
            .filter(|n| (pred_load[&n.id] + level) / n.cap < params.lf_up)
            .map(|n| n.id)
            .collect();

        let chosen = if fits.is_empty() {
            None
        } else {
            let safe: Vec<NodeId> = fits
                .iter()
                .copied()
                .filter(|&id| {
                    let extra = if is_peer(&sys.nodes, id) {
                        objs * sys.nodes[&id].fprob
                    } else {
                        0.0
                    };
                    let gamma_r = if sys.gamma_max > 0.0 {
                        (gamma + extra) / sys.gamma_max
                    } else {
                        0.0
                    };
                    gamma_r < params.risk_limit
                })
                .collect();
            safe.into_iter()
                .map(|id| {
                    let n = &sys.nodes[&id];
                    let empty = !pred_load_hosts(sys, id);
                    let marginal = level * params.epoch_seconds * n.bcost
                        + if empty {
                            n.rcost_per_s * params.epoch_seconds
                        } else {
                            0.0
                        };
                    (marginal, id)
                })
                .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
                .map(|(_, id)| id)
        };

        let target = match chosen {
            Some(id) => id,
            None => {
                let id = NodeId(sys.next_node_id);
                sys.next_node_id += 1;
                let spec = sys.card.instantiate(id);
                sys.nodes.insert(id, spec.clone());
                pred_load.insert(id, 0.0);
                recruits.push(spec);
                id
            }
        };

        sys.hosts[v] = Some(target);
        *pred_load.get_mut(&target).unwrap() += level;
        if is_peer(&sys.nodes, target) {
            gamma += objs * sys.nodes[&target].fprob;
        }
        assignments.push((v, target));
    }

    let releases: Vec<NodeId> = sys
        .nodes
        .values()
        .filter(|n| {
            n.kind == NodeKind::Cloud
                && !sys.protected.contains(&n.id)
                && !sys.hosts.iter().any(|h| *h == Some(n.id))
        })
        .map(|n| n.id)
        .collect();

    let projected_gamma_r = if sys.gamma_max > 0.0 {
        gamma / sys.gamma_max
    } else {
        0.0
    };

    PlanDraft {
        assignments,
        recruits,
        releases,
        projected_gamma_r,
    }
}

fn pred_load_hosts(sys: &VirtualSystem, id: NodeId) -> bool {
    sys.hosts.iter().any(|h| *h == Some(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::child_rng;

    fn card() -> CloudCard {
        CloudCard {
            cap: 12.5e6,
            bcost: 0.12 / 1e9,
            rcost_per_s: 0.26 / 3600.0,
        }
    }

    fn params() -> SelectionParams {
        SelectionParams {
            lf_up: 0.8,
            lf_bot: 0.2,
            p_size: 0,
            risk_limit: 0.1,
            epoch_seconds: 60.0,
        }
    }

    fn system(
        node_list: Vec<NodeSpec>,
        levels: Vec<f64>,
        hosts: Vec<Option<NodeId>>,
        objects: Vec<u32>,
        peer_fprob: f64,
    ) -> VirtualSystem {
        let nodes: BTreeMap<NodeId, NodeSpec> =
            node_list.into_iter().map(|n| (n.id, n)).collect();
        let gamma_max = objects.iter().map(|o| *o as f64 * peer_fprob).sum();
        let n = levels.len();
        VirtualSystem {
            nodes,
            predictions: levels
                .into_iter()
                .map(|level| Prediction { level, slope: 0.0 })
                .collect(),
            current_loads: vec![0.0; n],
            vs_objects: objects,
            hosts,
            backed_up: vec![false; n],
            gamma_max,
            card: card(),
            next_node_id: 100,
            protected: vec![],
        }
    }

    #[test]
    fn quiet_system_selects_nothing() {
        let cloud = NodeSpec::cloud(NodeId(0), 12.5e6, 0.0, 0.0);
        let mut sys = system(
            vec![cloud],
            vec![4e6, 4e6], // lf 0.64: between bot and up
            vec![Some(NodeId(0)), Some(NodeId(0))],
            vec![5, 5],
            0.01,
        );
        sys.current_loads = vec![4e6, 4e6];
        let pool = select_vs(&mut sys, &params(), &mut child_rng(1, "sel"));
        assert!(pool.is_empty());
        let draft = select_destination(&mut sys, &pool, &params());
        assert!(draft.assignments.is_empty());
        assert!(draft.recruits.is_empty());
    }

    #[test]
    fn overloaded_node_sheds_steepest_vs_first() {
        let cloud = NodeSpec::cloud(NodeId(0), 10e6, 0.0, 0.0);
        // PLF = 15e6 / 10e6 = 1.5; three equal levels, one rising
        let mut sys = system(
            vec![cloud],
            vec![5e6, 5e6, 5e6],
            vec![Some(NodeId(0)); 3],
            vec![1, 1, 1],
            0.01,
        );
        sys.predictions[1].slope = 500.0;
        let pool = select_vs(&mut sys, &params(), &mut child_rng(1, "sel"));
        assert_eq!(pool[0], 1, "rising VS leaves first");
        // one removal brings PLF to 1.0, the second to 0.5 <= 0.8
        assert_eq!(pool.len(), 2);
        assert_eq!(pool[1], 0, "slope ties break toward the lowest index");
    }

    #[test]
    fn backed_up_vs_always_pools() {
        let cloud = NodeSpec::cloud(NodeId(0), 10e6, 0.0, 0.0);
        let mut sys = system(
            vec![cloud],
            vec![1e6],
            vec![Some(NodeId(0))],
            vec![1],
            0.01,
        );
        sys.current_loads = vec![9e6]; // not under-loaded
        sys.backed_up[0] = true;
        let pool = select_vs(&mut sys, &params(), &mut child_rng(1, "sel"));
        assert_eq!(pool, vec![0]);
    }

    #[test]
    fn zero_risk_budget_forces_clouds() {
        let peer1 = NodeSpec::peer(NodeId(1), 5e5, 0.01);
        let peer2 = NodeSpec::peer(NodeId(2), 5e5, 0.01);
        let mut sys = system(
            vec![peer1, peer2],
            vec![1e4, 1e4, 1e4],
            vec![None, None, None],
            vec![3, 3, 3],
            0.01,
        );
        let mut p = params();
        p.risk_limit = 0.0;
        let draft = select_destination(&mut sys, &[0, 1, 2], &p);
        for (_, host) in &draft.assignments {
            assert!(
                sys.nodes[host].is_cloud(),
                "risk 0 must exclude peers, got {host}"
            );
        }
        assert_eq!(draft.projected_gamma_r, 0.0);
    }

    #[test]
    fn risk_budget_admits_exactly_one_peer_placement() {
        // 3 VSs x 4 objects; budget allows one peer VS: 4/12 = 0.333 < 0.34,
        // two would give 0.667
        let peer1 = NodeSpec::peer(NodeId(1), 5e5, 0.01);
        let peer2 = NodeSpec::peer(NodeId(2), 5e5, 0.01);
        let mut sys = system(
            vec![peer1, peer2],
            vec![1e4, 1e4, 1e4],
            vec![None, None, None],
            vec![4, 4, 4],
            0.01,
        );
        let mut p = params();
        p.risk_limit = 0.34;
        let draft = select_destination(&mut sys, &[0, 1, 2], &p);
        let peer_hosted = draft
            .assignments
            .iter()
            .filter(|(_, h)| is_peer(&sys.nodes, *h))
            .count();
        assert_eq!(peer_hosted, 1);
        // the first VS takes the cheapest feasible node: the lowest peer id
        assert_eq!(draft.assignments[0].1, NodeId(1));
        // the second VS recruits a cloud (peers hit the risk bound), the
        // third reuses it at zero marginal rent
        assert_eq!(draft.recruits.len(), 1);
        assert_eq!(draft.assignments[1].1, draft.assignments[2].1);
        assert!(draft.projected_gamma_r < p.risk_limit);
    }

    #[test]
    fn empty_pool_releases_idle_clouds() {
        let idle = NodeSpec::cloud(NodeId(3), 12.5e6, 0.0, 1.0);
        let busy = NodeSpec::cloud(NodeId(0), 12.5e6, 0.0, 1.0);
        let mut sys = system(
            vec![idle, busy],
            vec![1e6],
            vec![Some(NodeId(0))],
            vec![1],
            0.01,
        );
        let draft = select_destination(&mut sys, &[], &params());
        assert_eq!(draft.releases, vec![NodeId(3)]);
    }

    #[test]
    fn protected_nodes_survive_release() {
        let idle = NodeSpec::cloud(NodeId(3), 12.5e6, 0.0, 1.0);
        let mut sys = system(vec![idle], vec![], vec![], vec![], 0.01);
        sys.protected = vec![NodeId(3)];
        let draft = select_destination(&mut sys, &[], &params());
        assert!(draft.releases.is_empty());
    }
}
