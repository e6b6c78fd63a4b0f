//! State manager: per-VS load prediction, risk/cost/load-factor accounting,
//! epoch planning and the brute-force assignment oracle.

pub mod oracle;
mod selection;
mod system;

pub use selection::{select_destination, select_vs, PlanDraft, SelectionParams, VirtualSystem};
pub use system::{EpochRow, SamSystem, StepReport};

use crate::vsdht::{NodeId, NodeKind, NodeSpec};
use std::collections::BTreeMap;

/// The manager's stored load function for one VS: the last received level
/// and its two-point slope. Simple exponential smoothing forecasts flat, so
/// the level doubles as the prediction for the next epoch; the slope only
/// orders removals.
#[derive(Debug, Clone, Copy, Default)]
pub struct Prediction {
    pub level: f64,
    pub slope: f64,
}

/// Coefficient update sent from a node to the manager.
#[derive(Debug, Clone, Copy)]
pub struct PredictionMessage {
    pub vs: usize,
    pub level: f64,
    pub slope: f64,
}

/// Node-local load estimator for one VS.
///
/// The smoothed level tracks the measured load every cycle; a coefficient
/// message is emitted only when the manager's last known value drifts from
/// the measurement by at least the error threshold, in which case the state
/// is re-fit to the measurement. A constant stream therefore produces
/// exactly one message, and a single step change produces exactly one more
/// at the step of the change.
#[derive(Debug, Clone)]
pub struct LoadPredictor {
    pub level: f64,
    prev_level: f64,
    last_sent: Option<f64>,
    pub alpha: f64,
}

impl LoadPredictor {
    pub fn new(alpha: f64) -> Self {
        LoadPredictor {
            level: 0.0,
            prev_level: 0.0,
            last_sent: None,
            alpha,
        }
    }

    /// Two-point slope of the smoothing history, per second.
    pub fn slope(&self, delta_t: f64) -> f64 {
        (self.level - self.prev_level) / delta_t
    }

    /// Ingest one load measurement (bytes/s). `xi_abs` is the absolute error
    /// threshold; crossing it re-fits the estimate and emits a message.
    pub fn observe(
        &mut self,
        vs: usize,
        measured: f64,
        xi_abs: f64,
        delta_t: f64,
    ) -> Option<PredictionMessage> {
        let prev = self.level;
        let fire = match self.last_sent {
            None => true,
            Some(sent) => (sent - measured).abs() >= xi_abs,
        };
        if fire {
            self.level = measured;
            self.last_sent = Some(measured);
        } else {
            self.level = self.alpha * measured + (1.0 - self.alpha) * self.level;
        }
        self.prev_level = prev;
        if fire {
            Some(PredictionMessage {
                vs,
                level: self.level,
                slope: self.slope(delta_t),
            })
        } else {
            None
        }
    }
}

/// Apply a batch of coefficient messages to the manager's store, in message
/// order (last write wins). Messages naming an unknown VS are rejected and
/// returned.
pub fn apply_prediction_updates(
    store: &mut [Prediction],
    messages: &[PredictionMessage],
) -> Vec<PredictionMessage> {
    let mut rejected = Vec::new();
    for m in messages {
        if m.vs < store.len() {
            store[m.vs] = Prediction {
                level: m.level,
                slope: m.slope,
            };
        } else {
            rejected.push(*m);
        }
    }
    rejected
}

/// System risk: expected objects lost per epoch, absolute and relative to
/// the all-peer worst case.
#[derive(Debug, Clone, Copy)]
pub struct RiskReport {
    pub gamma: f64,
    pub gamma_max: f64,
    pub gamma_r: f64,
}

/// Risk of an assignment: each VS contributes its object count times its
/// host's failure probability; the maximum assumes every object peer-hosted
/// at `peer_fprob`.
pub fn risk(
    hosts: &[NodeId],
    vs_objects: &[u32],
    nodes: &BTreeMap<NodeId, NodeSpec>,
    peer_fprob: f64,
) -> RiskReport {
    let mut gamma = 0.0;
    let mut gamma_max = 0.0;
    for (host, objs) in hosts.iter().zip(vs_objects) {
        let fprob = nodes.get(host).map_or(0.0, |n| n.fprob);
        gamma += *objs as f64 * fprob;
        gamma_max += *objs as f64 * peer_fprob;
    }
    let gamma_r = if gamma_max > 0.0 { gamma / gamma_max } else { 0.0 };
    RiskReport {
        gamma,
        gamma_max,
        gamma_r,
    }
}

/// Load factor of one node under an assignment: demanded bandwidth over
/// capacity. A node is overloaded at 1.0 or above.
pub fn load_factor(node: &NodeSpec, hosts: &[NodeId], loads: &[f64]) -> f64 {
    let demand: f64 = hosts
        .iter()
        .zip(loads)
        .filter(|(h, _)| **h == node.id)
        .map(|(_, l)| *l)
        .sum();
    demand / node.cap
}

/// System cost over an interval: bandwidth cost of every VS on its host plus
/// the rent of every node present in the system. Peer terms are zero by
/// construction.
pub fn cost(
    hosts: &[NodeId],
    loads: &[f64],
    nodes: &BTreeMap<NodeId, NodeSpec>,
    interval_s: f64,
) -> f64 {
    let bandwidth: f64 = hosts
        .iter()
        .zip(loads)
        .map(|(h, l)| l * interval_s * nodes.get(h).map_or(0.0, |n| n.bcost))
        .sum();
    let rent: f64 = nodes.values().map(|n| n.rcost_per_s * interval_s).sum();
    bandwidth + rent
}

/// Cost of a complete assignment with rent charged only to nodes actually
/// hosting at least one VS (the activation semantics used when comparing
/// against the exhaustive oracle).
pub fn assignment_cost(
    hosts: &[NodeId],
    loads: &[f64],
    nodes: &BTreeMap<NodeId, NodeSpec>,
    interval_s: f64,
) -> f64 {
    let bandwidth: f64 = hosts
        .iter()
        .zip(loads)
        .map(|(h, l)| l * interval_s * nodes.get(h).map_or(0.0, |n| n.bcost))
        .sum();
    let used: std::collections::BTreeSet<NodeId> = hosts.iter().copied().collect();
    let rent: f64 = used
        .iter()
        .filter_map(|id| nodes.get(id))
        .map(|n| n.rcost_per_s * interval_s)
        .sum();
    bandwidth + rent
}

/// One epoch's decisions, applied at the start of the next epoch.
#[derive(Debug, Clone, Default)]
pub struct EpochPlan {
    pub epoch: u64,
    pub migrations: Vec<(usize, NodeId)>,
    pub recruits: Vec<NodeSpec>,
    pub releases: Vec<NodeId>,
}

pub(crate) fn is_peer(nodes: &BTreeMap<NodeId, NodeSpec>, id: NodeId) -> bool {
    nodes.get(&id).map_or(false, |n| n.kind == NodeKind::Peer)
}
