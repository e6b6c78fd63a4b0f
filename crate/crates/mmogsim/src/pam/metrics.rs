//! Interest-management quality metrics: the position-weighted replica
//! similarity (JC) and the AOI coverage ratio (AC).

use super::heuristics::{brute_force_max_coverage, greedy_heuristic};
use super::overlay::LocalReplica;
use super::tiles::{coverage, GridSpec};
use crate::geom::{Disk, Point};
use std::collections::BTreeMap;

/// Position-weighted Jaccard similarity between a client replica and the
/// authoritative state, on [0, 1]. Matched uids contribute
/// `1 - dist / d_max`, clamped at zero; the denominator is the size of the
/// uid union. Two empty replicas are perfectly synchronized.
pub fn jc(client: &LocalReplica, server: &BTreeMap<u32, Point>, d_max: f64) -> f64 {
    debug_assert!(d_max > 0.0);
    let union = client
        .records
        .keys()
        .chain(server.keys())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if union == 0 {
        return 1.0;
    }
    let mut acc = 0.0;
    for (uid, rec) in &client.records {
        if let Some(truth) = server.get(uid) {
            let err = rec.position.dist(truth) / d_max;
            acc += (1.0 - err).max(0.0);
        }
    }
    acc / union as f64
}

/// Enumeration budget under which the AC denominator uses the exhaustive
/// optimum; beyond it the greedy selection over all candidates stands in
/// (flagged in the result).
const AC_BRUTE_BUDGET: u128 = 10_000;

#[derive(Debug, Clone, Copy)]
pub struct AcSample {
    pub value: f64,
    /// True when the denominator came from the exhaustive oracle rather
    /// than the greedy stand-in.
    pub exact: bool,
}

fn combinations(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    c
}

/// AOI coverage ratio: covered tiles of the peer's current view over the
/// best achievable d-subset of all candidate peers. Candidates that cannot
/// overlap the AOI are filtered up front. A world with no overlapping peer
/// at all counts as fully covered; the ratio is capped at 1.
pub fn ac(
    own_position: Point,
    aoi_radius: f64,
    view_positions: &[Point],
    all_candidate_positions: &[Point],
    d: usize,
    spec: &GridSpec,
) -> AcSample {
    let own = Disk::new(own_position, aoi_radius);
    let in_range: Vec<Disk> = all_candidate_positions
        .iter()
        .filter(|p| p.dist(&own_position) < 2.0 * aoi_radius)
        .map(|p| Disk::new(*p, aoi_radius))
        .collect();
    if in_range.is_empty() {
        return AcSample {
            value: 1.0,
            exact: true,
        };
    }
    let (best, exact) = if combinations(in_range.len(), d.min(in_range.len())) <= AC_BRUTE_BUDGET {
        let (_, tiles) = brute_force_max_coverage(&own, &in_range, d, spec)
            .expect("within enumeration budget");
        (tiles, true)
    } else {
        let picked = greedy_heuristic(&own, &in_range, d, spec);
        let chosen: Vec<Disk> = picked.into_iter().map(|i| in_range[i]).collect();
        let (tiles, _) = coverage(&own, &chosen, spec);
        (tiles, false)
    };
    if best == 0 {
        return AcSample {
            value: 1.0,
            exact,
        };
    }
    let view: Vec<Disk> = view_positions
        .iter()
        .map(|p| Disk::new(*p, aoi_radius))
        .collect();
    let (got, _) = coverage(&own, &view, spec);
    AcSample {
        value: (got as f64 / best as f64).min(1.0),
        exact,
    }
}
