//! Neighbor-set selection: the score-based and greedy heuristics and the
//! exhaustive maximum-coverage oracle.
//!
//! All three select a subset of at most `d` neighbor AOIs for a peer AOI
//! `p`, returning indices into the neighbor slice. Ties resolve toward the
//! earlier index, so callers control secondary preferences (freshness, id)
//! through input order.

use super::tiles::{coverage, GridSpec, TileSet};
use crate::geom::Disk;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoverError {
    #[error("{combinations} candidate subsets exceed the enumeration budget")]
    TooManyCombinations { combinations: u128 },
}

/// Score-based selection: one coverage pass over all neighbors, each tile
/// worth the reciprocal of its intersection count, each AOI scored by the
/// sum over its tiles; the top `d` scores win.
pub fn score_heuristic(p: &Disk, neighbors: &[Disk], d: usize, spec: &GridSpec) -> Vec<usize> {
    if d == 0 || neighbors.is_empty() {
        return Vec::new();
    }
    let (_, grid) = coverage(p, neighbors, spec);
    let mut scored: Vec<(f64, usize)> = neighbors
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let bits = spec.tile_set_of(p, n);
            let score: f64 = bits.iter_ones().map(|idx| grid.tile_score(idx)).sum();
            (score, i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(d);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Greedy selection: `d` rounds, each taking the candidate whose addition
/// maximizes the covered-tile count (first maximizer wins).
pub fn greedy_heuristic(p: &Disk, neighbors: &[Disk], d: usize, spec: &GridSpec) -> Vec<usize> {
    let sets: Vec<TileSet> = neighbors.iter().map(|n| spec.tile_set_of(p, n)).collect();
    let mut chosen: Vec<usize> = Vec::new();
    let mut covered = TileSet::empty(spec.tiles());
    let mut remaining: Vec<usize> = (0..neighbors.len()).collect();
    while chosen.len() < d && !remaining.is_empty() {
        let mut best_pos = 0usize;
        let mut best_total = 0u32;
        for (pos, &cand) in remaining.iter().enumerate() {
            let total = covered.union_count(&sets[cand]);
            if total > best_total {
                best_total = total;
                best_pos = pos;
            }
        }
        let cand = remaining.remove(best_pos);
        covered.union_with(&sets[cand]);
        chosen.push(cand);
    }
    chosen
}

fn combinations(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// Exact maximum-coverage subset by exhaustive enumeration, refusing
/// instances above the combination budget. Ties break lexicographically on
/// the index sequence.
pub fn brute_force_max_coverage(
    p: &Disk,
    neighbors: &[Disk],
    d: usize,
    spec: &GridSpec,
) -> Result<(Vec<usize>, u32), CoverError> {
    let n = neighbors.len();
    let d = d.min(n);
    let combos = combinations(n, d);
    if combos > 1_000_000 {
        return Err(CoverError::TooManyCombinations {
            combinations: combos,
        });
    }
    if d == 0 {
        return Ok((Vec::new(), 0));
    }
    let sets: Vec<TileSet> = neighbors.iter().map(|x| spec.tile_set_of(p, x)).collect();

    let mut best: Option<(Vec<usize>, u32)> = None;
    let mut stack: Vec<usize> = Vec::with_capacity(d);

    fn dfs(
        start: usize,
        stack: &mut Vec<usize>,
        cover: &TileSet,
        sets: &[TileSet],
        d: usize,
        best: &mut Option<(Vec<usize>, u32)>,
    ) {
        if stack.len() == d {
            let count = cover.count();
            if best.as_ref().map_or(true, |(_, b)| count > *b) {
                *best = Some((stack.clone(), count));
            }
            return;
        }
        let need = d - stack.len();
        for i in start..=sets.len() - need {
            stack.push(i);
            let mut next = cover.clone();
            next.union_with(&sets[i]);
            dfs(i + 1, stack, &next, sets, d, best);
            stack.pop();
        }
    }

    dfs(
        0,
        &mut stack,
        &TileSet::empty(spec.tiles()),
        &sets,
        d,
        &mut best,
    );
    Ok(best.expect("d >= 1 and n >= d"))
}
