//! Tile-approximated AOI coverage.
//!
//! An AOI disk is discretized as a t x t grid over its bounding square.
//! Tiles whose center falls outside the disk are masked and never counted.
//! Coverage of a neighbor set is the number of unmasked tiles intersected by
//! at least one neighbor AOI; the per-tile counts also feed the score
//! heuristic. Cost is O(n * t) over n neighbors and t tiles.

use crate::geom::Disk;

/// Fixed-size bit set over the tiles of one grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSet {
    words: Vec<u64>,
    bits: usize,
}

impl TileSet {
    pub fn empty(bits: usize) -> TileSet {
        TileSet {
            words: vec![0; bits.div_ceil(64)],
            bits,
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1u64 << (i % 64);
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn union_with(&mut self, other: &TileSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn subtract(&mut self, other: &TileSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    /// Bits in `self` not in `cover`.
    pub fn count_new(&self, cover: &TileSet) -> u32 {
        self.words
            .iter()
            .zip(&cover.words)
            .map(|(a, b)| (a & !b).count_ones())
            .sum()
    }

    pub fn union_count(&self, other: &TileSet) -> u32 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones())
            .sum()
    }

    pub fn is_subset_of(&self, other: &TileSet) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, w)| {
            let mut w = *w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + b)
                }
            })
        })
    }
}

/// Precomputed grid geometry for one resolution: the corner mask is
/// scale-invariant (a tile is masked iff its center lies outside the AOI
/// disk), so one spec serves every AOI of that resolution.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub resolution: usize,
    /// Unmasked tiles.
    pub active: TileSet,
    pub active_count: u32,
}

impl GridSpec {
    pub fn new(resolution: usize) -> GridSpec {
        assert!(resolution >= 1);
        let t = resolution;
        let mut active = TileSet::empty(t * t);
        for j in 0..t {
            for i in 0..t {
                let cx = -1.0 + (i as f64 + 0.5) * 2.0 / t as f64;
                let cy = -1.0 + (j as f64 + 0.5) * 2.0 / t as f64;
                if cx * cx + cy * cy <= 1.0 {
                    active.set(j * t + i);
                }
            }
        }
        let active_count = active.count();
        GridSpec {
            resolution,
            active,
            active_count,
        }
    }

    pub fn tiles(&self) -> usize {
        self.resolution * self.resolution
    }

    /// World-space rectangle of tile (i, j) for an AOI `p`.
    pub fn tile_rect(&self, p: &Disk, i: usize, j: usize) -> (f64, f64, f64, f64) {
        let ts = 2.0 * p.radius / self.resolution as f64;
        let x0 = p.center.x - p.radius + i as f64 * ts;
        let y0 = p.center.y - p.radius + j as f64 * ts;
        (x0, y0, x0 + ts, y0 + ts)
    }

    /// Unmasked tiles of `p`'s grid intersected by the disk `n`, computed
    /// row by row over the contiguous intersection span.
    pub fn tile_set_of(&self, p: &Disk, n: &Disk) -> TileSet {
        let t = self.resolution;
        let mut out = TileSet::empty(t * t);
        let ts = 2.0 * p.radius / t as f64;
        let ox = p.center.x - p.radius;
        let oy = p.center.y - p.radius;
        let r2 = n.radius * n.radius;
        for j in 0..t {
            let y0 = oy + j as f64 * ts;
            let y1 = y0 + ts;
            let dy = if n.center.y < y0 {
                y0 - n.center.y
            } else if n.center.y > y1 {
                n.center.y - y1
            } else {
                0.0
            };
            if dy * dy > r2 {
                continue;
            }
            let half = (r2 - dy * dy).sqrt();
            let xl = n.center.x - half;
            let xh = n.center.x + half;
            let mut i_lo = ((xl - ox) / ts).floor() as i64 - 1;
            let mut i_hi = ((xh - ox) / ts).floor() as i64 + 1;
            i_lo = i_lo.max(0);
            i_hi = i_hi.min(t as i64 - 1);
            for i in i_lo..=i_hi {
                let (x0, y0, x1, y1) = self.tile_rect(p, i as usize, j);
                if n.intersects_rect(x0, y0, x1, y1) {
                    let idx = j * t + i as usize;
                    if self.active.get(idx) {
                        out.set(idx);
                    }
                }
            }
        }
        out
    }
}

/// Per-tile intersection counts for one coverage evaluation.
#[derive(Debug, Clone)]
pub struct TileGrid {
    pub resolution: usize,
    pub counts: Vec<u32>,
    pub covered_tiles: u32,
}

impl TileGrid {
    /// Score of one tile for the score heuristic: the reciprocal of its
    /// intersection count (0 for untouched tiles).
    pub fn tile_score(&self, idx: usize) -> f64 {
        if self.counts[idx] == 0 {
            0.0
        } else {
            1.0 / self.counts[idx] as f64
        }
    }
}

/// Count the unmasked tiles of `p` covered by at least one neighbor AOI and
/// the per-tile intersection counts.
pub fn coverage(p: &Disk, neighbors: &[Disk], spec: &GridSpec) -> (u32, TileGrid) {
    let mut counts = vec![0u32; spec.tiles()];
    let mut covered = 0u32;
    for n in neighbors {
        let bits = spec.tile_set_of(p, n);
        for idx in bits.iter_ones() {
            if counts[idx] == 0 {
                covered += 1;
            }
            counts[idx] += 1;
        }
    }
    (
        covered,
        TileGrid {
            resolution: spec.resolution,
            counts,
            covered_tiles: covered,
        },
    )
}

/// Convenience wrapper constructing the grid spec on the fly.
pub fn coverage_at(p: &Disk, neighbors: &[Disk], resolution: usize) -> (u32, TileGrid) {
    coverage(p, neighbors, &GridSpec::new(resolution))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;

    pub(crate) fn disk(x: f64, y: f64, r: f64) -> Disk {
        Disk::new(Point::new(x, y), r)
    }

    #[test]
    fn empty_neighbor_set_covers_nothing() {
        let p = disk(0.0, 0.0, 3.0);
        let (covered, grid) = coverage_at(&p, &[], 3);
        assert_eq!(covered, 0);
        assert!(grid.counts.iter().all(|c| *c == 0));
    }

    #[test]
    fn three_by_three_has_no_masked_corners() {
        // corner tile centers sit at distance 2*sqrt(2)/3 < 1
        let spec = GridSpec::new(3);
        assert_eq!(spec.active_count, 9);
        // at 4x4 the four corners fall outside the disk
        let spec = GridSpec::new(4);
        assert_eq!(spec.active_count, 12);
    }

    #[test]
    fn two_circle_scene_covers_five_of_nine() {
        let p = disk(0.0, 0.0, 3.0);
        let neighbors = [disk(-4.0, 0.0, 2.5), disk(2.0, -4.0, 2.5)];
        let (covered, _) = coverage_at(&p, &neighbors, 3);
        assert_eq!(covered, 5);
    }

    #[test]
    fn span_tile_sets_match_exhaustive_check() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let spec = GridSpec::new(17);
        for _ in 0..200 {
            let p = disk(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(1.0..20.0));
            let n = disk(rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(0.1..25.0));
            let fast = spec.tile_set_of(&p, &n);
            let mut slow = TileSet::empty(spec.tiles());
            for j in 0..17 {
                for i in 0..17 {
                    let (x0, y0, x1, y1) = spec.tile_rect(&p, i, j);
                    let idx = j * 17 + i;
                    if n.intersects_rect(x0, y0, x1, y1) && spec.active.get(idx) {
                        slow.set(idx);
                    }
                }
            }
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn covered_fraction_converges_to_geometric_overlap() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for case in 0..5 {
            let p = disk(0.0, 0.0, 10.0);
            let neighbors: Vec<Disk> = (0..4)
                .map(|_| {
                    disk(
                        rng.gen_range(-12.0..12.0),
                        rng.gen_range(-12.0..12.0),
                        rng.gen_range(3.0..10.0),
                    )
                })
                .collect();
            // Monte-Carlo overlap area oracle over the AOI disk
            let samples = 1_000_000u32;
            let mut hit = 0u32;
            for _ in 0..samples {
                let x = rng.gen_range(-10.0..10.0);
                let y = rng.gen_range(-10.0..10.0);
                if x * x + y * y > 100.0 {
                    continue;
                }
                let pt = Point::new(x, y);
                if neighbors.iter().any(|n| n.contains(&pt)) {
                    hit += 1;
                }
            }
            let in_disk = samples as f64 * std::f64::consts::PI / 4.0;
            let mc = hit as f64 / in_disk;

            let frac_at = |res: usize| {
                let spec = GridSpec::new(res);
                let (covered, _) = coverage(&p, &neighbors, &spec);
                covered as f64 / spec.active_count as f64
            };
            let err32 = (frac_at(32) - mc).abs();
            let err1024 = (frac_at(1024) - mc).abs();
            assert!(
                err1024 <= err32 + 0.002,
                "case {case}: refinement did not converge ({err32} -> {err1024})"
            );
            assert!(err1024 < 0.015, "case {case}: residual {err1024}");
        }
    }
}
