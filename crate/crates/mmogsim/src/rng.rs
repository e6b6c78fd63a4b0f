//! Seeded randomness: named child streams and the discrete power-law sampler
//! used for client counts and radial placement ranks.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive an independent, reproducible child stream from a master seed and a
/// label. Different labels give statistically independent streams, so
/// toggling one subsystem cannot perturb another.
pub fn child_rng(master: u64, label: &str) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_mut(8).enumerate() {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut mix = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        };
        for b in label.as_bytes() {
            mix(*b);
        }
        for b in master.to_le_bytes() {
            mix(b);
        }
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Discrete power law on `{1, ..., max}` with P(x) proportional to
/// `x^-alpha`, sampled by inverse CDF. Ranks beyond `max` are truncated and
/// the remaining mass renormalized.
#[derive(Debug, Clone)]
pub struct DiscretePowerLaw {
    cumulative: Vec<f64>,
    alpha: f64,
}

impl DiscretePowerLaw {
    pub fn new(alpha: f64, max: u32) -> Self {
        assert!(max >= 1, "support must be non-empty");
        let mut cumulative = Vec::with_capacity(max as usize);
        let mut acc = 0.0;
        for x in 1..=max {
            acc += (x as f64).powf(-alpha);
            cumulative.push(acc);
        }
        let total = acc;
        for c in &mut cumulative {
            *c /= total;
        }
        DiscretePowerLaw { cumulative, alpha }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&u).unwrap())
        {
            Ok(i) => i as u32 + 1,
            Err(i) => (i as u32 + 1).min(self.cumulative.len() as u32),
        }
    }

    /// Exact mean of the truncated distribution, by direct summation.
    pub fn mean(&self) -> f64 {
        let n = self.cumulative.len() as u32;
        let norm: f64 = (1..=n).map(|x| (x as f64).powf(-self.alpha)).sum();
        let num: f64 = (1..=n).map(|x| (x as f64).powf(1.0 - self.alpha)).sum();
        num / norm
    }

    pub fn support_max(&self) -> u32 {
        self.cumulative.len() as u32
    }
}

/// Continuous power-law sample on `[lo, hi]` with density proportional to
/// `x^-alpha` (alpha != 1), by inverse CDF.
pub fn sample_power_law<R: Rng>(rng: &mut R, lo: f64, hi: f64, alpha: f64) -> f64 {
    debug_assert!(lo > 0.0 && hi > lo);
    let u: f64 = rng.gen();
    let e = 1.0 - alpha;
    if e.abs() < 1e-12 {
        // alpha == 1 degenerates to log-uniform
        return (lo.ln() + u * (hi.ln() - lo.ln())).exp();
    }
    let a = lo.powf(e);
    let b = hi.powf(e);
    (a + u * (b - a)).powf(1.0 / e)
}
