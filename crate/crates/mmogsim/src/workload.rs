//! Synthetic MMOG workload: hotspot layout, Zipfian object placement,
//! Markov-chain avatar mobility, seasonal player counts and per-step
//! bandwidth demand derived from AOI membership.

use crate::config::WorldConfig;
use crate::geom::{Disk, Point, SpatialGrid};
use crate::rng::{sample_power_law, DiscretePowerLaw};
use crate::vsdht::DhtId;
use rand::Rng;
use std::collections::BTreeMap;
use thiserror::Error;

/// Entity uids at or above this value denote avatar entities; below it,
/// placed objects.
pub const AVATAR_UID_BASE: u32 = 1 << 31;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("{0} hotspots of radius {1:.1} cannot fit inside the world bounds")]
    HotspotsDoNotFit(usize, f64),
    #[error("could not place a point outside hotspot areas (p_hot too close to 1?)")]
    OutlandExhausted,
}

/// A high-density circular region attracting avatars and objects.
#[derive(Debug, Clone, Copy)]
pub struct Hotspot {
    pub center: Point,
    pub radius: f64,
}

impl Hotspot {
    pub fn disk(&self) -> Disk {
        Disk::new(self.center, self.radius)
    }
}

/// Avatar mobility mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Halt,
    Exploration,
    Travelling,
}

impl Mode {
    fn index(self) -> usize {
        match self {
            Mode::Halt => 0,
            Mode::Exploration => 1,
            Mode::Travelling => 2,
        }
    }

    fn from_index(i: usize) -> Mode {
        match i {
            0 => Mode::Halt,
            1 => Mode::Exploration,
            _ => Mode::Travelling,
        }
    }
}

/// One player's mobility state. `travel_target` is present exactly when the
/// mode is Travelling.
#[derive(Debug, Clone)]
pub struct AvatarState {
    pub id: u32,
    pub position: Point,
    pub mode: Mode,
    pub travel_target: Option<Point>,
    pub speed: f64,
}

/// A virtual-world object record as stored in the DHT. The wire layout is
/// fixed at [`EntityDescriptor::WIRE_BYTES`]; the DHT id is the digest of the
/// initial content and never changes after creation.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityDescriptor {
    pub uid: u32,
    pub dht_id: DhtId,
    pub position: [f32; 2],
    pub attributes: [(u32, u64); 10],
    pub has_think: bool,
}

impl EntityDescriptor {
    /// Serialized payload size in bytes, the unit of all VS size accounting.
    pub const WIRE_BYTES: u64 = 140;
    /// Bytes of initial content that feed the identifier digest.
    const CONTENT_BYTES: usize = 133;

    pub fn new(uid: u32, position: [f32; 2], attributes: [(u32, u64); 10], has_think: bool) -> Self {
        let mut d = EntityDescriptor {
            uid,
            dht_id: DhtId::ZERO,
            position,
            attributes,
            has_think,
        };
        d.dht_id = DhtId::digest(&d.content_bytes());
        d
    }

    /// Canonical big-endian serialization of the initial content (the hash
    /// input): uid, position, attributes, think flag.
    pub fn content_bytes(&self) -> [u8; Self::CONTENT_BYTES] {
        let mut out = [0u8; Self::CONTENT_BYTES];
        let mut at = 0usize;
        let mut put = |bytes: &[u8], at: &mut usize| {
            out[*at..*at + bytes.len()].copy_from_slice(bytes);
            *at += bytes.len();
        };
        put(&self.uid.to_be_bytes(), &mut at);
        put(&self.position[0].to_bits().to_be_bytes(), &mut at);
        put(&self.position[1].to_bits().to_be_bytes(), &mut at);
        for (k, v) in &self.attributes {
            put(&k.to_be_bytes(), &mut at);
            put(&v.to_be_bytes(), &mut at);
        }
        put(&[self.has_think as u8], &mut at);
        debug_assert_eq!(at, Self::CONTENT_BYTES);
        out
    }

    /// Full migration payload: the content bytes padded to the fixed
    /// 140-byte record (the id itself is recomputable and not carried).
    pub fn payload_bytes(&self) -> [u8; Self::WIRE_BYTES as usize] {
        let mut out = [0u8; Self::WIRE_BYTES as usize];
        out[..Self::CONTENT_BYTES].copy_from_slice(&self.content_bytes());
        out
    }

    pub fn point(&self) -> Point {
        Point::new(self.position[0] as f64, self.position[1] as f64)
    }
}

/// Per-step load sample: per-entity AOI membership counts and the resulting
/// broadcast bandwidth.
#[derive(Debug, Clone)]
pub struct LoadSample {
    pub step: u64,
    pub per_entity_aoi_count: BTreeMap<u32, u32>,
    pub total_bandwidth: u64,
}

/// Initialized world: hotspots, placed objects and the starting avatar set.
pub struct World {
    pub hotspots: Vec<Hotspot>,
    pub objects: Vec<EntityDescriptor>,
    pub avatars: Vec<AvatarState>,
}

/// Number of concurrent players at step `t`: `round(|sin(pi t / lambda)| *
/// p_max)`. The absolute value keeps the second half of the cycle
/// non-negative while preserving the seasonal shape.
pub fn player_count(t: u64, lambda: f64, p_max: u32) -> u32 {
    let s = (std::f64::consts::PI * t as f64 / lambda).sin().abs();
    (s * p_max as f64).round() as u32
}

fn radial_zipf_point<R: Rng>(h: &Hotspot, zipf_exponent: f64, rng: &mut R) -> Point {
    // Rank-frequency construction: radial distance binned into ceil(radius)
    // unit bins, rank = bin index + 1, mass proportional to rank^-s.
    let bins = (h.radius.ceil() as u32).clamp(1, 4096);
    let law = DiscretePowerLaw::new(zipf_exponent, bins);
    let bin = law.sample(rng) - 1;
    let width = h.radius / bins as f64;
    let lo = bin as f64 * width;
    let r = lo + rng.gen::<f64>() * width * 0.999_999;
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    Point::new(h.center.x + r * theta.cos(), h.center.y + r * theta.sin())
}

fn uniform_point<R: Rng>(cfg: &WorldConfig, rng: &mut R) -> Point {
    Point::new(
        rng.gen::<f64>() * cfg.width,
        rng.gen::<f64>() * cfg.height,
    )
}

fn inside_any_hotspot(p: &Point, hotspots: &[Hotspot]) -> bool {
    hotspots.iter().any(|h| h.disk().contains_strict(p))
}

fn outland_point<R: Rng>(
    cfg: &WorldConfig,
    hotspots: &[Hotspot],
    rng: &mut R,
) -> Result<Point, WorkloadError> {
    for _ in 0..100_000 {
        let p = uniform_point(cfg, rng);
        if !inside_any_hotspot(&p, hotspots) {
            return Ok(p);
        }
    }
    Err(WorkloadError::OutlandExhausted)
}

/// Place the hotspots: uniform centers, equal radii sized so the aggregate
/// hotspot area matches `p_hot` of the world area.
pub fn place_hotspots<R: Rng>(
    cfg: &WorldConfig,
    rng: &mut R,
) -> Result<Vec<Hotspot>, WorkloadError> {
    if cfg.p_hot <= 0.0 || cfg.h_num == 0 {
        return Ok(Vec::new());
    }
    let area = cfg.p_hot * cfg.width * cfg.height / cfg.h_num as f64;
    let radius = (area / std::f64::consts::PI).sqrt();
    if 2.0 * radius > cfg.width.min(cfg.height) {
        return Err(WorkloadError::HotspotsDoNotFit(cfg.h_num, radius));
    }
    let mut hotspots = Vec::with_capacity(cfg.h_num);
    for _ in 0..cfg.h_num {
        let x = radius + rng.gen::<f64>() * (cfg.width - 2.0 * radius);
        let y = radius + rng.gen::<f64>() * (cfg.height - 2.0 * radius);
        hotspots.push(Hotspot {
            center: Point::new(x, y),
            radius,
        });
    }
    Ok(hotspots)
}

fn random_attributes<R: Rng>(rng: &mut R) -> [(u32, u64); 10] {
    let mut attrs = [(0u32, 0u64); 10];
    for a in &mut attrs {
        *a = (rng.gen(), rng.gen());
    }
    attrs
}

/// Spawn one avatar by the initial placement rule: inside a hotspot with
/// probability `p_den` (Zipfian radial position), otherwise uniformly over
/// the whole map. New avatars always start in Halt.
pub fn spawn_avatar<R: Rng>(
    cfg: &WorldConfig,
    hotspots: &[Hotspot],
    id: u32,
    rng: &mut R,
) -> AvatarState {
    let position = if !hotspots.is_empty() && rng.gen::<f64>() < cfg.p_den {
        let h = &hotspots[rng.gen_range(0..hotspots.len())];
        radial_zipf_point(h, cfg.zipf_exponent, rng)
    } else {
        uniform_point(cfg, rng)
    };
    AvatarState {
        id,
        position,
        mode: Mode::Halt,
        travel_target: None,
        speed: cfg.avatar_speed,
    }
}

/// Initialize the world: hotspots, `o_num` objects split exactly
/// `floor(p_obj * o_num)` inside hotspot disks (Zipfian radial concentration)
/// and the remainder strictly outside, plus the step-0 avatar population.
pub fn init_world<R: Rng>(cfg: &WorldConfig, rng: &mut R) -> Result<World, WorkloadError> {
    let hotspots = place_hotspots(cfg, rng)?;
    let in_hot = if hotspots.is_empty() {
        0
    } else {
        (cfg.p_obj * cfg.o_num as f64).floor() as usize
    };

    let mut objects = Vec::with_capacity(cfg.o_num);
    for uid in 0..cfg.o_num {
        let p = if uid < in_hot {
            let h = &hotspots[rng.gen_range(0..hotspots.len())];
            radial_zipf_point(h, cfg.zipf_exponent, rng)
        } else {
            outland_point(cfg, &hotspots, rng)?
        };
        let attrs = random_attributes(rng);
        objects.push(EntityDescriptor::new(
            uid as u32,
            [p.x as f32, p.y as f32],
            attrs,
            false,
        ));
    }

    let avatars = (0..player_count(0, cfg.lambda, cfg.p_max))
        .map(|id| spawn_avatar(cfg, &hotspots, id, rng))
        .collect();

    Ok(World {
        hotspots,
        objects,
        avatars,
    })
}

fn pick_travel_target<R: Rng>(cfg: &WorldConfig, hotspots: &[Hotspot], rng: &mut R) -> Point {
    if !hotspots.is_empty() && rng.gen::<f64>() < cfg.p_den {
        let h = &hotspots[rng.gen_range(0..hotspots.len())];
        radial_zipf_point(h, cfg.zipf_exponent, rng)
    } else {
        uniform_point(cfg, rng)
    }
}

fn clamp_to_world(cfg: &WorldConfig, p: Point) -> Point {
    Point::new(p.x.clamp(0.0, cfg.width), p.y.clamp(0.0, cfg.height))
}

/// Advance one avatar by one step: sample the next mode from the transition
/// matrix row of the current mode, then move according to the new mode.
/// Reaching a travel target transitions to Halt.
pub fn step_mobility<R: Rng>(
    avatar: &mut AvatarState,
    cfg: &WorldConfig,
    hotspots: &[Hotspot],
    rng: &mut R,
) {
    let row = &cfg.transition_matrix[avatar.mode.index()];
    let u: f64 = rng.gen();
    let next = if u < row[0] {
        Mode::from_index(0)
    } else if u < row[0] + row[1] {
        Mode::from_index(1)
    } else {
        Mode::from_index(2)
    };

    let entering_travel = next == Mode::Travelling && avatar.mode != Mode::Travelling;
    avatar.mode = next;
    match next {
        Mode::Halt => {
            avatar.travel_target = None;
        }
        Mode::Exploration => {
            avatar.travel_target = None;
            let theta = rng.gen::<f64>() * std::f64::consts::TAU;
            let dist = if inside_any_hotspot(&avatar.position, hotspots) {
                sample_power_law(rng, 1.0, cfg.exploration_radius.max(1.001), cfg.exploration_exponent)
            } else {
                cfg.exploration_radius * rng.gen::<f64>().sqrt()
            };
            let p = Point::new(
                avatar.position.x + dist * theta.cos(),
                avatar.position.y + dist * theta.sin(),
            );
            avatar.position = clamp_to_world(cfg, p);
        }
        Mode::Travelling => {
            if entering_travel || avatar.travel_target.is_none() {
                avatar.travel_target = Some(pick_travel_target(cfg, hotspots, rng));
            }
            let target = avatar.travel_target.unwrap();
            let d = avatar.position.dist(&target);
            if d <= avatar.speed {
                avatar.position = target;
                avatar.mode = Mode::Halt;
                avatar.travel_target = None;
            } else {
                let f = avatar.speed / d;
                avatar.position = Point::new(
                    avatar.position.x + (target.x - avatar.position.x) * f,
                    avatar.position.y + (target.y - avatar.position.y) * f,
                );
            }
        }
    }
}

/// Per-step interaction load. Every entity (objects and avatar entities,
/// including the avatar's own AOI) is counted in as many AOIs as contain its
/// position; the step bandwidth is the sum of those counts times `m_len`.
pub fn compute_load(
    objects: &[EntityDescriptor],
    avatars: &[AvatarState],
    aoi_radius: f64,
    m_len: u32,
    step: u64,
    world_w: f64,
    world_h: f64,
) -> LoadSample {
    let mut grid = SpatialGrid::new(world_w, world_h, aoi_radius);
    for a in avatars {
        grid.insert(a.id, a.position);
    }
    let mut counts = BTreeMap::new();
    let mut total: u64 = 0;
    for o in objects {
        let c = grid.count_within(&o.point(), aoi_radius);
        total += c as u64;
        counts.insert(o.uid, c);
    }
    for a in avatars {
        let c = grid.count_within(&a.position, aoi_radius);
        total += c as u64;
        counts.insert(AVATAR_UID_BASE + a.id, c);
    }
    LoadSample {
        step,
        per_entity_aoi_count: counts,
        total_bandwidth: total * m_len as u64,
    }
}

/// Per-entity connected-client count, drawn from the fitted power law
/// `y(x) = K x^-alpha` discretized on `{1, ..., max}`. `K` is the published
/// fit amplitude; it cancels under normalization and is kept for
/// documentation.
#[derive(Debug, Clone)]
pub struct ClientCountModel {
    pub k: f64,
    pub alpha: f64,
    law: DiscretePowerLaw,
}

impl ClientCountModel {
    pub fn new(k: f64, alpha: f64, max: u32) -> Self {
        ClientCountModel {
            k,
            alpha,
            law: DiscretePowerLaw::new(alpha, max.max(1)),
        }
    }

    pub fn from_config(cfg: &WorldConfig) -> Self {
        Self::new(cfg.client_k, cfg.client_alpha, cfg.effective_client_max())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        self.law.sample(rng)
    }

    /// Analytic mean of the truncated discrete power law.
    pub fn mean(&self) -> f64 {
        self.law.mean()
    }
}

impl Default for ClientCountModel {
    fn default() -> Self {
        Self::new(0.5, 1.4, 1000)
    }
}
