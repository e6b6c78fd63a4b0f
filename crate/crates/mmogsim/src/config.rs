//! Run configuration: world/workload parameters, manager parameters, overlay
//! parameters and harness settings, loadable from a TOML document.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Markov transition matrix over the mobility modes (Halt, Exploration,
/// Travelling), row-stochastic. The published source of the mobility model
/// does not restate its transition probabilities, so these defaults are
/// placeholders tuned for slow in-hotspot motion and long straight travels;
/// override them in the config when calibrated values are available.
pub type TransitionMatrix = [[f64; 3]; 3];

pub fn default_transition_matrix() -> TransitionMatrix {
    [
        [0.85, 0.10, 0.05], // Halt ->
        [0.15, 0.80, 0.05], // Exploration ->
        [0.05, 0.00, 0.95], // Travelling ->
    ]
}

/// World and workload parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// World width in virtual units.
    pub width: f64,
    /// World height in virtual units.
    pub height: f64,
    /// Number of hotspots.
    pub h_num: usize,
    /// Fraction of the world area covered by hotspots, in [0, 1].
    pub p_hot: f64,
    /// Probability that a player spawns inside a hotspot.
    pub p_den: f64,
    /// Fraction of objects placed inside hotspot areas.
    pub p_obj: f64,
    /// Total object count.
    pub o_num: usize,
    /// Maximum concurrent players.
    pub p_max: u32,
    /// Season half-period, in steps.
    pub lambda: f64,
    /// Broadcast message length in bytes.
    pub m_len: u32,
    /// Step duration in seconds.
    pub delta_t: f64,
    /// AOI radius in world units.
    pub aoi_radius: f64,
    /// RNG seed used when the workload is driven standalone.
    pub seed: u64,
    /// Mode transition matrix (rows: from Halt/Exploration/Travelling).
    pub transition_matrix: TransitionMatrix,
    /// Travelling speed, world units per step.
    pub avatar_speed: f64,
    /// Exploration step radius, world units.
    pub exploration_radius: f64,
    /// Exponent of the power-law step length used when exploring inside a
    /// hotspot.
    pub exploration_exponent: f64,
    /// Exponent of the Zipfian radial rank distribution used for placement
    /// inside hotspots.
    pub zipf_exponent: f64,
    /// Power-law amplitude of the fitted per-entity client count, y = K x^-a.
    pub client_k: f64,
    /// Power-law exponent of the fitted per-entity client count.
    pub client_alpha: f64,
    /// Truncation bound of the client-count distribution; 0 means "use
    /// p_max".
    pub client_max: u32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            width: 5000.0,
            height: 5000.0,
            h_num: 5,
            p_hot: 0.3,
            p_den: 0.8,
            p_obj: 0.7,
            o_num: 1000,
            p_max: 1000,
            lambda: 200.0,
            m_len: 100,
            delta_t: 0.2,
            aoi_radius: 100.0,
            seed: 1,
            transition_matrix: default_transition_matrix(),
            avatar_speed: 5.0,
            exploration_radius: 50.0,
            exploration_exponent: 1.4,
            zipf_exponent: 1.0,
            client_k: 0.5,
            client_alpha: 1.4,
            client_max: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("p_hot", self.p_hot),
            ("p_den", self.p_den),
            ("p_obj", self.p_obj),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(invalid("world dimensions must be positive"));
        }
        if self.delta_t <= 0.0 {
            return Err(invalid("delta_t must be > 0"));
        }
        if self.lambda <= 0.0 {
            return Err(invalid("lambda must be > 0"));
        }
        if self.aoi_radius <= 0.0 {
            return Err(invalid("aoi_radius must be > 0"));
        }
        if self.p_hot > 0.0 && self.h_num == 0 {
            return Err(invalid("p_hot > 0 requires at least one hotspot"));
        }
        for (i, row) in self.transition_matrix.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|p| *p < 0.0) {
                return Err(invalid(format!(
                    "transition matrix row {i} must be a probability row, sums to {s}"
                )));
            }
        }
        Ok(())
    }

    /// Effective truncation of the client-count distribution.
    pub fn effective_client_max(&self) -> u32 {
        if self.client_max == 0 {
            self.p_max.max(1)
        } else {
            self.client_max
        }
    }
}

/// Which neighbor-ranking heuristic the coverage layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    Score,
    Greedy,
}

/// Positional-manager (interest management) parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PamConfig {
    /// Seconds between two consecutive server updates to a client.
    pub t_s: f64,
    /// Coverage-view bound (cache size d).
    pub d: usize,
    /// Tiles per AOI side (resolution t gives t*t tiles).
    pub grid_resolution: usize,
    /// Ranking heuristic for the coverage layer.
    pub heuristic: Heuristic,
    /// Maximum descriptor age, in gossip iterations, admitted to ranking.
    pub stale_threshold: u64,
    /// Random-layer view bound.
    pub random_view_size: usize,
    /// Steps between random-layer gossip cycles.
    pub random_layer_period: u64,
    /// Steps between coverage-layer gossip cycles.
    pub coverage_layer_period: u64,
    /// Bytes per neighbor record in a server update message.
    pub record_bytes: u64,
    /// When false, clients rely on the periodic server only.
    pub overlay: bool,
}

impl Default for PamConfig {
    fn default() -> Self {
        PamConfig {
            t_s: 1.0,
            d: 10,
            grid_resolution: 32,
            heuristic: Heuristic::Greedy,
            stale_threshold: 20,
            random_view_size: 10,
            random_layer_period: 4,
            coverage_layer_period: 1,
            record_bytes: 24,
            overlay: true,
        }
    }
}

impl PamConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.t_s <= 0.0 {
            return Err(invalid("t_s must be > 0"));
        }
        if self.grid_resolution == 0 {
            return Err(invalid("grid_resolution must be >= 1"));
        }
        Ok(())
    }
}

/// State-manager parameters: thresholds, epoch length and the cloud price
/// card. Prices follow a public-cloud model: rent per hour prorated per
/// epoch, bandwidth charged per GB (1 GB = 1e9 bytes).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManagerConfig {
    /// Maximum relative risk the operator tolerates, in [0, 1].
    pub risk_limit: f64,
    /// Upper load-factor threshold; nodes predicted above it shed VSs.
    pub lf_up: f64,
    /// Bottom load-factor threshold; nodes below it are drained.
    pub lf_bot: f64,
    /// Minimum pool size considered per epoch.
    pub p_size: usize,
    /// Prediction-error threshold, as a fraction of the host capacity.
    pub xi_est: f64,
    /// Epoch length in steps.
    pub epoch_steps: u64,
    /// Cloud upload capacity, bytes/second.
    pub cloud_cap: f64,
    /// Cloud rent, dollars per hour.
    pub cloud_rent_per_hour: f64,
    /// Cloud bandwidth price, dollars per GB.
    pub cloud_cost_per_gb: f64,
    /// Peer upload capacity, bytes/second.
    pub peer_cap: f64,
    /// Peer failure probability per epoch.
    pub peer_fprob: f64,
    /// Backup synchronization period, seconds.
    pub bvs_sync_seconds: f64,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        ManagerConfig {
            risk_limit: 0.1,
            lf_up: 0.8,
            lf_bot: 0.2,
            p_size: 5,
            xi_est: 0.05,
            epoch_steps: 300,
            cloud_cap: 12_500_000.0,
            cloud_rent_per_hour: 0.26,
            cloud_cost_per_gb: 0.12,
            peer_cap: 500_000.0,
            peer_fprob: 0.01,
            bvs_sync_seconds: 30.0,
        }
    }
}

impl ManagerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.risk_limit) {
            return Err(invalid("risk_limit must be in [0,1]"));
        }
        if !(0.0 < self.lf_bot && self.lf_bot < self.lf_up && self.lf_up <= 1.0) {
            return Err(invalid("thresholds must satisfy 0 < lf_bot < lf_up <= 1"));
        }
        if self.epoch_steps == 0 {
            return Err(invalid("epoch_steps must be >= 1"));
        }
        if self.cloud_cap <= 0.0 || self.peer_cap <= 0.0 {
            return Err(invalid("capacities must be positive"));
        }
        if !(0.0..=1.0).contains(&self.peer_fprob) {
            return Err(invalid("peer_fprob must be in [0,1]"));
        }
        Ok(())
    }

    /// Cloud rent prorated to one epoch.
    pub fn cloud_rent_per_epoch(&self, delta_t: f64) -> f64 {
        self.cloud_rent_per_hour / 3600.0 * (self.epoch_steps as f64 * delta_t)
    }

    /// Cloud bandwidth price per byte.
    pub fn cloud_cost_per_byte(&self) -> f64 {
        self.cloud_cost_per_gb / 1e9
    }
}

/// Which subsystems a run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subsystems {
    Sam,
    Pam,
    Both,
}

/// Top-level harness configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub world: WorldConfig,
    pub manager: ManagerConfig,
    pub pam: PamConfig,
    /// Virtual-server count (ring partition size).
    pub vs_count: usize,
    /// Size of the user-provided peer pool available to the manager.
    pub peer_count: usize,
    /// Total steps to simulate.
    pub total_steps: u64,
    /// Master seed; all subsystem streams derive from it.
    pub seed: u64,
    /// Enabled subsystems.
    pub subsystems: Subsystems,
    /// Probability that an avatar issues a state request to an entity in its
    /// AOI on a given step.
    pub request_prob: f64,
    /// Steps per metrics aggregation window; 0 means one simulated minute.
    pub window_steps: u64,
    /// Fixed player population; when set, overrides the seasonal formula.
    pub fixed_players: Option<u32>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            world: WorldConfig::default(),
            manager: ManagerConfig::default(),
            pam: PamConfig::default(),
            vs_count: 100,
            peer_count: 100,
            total_steps: 6000,
            seed: 1,
            subsystems: Subsystems::Both,
            request_prob: 0.1,
            window_steps: 0,
            fixed_players: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.world.validate()?;
        self.manager.validate()?;
        self.pam.validate()?;
        if self.sam_enabled() && self.vs_count == 0 {
            return Err(invalid("vs_count must be >= 1 when the state manager runs"));
        }
        if self.request_prob < 0.0 || self.request_prob > 1.0 {
            return Err(invalid("request_prob must be in [0,1]"));
        }
        Ok(())
    }

    pub fn sam_enabled(&self) -> bool {
        matches!(self.subsystems, Subsystems::Sam | Subsystems::Both)
    }

    pub fn pam_enabled(&self) -> bool {
        matches!(self.subsystems, Subsystems::Pam | Subsystems::Both)
    }

    /// Effective metrics window in steps (one simulated minute by default).
    pub fn effective_window_steps(&self) -> u64 {
        if self.window_steps > 0 {
            self.window_steps
        } else {
            (60.0 / self.world.delta_t).round().max(1.0) as u64
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Override a single field by dotted key, as used by `--set` and `sweep`.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn f64_of(v: &str) -> Result<f64, ConfigError> {
            v.parse()
                .map_err(|_| invalid(format!("expected a number, got {v:?}")))
        }
        fn int_of<T: std::str::FromStr>(v: &str) -> Result<T, ConfigError> {
            v.parse()
                .map_err(|_| invalid(format!("expected an integer, got {v:?}")))
        }
        match key {
            "seed" => self.seed = int_of(value)?,
            "total_steps" => self.total_steps = int_of(value)?,
            "vs_count" => self.vs_count = int_of(value)?,
            "peer_count" => self.peer_count = int_of(value)?,
            "request_prob" => self.request_prob = f64_of(value)?,
            "window_steps" => self.window_steps = int_of(value)?,
            "fixed_players" => self.fixed_players = Some(int_of(value)?),
            "subsystems" => {
                self.subsystems = match value {
                    "sam" => Subsystems::Sam,
                    "pam" => Subsystems::Pam,
                    "both" => Subsystems::Both,
                    other => return Err(invalid(format!("unknown subsystems value {other:?}"))),
                }
            }
            "world.p_max" => self.world.p_max = int_of(value)?,
            "world.lambda" => self.world.lambda = f64_of(value)?,
            "world.o_num" => self.world.o_num = int_of(value)?,
            "world.aoi_radius" => self.world.aoi_radius = f64_of(value)?,
            "world.avatar_speed" => self.world.avatar_speed = f64_of(value)?,
            "world.delta_t" => self.world.delta_t = f64_of(value)?,
            "manager.risk_limit" => self.manager.risk_limit = f64_of(value)?,
            "manager.xi_est" => self.manager.xi_est = f64_of(value)?,
            "manager.epoch_steps" => self.manager.epoch_steps = int_of(value)?,
            "pam.t_s" => self.pam.t_s = f64_of(value)?,
            "pam.d" => self.pam.d = int_of(value)?,
            "pam.grid_resolution" => self.pam.grid_resolution = int_of(value)?,
            "pam.stale_threshold" => self.pam.stale_threshold = int_of(value)?,
            "pam.overlay" => {
                self.pam.overlay = match value {
                    "true" | "on" | "1" => true,
                    "false" | "off" | "0" => false,
                    other => return Err(invalid(format!("expected a bool, got {other:?}"))),
                }
            }
            "pam.heuristic" => {
                self.pam.heuristic = match value {
                    "score" => Heuristic::Score,
                    "greedy" => Heuristic::Greedy,
                    other => return Err(invalid(format!("unknown heuristic {other:?}"))),
                }
            }
            other => return Err(invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_thresholds() {
        let mut cfg = SimConfig::default();
        cfg.manager.lf_bot = 0.9;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SimConfig::default();
        let text = cfg.to_toml_string();
        let back = SimConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.vs_count, cfg.vs_count);
        assert_eq!(back.world.p_max, cfg.world.p_max);
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = SimConfig::default();
        cfg.apply_override("manager.risk_limit", "0.5").unwrap();
        cfg.apply_override("pam.t_s", "2.5").unwrap();
        assert_eq!(cfg.manager.risk_limit, 0.5);
        assert_eq!(cfg.pam.t_s, 2.5);
        assert!(cfg.apply_override("nope", "1").is_err());
    }
}
