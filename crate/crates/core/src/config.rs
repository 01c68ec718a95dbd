//! Experiment configuration.
//!
//! Everything is loaded from a TOML file (see `configs/default.toml`). Every
//! field except `seed` has a default equal to the reference scenario: two
//! LTE-LAA eNBs and two Wi-Fi APs sharing one 20 MHz channel.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of contending node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    LteEnb,
    WifiAp,
}

impl AgentKind {
    pub fn label(self) -> &'static str {
        match self {
            AgentKind::LteEnb => "lte",
            AgentKind::WifiAp => "wifi",
        }
    }
}

/// Channel timing and traffic constants. All durations are integer µs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub num_lte: usize,
    pub num_wifi: usize,
    pub difs_us: u32,
    pub wifi_slot_us: u32,
    pub icca_us: u32,
    pub ecca_slot_us: u32,
    /// Contention windows shared by both kinds; an action is an index into this list.
    pub cw_set: Vec<u32>,
    /// LTE channel occupation per contention window (ms), parallel to `cw_set`.
    pub lte_occupation_ms: Vec<u32>,
    pub wifi_packet_bytes: u32,
    /// Transmission rate in Mbps, i.e. bits per µs.
    pub rate_mbps: u32,
    /// Probability that an occupying agent is missed in one 1 µs sub-sense.
    pub sense_error_prob: f64,
    pub gamma: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_lte: 2,
            num_wifi: 2,
            difs_us: 34,
            wifi_slot_us: 9,
            icca_us: 43,
            ecca_slot_us: 9,
            cw_set: vec![15, 31, 63, 127, 255, 511, 1023],
            lte_occupation_ms: vec![3, 6, 6, 8, 8, 10, 10],
            wifi_packet_bytes: 15000,
            rate_mbps: 30,
            sense_error_prob: 0.0,
            gamma: 0.9,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("difs_us", self.difs_us),
            ("wifi_slot_us", self.wifi_slot_us),
            ("icca_us", self.icca_us),
            ("ecca_slot_us", self.ecca_slot_us),
            ("wifi_packet_bytes", self.wifi_packet_bytes),
            ("rate_mbps", self.rate_mbps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_agents() == 0 {
            return Err(Error::Config("agent roster is empty".into()));
        }
        if self.cw_set.is_empty() {
            return Err(Error::Config("cw_set is empty".into()));
        }
        if self.cw_set.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("cw_set must be strictly increasing".into()));
        }
        if self.lte_occupation_ms.len() != self.cw_set.len() {
            return Err(Error::Config(format!(
                "lte_occupation_ms has {} entries but cw_set has {}",
                self.lte_occupation_ms.len(),
                self.cw_set.len()
            )));
        }
        if self.lte_occupation_ms.contains(&0) {
            return Err(Error::Config("LTE occupation times must be positive".into()));
        }
        if (u64::from(self.wifi_packet_bytes) * 8) % u64::from(self.rate_mbps) != 0 {
            return Err(Error::Config(
                "Wi-Fi packet airtime is not an integer number of µs".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.sense_error_prob) {
            return Err(Error::Config("sense_error_prob must lie in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.num_lte + self.num_wifi
    }

    pub fn num_actions(&self) -> usize {
        self.cw_set.len()
    }

    /// Agent roster: LTE eNBs first, then Wi-Fi APs.
    pub fn roster(&self) -> Vec<AgentKind> {
        std::iter::repeat_n(AgentKind::LteEnb, self.num_lte)
            .chain(std::iter::repeat_n(AgentKind::WifiAp, self.num_wifi))
            .collect()
    }
}

/// Hyperparameters of the stick-breaking / Dirichlet priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorHyperparams {
    /// Gamma shape of the transition concentrations α.
    pub c: f64,
    /// Gamma rate of the transition concentrations α.
    pub d: f64,
    /// Gamma shape of the initial-node concentration ρ.
    pub e: f64,
    /// Gamma rate of the initial-node concentration ρ.
    pub f: f64,
    /// Symmetric Dirichlet concentration over actions.
    pub theta: f64,
}

impl Default for PriorHyperparams {
    fn default() -> Self {
        PriorHyperparams {
            c: 0.1,
            d: 100.0,
            e: 0.1,
            f: 100.0,
            theta: 1.0,
        }
    }
}

impl PriorHyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c", self.c),
            ("d", self.d),
            ("e", self.e),
            ("f", self.f),
            ("theta", self.theta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("prior {name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonCurve {
    Linear,
    Exponential,
}

/// Learning-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    /// Episodes collected per round (K).
    pub episodes: usize,
    /// Episode horizon (T); each episode has T + 1 steps.
    pub horizon: usize,
    /// Outer rounds of collect → infer → prune.
    pub max_iters: usize,
    /// Cap on CAVI sweeps inside one round.
    pub max_sweeps: usize,
    /// Relative ELBO change that ends a round.
    pub tolerance: f64,
    pub epsilon_curve: EpsilonCurve,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Finite observation bin edges in µs; the first must be 0, an overflow
    /// bin `[last, ∞)` is implied.
    pub bin_edges_us: Vec<u64>,
    /// Maximum number of controller nodes created at initialization.
    pub truncation_cap: usize,
    /// Nodes whose share of expected occupancy falls below this are pruned.
    pub prune_threshold: f64,
    /// Additive smoothing for initial controller tables.
    pub init_smoothing: f64,
    /// Write every round's trajectory file instead of only the first and last.
    pub save_all_trajectories: bool,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            episodes: 200,
            horizon: 50,
            max_iters: 50,
            max_sweeps: 100,
            tolerance: 1e-5,
            epsilon_curve: EpsilonCurve::Linear,
            epsilon_start: 0.9,
            epsilon_end: 0.2,
            bin_edges_us: vec![0, 40, 97, 236, 574, 1394, 3388, 8231, 20000],
            truncation_cap: 10,
            prune_threshold: 1e-3,
            init_smoothing: 1.0,
            save_all_trajectories: false,
        }
    }
}

impl LearningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.epsilon_end > self.epsilon_start {
            return Err(Error::Config(
                "epsilon_end must not exceed epsilon_start".into(),
            ));
        }
        crate::model::validate_bin_edges(&self.bin_edges_us)?;
        if self.truncation_cap == 0 {
            return Err(Error::Config("truncation_cap must be at least 1".into()));
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold < 1.0) {
            return Err(Error::Config("prune_threshold must lie in (0, 1)".into()));
        }
        if !(self.init_smoothing > 0.0) {
            return Err(Error::Config("init_smoothing must be positive".into()));
        }
        Ok(())
    }

    pub fn num_observations(&self) -> usize {
        self.bin_edges_us.len()
    }
}

/// Top-level experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads for episode collection and message passing (0 = all cores).
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub priors: PriorHyperparams,
    #[serde(default)]
    pub learning: LearningConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    /// Reference configuration with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            output_dir: default_output_dir(),
            workers: default_workers(),
            sim: SimConfig::default(),
            priors: PriorHyperparams::default(),
            learning: LearningConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|span| text[..span.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0);
            Error::parse(origin, line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.priors.validate()?;
        self.learning.validate()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::with_seed(7).validate().unwrap();
    }

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::from_toml_str("[sim]\nnum_lte = 1\n", "x.toml").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "seed = 1\n[sim]\nnum_lte = \"two\"\n";
        match ExperimentConfig::from_toml_str(text, "bad.toml").unwrap_err() {
            Error::Parse { file, line, .. } => {
                assert_eq!(file, "bad.toml");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_misaligned_occupation_table() {
        let mut cfg = ExperimentConfig::with_seed(1);
        cfg.sim.lte_occupation_ms.pop();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_non_increasing_cw_set() {
        let mut cfg = ExperimentConfig::with_seed(1);
        cfg.sim.cw_set.swap(0, 1);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::with_seed(42);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string(), "rt").unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn roster_orders_lte_first() {
        let sim = SimConfig {
            num_lte: 1,
            num_wifi: 2,
            ..SimConfig::default()
        };
        assert_eq!(
            sim.roster(),
            vec![AgentKind::LteEnb, AgentKind::WifiAp, AgentKind::WifiAp]
        );
    }
}
