//! Actions, observations, global state and the fairness-weighted reward.

use crate::channel::ContentionResult;
use crate::error::{Error, Result};

/// Index into `SimConfig::cw_set`.
pub type ActionId = usize;

/// Index of the wait-duration bin.
pub type ObservationId = usize;

/// Number of agents transmitting at once; `N + 1` distinct values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalState {
    occupying_count: usize,
}

impl GlobalState {
    pub fn new(occupying_count: usize, num_agents: usize) -> Result<Self> {
        if occupying_count > num_agents {
            return Err(Error::InvalidInput(format!(
                "{occupying_count} occupiers with only {num_agents} agents"
            )));
        }
        Ok(Self { occupying_count })
    }

    pub fn occupying_count(self) -> usize {
        self.occupying_count
    }

    pub fn num_states(num_agents: usize) -> usize {
        num_agents + 1
    }
}

/// Bin edges must start at 0 and increase strictly; the last bin is open-ended.
pub fn validate_bin_edges(edges: &[u64]) -> Result<()> {
    match edges.first() {
        None => return Err(Error::Config("bin_edges_us is empty".into())),
        Some(&first) if first != 0 => {
            return Err(Error::Config("bin_edges_us must start at 0".into()))
        }
        _ => {}
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bin_edges_us must be strictly increasing".into()));
    }
    Ok(())
}

/// Index of the half-open bin `[e_i, e_{i+1})` holding `wait_us`.
pub fn bin_observation(wait_us: u64, edges: &[u64]) -> ObservationId {
    debug_assert!(validate_bin_edges(edges).is_ok());
    edges.partition_point(|&e| e <= wait_us) - 1
}

/// Fair throughput share `rate / users` in Mbps.
pub fn fair_share(rate_mbps: f64, total_users: usize) -> Result<f64> {
    if total_users == 0 {
        return Err(Error::Config("fair share needs at least one user".into()));
    }
    if !(rate_mbps > 0.0) {
        return Err(Error::Config(format!("rate must be positive, got {rate_mbps}")));
    }
    Ok(rate_mbps / total_users as f64)
}

/// Jain's index `(Σx)² / (N Σx²)`. All-zero input counts as perfectly fair.
pub fn jain_index(x: &[f64]) -> f64 {
    let sum: f64 = x.iter().sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return 1.0;
    }
    (sum * sum / (x.len() as f64 * sq)).min(1.0)
}

/// Jain's index for agent `n` mixing its fresh ratio with the others' previous ones.
pub fn jain_index_for(prev_x: &[f64], n: usize, new_xn: f64) -> f64 {
    let (mut sum, mut sq) = (0.0, 0.0);
    for (i, &v) in prev_x.iter().enumerate() {
        let v = if i == n { new_xn } else { v };
        sum += v;
        sq += v * v;
    }
    if sq == 0.0 {
        return 1.0;
    }
    (sum * sum / (prev_x.len() as f64 * sq)).min(1.0)
}

/// Throughput in bits/µs, numerically equal to Mbps.
pub fn throughput(effective_bits: u64, duration_us: u64) -> Result<f64> {
    if duration_us == 0 {
        return Err(Error::InvalidInput("zero step duration".into()));
    }
    Ok(effective_bits as f64 / duration_us as f64)
}

/// Per-agent cumulative rewards and latest normalized throughputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardState {
    cumulative: Vec<f64>,
    /// `Th_i / O_i` from each agent's latest completed step.
    x: Vec<f64>,
    fair_share: f64,
}

/// What one agent's epoch contributes to the reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardIncrement {
    pub throughput: f64,
    pub jain: f64,
    pub increment: f64,
}

impl RewardState {
    pub fn new(num_agents: usize, rate_mbps: f64) -> Result<Self> {
        Ok(Self {
            cumulative: vec![0.0; num_agents],
            x: vec![0.0; num_agents],
            fair_share: fair_share(rate_mbps, num_agents)?,
        })
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn normalized_throughputs(&self) -> &[f64] {
        &self.x
    }

    pub fn fair_share(&self) -> f64 {
        self.fair_share
    }

    /// Reward increment for agent `n` against the others' previous throughputs.
    /// Does not modify the state.
    pub fn step_reward(&self, n: usize, effective_bits: u64, duration_us: u64) -> Result<RewardIncrement> {
        let th = throughput(effective_bits, duration_us)?;
        let jain = jain_index_for(&self.x, n, th / self.fair_share);
        Ok(RewardIncrement {
            throughput: th,
            jain,
            increment: (jain * th).abs().ln_1p(),
        })
    }

    /// Applies one synchronized epoch given `(effective_bits, duration_us)` per
    /// agent and returns the global reward. Every increment sees the others'
    /// throughputs from before this epoch.
    pub fn apply_epoch(&mut self, steps: &[(u64, u64)]) -> Result<f64> {
        if steps.len() != self.x.len() {
            return Err(Error::InvalidInput(format!(
                "{} step results for {} agents",
                steps.len(),
                self.x.len()
            )));
        }
        let incs = steps
            .iter()
            .enumerate()
            .map(|(n, &(bits, dur))| self.step_reward(n, bits, dur))
            .collect::<Result<Vec<_>>>()?;
        for (n, inc) in incs.iter().enumerate() {
            self.cumulative[n] += inc.increment;
            self.x[n] = inc.throughput / self.fair_share;
        }
        Ok(global_reward(&self.cumulative))
    }

    pub fn apply_results(&mut self, results: &[ContentionResult]) -> Result<f64> {
        let steps: Vec<(u64, u64)> = results
            .iter()
            .map(|r| (r.effective_payload_bits, r.total_duration_us))
            .collect();
        self.apply_epoch(&steps)
    }

    /// Jain's index over the current normalized throughputs.
    pub fn jain(&self) -> f64 {
        jain_index(&self.x)
    }
}

/// Sum of the agents' cumulative local rewards.
pub fn global_reward(local_rewards: &[f64]) -> f64 {
    local_rewards.iter().sum()
}

/// Min-max normalized reward, in `[0, 1]` for `r ∈ [r_min, r_max]`.
pub fn normalized_reward(r: f64, r_min: f64, r_max: f64) -> f64 {
    (r - r_min) / (r_max - r_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fair_share_examples() {
        assert_eq!(fair_share(30.0, 4).unwrap(), 7.5);
        assert_eq!(fair_share(30.0, 1).unwrap(), 30.0);
        assert_eq!(fair_share(30.0, 30).unwrap(), 1.0);
        assert!(matches!(fair_share(30.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[1.0, 1.0, 1.0, 1.0]), 1.0);
        assert_eq!(jain_index(&[1.0, 0.0, 0.0, 0.0]), 0.25);
        assert!((jain_index(&[2.0, 1.0]) - 9.0 / 10.0).abs() < 1e-15);
        assert_eq!(jain_index(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn mixed_jain_replaces_own_entry() {
        let prev = [1.0, 5.0, 1.0];
        let direct = jain_index(&[1.0, 2.0, 1.0]);
        assert!((jain_index_for(&prev, 1, 2.0) - direct).abs() < 1e-15);
    }

    #[test]
    fn collided_step_adds_nothing() {
        let mut s = RewardState::new(2, 30.0).unwrap();
        let r = s.apply_epoch(&[(0, 5000), (0, 7000)]).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(s.cumulative(), &[0.0, 0.0]);
    }

    #[test]
    fn single_agent_increment() {
        let s = RewardState::new(1, 30.0).unwrap();
        let inc = s.step_reward(0, 120_000, 4034).unwrap();
        let th = 120_000.0 / 4034.0;
        assert!((inc.throughput - 29.747_149_231_531_978).abs() < 1e-12);
        assert_eq!(inc.jain, 1.0);
        assert!((inc.increment - (th + 1.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn symmetric_agents_get_full_fairness() {
        let mut s = RewardState::new(2, 30.0).unwrap();
        s.apply_epoch(&[(90_000, 4000), (90_000, 4000)]).unwrap();
        let inc = s.step_reward(0, 90_000, 4000).unwrap();
        assert!((inc.jain - 1.0).abs() < 1e-15);
        assert!((inc.increment - (22.5f64 + 1.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn global_reward_examples() {
        assert_eq!(global_reward(&[0.0; 4]), 0.0);
        assert_eq!(global_reward(&[1.5, 2.5]), 4.0);
        assert_eq!(global_reward(&[2.5, 1.5]), global_reward(&[1.5, 2.5]));
    }

    #[test]
    fn binning_examples() {
        let e = [0, 100];
        assert_eq!(bin_observation(0, &e), 0);
        assert_eq!(bin_observation(100, &e), 1);
        assert_eq!(bin_observation(43 + 9 * 7, &[0, 100, 1000]), 1);
        assert_eq!(bin_observation(u64::MAX, &[0, 100, 1000]), 2);
    }

    #[test]
    fn bad_bin_edges() {
        assert!(validate_bin_edges(&[]).is_err());
        assert!(validate_bin_edges(&[5, 10]).is_err());
        assert!(validate_bin_edges(&[0, 10, 10]).is_err());
        assert!(validate_bin_edges(&[0]).is_ok());
    }

    #[test]
    fn global_state_bounds() {
        assert!(GlobalState::new(4, 4).is_ok());
        assert!(GlobalState::new(5, 4).is_err());
        assert_eq!(GlobalState::num_states(4), 5);
    }

    proptest! {
        #[test]
        fn jain_within_bounds(x in prop::collection::vec(0.0f64..100.0, 1..12)) {
            prop_assume!(x.iter().any(|&v| v > 0.0));
            let j = jain_index(&x);
            let n = x.len() as f64;
            prop_assert!(j >= 1.0 / n - 1e-12 && j <= 1.0);
        }

        #[test]
        fn cumulative_rewards_never_decrease(
            steps in prop::collection::vec(prop::collection::vec((0u64..300_000, 34u64..20_000), 3), 1..20)
        ) {
            let mut s = RewardState::new(3, 30.0).unwrap();
            let mut prev = s.cumulative().to_vec();
            for epoch in steps {
                s.apply_epoch(&epoch).unwrap();
                for (a, b) in prev.iter().zip(s.cumulative()) {
                    prop_assert!(b >= a);
                }
                prev = s.cumulative().to_vec();
            }
        }

        #[test]
        fn normalized_reward_in_unit_interval(lo in -50.0f64..50.0, span in 1e-6f64..100.0, f in 0.0f64..=1.0) {
            let hi = lo + span;
            let r = lo + f * span;
            let v = normalized_reward(r.min(hi), lo, hi);
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
