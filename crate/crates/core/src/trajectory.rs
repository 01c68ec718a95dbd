//! Episode records, parallel collection and the trajectory text format.
//!
//! File layout: a header line `# coexist-trajectory v1 agents=N`, a column
//! comment, then one whitespace-separated record per step:
//!
//! ```text
//! episode step actions observations reward probs effective_bits durations_us
//! ```
//!
//! Per-agent columns are comma-separated lists. `observations` is `-` at step
//! 0. Reals are written with 17 significant digits so the file reproduces the
//! in-memory values bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::run_contention_epoch;
use crate::config::{AgentKind, SimConfig};
use crate::error::{Error, Result};
use crate::fsc::BehaviorPolicy;
use crate::model::{bin_observation, ActionId, ObservationId, RewardState};

const HEADER_PREFIX: &str = "# coexist-trajectory v1 agents=";
const COLUMNS: &str = "# episode step actions observations reward probs effective_bits durations_us";

/// One episode: `T+1` joint actions, `T` joint observations, `T+1` rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    num_agents: usize,
    actions: Vec<ActionId>,
    observations: Vec<ObservationId>,
    rewards: Vec<f64>,
    behavior_probs: Vec<f64>,
    effective_bits: Vec<u64>,
    durations: Vec<u64>,
}

/// Everything recorded for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub actions: Vec<ActionId>,
    /// `None` at step 0.
    pub observations: Option<Vec<ObservationId>>,
    pub reward: f64,
    pub behavior_probs: Vec<f64>,
    pub effective_bits: Vec<u64>,
    pub durations: Vec<u64>,
}

impl Trajectory {
    pub fn new(num_agents: usize) -> Self {
        Self {
            num_agents,
            actions: Vec::new(),
            observations: Vec::new(),
            rewards: Vec::new(),
            behavior_probs: Vec::new(),
            effective_bits: Vec::new(),
            durations: Vec::new(),
        }
    }

    pub fn push_step(&mut self, step: StepRecord) -> Result<()> {
        let n = self.num_agents;
        let t = self.rewards.len();
        let lens_ok = step.actions.len() == n
            && step.behavior_probs.len() == n
            && step.effective_bits.len() == n
            && step.durations.len() == n;
        if !lens_ok {
            return Err(Error::InvalidInput(format!("step {t} does not have {n} agent entries")));
        }
        match (&step.observations, t) {
            (None, 0) => {}
            (Some(o), t) if t > 0 && o.len() == n => self.observations.extend_from_slice(o),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "step {t}: observations required exactly for steps after the first"
                )))
            }
        }
        if !step.reward.is_finite() {
            return Err(Error::InvalidInput(format!("step {t}: non-finite reward")));
        }
        if step.behavior_probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidInput(format!("step {t}: behavior probability outside (0, 1]")));
        }
        self.actions.extend_from_slice(&step.actions);
        self.rewards.push(step.reward);
        self.behavior_probs.extend_from_slice(&step.behavior_probs);
        self.effective_bits.extend_from_slice(&step.effective_bits);
        self.durations.extend_from_slice(&step.durations);
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    /// Number of action steps, `T + 1`.
    pub fn num_steps(&self) -> usize {
        self.rewards.len()
    }

    pub fn action(&self, step: usize, agent: usize) -> ActionId {
        self.actions[step * self.num_agents + agent]
    }

    /// Observation received before acting at `step` (≥ 1).
    pub fn observation(&self, step: usize, agent: usize) -> ObservationId {
        self.observations[(step - 1) * self.num_agents + agent]
    }

    pub fn reward(&self, step: usize) -> f64 {
        self.rewards[step]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn behavior_prob(&self, step: usize, agent: usize) -> f64 {
        self.behavior_probs[step * self.num_agents + agent]
    }

    pub fn effective_bits(&self, step: usize, agent: usize) -> u64 {
        self.effective_bits[step * self.num_agents + agent]
    }

    pub fn duration(&self, step: usize, agent: usize) -> u64 {
        self.durations[step * self.num_agents + agent]
    }

    pub fn agent_actions(&self, agent: usize) -> Vec<ActionId> {
        (0..self.num_steps()).map(|t| self.action(t, agent)).collect()
    }

    pub fn agent_observations(&self, agent: usize) -> Vec<ObservationId> {
        (1..self.num_steps()).map(|t| self.observation(t, agent)).collect()
    }

    pub fn agent_behavior_probs(&self, agent: usize) -> Vec<f64> {
        (0..self.num_steps()).map(|t| self.behavior_prob(t, agent)).collect()
    }

    /// Rewards rebuilt from the stored per-agent bits and durations.
    pub fn recompute_rewards(&self, rate_mbps: f64) -> Result<Vec<f64>> {
        let mut rs = RewardState::new(self.num_agents, rate_mbps)?;
        (0..self.num_steps())
            .map(|t| {
                let steps: Vec<(u64, u64)> = (0..self.num_agents)
                    .map(|n| (self.effective_bits(t, n), self.duration(t, n)))
                    .collect();
                rs.apply_epoch(&steps)
            })
            .collect()
    }

    /// Mean over steps of the Jain index of the per-step normalized throughputs.
    pub fn mean_jain(&self, rate_mbps: f64) -> Result<f64> {
        let share = crate::model::fair_share(rate_mbps, self.num_agents)?;
        let mut total = 0.0;
        for t in 0..self.num_steps() {
            let x = (0..self.num_agents)
                .map(|n| crate::model::throughput(self.effective_bits(t, n), self.duration(t, n)).map(|th| th / share))
                .collect::<Result<Vec<_>>>()?;
            total += crate::model::jain_index(&x);
        }
        Ok(total / self.num_steps() as f64)
    }
}

/// Random stream for one episode of one collection round.
pub fn episode_rng(seed: u64, round: u64, episode: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&round.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(episode);
    rng
}

/// Runs one episode of `horizon + 1` synchronized contention epochs.
///
/// Each agent steps its own executed controller. The stored behavior
/// probability is `p(a_τ | a_{0:τ−1}, o_{1:τ})` under that controller, which
/// marginalizes the agent's hidden node.
pub fn run_episode(
    sim: &SimConfig,
    kinds: &[AgentKind],
    bin_edges: &[u64],
    behaviors: &[BehaviorPolicy],
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let n = kinds.len();
    if behaviors.len() != n {
        return Err(Error::InvalidInput(format!("{} behavior policies for {n} agents", behaviors.len())));
    }
    let mut rewards = RewardState::new(n, f64::from(sim.rate_mbps))?;
    let mut filters: Vec<_> = behaviors.iter().map(|b| b.executed().filter()).collect();
    let mut traj = Trajectory::new(n);
    let mut nodes = vec![0usize; n];
    let mut actions = vec![0usize; n];
    let mut obs: Vec<ObservationId> = vec![0; n];
    let mut probs = vec![0.0; n];

    for t in 0..=horizon {
        for i in 0..n {
            let (z, a) = if t == 0 {
                let (z, a, _) = behaviors[i].sample_start(rng);
                (z, a)
            } else {
                filters[i].advance(actions[i], obs[i])?;
                let (z, a, _) = behaviors[i].sample_episode_step(nodes[i], actions[i], obs[i], rng)?;
                (z, a)
            };
            nodes[i] = z;
            actions[i] = a;
            probs[i] = filters[i].condition(a)?;
        }
        let cws: Vec<u32> = actions.iter().map(|&a| sim.cw_set[a]).collect();
        let outcome = run_contention_epoch(sim, kinds, &cws, rng)?;
        let reward = rewards.apply_results(&outcome.results)?;
        traj.push_step(StepRecord {
            actions: actions.clone(),
            observations: (t > 0).then(|| obs.clone()),
            reward,
            behavior_probs: probs.clone(),
            effective_bits: outcome.results.iter().map(|r| r.effective_payload_bits).collect(),
            durations: outcome.results.iter().map(|r| r.total_duration_us).collect(),
        })?;
        for (o, r) in obs.iter_mut().zip(&outcome.results) {
            *o = bin_observation(r.wait_duration_us, bin_edges);
        }
    }
    Ok(traj)
}

/// Collects `episodes` episodes in parallel on `pool`. Episode `k` always
/// uses [`episode_rng`]`(seed, round, k)`, so the output does not depend on
/// the number of worker threads.
#[allow(clippy::too_many_arguments)]
pub fn collect_trajectories(
    sim: &SimConfig,
    bin_edges: &[u64],
    behaviors: &[BehaviorPolicy],
    episodes: usize,
    horizon: usize,
    seed: u64,
    round: u64,
    pool: &rayon::ThreadPool,
) -> Result<Vec<Trajectory>> {
    if episodes == 0 || horizon == 0 {
        return Err(Error::Config("episodes and horizon must be at least 1".into()));
    }
    let kinds = sim.roster();
    pool.install(|| {
        (0..episodes)
            .into_par_iter()
            .map(|k| {
                let mut rng = episode_rng(seed, round, k as u64);
                run_episode(sim, &kinds, bin_edges, behaviors, horizon, &mut rng)
            })
            .collect()
    })
}

fn join<T: std::fmt::Display>(s: &mut String, items: impl Iterator<Item = T>) {
    let mut first = true;
    for it in items {
        if !first {
            s.push(',');
        }
        first = false;
        let _ = write!(s, "{it}");
    }
}

pub fn trajectories_to_text(trajs: &[Trajectory]) -> Result<String> {
    let n = trajs.first().map_or(0, |t| t.num_agents);
    if trajs.iter().any(|t| t.num_agents != n) {
        return Err(Error::InvalidInput("trajectories differ in agent count".into()));
    }
    let mut s = format!("{HEADER_PREFIX}{n}\n{COLUMNS}\n");
    for (k, tr) in trajs.iter().enumerate() {
        for t in 0..tr.num_steps() {
            let _ = write!(s, "{k} {t} ");
            join(&mut s, (0..n).map(|i| tr.action(t, i)));
            s.push(' ');
            if t == 0 {
                s.push('-');
            } else {
                join(&mut s, (0..n).map(|i| tr.observation(t, i)));
            }
            let _ = write!(s, " {:.16e} ", tr.reward(t));
            join(&mut s, (0..n).map(|i| format!("{:.16e}", tr.behavior_prob(t, i))));
            s.push(' ');
            join(&mut s, (0..n).map(|i| tr.effective_bits(t, i)));
            s.push(' ');
            join(&mut s, (0..n).map(|i| tr.duration(t, i)));
            s.push('\n');
        }
    }
    Ok(s)
}

fn parse_list<T: std::str::FromStr>(tok: &str, n: usize, what: &str, origin: &str, line: usize) -> Result<Vec<T>> {
    let v = tok
        .split(',')
        .map(|x| x.parse::<T>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::parse(origin, line, format!("bad {what} list `{tok}`")))?;
    if v.len() != n {
        return Err(Error::parse(origin, line, format!("{what} list has {} entries, expected {n}", v.len())));
    }
    Ok(v)
}

pub fn trajectories_from_text(text: &str, origin: &str) -> Result<Vec<Trajectory>> {
    let mut lines = text.lines().enumerate();
    let n: usize = match lines.next() {
        Some((_, h)) => h
            .strip_prefix(HEADER_PREFIX)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::parse(origin, 1, "missing trajectory header"))?,
        None => return Err(Error::parse(origin, 1, "empty trajectory file")),
    };
    let mut out: Vec<Trajectory> = Vec::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 8 {
            return Err(Error::parse(origin, line_no, format!("expected 8 columns, found {}", toks.len())));
        }
        let bad = |what: &str| Error::parse(origin, line_no, format!("bad {what}"));
        let k: usize = toks[0].parse().map_err(|_| bad("episode"))?;
        let t: usize = toks[1].parse().map_err(|_| bad("step"))?;
        if k == out.len() && t == 0 {
            out.push(Trajectory::new(n));
        }
        let count = out.len();
        let tr = match out.last_mut() {
            Some(tr) if k + 1 == count && tr.num_steps() == t => tr,
            _ => return Err(Error::parse(origin, line_no, format!("record ({k}, {t}) out of order"))),
        };
        let observations = if toks[3] == "-" {
            None
        } else {
            Some(parse_list(toks[3], n, "observation", origin, line_no)?)
        };
        let step = StepRecord {
            actions: parse_list(toks[2], n, "action", origin, line_no)?,
            observations,
            reward: toks[4].parse().map_err(|_| bad("reward"))?,
            behavior_probs: parse_list(toks[5], n, "probability", origin, line_no)?,
            effective_bits: parse_list(toks[6], n, "effective-bits", origin, line_no)?,
            durations: parse_list(toks[7], n, "duration", origin, line_no)?,
        };
        tr.push_step(step).map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
    }
    Ok(out)
}

pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    std::fs::write(path, trajectories_to_text(trajs)?).map_err(|e| Error::io(path, e))
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trajectories_from_text(&text, &path.display().to_string())
}
