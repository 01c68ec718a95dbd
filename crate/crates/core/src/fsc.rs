//! Finite-state controllers: tables, sampling, history likelihoods,
//! ε-greedy behavior policies and data-driven initialization.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::config::EpsilonCurve;
use crate::error::{Error, Result};
use crate::model::{ActionId, ObservationId};
use crate::trajectory::Trajectory;

const ROW_TOLERANCE: f64 = 1e-12;

/// Controller `(η, π, ω)` over `num_nodes` nodes.
///
/// `omega` is laid out as `[i][a][o][j]`, i.e. the row for `(i, a, o)` is a
/// distribution over the next node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FscPolicy {
    num_nodes: usize,
    num_actions: usize,
    num_observations: usize,
    eta: Vec<f64>,
    pi: Vec<f64>,
    omega: Vec<f64>,
}

fn check_rows(name: &str, table: &[f64], width: usize) -> Result<()> {
    for (r, row) in table.chunks(width).enumerate() {
        if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} row {r} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::InvalidInput(format!("{name} row {r} sums to {s}")));
        }
    }
    Ok(())
}

fn normalize_rows(name: &str, table: &mut [f64], width: usize) -> Result<()> {
    for (r, row) in table.chunks_mut(width).enumerate() {
        let s: f64 = row.iter().sum();
        if !(s > 0.0) || !s.is_finite() || row.iter().any(|&v| v < 0.0) {
            return Err(Error::Numerical(format!("{name} row {r} cannot be normalized (sum {s})")));
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(())
}

impl FscPolicy {
    /// Builds a policy from row-stochastic tables.
    pub fn new(
        num_nodes: usize,
        num_actions: usize,
        num_observations: usize,
        eta: Vec<f64>,
        pi: Vec<f64>,
        omega: Vec<f64>,
    ) -> Result<Self> {
        let p = Self::shaped(num_nodes, num_actions, num_observations, eta, pi, omega)?;
        check_rows("eta", &p.eta, p.num_nodes)?;
        check_rows("pi", &p.pi, p.num_actions)?;
        check_rows("omega", &p.omega, p.num_nodes)?;
        Ok(p)
    }

    /// Builds a policy from nonnegative weights, normalizing every row.
    pub fn from_weights(
        num_nodes: usize,
        num_actions: usize,
        num_observations: usize,
        eta: Vec<f64>,
        pi: Vec<f64>,
        omega: Vec<f64>,
    ) -> Result<Self> {
        let mut p = Self::shaped(num_nodes, num_actions, num_observations, eta, pi, omega)?;
        normalize_rows("eta", &mut p.eta, num_nodes)?;
        normalize_rows("pi", &mut p.pi, num_actions)?;
        normalize_rows("omega", &mut p.omega, num_nodes)?;
        Ok(p)
    }

    fn shaped(
        num_nodes: usize,
        num_actions: usize,
        num_observations: usize,
        eta: Vec<f64>,
        pi: Vec<f64>,
        omega: Vec<f64>,
    ) -> Result<Self> {
        if num_nodes == 0 || num_actions == 0 || num_observations == 0 {
            return Err(Error::InvalidInput("controller dimensions must be positive".into()));
        }
        let want = (num_nodes, num_nodes * num_actions, num_nodes * num_actions * num_observations * num_nodes);
        if (eta.len(), pi.len(), omega.len()) != want {
            return Err(Error::InvalidInput(format!(
                "table sizes ({}, {}, {}) do not match dimensions {num_nodes}x{num_actions}x{num_observations}",
                eta.len(),
                pi.len(),
                omega.len()
            )));
        }
        Ok(Self {
            num_nodes,
            num_actions,
            num_observations,
            eta,
            pi,
            omega,
        })
    }

    /// Uniform tables everywhere.
    pub fn uniform(num_nodes: usize, num_actions: usize, num_observations: usize) -> Result<Self> {
        Self::from_weights(
            num_nodes,
            num_actions,
            num_observations,
            vec![1.0; num_nodes],
            vec![1.0; num_nodes * num_actions],
            vec![1.0; num_nodes * num_actions * num_observations * num_nodes],
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_observations(&self) -> usize {
        self.num_observations
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn pi_row(&self, node: usize) -> &[f64] {
        &self.pi[node * self.num_actions..(node + 1) * self.num_actions]
    }

    pub fn omega_row(&self, node: usize, action: ActionId, obs: ObservationId) -> &[f64] {
        let start = ((node * self.num_actions + action) * self.num_observations + obs) * self.num_nodes;
        &self.omega[start..start + self.num_nodes]
    }

    /// Same controller with `π` replaced by `(1−ε)π + ε/|A|`.
    pub fn mixed(&self, epsilon: f64) -> Self {
        let floor = epsilon / self.num_actions as f64;
        let mut out = self.clone();
        out.pi.iter_mut().for_each(|p| *p = (1.0 - epsilon) * *p + floor);
        out
    }

    fn check_indices(&self, node: usize, action: ActionId, obs: ObservationId) -> Result<()> {
        if node >= self.num_nodes || action >= self.num_actions || obs >= self.num_observations {
            return Err(Error::InvalidInput(format!(
                "index out of range: node {node}, action {action}, observation {obs}"
            )));
        }
        Ok(())
    }

    /// Draws the start node and the first action.
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, ActionId, f64) {
        let node = sample_index(&self.eta, rng);
        let row = self.pi_row(node);
        let action = sample_index(row, rng);
        (node, action, row[action])
    }

    /// Moves to `z' ~ ω(·|z,a,o)` and draws `a' ~ π(·|z')`. The returned
    /// probability is `π(a'|z')`.
    pub fn sample_episode_step<R: Rng + ?Sized>(
        &self,
        node: usize,
        last_action: ActionId,
        obs: ObservationId,
        rng: &mut R,
    ) -> Result<(usize, ActionId, f64)> {
        self.check_indices(node, last_action, obs)?;
        let next = sample_index(self.omega_row(node, last_action, obs), rng);
        let row = self.pi_row(next);
        let action = sample_index(row, rng);
        Ok((next, action, row[action]))
    }

    /// Filter tracking the node posterior along one history.
    pub fn filter(&self) -> HistoryFilter<'_> {
        HistoryFilter {
            policy: self,
            belief: self.eta.clone(),
            scratch: vec![0.0; self.num_nodes],
        }
    }

    /// `p(a_τ | a_{0:τ−1}, o_{1:τ})` for every τ, by forward filtering.
    pub fn action_conditionals(&self, actions: &[ActionId], observations: &[ObservationId]) -> Result<Vec<f64>> {
        check_history(actions, observations)?;
        let mut f = self.filter();
        let mut out = Vec::with_capacity(actions.len());
        for (tau, &a) in actions.iter().enumerate() {
            if tau > 0 {
                f.advance(actions[tau - 1], observations[tau - 1])?;
            }
            out.push(f.condition(a)?);
        }
        Ok(out)
    }

    /// `ln p(a_{0:t} | o_{1:t})` under this controller; `-∞` for impossible histories.
    pub fn history_log_likelihood(&self, actions: &[ActionId], observations: &[ObservationId]) -> Result<f64> {
        Ok(self
            .action_conditionals(actions, observations)?
            .iter()
            .map(|p| p.ln())
            .sum())
    }

    /// `p(a_{0:t} | o_{1:t})`, summed over node paths by forward recursion.
    pub fn history_likelihood(&self, actions: &[ActionId], observations: &[ObservationId]) -> Result<f64> {
        check_history(actions, observations)?;
        let z = self.num_nodes;
        let mut alpha: Vec<f64> = (0..z).map(|i| self.eta[i] * self.pi_row(i)[actions[0]]).collect();
        let mut next = vec![0.0; z];
        for tau in 1..actions.len() {
            let (a_prev, o, a) = (actions[tau - 1], observations[tau - 1], actions[tau]);
            next.iter_mut().for_each(|v| *v = 0.0);
            for (i, &ai) in alpha.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                for (nj, &w) in next.iter_mut().zip(self.omega_row(i, a_prev, o)) {
                    *nj += ai * w;
                }
            }
            for (j, v) in next.iter_mut().enumerate() {
                *v *= self.pi_row(j)[a];
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        Ok(alpha.iter().sum())
    }

    /// Plain-text serialization, 17 significant digits per entry.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fsc v1");
        let _ = writeln!(
            s,
            "nodes {} actions {} observations {}",
            self.num_nodes, self.num_actions, self.num_observations
        );
        let _ = writeln!(s, "eta");
        write_row(&mut s, &self.eta);
        let _ = writeln!(s, "pi");
        for row in self.pi.chunks(self.num_actions) {
            write_row(&mut s, row);
        }
        let _ = writeln!(s, "omega");
        for row in self.omega.chunks(self.num_nodes) {
            write_row(&mut s, row);
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut r = SectionReader::new(text, origin);
        r.expect_line("fsc v1")?;
        let dims = r.dims(&["nodes", "actions", "observations"])?;
        let (z, a, o) = (dims[0], dims[1], dims[2]);
        r.expect_line("eta")?;
        let eta = r.rows(1, z)?;
        r.expect_line("pi")?;
        let pi = r.rows(z, a)?;
        r.expect_line("omega")?;
        let omega = r.rows(z * a * o, z)?;
        r.finish()?;
        Self::new(z, a, o, eta, pi, omega).map_err(|e| Error::parse(origin, 0, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

fn check_history(actions: &[ActionId], observations: &[ObservationId]) -> Result<()> {
    if actions.is_empty() || observations.len() + 1 != actions.len() {
        return Err(Error::InvalidInput(format!(
            "history needs t+1 actions and t observations, got {} and {}",
            actions.len(),
            observations.len()
        )));
    }
    Ok(())
}

pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    if weights.len() == 1 {
        return 0;
    }
    WeightedIndex::new(weights)
        .expect("distribution rows are validated on construction")
        .sample(rng)
}

pub(crate) fn write_row(s: &mut String, row: &[f64]) {
    let mut first = true;
    for v in row {
        if !first {
            s.push(' ');
        }
        first = false;
        let _ = write!(s, "{v:.16e}");
    }
    s.push('\n');
}

/// Line-oriented reader shared by the controller and variational-state formats.
pub(crate) struct SectionReader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    origin: &'a str,
    line_no: usize,
}

impl<'a> SectionReader<'a> {
    pub(crate) fn new(text: &'a str, origin: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate().peekable(),
            origin,
            line_no: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.origin, self.line_no, msg)
    }

    fn next_line(&mut self) -> Result<&'a str> {
        for (i, line) in self.lines.by_ref() {
            self.line_no = i + 1;
            let t = line.trim();
            if !t.is_empty() {
                return Ok(t);
            }
        }
        Err(Error::parse(self.origin, self.line_no + 1, "unexpected end of file"))
    }

    pub(crate) fn expect_line(&mut self, want: &str) -> Result<()> {
        let got = self.next_line()?;
        if got != want {
            return Err(self.err(format!("expected `{want}`, found `{got}`")));
        }
        Ok(())
    }

    /// Parses `key1 v1 key2 v2 ...`.
    pub(crate) fn dims(&mut self, keys: &[&str]) -> Result<Vec<usize>> {
        let line = self.next_line()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 * keys.len() {
            return Err(self.err(format!("expected {} dimension pairs", keys.len())));
        }
        keys.iter()
            .enumerate()
            .map(|(i, k)| {
                if toks[2 * i] != *k {
                    return Err(self.err(format!("expected `{k}`, found `{}`", toks[2 * i])));
                }
                toks[2 * i + 1]
                    .parse::<usize>()
                    .map_err(|e| self.err(format!("bad {k}: {e}")))
            })
            .collect()
    }

    pub(crate) fn rows(&mut self, count: usize, width: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count * width);
        for _ in 0..count {
            let line = self.next_line()?;
            let before = out.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| self.err(format!("bad number `{tok}`")))?;
                out.push(v);
            }
            if out.len() - before != width {
                return Err(self.err(format!("expected {width} values, found {}", out.len() - before)));
            }
        }
        Ok(out)
    }

    pub(crate) fn finish(&mut self) -> Result<()> {
        match self.next_line() {
            Ok(extra) => Err(self.err(format!("trailing content `{extra}`"))),
            Err(_) => Ok(()),
        }
    }
}

/// Node posterior along one history.
#[derive(Debug, Clone)]
pub struct HistoryFilter<'a> {
    policy: &'a FscPolicy,
    belief: Vec<f64>,
    scratch: Vec<f64>,
}

impl HistoryFilter<'_> {
    /// Predictive probability of `action` at the current step.
    pub fn action_prob(&self, action: ActionId) -> f64 {
        self.belief
            .iter()
            .enumerate()
            .map(|(i, b)| b * self.policy.pi_row(i)[action])
            .sum()
    }

    /// Returns the predictive probability of `action` and conditions on it.
    pub fn condition(&mut self, action: ActionId) -> Result<f64> {
        if action >= self.policy.num_actions {
            return Err(Error::InvalidInput(format!("action {action} out of range")));
        }
        let p = self.action_prob(action);
        if p > 0.0 {
            for (i, b) in self.belief.iter_mut().enumerate() {
                *b *= self.policy.pi_row(i)[action] / p;
            }
        } else {
            self.belief.iter_mut().for_each(|b| *b = 0.0);
        }
        Ok(p)
    }

    /// Propagates the posterior through `ω(·|z, action, obs)`.
    pub fn advance(&mut self, action: ActionId, obs: ObservationId) -> Result<()> {
        self.policy.check_indices(0, action, obs)?;
        self.scratch.iter_mut().for_each(|v| *v = 0.0);
        for (i, &b) in self.belief.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (s, &w) in self.scratch.iter_mut().zip(self.policy.omega_row(i, action, obs)) {
                *s += b * w;
            }
        }
        std::mem::swap(&mut self.belief, &mut self.scratch);
        Ok(())
    }
}

/// ε-greedy wrapper around a controller.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorPolicy {
    base: FscPolicy,
    epsilon: f64,
    mixed: FscPolicy,
}

impl BehaviorPolicy {
    pub fn new(base: FscPolicy, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidInput(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let mixed = base.mixed(epsilon);
        Ok(Self { base, epsilon, mixed })
    }

    /// One-node controller choosing every action with equal probability.
    pub fn uniform(num_actions: usize, num_observations: usize) -> Result<Self> {
        Self::new(FscPolicy::uniform(1, num_actions, num_observations)?, 1.0)
    }

    pub fn base(&self) -> &FscPolicy {
        &self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// The controller actually executed: `π` mixed with the uniform floor.
    pub fn executed(&self) -> &FscPolicy {
        &self.mixed
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, ActionId, f64) {
        self.mixed.sample_start(rng)
    }

    pub fn sample_episode_step<R: Rng + ?Sized>(
        &self,
        node: usize,
        last_action: ActionId,
        obs: ObservationId,
        rng: &mut R,
    ) -> Result<(usize, ActionId, f64)> {
        self.mixed.sample_episode_step(node, last_action, obs, rng)
    }
}

/// Exploration rate decaying from `start` to `end` over `total_iters`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub curve: EpsilonCurve,
    pub start: f64,
    pub end: f64,
    pub total_iters: usize,
}

impl EpsilonSchedule {
    pub fn epsilon_at(&self, iter: usize) -> f64 {
        if iter >= self.total_iters {
            return self.end;
        }
        let frac = iter as f64 / self.total_iters as f64;
        match self.curve {
            EpsilonCurve::Linear => self.start - (self.start - self.end) * frac,
            EpsilonCurve::Exponential => self.start * (self.end / self.start).powf(frac),
        }
    }
}

/// Builds an initial controller for agent `agent` from recorded episodes.
///
/// Each step τ ≥ 1 is labelled with its signature `(a_{τ−1}, o_τ)`. The `cap`
/// most frequent signatures (ties by signature order) each get a node; rarer
/// ones share the last node. Step 0 sits in node 0. Tables are the
/// `smoothing`-smoothed transition and emission counts under that labelling.
pub fn init_fsc_from_trajectories(
    episodes: &[Trajectory],
    agent: usize,
    cap: usize,
    num_actions: usize,
    num_observations: usize,
    smoothing: f64,
) -> Result<FscPolicy> {
    if episodes.is_empty() {
        return Err(Error::Config("cannot initialize a controller from zero episodes".into()));
    }
    if cap == 0 {
        return Err(Error::Config("truncation cap must be at least 1".into()));
    }
    if !(smoothing > 0.0) {
        return Err(Error::Config("initialization smoothing must be positive".into()));
    }
    let mut freq: HashMap<(ActionId, ObservationId), usize> = HashMap::new();
    for ep in episodes {
        if agent >= ep.num_agents() {
            return Err(Error::InvalidInput(format!("agent {agent} not in trajectory")));
        }
        for tau in 1..ep.num_steps() {
            *freq.entry((ep.action(tau - 1, agent), ep.observation(tau, agent))).or_default() += 1;
        }
    }
    let mut ranked: Vec<_> = freq.into_iter().collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    let z = ranked.len().clamp(1, cap);
    let node_of: HashMap<_, _> = ranked
        .iter()
        .enumerate()
        .map(|(rank, (sig, _))| (*sig, rank.min(z - 1)))
        .collect();

    let (a_n, o_n) = (num_actions, num_observations);
    let mut eta = vec![smoothing; z];
    let mut pi = vec![smoothing; z * a_n];
    let mut omega = vec![smoothing; z * a_n * o_n * z];
    for ep in episodes {
        let mut prev = 0usize;
        eta[0] += 1.0;
        for tau in 0..ep.num_steps() {
            let a = ep.action(tau, agent);
            if a >= a_n {
                return Err(Error::InvalidInput(format!("action {a} out of range")));
            }
            let node = if tau == 0 {
                0
            } else {
                let a_prev = ep.action(tau - 1, agent);
                let o = ep.observation(tau, agent);
                if o >= o_n {
                    return Err(Error::InvalidInput(format!("observation {o} out of range")));
                }
                let j = node_of[&(a_prev, o)];
                omega[((prev * a_n + a_prev) * o_n + o) * z + j] += 1.0;
                j
            };
            pi[node * a_n + a] += 1.0;
            prev = node;
        }
    }
    FscPolicy::from_weights(z, a_n, o_n, eta, pi, omega)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_policy(z: usize, a: usize, o: usize, rng: &mut ChaCha8Rng) -> FscPolicy {
        let mut draw = |n: usize| (0..n).map(|_| rng.random::<f64>() + 0.05).collect::<Vec<_>>();
        let eta = draw(z);
        let pi = draw(z * a);
        let omega = draw(z * a * o * z);
        FscPolicy::from_weights(z, a, o, eta, pi, omega).unwrap()
    }

    pub(crate) fn random_history(t: usize, a: usize, o: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
        let actions = (0..=t).map(|_| rng.random_range(0..a)).collect();
        let obs = (0..t).map(|_| rng.random_range(0..o)).collect();
        (actions, obs)
    }

    /// Sum over every node path.
    fn enumerate_likelihood(p: &FscPolicy, actions: &[usize], obs: &[usize]) -> f64 {
        let z = p.num_nodes();
        let len = actions.len();
        let mut total = 0.0;
        for code in 0..z.pow(len as u32) {
            let path: Vec<usize> = (0..len).map(|k| (code / z.pow(k as u32)) % z).collect();
            let mut w = p.eta()[path[0]] * p.pi_row(path[0])[actions[0]];
            for tau in 1..len {
                w *= p.omega_row(path[tau - 1], actions[tau - 1], obs[tau - 1])[path[tau]]
                    * p.pi_row(path[tau])[actions[tau]];
            }
            total += w;
        }
        total
    }

    #[test]
    fn two_node_three_step_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = random_policy(2, 7, 3, &mut rng);
        let (a, o) = random_history(3, 7, 3, &mut rng);
        let fwd = p.history_likelihood(&a, &o).unwrap();
        assert!((fwd - enumerate_likelihood(&p, &a, &o)).abs() < 1e-12);
    }

    #[test]
    fn single_node_is_product_of_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_policy(1, 4, 2, &mut rng);
        let (a, o) = random_history(5, 4, 2, &mut rng);
        let want: f64 = a.iter().map(|&x| p.pi_row(0)[x]).product();
        assert!((p.history_likelihood(&a, &o).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn uniform_pi_gives_power_of_inverse_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = random_policy(3, 7, 4, &mut rng);
        p.pi.iter_mut().for_each(|v| *v = 1.0 / 7.0);
        let (a, o) = random_history(6, 7, 4, &mut rng);
        let want = (1.0f64 / 7.0).powi(7);
        assert!((p.history_likelihood(&a, &o).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn single_node_always_stays_put() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_policy(1, 7, 3, &mut rng);
        for _ in 0..50 {
            let (z, _, _) = p.sample_episode_step(0, rng.random_range(0..7), rng.random_range(0..3), &mut rng).unwrap();
            assert_eq!(z, 0);
        }
    }

    #[test]
    fn deterministic_controller_is_determined() {
        let (z, a, o) = (2, 3, 2);
        let eta = vec![1.0, 0.0];
        let pi = vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let mut omega = vec![0.0; z * a * o * z];
        for i in 0..z {
            for act in 0..a {
                for obs in 0..o {
                    omega[((i * a + act) * o + obs) * z + obs] = 1.0;
                }
            }
        }
        let p = FscPolicy::new(z, a, o, eta, pi, omega).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(p.sample_start(&mut rng), (0, 1, 1.0));
        assert_eq!(p.sample_episode_step(0, 1, 1, &mut rng).unwrap(), (1, 2, 1.0));
        assert_eq!(p.sample_episode_step(1, 2, 0, &mut rng).unwrap(), (0, 1, 1.0));
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = BehaviorPolicy::new(random_policy(3, 7, 2, &mut rng), 1.0).unwrap();
        for _ in 0..20 {
            let (_, _, p) = b.sample_episode_step(1, 0, 1, &mut rng).unwrap();
            assert!((p - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_step_is_rejected() {
        let p = FscPolicy::uniform(2, 3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(p.sample_episode_step(2, 0, 0, &mut rng).is_err());
        assert!(p.sample_episode_step(0, 3, 0, &mut rng).is_err());
        assert!(p.sample_episode_step(0, 0, 2, &mut rng).is_err());
    }

    #[test]
    fn epsilon_schedule_examples() {
        let lin = EpsilonSchedule {
            curve: EpsilonCurve::Linear,
            start: 0.9,
            end: 0.2,
            total_iters: 50,
        };
        assert_eq!(lin.epsilon_at(0), 0.9);
        assert!((lin.epsilon_at(50) - 0.2).abs() < 1e-15);
        assert_eq!(lin.epsilon_at(80), 0.2);
        let exp = EpsilonSchedule {
            curve: EpsilonCurve::Exponential,
            ..lin
        };
        assert!((exp.epsilon_at(25) - (0.9f64 * 0.2).sqrt()).abs() < 1e-12);
        assert!((exp.epsilon_at(25) - 0.4243).abs() < 1e-4);
        let mut prev = f64::INFINITY;
        for i in 0..=50 {
            for s in [lin, exp] {
                assert!(s.epsilon_at(i) <= 0.9 + 1e-15);
            }
            assert!(exp.epsilon_at(i) <= prev);
            prev = exp.epsilon_at(i);
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_policy(3, 7, 4, &mut rng);
        let back = FscPolicy::from_text(&p.to_text(), "mem").unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn malformed_text_reports_line() {
        let p = FscPolicy::uniform(1, 2, 1).unwrap();
        let text = p.to_text().replace("pi\n", "pi\nnot a number\n");
        match FscPolicy::from_text(&text, "f.fsc") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn forward_matches_enumeration(seed in any::<u64>(), z in 1usize..=3, t in 0usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_policy(z, 4, 3, &mut rng);
            let (a, o) = random_history(t, 4, 3, &mut rng);
            let fwd = p.history_likelihood(&a, &o).unwrap();
            let brute = enumerate_likelihood(&p, &a, &o);
            prop_assert!((fwd - brute).abs() < 1e-10 * brute.max(1e-300).max(1.0));
            prop_assert!(fwd > 0.0 && fwd <= 1.0);
        }

        #[test]
        fn conditionals_telescope(seed in any::<u64>(), z in 1usize..=4, t in 0usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_policy(z, 5, 3, &mut rng);
            let (a, o) = random_history(t, 5, 3, &mut rng);
            let prod: f64 = p.action_conditionals(&a, &o).unwrap().iter().product();
            let joint = p.history_likelihood(&a, &o).unwrap();
            prop_assert!((prod - joint).abs() <= 1e-10 * joint);
        }

        #[test]
        fn behavior_probabilities_have_floor(seed in any::<u64>(), eps in 0.01f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = BehaviorPolicy::new(random_policy(3, 7, 2, &mut rng), eps).unwrap();
            let (a, o) = random_history(6, 7, 2, &mut rng);
            for p in b.executed().action_conditionals(&a, &o).unwrap() {
                prop_assert!(p >= eps / 7.0 - 1e-15);
            }
            for row in b.executed().pi().chunks(7) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
