//! Variational posterior and its closed-form coordinate updates.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::config::PriorHyperparams;
use crate::error::{Error, Result};
use crate::fsc::{write_row, FscPolicy, SectionReader};
use crate::model::{ActionId, ObservationId};
use crate::special::digamma_unchecked as psi;
use crate::trajectory::Trajectory;

use super::messages::{forward, Forward, SufficientStats};
use super::sticks::{expected_log_sticks, ExpectedLogs, PointEstimate};
use super::value::{behavior_log_prefix, nu_weights, reward_range};

/// Stick fractions taken from an initial controller are kept inside this margin.
const STICK_CLAMP: f64 = 1e-3;

/// Mean-field posterior for one agent.
///
/// * `q(u_i) = Beta(δ_i, µ_i)` for the node-start sticks,
/// * `q(V_{iao,j}) = Beta(σ, λ)` for the transition sticks, layout `[i][a][o][j]`,
/// * `q(π_i) = Dirichlet(φ_i)`,
/// * `q(ρ) = Gamma(g, h)` and `q(α_{iao}) = Gamma(a, b)` (shape, rate).
///
/// The last stick of every truncated stick-breaking sequence takes the
/// leftover mass, so its own `u` / `V` never enters the likelihood; its
/// optimal factor is `Beta(1, E[ρ])` (resp. `Beta(1, E[α])`).
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    num_nodes: usize,
    num_actions: usize,
    num_observations: usize,
    delta: Vec<f64>,
    mu: Vec<f64>,
    phi: Vec<f64>,
    sigma: Vec<f64>,
    lambda: Vec<f64>,
    g: f64,
    h: f64,
    alpha_shape: Vec<f64>,
    alpha_rate: Vec<f64>,
}

impl VariationalState {
    /// Flat Beta(1,1) sticks, `φ = θ`, and Gamma factors at their data-free optimum shapes.
    pub fn uniform(num_nodes: usize, num_actions: usize, num_observations: usize, priors: &PriorHyperparams) -> Self {
        let rows = num_nodes * num_actions * num_observations;
        let z = num_nodes as f64;
        Self {
            num_nodes,
            num_actions,
            num_observations,
            delta: vec![1.0; num_nodes],
            mu: vec![1.0; num_nodes],
            phi: vec![priors.theta; num_nodes * num_actions],
            sigma: vec![1.0; rows * num_nodes],
            lambda: vec![1.0; rows * num_nodes],
            g: priors.e + z,
            h: priors.f,
            alpha_shape: vec![priors.c + z; rows],
            alpha_rate: vec![priors.d; rows],
        }
    }

    /// Posterior centred on `policy`: stick fractions `v` become
    /// `Beta(1 + κv, 1 + κ(1−v))` and `φ = θ + κπ`.
    pub fn from_policy(policy: &FscPolicy, priors: &PriorHyperparams, kappa: f64) -> Self {
        let (z, a, o) = (policy.num_nodes(), policy.num_actions(), policy.num_observations());
        let mut s = Self::uniform(z, a, o, priors);
        let fractions = |w: &[f64]| {
            let mut rest = 1.0;
            w.iter()
                .map(|&x| {
                    let v = if rest > 0.0 { x / rest } else { 0.5 };
                    rest -= x;
                    v.clamp(STICK_CLAMP, 1.0 - STICK_CLAMP)
                })
                .collect::<Vec<_>>()
        };
        for (i, v) in fractions(policy.eta()).into_iter().enumerate().take(z - 1) {
            s.delta[i] = 1.0 + kappa * v;
            s.mu[i] = 1.0 + kappa * (1.0 - v);
        }
        for (row, w) in policy.omega().chunks(z).enumerate() {
            for (j, v) in fractions(w).into_iter().enumerate().take(z - 1) {
                s.sigma[row * z + j] = 1.0 + kappa * v;
                s.lambda[row * z + j] = 1.0 + kappa * (1.0 - v);
            }
        }
        for (p, &pi) in s.phi.iter_mut().zip(policy.pi()) {
            *p += kappa * pi;
        }
        s.set_leftover_sticks();
        s
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

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn phi_mut(&mut self) -> &mut [f64] {
        &mut self.phi
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Gamma shapes `a_{iao}`, layout `[i][a][o]`.
    pub fn alpha_shape(&self) -> &[f64] {
        &self.alpha_shape
    }

    /// Gamma rates `b_{iao}`, layout `[i][a][o]`.
    pub fn alpha_rate(&self) -> &[f64] {
        &self.alpha_rate
    }

    fn rows(&self) -> usize {
        self.num_nodes * self.num_actions * self.num_observations
    }

    /// Last sticks sit at `Beta(1, E[ρ])` / `Beta(1, E[α])`.
    fn set_leftover_sticks(&mut self) {
        let z = self.num_nodes;
        self.delta[z - 1] = 1.0;
        self.mu[z - 1] = self.g / self.h;
        for r in 0..self.rows() {
            self.sigma[r * z + z - 1] = 1.0;
            self.lambda[r * z + z - 1] = self.alpha_shape[r] / self.alpha_rate[r];
        }
    }

    /// `δ_i = 1 + N_i`, `µ_i = E[ρ] + Σ_{m>i} N_m` with `N` the start counts.
    pub fn update_eta_sticks(&mut self, stats: &SufficientStats) {
        let z = self.num_nodes;
        let e_rho = self.g / self.h;
        let mut tail = 0.0;
        for i in (0..z).rev() {
            if i + 1 == z {
                self.delta[i] = 1.0;
            } else {
                self.delta[i] = 1.0 + stats.start[i];
            }
            self.mu[i] = e_rho + tail;
            tail += stats.start[i];
        }
    }

    /// `φ_{ia} = θ + Σ q(z_τ = i) 𝕀(a_τ = a)`.
    pub fn update_pi(&mut self, stats: &SufficientStats, priors: &PriorHyperparams) {
        for (p, &n) in self.phi.iter_mut().zip(&stats.emit) {
            *p = priors.theta + n;
        }
    }

    /// `σ = 1 + T_{iao,j}`, `λ = E[α_{iao}] + Σ_{m>j} T_{iao,m}`.
    pub fn update_omega_sticks(&mut self, stats: &SufficientStats) {
        let z = self.num_nodes;
        for r in 0..self.rows() {
            let e_alpha = self.alpha_shape[r] / self.alpha_rate[r];
            let counts = &stats.trans[r * z..(r + 1) * z];
            let mut tail = 0.0;
            for j in (0..z).rev() {
                self.sigma[r * z + j] = if j + 1 == z { 1.0 } else { 1.0 + counts[j] };
                self.lambda[r * z + j] = e_alpha + tail;
                tail += counts[j];
            }
        }
    }

    /// `g = e + |Z|`, `h = f − Σ_i E[ln(1 − u_i)]`.
    pub fn update_rho(&mut self, priors: &PriorHyperparams) {
        self.g = priors.e + self.num_nodes as f64;
        self.h = priors.f
            - self
                .delta
                .iter()
                .zip(&self.mu)
                .map(|(&d, &m)| psi(m) - psi(d + m))
                .sum::<f64>();
    }

    /// `a = c + |Z|`, `b = d − Σ_j E[ln(1 − V_{iao,j})]`.
    pub fn update_alpha(&mut self, priors: &PriorHyperparams) {
        let z = self.num_nodes;
        let shape = priors.c + z as f64;
        for r in 0..self.rows() {
            let s = &self.sigma[r * z..(r + 1) * z];
            let l = &self.lambda[r * z..(r + 1) * z];
            self.alpha_shape[r] = shape;
            self.alpha_rate[r] = priors.d - s.iter().zip(l).map(|(&s, &l)| psi(l) - psi(s + l)).sum::<f64>();
        }
    }

    /// All five blocks in order: sticks of `η`, `π`, sticks of `ω`, `ρ`, `α`.
    pub fn apply_updates(&mut self, stats: &SufficientStats, priors: &PriorHyperparams) -> Result<()> {
        self.update_eta_sticks(stats);
        self.update_pi(stats, priors);
        self.update_omega_sticks(stats);
        self.update_rho(priors);
        self.update_alpha(priors);
        self.check_positive()
    }

    pub fn check_positive(&self) -> Result<()> {
        let all = self
            .delta
            .iter()
            .chain(&self.mu)
            .chain(&self.phi)
            .chain(&self.sigma)
            .chain(&self.lambda)
            .chain(&self.alpha_shape)
            .chain(&self.alpha_rate)
            .chain([&self.g, &self.h]);
        for &v in all {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "variational parameter became {v}; messages probably underflowed"
                )));
            }
        }
        Ok(())
    }

    /// Keeps the nodes in `keep` (sorted, containing 0) and refreshes the
    /// leftover sticks and both Gamma factors for the smaller truncation.
    pub fn restrict(&self, keep: &[usize], priors: &PriorHyperparams) -> Self {
        let (z, a, o) = (self.num_nodes, self.num_actions, self.num_observations);
        let nz = keep.len();
        let mut s = Self::uniform(nz, a, o, priors);
        for (ni, &i) in keep.iter().enumerate() {
            s.delta[ni] = self.delta[i];
            s.mu[ni] = self.mu[i];
            s.phi[ni * a..(ni + 1) * a].copy_from_slice(&self.phi[i * a..(i + 1) * a]);
            for act in 0..a {
                for obs in 0..o {
                    let old_row = (i * a + act) * o + obs;
                    let new_row = (ni * a + act) * o + obs;
                    s.alpha_shape[new_row] = self.alpha_shape[old_row];
                    s.alpha_rate[new_row] = self.alpha_rate[old_row];
                    for (nj, &j) in keep.iter().enumerate() {
                        s.sigma[new_row * nz + nj] = self.sigma[old_row * z + j];
                        s.lambda[new_row * nz + nj] = self.lambda[old_row * z + j];
                    }
                }
            }
        }
        s.g = self.g;
        s.h = self.h;
        s.set_leftover_sticks();
        s.update_rho(priors);
        s.update_alpha(priors);
        s.set_leftover_sticks();
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vstate v1");
        let _ = writeln!(
            s,
            "nodes {} actions {} observations {}",
            self.num_nodes, self.num_actions, self.num_observations
        );
        let _ = writeln!(s, "rho");
        write_row(&mut s, &[self.g, self.h]);
        let _ = writeln!(s, "delta_mu");
        write_row(&mut s, &self.delta);
        write_row(&mut s, &self.mu);
        let _ = writeln!(s, "phi");
        for row in self.phi.chunks(self.num_actions) {
            write_row(&mut s, row);
        }
        let _ = writeln!(s, "alpha");
        write_row(&mut s, &self.alpha_shape);
        write_row(&mut s, &self.alpha_rate);
        let _ = writeln!(s, "sigma");
        for row in self.sigma.chunks(self.num_nodes) {
            write_row(&mut s, row);
        }
        let _ = writeln!(s, "lambda");
        for row in self.lambda.chunks(self.num_nodes) {
            write_row(&mut s, row);
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut r = SectionReader::new(text, origin);
        r.expect_line("vstate v1")?;
        let d = r.dims(&["nodes", "actions", "observations"])?;
        let (z, a, o) = (d[0], d[1], d[2]);
        if z == 0 || a == 0 || o == 0 {
            return Err(Error::parse(origin, 2, "dimensions must be positive"));
        }
        let rows = z * a * o;
        r.expect_line("rho")?;
        let gh = r.rows(1, 2)?;
        r.expect_line("delta_mu")?;
        let delta = r.rows(1, z)?;
        let mu = r.rows(1, z)?;
        r.expect_line("phi")?;
        let phi = r.rows(z, a)?;
        r.expect_line("alpha")?;
        let alpha_shape = r.rows(1, rows)?;
        let alpha_rate = r.rows(1, rows)?;
        r.expect_line("sigma")?;
        let sigma = r.rows(rows, z)?;
        r.expect_line("lambda")?;
        let lambda = r.rows(rows, z)?;
        r.finish()?;
        let s = Self {
            num_nodes: z,
            num_actions: a,
            num_observations: o,
            delta,
            mu,
            phi,
            sigma,
            lambda,
            g: gh[0],
            h: gh[1],
            alpha_shape,
            alpha_rate,
        };
        s.check_positive().map_err(|e| Error::parse(origin, 0, e.to_string()))?;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

/// A collected batch with per-agent histories split out once.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub trajectories: &'a [Trajectory],
    /// `histories[n][k]`: actions and observations of agent `n` in episode `k`.
    histories: Vec<Vec<(Vec<ActionId>, Vec<ObservationId>)>>,
    log_behavior: Vec<Vec<f64>>,
}

impl<'a> Batch<'a> {
    pub fn new(trajectories: &'a [Trajectory]) -> Result<Self> {
        let n = trajectories
            .first()
            .ok_or_else(|| Error::InvalidInput("empty trajectory batch".into()))?
            .num_agents();
        if trajectories.iter().any(|t| t.num_agents() != n) {
            return Err(Error::InvalidInput("episodes differ in agent count".into()));
        }
        let histories = (0..n)
            .map(|i| {
                trajectories
                    .iter()
                    .map(|t| (t.agent_actions(i), t.agent_observations(i)))
                    .collect()
            })
            .collect();
        Ok(Self {
            trajectories,
            histories,
            log_behavior: trajectories.iter().map(behavior_log_prefix).collect(),
        })
    }

    pub fn num_agents(&self) -> usize {
        self.histories.len()
    }

    pub fn num_episodes(&self) -> usize {
        self.trajectories.len()
    }

    pub fn history(&self, agent: usize, episode: usize) -> (&[ActionId], &[ObservationId]) {
        let (a, o) = &self.histories[agent][episode];
        (a, o)
    }
}

/// Everything one sweep holds fixed: the point estimate it started from, the
/// reweighted node marginals and the constants they contribute to the bound.
#[derive(Debug, Clone)]
pub struct SweepContext {
    pub r_min: f64,
    pub r_max: f64,
    pub log_value: f64,
    pub nu: Vec<Vec<f64>>,
    /// Per agent, counts already carrying the `ν̃ / K` weights.
    pub stats: Vec<SufficientStats>,
    /// `(1/K) Σ ν̃ ln r̃`.
    pub reward_term: f64,
    /// Per agent: the `q(z)` entropy plus the part of its expected complete-data
    /// log-likelihood that does not depend on `q(Θ)`.
    pub node_terms: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ counts · E[ln Θ]` for one agent.
pub fn expected_complete_log_likelihood(logs: &ExpectedLogs, stats: &SufficientStats) -> f64 {
    dot(&stats.start, &logs.eta) + dot(&stats.emit, &logs.pi) + dot(&stats.trans, &logs.omega)
}

/// Computes `Θ̃`, the reward weights and the aggregated node marginals for
/// the current posterior.
pub fn prepare_sweep(
    states: &[VariationalState],
    batch: &Batch<'_>,
    gamma: f64,
    pool: &rayon::ThreadPool,
) -> Result<SweepContext> {
    let n_agents = batch.num_agents();
    let k_eps = batch.num_episodes();
    if states.len() != n_agents {
        return Err(Error::InvalidInput(format!("{} states for {n_agents} agents", states.len())));
    }
    let logs: Vec<ExpectedLogs> = states.iter().map(expected_log_sticks).collect();
    let points: Vec<PointEstimate> = states.iter().zip(&logs).map(|(s, l)| PointEstimate::from_logs(s, l)).collect();

    let forwards: Vec<Forward> = pool.install(|| {
        (0..n_agents * k_eps)
            .into_par_iter()
            .map(|idx| {
                let (n, k) = (idx / k_eps, idx % k_eps);
                let (a, o) = batch.history(n, k);
                forward(&points[n], a, o)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let prefix: Vec<Vec<f64>> = forwards.iter().map(Forward::prefix_log_likelihoods).collect();

    let log_target: Vec<Vec<f64>> = (0..k_eps)
        .map(|k| {
            let len = prefix[k].len();
            (0..len).map(|t| (0..n_agents).map(|n| prefix[n * k_eps + k][t]).sum()).collect()
        })
        .collect();
    let (r_min, r_max) = reward_range(batch.trajectories)?;
    let weights = nu_weights(&log_target, batch.trajectories, gamma, r_min)?;
    let inv_k = 1.0 / k_eps as f64;

    let stats: Vec<SufficientStats> = pool.install(|| {
        (0..n_agents)
            .into_par_iter()
            .map(|n| {
                let s = &states[n];
                let mut st = SufficientStats::new(s.num_nodes(), s.num_actions(), s.num_observations());
                for k in 0..k_eps {
                    let w: Vec<f64> = weights.nu[k].iter().map(|v| v * inv_k).collect();
                    let (a, o) = batch.history(n, k);
                    st.accumulate(&points[n], a, o, &forwards[n * k_eps + k], &w)?;
                }
                Ok(st)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let ln_gamma = gamma.ln();
    let mut reward_term = 0.0;
    let mut nu_entropy = 0.0;
    let mut lik = vec![0.0; n_agents];
    for (k, tr) in batch.trajectories.iter().enumerate() {
        for (t, &nu) in weights.nu[k].iter().enumerate() {
            if nu == 0.0 {
                continue;
            }
            let disc = if t == 0 { 0.0 } else { t as f64 * ln_gamma };
            let ln_r = disc + (tr.reward(t) - r_min).ln() - batch.log_behavior[k][t];
            reward_term += inv_k * nu * ln_r;
            nu_entropy -= inv_k * nu * nu.ln();
            for (n, l) in lik.iter_mut().enumerate() {
                *l += inv_k * nu * prefix[n * k_eps + k][t];
            }
        }
    }
    let node_terms = (0..n_agents)
        .map(|n| nu_entropy + lik[n] - expected_complete_log_likelihood(&logs[n], &stats[n]))
        .collect();

    Ok(SweepContext {
        r_min,
        r_max,
        log_value: weights.log_value,
        nu: weights.nu,
        stats,
        reward_term,
        node_terms,
    })
}

/// One sweep: refresh `q(z)` from the current posterior, then apply every
/// closed-form update once per agent.
pub fn cavi_iteration(
    states: &[VariationalState],
    batch: &Batch<'_>,
    priors: &PriorHyperparams,
    gamma: f64,
    pool: &rayon::ThreadPool,
) -> Result<(Vec<VariationalState>, SweepContext)> {
    let ctx = prepare_sweep(states, batch, gamma, pool)?;
    let mut next = states.to_vec();
    for (s, st) in next.iter_mut().zip(&ctx.stats) {
        s.apply_updates(st, priors)?;
    }
    Ok((next, ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsc::tests::random_policy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_counts_recover_prior_shapes() {
        let p = PriorHyperparams::default();
        let mut s = VariationalState::uniform(3, 7, 2, &p);
        let stats = SufficientStats::new(3, 7, 2);
        s.apply_updates(&stats, &p).unwrap();
        assert!(s.delta().iter().all(|&d| d == 1.0));
        assert!(s.sigma().iter().all(|&v| v == 1.0));
        assert!(s.phi().iter().all(|&v| v == p.theta));
        assert_eq!(s.g(), p.e + 3.0);
    }

    #[test]
    fn g_matches_node_count() {
        let p = PriorHyperparams::default();
        let mut s = VariationalState::uniform(5, 7, 2, &p);
        s.update_rho(&p);
        assert!((s.g() - 5.1).abs() < 1e-15);
        assert!(s.h() > 0.0);
    }

    #[test]
    fn single_step_adds_weight_to_taken_action() {
        let p = PriorHyperparams::default();
        let mut s = VariationalState::uniform(1, 7, 2, &p);
        let mut stats = SufficientStats::new(1, 7, 2);
        let pe = super::super::sticks::point_estimate(&s);
        let fwd = forward(&pe, &[4], &[]).unwrap();
        stats.accumulate(&pe, &[4], &[], &fwd, &[0.75]).unwrap();
        s.update_pi(&stats, &p);
        for a in 0..7 {
            let want = if a == 4 { p.theta + 0.75 } else { p.theta };
            assert!((s.phi()[a] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn from_policy_keeps_leftover_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pol = random_policy(4, 7, 3, &mut rng);
        let p = PriorHyperparams::default();
        let s = VariationalState::from_policy(&pol, &p, 10.0);
        assert_eq!(s.delta()[3], 1.0);
        assert!(s.check_positive().is_ok());
        // the point estimate ranks actions like the source policy
        let pe = super::super::sticks::point_estimate(&s);
        for i in 0..4 {
            let best_src = argmax(pol.pi_row(i));
            let best_pe = argmax(&pe.pi()[i * 7..(i + 1) * 7]);
            assert_eq!(best_src, best_pe);
        }
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pol = random_policy(3, 4, 2, &mut rng);
        let s = VariationalState::from_policy(&pol, &PriorHyperparams::default(), 10.0);
        assert_eq!(VariationalState::from_text(&s.to_text(), "mem").unwrap(), s);
    }

    #[test]
    fn restrict_reindexes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pol = random_policy(4, 3, 2, &mut rng);
        let p = PriorHyperparams::default();
        let s = VariationalState::from_policy(&pol, &p, 10.0);
        let r = s.restrict(&[0, 2], &p);
        assert_eq!(r.num_nodes(), 2);
        assert_eq!(r.phi()[3..6], s.phi()[6..9]);
        assert_eq!(r.delta()[0], s.delta()[0]);
        assert_eq!(r.delta()[1], 1.0);
        assert_eq!(r.g(), p.e + 2.0);
        assert!(r.alpha_shape().iter().all(|&a| a == p.c + 2.0));
        // (i=2, a=1, o=0, j=0) moves to (i=1, a=1, o=0, j=0)
        assert_eq!(r.sigma()[((1 * 3 + 1) * 2) * 2], s.sigma()[((2 * 3 + 1) * 2) * 4]);
    }
}
