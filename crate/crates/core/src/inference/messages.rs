//! Scaled forward-backward messages over controller nodes.
//!
//! The forward pass stores `α̂_τ = α_τ / Π_{s≤τ} c_s` with every row summing
//! to one, so `ln p(a_{0:τ}|o_{1:τ}) = Σ_{s≤τ} ln c_s` for every prefix at
//! once. The backward pass comes in two flavors: one per history endpoint
//! (used for checking) and one that folds the weighted sum over all
//! endpoints of an episode into a single sweep.

use crate::error::{Error, Result};
use crate::model::{ActionId, ObservationId};

use super::sticks::PointEstimate;

/// Forward messages of one history.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    num_nodes: usize,
    alpha_hat: Vec<f64>,
    log_scales: Vec<f64>,
}

impl Forward {
    pub fn alpha_hat(&self, tau: usize) -> &[f64] {
        &self.alpha_hat[tau * self.num_nodes..(tau + 1) * self.num_nodes]
    }

    /// `ln c_τ` for every step.
    pub fn log_scales(&self) -> &[f64] {
        &self.log_scales
    }

    /// `ln p(a_{0:t}|o_{1:t})` for every prefix end `t`.
    pub fn prefix_log_likelihoods(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.log_scales
            .iter()
            .map(|l| {
                acc += l;
                acc
            })
            .collect()
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_scales.iter().sum()
    }
}

fn check_lengths(pe: &PointEstimate, actions: &[ActionId], obs: &[ObservationId]) -> Result<()> {
    if actions.is_empty() || obs.len() + 1 != actions.len() {
        return Err(Error::InvalidInput(format!(
            "history needs t+1 actions and t observations, got {} and {}",
            actions.len(),
            obs.len()
        )));
    }
    if actions.iter().any(|&a| a >= pe.num_actions()) || obs.iter().any(|&o| o >= pe.num_observations()) {
        return Err(Error::InvalidInput("history index out of range".into()));
    }
    Ok(())
}

pub fn forward(pe: &PointEstimate, actions: &[ActionId], obs: &[ObservationId]) -> Result<Forward> {
    check_lengths(pe, actions, obs)?;
    let z = pe.num_nodes();
    let len = actions.len();
    let mut alpha_hat = vec![0.0; len * z];
    let mut log_scales = Vec::with_capacity(len);

    let degenerate = |tau: usize| {
        Error::DegenerateHistory(format!("history has zero probability at step {tau}"))
    };
    for (i, slot) in alpha_hat[..z].iter_mut().enumerate() {
        *slot = pe.eta()[i] * pe.pi_at(i, actions[0]);
    }
    for tau in 0..len {
        if tau > 0 {
            let (prev, cur) = alpha_hat.split_at_mut(tau * z);
            let prev = &prev[(tau - 1) * z..];
            let cur = &mut cur[..z];
            let (a_prev, o) = (actions[tau - 1], obs[tau - 1]);
            for (i, &p) in prev.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for (c, &w) in cur.iter_mut().zip(pe.omega_row(i, a_prev, o)) {
                    *c += p * w;
                }
            }
            for (j, c) in cur.iter_mut().enumerate() {
                *c *= pe.pi_at(j, actions[tau]);
            }
        }
        let row = &mut alpha_hat[tau * z..(tau + 1) * z];
        let c: f64 = row.iter().sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(degenerate(tau));
        }
        row.iter_mut().for_each(|v| *v /= c);
        log_scales.push(c.ln());
    }
    Ok(Forward {
        num_nodes: z,
        alpha_hat,
        log_scales,
    })
}

/// Full posterior over nodes for a single history `a_{0:t}, o_{1:t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePosterior {
    pub forward: Forward,
    /// Scaled backward messages, `t+1` rows; the last row is all ones.
    pub beta_hat: Vec<f64>,
    /// `p(z_τ = i | history)`, `t+1` rows of length `Z`.
    pub singleton: Vec<Vec<f64>>,
    /// `p(z_{τ−1} = i, z_τ = j | history)` for `τ = 1..=t`, row-major `Z×Z`.
    pub pairwise: Vec<Vec<f64>>,
}

impl NodePosterior {
    pub fn log_likelihood(&self) -> f64 {
        self.forward.log_likelihood()
    }
}

pub fn forward_backward(pe: &PointEstimate, actions: &[ActionId], obs: &[ObservationId]) -> Result<NodePosterior> {
    let fwd = forward(pe, actions, obs)?;
    let z = pe.num_nodes();
    let len = actions.len();
    let mut beta_hat = vec![1.0; len * z];
    let mut pairwise = vec![Vec::new(); len.saturating_sub(1)];
    let mut v = vec![0.0; z];
    for tau in (1..len).rev() {
        let c = fwd.log_scales[tau].exp();
        let (a_prev, o) = (actions[tau - 1], obs[tau - 1]);
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = pe.pi_at(j, actions[tau]) * beta_hat[tau * z + j] / c;
        }
        let mut pair = vec![0.0; z * z];
        let alpha_prev = fwd.alpha_hat(tau - 1);
        for i in 0..z {
            let row = pe.omega_row(i, a_prev, o);
            let mut b = 0.0;
            for j in 0..z {
                let m = row[j] * v[j];
                b += m;
                pair[i * z + j] = alpha_prev[i] * m;
            }
            beta_hat[(tau - 1) * z + i] = b;
        }
        pairwise[tau - 1] = pair;
    }
    let singleton = (0..len)
        .map(|tau| {
            fwd.alpha_hat(tau)
                .iter()
                .zip(&beta_hat[tau * z..(tau + 1) * z])
                .map(|(a, b)| a * b)
                .collect()
        })
        .collect();
    Ok(NodePosterior {
        forward: fwd,
        beta_hat,
        singleton,
        pairwise,
    })
}

/// Expected node-start, emission and transition counts for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    num_nodes: usize,
    num_actions: usize,
    num_observations: usize,
    /// `Σ q(z_0 = i)`.
    pub start: Vec<f64>,
    /// `Σ q(z_τ = i) 𝕀(a_τ = a)`, layout `[i][a]`.
    pub emit: Vec<f64>,
    /// `Σ q(z_{τ−1} = i, z_τ = j) 𝕀(a_{τ−1} = a, o_τ = o)`, layout `[i][a][o][j]`.
    pub trans: Vec<f64>,
}

impl SufficientStats {
    pub fn new(num_nodes: usize, num_actions: usize, num_observations: usize) -> Self {
        Self {
            num_nodes,
            num_actions,
            num_observations,
            start: vec![0.0; num_nodes],
            emit: vec![0.0; num_nodes * num_actions],
            trans: vec![0.0; num_nodes * num_actions * num_observations * num_nodes],
        }
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

    #[inline]
    pub fn trans_index(&self, i: usize, a: usize, o: usize, j: usize) -> usize {
        ((i * self.num_actions + a) * self.num_observations + o) * self.num_nodes + j
    }

    /// Total expected time spent in each node.
    pub fn occupancy(&self) -> Vec<f64> {
        self.emit.chunks(self.num_actions).map(|r| r.iter().sum()).collect()
    }

    /// Adds `Σ_t weights[t] · (posterior of the prefix ending at t)` for one
    /// episode in a single backward sweep.
    ///
    /// With `B̂_T = w_T` and `B̂_τ(i) = w_τ + Σ_j M_τ(i,j) B̂_{τ+1}(j) / c_{τ+1}`,
    /// where `M_τ(i,j) = ω̃(j|i,a_τ,o_{τ+1}) π̃(a_{τ+1}|j)`, the aggregated
    /// singleton is `α̂_τ B̂_τ` and the pairwise term is
    /// `α̂_{τ−1}(i) M_{τ−1}(i,j) B̂_τ(j) / c_τ`.
    pub fn accumulate(
        &mut self,
        pe: &PointEstimate,
        actions: &[ActionId],
        obs: &[ObservationId],
        fwd: &Forward,
        weights: &[f64],
    ) -> Result<()> {
        let z = self.num_nodes;
        let len = actions.len();
        if weights.len() != len || fwd.log_scales.len() != len || pe.num_nodes() != z {
            return Err(Error::InvalidInput("weights, messages and history disagree in length".into()));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Ok(());
        }
        let mut b = vec![weights[len - 1]; z];
        let mut v = vec![0.0; z];
        for tau in (1..len).rev() {
            let alpha = fwd.alpha_hat(tau);
            let a_tau = actions[tau];
            for i in 0..z {
                self.emit[i * self.num_actions + a_tau] += alpha[i] * b[i];
            }
            let c = fwd.log_scales[tau].exp();
            for (j, vj) in v.iter_mut().enumerate() {
                *vj = pe.pi_at(j, a_tau) * b[j] / c;
            }
            let (a_prev, o) = (actions[tau - 1], obs[tau - 1]);
            let alpha_prev = fwd.alpha_hat(tau - 1);
            let w_prev = weights[tau - 1];
            for i in 0..z {
                let row = pe.omega_row(i, a_prev, o);
                let base = self.trans_index(i, a_prev, o, 0);
                let mut acc = 0.0;
                for j in 0..z {
                    let m = row[j] * v[j];
                    acc += m;
                    self.trans[base + j] += alpha_prev[i] * m;
                }
                b[i] = w_prev + acc;
            }
        }
        let alpha0 = fwd.alpha_hat(0);
        for i in 0..z {
            let s = alpha0[i] * b[i];
            self.start[i] += s;
            self.emit[i * self.num_actions + actions[0]] += s;
        }
        Ok(())
    }

    pub fn add(&mut self, other: &SufficientStats) {
        for (x, y) in self.start.iter_mut().zip(&other.start) {
            *x += y;
        }
        for (x, y) in self.emit.iter_mut().zip(&other.emit) {
            *x += y;
        }
        for (x, y) in self.trans.iter_mut().zip(&other.trans) {
            *x += y;
        }
    }
}
