//! Importance-weighted empirical value and the reward weights `ν̃`.

use crate::error::{Error, Result};
use crate::fsc::FscPolicy;
use crate::trajectory::Trajectory;

/// Smallest and largest global reward in the batch.
pub fn reward_range(trajs: &[Trajectory]) -> Result<(f64, f64)> {
    let mut it = trajs.iter().flat_map(|t| t.rewards().iter().copied());
    let first = it
        .next()
        .ok_or_else(|| Error::InvalidInput("no rewards in batch".into()))?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), r| (lo.min(r), hi.max(r)));
    if hi == lo {
        return Err(Error::Numerical(format!(
            "all rewards in the batch equal {lo}; the shifted value is identically zero"
        )));
    }
    Ok((lo, hi))
}

/// `Σ_n ln p(a_{n,0:t}|o_{n,1:t}, Π)` for every `t`, from stored probabilities.
pub fn behavior_log_prefix(traj: &Trajectory) -> Vec<f64> {
    let mut acc = 0.0;
    (0..traj.num_steps())
        .map(|t| {
            acc += (0..traj.num_agents()).map(|n| traj.behavior_prob(t, n).ln()).sum::<f64>();
            acc
        })
        .collect()
}

/// `Σ_n ln p(a_{n,0:t}|o_{n,1:t}, Θ)` for every `t` under executable controllers.
pub fn policy_log_prefix(traj: &Trajectory, policies: &[FscPolicy]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; traj.num_steps()];
    for (n, p) in policies.iter().enumerate() {
        let cond = p.action_conditionals(&traj.agent_actions(n), &traj.agent_observations(n))?;
        let mut acc = 0.0;
        for (o, c) in out.iter_mut().zip(cond) {
            acc += c.ln();
            *o += acc;
        }
    }
    Ok(out)
}

/// `ln[γ^t (r_t − R_min) Π_n L_t^n / Π_n P_t^n]` per step; `-∞` where the
/// shifted reward or the discount vanishes.
fn log_terms(traj: &Trajectory, log_target: &[f64], gamma: f64, r_min: f64) -> Vec<f64> {
    let log_behavior = behavior_log_prefix(traj);
    let ln_gamma = gamma.ln();
    (0..traj.num_steps())
        .map(|t| {
            let shifted = traj.reward(t) - r_min;
            if !(shifted > 0.0) || (gamma == 0.0 && t > 0) {
                return f64::NEG_INFINITY;
            }
            let disc = if t == 0 { 0.0 } else { t as f64 * ln_gamma };
            disc + shifted.ln() + log_target[t] - log_behavior[t]
        })
        .collect()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Reward weights per `(k, t)` and the log empirical value they are scaled by.
#[derive(Debug, Clone, PartialEq)]
pub struct NuWeights {
    pub nu: Vec<Vec<f64>>,
    pub log_value: f64,
}

/// `ν̃_t^k = γ^t (r_t^k − R_min) Π_n L / (Π_n P · V̂)`, evaluated in the log
/// domain. `log_target[k][t]` is `Σ_n ln L_t^{n,k}`. By construction
/// `(1/K) Σ_{k,t} ν̃_t^k = 1`.
pub fn nu_weights(log_target: &[Vec<f64>], trajs: &[Trajectory], gamma: f64, r_min: f64) -> Result<NuWeights> {
    if trajs.is_empty() || log_target.len() != trajs.len() {
        return Err(Error::InvalidInput("one target likelihood row per episode required".into()));
    }
    let terms: Vec<Vec<f64>> = trajs
        .iter()
        .zip(log_target)
        .map(|(tr, lt)| log_terms(tr, lt, gamma, r_min))
        .collect();
    let lse = log_sum_exp(terms.iter().flatten().copied());
    if !lse.is_finite() {
        return Err(Error::Numerical(
            "empirical value is not positive: every shifted reward sits at the floor".into(),
        ));
    }
    let log_value = lse - (trajs.len() as f64).ln();
    let nu = terms
        .iter()
        .map(|row| row.iter().map(|&l| (l - log_value).exp()).collect())
        .collect();
    Ok(NuWeights { nu, log_value })
}

/// `V̂ = (1/K) Σ_k Σ_t γ^t (r_t^k − R_min) Π_n L / Π_n P` for executable controllers.
pub fn empirical_value(trajs: &[Trajectory], policies: &[FscPolicy], gamma: f64, r_min: f64) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::InvalidInput("empirical value needs at least one episode".into()));
    }
    let mut terms = Vec::new();
    for tr in trajs {
        let lt = policy_log_prefix(tr, policies)?;
        terms.extend(log_terms(tr, &lt, gamma, r_min));
    }
    let lse = log_sum_exp(terms.iter().copied());
    Ok((lse - (trajs.len() as f64).ln()).exp())
}

/// On-policy batch average of `Σ_t γ^t r_t`.
pub fn discounted_return(trajs: &[Trajectory], gamma: f64) -> f64 {
    let total: f64 = trajs
        .iter()
        .map(|tr| {
            let mut d = 1.0;
            tr.rewards()
                .iter()
                .map(|r| {
                    let v = d * r;
                    d *= gamma;
                    v
                })
                .sum::<f64>()
        })
        .sum();
    total / trajs.len() as f64
}

/// Geometric mixture weights `(1−γ)γ^t` over `t = 0..=horizon`.
pub fn mixture_weights(gamma: f64, horizon: usize) -> Vec<f64> {
    let mut d = 1.0 - gamma;
    (0..=horizon)
        .map(|_| {
            let v = d;
            d *= gamma;
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::StepRecord;

    fn one_agent(actions: &[usize], obs: &[usize], rewards: &[f64], probs: &[f64]) -> Trajectory {
        let mut tr = Trajectory::new(1);
        for t in 0..actions.len() {
            tr.push_step(StepRecord {
                actions: vec![actions[t]],
                observations: (t > 0).then(|| vec![obs[t - 1]]),
                reward: rewards[t],
                behavior_probs: vec![probs[t]],
                effective_bits: vec![0],
                durations: vec![40],
            })
            .unwrap();
        }
        tr
    }

    #[test]
    fn same_policy_single_step_weight_is_one() {
        let tr = one_agent(&[2], &[], &[3.0], &[0.25]);
        let w = nu_weights(&[vec![0.25f64.ln()]], &[tr], 0.9, 1.0).unwrap();
        assert!((w.nu[0][0] - 1.0).abs() < 1e-15);
        assert!((w.log_value - 2.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn floor_reward_gets_zero_weight() {
        let a = one_agent(&[0], &[], &[1.0], &[0.5]);
        let b = one_agent(&[0], &[], &[2.0], &[0.5]);
        let w = nu_weights(&[vec![0.5f64.ln()], vec![0.5f64.ln()]], &[a.clone(), b], 0.9, 1.0).unwrap();
        assert_eq!(w.nu[0][0], 0.0);
        assert!((w.nu[1][0] - 2.0).abs() < 1e-15);
        assert!(matches!(nu_weights(&[vec![0.0]], &[a], 0.9, 1.0), Err(Error::Numerical(_))));
    }

    #[test]
    fn hand_computed_two_episode_value() {
        // Two one-step episodes (t = 0, 1) with behavior prob 0.5 at each step.
        // Target controller: one node, π = (0.8, 0.2).
        let p = FscPolicy::new(1, 2, 1, vec![1.0], vec![0.8, 0.2], vec![1.0; 2]).unwrap();
        let e1 = one_agent(&[0, 0], &[0], &[1.0, 3.0], &[0.5, 0.5]);
        let e2 = one_agent(&[1, 0], &[0], &[2.0, 2.0], &[0.5, 0.5]);
        let gamma = 0.5;
        // shifted rewards with R_min = 1: e1 -> (0, 2), e2 -> (1, 1)
        // ratios: e1 t1 = 0.64/0.25; e2 t0 = 0.2/0.5, t1 = 0.16/0.25
        let want = 0.5 * (0.5 * 2.0 * 2.56 + 1.0 * 0.4 + 0.5 * 1.0 * 0.64);
        let got = empirical_value(&[e1, e2], &[p], gamma, 1.0).unwrap();
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn behavior_policy_value_is_plain_average() {
        let p = FscPolicy::new(1, 2, 1, vec![1.0], vec![0.5, 0.5], vec![1.0; 2]).unwrap();
        let e = one_agent(&[0, 1, 1], &[0, 0], &[1.0, 2.0, 4.0], &[0.5, 0.5, 0.5]);
        let got = empirical_value(&[e], std::slice::from_ref(&p), 0.9, 1.0).unwrap();
        let want = 0.9 * 1.0 + 0.81 * 3.0;
        assert!((got - want).abs() < 1e-14);
        let flat = one_agent(&[0, 1], &[0], &[1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(empirical_value(&[flat], &[p], 0.9, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn geometric_weights_telescope() {
        for &(g, t) in &[(0.9, 50usize), (0.5, 3), (0.0, 4), (0.99, 200)] {
            let s: f64 = mixture_weights(g, t).iter().sum();
            let want = 1.0 - g.powi(t as i32 + 1);
            assert!((s - want).abs() < 1e-12, "gamma {g} horizon {t}");
        }
    }

    #[test]
    fn reward_range_rejects_flat_batch() {
        let e = one_agent(&[0, 0], &[0], &[1.0, 1.0], &[0.5, 0.5]);
        assert!(matches!(reward_range(&[e]), Err(Error::Numerical(_))));
    }
}
