//! Truncated stick-breaking expectations and the point-estimate controller.

use crate::error::{Error, Result};
use crate::fsc::FscPolicy;
use crate::special::digamma_unchecked as psi;

use super::cavi::VariationalState;

/// Deterministic stick-breaking: `w_i = u_i Π_{m<i}(1−u_m)`, with the last
/// index taking the leftover product. `u` of the last index is ignored.
pub fn stick_weights(u: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    let mut out = Vec::with_capacity(u.len());
    for (i, &ui) in u.iter().enumerate() {
        if i + 1 == u.len() {
            out.push(rest);
        } else {
            out.push(ui * rest);
            rest *= 1.0 - ui;
        }
    }
    out
}

/// `E[ln w_i]` for sticks `u_i ~ Beta(shape_i, rest_i)`.
pub fn expected_log_stick_weights(shape: &[f64], rest: &[f64]) -> Vec<f64> {
    let z = shape.len();
    let mut out = Vec::with_capacity(z);
    let mut acc = 0.0;
    for i in 0..z {
        if i + 1 == z {
            out.push(acc);
        } else {
            let total = psi(shape[i] + rest[i]);
            out.push(psi(shape[i]) - total + acc);
            acc += psi(rest[i]) - total;
        }
    }
    out
}

/// Expected logs of `η`, `π` and `ω` under the variational posterior, in the
/// same layout as [`FscPolicy`] tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedLogs {
    pub eta: Vec<f64>,
    pub pi: Vec<f64>,
    pub omega: Vec<f64>,
}

pub fn expected_log_sticks(vs: &VariationalState) -> ExpectedLogs {
    let (z, a) = (vs.num_nodes(), vs.num_actions());
    let eta = expected_log_stick_weights(vs.delta(), vs.mu());
    let mut pi = Vec::with_capacity(z * a);
    for row in vs.phi().chunks(a) {
        let total = psi(row.iter().sum());
        pi.extend(row.iter().map(|&p| psi(p) - total));
    }
    let omega = vs
        .sigma()
        .chunks(z)
        .zip(vs.lambda().chunks(z))
        .flat_map(|(s, l)| expected_log_stick_weights(s, l))
        .collect();
    ExpectedLogs { eta, pi, omega }
}

/// `Θ̃ = exp E[ln Θ]`, unnormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    num_nodes: usize,
    num_actions: usize,
    num_observations: usize,
    pub(crate) eta: Vec<f64>,
    pub(crate) pi: Vec<f64>,
    pub(crate) omega: Vec<f64>,
}

impl PointEstimate {
    pub fn from_logs(vs: &VariationalState, logs: &ExpectedLogs) -> Self {
        let exp = |v: &[f64]| v.iter().map(|x| x.exp()).collect();
        Self {
            num_nodes: vs.num_nodes(),
            num_actions: vs.num_actions(),
            num_observations: vs.num_observations(),
            eta: exp(&logs.eta),
            pi: exp(&logs.pi),
            omega: exp(&logs.omega),
        }
    }

    /// Wraps a stochastic controller, e.g. to run messages under a known policy.
    pub fn from_policy(p: &FscPolicy) -> Self {
        Self {
            num_nodes: p.num_nodes(),
            num_actions: p.num_actions(),
            num_observations: p.num_observations(),
            eta: p.eta().to_vec(),
            pi: p.pi().to_vec(),
            omega: p.omega().to_vec(),
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

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    #[inline]
    pub fn pi_at(&self, node: usize, action: usize) -> f64 {
        self.pi[node * self.num_actions + action]
    }

    #[inline]
    pub fn omega_row(&self, node: usize, action: usize, obs: usize) -> &[f64] {
        let start = ((node * self.num_actions + action) * self.num_observations + obs) * self.num_nodes;
        &self.omega[start..start + self.num_nodes]
    }

    /// Row-normalized copy, usable as an executable controller.
    pub fn normalized(&self) -> Result<FscPolicy> {
        FscPolicy::from_weights(
            self.num_nodes,
            self.num_actions,
            self.num_observations,
            self.eta.clone(),
            self.pi.clone(),
            self.omega.clone(),
        )
        .map_err(|e| Error::Numerical(format!("point estimate cannot be normalized: {e}")))
    }
}

pub fn point_estimate(vs: &VariationalState) -> PointEstimate {
    PointEstimate::from_logs(vs, &expected_log_sticks(vs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PriorHyperparams;
    use proptest::prelude::*;

    #[test]
    fn uniform_beta_expected_log_is_minus_one() {
        let e = expected_log_stick_weights(&[1.0, 1.0], &[1.0, 1.0]);
        assert!((e[0] + 1.0).abs() < 1e-14);
        // leftover index: E ln(1-u) = Ψ(1) − Ψ(2) = −1 as well
        assert!((e[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_node_has_unit_eta() {
        let vs = VariationalState::uniform(1, 7, 3, &PriorHyperparams::default());
        let pe = point_estimate(&vs);
        assert_eq!(pe.eta(), &[1.0]);
    }

    #[test]
    fn symmetric_phi_gives_equal_pi() {
        let vs = VariationalState::uniform(2, 7, 3, &PriorHyperparams::default());
        let pe = point_estimate(&vs);
        let want = (psi(1.0) - psi(7.0)).exp();
        for &p in pe.pi() {
            assert!((p - want).abs() < 1e-15);
        }
    }

    #[test]
    fn concentrated_phi_point_estimate_near_one() {
        let mut vs = VariationalState::uniform(1, 7, 3, &PriorHyperparams::default());
        vs.phi_mut()[0] = 1000.0;
        let pe = point_estimate(&vs);
        let oracle = (psi(1000.0) - psi(1006.0)).exp();
        assert!((pe.pi()[0] - oracle).abs() < 1e-14);
        assert!(pe.pi()[0] > 0.99);
    }

    proptest! {
        #[test]
        fn stick_weights_sum_to_one(u in prop::collection::vec(0.0f64..=1.0, 1..12)) {
            let s: f64 = stick_weights(&u).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn exp_expected_logs_sum_below_one(
            params in prop::collection::vec((0.01f64..50.0, 0.01f64..50.0), 1..10)
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = params.into_iter().unzip();
            let s: f64 = expected_log_stick_weights(&a, &b).iter().map(|v| v.exp()).sum();
            prop_assert!(s <= 1.0 + 1e-12);
        }
    }
}
