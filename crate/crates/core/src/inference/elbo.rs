//! Evidence lower bound of the reweighted policy posterior.
//!
//! With `q(z)` frozen for the duration of a sweep, the bound is
//!
//! ```text
//! C_r + Σ_n [ Σ counts_n · E_q[ln Θ_n] + E_q[ln p(Θ_n, ρ_n, α_n) − ln q(Θ_n, ρ_n, α_n)] + H_n ]
//! ```
//!
//! where `C_r` collects the reward factors and `H_n` the node-path entropy,
//! both held in [`SweepContext`]. Every prior-minus-posterior term is in
//! closed form, so each coordinate update is an exact maximizer of this
//! function.

use crate::config::PriorHyperparams;
use crate::special::{digamma_unchecked as psi, ln_gamma};

use super::cavi::{expected_complete_log_likelihood, SweepContext, VariationalState};
use super::sticks::expected_log_sticks;

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `E[ln p(x)] − E[ln q(x)]` for `p = Gamma(shape0, rate0)`, `q = Gamma(shape, rate)`.
fn gamma_prior_gap(shape0: f64, rate0: f64, shape: f64, rate: f64) -> f64 {
    let e_ln = psi(shape) - rate.ln();
    let e = shape / rate;
    let lp = shape0 * rate0.ln() - ln_gamma(shape0) + (shape0 - 1.0) * e_ln - rate0 * e;
    let lq = shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * e_ln - shape;
    lp - lq
}

/// `E[ln p(u | c)] − E[ln q(u)]` for `p = Beta(1, c)` with `E[ln c]`, `E[c]`
/// given, and `q = Beta(s, r)`.
fn stick_prior_gap(e_ln_conc: f64, e_conc: f64, s: f64, r: f64) -> f64 {
    let total = psi(s + r);
    let e_ln_u = psi(s) - total;
    let e_ln_1mu = psi(r) - total;
    let lp = e_ln_conc + (e_conc - 1.0) * e_ln_1mu;
    let lq = -ln_beta(s, r) + (s - 1.0) * e_ln_u + (r - 1.0) * e_ln_1mu;
    lp - lq
}

/// `E[ln p(π)] − E[ln q(π)]` for `p = Dir(θ, …, θ)` and `q = Dir(φ)`.
fn dirichlet_prior_gap(theta: f64, phi: &[f64]) -> f64 {
    let a = phi.len() as f64;
    let sum: f64 = phi.iter().sum();
    let psi_sum = psi(sum);
    let mut lp = ln_gamma(theta * a) - a * ln_gamma(theta);
    let mut lq = ln_gamma(sum);
    for &p in phi {
        let e_ln = psi(p) - psi_sum;
        lp += (theta - 1.0) * e_ln;
        lq += -ln_gamma(p) + (p - 1.0) * e_ln;
    }
    lp - lq
}

/// Sum of every prior-minus-posterior term for one agent.
pub fn prior_terms(s: &VariationalState, priors: &PriorHyperparams) -> f64 {
    let z = s.num_nodes();
    let a = s.num_actions();

    let mut total = gamma_prior_gap(priors.e, priors.f, s.g(), s.h());
    let e_ln_rho = psi(s.g()) - s.h().ln();
    let e_rho = s.g() / s.h();
    for (&d, &m) in s.delta().iter().zip(s.mu()) {
        total += stick_prior_gap(e_ln_rho, e_rho, d, m);
    }

    for (r, (&shape, &rate)) in s.alpha_shape().iter().zip(s.alpha_rate()).enumerate() {
        total += gamma_prior_gap(priors.c, priors.d, shape, rate);
        let e_ln_alpha = psi(shape) - rate.ln();
        let e_alpha = shape / rate;
        let sig = &s.sigma()[r * z..(r + 1) * z];
        let lam = &s.lambda()[r * z..(r + 1) * z];
        for (&sv, &lv) in sig.iter().zip(lam) {
            total += stick_prior_gap(e_ln_alpha, e_alpha, sv, lv);
        }
    }

    for row in s.phi().chunks(a) {
        total += dirichlet_prior_gap(priors.theta, row);
    }
    total
}

/// Bound contribution of one agent given the frozen sweep quantities.
pub fn agent_elbo(s: &VariationalState, agent: usize, ctx: &SweepContext, priors: &PriorHyperparams) -> f64 {
    let logs = expected_log_sticks(s);
    expected_complete_log_likelihood(&logs, &ctx.stats[agent]) + prior_terms(s, priors) + ctx.node_terms[agent]
}

pub fn elbo(states: &[VariationalState], ctx: &SweepContext, priors: &PriorHyperparams) -> f64 {
    ctx.reward_term
        + states
            .iter()
            .enumerate()
            .map(|(n, s)| agent_elbo(s, n, ctx, priors))
            .sum::<f64>()
}
