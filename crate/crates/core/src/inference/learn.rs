//! Outer learning loop: collect with an ε-greedy behavior policy, run CAVI
//! sweeps to convergence on the batch, prune, repeat.

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::fsc::{init_fsc_from_trajectories, BehaviorPolicy, EpsilonSchedule, FscPolicy};
use crate::trajectory::{collect_trajectories, Trajectory};

use super::cavi::{cavi_iteration, prepare_sweep, Batch, VariationalState};
use super::elbo::elbo;
use super::prune::prune_nodes;
use super::sticks::point_estimate;
use super::value::{discounted_return, empirical_value};

/// Confidence given to the initial controller when seeding the posterior.
pub const INIT_CONCENTRATION: f64 = 10.0;

/// One CAVI sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Running sweep counter across all rounds.
    pub iteration: usize,
    pub round: usize,
    /// 1-based within the round.
    pub sweep: usize,
    pub elbo: f64,
    /// Batch average of `Σ_t γ^t r_t` under the behavior policy.
    pub discounted_return: f64,
    /// Importance-weighted value of the normalized point estimate.
    pub empirical_value: f64,
    /// Batch mean of the per-step Jain index.
    pub jain_index: f64,
    pub node_counts: Vec<usize>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

/// One collection round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub epsilon: f64,
    /// Bound before the first sweep of the round.
    pub initial_elbo: f64,
    pub sweeps: usize,
    /// Whether the relative-change rule fired before the sweep cap.
    pub converged: bool,
    pub nodes_after_prune: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ElboTrace {
    pub rows: Vec<TraceRow>,
    pub rounds: Vec<RoundSummary>,
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub states: Vec<VariationalState>,
    /// Row-normalized point estimates of the final posteriors.
    pub policies: Vec<FscPolicy>,
    pub trace: ElboTrace,
}

fn normalized_policies(states: &[VariationalState]) -> Result<Vec<FscPolicy>> {
    states.iter().map(|s| point_estimate(s).normalized()).collect()
}

/// Runs the whole experiment loop. `on_batch(round, trajectories)` sees every
/// collected batch, e.g. to persist it.
pub fn learn(
    cfg: &ExperimentConfig,
    pool: &rayon::ThreadPool,
    on_batch: &mut dyn FnMut(usize, &[Trajectory]) -> Result<()>,
) -> Result<LearnOutcome> {
    cfg.validate()?;
    let sim = &cfg.sim;
    let lc = &cfg.learning;
    let priors = &cfg.priors;
    let gamma = sim.gamma;
    let n_agents = sim.num_agents();
    let (n_act, n_obs) = (sim.num_actions(), lc.num_observations());
    let rate = f64::from(sim.rate_mbps);
    let collect = |behaviors: &[BehaviorPolicy], round: usize| {
        collect_trajectories(
            sim,
            &lc.bin_edges_us,
            behaviors,
            lc.episodes,
            lc.horizon,
            cfg.seed,
            round as u64,
            pool,
        )
    };

    let uniform = vec![BehaviorPolicy::uniform(n_act, n_obs)?; n_agents];
    let mut trajs = collect(&uniform, 0)?;
    on_batch(0, &trajs)?;
    let init: Vec<FscPolicy> = (0..n_agents)
        .map(|n| init_fsc_from_trajectories(&trajs, n, lc.truncation_cap, n_act, n_obs, lc.init_smoothing))
        .collect::<Result<_>>()?;
    let mut states: Vec<VariationalState> = init
        .iter()
        .map(|p| VariationalState::from_policy(p, priors, INIT_CONCENTRATION))
        .collect();
    if lc.max_iters == 0 {
        return Ok(LearnOutcome {
            states,
            policies: init,
            trace: ElboTrace::default(),
        });
    }

    // Round 0 explores uniformly; rounds 1.. walk the schedule from its start
    // to its end.
    let schedule = EpsilonSchedule {
        curve: lc.epsilon_curve,
        start: lc.epsilon_start,
        end: lc.epsilon_end,
        total_iters: lc.max_iters.saturating_sub(2).max(1),
    };
    let mut trace = ElboTrace::default();
    for round in 0..lc.max_iters {
        let epsilon = if round == 0 {
            1.0
        } else {
            let eps = schedule.epsilon_at(round - 1);
            let behaviors = normalized_policies(&states)?
                .into_iter()
                .map(|p| BehaviorPolicy::new(p, eps))
                .collect::<Result<Vec<_>>>()?;
            trajs = collect(&behaviors, round)?;
            on_batch(round, &trajs)?;
            eps
        };

        let batch = Batch::new(&trajs)?;
        let ret = discounted_return(&trajs, gamma);
        let jain = trajs.iter().map(|t| t.mean_jain(rate)).sum::<Result<f64>>()? / trajs.len() as f64;

        let ctx0 = prepare_sweep(&states, &batch, gamma, pool)?;
        let initial_elbo = elbo(&states, &ctx0, priors);
        let mut prev = initial_elbo;
        let mut converged = false;
        let mut sweeps = 0;
        for sweep in 1..=lc.max_sweeps {
            let (next, ctx) = cavi_iteration(&states, &batch, priors, gamma, pool)?;
            states = next;
            let bound = elbo(&states, &ctx, priors);
            let value = empirical_value(&trajs, &normalized_policies(&states)?, gamma, ctx.r_min)?;
            trace.rows.push(TraceRow {
                iteration: trace.rows.len() + 1,
                round,
                sweep,
                elbo: bound,
                discounted_return: ret,
                empirical_value: value,
                jain_index: jain,
                node_counts: states.iter().map(VariationalState::num_nodes).collect(),
                g: states.iter().map(VariationalState::g).collect(),
                h: states.iter().map(VariationalState::h).collect(),
            });
            sweeps = sweep;
            let rel = ((bound - prev) / prev).abs();
            prev = bound;
            if rel < lc.tolerance {
                converged = true;
                break;
            }
        }

        let occupancy = prepare_sweep(&states, &batch, gamma, pool)?;
        states = states
            .iter()
            .zip(&occupancy.stats)
            .map(|(s, st)| prune_nodes(s, &st.occupancy(), lc.prune_threshold, priors).map(|(p, _)| p))
            .collect::<Result<_>>()?;
        trace.rounds.push(RoundSummary {
            round,
            epsilon,
            initial_elbo,
            sweeps,
            converged,
            nodes_after_prune: states.iter().map(VariationalState::num_nodes).collect(),
        });
    }

    Ok(LearnOutcome {
        policies: normalized_policies(&states)?,
        states,
        trace,
    })
}
