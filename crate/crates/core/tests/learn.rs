//! The outer learning loop at reduced scale.

mod common;

use coexist::experiment::build_pool;
use coexist::fsc::init_fsc_from_trajectories;
use coexist::inference::{learn, VariationalState};
use coexist::trajectory::Trajectory;
use coexist::ExperimentConfig;

fn small_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_seed(seed);
    cfg.learning.episodes = 24;
    cfg.learning.horizon = 12;
    cfg.learning.max_iters = 4;
    cfg.learning.max_sweeps = 30;
    cfg.learning.truncation_cap = 4;
    cfg
}

#[test]
fn zero_iterations_return_the_initialization() {
    let mut cfg = small_config(5);
    cfg.learning.max_iters = 0;
    let pool = build_pool(2).unwrap();
    let mut batches: Vec<Vec<Trajectory>> = Vec::new();
    let out = learn(&cfg, &pool, &mut |_, t| {
        batches.push(t.to_vec());
        Ok(())
    })
    .unwrap();
    assert!(out.trace.rows.is_empty());
    assert_eq!(batches.len(), 1);
    let lc = &cfg.learning;
    for n in 0..cfg.sim.num_agents() {
        let init = init_fsc_from_trajectories(&batches[0], n, lc.truncation_cap, 7, lc.num_observations(), lc.init_smoothing)
            .unwrap();
        assert_eq!(out.policies[n], init);
        assert_eq!(out.states[n], VariationalState::from_policy(&init, &cfg.priors, 10.0));
    }
}

#[test]
fn fixed_seed_gives_identical_trace() {
    let cfg = small_config(11);
    let a = learn(&cfg, &build_pool(1).unwrap(), &mut |_, _| Ok(())).unwrap();
    let b = learn(&cfg, &build_pool(3).unwrap(), &mut |_, _| Ok(())).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.policies, b.policies);
    let other = learn(&small_config(12), &build_pool(3).unwrap(), &mut |_, _| Ok(())).unwrap();
    assert_ne!(a.trace, other.trace);
}

#[test]
fn trace_bookkeeping() {
    let cfg = small_config(3);
    let out = learn(&cfg, &build_pool(2).unwrap(), &mut |_, _| Ok(())).unwrap();
    let trace = &out.trace;
    assert_eq!(trace.rounds.len(), cfg.learning.max_iters);
    assert_eq!(trace.rows.len(), trace.rounds.iter().map(|r| r.sweeps).sum::<usize>());
    for (i, row) in trace.rows.iter().enumerate() {
        assert_eq!(row.iteration, i + 1);
        for (n, &z) in row.node_counts.iter().enumerate() {
            assert_eq!(row.g[n], cfg.priors.e + z as f64);
            assert!(row.h[n] > 0.0);
        }
        assert!(row.jain_index > 0.0 && row.jain_index <= 1.0);
    }
    // Node counts never grow.
    for w in trace.rounds.windows(2) {
        for (x, y) in w[0].nodes_after_prune.iter().zip(&w[1].nodes_after_prune) {
            assert!(y <= x);
        }
    }
    assert_eq!(trace.rounds[0].epsilon, 1.0);
    assert_eq!(trace.rounds[1].epsilon, cfg.learning.epsilon_start);
    assert_eq!(trace.rounds.last().unwrap().epsilon, cfg.learning.epsilon_end);
    for (p, s) in out.policies.iter().zip(&out.states) {
        assert_eq!(p.num_nodes(), s.num_nodes());
    }
}
