//! Brute-force oracles and fixture builders shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use coexist::fsc::{BehaviorPolicy, FscPolicy};
use coexist::trajectory::{collect_trajectories, Trajectory};
use coexist::{ExperimentConfig, SimConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn default_config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

pub fn desk_config() -> ExperimentConfig {
    ExperimentConfig::load(&default_config_path()).expect("shipped config loads")
}

fn weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.05..1.0)).collect()
}

pub fn random_policy(z: usize, a: usize, o: usize, rng: &mut ChaCha8Rng) -> FscPolicy {
    FscPolicy::from_weights(z, a, o, weights(z, rng), weights(z * a, rng), weights(z * a * o * z, rng)).unwrap()
}

/// `len` actions and `len − 1` observations.
pub fn random_history(len: usize, a: usize, o: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let acts = (0..len).map(|_| rng.random_range(0..a)).collect();
    let obs = (0..len - 1).map(|_| rng.random_range(0..o)).collect();
    (acts, obs)
}

/// Exact node marginals of one history by summing over all `Z^len` paths.
pub struct Enumerated {
    pub likelihood: f64,
    pub singleton: Vec<Vec<f64>>,
    /// `[τ−1][i * Z + j]` for `τ = 1..len`.
    pub pairwise: Vec<Vec<f64>>,
}

pub fn enumerate_paths(p: &FscPolicy, acts: &[usize], obs: &[usize]) -> Enumerated {
    let z = p.num_nodes();
    let len = acts.len();
    let mut singleton = vec![vec![0.0; z]; len];
    let mut pairwise = vec![vec![0.0; z * z]; len.saturating_sub(1)];
    let mut total = 0.0;
    let mut path = vec![0usize; len];
    for code in 0..z.pow(len as u32) {
        let mut c = code;
        for node in path.iter_mut() {
            *node = c % z;
            c /= z;
        }
        let mut w = p.eta()[path[0]] * p.pi_row(path[0])[acts[0]];
        for tau in 1..len {
            w *= p.omega_row(path[tau - 1], acts[tau - 1], obs[tau - 1])[path[tau]];
            w *= p.pi_row(path[tau])[acts[tau]];
        }
        total += w;
        for tau in 0..len {
            singleton[tau][path[tau]] += w;
            if tau > 0 {
                pairwise[tau - 1][path[tau - 1] * z + path[tau]] += w;
            }
        }
    }
    for row in singleton.iter_mut().chain(pairwise.iter_mut()) {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Enumerated {
        likelihood: total,
        singleton,
        pairwise,
    }
}

/// Small roster for inference fixtures.
pub fn small_sim() -> SimConfig {
    SimConfig {
        num_lte: 1,
        num_wifi: 1,
        ..SimConfig::default()
    }
}

pub fn small_bins() -> Vec<u64> {
    vec![0, 97, 574, 3388]
}

/// Episodes collected under random ε-mixed controllers.
pub fn random_batch(seed: u64, episodes: usize, horizon: usize, z: usize, rng: &mut ChaCha8Rng) -> Vec<Trajectory> {
    let sim = small_sim();
    let bins = small_bins();
    let behaviors: Vec<BehaviorPolicy> = (0..sim.num_agents())
        .map(|_| BehaviorPolicy::new(random_policy(z, sim.num_actions(), bins.len(), rng), 0.3).unwrap())
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    collect_trajectories(&sim, &bins, &behaviors, episodes, horizon, seed, 0, &pool).unwrap()
}
