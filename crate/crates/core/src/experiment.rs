//! Orchestration of the three run modes and the artifact formats they emit.
//!
//! Layout of an output directory after `learn`:
//!
//! ```text
//! elbo.csv  nodes.csv  value.csv  gh.csv
//! policies/agent_<n>.fsc     normalized point-estimate controllers
//! policies/agent_<n>.vstate  variational parameters
//! trajectories/round_<r>.txt
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{AgentKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::fsc::{BehaviorPolicy, FscPolicy};
use crate::inference::{discounted_return, learn, ElboTrace, LearnOutcome};
use crate::trajectory::{collect_trajectories, write_trajectories, Trajectory};

pub const ELBO_CSV: &str = "elbo.csv";
pub const NODES_CSV: &str = "nodes.csv";
pub const VALUE_CSV: &str = "value.csv";
pub const GH_CSV: &str = "gh.csv";
pub const TRACE_FILES: [&str; 4] = [ELBO_CSV, NODES_CSV, VALUE_CSV, GH_CSV];

/// Round index used for evaluation episodes, far from any learning round so
/// the streams never coincide.
pub const EVALUATION_ROUND: u64 = 1 << 32;

/// Process exit status for an error: 2 for numerical aborts, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) | Error::DegenerateHistory(_) => 2,
        _ => 1,
    }
}

pub fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn trajectory_path(out: &Path, round: usize) -> PathBuf {
    out.join("trajectories").join(format!("round_{round:03}.txt"))
}

pub fn policy_path(out: &Path, agent: usize) -> PathBuf {
    out.join("policies").join(format!("agent_{agent}.fsc"))
}

pub fn state_path(out: &Path, agent: usize) -> PathBuf {
    out.join("policies").join(format!("agent_{agent}.vstate"))
}

/// Collects one batch under uniformly random behavior and writes it to
/// `trajectories.txt`.
pub fn simulate(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<PathBuf> {
    cfg.validate()?;
    let n_act = cfg.sim.num_actions();
    let n_obs = cfg.learning.num_observations();
    let behaviors = vec![BehaviorPolicy::uniform(n_act, n_obs)?; cfg.sim.num_agents()];
    let trajs = collect_trajectories(
        &cfg.sim,
        &cfg.learning.bin_edges_us,
        &behaviors,
        cfg.learning.episodes,
        cfg.learning.horizon,
        cfg.seed,
        0,
        pool,
    )?;
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("trajectories.txt");
    write_trajectories(&path, &trajs)?;
    Ok(path)
}

/// Runs the learner and writes every artifact. Round 0 and the final round
/// batches are kept unless `save_all_trajectories` is set.
pub fn run_learn(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<LearnOutcome> {
    let out = &cfg.output_dir;
    create_dir(&out.join("trajectories"))?;
    create_dir(&out.join("policies"))?;
    let last_round = cfg.learning.max_iters.saturating_sub(1);
    let keep_all = cfg.learning.save_all_trajectories;
    let mut on_batch = |round: usize, trajs: &[Trajectory]| {
        if keep_all || round == 0 || round == last_round {
            write_trajectories(&trajectory_path(out, round), trajs)?;
        }
        Ok(())
    };
    let outcome = learn(cfg, pool, &mut on_batch)?;
    write_trace(out, &outcome.trace, cfg.sim.num_agents())?;
    for (n, (p, s)) in outcome.policies.iter().zip(&outcome.states).enumerate() {
        p.save(&policy_path(out, n))?;
        s.save(&state_path(out, n))?;
    }
    Ok(outcome)
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidInput(format!("{}: {other:?}", path.display())),
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the four trace CSVs, one row per CAVI sweep.
pub fn write_trace(out: &Path, trace: &ElboTrace, num_agents: usize) -> Result<()> {
    let head = |extra: Vec<String>| {
        let mut h = vec!["iteration".to_string(), "round".to_string()];
        h.extend(extra);
        h
    };
    let lead = |r: &crate::inference::TraceRow| vec![r.iteration.to_string(), r.round.to_string()];

    write_csv(
        &out.join(ELBO_CSV),
        &head(vec!["sweep".into(), "elbo".into()]),
        trace.rows.iter().map(|r| {
            let mut v = lead(r);
            v.extend([r.sweep.to_string(), num(r.elbo)]);
            v
        }),
    )?;
    write_csv(
        &out.join(NODES_CSV),
        &head((0..num_agents).map(|n| format!("agent_{n}")).collect()),
        trace.rows.iter().map(|r| {
            let mut v = lead(r);
            v.extend(r.node_counts.iter().map(usize::to_string));
            v
        }),
    )?;
    write_csv(
        &out.join(VALUE_CSV),
        &head(vec!["discounted_return".into(), "empirical_value".into(), "jain_index".into()]),
        trace.rows.iter().map(|r| {
            let mut v = lead(r);
            v.extend([num(r.discounted_return), num(r.empirical_value), num(r.jain_index)]);
            v
        }),
    )?;
    write_csv(
        &out.join(GH_CSV),
        &head((0..num_agents).flat_map(|n| [format!("g_{n}"), format!("h_{n}")]).collect()),
        trace.rows.iter().map(|r| {
            let mut v = lead(r);
            for (g, h) in r.g.iter().zip(&r.h) {
                v.extend([num(*g), num(*h)]);
            }
            v
        }),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentReport {
    pub kind: AgentKind,
    /// Effective bits over elapsed µs, averaged over episodes (Mbps).
    pub throughput_mbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub episodes: usize,
    pub discounted_value: f64,
    pub jain_index: f64,
    pub agents: Vec<AgentReport>,
}

impl fmt::Display for EvaluationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "episodes          {}", self.episodes)?;
        writeln!(f, "discounted value  {:.6}", self.discounted_value)?;
        writeln!(f, "mean Jain index   {:.6}", self.jain_index)?;
        for (n, a) in self.agents.iter().enumerate() {
            writeln!(f, "agent {n} ({:<4})  {:.4} Mbps", a.kind.label(), a.throughput_mbps)?;
        }
        Ok(())
    }
}

pub fn load_policies(dir: &Path, num_agents: usize) -> Result<Vec<FscPolicy>> {
    let paths: Vec<PathBuf> = (0..num_agents).map(|n| policy_path(dir, n)).collect();
    let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    paths.iter().map(|p| FscPolicy::load(p)).collect()
}

/// Greedy (ε = 0) rollouts of the given controllers.
pub fn evaluate_policies(
    cfg: &ExperimentConfig,
    policies: &[FscPolicy],
    pool: &rayon::ThreadPool,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    if policies.len() != cfg.sim.num_agents() {
        return Err(Error::InvalidInput(format!(
            "{} policies for {} agents",
            policies.len(),
            cfg.sim.num_agents()
        )));
    }
    let (n_act, n_obs) = (cfg.sim.num_actions(), cfg.learning.num_observations());
    if let Some(p) = policies.iter().find(|p| p.num_actions() != n_act || p.num_observations() != n_obs) {
        return Err(Error::InvalidInput(format!(
            "policy has {} actions and {} observations, configuration needs {n_act} and {n_obs}",
            p.num_actions(),
            p.num_observations()
        )));
    }
    let behaviors = policies
        .iter()
        .map(|p| BehaviorPolicy::new(p.clone(), 0.0))
        .collect::<Result<Vec<_>>>()?;
    let trajs = collect_trajectories(
        &cfg.sim,
        &cfg.learning.bin_edges_us,
        &behaviors,
        cfg.learning.episodes,
        cfg.learning.horizon,
        cfg.seed,
        EVALUATION_ROUND,
        pool,
    )?;
    let rate = f64::from(cfg.sim.rate_mbps);
    let k = trajs.len() as f64;
    let jain = trajs.iter().map(|t| t.mean_jain(rate)).sum::<Result<f64>>()? / k;
    let agents = cfg
        .sim
        .roster()
        .into_iter()
        .enumerate()
        .map(|(n, kind)| {
            let tp: f64 = trajs
                .iter()
                .map(|t| {
                    let bits: u64 = (0..t.num_steps()).map(|s| t.effective_bits(s, n)).sum();
                    let us: u64 = (0..t.num_steps()).map(|s| t.duration(s, n)).sum();
                    bits as f64 / us as f64
                })
                .sum();
            AgentReport {
                kind,
                throughput_mbps: tp / k,
            }
        })
        .collect();
    Ok(EvaluationReport {
        episodes: trajs.len(),
        discounted_value: discounted_return(&trajs, cfg.sim.gamma),
        jain_index: jain,
        agents,
    })
}

/// Loads `policies/agent_<n>.fsc` from the output directory and evaluates them.
pub fn run_evaluate(cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<EvaluationReport> {
    let policies = load_policies(&cfg.output_dir, cfg.sim.num_agents())?;
    evaluate_policies(cfg, &policies, pool)
}

/// Header and numeric rows of one trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    fn columns_with_prefix(&self, prefix: &str) -> Vec<usize> {
        (0..self.header.len())
            .filter(|&i| self.header[i].starts_with(prefix))
            .collect()
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        Some(Ok(h)) => h.iter().map(str::to_string).collect(),
        Some(Err(e)) => return Err(Error::parse(&origin, 1, e.to_string())),
        None => return Err(Error::parse(&origin, 1, "empty file")),
    };
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(&origin, line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(Error::parse(
                &origin,
                line,
                format!("{} cells, header has {}", rec.len(), header.len()),
            ));
        }
        let row = rec
            .iter()
            .zip(&header)
            .map(|(cell, col)| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(&origin, line, format!("column {col}: non-numeric cell `{cell}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub sweeps: usize,
    pub first_elbo: f64,
    pub final_elbo: f64,
    pub final_nodes: Vec<usize>,
    pub final_discounted_return: f64,
    pub final_empirical_value: f64,
    pub final_jain: f64,
    pub final_g: Vec<f64>,
    pub final_h: Vec<f64>,
}

impl Summary {
    pub fn reached_single_node(&self) -> bool {
        self.final_nodes.iter().all(|&z| z == 1)
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let trend = if self.final_elbo > self.first_elbo {
            "increasing"
        } else if self.final_elbo < self.first_elbo {
            "decreasing"
        } else {
            "flat"
        };
        writeln!(f, "sweeps recorded     {}", self.sweeps)?;
        writeln!(f, "final ELBO          {:.6} (first {:.6}, {trend})", self.final_elbo, self.first_elbo)?;
        let nodes: Vec<String> = self.final_nodes.iter().map(usize::to_string).collect();
        writeln!(f, "final node counts   {}", nodes.join(" "))?;
        writeln!(f, "single-node FSCs    {}", if self.reached_single_node() { "yes" } else { "no" })?;
        writeln!(f, "discounted return   {:.6}", self.final_discounted_return)?;
        writeln!(f, "empirical value     {:.6}", self.final_empirical_value)?;
        writeln!(f, "mean Jain index     {:.6}", self.final_jain)?;
        for (n, (g, h)) in self.final_g.iter().zip(&self.final_h).enumerate() {
            writeln!(f, "agent {n}: g {g:.4}  h {h:.4}")?;
        }
        Ok(())
    }
}

/// Reads the four trace CSVs in `dir` and reports their final rows.
pub fn summarize(dir: &Path) -> Result<Summary> {
    let missing: Vec<PathBuf> = TRACE_FILES
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    let elbo = read_table(&dir.join(ELBO_CSV))?;
    let nodes = read_table(&dir.join(NODES_CSV))?;
    let value = read_table(&dir.join(VALUE_CSV))?;
    let gh = read_table(&dir.join(GH_CSV))?;
    let lens = [elbo.rows.len(), nodes.rows.len(), value.rows.len(), gh.rows.len()];
    if lens.iter().any(|&l| l != lens[0]) {
        return Err(Error::InvalidInput(format!("trace files disagree on row count: {lens:?}")));
    }
    let bounds = elbo
        .column("elbo")
        .ok_or_else(|| Error::parse(ELBO_CSV, 1, "no `elbo` column"))?;
    let (Some(&first), Some(&last)) = (bounds.first(), bounds.last()) else {
        return Err(Error::InvalidInput("trace files have no rows".into()));
    };
    let col = |t: &Table, file: &str, name: &str| -> Result<f64> {
        t.column(name)
            .and_then(|c| c.last().copied())
            .ok_or_else(|| Error::parse(file, 1, format!("no `{name}` column")))
    };
    let last_of = |t: &Table, prefix: &str| -> Vec<f64> {
        let row = t.rows.last().expect("row count checked above");
        t.columns_with_prefix(prefix).into_iter().map(|i| row[i]).collect()
    };
    Ok(Summary {
        sweeps: bounds.len(),
        first_elbo: first,
        final_elbo: last,
        final_nodes: last_of(&nodes, "agent_").into_iter().map(|v| v as usize).collect(),
        final_discounted_return: col(&value, VALUE_CSV, "discounted_return")?,
        final_empirical_value: col(&value, VALUE_CSV, "empirical_value")?,
        final_jain: col(&value, VALUE_CSV, "jain_index")?,
        final_g: last_of(&gh, "g_"),
        final_h: last_of(&gh, "h_"),
    })
}
