//! Removing nodes the posterior no longer visits.

use crate::config::PriorHyperparams;
use crate::error::{Error, Result};

use super::cavi::VariationalState;

/// Nodes whose share of the total expected occupancy reaches `threshold`.
/// Node 0 is always kept.
pub fn nodes_to_keep(occupancy: &[f64], threshold: f64) -> Vec<usize> {
    let total: f64 = occupancy.iter().sum();
    occupancy
        .iter()
        .enumerate()
        .filter(|&(i, &o)| i == 0 || (total > 0.0 && o / total >= threshold))
        .map(|(i, _)| i)
        .collect()
}

/// Drops every node below `threshold` occupancy share and re-indexes the state.
pub fn prune_nodes(
    state: &VariationalState,
    occupancy: &[f64],
    threshold: f64,
    priors: &PriorHyperparams,
) -> Result<(VariationalState, Vec<usize>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("prune threshold {threshold} outside (0, 1)")));
    }
    if occupancy.len() != state.num_nodes() {
        return Err(Error::InvalidInput(format!(
            "{} occupancy entries for {} nodes",
            occupancy.len(),
            state.num_nodes()
        )));
    }
    let keep = nodes_to_keep(occupancy, threshold);
    if keep.len() == state.num_nodes() {
        return Ok((state.clone(), keep));
    }
    Ok((state.restrict(&keep, priors), keep))
}
