use serde::{Deserialize, Serialize};

use super::ClosedChain;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Association {
    /// (chain index, record indices claimed by it)
    pub assigned: Vec<(usize, Vec<usize>)>,
    pub unassociated: Vec<usize>,
}

/// Records (indices into `records`) a chain can claim: one per chain vertex occurrence.
fn claimable(chain: &[usize], records: &[usize], open: &[bool]) -> Vec<usize> {
    let mut left: Vec<usize> = chain.to_vec();
    let mut out = Vec::new();
    for (i, c) in records.iter().enumerate() {
        if !open[i] {
            continue;
        }
        if let Some(p) = left.iter().position(|v| v == c) {
            left.swap_remove(p);
            out.push(i);
        }
    }
    out
}

/// Support and coverage of a chain over the open records.
pub fn support_coverage(chain: &[usize], records: &[usize]) -> (f64, f64) {
    let open = vec![true; records.len()];
    let k = claimable(chain, records, &open).len() as f64;
    if records.is_empty() || chain.is_empty() {
        return (0.0, 0.0);
    }
    (k / chain.len() as f64, k / records.len() as f64)
}

/// Greedy set cover of one day's records (given as cluster ids) by chains, maximizing support × coverage each round.
pub fn associate_open_trips(chains: &[Vec<usize>], records: &[usize]) -> Association {
    let mut open = vec![true; records.len()];
    let mut out = Association::default();
    loop {
        let remaining = open.iter().filter(|&&o| o).count();
        if remaining == 0 {
            break;
        }
        let mut best: Option<(f64, usize, Vec<usize>)> = None;
        for (ci, c) in chains.iter().enumerate() {
            let claim = claimable(c, records, &open);
            if claim.is_empty() {
                continue;
            }
            let k = claim.len() as f64;
            let score = (k / c.len() as f64) * (k / remaining as f64);
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, ci, claim));
            }
        }
        let Some((_, ci, claim)) = best else { break };
        for &i in &claim {
            open[i] = false;
        }
        out.assigned.push((ci, claim));
    }
    out.unassociated = (0..records.len()).filter(|&i| open[i]).collect();
    out
}

/// Share of the passenger's trips explained by chain usage.
pub fn completeness(chains: &[ClosedChain], total_trips: usize) -> Option<f64> {
    (total_trips > 0).then(|| {
        let used: usize = chains.iter().map(|c| c.usage * c.vertices.len()).sum();
        (used as f64 / total_trips as f64).min(1.0)
    })
}
