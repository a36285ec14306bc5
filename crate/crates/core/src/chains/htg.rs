use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{ChainTrip, TripCluster};
use crate::model::{distance, Network};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    /// Destination of the tail trip near the origin of the head trip.
    Forward,
    /// Origin of the head trip near the destination of the tail, found from the head's side.
    Backward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HtgEdge {
    pub from: usize,
    pub to: usize,
    pub kind: LinkKind,
    /// Seen as back-to-back records at least once.
    pub consecutive: bool,
}

/// Directed graph over trip clusters; `usage` is the per-vertex frequency table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperTripGraph {
    pub vertices: Vec<TripCluster>,
    pub edges: Vec<HtgEdge>,
    pub usage: Vec<usize>,
    #[serde(skip)]
    adj: Vec<Vec<usize>>,
    #[serde(skip)]
    strong: Vec<Vec<usize>>,
}

impl HyperTripGraph {
    pub fn successors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    /// Successors along consecutive-record edges only.
    pub fn strong_successors(&self, v: usize) -> &[usize] {
        &self.strong[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Observed temporal precedence: (tail cluster, head cluster) pairs seen in order, flagged when adjacent.
fn precedence(trips: &[ChainTrip], assign: &[Option<usize>], max_day_gap: i64) -> HashMap<(usize, usize), bool> {
    let mut by_day: BTreeMap<i64, Vec<(i64, i64, usize)>> = BTreeMap::new();
    for (t, a) in trips.iter().zip(assign) {
        if let Some(c) = a {
            by_day.entry(t.day).or_default().push((t.start_ts, t.end_ts, *c));
        }
    }
    for v in by_day.values_mut() {
        v.sort();
    }
    let mut seen: HashMap<(usize, usize), bool> = HashMap::new();
    let mut mark = |a: usize, b: usize, adjacent: bool| {
        if a != b {
            *seen.entry((a, b)).or_default() |= adjacent;
        }
    };
    let days: Vec<(&i64, &Vec<(i64, i64, usize)>)> = by_day.iter().collect();
    for (i, (d, ts)) in days.iter().enumerate() {
        for (k, x) in ts.iter().enumerate() {
            let next = ts[k + 1..].iter().position(|y| y.0 >= x.1).map(|p| k + 1 + p);
            for (m, y) in ts.iter().enumerate() {
                if y.0 >= x.1 {
                    mark(x.2, y.2, Some(m) == next);
                }
            }
        }
        for (j, (d2, ts2)) in days[i + 1..].iter().enumerate() {
            if **d2 - **d > max_day_gap {
                break;
            }
            for (k, x) in ts.iter().enumerate() {
                for (m, y) in ts2.iter().enumerate() {
                    mark(x.2, y.2, j == 0 && k + 1 == ts.len() && m == 0);
                }
            }
        }
    }
    seen
}

/// Links clusters that are spatially chainable within `link_m` and observed in that order at least once.
pub fn build_htg(
    clusters: Vec<TripCluster>,
    trips: &[ChainTrip],
    assign: &[Option<usize>],
    net: &Network,
    link_m: f64,
    max_day_gap: i64,
) -> HyperTripGraph {
    let order = precedence(trips, assign, max_day_gap);
    let n = clusters.len();
    let mut edges = Vec::new();
    let mut adj = vec![Vec::new(); n];
    let mut strong = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let di = net.pos(clusters[i].destination());
            let oj = net.pos(clusters[j].origin());
            let Some(&consecutive) = order.get(&(i, j)) else { continue };
            if distance(di, oj) < link_m {
                edges.push(HtgEdge {
                    from: i,
                    to: j,
                    kind: if i < j { LinkKind::Forward } else { LinkKind::Backward },
                    consecutive,
                });
                adj[i].push(j);
                if consecutive {
                    strong[i].push(j);
                }
            }
        }
    }
    let usage = clusters.iter().map(|c| c.frequency).collect();
    HyperTripGraph {
        vertices: clusters,
        edges,
        usage,
        adj,
        strong,
    }
}

/// A spatially closed loop of trip clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedChain {
    pub vertices: Vec<usize>,
    pub closure_m: f64,
    pub usage: usize,
    pub diameter_m: f64,
}

fn closes(g: &HyperTripGraph, net: &Network, first: usize, last: usize, closure_m: f64) -> Option<f64> {
    let d = net.stop_distance(g.vertices[first].origin(), g.vertices[last].destination());
    (d <= closure_m).then_some(d)
}

fn search(
    g: &HyperTripGraph,
    net: &Network,
    budget: &[usize],
    path: &mut Vec<usize>,
    depth: usize,
    closure_m: f64,
    strong: bool,
) -> bool {
    let last = *path.last().unwrap();
    if path.len() == depth {
        return path.len() >= 2 && closes(g, net, path[0], last, closure_m).is_some();
    }
    let next = if strong { g.strong_successors(last) } else { g.successors(last) };
    for &w in next {
        if budget[w] == 0 || path.contains(&w) {
            continue;
        }
        path.push(w);
        if search(g, net, budget, path, depth, closure_m, strong) {
            return true;
        }
        path.pop();
    }
    false
}

/// Budgeted cycle search: from each start, repeatedly take the shortest closing path while every vertex on it has budget.
/// Paths along consecutive-record edges are exhausted before spatial-only links are used.
pub fn find_closed_chains(g: &HyperTripGraph, net: &Network, closure_m: f64, max_len: usize) -> Vec<ClosedChain> {
    let mut budget = g.usage.clone();
    let mut found: BTreeMap<Vec<usize>, (usize, f64)> = BTreeMap::new();
    for strong in [true, false] {
        for s in 0..g.len() {
            'start: while budget[s] > 0 {
                for depth in 2..=max_len.min(g.len()) {
                    let mut path = vec![s];
                    if search(g, net, &budget, &mut path, depth, closure_m, strong) {
                        for &v in &path {
                            budget[v] -= 1;
                        }
                        let delta = closes(g, net, path[0], *path.last().unwrap(), closure_m).unwrap();
                        found.entry(path).or_insert((0, delta)).0 += 1;
                        continue 'start;
                    }
                }
                break;
            }
        }
    }
    let mut chains: Vec<ClosedChain> = found
        .into_iter()
        .map(|(vertices, (usage, closure))| {
            let stops: Vec<_> = vertices.iter().flat_map(|&v| g.vertices[v].stops.iter()).collect();
            ClosedChain {
                diameter_m: super::chain_diameter(net, &stops),
                vertices,
                closure_m: closure,
                usage,
            }
        })
        .collect();
    chains.sort_by(|a, b| b.usage.cmp(&a.usage).then_with(|| a.vertices.cmp(&b.vertices)));
    chains
}
