use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ChainTrip;
use crate::model::{bearing_angle, Leg, Network, StopId};

/// Walking distance to switch between two trips, infinite when their OD vectors diverge by more than 90°.
pub fn trip_similarity(net: &Network, a: (&StopId, &StopId), b: (&StopId, &StopId)) -> f64 {
    let va = (net.pos(a.0), net.pos(a.1));
    let vb = (net.pos(b.0), net.pos(b.1));
    match bearing_angle(va, vb) {
        Ok(ang) if ang <= 90.0 => net.stop_distance(a.0, b.0) + net.stop_distance(a.1, b.1),
        Ok(_) => f64::INFINITY,
        Err(_) => {
            log::debug!("degenerate trip vector {}->{} or {}->{}", a.0, a.1, b.0, b.1);
            f64::INFINITY
        }
    }
}

/// A group of near-identical whole trips represented by the most frequent one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripCluster {
    pub id: usize,
    /// Stop sequence of the representative: origin, transfer boardings, destination.
    pub stops: Vec<StopId>,
    pub legs: Vec<Leg>,
    /// Distinct member stop sequences.
    pub members: Vec<Vec<StopId>>,
    pub frequency: usize,
}

impl TripCluster {
    pub fn origin(&self) -> &StopId {
        &self.stops[0]
    }

    pub fn destination(&self) -> &StopId {
        self.stops.last().unwrap()
    }
}

/// Greedy frequency-descending clustering; returns kept clusters and each trip's cluster.
pub fn cluster_trips(trips: &[ChainTrip], net: &Network, radius_m: f64, min_share: f64) -> (Vec<TripCluster>, Vec<Option<usize>>) {
    let mut distinct: BTreeMap<&Vec<StopId>, (usize, usize)> = BTreeMap::new();
    for (i, t) in trips.iter().enumerate() {
        distinct.entry(&t.stops).or_insert((0, i)).0 += 1;
    }
    let mut order: Vec<(&Vec<StopId>, usize, usize)> = distinct.into_iter().map(|(k, (f, i))| (k, f, i)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut taken = vec![false; order.len()];
    let mut raw: Vec<(usize, Vec<usize>, usize)> = Vec::new();
    for s in 0..order.len() {
        if taken[s] {
            continue;
        }
        taken[s] = true;
        let seed = &trips[order[s].2];
        let mut members = vec![s];
        let mut freq = order[s].1;
        for m in s + 1..order.len() {
            if taken[m] {
                continue;
            }
            let t = &trips[order[m].2];
            if trip_similarity(net, (seed.origin(), seed.destination()), (t.origin(), t.destination())) <= radius_m {
                taken[m] = true;
                members.push(m);
                freq += order[m].1;
            }
        }
        raw.push((s, members, freq));
    }
    let min_f = (min_share * trips.len() as f64).ceil() as usize;
    let mut clusters = Vec::new();
    let mut of_key: BTreeMap<&Vec<StopId>, usize> = BTreeMap::new();
    for (s, members, freq) in raw {
        if freq < min_f.max(1) {
            continue;
        }
        let id = clusters.len();
        for &m in &members {
            of_key.insert(order[m].0, id);
        }
        let rep = &trips[order[s].2];
        clusters.push(TripCluster {
            id,
            stops: rep.stops.clone(),
            legs: rep.legs.clone(),
            members: members.iter().map(|&m| order[m].0.clone()).collect(),
            frequency: freq,
        });
    }
    let assign = trips.iter().map(|t| of_key.get(&t.stops).copied()).collect();
    (clusters, assign)
}
