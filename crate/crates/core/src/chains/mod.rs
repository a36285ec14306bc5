//! Closed trip-chain mining over multi-day journeys.
//!
//! Whole journeys are clustered per passenger, linked into a hyper trip graph and
//! searched for spatially closed loops. Analytics on top of the chains cover
//! home/work inference, behaviour and region clustering, and corridor weights.

mod activity;
mod associate;
mod behavior;
mod cluster;
mod htg;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::journeys::{estimate_home, Journey};
use crate::model::{service_day, CardId, Leg, Network, StopId};

pub use activity::{identify_home_work, stop_activity_vectors, HomeWork, StopActivityVector};
pub use associate::{associate_open_trips, completeness, support_coverage, Association};
pub use behavior::{
    behavior_clusters, behavior_vector, covariance_eigen, covering_prefix, dbscan, default_regions,
    extract_corridors, kmeans_objective, kmeans_pp, pca_2d, region_vector, BehaviorPoint, CorridorSegment,
};
pub use cluster::{cluster_trips, trip_similarity, TripCluster};
pub use htg::{build_htg, find_closed_chains, ClosedChain, HtgEdge, HyperTripGraph, LinkKind};

/// A whole journey reduced to its stop sequence: origin, transfer boardings, destination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainTrip {
    pub day: i64,
    pub start_ts: i64,
    pub end_ts: i64,
    pub stops: Vec<StopId>,
    pub legs: Vec<Leg>,
}

impl ChainTrip {
    pub fn origin(&self) -> &StopId {
        &self.stops[0]
    }

    pub fn destination(&self) -> &StopId {
        self.stops.last().unwrap()
    }

    /// Single-leg trip on a placeholder route.
    pub fn simple(o: &str, d: &str, start_ts: i64, end_ts: i64) -> Self {
        let (o, d) = (StopId::new(o), StopId::new(d));
        ChainTrip {
            day: service_day(start_ts),
            start_ts,
            end_ts,
            legs: vec![Leg {
                route: crate::model::RouteId::new("R"),
                board: o.clone(),
                alight: d.clone(),
            }],
            stops: vec![o, d],
        }
    }

    /// `None` when any ride of the journey lacks a boarding or alighting stop.
    pub fn from_journey(j: &Journey) -> Option<ChainTrip> {
        let mut stops = Vec::with_capacity(j.trips.len() + 1);
        let mut legs = Vec::with_capacity(j.trips.len());
        for t in &j.trips {
            let (b, a) = (t.board_stop.clone()?, t.alight_stop.clone()?);
            stops.push(b.clone());
            legs.push(Leg {
                route: t.route.clone(),
                board: b,
                alight: a,
            });
        }
        stops.push(legs.last()?.alight.clone());
        Some(ChainTrip {
            day: j.day,
            start_ts: j.start_ts(),
            end_ts: j.end_ts(),
            stops,
            legs,
        })
    }
}

/// Largest straight-line distance between any two stops.
pub fn chain_diameter(net: &Network, stops: &[&StopId]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, a) in stops.iter().enumerate() {
        for b in &stops[i + 1..] {
            d = d.max(net.stop_distance(a, b));
        }
    }
    d
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainParams {
    pub link_m: f64,
    pub closure_m: f64,
    pub min_share: f64,
    pub max_day_gap: i64,
    pub max_len: usize,
    pub window_days: Option<i64>,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub coverage: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            link_m: 700.0,
            closure_m: 500.0,
            min_share: 0.03,
            max_day_gap: 2,
            max_len: 6,
            window_days: None,
            dbscan_eps: 0.08,
            dbscan_min_pts: 20,
            coverage: 0.85,
        }
    }
}

/// Everything mined for one card.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassengerChains {
    pub card: CardId,
    pub trips: usize,
    pub clusters: Vec<TripCluster>,
    pub chains: Vec<ClosedChain>,
    /// Per day, open trips associated with chains.
    pub association: BTreeMap<i64, Association>,
    pub completeness: Option<f64>,
    pub home_work: HomeWork,
}

impl PassengerChains {
    pub fn chain_stops(&self, chain: &ClosedChain) -> Vec<StopId> {
        chain.vertices.iter().flat_map(|&v| self.clusters[v].stops.iter().cloned()).collect()
    }
}

/// Removes whole chain instances from a day's cluster records; the rest are open.
fn open_records(day: &[usize], chains: &[ClosedChain]) -> Vec<usize> {
    let mut left = day.to_vec();
    for c in chains {
        loop {
            let mut trial = left.clone();
            let complete = c.vertices.iter().all(|v| match trial.iter().position(|x| x == v) {
                Some(p) => {
                    trial.remove(p);
                    true
                }
                None => false,
            });
            if !complete {
                break;
            }
            left = trial;
        }
    }
    left
}

/// Mines one passenger's chains from chain trips in chronological order.
pub fn mine_passenger(card: CardId, trips: &[ChainTrip], net: &Network, params: &ChainParams) -> PassengerChains {
    let (clusters, assign) = cluster_trips(trips, net, params.link_m, params.min_share);
    let g = build_htg(clusters, trips, &assign, net, params.link_m, params.max_day_gap);
    let chains = find_closed_chains(&g, net, params.closure_m, params.max_len);
    for c in &chains {
        assert!(c.closure_m <= params.closure_m, "chain closure {} exceeds {}", c.closure_m, params.closure_m);
    }
    let mut by_day: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (t, a) in trips.iter().zip(&assign) {
        if let Some(c) = a {
            by_day.entry(t.day).or_default().push(*c);
        }
    }
    let vertex_lists: Vec<Vec<usize>> = chains.iter().map(|c| c.vertices.clone()).collect();
    let association = by_day
        .into_iter()
        .filter_map(|(d, recs)| {
            let open = open_records(&recs, &chains);
            (!open.is_empty()).then(|| (d, associate_open_trips(&vertex_lists, &open)))
        })
        .collect();
    let mut firsts: BTreeMap<i64, (StopId, i64)> = BTreeMap::new();
    for t in trips {
        firsts.entry(t.day).or_insert_with(|| (t.origin().clone(), t.start_ts));
    }
    let firsts: Vec<(StopId, i64)> = firsts.into_values().collect();
    let home_work = identify_home_work(&stop_activity_vectors(trips), estimate_home(&firsts));
    PassengerChains {
        card,
        trips: trips.len(),
        completeness: completeness(&chains, trips.len()),
        clusters: g.vertices,
        chains,
        association,
        home_work,
    }
}

/// Groups journeys by card, keeps the first `window_days` service days, and mines each card in parallel.
pub fn mine_all(journeys: &[Journey], net: &Network, params: &ChainParams) -> Vec<PassengerChains> {
    let first_day = journeys.iter().map(|j| j.day).min().unwrap_or(0);
    let mut by_card: HashMap<&CardId, Vec<ChainTrip>> = HashMap::new();
    for j in journeys {
        if params.window_days.is_some_and(|w| j.day - first_day >= w) {
            continue;
        }
        if let Some(t) = ChainTrip::from_journey(j) {
            by_card.entry(&j.card).or_default().push(t);
        }
    }
    let mut cards: Vec<(&CardId, Vec<ChainTrip>)> = by_card.into_iter().collect();
    cards.sort_by(|a, b| a.0.cmp(b.0));
    cards
        .into_par_iter()
        .map(|(card, mut trips)| {
            trips.sort_by_key(|t| t.start_ts);
            mine_passenger(card.clone(), &trips, net, params)
        })
        .collect()
}
