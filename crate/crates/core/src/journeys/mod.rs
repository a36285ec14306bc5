//! Passenger trajectory reconstruction: alighting inference, stage identification, ridership analytics.

mod alight;
mod analytics;
mod stages;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{CardId, Network, RouteId, StopEvent, StopId, VehicleId};

pub use alight::{
    candidates_for, day_similarity, estimate_home, infer_alighting_continuous, infer_alighting_probabilistic,
    infer_last_alighting, reconstruct_trips, LastReference,
};
pub use analytics::{
    average_linkage, cut_tree, occupancy, segment_profiles, stop_flows, Analytics, Merge, OccupancyCell, SegmentProfile, StopFlow,
    CAPACITY,
};
pub use stages::{identify_stages, TransferCheck};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlightMethod {
    Continuous,
    ClosedChain,
    HomeRef,
    Probabilistic,
    Unresolved,
}

/// One boarding-to-alighting ride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub card: CardId,
    pub route: RouteId,
    pub vehicle: VehicleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip_index: Option<u32>,
    pub board_stop: Option<StopId>,
    pub board_ts: i64,
    pub alight_stop: Option<StopId>,
    pub alight_ts: Option<i64>,
    pub alight_method: AlightMethod,
    /// Candidate alighting stops, kept for trips that reached a later stage.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<StopId>,
}

impl Trip {
    pub fn day(&self) -> i64 {
        crate::model::service_day(self.board_ts)
    }

    pub fn resolved(&self) -> bool {
        self.alight_stop.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageLabel {
    O,
    T,
    D,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageVisit {
    pub label: StageLabel,
    pub stop: Option<StopId>,
    pub ts: Option<i64>,
}

/// An O-T-D sequence of trips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Journey {
    pub card: CardId,
    pub day: i64,
    pub trips: Vec<Trip>,
    pub stages: Vec<StageVisit>,
    /// The gap to the card's next journey that day passed distance and time but not line or purpose.
    pub short_activity_after: bool,
}

impl Journey {
    pub fn origin(&self) -> Option<&StopId> {
        self.trips.first()?.board_stop.as_ref()
    }

    pub fn destination(&self) -> Option<&StopId> {
        self.trips.last()?.alight_stop.as_ref()
    }

    pub fn start_ts(&self) -> i64 {
        self.trips[0].board_ts
    }

    pub fn end_ts(&self) -> i64 {
        let last = self.trips.last().unwrap();
        last.alight_ts.unwrap_or(last.board_ts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JourneyParams {
    /// Walking radius for continuous-trip and last-trip inference.
    pub walk_radius_m: f64,
    pub next_day_min_m: f64,
    pub next_day_before_s: i64,
    pub max_day_gap: i64,
    pub similar_eps: f64,
    pub equivalent_m: f64,
    pub transfer_downtown_m: f64,
    pub transfer_suburb_m: f64,
    pub walk_speed: f64,
    pub max_passed_vehicles: usize,
    pub purpose_ratio: f64,
}

impl Default for JourneyParams {
    fn default() -> Self {
        Self {
            walk_radius_m: 700.0,
            next_day_min_m: 10_000.0,
            next_day_before_s: 8 * 3600 + 1800,
            max_day_gap: 2,
            similar_eps: 0.7,
            equivalent_m: 300.0,
            transfer_downtown_m: 500.0,
            transfer_suburb_m: 700.0,
            walk_speed: 1.2,
            max_passed_vehicles: 3,
            purpose_ratio: 2.0,
        }
    }
}

/// Event lookups shared by the alighting and staging passes.
pub struct AvlIndex {
    runs: HashMap<(VehicleId, RouteId, u32), Vec<StopEvent>>,
    at_stop: HashMap<StopId, Vec<(i64, RouteId)>>,
}

impl AvlIndex {
    pub fn new(events: &[StopEvent]) -> Self {
        let mut runs: HashMap<(VehicleId, RouteId, u32), Vec<StopEvent>> = HashMap::new();
        let mut at_stop: HashMap<StopId, Vec<(i64, RouteId)>> = HashMap::new();
        for e in events {
            runs.entry((e.vehicle.clone(), e.route.clone(), e.trip_index)).or_default().push(e.clone());
            at_stop.entry(e.stop.clone()).or_default().push((e.arrive_ts, e.route.clone()));
        }
        for v in runs.values_mut() {
            v.sort_by_key(|e| e.arrive_ts);
        }
        for v in at_stop.values_mut() {
            v.sort();
        }
        Self { runs, at_stop }
    }

    pub fn run(&self, vehicle: &VehicleId, route: &RouteId, trip_index: u32) -> Option<&[StopEvent]> {
        self.runs
            .get(&(vehicle.clone(), route.clone(), trip_index))
            .map(Vec::as_slice)
    }

    /// Arrivals at `stop` within `[from, to]`.
    pub fn arrivals(&self, stop: &StopId, from: i64, to: i64) -> impl Iterator<Item = &(i64, RouteId)> {
        let v = self.at_stop.get(stop).map(Vec::as_slice).unwrap_or(&[]);
        let lo = v.partition_point(|x| x.0 < from);
        let hi = v.partition_point(|x| x.0 <= to);
        v[lo..hi.max(lo)].iter()
    }
}

/// Full reconstruction: trips with alightings, then journeys.
pub fn reconstruct(
    swipes: &[crate::model::SwipeRecord],
    events: &[StopEvent],
    net: &Network,
    params: &JourneyParams,
) -> (Vec<Trip>, Vec<Journey>) {
    let index = AvlIndex::new(events);
    let trips = reconstruct_trips(swipes, &index, net, params);
    let journeys = identify_stages(&trips, &index, net, params);
    (trips, journeys)
}
