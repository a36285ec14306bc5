//! Core domain types shared by every stage.

mod geo;
pub mod io;
mod network;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use geo::{bearing_angle, distance, LatLon, EARTH_RADIUS_M};
pub use network::{Leg, Network};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(
    /// Bus stop identifier.
    StopId
);
id_type!(
    /// Route identifier; one direction of a line.
    RouteId
);
id_type!(VehicleId);
id_type!(
    /// Smart-card number.
    CardId
);

/// Downtown stops use the tighter transfer radius.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    #[default]
    Downtown,
    Suburb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    #[serde(rename = "stop_id")]
    pub id: StopId,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub zone: Zone,
}

impl Stop {
    pub fn position(&self) -> LatLon {
        LatLon::new(self.lat, self.lon)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SpeedClass {
    #[default]
    Regular,
    Express,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: RouteId,
    pub direction: Direction,
    pub stops: Vec<StopId>,
    pub headway_min: f64,
    pub speed_class: SpeedClass,
}

impl Route {
    pub fn validate(&self) -> crate::Result<()> {
        if self.stops.len() < 2 {
            return Err(crate::Error::InvalidInput(format!(
                "route {} has fewer than 2 stops",
                self.id
            )));
        }
        if self.stops.windows(2).any(|w| w[0] == w[1]) {
            return Err(crate::Error::InvalidInput(format!(
                "route {} repeats a stop consecutively",
                self.id
            )));
        }
        if !(self.headway_min > 0.0) {
            return Err(crate::Error::InvalidInput(format!(
                "route {} has non-positive headway",
                self.id
            )));
        }
        Ok(())
    }
}

/// One AFC card tap. `boarding_stop` and `trip_index` are filled by time sync.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SwipeRecord {
    #[serde(rename = "card_id")]
    pub card: CardId,
    pub ts: i64,
    #[serde(rename = "vehicle_id")]
    pub vehicle: VehicleId,
    #[serde(rename = "route_id")]
    pub route: RouteId,
    #[serde(rename = "boarding_stop_id", default, skip_serializing_if = "Option::is_none")]
    pub boarding_stop: Option<StopId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip_index: Option<u32>,
}

impl SwipeRecord {
    pub fn new(card: CardId, ts: i64, vehicle: VehicleId, route: RouteId) -> Self {
        Self {
            card,
            ts,
            vehicle,
            route,
            boarding_stop: None,
            trip_index: None,
        }
    }
}

/// AVL arrive/depart report for one vehicle at one stop.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StopEvent {
    #[serde(rename = "vehicle_id")]
    pub vehicle: VehicleId,
    #[serde(rename = "route_id")]
    pub route: RouteId,
    pub trip_index: u32,
    #[serde(rename = "stop_id")]
    pub stop: StopId,
    pub arrive_ts: i64,
    pub depart_ts: i64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    #[serde(rename = "vehicle_id")]
    pub vehicle: VehicleId,
    #[serde(rename = "route_id")]
    pub route: RouteId,
    pub trip_index: u32,
    pub start_ts: i64,
}

/// All events of one vehicle run from the first to the last stop.
#[derive(Clone, Debug, PartialEq)]
pub struct TripRun {
    pub vehicle: VehicleId,
    pub route: RouteId,
    pub trip_index: u32,
    pub events: Vec<StopEvent>,
}

impl TripRun {
    /// Groups events into runs keyed by `(route, vehicle, trip_index)`, each sorted by arrival.
    pub fn group(events: &[StopEvent]) -> Vec<TripRun> {
        let mut map: std::collections::BTreeMap<(RouteId, VehicleId, u32), Vec<StopEvent>> =
            Default::default();
        for e in events {
            map.entry((e.route.clone(), e.vehicle.clone(), e.trip_index))
                .or_default()
                .push(e.clone());
        }
        map.into_iter()
            .map(|((route, vehicle, trip_index), mut events)| {
                events.sort_by_key(|e| (e.arrive_ts, e.depart_ts));
                TripRun {
                    vehicle,
                    route,
                    trip_index,
                    events,
                }
            })
            .collect()
    }

    pub fn start_ts(&self) -> Option<i64> {
        self.events.first().map(|e| e.arrive_ts)
    }

    /// Checks strict arrival order and that stops form a subsequence of the route.
    pub fn validate(&self, route: &Route) -> crate::Result<()> {
        if self.events.windows(2).any(|w| w[0].arrive_ts >= w[1].arrive_ts) {
            return Err(crate::Error::InvalidInput(format!(
                "trip {}#{} is not strictly increasing in arrive_ts",
                self.route, self.trip_index
            )));
        }
        let mut it = route.stops.iter();
        for e in &self.events {
            if e.arrive_ts > e.depart_ts {
                return Err(crate::Error::InvalidInput(format!(
                    "event at {} departs before it arrives",
                    e.stop
                )));
            }
            if !it.any(|s| *s == e.stop) {
                return Err(crate::Error::InvalidInput(format!(
                    "trip {}#{} visits {} out of route order",
                    self.route, self.trip_index, e.stop
                )));
            }
        }
        Ok(())
    }
}

/// Seconds per day; timestamps are local-time unix seconds.
pub const DAY_S: i64 = 86_400;

pub fn service_day(ts: i64) -> i64 {
    ts.div_euclid(DAY_S)
}

pub fn time_of_day(ts: i64) -> i64 {
    ts.rem_euclid(DAY_S)
}
