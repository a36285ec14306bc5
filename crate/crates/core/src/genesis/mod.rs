//! Deterministic synthetic city: network, timetable, passengers, clean logs, ground truth and
//! controlled corruption.

mod city;
mod corrupt;
pub mod fixtures;
mod population;
mod simulate;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{CardId, Leg, RouteId, StopEvent, StopId, VehicleId};
use crate::{Error, Result};

pub use city::{generate_city, City, SegmentParams};
pub use corrupt::{corrupt, sample_burst_len, sample_offsets, CorruptionSpec, BURST_LEN_PMF};
pub use population::{
    generate_population, plan_journey, robustness_preset, ChainTemplate, Passenger, PlannedJourney,
    Population, RobustnessChain,
};
pub use simulate::{simulate_days, SimOutput};

/// First simulated day: 2016-03-01 00:00 in local-time seconds.
pub const BASE_EPOCH: i64 = 1_456_790_400;

/// Parameters of the synthetic city and its population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CityConfig {
    pub rng_seed: u64,
    pub n_stops: usize,
    /// Number of lines; each line runs in both directions when `bidirectional`.
    pub n_routes: usize,
    pub bidirectional: bool,
    /// Stops per line; `None` picks about 60% of the grid side squared, capped at 20.
    pub route_len: Option<usize>,
    pub n_passengers: usize,
    pub n_days: usize,
    pub extent_km: f64,
    pub seg_mean_bounds_s: (f64, f64),
    pub seg_sigma_frac: (f64, f64),
    pub run_factor_sd: f64,
    pub peak_factor: f64,
    pub swipe_delay_mean_s: f64,
    pub swipe_delay_cap_s: i64,
    pub swipe_gap_s: (i64, i64),
    pub dwell_s: (i64, i64),
    pub headways_min: Vec<f64>,
    pub service_start_h: f64,
    pub service_end_h: f64,
    pub regular_share: f64,
    pub non_transit_rate: f64,
    pub suburb_ring: f64,
    pub ghost_rate: f64,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self {
            rng_seed: 1,
            n_stops: 64,
            n_routes: 6,
            bidirectional: true,
            route_len: None,
            n_passengers: 200,
            n_days: 14,
            extent_km: 6.0,
            seg_mean_bounds_s: (60.0, 250.0),
            seg_sigma_frac: (0.05, 0.12),
            run_factor_sd: 0.08,
            peak_factor: 1.25,
            swipe_delay_mean_s: 8.0,
            swipe_delay_cap_s: 30,
            swipe_gap_s: (1, 10),
            dwell_s: (25, 35),
            headways_min: vec![6.0, 8.0, 10.0, 12.0, 15.0],
            service_start_h: 6.0,
            service_end_h: 22.0,
            regular_share: 0.25,
            non_transit_rate: 0.3,
            suburb_ring: 0.35,
            ghost_rate: 0.0,
        }
    }
}

impl CityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.n_stops < 2 {
            return bad("n_stops must be at least 2");
        }
        if self.n_routes == 0 {
            return bad("n_routes must be positive");
        }
        if self.n_days == 0 {
            return bad("n_days must be at least 1");
        }
        if let Some(l) = self.route_len {
            if l < 2 {
                return bad("route_len must be at least 2");
            }
            if l > self.n_stops {
                return bad("route_len exceeds n_stops");
            }
        }
        let (lo, hi) = self.seg_mean_bounds_s;
        if !(lo > 0.0 && lo <= hi) {
            return bad("segment mean bounds must satisfy 0 < lo <= hi");
        }
        if self.seg_sigma_frac.0 < 0.0 || self.seg_sigma_frac.1 < self.seg_sigma_frac.0 || self.run_factor_sd < 0.0 {
            return bad("sigma parameters must be non-negative");
        }
        if self.swipe_delay_cap_s < 0 || self.swipe_gap_s.0 < 1 || self.swipe_gap_s.1 < self.swipe_gap_s.0 {
            return bad("swipe timing parameters out of range");
        }
        if self.dwell_s.0 < 0 || self.dwell_s.1 < self.dwell_s.0 {
            return bad("dwell bounds out of range");
        }
        if self.headways_min.is_empty() || self.headways_min.iter().any(|h| !(*h > 0.0)) {
            return bad("headways must be positive");
        }
        if !(self.service_start_h >= 0.0 && self.service_start_h < self.service_end_h && self.service_end_h <= 24.0) {
            return bad("service window out of range");
        }
        for (name, p) in [
            ("regular_share", self.regular_share),
            ("non_transit_rate", self.non_transit_rate),
            ("ghost_rate", self.ghost_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0,1]")));
            }
        }
        if self.extent_km <= 0.0 {
            return bad("extent_km must be positive");
        }
        Ok(())
    }

    pub(crate) fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(stream);
        rng
    }
}

/// Ground truth for one emitted swipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSwipe {
    pub card: CardId,
    pub vehicle: VehicleId,
    pub route: RouteId,
    pub trip_index: u32,
    /// Swipe time on the AVL clock.
    pub ts: i64,
    /// Time as written to the corrupted log.
    pub emitted_ts: i64,
    pub board_stop: StopId,
    pub alight_stop: StopId,
    pub alight_ts: i64,
    pub day: u32,
    pub chain: u32,
    pub journey: u32,
    pub leg: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetTruth {
    pub vehicle: VehicleId,
    /// Service day (unix day number).
    pub day: i64,
    /// Seconds added to the vehicle's AFC clock.
    pub offset_s: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GhostTruth {
    pub route: RouteId,
    pub trip_index: u32,
    pub board_stop: StopId,
    pub alight_stop: StopId,
}

/// Everything the recovery stages are scored against.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthLedger {
    /// Aligned one-to-one with the emitted swipe list.
    pub swipes: Vec<TruthSwipe>,
    pub passengers: Vec<Passenger>,
    pub offsets: Vec<OffsetTruth>,
    pub deleted_events: Vec<StopEvent>,
    pub ghosts: Vec<GhostTruth>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthFact {
    Swipe(TruthSwipe),
    Passenger(Passenger),
    Offset(OffsetTruth),
    DeletedEvent(StopEvent),
    Ghost(GhostTruth),
}

impl TruthLedger {
    pub fn facts(&self) -> Vec<TruthFact> {
        let mut v = Vec::with_capacity(
            self.swipes.len() + self.passengers.len() + self.offsets.len() + self.deleted_events.len(),
        );
        v.extend(self.passengers.iter().cloned().map(TruthFact::Passenger));
        v.extend(self.swipes.iter().cloned().map(TruthFact::Swipe));
        v.extend(self.offsets.iter().cloned().map(TruthFact::Offset));
        v.extend(self.deleted_events.iter().cloned().map(TruthFact::DeletedEvent));
        v.extend(self.ghosts.iter().cloned().map(TruthFact::Ghost));
        v
    }

    pub fn from_facts(facts: Vec<TruthFact>) -> Self {
        let mut l = TruthLedger::default();
        for f in facts {
            match f {
                TruthFact::Swipe(s) => l.swipes.push(s),
                TruthFact::Passenger(p) => l.passengers.push(p),
                TruthFact::Offset(o) => l.offsets.push(o),
                TruthFact::DeletedEvent(e) => l.deleted_events.push(e),
                TruthFact::Ghost(g) => l.ghosts.push(g),
            }
        }
        l
    }

    pub fn passenger(&self, card: &CardId) -> Option<&Passenger> {
        self.passengers.iter().find(|p| &p.card == card)
    }
}

/// Legs of a ride as seen in the truth ledger.
pub fn truth_leg(t: &TruthSwipe) -> Leg {
    Leg {
        route: t.route.clone(),
        board: t.board_stop.clone(),
        alight: t.alight_stop.clone(),
    }
}
