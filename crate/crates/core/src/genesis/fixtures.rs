//! Small hand-shaped scenarios used by tests, benchmarks and replication presets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::assign::{sample_choices, PassengerDemand};
use crate::choice::{enumerate_alternatives, probabilities, ChoiceParams, ChoiceStage, Eta, ModelIndex, PreferenceModel, MACRO_OWNER};
use crate::journeys::{AlightMethod, Journey, Trip};
use crate::model::{
    CardId, Direction, LatLon, Leg, Network, Route, RouteId, SpeedClass, Stop, StopEvent, StopId, SwipeRecord,
    VehicleId, Zone, DAY_S,
};

use super::BASE_EPOCH;

/// One vehicle shuttling along a corridor for a service day.
#[derive(Clone, Debug)]
pub struct VehicleDay {
    pub network: Network,
    pub events: Vec<StopEvent>,
    /// Swipes on the offset clock.
    pub swipes: Vec<SwipeRecord>,
    /// True boarding stop of each swipe.
    pub true_stops: Vec<StopId>,
    pub offset: i64,
}

/// `n` stops spaced `spacing_m` apart heading east, served up and down.
pub fn corridor(n: usize, spacing_m: f64, headway_min: f64) -> Network {
    let o = LatLon::new(22.2, 113.5);
    let stops: Vec<Stop> = (0..n)
        .map(|i| {
            let p = o.offset_m(spacing_m * i as f64, 0.0);
            Stop {
                id: StopId(format!("K{i:02}")),
                name: format!("Corridor {i}"),
                lat: p.lat,
                lon: p.lon,
                zone: Zone::Downtown,
            }
        })
        .collect();
    let up: Vec<StopId> = stops.iter().map(|s| s.id.clone()).collect();
    let down: Vec<StopId> = up.iter().rev().cloned().collect();
    let routes = vec![
        Route {
            id: RouteId::new("KU"),
            direction: Direction::Up,
            stops: up,
            headway_min,
            speed_class: SpeedClass::Regular,
        },
        Route {
            id: RouteId::new("KD"),
            direction: Direction::Down,
            stops: down,
            headway_min,
            speed_class: SpeedClass::Regular,
        },
    ];
    Network::new(stops, routes).expect("valid corridor")
}

fn trunc_exp(rng: &mut impl Rng, mean: f64, cap: f64) -> i64 {
    let u: f64 = rng.random();
    (-mean * (1.0 - u * (1.0 - (-cap / mean).exp())).ln()).floor() as i64
}

/// A vehicle-day with swipes at roughly `1 − sparsity` of its stop events and the AFC clock
/// shifted by `offset` seconds.
pub fn vehicle_day(seed: u64, offset: i64, sparsity: f64) -> VehicleDay {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 18;
    let network = corridor(n, 600.0, 10.0);
    let vehicle = VehicleId::new("V1");
    let mut events = Vec::new();
    let mut t = BASE_EPOCH + rng.random_range(0..30) * DAY_S + 6 * 3600 + rng.random_range(0..600);
    let mut trip = 0u32;
    while t < BASE_EPOCH + 60 * DAY_S && events.len() < 20 * n {
        let route = if trip % 2 == 0 { "KU" } else { "KD" };
        let r = network.route(&RouteId::new(route)).unwrap().clone();
        for s in &r.stops {
            let dwell = rng.random_range(25..=35);
            events.push(StopEvent {
                vehicle: vehicle.clone(),
                route: r.id.clone(),
                trip_index: trip,
                stop: s.clone(),
                arrive_ts: t,
                depart_ts: t + dwell,
                synthetic: false,
            });
            t += dwell + rng.random_range(60..=250);
        }
        t += rng.random_range(300..900);
        trip += 1;
    }
    let mut swipes = Vec::new();
    let mut true_stops = Vec::new();
    let mut card = 0;
    for e in &events {
        if !rng.random_bool((1.0 - sparsity).clamp(0.0, 1.0)) {
            continue;
        }
        let k = rng.random_range(1..=5);
        let mut ts = e.arrive_ts + trunc_exp(&mut rng, 8.0, 30.0);
        for i in 0..k {
            if i > 0 {
                ts += rng.random_range(1..=10);
            }
            card += 1;
            swipes.push(SwipeRecord::new(
                CardId(format!("c{card}")),
                ts.min(e.arrive_ts + 30) + offset,
                vehicle.clone(),
                e.route.clone(),
            ));
            true_stops.push(e.stop.clone());
        }
    }
    VehicleDay {
        network,
        events,
        swipes,
        true_stops,
        offset,
    }
}

fn line_stops(prefix: &str, n: usize, spacing_m: f64, north_m: f64) -> Vec<Stop> {
    let o = LatLon::new(22.25, 113.52);
    (0..n)
        .map(|i| {
            let p = o.offset_m(spacing_m * i as f64, north_m);
            Stop {
                id: StopId(format!("{prefix}{i:02}")),
                name: format!("{prefix} {i}"),
                lat: p.lat,
                lon: p.lon,
                zone: Zone::Suburb,
            }
        })
        .collect()
}

fn route(id: &str, stops: Vec<StopId>, headway_min: f64, speed_class: SpeedClass) -> Route {
    Route {
        id: RouteId::new(id),
        direction: Direction::Up,
        stops,
        headway_min,
        speed_class,
    }
}

/// Weights used for every scenario of the toy corridor's planted population.
pub const TOY_WEIGHTS: [f64; 8] = [1.0, 0.5, 0.0, 3.0, 1.0, 2.0, 1.0, 2.0];

/// Ten stops 2 km apart on one regular route, demand on every forward OD, one planted macro model per scenario.
#[derive(Clone, Debug)]
pub struct ToyCorridor {
    pub network: Network,
    pub base_route: RouteId,
    pub demand: Vec<PassengerDemand>,
    pub models: ModelIndex,
}

pub fn toy_corridor() -> ToyCorridor {
    let stops = line_stops("T", 10, 2000.0, 0.0);
    let ids: Vec<StopId> = stops.iter().map(|s| s.id.clone()).collect();
    let base = route("B", ids.clone(), 10.0, SpeedClass::Regular);
    let network = Network::new(stops, vec![base.clone()]).expect("valid toy corridor");
    let mut demand = Vec::new();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let count = (40.0 * (-((j - i) as f64) / 6.0).exp() + 5.0).round();
            demand.push(PassengerDemand {
                card: CardId(format!("t{i}{j}")),
                origin: ids[i].clone(),
                dest: ids[j].clone(),
                legs: vec![Leg {
                    route: base.id.clone(),
                    board: ids[i].clone(),
                    alight: ids[j].clone(),
                }],
                count,
                home: None,
                work: None,
            });
        }
    }
    let models = (0..256u32).map(|bits| {
        let eta = Eta(std::array::from_fn(|k| bits >> (7 - k) & 1 == 1));
        PreferenceModel {
            owner: MACRO_OWNER.into(),
            eta,
            weights: std::array::from_fn(|k| eta.0[k].then_some(TOY_WEIGHTS[k])),
            b: 0.0,
            r2: 1.0,
            support: 1.0,
            clipped: false,
        }
    });
    ToyCorridor {
        network,
        base_route: base.id,
        demand,
        models: ModelIndex::new(models),
    }
}

/// A passenger whose choices follow known factor weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedChooser {
    pub card: CardId,
    pub home: StopId,
    pub work: StopId,
    pub weights: [f64; 8],
    pub trips: usize,
}

/// Corridor scenario where one route is later treated as new.
#[derive(Clone, Debug)]
pub struct RedistributionScenario {
    /// Network without the target route.
    pub base: Network,
    pub target: Route,
    pub choosers: Vec<PlantedChooser>,
    /// Observed rides drawn from the planted models on the full network.
    pub journeys: Vec<Journey>,
}

/// Twelve corridor stops with a local, an express and a parallel street line; the target route
/// duplicates the corridor at its own headway. Choosers fall into four planted preference types.
pub fn redistribution_scenario(seed: u64, n_choosers: usize) -> RedistributionScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corridor_stops = line_stops("C", 12, 800.0, 0.0);
    let street_stops = line_stops("P", 12, 800.0, 250.0);
    let c: Vec<StopId> = corridor_stops.iter().map(|s| s.id.clone()).collect();
    let p: Vec<StopId> = street_stops.iter().map(|s| s.id.clone()).collect();
    let express: Vec<StopId> = [0, 3, 6, 9, 11].iter().map(|&i| c[i].clone()).collect();
    let routes = vec![
        route("L1", c.clone(), 15.0, SpeedClass::Regular),
        route("X2", express, 20.0, SpeedClass::Express),
        route("P3", p, 4.0, SpeedClass::Regular),
    ];
    let stops: Vec<Stop> = corridor_stops.into_iter().chain(street_stops).collect();
    let base = Network::new(stops, routes).expect("valid scenario network");
    let target = route("504", c.clone(), 8.0, SpeedClass::Regular);
    let full = base.with_route(target.clone()).expect("valid scenario network");
    let params = ChoiceParams::default();
    let mut choosers = Vec::with_capacity(n_choosers);
    let mut journeys = Vec::new();
    for k in 0..n_choosers {
        let i = rng.random_range(0..c.len() - 2);
        let j = rng.random_range(i + 2..c.len());
        let mut weights: [f64; 8] = std::array::from_fn(|_| rng.random_range(0.5..2.0));
        weights[5] = rng.random_range(3.0..5.0);
        let dominant = [5, 7, 7, 3][k % 4];
        weights[dominant] = rng.random_range(8.0..12.0);
        let chooser = PlantedChooser {
            card: CardId(format!("p{k:04}")),
            home: c[i].clone(),
            work: c[j].clone(),
            weights,
            trips: rng.random_range(30..=50),
        };
        let plans = enumerate_alternatives(&full, &chooser.home, &chooser.work, Some(&chooser.home), Some(&chooser.work), &params);
        let raw: Vec<[f64; 8]> = plans.iter().map(|pl| pl.features.to_array()).collect();
        let stage = ChoiceStage::new(&raw, vec![0.0; raw.len()]);
        let probs = probabilities(&weights, &stage.eta, &stage.x);
        for d in 0..chooser.trips {
            let pick = sample_choices(&probs, 1, &mut rng);
            let idx = pick.iter().position(|&x| x == 1).unwrap();
            let leg = &plans[idx].legs[0];
            let board_ts = BASE_EPOCH + d as i64 * DAY_S + 8 * 3600 + rng.random_range(0..3600);
            journeys.push(Journey {
                card: chooser.card.clone(),
                day: crate::model::service_day(board_ts),
                trips: vec![Trip {
                    card: chooser.card.clone(),
                    route: leg.route.clone(),
                    vehicle: VehicleId(format!("{}-v", leg.route)),
                    trip_index: None,
                    board_stop: Some(leg.board.clone()),
                    board_ts,
                    alight_stop: Some(leg.alight.clone()),
                    alight_ts: Some(board_ts + plans[idx].features.travel_time_s as i64),
                    alight_method: AlightMethod::Continuous,
                    candidates: Vec::new(),
                }],
                stages: Vec::new(),
                short_activity_after: false,
            });
        }
        choosers.push(chooser);
    }
    RedistributionScenario {
        base,
        target,
        choosers,
        journeys,
    }
}
