use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{City, GhostTruth, Population, TruthLedger, TruthSwipe, BASE_EPOCH};
use crate::model::{RouteId, ScheduleEntry, StopEvent, SwipeRecord, VehicleId, DAY_S};

/// Clean logs plus the ledger describing them.
#[derive(Clone, Debug, Default)]
pub struct SimOutput {
    pub schedule: Vec<ScheduleEntry>,
    pub avl: Vec<StopEvent>,
    pub swipes: Vec<SwipeRecord>,
    pub truth: TruthLedger,
}

struct Run {
    vehicle: VehicleId,
    trip_index: u32,
    arrive: Vec<i64>,
}

struct Boarding {
    route: usize,
    run: usize,
    pos: usize,
    reach_ts: i64,
    truth: TruthSwipe,
}

/// Seconds of delay between a vehicle's arrival and the first swipe.
fn truncated_exp(rng: &mut impl Rng, mean: f64, cap: f64) -> f64 {
    if cap <= 0.0 {
        return 0.0;
    }
    let u: f64 = rng.random();
    -mean * (1.0 - u * (1.0 - (-cap / mean).exp())).ln()
}

fn congestion(tod: i64, peak: f64) -> f64 {
    let h = tod as f64 / 3600.0;
    if (7.0..9.0).contains(&h) || (17.0..19.0).contains(&h) {
        peak
    } else {
        1.0
    }
}

struct DayOut {
    schedule: Vec<ScheduleEntry>,
    avl: Vec<StopEvent>,
    swipes: Vec<(SwipeRecord, TruthSwipe)>,
    ghosts: Vec<GhostTruth>,
}

fn simulate_day(city: &City, pop: &Population, day: u32) -> DayOut {
    let cfg = &city.config;
    let mut rng = cfg.rng(1000 + day as u64);
    let day0 = BASE_EPOCH + day as i64 * DAY_S;
    let net = &city.network;
    let mut schedule = Vec::new();
    let mut avl = Vec::new();
    let mut runs: Vec<Vec<Run>> = Vec::with_capacity(net.routes().len());
    let route_idx: HashMap<&RouteId, usize> = net.routes().iter().enumerate().map(|(i, r)| (&r.id, i)).collect();
    let unit = Normal::new(0.0, 1.0).unwrap();
    for r in net.routes() {
        let segs = &city.segments[&r.id];
        let mut rr = Vec::new();
        for (j, tod) in city.departures(&r.id).into_iter().enumerate() {
            let vehicle = city.vehicle_for(&r.id, j).clone();
            let trip_index = day * 1000 + j as u32;
            let start = day0 + tod;
            let factor = (1.0 + cfg.run_factor_sd * unit.sample(&mut rng)).clamp(0.7, 1.3);
            let mut arrive = Vec::with_capacity(r.stops.len());
            let mut t = start;
            for (k, stop) in r.stops.iter().enumerate() {
                let dwell = rng.random_range(cfg.dwell_s.0..=cfg.dwell_s.1);
                arrive.push(t);
                avl.push(StopEvent {
                    vehicle: vehicle.clone(),
                    route: r.id.clone(),
                    trip_index,
                    stop: stop.clone(),
                    arrive_ts: t,
                    depart_ts: t + dwell,
                    synthetic: false,
                });
                if let Some(seg) = segs.get(k) {
                    let depart = t + dwell;
                    let noise = (1.0 + seg.sigma_frac * unit.sample(&mut rng)).max(0.5);
                    let travel = seg.mean_s * congestion(depart - day0, cfg.peak_factor) * factor * noise;
                    t = depart + travel.round().max(1.0) as i64;
                }
            }
            schedule.push(ScheduleEntry {
                vehicle: vehicle.clone(),
                route: r.id.clone(),
                trip_index,
                start_ts: start,
            });
            rr.push(Run {
                vehicle,
                trip_index,
                arrive,
            });
        }
        runs.push(rr);
    }

    let mut boardings: Vec<Boarding> = Vec::new();
    let mut ghosts = Vec::new();
    for p in &pop.passengers {
        if rng.random::<f64>() < p.non_transit_rate {
            continue;
        }
        let Some(chain) = p.chains.iter().find(|c| rng.random::<f64>() < c.p_use) else {
            continue;
        };
        let mut t = day0 + chain.start_tod + (unit.sample(&mut rng) * 600.0).round() as i64;
        'journeys: for (ji, journey) in chain.journeys.iter().enumerate() {
            for (li, leg) in journey.legs.iter().enumerate() {
                let ri = route_idx[&leg.route];
                let (Some(pb), Some(pa)) = (
                    net.position_in_route(&leg.route, &leg.board),
                    net.position_in_route(&leg.route, &leg.alight),
                ) else {
                    break 'journeys;
                };
                let Some((run_i, run)) = runs[ri]
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| r.arrive[pb] >= t)
                    .min_by_key(|(_, r)| r.arrive[pb])
                else {
                    break 'journeys;
                };
                let alight_ts = run.arrive[pa];
                boardings.push(Boarding {
                    route: ri,
                    run: run_i,
                    pos: pb,
                    reach_ts: t,
                    truth: TruthSwipe {
                        card: p.card.clone(),
                        vehicle: run.vehicle.clone(),
                        route: leg.route.clone(),
                        trip_index: run.trip_index,
                        ts: 0,
                        emitted_ts: 0,
                        board_stop: leg.board.clone(),
                        alight_stop: leg.alight.clone(),
                        alight_ts,
                        day,
                        chain: chain.id,
                        journey: ji as u32,
                        leg: li as u32,
                    },
                });
                if cfg.ghost_rate > 0.0 && rng.random_bool(cfg.ghost_rate) {
                    ghosts.push(GhostTruth {
                        route: leg.route.clone(),
                        trip_index: run.trip_index,
                        board_stop: leg.board.clone(),
                        alight_stop: leg.alight.clone(),
                    });
                }
                t = alight_ts + 60;
            }
            if let Some(d) = chain.dwell_s.get(ji) {
                t += (*d + (unit.sample(&mut rng) * 900.0).round() as i64).max(1800);
            }
        }
    }

    boardings.sort_by(|a, b| {
        (a.route, a.run, a.pos, a.reach_ts, &a.truth.card).cmp(&(b.route, b.run, b.pos, b.reach_ts, &b.truth.card))
    });
    let mut swipes = Vec::with_capacity(boardings.len());
    let mut i = 0;
    while i < boardings.len() {
        let key = (boardings[i].route, boardings[i].run, boardings[i].pos);
        let arrive = runs[key.0][key.1].arrive[key.2];
        let cap = arrive + cfg.swipe_delay_cap_s;
        let mut ts = arrive + truncated_exp(&mut rng, cfg.swipe_delay_mean_s, cfg.swipe_delay_cap_s as f64).floor() as i64;
        let mut first = true;
        while i < boardings.len() && (boardings[i].route, boardings[i].run, boardings[i].pos) == key {
            if !first {
                ts += rng.random_range(cfg.swipe_gap_s.0..=cfg.swipe_gap_s.1);
            }
            first = false;
            let b = &mut boardings[i];
            let t = ts.min(cap);
            b.truth.ts = t;
            b.truth.emitted_ts = t;
            swipes.push((
                SwipeRecord::new(b.truth.card.clone(), t, b.truth.vehicle.clone(), b.truth.route.clone()),
                b.truth.clone(),
            ));
            i += 1;
        }
    }
    DayOut {
        schedule,
        avl,
        swipes,
        ghosts,
    }
}

/// Runs the timetable and the population for `n_days` days; output is canonically sorted.
pub fn simulate_days(city: &City, pop: &Population, n_days: usize) -> SimOutput {
    let days: Vec<DayOut> = (0..n_days as u32).into_par_iter().map(|d| simulate_day(city, pop, d)).collect();
    let mut out = SimOutput::default();
    let mut pairs = Vec::new();
    for d in days {
        out.schedule.extend(d.schedule);
        out.avl.extend(d.avl);
        pairs.extend(d.swipes);
        out.truth.ghosts.extend(d.ghosts);
    }
    out.schedule.sort_by(|a, b| (&a.vehicle, a.start_ts).cmp(&(&b.vehicle, b.start_ts)));
    out.avl.sort_by(|a, b| (&a.vehicle, a.arrive_ts, &a.stop).cmp(&(&b.vehicle, b.arrive_ts, &b.stop)));
    pairs.sort_by(|a, b| (&a.0.vehicle, a.0.ts, &a.0.card).cmp(&(&b.0.vehicle, b.0.ts, &b.0.card)));
    let (swipes, truth): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    out.swipes = swipes;
    out.truth.swipes = truth;
    out.truth.passengers = pop.passengers.clone();
    out
}

#[cfg(test)]
mod tests {
    use super::super::{generate_city, ChainTemplate, CityConfig, Passenger, PlannedJourney};
    use super::*;
    use crate::model::{CardId, StopId};

    fn small() -> (City, CityConfig) {
        let cfg = CityConfig {
            n_stops: 36,
            n_routes: 4,
            n_passengers: 80,
            n_days: 3,
            ..Default::default()
        };
        (generate_city(&cfg).unwrap(), cfg)
    }

    #[test]
    fn swipe_delays_and_gaps() {
        let (city, cfg) = small();
        let pop = super::super::generate_population(&cfg, &city).unwrap();
        let out = simulate_days(&city, &pop, cfg.n_days);
        assert!(!out.swipes.is_empty());
        let arrive: HashMap<(&RouteId, u32, &StopId), i64> =
            out.avl.iter().map(|e| ((&e.route, e.trip_index, &e.stop), e.arrive_ts)).collect();
        let mut gaps = Vec::new();
        for (s, t) in out.swipes.iter().zip(&out.truth.swipes) {
            assert_eq!(s.ts, t.ts);
            let a = arrive[&(&t.route, t.trip_index, &t.board_stop)];
            assert!(s.ts >= a && s.ts <= a + 30, "delay {}", s.ts - a);
            assert!(t.alight_ts > a);
        }
        for w in out.truth.swipes.windows(2) {
            if (&w[0].route, w[0].trip_index, &w[0].board_stop) == (&w[1].route, w[1].trip_index, &w[1].board_stop) {
                gaps.push(w[1].ts - w[0].ts);
            }
        }
        assert!(gaps.iter().all(|g| (0..=10).contains(g)));
        let below = gaps.iter().filter(|g| **g < 20).count();
        assert!(gaps.is_empty() || below as f64 >= 0.9 * gaps.len() as f64);
    }

    #[test]
    fn deterministic_logs() {
        let (city, cfg) = small();
        let pop = super::super::generate_population(&cfg, &city).unwrap();
        let a = simulate_days(&city, &pop, 2);
        let b = simulate_days(&city, &pop, 2);
        assert_eq!(a.swipes, b.swipes);
        assert_eq!(a.avl, b.avl);
        assert_eq!(a.truth, b.truth);
    }

    fn fixed_passenger(city: &City, p_use: f64) -> Passenger {
        let r = &city.network.routes()[0];
        let (a, b) = (r.stops[0].clone(), r.stops[3].clone());
        let mut rng = city.config.rng(77);
        let go = super::super::plan_journey(&city.network, &a, &b, &mut rng).unwrap();
        let back = super::super::plan_journey(&city.network, &b, &a, &mut rng).unwrap();
        assert_eq!(go.transfers() + back.transfers(), 0);
        Passenger {
            card: CardId::new("P1"),
            home: a,
            work: b,
            regular: true,
            non_transit_rate: 0.0,
            chains: vec![ChainTemplate {
                id: 0,
                journeys: vec![go, back] as Vec<PlannedJourney>,
                start_tod: 8 * 3600,
                dwell_s: vec![8 * 3600],
                p_use,
            }],
        }
    }

    #[test]
    fn single_chain_every_day() {
        let (city, _) = small();
        let pop = Population {
            passengers: vec![fixed_passenger(&city, 1.0)],
        };
        let out = simulate_days(&city, &pop, 1);
        assert_eq!(out.swipes.len(), 2);
        let out = simulate_days(&city, &pop, 5);
        let mut days: Vec<u32> = out.truth.swipes.iter().map(|t| t.day).collect();
        days.dedup();
        days.sort();
        days.dedup();
        assert_eq!(days, vec![0, 1, 2, 3, 4]);
    }
}
