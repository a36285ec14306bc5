use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CityConfig;
use crate::model::{distance, Direction, LatLon, Network, Route, RouteId, SpeedClass, Stop, StopId, VehicleId, Zone};
use crate::{Error, Result};

const CENTER: LatLon = LatLon::new(22.25, 113.55);
const BUS_SPEED_MPS: f64 = 20.0 / 3.6;

/// Travel-time law of one route segment (stop k to k+1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub mean_s: f64,
    pub sigma_frac: f64,
}

#[derive(Clone, Debug)]
pub struct City {
    pub config: CityConfig,
    pub network: Network,
    pub segments: HashMap<RouteId, Vec<SegmentParams>>,
    pub fleets: HashMap<RouteId, Vec<VehicleId>>,
}

impl City {
    /// Departure times of day (seconds) from the first stop.
    pub fn departures(&self, route: &RouteId) -> Vec<i64> {
        let r = self.network.route(route).expect("known route");
        let h = (r.headway_min * 60.0).round() as i64;
        let start = (self.config.service_start_h * 3600.0).round() as i64;
        let end = (self.config.service_end_h * 3600.0).round() as i64;
        (0..).map(|j| start + j * h).take_while(|&t| t <= end).collect()
    }

    /// Vehicle operating the `j`-th departure of a day.
    pub fn vehicle_for(&self, route: &RouteId, j: usize) -> &VehicleId {
        let fleet = &self.fleets[route];
        &fleet[j % fleet.len()]
    }

    pub fn vehicles(&self) -> Vec<VehicleId> {
        let mut v: Vec<VehicleId> = self.fleets.values().flatten().cloned().collect();
        v.sort();
        v
    }

    /// Upper bound on the duration of one run, in seconds.
    fn max_runtime(segments: &[SegmentParams], cfg: &CityConfig) -> f64 {
        let ride: f64 = segments.iter().map(|s| s.mean_s * (1.0 + 3.0 * s.sigma_frac)).sum();
        ride * cfg.peak_factor * (1.0 + 3.0 * cfg.run_factor_sd) + (segments.len() + 1) as f64 * cfg.dwell_s.1 as f64
    }
}

fn default_route_len(cfg: &CityConfig, side: usize) -> usize {
    (side * 3 / 2).clamp(2, 20).min(cfg.n_stops)
}

/// Builds a jittered-grid city whose lines are self-avoiding walks; every line after the first
/// starts on an existing line stop so the network is connected.
pub fn generate_city(cfg: &CityConfig) -> Result<City> {
    cfg.validate()?;
    let mut rng = cfg.rng(0);
    let n = cfg.n_stops;
    let side = (n as f64).sqrt().ceil() as usize;
    let spacing = cfg.extent_km * 1000.0 / side as f64;
    let half = cfg.extent_km * 500.0;
    let cells: Vec<(i64, i64)> = (0..n).map(|i| ((i / side) as i64, (i % side) as i64)).collect();
    let stops: Vec<Stop> = cells
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| {
            let east = (c as f64 + 0.5) * spacing - half + rng.random_range(-0.2..0.2) * spacing;
            let north = (r as f64 + 0.5) * spacing - half + rng.random_range(-0.2..0.2) * spacing;
            let p = CENTER.offset_m(east, north);
            let outer = east.abs().max(north.abs()) / half > 1.0 - cfg.suburb_ring;
            Stop {
                id: StopId(format!("S{i:03}")),
                name: format!("Stop {i}"),
                lat: p.lat,
                lon: p.lon,
                zone: if outer { Zone::Suburb } else { Zone::Downtown },
            }
        })
        .collect();
    let index: HashMap<(i64, i64), usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let want = cfg.route_len.unwrap_or_else(|| default_route_len(cfg, side));

    let mut on_line: HashSet<usize> = HashSet::new();
    let mut lines: Vec<Vec<usize>> = Vec::with_capacity(cfg.n_routes);
    for _ in 0..cfg.n_routes {
        let mut best: Vec<usize> = Vec::new();
        for _attempt in 0..50 {
            let start = if on_line.is_empty() {
                rng.random_range(0..n)
            } else {
                let pool: Vec<usize> = {
                    let mut v: Vec<usize> = on_line.iter().copied().collect();
                    v.sort_unstable();
                    v
                };
                pool[rng.random_range(0..pool.len())]
            };
            let walk = self_avoiding_walk(start, want, &cells, &index, &on_line, &mut rng);
            if walk.len() > best.len() {
                best = walk;
            }
            if best.len() == want {
                break;
            }
        }
        if best.len() < 2 {
            return Err(Error::Config("could not lay out a line of two stops".into()));
        }
        on_line.extend(best.iter().copied());
        lines.push(best);
    }

    let mut routes = Vec::new();
    let mut segments = HashMap::new();
    for (k, line) in lines.iter().enumerate() {
        let headway = cfg.headways_min[rng.random_range(0..cfg.headways_min.len())];
        let segs: Vec<SegmentParams> = line
            .windows(2)
            .map(|w| {
                let d = distance(stops[w[0]].position(), stops[w[1]].position());
                SegmentParams {
                    mean_s: (d / BUS_SPEED_MPS + 15.0).clamp(cfg.seg_mean_bounds_s.0, cfg.seg_mean_bounds_s.1),
                    sigma_frac: rng.random_range(cfg.seg_sigma_frac.0..=cfg.seg_sigma_frac.1),
                }
            })
            .collect();
        let ids: Vec<StopId> = line.iter().map(|&i| stops[i].id.clone()).collect();
        if cfg.bidirectional {
            let up = RouteId(format!("L{k:02}U"));
            let down = RouteId(format!("L{k:02}D"));
            let mut rev = ids.clone();
            rev.reverse();
            let mut rsegs = segs.clone();
            rsegs.reverse();
            routes.push(route(up.clone(), Direction::Up, ids, headway));
            routes.push(route(down.clone(), Direction::Down, rev, headway));
            segments.insert(up, segs);
            segments.insert(down, rsegs);
        } else {
            let id = RouteId(format!("L{k:02}"));
            routes.push(route(id.clone(), Direction::Up, ids, headway));
            segments.insert(id, segs);
        }
    }

    let fleets = routes
        .iter()
        .map(|r| {
            let cycle = City::max_runtime(&segments[&r.id], cfg) + 600.0;
            let size = (cycle / (r.headway_min * 60.0)).ceil().max(1.0) as usize;
            let vs = (0..size).map(|v| VehicleId(format!("{}-{v:02}", r.id))).collect();
            (r.id.clone(), vs)
        })
        .collect();
    let network = Network::new(stops, routes)?;
    Ok(City {
        config: cfg.clone(),
        network,
        segments,
        fleets,
    })
}

fn route(id: RouteId, direction: Direction, stops: Vec<StopId>, headway_min: f64) -> Route {
    Route {
        id,
        direction,
        stops,
        headway_min,
        speed_class: SpeedClass::Regular,
    }
}

fn self_avoiding_walk(
    start: usize,
    want: usize,
    cells: &[(i64, i64)],
    index: &HashMap<(i64, i64), usize>,
    on_line: &HashSet<usize>,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut path = vec![start];
    let mut seen: HashSet<usize> = HashSet::from([start]);
    let mut heading: Option<(i64, i64)> = None;
    while path.len() < want {
        let (r, c) = cells[*path.last().unwrap()];
        let mut best: Option<(f64, usize, (i64, i64))> = None;
        for dr in -1..=1i64 {
            for dc in -1..=1i64 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let Some(&nb) = index.get(&(r + dr, c + dc)) else { continue };
                if seen.contains(&nb) {
                    continue;
                }
                let mut score: f64 = rng.random();
                if let Some(h) = heading {
                    let dot = h.0 * dr + h.1 * dc;
                    score += 0.6 * dot as f64;
                }
                if dr != 0 && dc != 0 {
                    score -= 0.3;
                }
                if !on_line.contains(&nb) {
                    score += 0.5;
                }
                if best.is_none_or(|b| score > b.0) {
                    best = Some((score, nb, (dr, dc)));
                }
            }
        }
        let Some((_, nb, step)) = best else { break };
        path.push(nb);
        seen.insert(nb);
        heading = Some(step);
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn connected(net: &Network) -> bool {
        let served: Vec<&StopId> = net.stops().iter().map(|s| &s.id).filter(|s| !net.routes_serving(s).is_empty()).collect();
        let Some(start) = served.first() else { return true };
        let mut seen: HashSet<&StopId> = HashSet::from([*start]);
        let mut q = VecDeque::from([*start]);
        while let Some(s) = q.pop_front() {
            for r in net.routes_serving(s) {
                for t in &net.route(r).unwrap().stops {
                    if seen.insert(t) {
                        q.push_back(t);
                    }
                }
            }
        }
        seen.len() == served.len()
    }

    #[test]
    fn deterministic_and_bounded() {
        let cfg = CityConfig {
            rng_seed: 1,
            n_stops: 20,
            n_routes: 3,
            ..Default::default()
        };
        let a = generate_city(&cfg).unwrap();
        let b = generate_city(&cfg).unwrap();
        assert_eq!(a.network.stops(), b.network.stops());
        assert_eq!(a.network.routes(), b.network.routes());
        assert!(connected(&a.network));
        for segs in a.segments.values() {
            for s in segs {
                assert!((60.0..=250.0).contains(&s.mean_s), "{}", s.mean_s);
            }
        }
    }

    #[test]
    fn segment_bounds_hold_across_configs() {
        for seed in 0..10 {
            for (n_stops, extent) in [(9, 1.0), (64, 6.0), (100, 40.0)] {
                let cfg = CityConfig {
                    rng_seed: seed,
                    n_stops,
                    extent_km: extent,
                    ..Default::default()
                };
                let city = generate_city(&cfg).unwrap();
                assert!(connected(&city.network));
                assert!(city
                    .segments
                    .values()
                    .flatten()
                    .all(|s| (60.0..=250.0).contains(&s.mean_s)));
            }
        }
    }

    #[test]
    fn minimal_two_stop_route() {
        let cfg = CityConfig {
            n_stops: 2,
            n_routes: 1,
            bidirectional: false,
            ..Default::default()
        };
        let city = generate_city(&cfg).unwrap();
        assert_eq!(city.network.routes().len(), 1);
        assert_eq!(city.network.routes()[0].stops.len(), 2);
    }

    #[test]
    fn infeasible_route_length() {
        let cfg = CityConfig {
            n_stops: 5,
            route_len: Some(8),
            ..Default::default()
        };
        assert!(matches!(generate_city(&cfg), Err(Error::Config(_))));
    }
}
