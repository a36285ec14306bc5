use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{distance, LatLon, Route, RouteId, SpeedClass, Stop, StopId};
use crate::{Error, Result};

/// One ride on a route from `board` to `alight`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Leg {
    pub route: RouteId,
    pub board: StopId,
    pub alight: StopId,
}

/// Indexed read-only view over stops and routes.
#[derive(Clone, Debug, Default)]
pub struct Network {
    stops: Vec<Stop>,
    routes: Vec<Route>,
    stop_idx: HashMap<StopId, usize>,
    route_idx: HashMap<RouteId, usize>,
    /// per route: stop -> position
    positions: Vec<HashMap<StopId, usize>>,
    /// per route: cumulative distance in meters along the stop sequence
    cum_m: Vec<Vec<f64>>,
    serving: HashMap<StopId, Vec<RouteId>>,
    line_keys: Vec<String>,
    adjacency: HashMap<StopId, BTreeSet<StopId>>,
}

impl Network {
    pub fn new(stops: Vec<Stop>, routes: Vec<Route>) -> Result<Self> {
        let mut stop_idx = HashMap::with_capacity(stops.len());
        for (i, s) in stops.iter().enumerate() {
            if s.id.as_str().is_empty() {
                return Err(Error::InvalidInput("empty stop id".into()));
            }
            if !s.position().is_valid() {
                return Err(Error::InvalidInput(format!("stop {} has invalid coordinates", s.id)));
            }
            if stop_idx.insert(s.id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate stop id {}", s.id)));
            }
        }
        let mut route_idx = HashMap::with_capacity(routes.len());
        let mut positions = Vec::with_capacity(routes.len());
        let mut cum_m = Vec::with_capacity(routes.len());
        let mut serving: HashMap<StopId, Vec<RouteId>> = HashMap::new();
        let mut adjacency: HashMap<StopId, BTreeSet<StopId>> = HashMap::new();
        for (i, r) in routes.iter().enumerate() {
            r.validate()?;
            if route_idx.insert(r.id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate route id {}", r.id)));
            }
            let mut pos = HashMap::new();
            let mut cum = Vec::with_capacity(r.stops.len());
            let mut acc = 0.0;
            for (k, s) in r.stops.iter().enumerate() {
                let Some(&si) = stop_idx.get(s) else {
                    return Err(Error::InvalidInput(format!(
                        "route {} references unknown stop {s}",
                        r.id
                    )));
                };
                if k > 0 {
                    let prev = stop_idx[&r.stops[k - 1]];
                    acc += distance(stops[prev].position(), stops[si].position());
                    adjacency.entry(r.stops[k - 1].clone()).or_default().insert(s.clone());
                    adjacency.entry(s.clone()).or_default().insert(r.stops[k - 1].clone());
                }
                cum.push(acc);
                pos.entry(s.clone()).or_insert(k);
                let list = serving.entry(s.clone()).or_default();
                if !list.contains(&r.id) {
                    list.push(r.id.clone());
                }
            }
            positions.push(pos);
            cum_m.push(cum);
        }
        let line_keys = routes
            .iter()
            .map(|r| {
                let rev: Vec<&StopId> = r.stops.iter().rev().collect();
                let twin = routes.iter().find(|o| {
                    o.id != r.id
                        && o.direction != r.direction
                        && (o.stops.iter().collect::<Vec<_>>() == rev
                            || (o.stops.first() == r.stops.last() && o.stops.last() == r.stops.first()))
                });
                match twin {
                    Some(o) if o.id < r.id => o.id.0.clone(),
                    _ => r.id.0.clone(),
                }
            })
            .collect();
        Ok(Self {
            stops,
            routes,
            stop_idx,
            route_idx,
            positions,
            cum_m,
            serving,
            line_keys,
            adjacency,
        })
    }

    pub fn stops(&self) -> &[Stop] {
        &self.stops
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn stop(&self, id: &StopId) -> Option<&Stop> {
        self.stop_idx.get(id).map(|&i| &self.stops[i])
    }

    /// Position of a stop; panics on unknown ids, which the constructor rules out for route stops.
    pub fn pos(&self, id: &StopId) -> LatLon {
        self.stop(id)
            .unwrap_or_else(|| panic!("unknown stop {id}"))
            .position()
    }

    pub fn try_pos(&self, id: &StopId) -> Option<LatLon> {
        self.stop(id).map(Stop::position)
    }

    pub fn stop_distance(&self, a: &StopId, b: &StopId) -> f64 {
        distance(self.pos(a), self.pos(b))
    }

    pub fn route(&self, id: &RouteId) -> Option<&Route> {
        self.route_idx.get(id).map(|&i| &self.routes[i])
    }

    pub fn position_in_route(&self, route: &RouteId, stop: &StopId) -> Option<usize> {
        let i = *self.route_idx.get(route)?;
        self.positions[i].get(stop).copied()
    }

    /// Stops strictly after `stop` on `route`.
    pub fn downstream(&self, route: &RouteId, stop: &StopId) -> &[StopId] {
        match (self.route_idx.get(route), self.position_in_route(route, stop)) {
            (Some(&ri), Some(p)) => &self.routes[ri].stops[p + 1..],
            _ => &[],
        }
    }

    pub fn routes_serving(&self, stop: &StopId) -> &[RouteId] {
        self.serving.get(stop).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Identifier shared by the two directions of one line.
    pub fn line_key<'a>(&'a self, route: &'a RouteId) -> &'a str {
        match self.route_idx.get(route) {
            Some(&i) => &self.line_keys[i],
            None => route.as_str(),
        }
    }

    /// True when some route serves `a` and `b` consecutively.
    pub fn adjacent(&self, a: &StopId, b: &StopId) -> bool {
        self.adjacency.get(a).is_some_and(|s| s.contains(b))
    }

    /// Along-route distance in meters between positions `i < j`.
    pub fn segment_m(&self, route: &RouteId, i: usize, j: usize) -> f64 {
        let ri = self.route_idx[route];
        self.cum_m[ri][j] - self.cum_m[ri][i]
    }

    pub fn route_length_m(&self, route: &RouteId) -> f64 {
        let ri = self.route_idx[route];
        *self.cum_m[ri].last().unwrap_or(&0.0)
    }

    /// Board/alight positions of a leg when it is a forward ride.
    pub fn leg_positions(&self, leg: &Leg) -> Option<(usize, usize)> {
        let i = self.position_in_route(&leg.route, &leg.board)?;
        let j = self.position_in_route(&leg.route, &leg.alight)?;
        (i < j).then_some((i, j))
    }

    pub fn leg_m(&self, leg: &Leg) -> Option<f64> {
        self.leg_positions(leg)
            .map(|(i, j)| self.segment_m(&leg.route, i, j))
    }

    pub fn speed_class(&self, route: &RouteId) -> SpeedClass {
        self.route(route).map(|r| r.speed_class).unwrap_or_default()
    }

    /// Nearest stop to a point, by great-circle distance.
    pub fn nearest_stop(&self, p: LatLon) -> Option<(&Stop, f64)> {
        self.stops
            .iter()
            .map(|s| (s, distance(p, s.position())))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Stops within `radius` meters of `p`, nearest first.
    pub fn stops_within(&self, p: LatLon, radius: f64) -> Vec<(&Stop, f64)> {
        let mut v: Vec<_> = self
            .stops
            .iter()
            .map(|s| (s, distance(p, s.position())))
            .filter(|(_, d)| *d <= radius)
            .collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.id.cmp(&b.0.id)));
        v
    }

    /// Single-route plans from `a` to `b`.
    pub fn direct_legs(&self, a: &StopId, b: &StopId) -> Vec<Leg> {
        let mut out = Vec::new();
        for r in self.routes_serving(a) {
            if let (Some(i), Some(j)) = (self.position_in_route(r, a), self.position_in_route(r, b)) {
                if i < j {
                    out.push(Leg {
                        route: r.clone(),
                        board: a.clone(),
                        alight: b.clone(),
                    });
                }
            }
        }
        out
    }

    /// Two-leg plans transferring at a shared stop on a different line.
    pub fn transfer_plans(&self, a: &StopId, b: &StopId) -> Vec<[Leg; 2]> {
        let mut out = Vec::new();
        for r1 in self.routes_serving(a) {
            for x in self.downstream(r1, a) {
                if x == b {
                    continue;
                }
                for r2 in self.routes_serving(x) {
                    if self.line_key(r2) == self.line_key(r1) {
                        continue;
                    }
                    if let (Some(i), Some(j)) =
                        (self.position_in_route(r2, x), self.position_in_route(r2, b))
                    {
                        if i < j {
                            out.push([
                                Leg {
                                    route: r1.clone(),
                                    board: a.clone(),
                                    alight: x.clone(),
                                },
                                Leg {
                                    route: r2.clone(),
                                    board: x.clone(),
                                    alight: b.clone(),
                                },
                            ]);
                        }
                    }
                }
            }
        }
        out
    }

    /// Fewest transfers needed from `a` to `b`, if at most one.
    pub fn min_transfers(&self, a: &StopId, b: &StopId) -> Option<usize> {
        if a == b {
            return None;
        }
        if !self.direct_legs(a, b).is_empty() {
            Some(0)
        } else if !self.transfer_plans(a, b).is_empty() {
            Some(1)
        } else {
            None
        }
    }

    /// Returns a copy with one more route; used to model a new line.
    pub fn with_route(&self, route: Route) -> Result<Network> {
        let mut routes = self.routes.clone();
        routes.push(route);
        Network::new(self.stops.clone(), routes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Direction, Zone};

    fn line() -> Network {
        let o = LatLon::new(22.2, 113.5);
        let stops: Vec<Stop> = (0..5)
            .map(|i| {
                let p = o.offset_m(500.0 * i as f64, 0.0);
                Stop {
                    id: StopId(format!("S{i}")),
                    name: format!("Stop {i}"),
                    lat: p.lat,
                    lon: p.lon,
                    zone: Zone::Downtown,
                }
            })
            .collect();
        let up: Vec<StopId> = stops.iter().map(|s| s.id.clone()).collect();
        let mut down = up.clone();
        down.reverse();
        let routes = vec![
            Route {
                id: "L1U".into(),
                direction: Direction::Up,
                stops: up,
                headway_min: 10.0,
                speed_class: SpeedClass::Regular,
            },
            Route {
                id: "L1D".into(),
                direction: Direction::Down,
                stops: down,
                headway_min: 10.0,
                speed_class: SpeedClass::Regular,
            },
        ];
        Network::new(stops, routes).unwrap()
    }

    #[test]
    fn index_queries() {
        let n = line();
        let r: RouteId = "L1U".into();
        assert_eq!(n.position_in_route(&r, &"S2".into()), Some(2));
        assert_eq!(n.downstream(&r, &"S3".into()).len(), 1);
        assert!((n.segment_m(&r, 0, 4) - 2000.0).abs() < 1.0);
        assert_eq!(n.line_key(&"L1U".into()), n.line_key(&"L1D".into()));
        assert!(n.adjacent(&"S1".into(), &"S2".into()));
        assert!(!n.adjacent(&"S1".into(), &"S3".into()));
        assert_eq!(n.routes_serving(&"S0".into()).len(), 2);
    }

    #[test]
    fn rejects_unknown_stop() {
        let n = line();
        let bad = Route {
            id: "X".into(),
            direction: Direction::Up,
            stops: vec!["S0".into(), "nope".into()],
            headway_min: 5.0,
            speed_class: SpeedClass::Express,
        };
        assert!(n.with_route(bad).is_err());
    }
}
