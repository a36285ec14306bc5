use std::collections::BTreeMap;

use super::{AvlIndex, Journey, JourneyParams, StageLabel, StageVisit, Trip};
use crate::model::{Network, Zone};

/// Outcome of the four transfer constraints for the gap between two consecutive trips.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransferCheck {
    pub distance: bool,
    pub time: bool,
    pub line: bool,
    pub purpose: bool,
}

impl TransferCheck {
    pub fn evaluate(k: &Trip, k1: &Trip, index: &AvlIndex, net: &Network, params: &JourneyParams) -> Self {
        let (Some(ak), Some(tak), Some(bk1)) = (&k.alight_stop, k.alight_ts, &k1.board_stop) else {
            return Self::default();
        };
        let d = net.stop_distance(ak, bk1);
        let suburb = net.stop(bk1).is_some_and(|s| s.zone == Zone::Suburb);
        let limit = if suburb {
            params.transfer_suburb_m
        } else {
            params.transfer_downtown_m
        };
        let distance = d <= limit && k1.board_ts >= tak;

        let walk = (d / params.walk_speed).round() as i64;
        let serving: Vec<_> = match &k1.alight_stop {
            Some(a1) => net.direct_legs(bk1, a1).into_iter().map(|l| l.route).collect(),
            None => vec![k1.route.clone()],
        };
        let passed = index
            .arrivals(bk1, tak + walk, k1.board_ts)
            .filter(|(_, r)| serving.contains(r))
            .count();
        let time = passed <= params.max_passed_vehicles;

        let line = net.line_key(&k.route) != net.line_key(&k1.route);

        let purpose = match (&k.board_stop, &k1.alight_stop) {
            (Some(bk), Some(a1)) => {
                let hw = net.route(&k.route).map_or(f64::INFINITY, |r| r.headway_min);
                !net.direct_legs(bk, a1).iter().any(|l| {
                    net.route(&l.route).is_some_and(|r| r.headway_min <= params.purpose_ratio * hw)
                })
            }
            _ => true,
        };
        Self {
            distance,
            time,
            line,
            purpose,
        }
    }

    pub fn is_transfer(&self) -> bool {
        self.distance && self.time && self.line && self.purpose
    }

    pub fn is_short_activity(&self) -> bool {
        self.distance && self.time && !(self.line && self.purpose)
    }
}

fn journey(trips: Vec<Trip>, short_activity_after: bool) -> Journey {
    let mut stages = Vec::with_capacity(trips.len() + 1);
    stages.push(StageVisit {
        label: StageLabel::O,
        stop: trips[0].board_stop.clone(),
        ts: Some(trips[0].board_ts),
    });
    for t in &trips[1..] {
        stages.push(StageVisit {
            label: StageLabel::T,
            stop: t.board_stop.clone(),
            ts: Some(t.board_ts),
        });
    }
    let last = trips.last().unwrap();
    stages.push(StageVisit {
        label: StageLabel::D,
        stop: last.alight_stop.clone(),
        ts: last.alight_ts,
    });
    Journey {
        card: trips[0].card.clone(),
        day: trips[0].day(),
        trips,
        stages,
        short_activity_after,
    }
}

/// Groups each card-day's trips into journeys; input must be sorted by (card, board_ts).
pub fn identify_stages(trips: &[Trip], index: &AvlIndex, net: &Network, params: &JourneyParams) -> Vec<Journey> {
    let mut groups: BTreeMap<(&crate::model::CardId, i64), Vec<&Trip>> = BTreeMap::new();
    for t in trips {
        groups.entry((&t.card, t.day())).or_default().push(t);
    }
    let mut out = Vec::new();
    for (_, mut day) in groups {
        day.sort_by_key(|t| t.board_ts);
        let mut current = vec![day[0].clone()];
        for w in day.windows(2) {
            let check = TransferCheck::evaluate(w[0], w[1], index, net, params);
            if check.is_transfer() {
                current.push(w[1].clone());
            } else {
                out.push(journey(std::mem::take(&mut current), check.is_short_activity()));
                current.push(w[1].clone());
            }
        }
        out.push(journey(current, false));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::journeys::AlightMethod;
    use crate::model::{Direction, LatLon, Route, Stop, StopEvent};

    fn net() -> Network {
        let o = LatLon::new(22.25, 113.55);
        let mk = |id: &str, e: f64, n: f64| {
            let p = o.offset_m(e, n);
            Stop {
                id: id.into(),
                name: id.into(),
                lat: p.lat,
                lon: p.lon,
                zone: Zone::Downtown,
            }
        };
        let stops = vec![mk("A", 0.0, 0.0), mk("B", 2000.0, 0.0), mk("C", 2000.0, 200.0), mk("D", 2000.0, 3000.0), mk("E", 4000.0, 0.0)];
        let r = |id: &str, s: &[&str]| Route {
            id: id.into(),
            direction: Direction::Up,
            stops: s.iter().map(|&x| x.into()).collect(),
            headway_min: 10.0,
            speed_class: Default::default(),
        };
        Network::new(stops, vec![r("R1", &["A", "B", "E"]), r("R2", &["C", "D"])]).unwrap()
    }

    fn trip(route: &str, b: &str, tb: i64, a: &str, ta: i64) -> Trip {
        Trip {
            card: "P".into(),
            route: route.into(),
            vehicle: "V".into(),
            trip_index: Some(0),
            board_stop: Some(b.into()),
            board_ts: tb,
            alight_stop: Some(a.into()),
            alight_ts: Some(ta),
            alight_method: AlightMethod::Continuous,
            candidates: Vec::new(),
        }
    }

    fn ev(route: &str, stop: &str, t: i64) -> StopEvent {
        StopEvent {
            vehicle: "X".into(),
            route: route.into(),
            trip_index: 1,
            stop: stop.into(),
            arrive_ts: t,
            depart_ts: t + 30,
            synthetic: false,
        }
    }

    const T0: i64 = 1_456_822_800;

    #[test]
    fn single_trip_is_o_and_d() {
        let n = net();
        let idx = AvlIndex::new(&[]);
        let j = identify_stages(&[trip("R1", "A", T0, "B", T0 + 600)], &idx, &n, &JourneyParams::default());
        assert_eq!(j.len(), 1);
        let labels: Vec<_> = j[0].stages.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![StageLabel::O, StageLabel::D]);
    }

    #[test]
    fn walk_transfer_merges() {
        let n = net();
        let idx = AvlIndex::new(&[ev("R2", "C", T0 + 700), ev("R2", "C", T0 + 960)]);
        let trips = [trip("R1", "A", T0, "B", T0 + 600), trip("R2", "C", T0 + 960, "D", T0 + 1500)];
        let c = TransferCheck::evaluate(&trips[0], &trips[1], &idx, &n, &JourneyParams::default());
        assert!(c.is_transfer(), "{c:?}");
        let j = identify_stages(&trips, &idx, &n, &JourneyParams::default());
        assert_eq!(j.len(), 1);
        let labels: Vec<_> = j[0].stages.iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![StageLabel::O, StageLabel::T, StageLabel::D]);
    }

    #[test]
    fn too_many_passed_vehicles_splits() {
        let n = net();
        let evs: Vec<_> = (0..7).map(|k| ev("R2", "C", T0 + 700 + 30 * k)).collect();
        let idx = AvlIndex::new(&evs);
        let trips = [trip("R1", "A", T0, "B", T0 + 600), trip("R2", "C", T0 + 960, "D", T0 + 1500)];
        let c = TransferCheck::evaluate(&trips[0], &trips[1], &idx, &n, &JourneyParams::default());
        assert!(!c.time);
        assert_eq!(identify_stages(&trips, &idx, &n, &JourneyParams::default()).len(), 2);
    }

    #[test]
    fn same_line_reboard_is_short_activity() {
        let n = net();
        let idx = AvlIndex::new(&[]);
        let trips = [trip("R1", "A", T0, "B", T0 + 600), trip("R1", "B", T0 + 900, "E", T0 + 1500)];
        let j = identify_stages(&trips, &idx, &n, &JourneyParams::default());
        assert_eq!(j.len(), 2);
        assert!(j[0].short_activity_after);
        assert!(!j[1].short_activity_after);
    }
}
