use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;

use super::{AlightMethod, AvlIndex, JourneyParams, Trip};
use crate::model::{time_of_day, CardId, Network, StopId, SwipeRecord};

/// Stops the trip's vehicle visited downstream of the boarding stop, before `until` when given.
pub fn candidates_for(trip: &Trip, index: &AvlIndex, net: &Network, until: Option<i64>) -> Vec<(StopId, i64)> {
    let (Some(board), Some(ti)) = (&trip.board_stop, trip.trip_index) else {
        return Vec::new();
    };
    let Some(run) = index.run(&trip.vehicle, &trip.route, ti) else {
        return Vec::new();
    };
    let Some(pb) = net.position_in_route(&trip.route, board) else {
        return Vec::new();
    };
    run.iter()
        .filter(|e| {
            net.position_in_route(&trip.route, &e.stop).is_some_and(|p| p > pb)
                && until.is_none_or(|u| e.arrive_ts < u)
        })
        .map(|e| (e.stop.clone(), e.arrive_ts))
        .collect()
}

fn nearest_within<'a>(net: &Network, reference: &StopId, candidates: &'a [StopId], radius: f64) -> Option<&'a StopId> {
    candidates
        .iter()
        .map(|s| (net.stop_distance(s, reference), s))
        .filter(|(d, _)| *d < radius)
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
        .map(|(_, s)| s)
}

/// Alighting of trip k from the next boarding: the boarding itself if downstream, else the nearest candidate within the walking radius.
pub fn infer_alighting_continuous(next_board: &StopId, candidates: &[StopId], net: &Network, radius_m: f64) -> Option<StopId> {
    if candidates.contains(next_board) {
        return Some(next_board.clone());
    }
    nearest_within(net, next_board, candidates, radius_m).cloned()
}

/// Modal first-boarding stop; ties go to the earliest median first-swipe time of day.
pub fn estimate_home(first_boardings: &[(StopId, i64)]) -> Option<StopId> {
    let mut by_stop: BTreeMap<&StopId, Vec<i64>> = BTreeMap::new();
    for (s, ts) in first_boardings {
        by_stop.entry(s).or_default().push(time_of_day(*ts));
    }
    by_stop
        .into_iter()
        .map(|(s, tods)| (tods.len(), crate::stats::median_i64(&tods), s))
        .min_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(b.2)))
        .map(|(_, _, s)| s.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LastReference {
    SameDay,
    NextDay,
    Home,
}

/// Last trip of a day: choose a reference point, then the candidate nearest to it within the walking radius.
///
/// `next_first` is the next observed day's first boarding stop with its timestamp and the day gap.
#[allow(clippy::too_many_arguments)]
pub fn infer_last_alighting(
    candidates: &[StopId],
    today_first: Option<&StopId>,
    next_first: Option<(&StopId, i64, i64)>,
    home: Option<&StopId>,
    single_trip: bool,
    net: &Network,
    params: &JourneyParams,
) -> Option<(StopId, LastReference)> {
    let next = next_first.filter(|(_, ts, gap)| {
        *gap >= 1 && *gap <= params.max_day_gap && time_of_day(*ts) < params.next_day_before_s
    });
    let mut order: Vec<(&StopId, LastReference)> = Vec::new();
    match (today_first, next) {
        (Some(t), Some((n, _, _))) if net.stop_distance(t, n) > params.next_day_min_m => {
            order.push((n, LastReference::NextDay));
        }
        (None, Some((n, _, _))) => order.push((n, LastReference::NextDay)),
        _ => {}
    }
    if !single_trip {
        match today_first {
            Some(t) => order.push((t, LastReference::SameDay)),
            None => {
                if next_first.is_none() {
                    if let Some(h) = home {
                        order.push((h, LastReference::Home));
                    }
                }
            }
        }
    }
    let (reference, how) = order.into_iter().next()?;
    nearest_within(net, reference, candidates, params.walk_radius_m).map(|s| (s.clone(), how))
}

/// Jaccard ratio of two visited-stop sets after merging stops closer than `equivalent_m` or adjacent on a route.
pub fn day_similarity(a: &BTreeSet<StopId>, b: &BTreeSet<StopId>, net: &Network, equivalent_m: f64) -> f64 {
    let all: Vec<&StopId> = a.union(b).collect();
    if all.is_empty() {
        return 1.0;
    }
    let mut parent: Vec<usize> = (0..all.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let eq = net.stop_distance(all[i], all[j]) < equivalent_m || net.adjacent(all[i], all[j]);
            if eq {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut in_a = BTreeSet::new();
    let mut in_b = BTreeSet::new();
    for (i, s) in all.iter().enumerate() {
        let r = find(&mut parent, i);
        if a.contains(*s) {
            in_a.insert(r);
        }
        if b.contains(*s) {
            in_b.insert(r);
        }
    }
    in_a.intersection(&in_b).count() as f64 / in_a.union(&in_b).count() as f64
}

/// Empirical argmax over candidates; ties and missing counts fall back to visit frequency.
pub fn infer_alighting_probabilistic(
    candidates: &[StopId],
    counts: &HashMap<StopId, usize>,
    visits: &HashMap<StopId, usize>,
) -> Option<StopId> {
    let score = |s: &StopId| (counts.get(s).copied().unwrap_or(0), visits.get(s).copied().unwrap_or(0));
    let best = candidates
        .iter()
        .max_by(|a, b| score(a).cmp(&score(b)).then_with(|| b.cmp(a)))?;
    (score(best) != (0, 0)).then(|| best.clone())
}

fn resolve(trip: &mut Trip, stop: StopId, cands: &[(StopId, i64)], method: AlightMethod) {
    trip.alight_ts = cands.iter().find(|c| c.0 == stop).map(|c| c.1);
    trip.alight_stop = Some(stop);
    trip.alight_method = method;
}

fn card_trips(mut trips: Vec<Trip>, index: &AvlIndex, net: &Network, params: &JourneyParams) -> Vec<Trip> {
    trips.sort_by_key(|t| t.board_ts);
    let n = trips.len();
    let mut cands: Vec<Vec<(StopId, i64)>> = vec![Vec::new(); n];
    let mut days: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, t) in trips.iter().enumerate() {
        days.entry(t.day()).or_default().push(i);
    }
    let ids = |c: &[(StopId, i64)]| c.iter().map(|x| x.0.clone()).collect::<Vec<_>>();

    for idx in days.values() {
        for w in idx.windows(2) {
            let (k, k1) = (w[0], w[1]);
            cands[k] = candidates_for(&trips[k], index, net, Some(trips[k1].board_ts));
            let (Some(bk), Some(bk1)) = (&trips[k].board_stop, &trips[k1].board_stop) else {
                continue;
            };
            if bk == bk1 {
                continue;
            }
            if let Some(s) = infer_alighting_continuous(bk1, &ids(&cands[k]), net, params.walk_radius_m) {
                let c = cands[k].clone();
                resolve(&mut trips[k], s, &c, AlightMethod::Continuous);
            }
        }
        let last = *idx.last().unwrap();
        cands[last] = candidates_for(&trips[last], index, net, None);
    }

    let firsts: Vec<(StopId, i64)> = days
        .values()
        .filter_map(|idx| trips[idx[0]].board_stop.clone().map(|s| (s, trips[idx[0]].board_ts)))
        .collect();
    let home = estimate_home(&firsts);
    let day_list: Vec<(&i64, &Vec<usize>)> = days.iter().collect();
    for (di, (day, idx)) in day_list.iter().enumerate() {
        let last = *idx.last().unwrap();
        let next_first = day_list.get(di + 1).and_then(|(nd, nidx)| {
            let t = &trips[nidx[0]];
            t.board_stop.as_ref().map(|s| (s, t.board_ts, **nd - **day))
        });
        let today_first = trips[idx[0]].board_stop.as_ref();
        if let Some((s, how)) = infer_last_alighting(
            &ids(&cands[last]),
            today_first,
            next_first,
            home.as_ref(),
            idx.len() == 1,
            net,
            params,
        ) {
            let method = match how {
                LastReference::Home => AlightMethod::HomeRef,
                _ => AlightMethod::ClosedChain,
            };
            let c = cands[last].clone();
            resolve(&mut trips[last], s, &c, method);
        }
    }

    let visited: Vec<BTreeSet<StopId>> = day_list
        .iter()
        .map(|(_, idx)| idx.iter().filter_map(|&i| trips[i].board_stop.clone()).collect())
        .collect();
    let mut similar: Vec<Option<Vec<usize>>> = vec![None; day_list.len()];
    for (di, (_, idx)) in day_list.iter().enumerate() {
        for &k in idx.iter() {
            if trips[k].resolved() || cands[k].is_empty() {
                continue;
            }
            let Some(bk) = trips[k].board_stop.clone() else { continue };
            let sim = similar[di].get_or_insert_with(|| {
                (0..day_list.len())
                    .filter(|&o| o == di || day_similarity(&visited[di], &visited[o], net, params.equivalent_m) >= params.similar_eps)
                    .collect()
            });
            let mut counts: HashMap<StopId, usize> = HashMap::new();
            let mut visits: HashMap<StopId, usize> = HashMap::new();
            for &o in sim.iter() {
                for &j in day_list[o].1 {
                    let t = &trips[j];
                    if let Some(b) = &t.board_stop {
                        *visits.entry(b.clone()).or_default() += 1;
                    }
                    if let Some(a) = &t.alight_stop {
                        if t.alight_method != AlightMethod::Probabilistic {
                            *visits.entry(a.clone()).or_default() += 1;
                            if t.board_stop.as_ref() == Some(&bk) {
                                *counts.entry(a.clone()).or_default() += 1;
                            }
                        }
                    }
                }
            }
            if let Some(s) = infer_alighting_probabilistic(&ids(&cands[k]), &counts, &visits) {
                let c = cands[k].clone();
                resolve(&mut trips[k], s, &c, AlightMethod::Probabilistic);
            }
        }
    }
    for (t, c) in trips.iter_mut().zip(cands) {
        if t.alight_method != AlightMethod::Continuous || !t.resolved() {
            t.candidates = c.into_iter().map(|x| x.0).collect();
        }
    }
    trips
}

/// Alighting inference over all cards; output sorted by (card, board_ts).
pub fn reconstruct_trips(swipes: &[SwipeRecord], index: &AvlIndex, net: &Network, params: &JourneyParams) -> Vec<Trip> {
    let mut by_card: BTreeMap<&CardId, Vec<Trip>> = BTreeMap::new();
    for s in swipes {
        by_card.entry(&s.card).or_default().push(Trip {
            card: s.card.clone(),
            route: s.route.clone(),
            vehicle: s.vehicle.clone(),
            trip_index: s.trip_index,
            board_stop: s.boarding_stop.clone(),
            board_ts: s.ts,
            alight_stop: None,
            alight_ts: None,
            alight_method: AlightMethod::Unresolved,
            candidates: Vec::new(),
        });
    }
    let per: Vec<Vec<Trip>> = by_card
        .into_par_iter()
        .map(|(_, trips)| card_trips(trips, index, net, params))
        .collect();
    per.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LatLon, Route, Stop};

    fn net() -> Network {
        // A..E along a line at 400 m spacing, F 300 m north of C, G far away
        let o = LatLon::new(22.25, 113.55);
        let mk = |id: &str, e: f64, n: f64| {
            let p = o.offset_m(e, n);
            Stop {
                id: id.into(),
                name: id.into(),
                lat: p.lat,
                lon: p.lon,
                zone: Default::default(),
            }
        };
        let stops = vec![
            mk("A", 0.0, 0.0),
            mk("B", 400.0, 0.0),
            mk("C", 800.0, 0.0),
            mk("D", 1200.0, 0.0),
            mk("E", 1600.0, 0.0),
            mk("F", 800.0, 300.0),
            mk("G", 20000.0, 0.0),
        ];
        let r = |id: &str, s: &[&str]| Route {
            id: id.into(),
            direction: crate::model::Direction::Up,
            stops: s.iter().map(|&x| x.into()).collect(),
            headway_min: 10.0,
            speed_class: Default::default(),
        };
        Network::new(stops, vec![r("R1", &["A", "B", "C", "D", "E"]), r("R2", &["F", "G"])]).unwrap()
    }

    fn ids(v: &[&str]) -> Vec<StopId> {
        v.iter().map(|&s| s.into()).collect()
    }

    #[test]
    fn continuous_cases() {
        let n = net();
        let c = ids(&["B", "C", "D", "E"]);
        assert_eq!(infer_alighting_continuous(&"D".into(), &c, &n, 700.0), Some("D".into()));
        assert_eq!(infer_alighting_continuous(&"F".into(), &c, &n, 700.0), Some("C".into()));
        assert_eq!(infer_alighting_continuous(&"G".into(), &c, &n, 700.0), None);
        assert_eq!(infer_alighting_continuous(&"D".into(), &[], &n, 700.0), None);
    }

    #[test]
    fn home_mode_and_tie() {
        let h: StopId = "H".into();
        let w: StopId = "W".into();
        let mut v: Vec<(StopId, i64)> = (0..6).map(|d| (h.clone(), d * 86400 + 7 * 3600)).collect();
        v.extend((0..4).map(|d| (w.clone(), d * 86400 + 6 * 3600)));
        assert_eq!(estimate_home(&v), Some(h.clone()));
        let tie = vec![(h.clone(), 8 * 3600), (w.clone(), 7 * 3600)];
        assert_eq!(estimate_home(&tie), Some(w));
        assert_eq!(estimate_home(&[]), None);
    }

    #[test]
    fn last_reference_rules() {
        let n = net();
        let p = JourneyParams::default();
        let c = ids(&["B", "C", "D", "E"]);
        let a: StopId = "A".into();
        let g: StopId = "G".into();
        let f: StopId = "F".into();
        let r = infer_last_alighting(&c, Some(&a), None, None, false, &n, &p).unwrap();
        assert_eq!(r, ("B".into(), LastReference::SameDay));
        // next-day boarding far away and early becomes the reference
        let r = infer_last_alighting(&ids(&["B", "E"]), Some(&g), Some((&a, 7 * 3600 + 50 * 60, 1)), None, false, &n, &p)
            .unwrap();
        assert_eq!(r, ("B".into(), LastReference::NextDay));
        // late next-day boarding is ignored
        assert!(infer_last_alighting(&ids(&["B", "E"]), Some(&g), Some((&a, 9 * 3600, 1)), None, false, &n, &p).is_none());
        let r = infer_last_alighting(&c, None, None, Some(&f), false, &n, &p).unwrap();
        assert_eq!(r, ("C".into(), LastReference::Home));
    }

    #[test]
    fn similarity() {
        let n = net();
        let far = |v: &[&str]| v.iter().map(|&s| StopId::from(s)).collect::<BTreeSet<_>>();
        let a = far(&["A", "C", "G"]);
        assert_eq!(day_similarity(&a, &a, &n, 300.0), 1.0);
        // with no equivalence in effect: {a,b,c} vs {b,c,d} -> 2/4
        let x = far(&["A", "C", "G"]);
        let y = far(&["C", "G", "E"]);
        assert!((day_similarity(&x, &y, &n, 10.0) - 0.5).abs() < 1e-12);
        // A and B are adjacent on R1 so they merge
        assert_eq!(day_similarity(&far(&["A"]), &far(&["B"]), &n, 10.0), 1.0);
        assert_eq!(day_similarity(&far(&["A", "G"]), &far(&["B", "G"]), &n, 10.0), 1.0);
    }

    #[test]
    fn probabilistic_argmax() {
        let c = ids(&["C1", "C2"]);
        let counts: HashMap<StopId, usize> = [("C1".into(), 8), ("C2".into(), 2)].into_iter().collect();
        assert_eq!(infer_alighting_probabilistic(&c, &counts, &HashMap::new()), Some("C1".into()));
        let tie: HashMap<StopId, usize> = [("C1".into(), 2), ("C2".into(), 2)].into_iter().collect();
        let visits: HashMap<StopId, usize> = [("C2".into(), 5)].into_iter().collect();
        assert_eq!(infer_alighting_probabilistic(&c, &tie, &visits), Some("C2".into()));
        assert_eq!(infer_alighting_probabilistic(&c, &HashMap::new(), &HashMap::new()), None);
        let one = ids(&["C1"]);
        assert_eq!(infer_alighting_probabilistic(&one, &counts, &HashMap::new()), Some("C1".into()));
    }
}
