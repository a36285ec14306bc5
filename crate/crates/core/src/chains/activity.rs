use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ChainTrip;
use crate::model::{StopId, DAY_S};

/// Earliest-visit probability and windowed dwell hours at one stop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopActivityVector {
    pub stop: StopId,
    pub n_e: f64,
    pub s_d: f64,
    pub s_n: f64,
}

const DAY_WINDOW: (i64, i64) = (8 * 3600, 19 * 3600);
const NIGHT_WINDOW: (i64, i64) = (17 * 3600, 31 * 3600);

/// Seconds of [a, b) inside the daily window [lo, hi) (hi may exceed one day).
fn overlap(a: i64, b: i64, (lo, hi): (i64, i64)) -> i64 {
    if b <= a {
        return 0;
    }
    let mut total = 0;
    let mut day = a.div_euclid(DAY_S) - 1;
    while day * DAY_S + lo < b {
        let (s, e) = (day * DAY_S + lo, day * DAY_S + hi);
        total += (e.min(b) - s.max(a)).max(0);
        day += 1;
    }
    total
}

/// Builds one vector per visited stop from a passenger's time-ordered whole trips.
pub fn stop_activity_vectors(trips: &[ChainTrip]) -> Vec<StopActivityVector> {
    let mut sorted: Vec<&ChainTrip> = trips.iter().collect();
    sorted.sort_by_key(|t| t.start_ts);
    let mut firsts: BTreeMap<i64, &StopId> = BTreeMap::new();
    let mut acc: BTreeMap<&StopId, (f64, f64, f64)> = BTreeMap::new();
    for t in &sorted {
        firsts.entry(t.day).or_insert(t.origin());
        acc.entry(t.origin()).or_default();
        acc.entry(t.destination()).or_default();
    }
    for (i, t) in sorted.iter().enumerate() {
        let arrive = t.end_ts;
        let morning = (arrive - 7 * 3600).div_euclid(DAY_S) * DAY_S + DAY_S + 7 * 3600;
        let leave = match sorted.get(i + 1) {
            Some(n) if n.start_ts - arrive <= 36 * 3600 => n.start_ts,
            _ => morning,
        };
        let e = acc.get_mut(t.destination()).unwrap();
        e.1 += overlap(arrive, leave, DAY_WINDOW) as f64 / 3600.0;
        e.2 += overlap(arrive, leave, NIGHT_WINDOW) as f64 / 3600.0;
    }
    let days = firsts.len().max(1) as f64;
    for s in firsts.values() {
        acc.get_mut(*s).unwrap().0 += 1.0 / days;
    }
    acc.into_iter()
        .map(|(stop, (n_e, s_d, s_n))| StopActivityVector {
            stop: stop.clone(),
            n_e,
            s_d,
            s_n,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomeWork {
    pub home: Option<StopId>,
    pub work: Option<StopId>,
    /// Only one stop was visited, or dwell evidence was absent.
    pub degenerate: bool,
}

/// Home maximizes N_e·exp(S_n − S_d) (compared as logs), work maximizes S_d − S_n.
pub fn identify_home_work(vectors: &[StopActivityVector], fallback_home: Option<StopId>) -> HomeWork {
    let stops: BTreeSet<&StopId> = vectors.iter().map(|v| &v.stop).collect();
    if stops.len() == 1 {
        let s = vectors[0].stop.clone();
        return HomeWork {
            home: Some(s.clone()),
            work: Some(s),
            degenerate: true,
        };
    }
    if vectors.iter().all(|v| v.s_d == 0.0 && v.s_n == 0.0) {
        return HomeWork {
            home: fallback_home,
            work: None,
            degenerate: true,
        };
    }
    let pick = |f: &dyn Fn(&StopActivityVector) -> f64| {
        vectors
            .iter()
            .max_by(|a, b| f(a).total_cmp(&f(b)).then_with(|| b.stop.cmp(&a.stop)))
            .map(|v| v.stop.clone())
    };
    HomeWork {
        home: pick(&|v| v.n_e.ln() + (v.s_n - v.s_d)),
        work: pick(&|v| v.s_d - v.s_n),
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str, n_e: f64, s_d: f64, s_n: f64) -> StopActivityVector {
        StopActivityVector {
            stop: s.into(),
            n_e,
            s_d,
            s_n,
        }
    }

    #[test]
    fn formula_example() {
        assert!((0.8 * 3f64.exp() - 16.07).abs() < 0.01);
        assert!((0.2 * 5f64.exp() - 29.68).abs() < 0.01);
        let hw = identify_home_work(&[v("A", 0.8, 1.0, 4.0), v("B", 0.2, 1.0, 6.0)], None);
        assert_eq!(hw.home, Some("B".into()));
        assert!(!hw.degenerate);
    }

    #[test]
    fn single_stop_is_degenerate() {
        let hw = identify_home_work(&[v("A", 1.0, 2.0, 3.0)], None);
        assert_eq!(hw.home, hw.work);
        assert!(hw.degenerate);
        let hw = identify_home_work(&[v("A", 1.0, 0.0, 0.0), v("B", 0.0, 0.0, 0.0)], Some("Z".into()));
        assert_eq!(hw.home, Some("Z".into()));
    }

    #[test]
    fn window_overlap() {
        let d = 1_456_790_400;
        assert_eq!(overlap(d + 9 * 3600, d + 10 * 3600, DAY_WINDOW), 3600);
        assert_eq!(overlap(d + 18 * 3600, d + 32 * 3600, NIGHT_WINDOW), 13 * 3600);
        assert_eq!(overlap(d + 18 * 3600, d + 32 * 3600, DAY_WINDOW), 3600);
        assert_eq!(overlap(d + 3 * 3600, d + 5 * 3600, NIGHT_WINDOW), 2 * 3600);
    }

    #[test]
    fn commuter_vectors() {
        let d0 = 1_456_790_400;
        let mut trips = Vec::new();
        for k in 0..5 {
            let day = d0 + k * DAY_S;
            trips.push(ChainTrip::simple("H", "W", day + 7 * 3600 + 1800, day + 8 * 3600));
            trips.push(ChainTrip::simple("W", "H", day + 18 * 3600, day + 18 * 3600 + 1800));
        }
        let vs = stop_activity_vectors(&trips);
        let h = vs.iter().find(|x| x.stop.as_str() == "H").unwrap();
        let w = vs.iter().find(|x| x.stop.as_str() == "W").unwrap();
        assert_eq!(h.n_e, 1.0);
        assert!(w.s_d > 40.0 && h.s_n > 40.0);
        let hw = identify_home_work(&vs, None);
        assert_eq!(hw.home, Some("H".into()));
        assert_eq!(hw.work, Some("W".into()));
    }
}
