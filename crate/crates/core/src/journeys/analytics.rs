use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{AlightMethod, Journey, Trip};
use crate::model::{service_day, time_of_day, Network, RouteId, StopEvent, StopId, TripRun};

/// Seats per vehicle assumed by the load factor.
pub const CAPACITY: f64 = 30.0;

/// Load factor over an observation window; `None` when no vehicle ran.
pub fn occupancy(ridership: f64, vehicles: usize, capacity: f64) -> Option<f64> {
    (vehicles > 0).then(|| ridership / (capacity * vehicles as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentProfile {
    pub from: StopId,
    pub to: StopId,
    /// Mean riders per observed day in each hour.
    pub hourly: Vec<f64>,
    pub cluster: usize,
}

fn hour(ts: i64) -> usize {
    (time_of_day(ts) / 3600).clamp(0, 23) as usize
}

/// Each resolved trip spread over its adjacent-stop segments, timed by linear interpolation.
fn segment_passes(trips: &[Trip], net: &Network) -> Vec<(StopId, StopId, i64)> {
    let mut out = Vec::new();
    for t in trips {
        let (Some(b), Some(a), Some(ta)) = (&t.board_stop, &t.alight_stop, t.alight_ts) else {
            continue;
        };
        let (Some(pb), Some(pa)) = (net.position_in_route(&t.route, b), net.position_in_route(&t.route, a)) else {
            continue;
        };
        if pa <= pb {
            continue;
        }
        let stops = &net.route(&t.route).unwrap().stops;
        for i in pb..pa {
            let ts = t.board_ts + (ta - t.board_ts) * (i - pb) as i64 / (pa - pb) as i64;
            out.push((stops[i].clone(), stops[i + 1].clone(), ts));
        }
    }
    out
}

/// Hourly ridership vectors per directed adjacent-stop pair, clustered by average linkage into `k` groups.
pub fn segment_profiles(trips: &[Trip], net: &Network, k: usize) -> Vec<SegmentProfile> {
    let days = trips.iter().map(|t| service_day(t.board_ts)).collect::<std::collections::BTreeSet<_>>().len().max(1);
    let mut acc: BTreeMap<(StopId, StopId), Vec<f64>> = BTreeMap::new();
    for (from, to, ts) in segment_passes(trips, net) {
        acc.entry((from, to)).or_insert_with(|| vec![0.0; 24])[hour(ts)] += 1.0 / days as f64;
    }
    let vectors: Vec<Vec<f64>> = acc.values().cloned().collect();
    let labels = cut_tree(&average_linkage(&vectors), vectors.len(), k);
    acc.into_iter()
        .zip(labels)
        .map(|(((from, to), hourly), cluster)| SegmentProfile {
            from,
            to,
            hourly,
            cluster,
        })
        .collect()
}

/// One agglomeration step; ids below n are leaves, merge i creates id n + i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
    pub size: usize,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Agglomerative clustering with average linkage (UPGMA) on Euclidean distance.
pub fn average_linkage(points: &[Vec<f64>]) -> Vec<Merge> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            d[i][j] = euclid(&points[i], &points[j]);
            d[j][i] = d[i][j];
        }
    }
    let mut active: Vec<bool> = vec![true; n];
    let mut size = vec![1usize; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && d[i][j] < best.0 {
                    best = (d[i][j], i, j);
                }
            }
        }
        let (dist, i, j) = best;
        merges.push(Merge {
            a: id[i].min(id[j]),
            b: id[i].max(id[j]),
            distance: dist,
            size: size[i] + size[j],
        });
        for m in 0..n {
            if active[m] && m != i && m != j {
                let v = (size[i] as f64 * d[i][m] + size[j] as f64 * d[j][m]) / (size[i] + size[j]) as f64;
                d[i][m] = v;
                d[m][i] = v;
            }
        }
        size[i] += size[j];
        active[j] = false;
        id[i] = n + step;
    }
    merges
}

/// Flat labels 1..=k from the first n − k merges, numbered by first leaf.
pub fn cut_tree(merges: &[Merge], n: usize, k: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let k = k.clamp(1, n);
    let mut parent: Vec<usize> = (0..2 * n).collect();
    for (s, m) in merges.iter().take(n - k).enumerate() {
        parent[m.a] = n + s;
        parent[m.b] = n + s;
    }
    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let mut names: HashMap<usize, usize> = HashMap::new();
    (0..n)
        .map(|i| {
            let r = root(i);
            let next = names.len() + 1;
            *names.entry(r).or_insert(next)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StopFlow {
    pub route: RouteId,
    pub stop: StopId,
    pub boardings: usize,
    pub alightings: usize,
}

/// Boarding and alighting counts per (route, stop).
pub fn stop_flows(trips: &[Trip]) -> Vec<StopFlow> {
    let mut acc: BTreeMap<(RouteId, StopId), (usize, usize)> = BTreeMap::new();
    for t in trips {
        if let Some(b) = &t.board_stop {
            acc.entry((t.route.clone(), b.clone())).or_default().0 += 1;
        }
        if let Some(a) = &t.alight_stop {
            acc.entry((t.route.clone(), a.clone())).or_default().1 += 1;
        }
    }
    acc.into_iter()
        .map(|((route, stop), (b, a))| StopFlow {
            route,
            stop,
            boardings: b,
            alightings: a,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyCell {
    pub from: StopId,
    pub to: StopId,
    pub hour: usize,
    pub ridership: f64,
    pub vehicles: usize,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Analytics {
    pub trips: usize,
    pub resolved: usize,
    pub by_method: BTreeMap<String, usize>,
    pub journeys: usize,
    pub transfers: usize,
    pub short_activities: usize,
    pub hourly_origins: Vec<usize>,
    pub hourly_transfers: Vec<usize>,
    pub hourly_destinations: Vec<usize>,
    pub segments: Vec<SegmentProfile>,
    pub occupancy: Vec<OccupancyCell>,
    pub flows: Vec<StopFlow>,
}

impl Analytics {
    pub fn compute(trips: &[Trip], journeys: &[Journey], events: &[StopEvent], net: &Network) -> Self {
        let mut a = Self {
            trips: trips.len(),
            resolved: trips.iter().filter(|t| t.resolved()).count(),
            journeys: journeys.len(),
            hourly_origins: vec![0; 24],
            hourly_transfers: vec![0; 24],
            hourly_destinations: vec![0; 24],
            ..Default::default()
        };
        for t in trips {
            let key = serde_json::to_value(t.alight_method).unwrap();
            *a.by_method.entry(key.as_str().unwrap_or("unresolved").to_string()).or_default() += 1;
        }
        for j in journeys {
            a.hourly_origins[hour(j.start_ts())] += 1;
            for t in &j.trips[1..] {
                a.hourly_transfers[hour(t.board_ts)] += 1;
            }
            a.transfers += j.trips.len() - 1;
            a.short_activities += usize::from(j.short_activity_after);
            if j.trips.last().unwrap().alight_method != AlightMethod::Unresolved {
                a.hourly_destinations[hour(j.end_ts())] += 1;
            }
        }
        a.segments = segment_profiles(trips, net, 3);
        let mut riders: BTreeMap<(StopId, StopId, usize), f64> = BTreeMap::new();
        for (from, to, ts) in segment_passes(trips, net) {
            *riders.entry((from, to, hour(ts))).or_default() += 1.0;
        }
        let mut passes: HashMap<(StopId, StopId, usize), usize> = HashMap::new();
        for run in TripRun::group(events) {
            for w in run.events.windows(2) {
                if net.adjacent(&w[0].stop, &w[1].stop) {
                    *passes.entry((w[0].stop.clone(), w[1].stop.clone(), hour(w[0].depart_ts))).or_default() += 1;
                }
            }
        }
        a.occupancy = riders
            .into_iter()
            .map(|((from, to, h), v)| {
                let vehicles = passes.get(&(from.clone(), to.clone(), h)).copied().unwrap_or(0);
                OccupancyCell {
                    ratio: occupancy(v, vehicles, CAPACITY),
                    from,
                    to,
                    hour: h,
                    ridership: v,
                    vehicles,
                }
            })
            .collect();
        a.flows = stop_flows(trips);
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn occupancy_cases() {
        assert_eq!(occupancy(0.0, 3, CAPACITY), Some(0.0));
        assert_eq!(occupancy(60.0, 4, CAPACITY), Some(0.5));
        assert_eq!(occupancy(10.0, 0, CAPACITY), None);
    }

    #[test]
    fn single_segment_single_cluster() {
        let m = average_linkage(&[vec![1.0, 2.0]]);
        assert!(m.is_empty());
        assert_eq!(cut_tree(&m, 1, 3), vec![1]);
    }

    #[test]
    fn identical_vectors_merge_first() {
        let pts = vec![vec![0.0, 0.0], vec![5.0, 5.0], vec![0.0, 3.0], vec![5.0, 5.0]];
        let m = average_linkage(&pts);
        assert_eq!((m[0].a, m[0].b, m[0].distance), (1, 3, 0.0));
        assert_eq!(cut_tree(&m, 4, 2), vec![1, 2, 1, 2]);
    }

    fn members(merges: &[Merge], n: usize, id: usize) -> Vec<usize> {
        if id < n {
            vec![id]
        } else {
            let m = &merges[id - n];
            let mut v = members(merges, n, m.a);
            v.extend(members(merges, n, m.b));
            v
        }
    }

    proptest! {
        #[test]
        fn linkage_matches_bruteforce(pts in prop::collection::vec(prop::collection::vec(0.0f64..100.0, 3), 2..10)) {
            let n = pts.len();
            let merges = average_linkage(&pts);
            prop_assert_eq!(merges.len(), n - 1);
            // brute force: recompute cluster-to-cluster mean distances from scratch at every step
            let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
            for (s, m) in merges.iter().enumerate() {
                let mut best = f64::INFINITY;
                for x in 0..clusters.len() {
                    for y in x + 1..clusters.len() {
                        let (ca, cb) = (&clusters[x].1, &clusters[y].1);
                        let mut tot = 0.0;
                        for &i in ca { for &j in cb { tot += euclid(&pts[i], &pts[j]); } }
                        best = best.min(tot / (ca.len() * cb.len()) as f64);
                    }
                }
                prop_assert!((m.distance - best).abs() < 1e-9);
                let ma = members(&merges, n, m.a);
                let mb = members(&merges, n, m.b);
                let mut tot = 0.0;
                for &i in &ma { for &j in &mb { tot += euclid(&pts[i], &pts[j]); } }
                prop_assert!((tot / (ma.len() * mb.len()) as f64 - m.distance).abs() < 1e-9);
                clusters.retain(|c| c.0 != m.a && c.0 != m.b);
                let mut all = ma;
                all.extend(mb);
                clusters.push((n + s, all));
            }
        }
    }
}
