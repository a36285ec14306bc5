//! Missing stop-record inference from conditioned travel-time models.

mod gaps;
mod travel;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Network, RouteId, ScheduleEntry, StopEvent, StopId, SwipeRecord, TripRun, VehicleId};
use crate::stats::isotonic;
use crate::timesync::segment_swipes;
use crate::{Error, Result};

pub use gaps::{detect_gaps, GapInterval};
pub use travel::{fit_samples, Condition, FitContext, FitParams, History, TravelTimeModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairParams {
    pub condition: Condition,
    pub fit: FitParams,
    /// Swipe grouping threshold, as in time sync.
    pub epsilon: i64,
}

impl Default for RepairParams {
    fn default() -> Self {
        Self {
            condition: Condition::Theta2,
            fit: FitParams::default(),
            epsilon: 40,
        }
    }
}

/// Most probable missing stop for a swipe at `first_swipe_ts`; `models` align with the gap's stops.
pub fn infer_station_from_swipe(gap: &GapInterval, first_swipe_ts: i64, models: &[Option<TravelTimeModel>]) -> Result<StopId> {
    let s0 = gap.anchor_before.as_ref().ok_or(Error::NoModel)?;
    let elapsed = (first_swipe_ts - s0.depart_ts) as f64;
    let mut best: Option<(f64, usize)> = None;
    for (k, m) in models.iter().enumerate() {
        if let Some(m) = m {
            let d = m.density(elapsed);
            if best.is_none_or(|b| d > b.0) {
                best = Some((d, k));
            }
        }
    }
    best.map(|(_, k)| gap.missing_stops[k].clone()).ok_or(Error::NoModel)
}

/// Gaussian argmax: the conditioned mean travel time.
pub fn infer_travel_time(model: &TravelTimeModel) -> f64 {
    model.mu
}

/// Assigns time-ordered elapsed values to non-decreasing candidate indices maximizing total log density.
fn assign_monotone(elapsed: &[f64], models: &[Option<TravelTimeModel>]) -> Vec<Option<usize>> {
    let k = models.len();
    let g = elapsed.len();
    if g == 0 || models.iter().all(Option::is_none) {
        return vec![None; g];
    }
    let ll = |i: usize, j: usize| -> f64 {
        match &models[j] {
            Some(m) => m.density(elapsed[i]).max(f64::MIN_POSITIVE).ln(),
            None => f64::NEG_INFINITY,
        }
    };
    let mut score = vec![vec![f64::NEG_INFINITY; k]; g];
    let mut back = vec![vec![0usize; k]; g];
    for j in 0..k {
        score[0][j] = ll(0, j);
    }
    for i in 1..g {
        let mut best = (f64::NEG_INFINITY, 0);
        for j in 0..k {
            if score[i - 1][j] > best.0 {
                best = (score[i - 1][j], j);
            }
            score[i][j] = best.0 + ll(i, j);
            back[i][j] = best.1;
        }
    }
    let mut j = (0..k).max_by(|&a, &b| score[g - 1][a].total_cmp(&score[g - 1][b])).unwrap();
    let mut out = vec![None; g];
    for i in (0..g).rev() {
        out[i] = Some(j);
        j = back[i][j];
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    /// Original plus synthesized events, sorted by (vehicle, arrive_ts).
    pub events: Vec<StopEvent>,
    /// All input swipes; those placed inside gaps now carry a boarding stop.
    pub swipes: Vec<SwipeRecord>,
    pub newly_matched: usize,
    pub synthesized: usize,
    /// Synthesized events moved by the monotonicity projection.
    pub flagged: usize,
    pub diagnostics: Vec<String>,
}

struct Group {
    rep: i64,
    members: Vec<usize>,
    used: bool,
}

struct VehicleResult {
    events: Vec<StopEvent>,
    assigned: Vec<(usize, StopId, u32)>,
    synthesized: usize,
    flagged: usize,
    diagnostics: Vec<String>,
}

fn repair_run(
    run: &TripRun,
    net: &Network,
    history: &History,
    start: Option<i64>,
    groups: &mut [Group],
    params: &RepairParams,
    out: &mut VehicleResult,
) {
    let Some(route) = net.route(&run.route) else {
        out.diagnostics.push(format!("unknown route {}", run.route));
        return;
    };
    let gaps = match detect_gaps(run, route) {
        Ok(g) => g,
        Err(e) => {
            out.diagnostics.push(e.to_string());
            return;
        }
    };
    let dwell = history.median_dwell();
    for mut gap in gaps {
        if gap.anchor_before.is_none() {
            let Some(t0) = start else {
                out.diagnostics.push(format!("{} trip {}: leading gap without schedule", run.route, run.trip_index));
                continue;
            };
            let first = StopEvent {
                vehicle: run.vehicle.clone(),
                route: run.route.clone(),
                trip_index: run.trip_index,
                stop: gap.missing_stops[0].clone(),
                arrive_ts: t0,
                depart_ts: t0 + dwell,
                synthetic: true,
            };
            out.events.push(first.clone());
            out.synthesized += 1;
            gap.anchor_before = Some(first);
            gap.missing_stops.remove(0);
            gap.positions.remove(0);
            if gap.missing_stops.is_empty() {
                continue;
            }
        }
        let s0 = gap.anchor_before.clone().unwrap();
        let p0 = gap.positions[0] - 1;
        let ctx = FitContext {
            t_s0: s0.depart_ts,
            interval: gap.anchor_after.as_ref().map(|s1| (gap.positions.last().unwrap() + 1, s1.arrive_ts - s0.depart_ts)),
        };
        let models: Vec<Option<TravelTimeModel>> = gap
            .positions
            .iter()
            .map(|&p| history.fit_with_fallback(&run.route, p0, p, params.condition, &ctx, &params.fit).ok())
            .collect();
        let upper = match &gap.anchor_after {
            Some(s1) => s1.arrive_ts,
            None => {
                let tail = models.iter().flatten().map(|m| m.mu + 3.0 * m.sigma).fold(0.0, f64::max);
                s0.depart_ts + tail as i64 + 60
            }
        };
        let idx: Vec<usize> = (0..groups.len())
            .filter(|&i| !groups[i].used && groups[i].rep > s0.arrive_ts && groups[i].rep < upper)
            .collect();
        let elapsed: Vec<f64> = idx.iter().map(|&i| (groups[i].rep - s0.depart_ts) as f64).collect();
        let picks = assign_monotone(&elapsed, &models);
        let mut observed: Vec<Option<i64>> = vec![None; gap.len()];
        for (&gi, pick) in idx.iter().zip(&picks) {
            let Some(k) = *pick else { continue };
            groups[gi].used = true;
            observed[k] = Some(observed[k].map_or(groups[gi].rep, |t: i64| t.min(groups[gi].rep)));
            for &m in &groups[gi].members {
                out.assigned.push((m, gap.missing_stops[k].clone(), run.trip_index));
            }
        }
        let mut slots: Vec<(usize, f64)> = Vec::new();
        for k in 0..gap.len() {
            let t = match (observed[k], &models[k]) {
                (Some(t), _) => t as f64,
                (None, Some(m)) => s0.depart_ts as f64 + infer_travel_time(m),
                (None, None) => {
                    out.diagnostics.push(format!(
                        "{} trip {}: no model for {}",
                        run.route, run.trip_index, gap.missing_stops[k]
                    ));
                    continue;
                }
            };
            slots.push((k, t));
        }
        let raw: Vec<f64> = slots.iter().map(|s| s.1).collect();
        let mono = isotonic(&raw);
        let lo = s0.depart_ts + 1;
        let hi = gap.anchor_after.as_ref().map(|s| s.arrive_ts - 1);
        let mut prev = lo - 1;
        let mut times = Vec::with_capacity(slots.len());
        for (i, &t) in mono.iter().enumerate() {
            let mut a = t.round() as i64;
            a = a.max(prev + 1);
            if let Some(hi) = hi {
                let remaining = (mono.len() - 1 - i) as i64;
                a = a.min(hi - remaining);
            }
            let moved = a != raw[i].round() as i64;
            times.push((a, moved));
            prev = a;
        }
        for (i, (&(k, _), &(a, moved))) in slots.iter().zip(&times).enumerate() {
            let next = times.get(i + 1).map(|x| x.0).or(gap.anchor_after.as_ref().map(|s| s.arrive_ts));
            let mut d = a + dwell;
            if let Some(n) = next {
                d = d.min(n - 1).max(a);
            }
            out.events.push(StopEvent {
                vehicle: run.vehicle.clone(),
                route: run.route.clone(),
                trip_index: run.trip_index,
                stop: gap.missing_stops[k].clone(),
                arrive_ts: a,
                depart_ts: d,
                synthetic: true,
            });
            out.synthesized += 1;
            if moved {
                out.flagged += 1;
            }
        }
    }
}

/// Synthesizes missing stop events and places unmatched swipes that fall inside gaps.
pub fn repair(
    events: &[StopEvent],
    swipes: &[SwipeRecord],
    history: &History,
    net: &Network,
    schedule: &[ScheduleEntry],
    params: &RepairParams,
) -> RepairOutcome {
    let starts: HashMap<(&RouteId, u32), i64> = schedule.iter().map(|s| ((&s.route, s.trip_index), s.start_ts)).collect();
    let mut by_vehicle: BTreeMap<&VehicleId, (Vec<StopEvent>, Vec<usize>)> = BTreeMap::new();
    for e in events {
        by_vehicle.entry(&e.vehicle).or_default().0.push(e.clone());
    }
    for (i, s) in swipes.iter().enumerate() {
        if s.boarding_stop.is_none() {
            if let Some(slot) = by_vehicle.get_mut(&s.vehicle) {
                slot.1.push(i);
            }
        }
    }
    let results: Vec<VehicleResult> = by_vehicle
        .into_par_iter()
        .map(|(_, (evs, mut unmatched))| {
            unmatched.sort_by_key(|&i| (swipes[i].ts, i));
            let ts: Vec<i64> = unmatched.iter().map(|&i| swipes[i].ts).collect();
            let mut groups: Vec<Group> = segment_swipes(&ts, params.epsilon)
                .into_iter()
                .map(|g| Group {
                    rep: g.rep,
                    members: g.members.iter().map(|&m| unmatched[m]).collect(),
                    used: false,
                })
                .collect();
            let mut out = VehicleResult {
                events: evs.clone(),
                assigned: Vec::new(),
                synthesized: 0,
                flagged: 0,
                diagnostics: Vec::new(),
            };
            for run in TripRun::group(&evs) {
                let start = starts.get(&(&run.route, run.trip_index)).copied();
                repair_run(&run, net, history, start, &mut groups, params, &mut out);
            }
            out
        })
        .collect();
    let mut outcome = RepairOutcome {
        swipes: swipes.to_vec(),
        ..Default::default()
    };
    for r in results {
        outcome.events.extend(r.events);
        outcome.synthesized += r.synthesized;
        outcome.flagged += r.flagged;
        outcome.diagnostics.extend(r.diagnostics);
        for (i, stop, trip) in r.assigned {
            outcome.swipes[i].boarding_stop = Some(stop);
            outcome.swipes[i].trip_index = Some(trip);
            outcome.newly_matched += 1;
        }
    }
    outcome
        .events
        .sort_by(|a, b| (&a.vehicle, a.arrive_ts, &a.stop).cmp(&(&b.vehicle, b.arrive_ts, &b.stop)));
    outcome
}
