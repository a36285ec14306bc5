//! AFC/AVL clock offset removal by pulse-signal cross-correlation, then boarding-stop matching.

mod correlate;
mod signal;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{service_day, Network, StopEvent, SwipeRecord, VehicleId};
use crate::{Error, Result};

pub use correlate::{
    accept_offset, correlate, cross_correlate_offset, matched_blocks, sparsity, Correlation, OffsetResult,
};
pub use signal::{build_pulse_signal, downsample, segment_swipes, PulseSignal, SwipeGroup};

pub const DEFAULT_ETA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyncParams {
    pub epsilon: i64,
    pub pulse_width: i64,
    pub resample: i64,
    pub tau_max: i64,
    pub eta: f64,
    /// Run the 1 s scan around the coarse peak.
    pub refine: bool,
    /// Align the earliest representatives with arrival edges after the fine scan.
    pub edge_align: bool,
    /// Swipes this long after arrival still match a stop whose successor is missing.
    pub board_window: i64,
    /// Above this sparsity a zero offset that explains as many representatives as the peak is kept.
    pub sparse_guard: f64,
}

impl Default for SyncParams {
    fn default() -> Self {
        Self {
            epsilon: 40,
            pulse_width: 20,
            resample: 10,
            tau_max: 3600,
            eta: DEFAULT_ETA,
            refine: true,
            edge_align: true,
            board_window: 30,
            sparse_guard: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyncOutcome {
    /// Input swipes, corrected when the offset was accepted; `boarding_stop` set where matched.
    pub swipes: Vec<SwipeRecord>,
    pub result: OffsetResult,
    /// Peak of the downsampled scan alone.
    pub coarse_tau: i64,
    pub matched: usize,
}

/// Coarse-to-fine offset estimate from group representatives and arrival times.
pub fn estimate_offset(reps: &[i64], arrivals: &[i64], params: &SyncParams) -> Result<(OffsetResult, i64)> {
    if arrivals.is_empty() {
        return Err(Error::NoAvlEvents);
    }
    if reps.is_empty() {
        return Err(Error::InsufficientEvents);
    }
    let t_w = params.pulse_width;
    let lo = reps.iter().chain(arrivals).copied().min().unwrap();
    let hi = reps.iter().chain(arrivals).copied().max().unwrap() + t_w + 1;
    let len = (hi - lo) as usize;
    let c1 = build_pulse_signal(reps, t_w, 1, params.epsilon, lo, len)?;
    let v1 = build_pulse_signal(arrivals, t_w, 1, params.epsilon, lo, len)?;
    let ts = params.resample.max(1);
    let mut ops = 0;
    let (coarse_tau, coarse_cor) = {
        let cd = downsample(&c1, ts)?;
        let vd = downsample(&v1, ts)?;
        let k = params.tau_max / ts;
        let cor = correlate(&cd, &vd, -k, k)?;
        ops += cor.ops;
        let (lag, _) = cor.peak();
        (interpolate_peak(&cor, lag, ts), (cor.secondary_ratio(lag, (t_w / ts).max(1)), lag))
    };
    let mut tau = coarse_tau;
    if params.refine && ts > 1 {
        let lo_k = (coarse_tau - ts).max(-params.tau_max);
        let hi_k = (coarse_tau + ts).min(params.tau_max);
        let cor = correlate(&c1, &v1, lo_k, hi_k)?;
        ops += cor.ops;
        tau = cor.peak().0;
    }
    if params.edge_align && params.refine {
        tau = align_edges(reps, arrivals, tau, t_w).clamp(-params.tau_max, params.tau_max);
    }
    let n_cr = reps.len();
    let n_vr = arrivals.len();
    let mut cor_peak = matched_reps(reps, arrivals, tau, t_w);
    if tau != 0 && sparsity(n_cr, n_vr)? > params.sparse_guard {
        let at_zero = boarded_reps(arrivals, reps, params.board_window.max(t_w));
        if at_zero >= cor_peak {
            tau = 0;
            cor_peak = at_zero;
        }
    }
    let mut r = OffsetResult {
        tau_star: tau,
        cor_peak,
        n_cr,
        n_vr,
        sparsity: sparsity(n_cr, n_vr)?,
        accepted: false,
        peak_ratio: coarse_cor.0,
        ops,
    };
    r.accepted = accept_offset(&r, params.eta);
    Ok((r, coarse_tau))
}

/// Peak position in seconds refined by a parabola through the peak and its two neighbours.
fn interpolate_peak(cor: &Correlation, lag: i64, ts: i64) -> i64 {
    let hi = cor.lag_lo + cor.values.len() as i64 - 1;
    if ts == 1 || lag <= cor.lag_lo || lag >= hi {
        return lag * ts;
    }
    let (a, b, c) = (cor.at(lag - 1) as f64, cor.at(lag) as f64, cor.at(lag + 1) as f64);
    let den = a - 2.0 * b + c;
    if den >= 0.0 {
        return lag * ts;
    }
    let shift = (0.5 * (a - c) / den).clamp(-0.5, 0.5);
    ((lag as f64 + shift) * ts as f64).round() as i64
}

fn nearest(sorted: &[i64], t: i64) -> i64 {
    let i = sorted.partition_point(|&a| a <= t);
    let below = i.checked_sub(1).map(|j| sorted[j]);
    let above = sorted.get(i).copied();
    match (below, above) {
        (Some(b), Some(a)) => {
            if t - b <= a - t {
                b
            } else {
                a
            }
        }
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => t,
    }
}

/// Shifts `tau` so the earliest consistent representative lands on its arrival.
fn align_edges(reps: &[i64], arrivals: &[i64], tau: i64, t_w: i64) -> i64 {
    let mut sorted = arrivals.to_vec();
    sorted.sort_unstable();
    let residuals: Vec<i64> = reps
        .iter()
        .map(|&r| r + tau - nearest(&sorted, r + tau))
        .filter(|d| d.abs() <= 2 * t_w)
        .collect();
    let Some(med) = crate::stats::median_i64(&residuals) else {
        return tau;
    };
    let floor = residuals
        .iter()
        .copied()
        .filter(|d| (d - med).abs() <= 30)
        .min()
        .unwrap_or(0);
    tau - floor
}

/// Representatives falling within `window` after some arrival, uncorrected.
fn boarded_reps(arrivals: &[i64], reps: &[i64], window: i64) -> usize {
    let mut sorted = arrivals.to_vec();
    sorted.sort_unstable();
    reps.iter()
        .filter(|&&r| {
            let i = sorted.partition_point(|&a| a <= r);
            i > 0 && r - sorted[i - 1] <= window
        })
        .count()
}

fn matched_reps(reps: &[i64], arrivals: &[i64], tau: i64, t_w: i64) -> usize {
    let mut sorted = arrivals.to_vec();
    sorted.sort_unstable();
    reps.iter()
        .filter(|&&r| (r + tau - nearest(&sorted, r + tau)).abs() < t_w)
        .count()
}

/// Boarding event for a corrected time, if the stop's window covers it.
fn covering_event<'a>(events: &'a [StopEvent], t: i64, net: &Network, window: i64) -> Option<&'a StopEvent> {
    let i = events.partition_point(|e| e.arrive_ts <= t).checked_sub(1)?;
    let e = &events[i];
    let adjacent_next = events.get(i + 1).is_some_and(|n| {
        n.route == e.route
            && n.trip_index == e.trip_index
            && matches!(
                (net.position_in_route(&e.route, &e.stop), net.position_in_route(&n.route, &n.stop)),
                (Some(a), Some(b)) if b == a + 1
            )
    });
    (adjacent_next || t <= e.depart_ts.max(e.arrive_ts + window)).then_some(e)
}

/// Estimates the vehicle-day offset, corrects swipe times and assigns boarding stops.
pub fn rectify_and_match(
    swipes: &[SwipeRecord],
    events: &[StopEvent],
    net: &Network,
    params: &SyncParams,
) -> Result<SyncOutcome> {
    let mut order: Vec<usize> = (0..swipes.len()).collect();
    order.sort_by_key(|&i| (swipes[i].ts, i));
    let ts: Vec<i64> = order.iter().map(|&i| swipes[i].ts).collect();
    let groups = segment_swipes(&ts, params.epsilon);
    let reps: Vec<i64> = groups.iter().map(|g| g.rep).collect();
    let mut evs = events.to_vec();
    evs.sort_by_key(|e| (e.arrive_ts, e.depart_ts));
    let arrivals: Vec<i64> = evs.iter().map(|e| e.arrive_ts).collect();
    let (result, coarse_tau) = estimate_offset(&reps, &arrivals, params)?;
    let mut out = swipes.to_vec();
    for s in &mut out {
        s.boarding_stop = None;
        s.trip_index = None;
    }
    let mut matched = 0;
    if result.accepted {
        for g in &groups {
            let t = g.rep + result.tau_star;
            let hit = covering_event(&evs, t, net, params.board_window);
            for &m in &g.members {
                let s = &mut out[order[m]];
                s.ts += result.tau_star;
                if let Some(e) = hit {
                    s.boarding_stop = Some(e.stop.clone());
                    s.trip_index = Some(e.trip_index);
                    matched += 1;
                }
            }
        }
    }
    Ok(SyncOutcome {
        swipes: out,
        result,
        coarse_tau,
        matched,
    })
}

/// Per vehicle-day diagnostics line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleDayReport {
    pub vehicle: VehicleId,
    pub day: i64,
    pub n_swipes: usize,
    pub matched: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<OffsetResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs [`rectify_and_match`] over every vehicle-day in parallel; output sorted by (vehicle, ts, card).
pub fn sync_all(
    swipes: &[SwipeRecord],
    events: &[StopEvent],
    net: &Network,
    params: &SyncParams,
) -> (Vec<SwipeRecord>, Vec<VehicleDayReport>) {
    let mut by_key: BTreeMap<(VehicleId, i64), (Vec<SwipeRecord>, Vec<StopEvent>)> = BTreeMap::new();
    for s in swipes {
        by_key.entry((s.vehicle.clone(), service_day(s.ts))).or_default().0.push(s.clone());
    }
    for e in events {
        if let Some(slot) = by_key.get_mut(&(e.vehicle.clone(), service_day(e.arrive_ts))) {
            slot.1.push(e.clone());
        }
    }
    let parts: Vec<(Vec<SwipeRecord>, VehicleDayReport)> = by_key
        .into_par_iter()
        .map(|((vehicle, day), (sw, ev))| {
            let n_swipes = sw.len();
            match rectify_and_match(&sw, &ev, net, params) {
                Ok(o) => (
                    o.swipes,
                    VehicleDayReport {
                        vehicle,
                        day,
                        n_swipes,
                        matched: o.matched,
                        result: Some(o.result),
                        error: None,
                    },
                ),
                Err(e) => {
                    let mut sw = sw;
                    for s in &mut sw {
                        s.boarding_stop = None;
                        s.trip_index = None;
                    }
                    (
                        sw,
                        VehicleDayReport {
                            vehicle,
                            day,
                            n_swipes,
                            matched: 0,
                            result: None,
                            error: Some(e.to_string()),
                        },
                    )
                }
            }
        })
        .collect();
    let mut out = Vec::with_capacity(swipes.len());
    let mut reports = Vec::with_capacity(parts.len());
    for (s, r) in parts {
        out.extend(s);
        reports.push(r);
    }
    out.sort_by(|a, b| (&a.vehicle, a.ts, &a.card).cmp(&(&b.vehicle, b.ts, &b.card)));
    (out, reports)
}
