use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::model::{time_of_day, Network, RouteId, StopEvent, StopId, TripRun, DAY_S};
use crate::stats::{gaussian_pdf, mean, median_i64, sample_std};
use crate::{Error, Result};

/// Conditioning applied when selecting historical travel times.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    /// Every sample.
    Theta0,
    /// Departures within ±ΔT of the current departure time of day.
    Theta1,
    /// Runs whose anchor-to-anchor interval time is within ±10% of the current one.
    Theta2,
    /// Both filters.
    Theta3,
}

impl Condition {
    /// Weaker condition to try when support is too small.
    pub fn fallback(self) -> Option<Condition> {
        match self {
            Condition::Theta3 => Some(Condition::Theta2),
            Condition::Theta2 | Condition::Theta1 => Some(Condition::Theta0),
            Condition::Theta0 => None,
        }
    }

    pub fn parse(s: &str) -> Option<Condition> {
        match s.to_ascii_lowercase().as_str() {
            "theta0" | "0" => Some(Condition::Theta0),
            "theta1" | "1" => Some(Condition::Theta1),
            "theta2" | "2" => Some(Condition::Theta2),
            "theta3" | "3" => Some(Condition::Theta3),
            _ => None,
        }
    }
}

/// Gaussian law of the origin-depart to destination-arrive duration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeModel {
    pub origin: StopId,
    pub dest: StopId,
    pub condition: Condition,
    pub mu: f64,
    pub sigma: f64,
    pub support_count: usize,
}

impl TravelTimeModel {
    pub fn density(&self, elapsed: f64) -> f64 {
        gaussian_pdf(elapsed, self.mu, self.sigma)
    }
}

/// What is known about the run being repaired.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitContext {
    /// Departure time at the origin (S_0).
    pub t_s0: i64,
    /// Position of S_1 and the current S_0-depart to S_1-arrive duration.
    pub interval: Option<(usize, i64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitParams {
    pub min_support: usize,
    pub delta_t: i64,
    pub trip_window: f64,
    pub sigma_floor: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            min_support: 5,
            delta_t: 1200,
            trip_window: 0.1,
            sigma_floor: 5.0,
        }
    }
}

struct RouteHistory {
    stops: Vec<StopId>,
    /// Per run, per route position: (arrive, depart).
    runs: Vec<Vec<Option<(i64, i64)>>>,
}

type CacheKey = (RouteId, usize, usize, Condition, i64, i64);

/// Read-only archive of past runs, indexed by route position.
pub struct History {
    routes: HashMap<RouteId, RouteHistory>,
    median_dwell: i64,
    cache: RwLock<HashMap<CacheKey, Result<TravelTimeModel, (usize, usize)>>>,
}

fn tod_diff(a: i64, b: i64) -> i64 {
    let d = (time_of_day(a) - time_of_day(b)).abs();
    d.min(DAY_S - d)
}

impl History {
    pub fn new(events: &[StopEvent], net: &Network) -> Self {
        let mut routes: HashMap<RouteId, RouteHistory> = HashMap::new();
        let mut dwell = Vec::new();
        for run in TripRun::group(events) {
            let Some(route) = net.route(&run.route) else { continue };
            let h = routes.entry(run.route.clone()).or_insert_with(|| RouteHistory {
                stops: route.stops.clone(),
                runs: Vec::new(),
            });
            let mut times = vec![None; route.stops.len()];
            for e in &run.events {
                if let Some(p) = net.position_in_route(&run.route, &e.stop) {
                    times[p] = Some((e.arrive_ts, e.depart_ts));
                    if !e.synthetic {
                        dwell.push(e.depart_ts - e.arrive_ts);
                    }
                }
            }
            h.runs.push(times);
        }
        Self {
            routes,
            median_dwell: median_i64(&dwell).unwrap_or(30),
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// Median dwell over the archive; 30 s when empty.
    pub fn median_dwell(&self) -> i64 {
        self.median_dwell
    }

    pub fn run_count(&self, route: &RouteId) -> usize {
        self.routes.get(route).map_or(0, |h| h.runs.len())
    }

    /// Durations from `origin` departure to `dest` arrival that pass `cond`.
    pub fn samples(
        &self,
        route: &RouteId,
        origin: usize,
        dest: usize,
        cond: Condition,
        ctx: &FitContext,
        params: &FitParams,
    ) -> Vec<f64> {
        let Some(h) = self.routes.get(route) else { return Vec::new() };
        let mut out = Vec::new();
        for run in &h.runs {
            let (Some(o), Some(d)) = (run[origin], run[dest]) else { continue };
            if matches!(cond, Condition::Theta1 | Condition::Theta3) && tod_diff(o.1, ctx.t_s0) > params.delta_t {
                continue;
            }
            if matches!(cond, Condition::Theta2 | Condition::Theta3) {
                let Some((p1, interval)) = ctx.interval else { continue };
                let Some(s1) = run[p1] else { continue };
                let hist = (s1.0 - o.1) as f64;
                if (hist - interval as f64).abs() > params.trip_window * interval as f64 {
                    continue;
                }
            }
            out.push((d.0 - o.1) as f64);
        }
        out
    }

    /// Fits one condition without fallback.
    pub fn fit(
        &self,
        route: &RouteId,
        origin: usize,
        dest: usize,
        cond: Condition,
        ctx: &FitContext,
        params: &FitParams,
    ) -> Result<TravelTimeModel> {
        let key = (
            route.clone(),
            origin,
            dest,
            cond,
            if matches!(cond, Condition::Theta1 | Condition::Theta3) { time_of_day(ctx.t_s0) } else { -1 },
            if matches!(cond, Condition::Theta2 | Condition::Theta3) {
                ctx.interval.map_or(-1, |(p, i)| p as i64 * 1_000_000 + i)
            } else {
                -1
            },
        );
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return hit.clone().map_err(|(support, required)| Error::InsufficientData { support, required });
        }
        let xs = self.samples(route, origin, dest, cond, ctx, params);
        let stops = &self.routes.get(route).ok_or(Error::NoModel)?.stops;
        let res = if xs.len() < params.min_support.max(1) {
            Err((xs.len(), params.min_support))
        } else {
            Ok(TravelTimeModel {
                origin: stops[origin].clone(),
                dest: stops[dest].clone(),
                condition: cond,
                mu: mean(&xs).unwrap(),
                sigma: sample_std(&xs).max(params.sigma_floor),
                support_count: xs.len(),
            })
        };
        self.cache.write().unwrap().insert(key, res.clone());
        res.map_err(|(support, required)| Error::InsufficientData { support, required })
    }

    /// Fits `cond`, falling back Θ3→Θ2→Θ0 (Θ1→Θ0) on insufficient support.
    pub fn fit_with_fallback(
        &self,
        route: &RouteId,
        origin: usize,
        dest: usize,
        cond: Condition,
        ctx: &FitContext,
        params: &FitParams,
    ) -> Result<TravelTimeModel> {
        let mut c = Some(cond);
        let mut last = Error::NoModel;
        while let Some(cur) = c {
            match self.fit(route, origin, dest, cur, ctx, params) {
                Ok(m) => return Ok(m),
                Err(e @ Error::InsufficientData { .. }) => last = e,
                Err(e) => return Err(e),
            }
            c = cur.fallback();
        }
        Err(last)
    }
}

/// Model from raw samples, used where no archive index is needed.
pub fn fit_samples(origin: StopId, dest: StopId, cond: Condition, xs: &[f64], params: &FitParams) -> Result<TravelTimeModel> {
    if xs.len() < params.min_support.max(1) {
        return Err(Error::InsufficientData {
            support: xs.len(),
            required: params.min_support,
        });
    }
    Ok(TravelTimeModel {
        origin,
        dest,
        condition: cond,
        mu: mean(xs).unwrap(),
        sigma: sample_std(xs).max(params.sigma_floor),
        support_count: xs.len(),
    })
}
