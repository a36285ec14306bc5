use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ChoiceParams;
use crate::model::{Leg, Network, SpeedClass, StopId};
use crate::LatLon;

pub const N_FACTORS: usize = 8;

pub const FACTORS: [&str; N_FACTORS] = [
    "transfers",
    "stops_passed",
    "ride_km",
    "travel_time_s",
    "stops_per_km",
    "cum_wait_s",
    "transfer_walk_m",
    "access_walk_m",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanFeatures {
    pub transfers: f64,
    pub stops_passed: f64,
    pub ride_km: f64,
    pub travel_time_s: f64,
    pub stops_per_km: f64,
    pub cum_wait_s: f64,
    pub transfer_walk_m: f64,
    pub access_walk_m: f64,
}

impl PlanFeatures {
    pub fn to_array(&self) -> [f64; N_FACTORS] {
        [
            self.transfers,
            self.stops_passed,
            self.ride_km,
            self.travel_time_s,
            self.stops_per_km,
            self.cum_wait_s,
            self.transfer_walk_m,
            self.access_walk_m,
        ]
    }
}

/// A boarding-to-alighting plan with its factor values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub legs: Vec<Leg>,
    pub features: PlanFeatures,
}

impl Plan {
    pub fn origin(&self) -> &StopId {
        &self.legs[0].board
    }

    pub fn destination(&self) -> &StopId {
        &self.legs.last().unwrap().alight
    }

    pub fn uses_route(&self, route: &crate::RouteId) -> bool {
        self.legs.iter().any(|l| &l.route == route)
    }
}

/// In-vehicle seconds for one leg: distance at the class speed plus a dwell at every intermediate stop.
pub fn leg_time_s(net: &Network, leg: &Leg, params: &ChoiceParams) -> Option<f64> {
    let (i, j) = net.leg_positions(leg)?;
    let kmh = match net.speed_class(&leg.route) {
        SpeedClass::Regular => params.regular_kmh,
        SpeedClass::Express => params.express_kmh,
    };
    let m = net.segment_m(&leg.route, i, j);
    Some(m / (kmh / 3.6) + params.dwell_s * (j - i - 1) as f64)
}

/// Factor values of a plan; `None` when a leg is not a forward ride on its route.
pub fn plan_features(net: &Network, legs: &[Leg], access_walk_m: f64, params: &ChoiceParams) -> Option<PlanFeatures> {
    let mut f = PlanFeatures {
        transfers: legs.len().saturating_sub(1) as f64,
        access_walk_m,
        ..Default::default()
    };
    for (k, leg) in legs.iter().enumerate() {
        let (i, j) = net.leg_positions(leg)?;
        f.stops_passed += (j - i - 1) as f64;
        f.ride_km += net.segment_m(&leg.route, i, j) / 1000.0;
        f.travel_time_s += leg_time_s(net, leg, params)?;
        f.cum_wait_s += net.route(&leg.route)?.headway_min * 60.0 / 2.0;
        if k > 0 {
            let walk = net.stop_distance(&legs[k - 1].alight, &leg.board);
            f.transfer_walk_m += walk;
            f.travel_time_s += walk / params.walk_speed;
        }
    }
    if f.ride_km > 0.0 {
        f.stops_per_km = f.stops_passed / f.ride_km;
    }
    Some(f)
}

/// Reference point for an observed endpoint: home or work when within the walk radius, else the stop itself.
fn anchor(net: &Network, stop: &StopId, home: Option<&StopId>, work: Option<&StopId>, eps: f64) -> LatLon {
    for s in [home, work].into_iter().flatten() {
        if net.stop_distance(stop, s) < eps {
            return net.pos(s);
        }
    }
    net.pos(stop)
}

/// Every plan whose endpoints lie within the walk radius of the observed (or snapped) endpoints.
pub fn enumerate_alternatives(
    net: &Network,
    origin: &StopId,
    dest: &StopId,
    home: Option<&StopId>,
    work: Option<&StopId>,
    params: &ChoiceParams,
) -> Vec<Plan> {
    let eps = params.walk_eps_m;
    let oa = anchor(net, origin, home, work, eps);
    let da = anchor(net, dest, home, work, eps);
    let os: Vec<(StopId, f64)> = net.stops_within(oa, eps).into_iter().map(|(s, d)| (s.id.clone(), d)).collect();
    let ds: Vec<(StopId, f64)> = net.stops_within(da, eps).into_iter().map(|(s, d)| (s.id.clone(), d)).collect();
    let mut seen: BTreeSet<Vec<Leg>> = BTreeSet::new();
    let mut out = Vec::new();
    for (o, wo) in &os {
        for (d, wd) in &ds {
            if o == d || net.stop_distance(o, d) < eps {
                continue;
            }
            let direct = net.direct_legs(o, d);
            let mut plans: Vec<Vec<Leg>> = direct.into_iter().map(|l| vec![l]).collect();
            if plans.is_empty() {
                plans.extend(net.transfer_plans(o, d).into_iter().map(|p| p.to_vec()));
            }
            for legs in plans {
                if !seen.insert(legs.clone()) {
                    continue;
                }
                if let Some(features) = plan_features(net, &legs, wo + wd, params) {
                    out.push(Plan { legs, features });
                }
            }
        }
    }
    if out.len() > params.max_alternatives {
        out.sort_by(|a, b| {
            let ga = a.features.travel_time_s + a.features.cum_wait_s + a.features.access_walk_m / params.walk_speed;
            let gb = b.features.travel_time_s + b.features.cum_wait_s + b.features.access_walk_m / params.walk_speed;
            ga.total_cmp(&gb).then_with(|| a.legs.cmp(&b.legs))
        });
        out.truncate(params.max_alternatives);
    }
    out
}

/// Service-differentiation flags: column m is set when it takes more than one value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Eta(pub [bool; N_FACTORS]);

impl Eta {
    pub fn any(&self) -> bool {
        self.0.iter().any(|&b| b)
    }
}

impl std::fmt::Display for Eta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Eta {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        let bits: Vec<bool> = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(crate::Error::InvalidInput(format!("bad scenario bitstring {s:?}"))),
            })
            .collect::<crate::Result<_>>()?;
        let arr: [bool; N_FACTORS] = bits
            .try_into()
            .map_err(|_| crate::Error::InvalidInput(format!("scenario bitstring {s:?} must have 8 bits")))?;
        Ok(Eta(arr))
    }
}

impl Serialize for Eta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Eta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

const SAME: f64 = 1e-9;

pub fn scenario_vector(rows: &[[f64; N_FACTORS]]) -> Eta {
    let mut eta = [false; N_FACTORS];
    if rows.len() < 2 {
        return Eta(eta);
    }
    for (m, flag) in eta.iter_mut().enumerate() {
        let first = rows[0][m];
        *flag = rows.iter().any(|r| (r[m] - first).abs() > SAME * (1.0 + first.abs()));
    }
    Eta(eta)
}

/// Column-wise min-max scaling over one stage's alternatives; constant columns are left as they are.
pub fn normalize_features(rows: &[[f64; N_FACTORS]]) -> Vec<[f64; N_FACTORS]> {
    let eta = scenario_vector(rows);
    let mut out = rows.to_vec();
    for m in 0..N_FACTORS {
        if !eta.0[m] {
            continue;
        }
        let col: Vec<f64> = rows.iter().map(|r| r[m]).collect();
        for (r, v) in out.iter_mut().zip(crate::stats::minmax(&col)) {
            r[m] = v;
        }
    }
    out
}
