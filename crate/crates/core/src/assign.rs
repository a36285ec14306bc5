//! Ridership redistribution when a new route joins the network.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{enumerate_alternatives, Anchors, plan_features, ChoiceParams, ChoiceStage, ModelIndex, Plan, N_FACTORS};
use crate::journeys::Journey;
use crate::model::{CardId, Leg, Network, Route, RouteId, StopId};
use crate::stats::{minmax, softmax};
use crate::Result;

/// Ride time plus transfer walking plus half-headway waits, in seconds.
pub fn generalized_time(plan: &Plan) -> f64 {
    plan.features.travel_time_s + plan.features.cum_wait_s
}

/// Softmax of negated min-max-normalized generalized times.
pub fn utility_assign(plans: &[Plan]) -> Vec<f64> {
    let t: Vec<f64> = plans.iter().map(generalized_time).collect();
    softmax(&minmax(&t).iter().map(|x| -x).collect::<Vec<_>>())
}

/// True when some forward pair of new-route stops lies within a combined walk of `2·eps` of the OD.
pub fn affected(net: &Network, origin: &StopId, dest: &StopId, new_route: &Route, eps: f64) -> bool {
    let stops = &new_route.stops;
    let from_o: Vec<f64> = stops.iter().map(|s| net.stop_distance(s, origin)).collect();
    let to_d: Vec<f64> = stops.iter().map(|s| net.stop_distance(s, dest)).collect();
    let mut best_o = f64::INFINITY;
    for j in 0..stops.len() {
        if best_o + to_d[j] <= 2.0 * eps {
            return true;
        }
        best_o = best_o.min(from_o[j]);
    }
    false
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Personal,
    Macro,
    Utility,
}

/// Probabilities from the passenger's model for the scenario of these plans, else the macro model, else generalized time.
pub fn preference_assign(card: &str, plans: &[Plan], models: &ModelIndex) -> (Vec<f64>, ModelSource) {
    let raw: Vec<[f64; N_FACTORS]> = plans.iter().map(|p| p.features.to_array()).collect();
    let stage = ChoiceStage::new(&raw, vec![0.0; plans.len()]);
    if let Some(m) = models.personal(card, &stage.eta) {
        return (m.probabilities(&stage), ModelSource::Personal);
    }
    if let Some(m) = models.macro_model(&stage.eta) {
        return (m.probabilities(&stage), ModelSource::Macro);
    }
    (utility_assign(plans), ModelSource::Utility)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignMode {
    Utility,
    Preference,
}

/// Repeated rides of one passenger between one OD on one observed plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassengerDemand {
    pub card: CardId,
    pub origin: StopId,
    pub dest: StopId,
    pub legs: Vec<Leg>,
    pub count: f64,
    pub home: Option<StopId>,
    pub work: Option<StopId>,
}

/// Aggregates fully resolved journeys into demand rows.
pub fn demand_from_journeys(journeys: &[Journey], anchors: &Anchors) -> Vec<PassengerDemand> {
    let mut agg: BTreeMap<(CardId, Vec<Leg>), f64> = BTreeMap::new();
    for j in journeys {
        let legs: Option<Vec<Leg>> = j
            .trips
            .iter()
            .map(|t| {
                Some(Leg {
                    route: t.route.clone(),
                    board: t.board_stop.clone()?,
                    alight: t.alight_stop.clone()?,
                })
            })
            .collect();
        if let Some(legs) = legs.filter(|l| !l.is_empty()) {
            *agg.entry((j.card.clone(), legs)).or_default() += 1.0;
        }
    }
    agg.into_iter()
        .map(|((card, legs), count)| {
            let (home, work) = anchors.get(&card).cloned().unwrap_or((None, None));
            PassengerDemand {
                origin: legs[0].board.clone(),
                dest: legs.last().unwrap().alight.clone(),
                card,
                legs,
                count,
                home,
                work,
            }
        })
        .collect()
}

/// Expected leg ridership per route and (board, alight) cell.
pub type LegMatrix = BTreeMap<RouteId, BTreeMap<(StopId, StopId), f64>>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Redistribution {
    pub legs: LegMatrix,
    pub journeys_before: f64,
    pub journeys_after: f64,
    pub affected_journeys: f64,
    pub sources: BTreeMap<String, f64>,
}

impl Redistribution {
    /// Dense matrix for one route indexed by stop positions.
    pub fn route_matrix(&self, net: &Network, route: &RouteId) -> Vec<Vec<f64>> {
        let n = net.route(route).map_or(0, |r| r.stops.len());
        let mut m = vec![vec![0.0; n]; n];
        if let Some(cells) = self.legs.get(route) {
            for ((a, b), v) in cells {
                if let (Some(i), Some(j)) = (net.position_in_route(route, a), net.position_in_route(route, b)) {
                    m[i][j] += v;
                }
            }
        }
        m
    }

    fn add_legs(&mut self, legs: &[Leg], w: f64) {
        for l in legs {
            *self
                .legs
                .entry(l.route.clone())
                .or_default()
                .entry((l.board.clone(), l.alight.clone()))
                .or_default() += w;
        }
    }

    fn merge(mut self, other: Redistribution) -> Redistribution {
        for (r, cells) in other.legs {
            let mine = self.legs.entry(r).or_default();
            for (k, v) in cells {
                *mine.entry(k).or_default() += v;
            }
        }
        self.journeys_before += other.journeys_before;
        self.journeys_after += other.journeys_after;
        self.affected_journeys += other.affected_journeys;
        for (k, v) in other.sources {
            *self.sources.entry(k).or_default() += v;
        }
        self
    }
}

/// Plans an affected passenger chooses from: enumerated alternatives plus the observed plan.
pub fn demand_plans(net: &Network, d: &PassengerDemand, params: &ChoiceParams) -> Vec<Plan> {
    let mut plans = enumerate_alternatives(net, &d.origin, &d.dest, d.home.as_ref(), d.work.as_ref(), params);
    if !plans.iter().any(|p| p.legs == d.legs) {
        if let Some(f) = plan_features(net, &d.legs, 0.0, params) {
            plans.push(Plan {
                legs: d.legs.clone(),
                features: f,
            });
        }
    }
    plans
}

/// Single-pass expected-value assignment; unaffected demand stays on its observed plan.
pub fn redistribute(
    demand: &[PassengerDemand],
    base: &Network,
    new_route: Option<&Route>,
    models: &ModelIndex,
    mode: AssignMode,
    params: &ChoiceParams,
) -> Result<Redistribution> {
    let net = match new_route {
        Some(r) => base.with_route(r.clone())?,
        None => base.clone(),
    };
    let out = demand
        .par_iter()
        .map(|d| {
            let mut acc = Redistribution {
                journeys_before: d.count,
                ..Default::default()
            };
            let hit = new_route.is_some_and(|r| affected(&net, &d.origin, &d.dest, r, params.walk_eps_m));
            if !hit {
                acc.add_legs(&d.legs, d.count);
                acc.journeys_after = d.count;
                return acc;
            }
            let plans = demand_plans(&net, d, params);
            let (p, source) = match mode {
                AssignMode::Utility => (utility_assign(&plans), ModelSource::Utility),
                AssignMode::Preference => preference_assign(d.card.as_str(), &plans, models),
            };
            for (plan, pi) in plans.iter().zip(&p) {
                acc.add_legs(&plan.legs, pi * d.count);
                acc.journeys_after += pi * d.count;
            }
            acc.affected_journeys = d.count;
            acc.sources.insert(format!("{source:?}").to_lowercase(), d.count);
            acc
        })
        .reduce(Redistribution::default, Redistribution::merge);
    Ok(out)
}

/// Multinomial draw of `n` choices from `p`.
pub fn sample_choices(p: &[f64], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut counts = vec![0; p.len()];
    for _ in 0..n {
        let mut r: f64 = rng.random();
        let mut pick = p.len() - 1;
        for (i, pi) in p.iter().enumerate() {
            if r < *pi {
                pick = i;
                break;
            }
            r -= pi;
        }
        counts[pick] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::{Eta, PlanFeatures, PreferenceModel};
    use crate::genesis::fixtures::corridor;
    use crate::model::{Direction, SpeedClass};

    fn plan(t: f64, w: f64) -> Plan {
        Plan {
            legs: vec![],
            features: PlanFeatures {
                travel_time_s: t,
                cum_wait_s: w,
                ..Default::default()
            },
        }
    }

    #[test]
    fn generalized_time_example() {
        let net = corridor(8, 5000.0 / 7.0, 10.0);
        let stops = net.routes()[0].stops.clone();
        let legs = net.direct_legs(&stops[0], &stops[7]);
        let f = plan_features(&net, &legs[..1], 0.0, &ChoiceParams::default()).unwrap();
        let g = generalized_time(&Plan { legs: legs[..1].to_vec(), features: f });
        assert!((g - 1380.0).abs() < 1.0, "{g}");
        assert_eq!(generalized_time(&plan(500.0, 0.0)), 500.0);
    }

    #[test]
    fn softmax_baseline() {
        let p = utility_assign(&[plan(100.0, 0.0), plan(100.0, 0.0)]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = utility_assign(&[plan(100.0, 0.0), plan(200.0, 0.0)]);
        assert!((p[0] - 0.731).abs() < 1e-3 && (p[1] - 0.269).abs() < 1e-3);
    }

    #[test]
    fn affected_predicate() {
        let net = corridor(6, 400.0, 10.0);
        let up = net.routes()[0].clone();
        let down = net.routes()[1].clone();
        let s = |i: usize| up.stops[i].clone();
        assert!(affected(&net, &s(0), &s(3), &up, 350.0));
        assert!(!affected(&net, &s(0), &s(3), &down, 350.0));
        let short = Route { stops: up.stops[2..].to_vec(), ..up.clone() };
        // nearest same-direction stops 800 m from the origin
        assert!(!affected(&net, &s(0), &s(5), &short, 350.0));
    }

    #[test]
    fn dispatch_and_fallback() {
        let plans = vec![plan(100.0, 60.0), plan(200.0, 300.0)];
        let eta: Eta = "00010100".parse().unwrap();
        let none = ModelIndex::default();
        let (p, src) = preference_assign("c", &plans, &none);
        assert_eq!(src, ModelSource::Utility);
        assert_eq!(p, utility_assign(&plans));
        let mut m = PreferenceModel {
            owner: "macro".into(),
            eta,
            weights: [None, None, None, Some(0.0), None, Some(3.0), None, None],
            b: 0.0,
            r2: 0.7,
            support: 5.0,
            clipped: false,
        };
        let idx = ModelIndex::new([m.clone()]);
        let (p, src) = preference_assign("c", &plans, &idx);
        assert_eq!(src, ModelSource::Macro);
        assert!((p[0] - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-12);
        m.owner = "c".into();
        let idx = ModelIndex::new([m]);
        assert_eq!(preference_assign("c", &plans, &idx).1, ModelSource::Personal);
    }

    fn demand(net: &Network, i: usize, j: usize, n: f64) -> PassengerDemand {
        let r = &net.routes()[0];
        PassengerDemand {
            card: CardId::new(format!("c{i}{j}")),
            origin: r.stops[i].clone(),
            dest: r.stops[j].clone(),
            legs: vec![Leg {
                route: r.id.clone(),
                board: r.stops[i].clone(),
                alight: r.stops[j].clone(),
            }],
            count: n,
            home: None,
            work: None,
        }
    }

    #[test]
    fn twin_route_splits_evenly_and_conserves() {
        let net = corridor(6, 600.0, 10.0);
        let twin = Route {
            id: RouteId::new("TW"),
            ..net.routes()[0].clone()
        };
        let d = vec![demand(&net, 0, 3, 10.0), demand(&net, 1, 5, 4.0)];
        let out = redistribute(&d, &net, Some(&twin), &ModelIndex::default(), AssignMode::Utility, &ChoiceParams::default()).unwrap();
        assert!((out.journeys_after - out.journeys_before).abs() <= 1e-9 * out.journeys_before);
        let tw = &out.legs[&RouteId::new("TW")];
        let ku = &out.legs[&RouteId::new("KU")];
        for (k, v) in tw {
            assert!((v - ku[k]).abs() < 1e-9);
        }
        assert!((tw.values().sum::<f64>() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn no_new_route_is_identity() {
        let net = corridor(6, 600.0, 10.0);
        let d = vec![demand(&net, 0, 3, 10.0), demand(&net, 1, 5, 4.0)];
        let out = redistribute(&d, &net, None, &ModelIndex::default(), AssignMode::Preference, &ChoiceParams::default()).unwrap();
        let m = out.route_matrix(&net, &RouteId::new("KU"));
        assert_eq!(m[0][3], 10.0);
        assert_eq!(m[1][5], 4.0);
        assert_eq!(m.iter().flatten().sum::<f64>(), 14.0);
        let far = Route {
            id: RouteId::new("FAR"),
            direction: Direction::Down,
            stops: net.routes()[1].stops.clone(),
            headway_min: 5.0,
            speed_class: SpeedClass::Express,
        };
        let out2 = redistribute(&d, &net, Some(&far), &ModelIndex::default(), AssignMode::Utility, &ChoiceParams::default()).unwrap();
        assert_eq!(out2.legs, out.legs);
    }
}
