//! Route-choice factors, scenario vectors and multinomial-logit preference models.

mod features;
mod mnl;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chains::PassengerChains;
use crate::journeys::Journey;
use crate::model::{CardId, Leg, Network, StopId};

pub use features::{
    enumerate_alternatives, leg_time_s, normalize_features, plan_features, scenario_vector, Eta, Plan,
    PlanFeatures, FACTORS, N_FACTORS,
};
pub use mnl::{
    fit_mnl, gradient, log_likelihood, null_log_likelihood, probabilities, utilities, ChoiceStage, MnlFit,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChoiceParams {
    pub walk_eps_m: f64,
    pub regular_kmh: f64,
    pub express_kmh: f64,
    pub dwell_s: f64,
    pub walk_speed: f64,
    pub max_alternatives: usize,
    pub min_swipes: usize,
    pub min_r2: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub max_weight: f64,
}

impl Default for ChoiceParams {
    fn default() -> Self {
        ChoiceParams {
            walk_eps_m: 350.0,
            regular_kmh: 20.0,
            express_kmh: 30.0,
            dwell_s: 30.0,
            walk_speed: 1.2,
            max_alternatives: 12,
            min_swipes: 30,
            min_r2: 0.5,
            max_iter: 2000,
            tol: 1e-8,
            max_weight: 50.0,
        }
    }
}

/// Factor weights of one passenger (or the macro population) under one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceModel {
    pub owner: String,
    pub eta: Eta,
    /// Absent where the scenario flag is unset: the weight is not identifiable there.
    pub weights: [Option<f64>; N_FACTORS],
    pub b: f64,
    pub r2: f64,
    pub support: f64,
    #[serde(default)]
    pub clipped: bool,
}

pub const MACRO_OWNER: &str = "macro";

impl PreferenceModel {
    pub fn from_fit(owner: impl Into<String>, eta: Eta, fit: &MnlFit, support: f64) -> Self {
        PreferenceModel {
            owner: owner.into(),
            eta,
            weights: std::array::from_fn(|k| eta.0[k].then_some(fit.weights[k])),
            b: 0.0,
            r2: fit.r2.unwrap_or(0.0),
            support,
            clipped: fit.clipped,
        }
    }

    pub fn dense(&self) -> [f64; N_FACTORS] {
        std::array::from_fn(|k| self.weights[k].unwrap_or(0.0))
    }

    /// Choice probabilities over a stage's normalized alternatives.
    pub fn probabilities(&self, stage: &ChoiceStage) -> Vec<f64> {
        probabilities(&self.dense(), &stage.eta, &stage.x)
    }
}

/// Support-weighted mean within each scenario; the result carries `owner`.
pub fn aggregate_models(models: &[PreferenceModel], owner: &str) -> Vec<PreferenceModel> {
    let mut groups: BTreeMap<Eta, Vec<&PreferenceModel>> = BTreeMap::new();
    for m in models {
        groups.entry(m.eta).or_default().push(m);
    }
    groups
        .into_iter()
        .map(|(eta, ms)| {
            let total: f64 = ms.iter().map(|m| m.support).sum();
            let wt = |m: &PreferenceModel| if total > 0.0 { m.support / total } else { 1.0 / ms.len() as f64 };
            PreferenceModel {
                owner: owner.to_string(),
                eta,
                weights: std::array::from_fn(|k| eta.0[k].then(|| ms.iter().map(|m| wt(m) * m.weights[k].unwrap_or(0.0)).sum())),
                b: ms.iter().map(|m| wt(m) * m.b).sum(),
                r2: ms.iter().map(|m| wt(m) * m.r2).sum(),
                support: total,
                clipped: ms.iter().any(|m| m.clipped),
            }
        })
        .collect()
}

/// The factor whose weight is the unique maximum and beats the runner-up by 20% of the runner-up's magnitude.
pub fn dominant_factor(model: &PreferenceModel) -> Option<usize> {
    let mut present: Vec<(usize, f64)> = model.weights.iter().enumerate().filter_map(|(k, w)| w.map(|w| (k, w))).collect();
    present.sort_by(|a, b| b.1.total_cmp(&a.1));
    match present.as_slice() {
        [] => None,
        [(k, w)] => (*w > 0.0).then_some(*k),
        [(k, w1), (_, w2), ..] => (*w1 - *w2 > 0.2 * w2.abs() && *w1 > *w2).then_some(*k),
    }
}

/// Personal models keyed by (card, scenario) with macro fallbacks by scenario.
#[derive(Clone, Debug, Default)]
pub struct ModelIndex {
    personal: HashMap<(String, Eta), PreferenceModel>,
    macros: HashMap<Eta, PreferenceModel>,
}

impl ModelIndex {
    pub fn new(models: impl IntoIterator<Item = PreferenceModel>) -> Self {
        let mut idx = ModelIndex::default();
        for m in models {
            if m.owner == MACRO_OWNER {
                idx.macros.insert(m.eta, m);
            } else {
                idx.personal.insert((m.owner.clone(), m.eta), m);
            }
        }
        idx
    }

    pub fn personal(&self, card: &str, eta: &Eta) -> Option<&PreferenceModel> {
        self.personal.get(&(card.to_string(), *eta))
    }

    pub fn macro_model(&self, eta: &Eta) -> Option<&PreferenceModel> {
        self.macros.get(eta)
    }

    pub fn is_empty(&self) -> bool {
        self.personal.is_empty() && self.macros.is_empty()
    }
}

/// One OD stage of a passenger with the plans behind its rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedStage {
    pub origin: StopId,
    pub dest: StopId,
    pub plans: Vec<Plan>,
    pub stage: ChoiceStage,
}

fn journey_legs(j: &Journey) -> Option<Vec<Leg>> {
    j.trips
        .iter()
        .map(|t| {
            Some(Leg {
                route: t.route.clone(),
                board: t.board_stop.clone()?,
                alight: t.alight_stop.clone()?,
            })
        })
        .collect()
}

/// Groups a passenger's journeys by OD and counts the chosen plan among the enumerated alternatives.
pub fn observed_stages(
    journeys: &[&Journey],
    net: &Network,
    home: Option<&StopId>,
    work: Option<&StopId>,
    params: &ChoiceParams,
) -> Vec<ObservedStage> {
    let mut by_od: BTreeMap<(StopId, StopId), Vec<Vec<Leg>>> = BTreeMap::new();
    for j in journeys {
        if let Some(legs) = journey_legs(j) {
            let od = (legs[0].board.clone(), legs.last().unwrap().alight.clone());
            by_od.entry(od).or_default().push(legs);
        }
    }
    let mut out = Vec::new();
    for ((o, d), chosen) in by_od {
        let mut plans = enumerate_alternatives(net, &o, &d, home, work, params);
        let mut counts = vec![0.0; plans.len()];
        for legs in chosen {
            let idx = match plans.iter().position(|p| p.legs == legs) {
                Some(i) => i,
                None => {
                    let Some(f) = plan_features(net, &legs, 0.0, params) else { continue };
                    plans.push(Plan { legs, features: f });
                    counts.push(0.0);
                    plans.len() - 1
                }
            };
            counts[idx] += 1.0;
        }
        if plans.len() < 2 || counts.iter().sum::<f64>() == 0.0 {
            continue;
        }
        let raw: Vec<[f64; N_FACTORS]> = plans.iter().map(|p| p.features.to_array()).collect();
        let stage = ChoiceStage::new(&raw, counts);
        if stage.eta.any() {
            out.push(ObservedStage {
                origin: o,
                dest: d,
                plans,
                stage,
            });
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub passengers: usize,
    pub fitted: usize,
    pub rejected_r2: usize,
    pub rejected_convergence: usize,
}

/// Fits one model per scenario from stages pooled within that scenario.
pub fn fit_stages(owner: &str, stages: &[ChoiceStage], params: &ChoiceParams) -> Vec<(PreferenceModel, bool)> {
    let mut groups: BTreeMap<Eta, Vec<ChoiceStage>> = BTreeMap::new();
    for s in stages {
        groups.entry(s.eta).or_default().push(s.clone());
    }
    groups
        .into_iter()
        .map(|(eta, group)| {
            let fit = fit_mnl(&group, params);
            let support = group.iter().map(ChoiceStage::total).sum();
            (PreferenceModel::from_fit(owner, eta, &fit, support), fit.converged)
        })
        .collect()
}

/// Home and work stop per card.
pub type Anchors = BTreeMap<CardId, (Option<StopId>, Option<StopId>)>;

pub fn anchors_from_chains(chains: &[PassengerChains]) -> Anchors {
    chains
        .iter()
        .map(|p| (p.card.clone(), (p.home_work.home.clone(), p.home_work.work.clone())))
        .collect()
}

/// Personal models for cards with at least `min_swipes` rides, plus macro models per scenario.
pub fn fit_all(
    journeys: &[Journey],
    anchors: &Anchors,
    net: &Network,
    params: &ChoiceParams,
) -> (Vec<PreferenceModel>, FitSummary) {
    let mut by_card: BTreeMap<&CardId, Vec<&Journey>> = BTreeMap::new();
    for j in journeys {
        by_card.entry(&j.card).or_default().push(j);
    }
    let eligible: Vec<(&CardId, Vec<&Journey>)> = by_card
        .into_iter()
        .filter(|(_, js)| js.iter().map(|j| j.trips.len()).sum::<usize>() >= params.min_swipes)
        .collect();
    let per: Vec<Vec<(PreferenceModel, bool)>> = eligible
        .par_iter()
        .map(|(card, js)| {
            let (home, work) = anchors.get(*card).map_or((None, None), |(h, w)| (h.as_ref(), w.as_ref()));
            let stages: Vec<ChoiceStage> = observed_stages(js, net, home, work, params).into_iter().map(|s| s.stage).collect();
            fit_stages(card.as_str(), &stages, params)
        })
        .collect();
    let mut summary = FitSummary {
        passengers: eligible.len(),
        ..Default::default()
    };
    let mut accepted = Vec::new();
    for (m, converged) in per.into_iter().flatten() {
        if !converged {
            log::warn!("choice model for {} scenario {} did not converge", m.owner, m.eta);
            summary.rejected_convergence += 1;
        } else if m.r2 < params.min_r2 {
            summary.rejected_r2 += 1;
        } else {
            accepted.push(m);
        }
    }
    summary.fitted = accepted.len();
    let macros = aggregate_models(&accepted, MACRO_OWNER);
    accepted.extend(macros);
    (accepted, summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genesis::fixtures::corridor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(weights: [Option<f64>; N_FACTORS], support: f64) -> PreferenceModel {
        PreferenceModel {
            owner: "p".into(),
            eta: Eta(std::array::from_fn(|k| weights[k].is_some())),
            weights,
            b: 0.0,
            r2: 0.6,
            support,
            clipped: false,
        }
    }

    #[test]
    fn scenario_flags() {
        let same = [[1.0; N_FACTORS]; 3];
        assert!(!scenario_vector(&same).any());
        let mut wait_only = same;
        wait_only[1][5] = 2.0;
        assert_eq!(scenario_vector(&wait_only).to_string(), "00000100");
        let all: Vec<[f64; N_FACTORS]> = (0..2).map(|i| [i as f64; N_FACTORS]).collect();
        assert_eq!(scenario_vector(&all).to_string(), "11111111");
        assert!(!scenario_vector(&all[..1]).any());
        assert_eq!("00000100".parse::<Eta>().unwrap(), scenario_vector(&wait_only));
    }

    #[test]
    fn minmax_columns() {
        let rows = vec![[2.0, 1.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0], [4.0, 2.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0], [3.0, 3.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0]];
        let n = normalize_features(&rows);
        assert_eq!([n[0][0], n[1][0], n[2][0]], [0.0, 1.0, 0.5]);
        assert_eq!([n[0][1], n[1][1], n[2][1]], [0.0, 0.5, 1.0]);
        assert_eq!(n[0][2], 5.0);
    }

    #[test]
    fn weighted_aggregation() {
        let a = model([Some(1.0), None, None, None, None, Some(2.0), None, None], 10.0);
        let b = model([Some(3.0), None, None, None, None, Some(6.0), None, None], 30.0);
        let m = aggregate_models(&[a.clone(), b], MACRO_OWNER);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].weights[0], Some(2.5));
        assert_eq!(m[0].weights[5], Some(5.0));
        assert_eq!(m[0].support, 40.0);
        let one = aggregate_models(std::slice::from_ref(&a), "p");
        assert_eq!(one[0].weights, a.weights);
    }

    #[test]
    fn dominance_rule() {
        let m = model([Some(0.5), Some(0.9), None, None, None, None, None, None], 1.0);
        assert_eq!(dominant_factor(&m), Some(1));
        let tie = model([Some(0.9), Some(0.9), None, None, None, None, None, None], 1.0);
        assert_eq!(dominant_factor(&tie), None);
        let close = model([Some(0.5), Some(0.55), None, None, None, None, None, None], 1.0);
        assert_eq!(dominant_factor(&close), None);
    }

    #[test]
    fn features_and_alternatives() {
        let net = corridor(5, 1000.0, 10.0);
        let params = ChoiceParams::default();
        let stops: Vec<StopId> = net.routes()[0].stops.clone();
        let legs = net.direct_legs(&stops[0], &stops[3]);
        let f = plan_features(&net, &legs[..1], 0.0, &params).unwrap();
        assert_eq!(f.transfers, 0.0);
        assert_eq!(f.stops_passed, 2.0);
        assert!((f.ride_km - 3.0).abs() < 0.01);
        assert!((f.stops_per_km - 2.0 / f.ride_km).abs() < 1e-12);
        assert_eq!(f.cum_wait_s, 300.0);
        let alts = enumerate_alternatives(&net, &stops[0], &stops[3], None, None, &params);
        assert_eq!(alts.len(), 1);
        assert_eq!(alts[0].features.access_walk_m, 0.0);
    }

    /// Draws choices from a known model over random stages, then refits.
    #[test]
    fn refit_recovers_weight_order() {
        let truth = [0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 1.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut stages = Vec::new();
        let mut drawn = 0;
        while drawn < 500 {
            let n = rng.random_range(2..5);
            let raw: Vec<[f64; N_FACTORS]> = (0..n)
                .map(|_| std::array::from_fn(|k| if k == 4 || k == 6 || k == 0 { rng.random::<f64>() * 4.0 } else { 1.0 }))
                .collect();
            let mut stage = ChoiceStage::new(&raw, vec![0.0; n]);
            let p = probabilities(&truth, &stage.eta, &stage.x);
            for _ in 0..5 {
                let mut r = rng.random::<f64>();
                let mut pick = n - 1;
                for (i, pi) in p.iter().enumerate() {
                    if r < *pi {
                        pick = i;
                        break;
                    }
                    r -= pi;
                }
                stage.counts[pick] += 1.0;
                drawn += 1;
            }
            stages.push(stage);
        }
        let fit = fit_mnl(&stages, &ChoiceParams::default());
        assert!(fit.converged);
        let w = fit.weights;
        assert!(w[4] > w[6] && w[6] > w[0], "{w:?}");
        let rho = crate::stats::spearman(&[truth[0], truth[4], truth[6]], &[w[0], w[4], w[6]]);
        assert!(rho >= 0.9);
        // permuting alternatives leaves the fit unchanged
        let permuted: Vec<ChoiceStage> = stages
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.x.reverse();
                s.counts.reverse();
                s
            })
            .collect();
        let refit = fit_mnl(&permuted, &ChoiceParams::default());
        for k in 0..N_FACTORS {
            assert!((refit.weights[k] - w[k]).abs() < 1e-6);
        }
    }
}
