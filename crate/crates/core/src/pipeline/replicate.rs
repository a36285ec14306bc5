//! Named replication experiments on synthetic data.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::assign::{demand_from_journeys, redistribute, AssignMode, Redistribution};
use crate::choice::{fit_all, Anchors, ChoiceParams, ModelIndex};
use crate::genesis::fixtures::{redistribution_scenario, toy_corridor};
use crate::model::{Network, RouteId};
use crate::optimize::{exhaustive, optimize_route, Evaluation, MetricParams, Objective, Problem, PsoParams};
use crate::stats::r_squared;
use super::recovery::{
    chain_robustness, compression_law, flow_agreement, monotonicity_excess, offset_recovery, repair_protocol, sparsity_sweep,
    window_effect, RepairProtocol,
};
use super::run::{ArtifactEntry, Artifacts};
use crate::genesis::CityConfig;
use crate::timesync::SyncParams;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedistributionReport {
    pub choosers: usize,
    pub models: usize,
    pub r2_preference: f64,
    pub r2_utility: f64,
    pub conservation_error: f64,
    pub cells: usize,
}

fn upper_cells(m: &[Vec<f64>]) -> Vec<f64> {
    let mut v = Vec::new();
    for (i, row) in m.iter().enumerate() {
        v.extend_from_slice(&row[i + 1..]);
    }
    v
}

fn route_cells(r: &Redistribution, net: &Network, route: &RouteId) -> Vec<f64> {
    upper_cells(&r.route_matrix(net, route))
}

/// Treats the scenario's target route as new and compares both assignments with its observed matrix.
pub fn redistribution_benchmark(seed: u64, n_choosers: usize) -> Result<RedistributionReport> {
    let sc = redistribution_scenario(seed, n_choosers);
    let full = sc.base.with_route(sc.target.clone())?;
    let params = ChoiceParams::default();
    let anchors: Anchors = sc
        .choosers
        .iter()
        .map(|c| (c.card.clone(), (Some(c.home.clone()), Some(c.work.clone()))))
        .collect();
    let (models, _) = fit_all(&sc.journeys, &anchors, &full, &params);
    let n_models = models.len();
    let index = ModelIndex::new(models);
    let demand = demand_from_journeys(&sc.journeys, &anchors);
    let observed = redistribute(&demand, &full, None, &index, AssignMode::Preference, &params)?;
    let truth = route_cells(&observed, &full, &sc.target.id);
    let pref = redistribute(&demand, &sc.base, Some(&sc.target), &index, AssignMode::Preference, &params)?;
    let util = redistribute(&demand, &sc.base, Some(&sc.target), &index, AssignMode::Utility, &params)?;
    let conservation_error = [&pref, &util]
        .iter()
        .map(|r| (r.journeys_after - r.journeys_before).abs() / r.journeys_before.max(1.0))
        .fold(0.0, f64::max);
    Ok(RedistributionReport {
        choosers: n_choosers,
        models: n_models,
        r2_preference: r_squared(&truth, &route_cells(&pref, &full, &sc.target.id)),
        r2_utility: r_squared(&truth, &route_cells(&util, &full, &sc.target.id)),
        conservation_error,
        cells: truth.len(),
    })
}

/// The ten-stop toy design problem under one objective.
pub fn toy_problem(objective: Objective) -> Problem {
    let toy = toy_corridor();
    Problem {
        net: toy.network,
        base_route: toy.base_route,
        demand: toy.demand,
        models: toy.models,
        choice: ChoiceParams::default(),
        metrics: MetricParams::default(),
        objective,
        ridership_floor: 5.0,
        min_rt: 0.75,
        new_route_id: RouteId::new("NEW"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsoGapReport {
    pub optimum: f64,
    pub runs: Vec<f64>,
    pub within: usize,
    pub monotone: bool,
    pub all_feasible: bool,
}

/// Seeded swarm runs against the exhaustive optimum of the toy problem.
pub fn pso_gap(objective: Objective, seeds: &[u64], pso: &PsoParams, tolerance: f64) -> Result<PsoGapReport> {
    let problem = toy_problem(objective);
    let best = exhaustive(&problem)?;
    let mut runs = Vec::new();
    let mut monotone = true;
    let mut all_feasible = true;
    for &seed in seeds {
        let d = optimize_route(&problem, &PsoParams { seed, ..pso.clone() })?;
        monotone &= d.audit.windows(2).all(|w| !w[0].gbest.better_than(&w[1].gbest));
        all_feasible &= d.feasible;
        runs.push(d.best.fitness.value);
    }
    let optimum = best.fitness.value;
    let within = runs.iter().filter(|v| **v >= optimum * (1.0 - tolerance)).count();
    Ok(PsoGapReport {
        optimum,
        runs,
        within,
        monotone,
        all_feasible,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRow {
    pub objective: String,
    pub stops: usize,
    pub headway_min: f64,
    pub ps: f64,
    pub rs: f64,
    pub mileage_km: f64,
    pub rt: f64,
    pub ridership: f64,
}

impl ObjectiveRow {
    fn from_eval(o: Objective, e: &Evaluation) -> Self {
        ObjectiveRow {
            objective: o.name().into(),
            stops: e.mask.iter().filter(|b| **b).count(),
            headway_min: e.headway_min,
            ps: e.metrics.ps,
            rs: e.metrics.rs,
            mileage_km: e.metrics.mileage_km,
            rt: e.metrics.rt,
            ridership: e.metrics.ridership,
        }
    }
}

/// Exhaustive optimum of the toy problem under each objective.
pub fn four_objectives() -> Result<Vec<ObjectiveRow>> {
    Objective::ALL
        .iter()
        .map(|&o| exhaustive(&toy_problem(o)).map(|e| ObjectiveRow::from_eval(o, &e)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PsoRunRow {
    seed: u64,
    value: f64,
    optimum: f64,
    gap: f64,
}

/// Names accepted by [`replicate`].
pub const PRESETS: [&str; 10] = [
    "offsets",
    "sparsity-sweep",
    "compression",
    "repair",
    "alighting",
    "chain-robustness",
    "window-effect",
    "redistribution",
    "four-objectives",
    "pso-gap",
];

/// Runs a named experiment, writing `<name>.csv` (rows) and `<name>.json` (summary) into `out_dir`.
pub fn replicate(name: &str, out_dir: &Path) -> Result<(Value, Vec<ArtifactEntry>)> {
    if !PRESETS.contains(&name) {
        return Err(Error::UnknownPreset {
            name: name.to_owned(),
            available: PRESETS.iter().map(|s| s.to_string()).collect(),
        });
    }
    let hash = hex::encode(Sha256::digest(format!("{}:{name}", crate::TOOL_VERSION).as_bytes()));
    let mut art = Artifacts::new(out_dir, &hash)?;
    let csv = format!("{name}.csv");
    let summary = match name {
        "offsets" => {
            let r = offset_recovery(200, 0.6, 1, &SyncParams::default());
            art.csv(&csv, &r.details)?;
            json!({"cases": r.cases, "exact": r.exact, "coarse_within_10s": r.coarse_within_10s, "max_sparsity": r.max_sparsity})
        }
        "sparsity-sweep" => {
            let gammas = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
            let cells = sparsity_sweep(&gammas, &[0.3, 0.5, 0.7], 30, 2);
            art.csv(&csv, &cells)?;
            json!({"cells": cells.len(), "min_rate_up_to_0_6": cells.iter().filter(|c| c.gamma <= 0.6 && c.eta == 0.5).map(|c| c.rate).fold(1.0, f64::min)})
        }
        "compression" => {
            let rows: Vec<_> = [2, 5, 10].iter().map(|&ts| compression_law(5, ts)).collect::<Result<_>>()?;
            art.csv(&csv, &rows)?;
            json!({"rows": rows.len()})
        }
        "repair" => {
            let rows = repair_protocol(&RepairProtocol::default())?;
            art.csv(&csv, &rows)?;
            json!({
                "records": rows.iter().map(|r| r.records).sum::<usize>(),
                "min_theta2": rows.iter().map(|r| r.theta2).fold(1.0, f64::min),
                "theta2_dominates": rows.iter().all(|r| r.theta2 >= r.theta0),
            })
        }
        "alighting" => {
            let cfg = CityConfig {
                n_passengers: 400,
                n_days: 10,
                ..Default::default()
            };
            let r = flow_agreement(&cfg, 0.037, 3)?;
            art.csv(&csv, &r.rows)?;
            json!({"loss_rate": r.loss_rate, "swipes": r.swipes, "alighting_resolved": r.alighting_resolved, "min_r2": r.min_r2()})
        }
        "chain-robustness" => {
            let cells = chain_robustness(&CityConfig::default(), &[0.0, 0.1, 0.2, 0.3, 0.4], &[2, 5, 10, 15], 50, 4)?;
            art.csv(&csv, &cells)?;
            let at = cells.iter().find(|c| c.loss == 0.2 && c.frequency == 10).map(|c| c.rate);
            json!({"rate_loss20_freq10": at, "monotonicity_excess": monotonicity_excess(&cells)})
        }
        "window-effect" => {
            let cfg = CityConfig {
                rng_seed: 4,
                n_passengers: 300,
                n_days: 90,
                ..Default::default()
            };
            let rows = window_effect(&cfg, &[5, 10, 30, 60, 90], 0.1)?;
            art.csv(&csv, &rows)?;
            json!({"fractions": rows.iter().map(|r| r.fraction).collect::<Vec<_>>()})
        }
        "redistribution" => {
            let r = redistribution_benchmark(5, 400)?;
            art.csv(&csv, std::slice::from_ref(&r))?;
            serde_json::to_value(&r)?
        }
        "four-objectives" => {
            let rows = four_objectives()?;
            art.csv(&csv, &rows)?;
            json!({"objectives": rows.len()})
        }
        "pso-gap" => {
            let seeds: Vec<u64> = (1..=20).collect();
            let r = pso_gap(Objective::Ps, &seeds, &PsoParams::default(), 0.02)?;
            let rows: Vec<PsoRunRow> = seeds
                .iter()
                .zip(&r.runs)
                .map(|(&seed, &value)| PsoRunRow {
                    seed,
                    value,
                    optimum: r.optimum,
                    gap: (r.optimum - value) / r.optimum.abs().max(f64::MIN_POSITIVE),
                })
                .collect();
            art.csv(&csv, &rows)?;
            json!({"optimum": r.optimum, "within_2pct": r.within, "runs": r.runs.len(), "monotone": r.monotone, "all_feasible": r.all_feasible})
        }
        _ => unreachable!(),
    };
    let mut summary = summary;
    if let Value::Object(m) = &mut summary {
        m.insert("preset".into(), name.into());
    }
    art.json(&format!("{name}.json"), &summary)?;
    Ok((summary, art.entries))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_preset_lists_available() {
        let dir = tempfile::tempdir().unwrap();
        match replicate("nope", dir.path()) {
            Err(Error::UnknownPreset { available, .. }) => assert_eq!(available.len(), PRESETS.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn objective_corners() {
        let rows = four_objectives().unwrap();
        let by = |n: &str| rows.iter().find(|r| r.objective == n).unwrap().clone();
        let rt = by("Rt");
        let mr = by("mr");
        assert_eq!(rt.stops, 2);
        assert_eq!(rt.headway_min, 2.0);
        assert_eq!(mr.stops, 10);
        assert!(rows.iter().all(|r| r.rt >= 0.75 && r.ridership >= 5.0));
    }

    #[test]
    fn compression_preset_writes_rows() {
        let dir = tempfile::tempdir().unwrap();
        let (summary, entries) = replicate("compression", dir.path()).unwrap();
        assert_eq!(summary["rows"], 3);
        assert_eq!(entries.len(), 2);
        let text = std::fs::read_to_string(dir.path().join("compression.csv")).unwrap();
        assert!(text.starts_with("# tool="));
    }
}
