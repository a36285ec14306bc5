//! End-to-end orchestration with hashed artifacts.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::config::{DesignMode, PipelineConfig};
use crate::assign::{demand_from_journeys, redistribute, AssignMode, PassengerDemand, Redistribution};
use crate::avlrepair::{repair, History};
use crate::chains::{behavior_clusters, extract_corridors, mine_all, PassengerChains};
use crate::choice::{anchors_from_chains, fit_all, Anchors, ModelIndex, PreferenceModel};
use crate::genesis::{
    corrupt, generate_city, generate_population, sample_offsets, simulate_days, City, CorruptionSpec, SimOutput, BASE_EPOCH,
};
use crate::journeys::{reconstruct, Analytics, Journey, Trip};
use crate::model::io::{
    create_file, provenance_line, read_avl, read_jsonl, read_routes, read_schedule, read_stops, read_swipes, write_avl,
    write_csv, write_jsonl, write_routes, write_schedule, write_stops, write_swipes,
};
use crate::model::{service_day, CardId, Network, Route, RouteId, ScheduleEntry, SpeedClass, StopEvent, StopId, SwipeRecord};
use crate::optimize::{optimize_route, Problem};
use crate::timesync::sync_all;
use crate::{Error, Result, TOOL_VERSION};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub config_hash: String,
    pub config: Value,
    pub stages: Vec<String>,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut n = 0u64;
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
        n += k as u64;
    }
    Ok((hex::encode(h.finalize()), n))
}

/// Output directory that stamps provenance on every file and records its hash.
pub struct Artifacts {
    dir: PathBuf,
    hash: String,
    pub entries: Vec<ArtifactEntry>,
}

impl Artifacts {
    pub fn new(dir: &Path, config_hash: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            hash: config_hash.to_owned(),
            entries: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    fn record(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        let (sha256, bytes) = sha256_file(&p)?;
        self.entries.retain(|e| e.name != name);
        self.entries.push(ArtifactEntry {
            name: name.to_owned(),
            sha256,
            bytes,
        });
        Ok(p)
    }

    /// Writes through `f`, which receives the provenance header to emit.
    pub fn with_writer(&mut self, name: &str, f: impl FnOnce(BufWriter<File>, &str) -> Result<()>) -> Result<PathBuf> {
        let header = provenance_line(&self.hash);
        f(create_file(&self.path(name))?, &header)?;
        self.record(name)
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<PathBuf> {
        write_csv(&self.path(name), Some(&provenance_line(&self.hash)), rows)?;
        self.record(name)
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<PathBuf> {
        let hash = self.hash.clone();
        self.with_writer(name, |w, _| write_jsonl(w, Some(&hash), items))
    }

    /// Pretty JSON; objects gain `tool` and `config` keys.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        if let Value::Object(m) = &mut v {
            m.insert("tool".into(), TOOL_VERSION.into());
            m.insert("config".into(), self.hash.clone().into());
        }
        let mut w = create_file(&self.path(name))?;
        serde_json::to_writer_pretty(&mut w, &v)?;
        w.write_all(b"\n")?;
        w.flush()?;
        drop(w);
        self.record(name)
    }
}

/// Raw operating data the pipeline consumes.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub network: Network,
    pub swipes: Vec<SwipeRecord>,
    pub avl: Vec<StopEvent>,
    pub schedule: Vec<ScheduleEntry>,
}

pub const INPUT_FILES: [&str; 5] = ["stops.csv", "routes.csv", "swipes.csv", "avl.csv", "schedule.csv"];

impl Inputs {
    /// Reads the files named in [`INPUT_FILES`]; the schedule is optional.
    pub fn load(dir: &Path) -> Result<Self> {
        let network = Network::new(read_stops(&dir.join("stops.csv"))?, read_routes(&dir.join("routes.csv"))?)?;
        let sched = dir.join("schedule.csv");
        Ok(Inputs {
            network,
            swipes: read_swipes(&dir.join("swipes.csv"))?,
            avl: read_avl(&dir.join("avl.csv"))?,
            schedule: if sched.exists() { read_schedule(&sched)? } else { Vec::new() },
        })
    }

    pub fn write(&self, art: &mut Artifacts) -> Result<()> {
        art.with_writer("stops.csv", |w, h| write_stops(w, Some(h), self.network.stops()))?;
        art.with_writer("routes.csv", |w, h| write_routes(w, Some(h), self.network.routes()))?;
        art.with_writer("swipes.csv", |w, h| write_swipes(w, Some(h), &self.swipes))?;
        art.with_writer("avl.csv", |w, h| write_avl(w, Some(h), &self.avl))?;
        art.with_writer("schedule.csv", |w, h| write_schedule(w, Some(h), &self.schedule))?;
        Ok(())
    }
}

/// Synthetic city, clean simulation and its corrupted observation.
pub fn synthesize(cfg: &PipelineConfig) -> Result<(City, SimOutput)> {
    cfg.validate()?;
    let city = generate_city(&cfg.city)?;
    let pop = generate_population(&cfg.city, &city)?;
    let clean = simulate_days(&city, &pop, cfg.city.n_days);
    let offsets = if cfg.corruption.offsets {
        let mut vehicles: Vec<_> = city.fleets.values().flatten().cloned().collect();
        vehicles.sort();
        let first = service_day(BASE_EPOCH);
        let days: Vec<i64> = (0..cfg.city.n_days as i64).map(|d| first + d).collect();
        sample_offsets(&vehicles, &days, cfg.corruption.seed)
    } else {
        Vec::new()
    };
    let sim = corrupt(
        &clean,
        &CorruptionSpec {
            offsets,
            loss_rate: cfg.corruption.loss_rate,
            seed: cfg.corruption.seed,
            ..Default::default()
        },
    );
    Ok((city, sim))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdRow {
    pub route: RouteId,
    pub board: StopId,
    pub alight: StopId,
    pub riders: f64,
}

pub fn od_rows(r: &Redistribution) -> Vec<OdRow> {
    r.legs
        .iter()
        .flat_map(|(route, cells)| {
            cells.iter().map(move |((b, a), v)| OdRow {
                route: route.clone(),
                board: b.clone(),
                alight: a.clone(),
                riders: *v,
            })
        })
        .collect()
}

/// Every other stop of `base`, terminals kept, run at express speed.
pub fn express_variant(base: &Route) -> Route {
    let n = base.stops.len();
    Route {
        id: RouteId::new(format!("{}X", base.id)),
        direction: base.direction,
        stops: base
            .stops
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 2 == 0 || *i + 1 == n)
            .map(|(_, s)| s.clone())
            .collect(),
        headway_min: base.headway_min,
        speed_class: SpeedClass::Express,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RedistributionSummary {
    new_route: Route,
    journeys_before: f64,
    journeys_after: f64,
    affected_journeys: f64,
    sources: std::collections::BTreeMap<String, f64>,
    od_before: String,
    od_after: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DesignSummary {
    stops: Vec<StopId>,
    best: crate::optimize::Evaluation,
    feasible: bool,
    audit: String,
    od_before: String,
    od_after: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomeWorkRow {
    pub card: CardId,
    pub home: Option<StopId>,
    pub work: Option<StopId>,
    pub degenerate: bool,
}

pub fn homework_rows(chains: &[PassengerChains]) -> Vec<HomeWorkRow> {
    chains
        .iter()
        .map(|p| HomeWorkRow {
            card: p.card.clone(),
            home: p.home_work.home.clone(),
            work: p.home_work.work.clone(),
            degenerate: p.home_work.degenerate,
        })
        .collect()
}

fn base_route<'a>(net: &'a Network, cfg: &PipelineConfig) -> Result<&'a Route> {
    if cfg.design.route.is_empty() {
        net.routes().first().ok_or_else(|| Error::InvalidInput("network has no routes".into()))
    } else {
        net.route(&RouteId::new(cfg.design.route.clone()))
            .ok_or_else(|| Error::Config(format!("design.route {:?} is not in the network", cfg.design.route)))
    }
}

/// Writes before/after OD tables for `new_route` and returns the after state.
fn od_before_after(
    art: &mut Artifacts,
    demand: &[PassengerDemand],
    net: &Network,
    new_route: &Route,
    index: &ModelIndex,
    cfg: &PipelineConfig,
    files: &DesignFiles,
) -> Result<Redistribution> {
    let before = redistribute(demand, net, None, index, AssignMode::Preference, &cfg.choice)?;
    let after = redistribute(demand, net, Some(new_route), index, AssignMode::Preference, &cfg.choice)?;
    art.csv(&files.od_before, &od_rows(&before))?;
    art.csv(&files.od_after, &od_rows(&after))?;
    Ok(after)
}

/// Output names of the design stage.
#[derive(Clone, Debug)]
pub struct DesignFiles {
    pub od_before: String,
    pub od_after: String,
    pub summary: String,
    pub audit: String,
}

impl Default for DesignFiles {
    fn default() -> Self {
        DesignFiles {
            od_before: "od_before.csv".into(),
            od_after: "od_after.csv".into(),
            summary: String::new(),
            audit: "audit.jsonl".into(),
        }
    }
}

/// Redistribution or express-route optimization per `cfg.design`; returns the stage name.
pub fn design_stage(
    art: &mut Artifacts,
    cfg: &PipelineConfig,
    net: &Network,
    journeys: &[Journey],
    anchors: &Anchors,
    models: &[PreferenceModel],
    files: &DesignFiles,
) -> Result<String> {
    let demand = demand_from_journeys(journeys, anchors);
    let index = ModelIndex::new(models.to_vec());
    let base = base_route(net, cfg)?.clone();
    let summary_or = |d: &str| if files.summary.is_empty() { d.to_owned() } else { files.summary.clone() };
    match cfg.design.mode {
        DesignMode::None => Err(Error::Config("design.mode is none".into())),
        DesignMode::Redistribute => {
            log::info!("redistribute");
            let new_route = if cfg.design.new_route.is_empty() {
                express_variant(&base)
            } else {
                serde_json::from_reader(File::open(&cfg.design.new_route)?)?
            };
            let after = od_before_after(art, &demand, net, &new_route, &index, cfg, files)?;
            art.json(
                &summary_or("redistribution.json"),
                &RedistributionSummary {
                    new_route,
                    journeys_before: after.journeys_before,
                    journeys_after: after.journeys_after,
                    affected_journeys: after.affected_journeys,
                    sources: after.sources.clone(),
                    od_before: files.od_before.clone(),
                    od_after: files.od_after.clone(),
                },
            )?;
            Ok("redistribute".into())
        }
        DesignMode::Optimize => {
            log::info!("optimize {}", base.id);
            let problem = Problem {
                net: net.clone(),
                base_route: base.id.clone(),
                demand: demand.clone(),
                models: index.clone(),
                choice: cfg.choice.clone(),
                metrics: cfg.metrics.clone(),
                objective: cfg.design.objective,
                ridership_floor: cfg.design.ridership_floor,
                min_rt: cfg.design.min_rt,
                new_route_id: RouteId::new(format!("{}X", base.id)),
            };
            let design = optimize_route(&problem, &cfg.pso)?;
            art.jsonl(&files.audit, &design.audit)?;
            let route = problem.route_for(&design.best.mask, design.best.headway_min)?;
            od_before_after(art, &demand, net, &route, &index, cfg, files)?;
            art.json(
                &summary_or("design.json"),
                &DesignSummary {
                    stops: design.stops,
                    best: design.best,
                    feasible: design.feasible,
                    audit: files.audit.clone(),
                    od_before: files.od_before.clone(),
                    od_after: files.od_after.clone(),
                },
            )?;
            Ok("optimize".into())
        }
    }
}

/// Outputs of the analysis stages, kept in memory for callers.
#[derive(Clone, Debug, Default)]
pub struct StageOutputs {
    pub matched: Vec<SwipeRecord>,
    pub repaired_avl: Vec<StopEvent>,
    pub trips: Vec<Trip>,
    pub journeys: Vec<Journey>,
    pub chains: Vec<PassengerChains>,
    pub models: Vec<PreferenceModel>,
}

/// Runs sync, repair, journeys, chains, fit-choice and the configured design stage, writing every artifact
/// plus `manifest.json` into `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, inputs: &Inputs, out_dir: &Path) -> Result<(Manifest, StageOutputs)> {
    cfg.validate()?;
    let hash = cfg.hash();
    let mut art = Artifacts::new(out_dir, &hash)?;
    let net = &inputs.network;
    let mut stages = Vec::new();

    log::info!("sync: {} swipes, {} events", inputs.swipes.len(), inputs.avl.len());
    let (matched, reports) = sync_all(&inputs.swipes, &inputs.avl, net, &cfg.sync);
    art.with_writer("matched.csv", |w, h| write_swipes(w, Some(h), &matched))?;
    art.jsonl("sync_report.jsonl", &reports)?;
    stages.push("sync".to_owned());

    log::info!("repair");
    let history = History::new(&inputs.avl, net);
    let fixed = repair(&inputs.avl, &matched, &history, net, &inputs.schedule, &cfg.repair);
    art.with_writer("avl_repaired.csv", |w, h| write_avl(w, Some(h), &fixed.events))?;
    art.with_writer("matched_repaired.csv", |w, h| write_swipes(w, Some(h), &fixed.swipes))?;
    art.json(
        "repair_report.json",
        &serde_json::json!({
            "newly_matched": fixed.newly_matched,
            "synthesized": fixed.synthesized,
            "flagged": fixed.flagged,
            "diagnostics": fixed.diagnostics,
        }),
    )?;
    stages.push("repair".to_owned());

    log::info!("journeys");
    let (trips, journeys) = reconstruct(&fixed.swipes, &fixed.events, net, &cfg.journeys);
    art.jsonl("trips.jsonl", &trips)?;
    art.jsonl("journeys.jsonl", &journeys)?;
    art.json("analytics.json", &Analytics::compute(&trips, &journeys, &fixed.events, net))?;
    stages.push("journeys".to_owned());

    log::info!("chains");
    let chains = mine_all(&journeys, net, &cfg.chains);
    art.jsonl("chains.jsonl", &chains)?;
    art.csv("homework.csv", &homework_rows(&chains))?;
    art.csv("corridors.csv", &extract_corridors(&chains, cfg.chains.coverage, net))?;
    stages.push("chains".to_owned());

    log::info!("fit-choice");
    let anchors = anchors_from_chains(&chains);
    let (models, summary) = fit_all(&journeys, &anchors, net, &cfg.choice);
    art.jsonl("models.jsonl", &models)?;
    art.json("fit_summary.json", &summary)?;
    stages.push("fit-choice".to_owned());

    if cfg.design.mode != DesignMode::None {
        stages.push(design_stage(&mut art, cfg, net, &journeys, &anchors, &models, &DesignFiles::default())?);
    }

    let mut config = serde_json::to_value(cfg)?;
    if let Value::Object(m) = &mut config {
        m.remove("threads");
    }
    let manifest = Manifest {
        tool: TOOL_VERSION.to_owned(),
        config_hash: hash,
        config,
        stages,
        artifacts: art.entries.clone(),
    };
    let mut w = create_file(&out_dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok((
        manifest,
        StageOutputs {
            matched: fixed.swipes,
            repaired_avl: fixed.events,
            trips,
            journeys,
            chains,
            models,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct HourRow {
    hour: usize,
    origins: usize,
    transfers: usize,
    destinations: usize,
}

/// Plot-ready tables from a finished run directory: hourly profiles, stop flows, occupancy and behaviour embedding.
pub fn report(run_dir: &Path, out_dir: &Path, cfg: &PipelineConfig) -> Result<Vec<ArtifactEntry>> {
    let analytics_path = run_dir.join("analytics.json");
    let mut analytics: Value = serde_json::from_reader(File::open(&analytics_path)?)?;
    if let Value::Object(m) = &mut analytics {
        m.remove("tool");
        m.remove("config");
    }
    let a: Analytics = serde_json::from_value(analytics).map_err(|e| Error::Schema {
        path: analytics_path.clone(),
        row: 1,
        message: e.to_string(),
    })?;
    let chains: Vec<PassengerChains> = read_jsonl(&run_dir.join("chains.jsonl"))?;
    let mut art = Artifacts::new(out_dir, &cfg.hash())?;
    let hours: Vec<HourRow> = (0..24)
        .map(|h| HourRow {
            hour: h,
            origins: a.hourly_origins.get(h).copied().unwrap_or(0),
            transfers: a.hourly_transfers.get(h).copied().unwrap_or(0),
            destinations: a.hourly_destinations.get(h).copied().unwrap_or(0),
        })
        .collect();
    art.csv("hourly.csv", &hours)?;
    art.csv("stop_flows.csv", &a.flows)?;
    art.csv("occupancy.csv", &a.occupancy)?;
    let points = behavior_clusters(&chains, cfg.chains.dbscan_eps, cfg.chains.dbscan_min_pts);
    let rows: Vec<Value> = points
        .iter()
        .map(|p| {
            serde_json::json!({
                "card": p.card,
                "x": p.embedding[0],
                "y": p.embedding[1],
                "cluster": p.cluster,
                "shares": p.shares,
            })
        })
        .collect();
    art.jsonl("behavior.jsonl", &rows)?;
    Ok(art.entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Direction;

    #[test]
    fn express_keeps_terminals() {
        let r = Route {
            id: RouteId::new("R1"),
            direction: Direction::Up,
            stops: ["a", "b", "c", "d"].iter().map(|s| StopId::new(*s)).collect(),
            headway_min: 8.0,
            speed_class: SpeedClass::Regular,
        };
        let x = express_variant(&r);
        let ids: Vec<&str> = x.stops.iter().map(|s| s.as_str()).collect();
        assert_eq!(ids, ["a", "c", "d"]);
        assert_eq!(x.id.as_str(), "R1X");
        assert_eq!(x.speed_class, SpeedClass::Express);
    }

    #[test]
    fn artifacts_stamp_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut art = Artifacts::new(dir.path(), "abc").unwrap();
        art.csv("t.csv", &[OdRow {
            route: RouteId::new("R"),
            board: StopId::new("a"),
            alight: StopId::new("b"),
            riders: 2.0,
        }])
        .unwrap();
        art.json("s.json", &serde_json::json!({"k": 1})).unwrap();
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert!(text.starts_with(&provenance_line("abc")));
        let j: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
        assert_eq!(j["config"], "abc");
        assert_eq!(art.entries.len(), 2);
        assert_eq!(art.entries[0].sha256, sha256_file(&dir.path().join("t.csv")).unwrap().0);
    }
}
