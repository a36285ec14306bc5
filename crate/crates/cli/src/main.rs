use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use otdkit_core::avlrepair::{repair, History};
use otdkit_core::chains::{extract_corridors, mine_all, PassengerChains};
use otdkit_core::choice::{anchors_from_chains, fit_all, PreferenceModel};
use otdkit_core::journeys::{reconstruct, Analytics, Journey};
use otdkit_core::model::io::{read_avl, read_jsonl, read_routes, read_schedule, read_stops, read_swipes, write_avl, write_swipes};
use otdkit_core::pipeline::run::{design_stage, homework_rows, report, DesignFiles};
use otdkit_core::pipeline::{replicate, run_pipeline, synthesize, Artifacts, DesignMode, Inputs, PipelineConfig};
use otdkit_core::timesync::sync_all;
use otdkit_core::Network;

#[derive(Parser)]
#[command(name = "otdkit", version, about = "Trip reconstruction and route design from fare-card and vehicle-location data")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

/// Config file plus trailing `--section.key value` overrides.
#[derive(Args, Clone, Default)]
struct Common {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides of any config key, e.g. `--sync.epsilon 30 --chains.window_days=60`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0.., value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct NetArgs {
    /// Directory with stops.csv and routes.csv.
    #[arg(long, default_value = ".")]
    net: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic city with corrupted observations and ground truth.
    Synth {
        #[arg(long, default_value = "synth")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate AFC clock offsets and match swipes to boarding stops.
    Sync {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        swipes: PathBuf,
        #[arg(long)]
        avl: PathBuf,
        #[arg(long)]
        epsilon: Option<i64>,
        #[arg(long)]
        pulse_width: Option<i64>,
        #[arg(long)]
        resample: Option<i64>,
        #[arg(long)]
        tau_max: Option<i64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value = "matched.csv")]
        out: String,
        #[arg(long, default_value = "sync_report.jsonl")]
        report: String,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize missing AVL records and place swipes inside gaps.
    Repair {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        matched: PathBuf,
        #[arg(long)]
        avl: PathBuf,
        /// Historical AVL used for travel-time models; defaults to --avl.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        min_support: Option<usize>,
        /// theta0, theta1, theta2 or theta3.
        #[arg(long)]
        condition: Option<String>,
        #[arg(long, default_value = "avl_repaired.csv")]
        out: String,
        #[arg(long, default_value = "matched_repaired.csv")]
        swipes_out: String,
        #[command(flatten)]
        common: Common,
    },
    /// Infer alighting stops and link trips into journeys.
    Journeys {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        matched: PathBuf,
        #[arg(long)]
        avl: PathBuf,
        #[arg(long, default_value = "journeys.jsonl")]
        out: String,
        #[arg(long, default_value = "trips.jsonl")]
        trips: String,
        #[arg(long, default_value = "analytics.json")]
        analytics: String,
        #[command(flatten)]
        common: Common,
    },
    /// Mine closed trip chains, home/work anchors and corridors.
    Chains {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        journeys: PathBuf,
        #[arg(long)]
        window_days: Option<i64>,
        #[arg(long)]
        closure: Option<f64>,
        #[arg(long, default_value = "chains.jsonl")]
        out: String,
        #[arg(long, default_value = "homework.csv")]
        homework: String,
        #[arg(long, default_value = "corridors.csv")]
        corridors: String,
        #[command(flatten)]
        common: Common,
    },
    /// Fit personal and macro route-choice models.
    FitChoice {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        journeys: PathBuf,
        #[arg(long)]
        chains: PathBuf,
        #[arg(long)]
        min_swipes: Option<usize>,
        #[arg(long)]
        min_r2: Option<f64>,
        #[arg(long, default_value = "models.jsonl")]
        out: String,
        #[command(flatten)]
        common: Common,
    },
    /// Reassign affected demand when a new route opens.
    Redistribute {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        journeys: PathBuf,
        #[arg(long)]
        chains: PathBuf,
        /// Route JSON; without it an express variant of --base-route is used.
        #[arg(long)]
        new_route: Option<PathBuf>,
        #[arg(long)]
        base_route: Option<String>,
        /// Before and after OD tables.
        #[arg(long, num_args = 2, value_names = ["BEFORE", "AFTER"], default_values = ["od_before.csv", "od_after.csv"])]
        out: Vec<String>,
        #[arg(long, default_value = "redistribution.json")]
        summary: String,
        #[command(flatten)]
        common: Common,
    },
    /// Design an express route over a base route with a particle swarm.
    Optimize {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        journeys: PathBuf,
        #[arg(long)]
        chains: PathBuf,
        #[arg(long)]
        base_route: Option<String>,
        /// Ps, Rs, mr or Rt.
        #[arg(long)]
        objective: Option<String>,
        #[arg(long)]
        swarm: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "design.json")]
        out: String,
        #[arg(long, default_value = "audit.jsonl")]
        audit: String,
        #[arg(long, default_value = "od_before.csv")]
        od_before: String,
        #[arg(long, default_value = "od_after.csv")]
        od_after: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run a named replication experiment.
    Replicate {
        /// Preset name; `list` prints the available ones.
        name: String,
        #[arg(long, default_value = "replicate")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Plot-ready tables from a finished pipeline run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Every stage end to end; synthesizes inputs when --input is absent.
    Pipeline {
        /// Directory with stops, routes, swipes, avl and schedule CSVs.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the effective configuration in the config file format.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

/// `--a.b v` and `--a.b=v` pairs; dashes in keys become underscores.
fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(t) = it.next() {
        let Some(body) = t.strip_prefix("--") else {
            bail!("unexpected argument {t:?}; overrides look like --section.key value");
        };
        let (k, v) = match body.split_once('=') {
            Some((k, v)) => (k.to_owned(), v.to_owned()),
            None => (body.to_owned(), it.next().with_context(|| format!("missing value for --{body}"))?.clone()),
        };
        out.push((k.replace('-', "_"), v));
    }
    Ok(out)
}

fn load_config(common: &Common, threads: Option<usize>, explicit: &[(&str, Option<String>)]) -> Result<PipelineConfig> {
    let base = match &common.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    let mut pairs: Vec<(String, String)> =
        explicit.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect();
    if let Some(t) = threads {
        pairs.push(("threads".into(), t.to_string()));
    }
    pairs.extend(parse_overrides(&common.overrides)?);
    let cfg = base.with_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    cfg.validate()?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global()?;
    }
    Ok(cfg)
}

fn load_net(net: &NetArgs) -> Result<Network> {
    Ok(Network::new(read_stops(&net.net.join("stops.csv"))?, read_routes(&net.net.join("routes.csv"))?)?)
}

fn here(cfg: &PipelineConfig) -> Result<Artifacts> {
    Ok(Artifacts::new(Path::new("."), &cfg.hash())?)
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(|x| x.to_string())
}

fn anchors_and_models(
    journeys: &Path,
    chains: &Path,
    models: &Path,
) -> Result<(Vec<Journey>, Vec<PassengerChains>, Vec<PreferenceModel>)> {
    Ok((read_jsonl(journeys)?, read_jsonl(chains)?, read_jsonl(models)?))
}

fn run(cli: Cli) -> Result<()> {
    let th = cli.threads;
    match cli.cmd {
        Cmd::Synth { out, common } => {
            let cfg = load_config(&common, th, &[])?;
            let (city, sim) = synthesize(&cfg)?;
            let mut art = Artifacts::new(&out, &cfg.hash())?;
            let inputs = Inputs {
                network: city.network,
                swipes: sim.swipes,
                avl: sim.avl,
                schedule: sim.schedule,
            };
            inputs.write(&mut art)?;
            art.jsonl("truth.jsonl", &sim.truth.facts())?;
            println!(
                "{} stops, {} routes, {} swipes, {} stop events -> {}",
                inputs.network.stops().len(),
                inputs.network.routes().len(),
                inputs.swipes.len(),
                inputs.avl.len(),
                out.display()
            );
        }
        Cmd::Sync { net, swipes, avl, epsilon, pulse_width, resample, tau_max, eta, out, report, common } => {
            let cfg = load_config(
                &common,
                th,
                &[
                    ("sync.epsilon", s(&epsilon)),
                    ("sync.pulse_width", s(&pulse_width)),
                    ("sync.resample", s(&resample)),
                    ("sync.tau_max", s(&tau_max)),
                    ("sync.eta", s(&eta)),
                ],
            )?;
            let network = load_net(&net)?;
            let (matched, reports) = sync_all(&read_swipes(&swipes)?, &read_avl(&avl)?, &network, &cfg.sync);
            let mut art = here(&cfg)?;
            art.with_writer(&out, |w, h| write_swipes(w, Some(h), &matched))?;
            art.jsonl(&report, &reports)?;
            let accepted = reports.iter().filter(|r| r.result.as_ref().is_some_and(|x| x.accepted)).count();
            println!(
                "{} of {} swipes matched; offsets accepted on {accepted} of {} vehicle-days",
                matched.iter().filter(|s| s.boarding_stop.is_some()).count(),
                matched.len(),
                reports.len()
            );
        }
        Cmd::Repair { net, matched, avl, history, schedule, min_support, condition, out, swipes_out, common } => {
            let cfg = load_config(&common, th, &[("repair.fit.min_support", s(&min_support)), ("repair.condition", condition)])?;
            let network = load_net(&net)?;
            let events = read_avl(&avl)?;
            let hist_events = match &history {
                Some(p) => read_avl(p)?,
                None => events.clone(),
            };
            let sched = match &schedule {
                Some(p) => read_schedule(p)?,
                None => Vec::new(),
            };
            let fixed = repair(&events, &read_swipes(&matched)?, &History::new(&hist_events, &network), &network, &sched, &cfg.repair);
            let mut art = here(&cfg)?;
            art.with_writer(&out, |w, h| write_avl(w, Some(h), &fixed.events))?;
            art.with_writer(&swipes_out, |w, h| write_swipes(w, Some(h), &fixed.swipes))?;
            println!(
                "{} events synthesized ({} flagged), {} swipes newly matched",
                fixed.synthesized, fixed.flagged, fixed.newly_matched
            );
        }
        Cmd::Journeys { net, matched, avl, out, trips, analytics, common } => {
            let cfg = load_config(&common, th, &[])?;
            let network = load_net(&net)?;
            let events = read_avl(&avl)?;
            let (t, j) = reconstruct(&read_swipes(&matched)?, &events, &network, &cfg.journeys);
            let mut art = here(&cfg)?;
            art.jsonl(&trips, &t)?;
            art.jsonl(&out, &j)?;
            let a = Analytics::compute(&t, &j, &events, &network);
            art.json(&analytics, &a)?;
            println!("{} trips ({} resolved), {} journeys", a.trips, a.resolved, a.journeys);
        }
        Cmd::Chains { net, journeys, window_days, closure, out, homework, corridors, common } => {
            let cfg = load_config(&common, th, &[("chains.window_days", s(&window_days)), ("chains.closure_m", s(&closure))])?;
            let network = load_net(&net)?;
            let js: Vec<Journey> = read_jsonl(&journeys)?;
            let chains = mine_all(&js, &network, &cfg.chains);
            let mut art = here(&cfg)?;
            art.jsonl(&out, &chains)?;
            art.csv(&homework, &homework_rows(&chains))?;
            art.csv(&corridors, &extract_corridors(&chains, cfg.chains.coverage, &network))?;
            println!(
                "{} passengers, {} with chains, {} chains",
                chains.len(),
                chains.iter().filter(|p| !p.chains.is_empty()).count(),
                chains.iter().map(|p| p.chains.len()).sum::<usize>()
            );
        }
        Cmd::FitChoice { net, journeys, chains, min_swipes, min_r2, out, common } => {
            let cfg = load_config(&common, th, &[("choice.min_swipes", s(&min_swipes)), ("choice.min_r2", s(&min_r2))])?;
            let network = load_net(&net)?;
            let js: Vec<Journey> = read_jsonl(&journeys)?;
            let ch: Vec<PassengerChains> = read_jsonl(&chains)?;
            let (models, summary) = fit_all(&js, &anchors_from_chains(&ch), &network, &cfg.choice);
            here(&cfg)?.jsonl(&out, &models)?;
            println!(
                "{} models: {} of {} passengers fitted, {} rejected on R2, {} on convergence",
                models.len(),
                summary.fitted,
                summary.passengers,
                summary.rejected_r2,
                summary.rejected_convergence
            );
        }
        Cmd::Redistribute { net, models, journeys, chains, new_route, base_route, out, summary, common } => {
            let cfg = load_config(
                &common,
                th,
                &[
                    ("design.mode", Some("redistribute".into())),
                    ("design.route", base_route),
                    ("design.new_route", new_route.map(|p| p.display().to_string())),
                ],
            )?;
            let network = load_net(&net)?;
            let (js, ch, ms) = anchors_and_models(&journeys, &chains, &models)?;
            let files = DesignFiles {
                od_before: out[0].clone(),
                od_after: out[1].clone(),
                summary,
                ..Default::default()
            };
            design_stage(&mut here(&cfg)?, &cfg, &network, &js, &anchors_from_chains(&ch), &ms, &files)?;
            println!("wrote {} and {}", files.od_before, files.od_after);
        }
        Cmd::Optimize { net, models, journeys, chains, base_route, objective, swarm, iters, seed, out, audit, od_before, od_after, common } => {
            let cfg = load_config(
                &common,
                th,
                &[
                    ("design.mode", Some("optimize".into())),
                    ("design.route", base_route),
                    ("design.objective", objective),
                    ("pso.swarm", s(&swarm)),
                    ("pso.iters", s(&iters)),
                    ("pso.seed", s(&seed)),
                ],
            )?;
            let network = load_net(&net)?;
            let (js, ch, ms) = anchors_and_models(&journeys, &chains, &models)?;
            let files = DesignFiles {
                od_before,
                od_after,
                summary: out.clone(),
                audit,
            };
            design_stage(&mut here(&cfg)?, &cfg, &network, &js, &anchors_from_chains(&ch), &ms, &files)?;
            let design: serde_json::Value = serde_json::from_reader(std::fs::File::open(&out)?)?;
            println!(
                "{} stops, headway {} min, feasible {}",
                design["stops"].as_array().map_or(0, |a| a.len()),
                design["best"]["headway_min"],
                design["feasible"]
            );
        }
        Cmd::Replicate { name, out, common } => {
            load_config(&common, th, &[])?;
            if name == "list" {
                for p in otdkit_core::pipeline::PRESETS {
                    println!("{p}");
                }
                return Ok(());
            }
            let (summary, _) = replicate(&name, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Cmd::Report { run, out, common } => {
            let cfg = load_config(&common, th, &[])?;
            for e in report(&run, &out, &cfg)? {
                println!("{}  {}", e.sha256, e.name);
            }
        }
        Cmd::Pipeline { input, out, common } => {
            let cfg = load_config(&common, th, &[])?;
            let inputs = match &input {
                Some(dir) => Inputs::load(dir)?,
                None => {
                    let (city, sim) = synthesize(&cfg)?;
                    let inputs = Inputs {
                        network: city.network,
                        swipes: sim.swipes,
                        avl: sim.avl,
                        schedule: sim.schedule,
                    };
                    let mut art = Artifacts::new(&out.join("input"), &cfg.hash())?;
                    inputs.write(&mut art)?;
                    art.jsonl("truth.jsonl", &sim.truth.facts())?;
                    inputs
                }
            };
            let (manifest, _) = run_pipeline(&cfg, &inputs, &out)?;
            println!("config {}", manifest.config_hash);
            for e in &manifest.artifacts {
                println!("{}  {}", e.sha256, e.name);
            }
            if cfg.design.mode == DesignMode::None {
                log::info!("design stage skipped (design.mode = none)");
            }
        }
        Cmd::Config { common } => {
            print!("{}", load_config(&common, th, &[])?.to_text());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose { "info" } else { "warn" }))
        .format_timestamp_millis()
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
