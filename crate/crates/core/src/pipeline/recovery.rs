//! Recovery experiments for the data-repair stages: clock offsets, AVL gaps, alightings and chains.

use std::collections::{BTreeMap, HashMap};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avlrepair::{infer_station_from_swipe, repair, Condition, FitContext, FitParams, GapInterval, History, RepairParams};
use crate::chains::{mine_passenger, ChainParams, ChainTrip, PassengerChains};
use crate::genesis::fixtures::vehicle_day;
use crate::genesis::{
    corrupt, generate_city, generate_population, simulate_days, robustness_preset, ChainTemplate, CityConfig,
    CorruptionSpec, Population, TruthSwipe, BASE_EPOCH,
};
use crate::journeys::{reconstruct, JourneyParams};
use crate::model::{service_day, CardId, Leg, Network, RouteId, StopEvent, StopId, TripRun, DAY_S};
use crate::stats::r_squared;
use crate::timesync::{estimate_offset, rectify_and_match, segment_swipes, sync_all, SyncParams};
use crate::Result;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Offset magnitude from 0-5 or 30-35 minutes with a random sign.
fn draw_offset(rng: &mut impl Rng) -> i64 {
    let mag = if rng.random_bool(0.5) {
        rng.random_range(0..=300)
    } else {
        rng.random_range(1800..=2100)
    };
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetCase {
    pub case: u64,
    pub offset: i64,
    pub sparsity: f64,
    pub tau_star: Option<i64>,
    pub coarse_tau: Option<i64>,
    pub accepted: bool,
}

impl OffsetCase {
    pub fn exact(&self) -> bool {
        self.tau_star == Some(-self.offset)
    }

    pub fn coarse_within(&self, tol: i64) -> bool {
        self.coarse_tau.is_some_and(|c| (c + self.offset).abs() <= tol)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetReport {
    pub cases: usize,
    pub exact: usize,
    pub coarse_within_10s: usize,
    pub max_sparsity: f64,
    pub details: Vec<OffsetCase>,
}

fn offset_case(seed: u64, case: u64, offset: i64, sparsity: f64, params: &SyncParams) -> OffsetCase {
    let vd = vehicle_day(seed.wrapping_mul(1_000_003).wrapping_add(case), offset, sparsity);
    match rectify_and_match(&vd.swipes, &vd.events, &vd.network, params) {
        Ok(o) => OffsetCase {
            case,
            offset,
            sparsity: o.result.sparsity,
            tau_star: Some(o.result.tau_star),
            coarse_tau: Some(o.coarse_tau),
            accepted: o.result.accepted,
        },
        Err(_) => OffsetCase {
            case,
            offset,
            sparsity,
            tau_star: None,
            coarse_tau: None,
            accepted: false,
        },
    }
}

/// Synthetic vehicle-days with injected offsets and sparsity up to `max_sparsity`.
pub fn offset_recovery(cases: usize, max_sparsity: f64, seed: u64, params: &SyncParams) -> OffsetReport {
    let details: Vec<OffsetCase> = (0..cases as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let offset = draw_offset(&mut rng);
            let sp = rng.random_range(0.05..=max_sparsity.max(0.05));
            // redraw vehicle-days whose realised sparsity exceeds the cap
            let mut c = offset_case(seed, i, offset, sp, params);
            for attempt in 1..20 {
                if c.sparsity <= max_sparsity {
                    break;
                }
                c = offset_case(seed, i + attempt * 1_000_000, offset, sp, params);
                c.case = i;
            }
            c
        })
        .collect();
    OffsetReport {
        cases,
        exact: details.iter().filter(|c| c.exact()).count(),
        coarse_within_10s: details.iter().filter(|c| c.coarse_within(10)).count(),
        max_sparsity: details.iter().map(|c| c.sparsity).fold(0.0, f64::max),
        details,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub gamma: f64,
    pub eta: f64,
    pub cases: usize,
    pub success: usize,
    pub rate: f64,
}

/// Success rate (accepted and exact) over a sparsity × acceptance-threshold grid.
pub fn sparsity_sweep(gammas: &[f64], etas: &[f64], cases: usize, seed: u64) -> Vec<SweepCell> {
    let mut grid = Vec::new();
    for (gi, &gamma) in gammas.iter().enumerate() {
        for &eta in etas {
            let params = SyncParams { eta, ..Default::default() };
            let success = (0..cases as u64)
                .into_par_iter()
                .filter(|&i| {
                    let case = gi as u64 * 100_000 + i;
                    let offset = draw_offset(&mut rng_for(seed, case));
                    let c = offset_case(seed, case, offset, gamma, &params);
                    c.accepted && c.exact()
                })
                .count();
            grid.push(SweepCell {
                gamma,
                eta,
                cases,
                success,
                rate: success as f64 / cases.max(1) as f64,
            });
        }
    }
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub resample_s: i64,
    pub ops_full: u64,
    pub ops_resampled: u64,
    /// `ops_resampled / ops_full`; the law predicts `1 / resample_s²`.
    pub ratio: f64,
    pub predicted: f64,
}

/// Inner-loop operation counts of a single-pass scan at 1 s and at `resample_s`.
pub fn compression_law(seed: u64, resample_s: i64) -> Result<CompressionReport> {
    let vd = vehicle_day(seed, 1830, 0.4);
    let p = SyncParams::default();
    let ts: Vec<i64> = vd.swipes.iter().map(|s| s.ts).collect();
    let reps: Vec<i64> = segment_swipes(&ts, p.epsilon).iter().map(|g| g.rep).collect();
    let arrivals: Vec<i64> = vd.events.iter().map(|e| e.arrive_ts).collect();
    let scan = |resample: i64| {
        let q = SyncParams {
            resample,
            refine: false,
            edge_align: false,
            ..p.clone()
        };
        estimate_offset(&reps, &arrivals, &q).map(|(r, _)| r.ops)
    };
    let ops_full = scan(1)?;
    let ops_resampled = scan(resample_s)?;
    Ok(CompressionReport {
        resample_s,
        ops_full,
        ops_resampled,
        ratio: ops_resampled as f64 / ops_full as f64,
        predicted: 1.0 / (resample_s * resample_s) as f64,
    })
}

/// Station-recovery test on held-out runs: gaps of 1..=`window` stops between real anchors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairProtocol {
    pub city: CityConfig,
    pub train_days: usize,
    pub test_days: usize,
    pub test_runs: usize,
    pub window: usize,
    pub jitter_s: i64,
    pub seed: u64,
}

impl Default for RepairProtocol {
    fn default() -> Self {
        Self {
            city: CityConfig {
                rng_seed: 3,
                n_passengers: 0,
                ..Default::default()
            },
            train_days: 20,
            test_days: 3,
            test_runs: 300,
            window: 8,
            jitter_s: 40,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairRow {
    pub gap_len: usize,
    pub records: usize,
    pub theta0: f64,
    pub theta2: f64,
}

/// Per gap length, share of jittered arrivals placed at the right stop under Θ0 and Θ2.
pub fn repair_protocol(p: &RepairProtocol) -> Result<Vec<RepairRow>> {
    let cfg = CityConfig {
        n_days: p.train_days + p.test_days,
        ..p.city.clone()
    };
    let city = generate_city(&cfg)?;
    let sim = simulate_days(&city, &Population::default(), cfg.n_days);
    let split = service_day(BASE_EPOCH) + p.train_days as i64;
    let (train, test): (Vec<StopEvent>, Vec<StopEvent>) =
        sim.avl.into_iter().partition(|e| service_day(e.arrive_ts) < split);
    let net = &city.network;
    let history = History::new(&train, net);
    let mut runs: Vec<TripRun> = TripRun::group(&test)
        .into_iter()
        .filter(|r| net.route(&r.route).is_some_and(|rt| rt.stops.len() == r.events.len() && r.events.len() >= p.window + 2))
        .collect();
    let mut rng = rng_for(p.seed, 0);
    runs.sort_by_key(|r| (r.start_ts(), r.route.clone()));
    let picked: Vec<&TripRun> = runs.choose_multiple(&mut rng, p.test_runs).collect();
    let fit = FitParams::default();
    // hits[L-1] = (records, Θ0 hits, Θ2 hits)
    let jobs: Vec<(&TripRun, usize, u64)> = picked
        .iter()
        .enumerate()
        .map(|(i, r)| (*r, rng.random_range(0..=r.events.len() - p.window - 2), i as u64))
        .collect();
    let per_run: Vec<Vec<(usize, usize, usize)>> = jobs
        .par_iter()
        .map(|&(run, start, i)| {
            let mut rng = rng_for(p.seed, 1 + i);
            let mut out = vec![(0, 0, 0); p.window];
            for len in 1..=p.window {
                let s0 = &run.events[start];
                let s1 = &run.events[start + len + 1];
                let gap = GapInterval {
                    anchor_before: Some(s0.clone()),
                    anchor_after: Some(s1.clone()),
                    missing_stops: run.events[start + 1..=start + len].iter().map(|e| e.stop.clone()).collect(),
                    positions: (start + 1..=start + len).collect(),
                };
                let ctx = FitContext {
                    t_s0: s0.depart_ts,
                    interval: Some((start + len + 1, s1.arrive_ts - s0.depart_ts)),
                };
                let models = |cond: Condition| {
                    gap.positions
                        .iter()
                        .map(|&q| history.fit_with_fallback(&run.route, start, q, cond, &ctx, &fit).ok())
                        .collect::<Vec<_>>()
                };
                let (m0, m2) = (models(Condition::Theta0), models(Condition::Theta2));
                for (k, e) in run.events[start + 1..=start + len].iter().enumerate() {
                    let ts = e.arrive_ts + rng.random_range(-p.jitter_s..=p.jitter_s);
                    let hit = |m: &[Option<_>]| infer_station_from_swipe(&gap, ts, m).is_ok_and(|s| s == gap.missing_stops[k]);
                    let cell = &mut out[len - 1];
                    cell.0 += 1;
                    cell.1 += hit(&m0) as usize;
                    cell.2 += hit(&m2) as usize;
                }
            }
            out
        })
        .collect();
    Ok((0..p.window)
        .map(|l| {
            let (n, a, b) = per_run.iter().fold((0, 0, 0), |acc, r| (acc.0 + r[l].0, acc.1 + r[l].1, acc.2 + r[l].2));
            RepairRow {
                gap_len: l + 1,
                records: n,
                theta0: a as f64 / n.max(1) as f64,
                theta2: b as f64 / n.max(1) as f64,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub route: RouteId,
    pub r2_boarding: f64,
    pub r2_alighting: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub loss_rate: f64,
    pub swipes: usize,
    pub alighting_resolved: usize,
    pub rows: Vec<FlowRow>,
}

impl FlowReport {
    pub fn min_r2(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| [r.r2_boarding, r.r2_alighting])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-route stop flows from the full sync → repair → reconstruct chain against the ledger.
pub fn flow_agreement(cfg: &CityConfig, loss_rate: f64, seed: u64) -> Result<FlowReport> {
    let city = generate_city(cfg)?;
    let pop = generate_population(cfg, &city)?;
    let clean = simulate_days(&city, &pop, cfg.n_days);
    let sim = corrupt(
        &clean,
        &CorruptionSpec {
            loss_rate,
            seed,
            ..Default::default()
        },
    );
    let net = &city.network;
    let (matched, _) = sync_all(&sim.swipes, &sim.avl, net, &SyncParams::default());
    let history = History::new(&sim.avl, net);
    let fixed = repair(&sim.avl, &matched, &history, net, &sim.schedule, &RepairParams::default());
    let (trips, _) = reconstruct(&fixed.swipes, &fixed.events, net, &JourneyParams::default());
    type Flows = HashMap<(RouteId, StopId), (f64, f64)>;
    let mut truth: Flows = HashMap::new();
    for t in &sim.truth.swipes {
        truth.entry((t.route.clone(), t.board_stop.clone())).or_default().0 += 1.0;
        truth.entry((t.route.clone(), t.alight_stop.clone())).or_default().1 += 1.0;
    }
    let mut got: Flows = HashMap::new();
    let mut resolved = 0;
    for t in &trips {
        if let Some(b) = &t.board_stop {
            got.entry((t.route.clone(), b.clone())).or_default().0 += 1.0;
        }
        if let Some(a) = &t.alight_stop {
            got.entry((t.route.clone(), a.clone())).or_default().1 += 1.0;
            resolved += 1;
        }
    }
    let rows = net
        .routes()
        .iter()
        .map(|r| {
            let key = |s: &StopId| (r.id.clone(), s.clone());
            let pick = |m: &Flows, f: fn(&(f64, f64)) -> f64| -> Vec<f64> {
                r.stops.iter().map(|s| m.get(&key(s)).map_or(0.0, f)).collect()
            };
            FlowRow {
                route: r.id.clone(),
                r2_boarding: r_squared(&pick(&truth, |x| x.0), &pick(&got, |x| x.0)),
                r2_alighting: r_squared(&pick(&truth, |x| x.1), &pick(&got, |x| x.1)),
            }
        })
        .collect();
    Ok(FlowReport {
        loss_rate,
        swipes: sim.swipes.len(),
        alighting_resolved: resolved,
        rows,
    })
}

fn template_trips(t: &ChainTemplate, day: i64, keep: impl Fn(usize) -> bool) -> Vec<ChainTrip> {
    let base = BASE_EPOCH + day * DAY_S;
    let mut out = Vec::new();
    let mut clock = base + t.start_tod;
    let mut rec = 0;
    for (k, j) in t.journeys.iter().enumerate() {
        let mut frag: Vec<(usize, &Leg)> = Vec::new();
        let flush = |frag: &mut Vec<(usize, &Leg)>, out: &mut Vec<ChainTrip>| {
            if let (Some(first), Some(last)) = (frag.first(), frag.last()) {
                let mut stops: Vec<StopId> = frag.iter().map(|(_, l)| l.board.clone()).collect();
                stops.push(last.1.alight.clone());
                let start_ts = clock + 900 * first.0 as i64;
                out.push(ChainTrip {
                    day: service_day(start_ts),
                    start_ts,
                    end_ts: clock + 900 * last.0 as i64 + 600,
                    stops,
                    legs: frag.iter().map(|(_, l)| (*l).clone()).collect(),
                });
            }
            frag.clear();
        };
        for (i, l) in j.legs.iter().enumerate() {
            if keep(rec) {
                frag.push((i, l));
            } else {
                flush(&mut frag, &mut out);
            }
            rec += 1;
        }
        flush(&mut frag, &mut out);
        clock += 900 * j.legs.len() as i64 + t.dwell_s.get(k).copied().unwrap_or(0);
    }
    out
}

/// Whether a mined chain reproduces the template's journeys (cyclically, within `tol_m`).
pub fn chain_matches(mined: &PassengerChains, t: &ChainTemplate, net: &Network, tol_m: f64) -> bool {
    let n = t.journeys.len();
    mined.chains.iter().any(|c| {
        c.vertices.len() == n
            && (0..n).any(|r| {
                (0..n).all(|k| {
                    let cl = &mined.clusters[c.vertices[(k + r) % n]];
                    let j = &t.journeys[k];
                    net.stop_distance(cl.origin(), &j.origin) <= tol_m && net.stop_distance(cl.destination(), &j.dest) <= tol_m
                })
            })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub loss: f64,
    pub frequency: usize,
    pub trials: usize,
    pub recovered: usize,
    pub rate: f64,
}

/// Recovery probability of one preset chain repeated `frequency` times with independent record loss.
/// Trials share their random draws across cells, so the surface is coupled along both axes.
pub fn chain_robustness(city: &CityConfig, losses: &[f64], frequencies: &[usize], trials: usize, seed: u64) -> Result<Vec<RobustnessCell>> {
    let c = generate_city(city)?;
    let preset = robustness_preset(&c, seed)?;
    let net = &c.network;
    let params = ChainParams::default();
    let max_f = frequencies.iter().copied().max().unwrap_or(0);
    let draws: Vec<(usize, Vec<Vec<f64>>)> = (0..trials as u64)
        .map(|t| {
            let mut rng = rng_for(seed, t);
            let idx = rng.random_range(0..preset.len());
            let recs = preset[idx].template.records();
            (idx, (0..max_f).map(|_| (0..recs).map(|_| rng.random()).collect()).collect())
        })
        .collect();
    let mut cells = Vec::new();
    for &f in frequencies {
        for &loss in losses {
            let recovered = draws
                .par_iter()
                .filter(|(idx, u)| {
                    let t = &preset[*idx].template;
                    let trips: Vec<ChainTrip> = (0..f)
                        .flat_map(|d| template_trips(t, d as i64, |r| u[d][r] >= loss))
                        .collect();
                    let mined = mine_passenger(CardId::new("virtual"), &trips, net, &params);
                    chain_matches(&mined, t, net, params.link_m)
                })
                .count();
            cells.push(RobustnessCell {
                loss,
                frequency: f,
                trials,
                recovered,
                rate: recovered as f64 / trials.max(1) as f64,
            });
        }
    }
    Ok(cells)
}

/// Largest drop along increasing frequency or decreasing loss that exceeds two standard errors.
/// Zero means the surface is monotone within sampling noise.
pub fn monotonicity_excess(cells: &[RobustnessCell]) -> f64 {
    let se = |a: &RobustnessCell, b: &RobustnessCell| {
        let v = |c: &RobustnessCell| c.rate * (1.0 - c.rate) / c.trials.max(1) as f64;
        (v(a) + v(b)).sqrt().max(1.0 / a.trials.max(1) as f64)
    };
    let mut worst: f64 = 0.0;
    for a in cells {
        for b in cells {
            let easier = (b.frequency > a.frequency && b.loss == a.loss) || (b.loss < a.loss && b.frequency == a.frequency);
            if easier {
                worst = worst.max(a.rate - b.rate - 2.0 * se(a, b));
            }
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window_days: i64,
    pub passengers: usize,
    pub with_chain: usize,
    pub fraction: f64,
}

/// Ledger journeys split into whole-trip fragments after dropping each ride with probability `fragmentation`.
fn ledger_trips(swipes: &[TruthSwipe], fragmentation: f64, seed: u64) -> BTreeMap<CardId, Vec<ChainTrip>> {
    let mut rng = rng_for(seed, 0);
    let mut by_journey: BTreeMap<(CardId, u32, u32, u32), Vec<(&TruthSwipe, bool)>> = BTreeMap::new();
    for s in swipes {
        let kept = !rng.random_bool(fragmentation);
        by_journey.entry((s.card.clone(), s.day, s.chain, s.journey)).or_default().push((s, kept));
    }
    let mut out: BTreeMap<CardId, Vec<ChainTrip>> = BTreeMap::new();
    for ((card, ..), mut legs) in by_journey {
        legs.sort_by_key(|(s, _)| s.leg);
        for frag in legs.split(|(_, kept)| !kept).filter(|f| !f.is_empty()) {
            let mut stops: Vec<StopId> = frag.iter().map(|(s, _)| s.board_stop.clone()).collect();
            stops.push(frag.last().unwrap().0.alight_stop.clone());
            out.entry(card.clone()).or_default().push(ChainTrip {
                day: service_day(frag[0].0.ts),
                start_ts: frag[0].0.ts,
                end_ts: frag.last().unwrap().0.alight_ts,
                stops,
                legs: frag.iter().map(|(s, _)| crate::genesis::truth_leg(s)).collect(),
            });
        }
    }
    for v in out.values_mut() {
        v.sort_by_key(|t| t.start_ts);
    }
    out
}

/// Share of passengers with at least one recovered template chain, per observation window.
pub fn window_effect(cfg: &CityConfig, windows: &[i64], fragmentation: f64) -> Result<Vec<WindowRow>> {
    let n_days = windows.iter().copied().max().unwrap_or(1).max(1) as usize;
    let cfg = CityConfig { n_days, ..cfg.clone() };
    let city = generate_city(&cfg)?;
    let pop = generate_population(&cfg, &city)?;
    let sim = simulate_days(&city, &pop, n_days);
    let trips = ledger_trips(&sim.truth.swipes, fragmentation, cfg.rng_seed);
    let net = &city.network;
    let first = service_day(BASE_EPOCH);
    let params = ChainParams::default();
    Ok(windows
        .iter()
        .map(|&w| {
            let with_chain = pop
                .passengers
                .par_iter()
                .filter(|p| {
                    let Some(all) = trips.get(&p.card) else { return false };
                    let seen: Vec<ChainTrip> = all.iter().filter(|t| t.day - first < w).cloned().collect();
                    let mined = mine_passenger(p.card.clone(), &seen, net, &params);
                    p.chains.iter().any(|t| chain_matches(&mined, t, net, params.link_m))
                })
                .count();
            WindowRow {
                window_days: w,
                passengers: pop.passengers.len(),
                with_chain,
                fraction: with_chain as f64 / pop.passengers.len().max(1) as f64,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_fragments_split_at_dropped_rides() {
        let city = generate_city(&CityConfig::default()).unwrap();
        let preset = robustness_preset(&city, 1).unwrap();
        let t = preset.iter().find(|c| c.transfers > 0).unwrap();
        let all = template_trips(&t.template, 0, |_| true);
        assert_eq!(all.len(), t.stages);
        assert_eq!(all.iter().map(|x| x.legs.len()).sum::<usize>(), t.template.records());
        let none = template_trips(&t.template, 0, |_| false);
        assert!(none.is_empty());
        let j = t.template.journeys.iter().position(|j| j.legs.len() == 2).unwrap();
        let before: usize = t.template.journeys[..j].iter().map(|j| j.legs.len()).sum();
        let split = template_trips(&t.template, 0, |r| r != before);
        assert_eq!(split.len(), t.stages);
        assert!(split.iter().all(|x| x.start_ts < x.end_ts));
    }

    #[test]
    fn monotonicity_excess_flags_only_large_drops() {
        let cell = |loss, frequency, recovered| RobustnessCell {
            loss,
            frequency,
            trials: 50,
            recovered,
            rate: recovered as f64 / 50.0,
        };
        assert_eq!(monotonicity_excess(&[cell(0.1, 5, 40), cell(0.2, 5, 41), cell(0.1, 10, 39)]), 0.0);
        assert!(monotonicity_excess(&[cell(0.1, 5, 20), cell(0.2, 5, 45)]) > 0.0);
    }

    #[test]
    fn offset_cases_respect_the_sparsity_cap() {
        let r = offset_recovery(12, 0.3, 9, &SyncParams::default());
        assert!(r.details.iter().all(|c| c.sparsity <= 0.3));
        assert_eq!(r.exact, 12);
    }

    #[test]
    fn compression_ratio_tracks_the_square_law() {
        let c = compression_law(2, 10).unwrap();
        assert!((c.ratio / c.predicted - 1.0).abs() < 0.2, "{c:?}");
    }

    #[test]
    fn complete_repeats_recover_the_chain() {
        let cells = chain_robustness(&CityConfig::default(), &[0.0], &[3], 6, 4).unwrap();
        assert_eq!(cells[0].recovered, 6);
    }
}
