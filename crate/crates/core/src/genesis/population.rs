use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{City, CityConfig};
use crate::model::{distance, CardId, Leg, Network, StopId};
use crate::{Error, Result};

const H: f64 = 3600.0;
const MAX_ATTEMPTS: usize = 100;

/// O-T-D plan between two activity locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedJourney {
    pub origin: StopId,
    pub dest: StopId,
    pub legs: Vec<Leg>,
}

impl PlannedJourney {
    pub fn transfers(&self) -> usize {
        self.legs.len().saturating_sub(1)
    }
}

/// A closed loop of activity locations starting and ending at home.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainTemplate {
    pub id: u32,
    pub journeys: Vec<PlannedJourney>,
    /// Departure from home, seconds after midnight.
    pub start_tod: i64,
    /// Activity duration after each journey except the last.
    pub dwell_s: Vec<i64>,
    pub p_use: f64,
}

impl ChainTemplate {
    pub fn stages(&self) -> usize {
        self.journeys.len()
    }

    pub fn transfers(&self) -> usize {
        self.journeys.iter().map(PlannedJourney::transfers).sum()
    }

    /// Ride records produced by one complete use.
    pub fn records(&self) -> usize {
        self.journeys.iter().map(|j| j.legs.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Passenger {
    pub card: CardId,
    pub home: StopId,
    pub work: StopId,
    pub regular: bool,
    pub non_transit_rate: f64,
    pub chains: Vec<ChainTemplate>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub passengers: Vec<Passenger>,
}

/// Picks a direct plan when one exists, otherwise a one-transfer plan.
pub fn plan_journey(net: &Network, a: &StopId, b: &StopId, rng: &mut impl Rng) -> Option<PlannedJourney> {
    if a == b {
        return None;
    }
    let direct = net.direct_legs(a, b);
    let legs = if let Some(l) = direct.choose(rng) {
        vec![l.clone()]
    } else {
        net.transfer_plans(a, b).choose(rng)?.to_vec()
    };
    Some(PlannedJourney {
        origin: a.clone(),
        dest: b.clone(),
        legs,
    })
}

fn plan_loop(net: &Network, locs: &[StopId], rng: &mut impl Rng) -> Option<Vec<PlannedJourney>> {
    let mut out = Vec::with_capacity(locs.len());
    for i in 0..locs.len() {
        let a = &locs[i];
        let b = &locs[(i + 1) % locs.len()];
        out.push(plan_journey(net, a, b, rng)?);
    }
    Some(out)
}

fn served_stops(net: &Network) -> Vec<StopId> {
    net.stops()
        .iter()
        .filter(|s| !net.routes_serving(&s.id).is_empty())
        .map(|s| s.id.clone())
        .collect()
}

fn secs(rng: &mut impl Rng, lo_h: f64, hi_h: f64) -> i64 {
    (rng.random_range(lo_h..=hi_h) * H).round() as i64
}

fn build_chain(
    net: &Network,
    served: &[StopId],
    home: &StopId,
    work: Option<&StopId>,
    extra: usize,
    rng: &mut impl Rng,
) -> Option<(Vec<PlannedJourney>, Vec<i64>, i64)> {
    let mut locs = vec![home.clone()];
    let mut dwell = Vec::new();
    if let Some(w) = work {
        locs.push(w.clone());
        dwell.push(secs(rng, 8.0, 10.0));
    }
    for _ in 0..extra {
        let x = served.choose(rng)?.clone();
        if locs.contains(&x) {
            return None;
        }
        locs.push(x);
        dwell.push(secs(rng, 1.0, 3.0));
    }
    let journeys = plan_loop(net, &locs, rng)?;
    if journeys.iter().map(PlannedJourney::transfers).sum::<usize>() > 2 {
        return None;
    }
    let start = if work.is_some() && extra == 0 {
        secs(rng, 6.5, 9.0)
    } else {
        let busy = dwell.iter().sum::<i64>() as f64 / H + 0.75 * journeys.len() as f64;
        let latest = (20.5 - busy).max(7.0);
        secs(rng, 7.0_f64.min(latest), latest.max(8.0).min(20.0))
    };
    Some((journeys, dwell, start))
}

/// Samples home/work and 1-5 closed chain templates per passenger.
pub fn generate_population(cfg: &CityConfig, city: &City) -> Result<Population> {
    let net = &city.network;
    let served = served_stops(net);
    if served.len() < 2 {
        return Err(Error::Config("city has fewer than two served stops".into()));
    }
    let mut rng = cfg.rng(1);
    let mut passengers = Vec::with_capacity(cfg.n_passengers);
    for p in 0..cfg.n_passengers {
        let regular = rng.random_bool(cfg.regular_share);
        let mut attempt = 0;
        let passenger = loop {
            attempt += 1;
            if attempt > MAX_ATTEMPTS {
                return Err(Error::Config(format!("no feasible chain for passenger {p} after {MAX_ATTEMPTS} attempts")));
            }
            let home = served.choose(&mut rng).unwrap().clone();
            let work = served.choose(&mut rng).unwrap().clone();
            if work == home {
                continue;
            }
            let far = distance(net.pos(&home), net.pos(&work)) >= 1500.0;
            if regular && !far && attempt < MAX_ATTEMPTS / 2 {
                continue;
            }
            let n_chains = if regular {
                1 + rng.random_range(0..=4usize).min(rng.random_range(0..=4usize))
            } else {
                rng.random_range(1..=5usize)
            };
            let mut chains = Vec::with_capacity(n_chains);
            let mut inner = 0;
            while chains.len() < n_chains && inner < MAX_ATTEMPTS {
                inner += 1;
                let first = chains.is_empty();
                let (work_leg, extra) = if regular && first {
                    (Some(&work), 0)
                } else if regular && rng.random_bool(0.3) {
                    (Some(&work), 1)
                } else {
                    (None, rng.random_range(1..=3usize))
                };
                let Some((journeys, dwell_s, start_tod)) = build_chain(net, &served, &home, work_leg, extra, &mut rng) else {
                    if first && regular && inner > 20 {
                        break;
                    }
                    continue;
                };
                let p_use = if regular && first {
                    rng.random_range(0.75..=0.95)
                } else if regular {
                    rng.random_range(0.02..=0.12)
                } else {
                    rng.random_range(0.02..=0.08)
                };
                chains.push(ChainTemplate {
                    id: chains.len() as u32,
                    journeys,
                    start_tod,
                    dwell_s,
                    p_use,
                });
            }
            if chains.is_empty() || (regular && chains[0].journeys[0].dest != work) {
                continue;
            }
            break Passenger {
                card: CardId(format!("C{p:06}")),
                home,
                work,
                regular,
                non_transit_rate: cfg.non_transit_rate,
                chains,
            };
        };
        passengers.push(passenger);
    }
    Ok(Population { passengers })
}

/// One chain of the virtual-passenger robustness preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessChain {
    pub stages: usize,
    pub transfers: usize,
    pub frequency: usize,
    pub home: StopId,
    pub template: ChainTemplate,
}

pub const PRESET_CHAINS: usize = 117;
pub const PRESET_RECORDS: usize = 2130;

fn preset_shape() -> Vec<(usize, usize, usize)> {
    let mut v: Vec<(usize, usize, usize)> = (0..PRESET_CHAINS)
        .map(|i| (2 + i % 3, (i / 3) % 3, 1 + (i * 7) % 19))
        .collect();
    let weight = |x: &(usize, usize, usize)| x.0 + x.1;
    let total = |v: &[(usize, usize, usize)]| v.iter().map(|x| x.2 * weight(x)).sum::<usize>() as i64;
    let mut cursor = 0;
    loop {
        let diff = total(&v) - PRESET_RECORDS as i64;
        if diff == 0 {
            break;
        }
        let step: i64 = if diff > 0 { -1 } else { 1 };
        let movable = |x: &(usize, usize, usize)| if step < 0 { x.2 > 1 } else { x.2 < 19 };
        if diff.abs() == 1 {
            let a = v.iter().position(|x| weight(x) == 3 && movable(x)).expect("weight-3 chain");
            v[a].2 = (v[a].2 as i64 + step) as usize;
            let b = v
                .iter()
                .position(|x| weight(x) == 2 && if step < 0 { x.2 < 19 } else { x.2 > 1 })
                .expect("weight-2 chain");
            v[b].2 = (v[b].2 as i64 - step) as usize;
            continue;
        }
        let n = v.len();
        let mut moved = false;
        for k in 0..n {
            let i = (cursor + k) % n;
            if weight(&v[i]) as i64 <= diff.abs() && movable(&v[i]) {
                v[i].2 = (v[i].2 as i64 + step) as usize;
                cursor = i + 1;
                moved = true;
                break;
            }
        }
        assert!(moved, "table preset adjustment stalled");
    }
    v
}

/// The 117-chain, 2130-record virtual-passenger preset (stages 2-4, transfers 0-2, frequency 1-19).
pub fn robustness_preset(city: &City, seed: u64) -> Result<Vec<RobustnessChain>> {
    let net = &city.network;
    let served = served_stops(net);
    let mut rng = city.config.rng(2);
    rng.set_word_pos(seed.wrapping_mul(1 << 20) as u128);
    let mut out = Vec::with_capacity(PRESET_CHAINS);
    let mut used: std::collections::HashSet<Vec<StopId>> = Default::default();
    for (i, (stages, transfers, frequency)) in preset_shape().into_iter().enumerate() {
        let mut found = None;
        for _ in 0..20_000 {
            let mut locs: Vec<StopId> = Vec::with_capacity(stages);
            while locs.len() < stages {
                let s = served.choose(&mut rng).unwrap().clone();
                if !locs.contains(&s) {
                    locs.push(s);
                }
            }
            let mut options: Vec<(Vec<Leg>, Vec<[Leg; 2]>)> = Vec::with_capacity(stages);
            for k in 0..stages {
                let (a, b) = (&locs[k], &locs[(k + 1) % stages]);
                options.push((net.direct_legs(a, b), net.transfer_plans(a, b)));
            }
            // choose which journeys transfer so the total matches
            let mut picks: Vec<usize> = (0..stages).filter(|&k| !options[k].1.is_empty()).collect();
            picks.shuffle(&mut rng);
            let mut transfer_at = vec![false; stages];
            for &k in picks.iter().take(transfers) {
                transfer_at[k] = true;
            }
            let feasible = transfer_at.iter().filter(|x| **x).count() == transfers
                && (0..stages).all(|k| transfer_at[k] || !options[k].0.is_empty());
            if !feasible || used.contains(&locs) {
                continue;
            }
            used.insert(locs.clone());
            let journeys = (0..stages)
                .map(|k| PlannedJourney {
                    origin: locs[k].clone(),
                    dest: locs[(k + 1) % stages].clone(),
                    legs: if transfer_at[k] {
                        options[k].1.choose(&mut rng).unwrap().to_vec()
                    } else {
                        vec![options[k].0.choose(&mut rng).unwrap().clone()]
                    },
                })
                .collect::<Vec<_>>();
            found = Some((locs, journeys));
            break;
        }
        let Some((locs, journeys)) = found else {
            return Err(Error::Config(format!(
                "no chain with {stages} stages and {transfers} transfers in this city"
            )));
        };
        let dwell_s = (1..stages).map(|_| secs(&mut rng, 1.0, 2.5)).collect();
        out.push(RobustnessChain {
            stages,
            transfers,
            frequency,
            home: locs[0].clone(),
            template: ChainTemplate {
                id: i as u32,
                journeys,
                start_tod: secs(&mut rng, 7.0, 9.0),
                dwell_s,
                p_use: 1.0,
            },
        });
    }
    Ok(out)
}
