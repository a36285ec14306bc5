use std::collections::{HashMap, HashSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{OffsetTruth, SimOutput};
use crate::model::{service_day, StopId, VehicleId};

/// Burst length distribution for deleted AVL records (lengths 1..=8); 90% of bursts span at most 4 stops.
pub const BURST_LEN_PMF: [f64; 8] = [0.35, 0.25, 0.18, 0.12, 0.04, 0.03, 0.02, 0.01];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Seconds added to the AFC clock of a vehicle on a service day.
    pub offsets: Vec<OffsetTruth>,
    pub loss_rate: f64,
    pub loss_hotspots: Vec<StopId>,
    pub hotspot_weight: f64,
    pub burst_pmf: Vec<f64>,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            offsets: Vec::new(),
            loss_rate: 0.0,
            loss_hotspots: Vec::new(),
            hotspot_weight: 5.0,
            burst_pmf: BURST_LEN_PMF.to_vec(),
            seed: 0,
        }
    }
}

pub fn sample_burst_len(pmf: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random::<f64>() * pmf.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return i + 1;
        }
    }
    pmf.len()
}

/// Offsets concentrated in 0-5 and 30-35 minutes with random sign.
pub fn sample_offsets(vehicles: &[VehicleId], days: &[i64], seed: u64) -> Vec<OffsetTruth> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(vehicles.len() * days.len());
    for v in vehicles {
        for &d in days {
            let base = if rng.random_bool(0.5) { 0 } else { 1800 };
            let mag = base + rng.random_range(0..=300);
            let sign = if rng.random_bool(0.5) { 1 } else { -1 };
            out.push(OffsetTruth {
                vehicle: v.clone(),
                day: d,
                offset_s: sign * mag,
            });
        }
    }
    out
}

/// Shifts swipe clocks and deletes AVL records in bursts. Exactly `round(loss_rate · events)`
/// records are removed; every run keeps at least two events.
pub fn corrupt(input: &SimOutput, spec: &CorruptionSpec) -> SimOutput {
    assert!((0.0..1.0).contains(&spec.loss_rate), "loss_rate must lie in [0,1)");
    let mut out = input.clone();
    let offsets: HashMap<(&VehicleId, i64), i64> = spec
        .offsets
        .iter()
        .filter(|o| o.offset_s != 0)
        .map(|o| ((&o.vehicle, o.day), o.offset_s))
        .collect();
    if !offsets.is_empty() {
        for (s, t) in out.swipes.iter_mut().zip(out.truth.swipes.iter_mut()) {
            if let Some(&o) = offsets.get(&(&s.vehicle, service_day(t.ts))) {
                s.ts += o;
                t.emitted_ts += o;
            }
        }
        for o in spec.offsets.iter().filter(|o| o.offset_s != 0) {
            match out
                .truth
                .offsets
                .iter_mut()
                .find(|x| x.vehicle == o.vehicle && x.day == o.day)
            {
                Some(x) => x.offset_s += o.offset_s,
                None => out.truth.offsets.push(o.clone()),
            }
        }
    }

    let target = (spec.loss_rate * input.avl.len() as f64).round() as usize;
    if target == 0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_1055);
    // runs as index lists into avl, in arrival order
    let mut runs: Vec<Vec<usize>> = {
        let mut m: HashMap<(&VehicleId, u32), Vec<usize>> = HashMap::new();
        for (i, e) in out.avl.iter().enumerate() {
            m.entry((&e.vehicle, e.trip_index)).or_default().push(i);
        }
        let mut v: Vec<Vec<usize>> = m.into_values().collect();
        v.sort_by_key(|r| r[0]);
        v
    };
    for r in &mut runs {
        r.sort_by_key(|&i| out.avl[i].arrive_ts);
    }
    let hot: HashSet<&StopId> = spec.loss_hotspots.iter().collect();
    let weight_of = |i: usize| if hot.contains(&out.avl[i].stop) { spec.hotspot_weight } else { 1.0 };
    let run_w: Vec<f64> = runs.iter().map(|r| r.iter().map(|&i| weight_of(i)).sum::<f64>()).collect();
    let Ok(pick_run) = WeightedIndex::new(&run_w) else {
        return out;
    };
    let mut deleted = vec![false; out.avl.len()];
    let mut kept_in_run: Vec<usize> = runs.iter().map(Vec::len).collect();
    let mut removed = 0;
    let mut guard = 0;
    while removed < target && guard < 200 * target + 1000 {
        guard += 1;
        let ri = pick_run.sample(&mut rng);
        let run = &runs[ri];
        if kept_in_run[ri] <= 2 {
            continue;
        }
        let w: Vec<f64> = run.iter().map(|&i| weight_of(i)).collect();
        let start = WeightedIndex::new(&w).unwrap().sample(&mut rng);
        if deleted[run[start]] {
            continue;
        }
        let len = sample_burst_len(&spec.burst_pmf, &mut rng);
        for &i in run.iter().skip(start).take(len) {
            if deleted[i] || kept_in_run[ri] <= 2 || removed == target {
                break;
            }
            deleted[i] = true;
            kept_in_run[ri] -= 1;
            removed += 1;
        }
    }
    let mut kept = Vec::with_capacity(out.avl.len() - removed);
    for (e, d) in out.avl.drain(..).zip(&deleted) {
        if *d {
            out.truth.deleted_events.push(e);
        } else {
            kept.push(e);
        }
    }
    out.avl = kept;
    out
}
