//! Particle-swarm design of an express route over an existing route's stops.

use std::collections::HashMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assign::{redistribute, AssignMode, PassengerDemand, Redistribution};
use crate::choice::{ChoiceParams, ModelIndex};
use crate::model::{Network, Route, RouteId, SpeedClass};
use crate::{Error, Result};

pub const COST_PER_KM: f64 = 5.0;
pub const COST_PER_MIN: f64 = 1.2;
pub const CODE_BITS: usize = 8;
pub const HEADWAY_BOUNDS: (f64, f64) = (2.0, 20.0);

/// Operating cost of `runs` runs over a route of the given length and runtime.
pub fn route_cost(length_km: f64, runtime_min: f64, runs: f64) -> f64 {
    (COST_PER_KM * length_km + COST_PER_MIN * runtime_min) * runs
}

/// Whole departures in the service span.
pub fn runs_per_day(headway_min: f64, service_hours: f64) -> f64 {
    (service_hours * 60.0 / headway_min).floor()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceMetrics {
    pub cost: f64,
    pub mileage_km: f64,
    /// Mileage per unit cost.
    pub rs: f64,
    /// Time efficiency: in-motion time over wait, ride and dwell.
    pub rt: f64,
    pub effective_km: f64,
    pub ps: f64,
    pub ridership: f64,
    /// No riders; rates are zero.
    pub empty: bool,
}

/// Time efficiency of a single ride.
pub fn time_efficiency(t_bus: f64, wait: f64, dwell: f64) -> f64 {
    let total = t_bus + wait + dwell;
    if total > 0.0 {
        t_bus / total
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    pub express_kmh: f64,
    pub dwell_s: f64,
    pub service_hours: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            express_kmh: 30.0,
            dwell_s: 45.0,
            service_hours: 17.0,
        }
    }
}

/// Metrics of `route` given the riders assigned to its cells.
pub fn service_metrics(net: &Network, route: &Route, assigned: &Redistribution, p: &MetricParams) -> ServiceMetrics {
    let speed = p.express_kmh / 3.6;
    let wait = route.headway_min * 60.0 / 2.0;
    let mut m = ServiceMetrics::default();
    let (mut bus, mut total) = (0.0, 0.0);
    if let Some(cells) = assigned.legs.get(&route.id) {
        for ((a, b), v) in cells {
            let (Some(i), Some(j)) = (net.position_in_route(&route.id, a), net.position_in_route(&route.id, b)) else {
                continue;
            };
            if i >= j || *v <= 0.0 {
                continue;
            }
            let km = net.segment_m(&route.id, i, j) / 1000.0;
            let t_bus = km * 1000.0 / speed;
            let dwell = p.dwell_s * (j - i - 1) as f64;
            m.ridership += v;
            m.mileage_km += v * km;
            bus += v * t_bus;
            total += v * (t_bus + wait + dwell);
        }
    }
    let length_km = net.route_length_m(&route.id) / 1000.0;
    let runtime_min = (length_km * 1000.0 / speed + p.dwell_s * route.stops.len().saturating_sub(2) as f64) / 60.0;
    m.cost = route_cost(length_km, runtime_min, runs_per_day(route.headway_min, p.service_hours));
    m.empty = m.ridership <= 0.0;
    m.rt = if total > 0.0 { bus / total } else { 0.0 };
    m.rs = if m.cost > 0.0 { m.mileage_km / m.cost } else { 0.0 };
    m.effective_km = m.mileage_km * m.rt;
    m.ps = m.rt * m.rs;
    m
}

/// Number of 8-bit code variables for `n_stops`.
pub fn code_len(n_stops: usize) -> usize {
    n_stops.div_ceil(CODE_BITS)
}

/// Packs stop flags most-significant bit first: bit j of variable i is stop 8i+j.
pub fn encode_mask(mask: &[bool]) -> Vec<u32> {
    let mut codes = vec![0u32; code_len(mask.len())];
    for (s, &on) in mask.iter().enumerate() {
        if on {
            codes[s / CODE_BITS] |= 1 << (CODE_BITS - 1 - s % CODE_BITS);
        }
    }
    codes
}

/// Unpacks codes into `n_stops` flags with both terminals forced on; the flag reports a repair.
pub fn decode_mask(codes: &[u32], n_stops: usize) -> (Vec<bool>, bool) {
    let mut mask: Vec<bool> = (0..n_stops)
        .map(|s| codes.get(s / CODE_BITS).is_some_and(|c| c >> (CODE_BITS - 1 - s % CODE_BITS) & 1 == 1))
        .collect();
    let mut repaired = codes.iter().any(|&c| c > 255);
    for t in [0, n_stops.saturating_sub(1)] {
        if n_stops > 0 && !mask[t] {
            mask[t] = true;
            repaired = true;
        }
    }
    (mask, repaired)
}

/// Inertia falling linearly from 0.9 to 0.1 over the first 80% of iterations, then flat.
pub fn inertia(iter: usize, max_iter: usize) -> f64 {
    let knee = 0.8 * max_iter as f64;
    if knee <= 0.0 || iter as f64 >= knee {
        return 0.1;
    }
    0.9 - 0.8 * iter as f64 / knee
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    Ps,
    Rs,
    Mr,
    Rt,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Ps, Objective::Rs, Objective::Mr, Objective::Rt];

    pub fn value(&self, m: &ServiceMetrics) -> f64 {
        match self {
            Objective::Ps => m.ps,
            Objective::Rs => m.rs,
            Objective::Mr => m.mileage_km,
            Objective::Rt => m.rt,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Ps => "Ps",
            Objective::Rs => "Rs",
            Objective::Mr => "mr",
            Objective::Rt => "Rt",
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ps" => Ok(Objective::Ps),
            "rs" => Ok(Objective::Rs),
            "mr" => Ok(Objective::Mr),
            "rt" => Ok(Objective::Rt),
            _ => Err(Error::Parameter(format!("unknown objective {s:?}; expected Ps, Rs, mr or Rt"))),
        }
    }
}

/// Feasible solutions always rank above infeasible ones; infeasible ones rank by violation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub feasible: bool,
    pub value: f64,
    pub violation: f64,
}

impl Fitness {
    pub fn better_than(&self, other: &Fitness) -> bool {
        match (self.feasible, other.feasible) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => self.value > other.value,
            (false, false) => self.violation < other.violation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mask: Vec<bool>,
    pub headway_min: f64,
    pub metrics: ServiceMetrics,
    pub fitness: Fitness,
    pub reasons: Vec<String>,
}

/// Everything needed to score a candidate express route.
#[derive(Clone, Debug)]
pub struct Problem {
    pub net: Network,
    pub base_route: RouteId,
    pub demand: Vec<PassengerDemand>,
    pub models: ModelIndex,
    pub choice: ChoiceParams,
    pub metrics: MetricParams,
    pub objective: Objective,
    pub ridership_floor: f64,
    pub min_rt: f64,
    pub new_route_id: RouteId,
}

impl Problem {
    pub fn base(&self) -> Result<&Route> {
        self.net
            .route(&self.base_route)
            .ok_or_else(|| Error::InvalidInput(format!("unknown base route {}", self.base_route)))
    }

    pub fn n_stops(&self) -> usize {
        self.base().map_or(0, |r| r.stops.len())
    }

    pub fn route_for(&self, mask: &[bool], headway_min: f64) -> Result<Route> {
        let base = self.base()?;
        Ok(Route {
            id: self.new_route_id.clone(),
            direction: base.direction,
            stops: base.stops.iter().zip(mask).filter(|(_, &on)| on).map(|(s, _)| s.clone()).collect(),
            headway_min,
            speed_class: SpeedClass::Express,
        })
    }

    /// Redistributed ridership and the new route's metrics for one design.
    pub fn assign(&self, mask: &[bool], headway_min: f64) -> Result<(Route, Redistribution, ServiceMetrics)> {
        let route = self.route_for(mask, headway_min)?;
        let red = redistribute(&self.demand, &self.net, Some(&route), &self.models, AssignMode::Preference, &self.choice)?;
        let with = self.net.with_route(route.clone())?;
        let m = service_metrics(&with, &route, &red, &self.metrics);
        Ok((route, red, m))
    }

    pub fn evaluate(&self, mask: &[bool], headway_min: f64) -> Result<Evaluation> {
        let (_, _, metrics) = self.assign(mask, headway_min)?;
        let mut reasons = Vec::new();
        let mut violation = 0.0;
        if !(HEADWAY_BOUNDS.0..=HEADWAY_BOUNDS.1).contains(&headway_min) {
            reasons.push(format!("headway {headway_min} outside [2, 20]"));
            violation += 1.0;
        }
        if metrics.ridership < self.ridership_floor {
            reasons.push(format!("ridership {:.1} below floor {:.1}", metrics.ridership, self.ridership_floor));
            violation += (self.ridership_floor - metrics.ridership) / self.ridership_floor.max(1.0);
        }
        if metrics.rt < self.min_rt {
            reasons.push(format!("time efficiency {:.3} below {:.2}", metrics.rt, self.min_rt));
            violation += self.min_rt - metrics.rt;
        }
        Ok(Evaluation {
            mask: mask.to_vec(),
            headway_min,
            fitness: Fitness {
                feasible: reasons.is_empty(),
                value: self.objective.value(&metrics),
                violation,
            },
            metrics,
            reasons,
        })
    }
}

/// Best design over every interior mask and integer headway.
pub fn exhaustive(problem: &Problem) -> Result<Evaluation> {
    let n = problem.n_stops();
    if n < 2 {
        return Err(Error::InvalidInput("base route needs at least two stops".into()));
    }
    let interior = n - 2;
    if interior > 16 {
        return Err(Error::Parameter(format!("{interior} interior stops is too many to enumerate")));
    }
    let cands: Vec<(Vec<bool>, f64)> = (0..1u32 << interior)
        .flat_map(|bits| {
            let mut mask = vec![true; n];
            for k in 0..interior {
                mask[k + 1] = bits >> k & 1 == 1;
            }
            (2..=20).map(move |h| (mask.clone(), h as f64))
        })
        .collect();
    let evals: Vec<Evaluation> = cands
        .par_iter()
        .map(|(m, h)| problem.evaluate(m, *h))
        .collect::<Result<_>>()?;
    Ok(evals.into_iter().reduce(|a, b| if b.fitness.better_than(&a.fitness) { b } else { a }).unwrap())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoParams {
    pub swarm: usize,
    pub iters: usize,
    pub c1: f64,
    pub c2: f64,
    pub seed: u64,
}

impl Default for PsoParams {
    fn default() -> Self {
        PsoParams {
            swarm: 30,
            iters: 200,
            c1: 1.4961,
            c2: 1.4961,
            seed: 7,
        }
    }
}

/// Position is (headway, code variables); each particle draws from its own stream.
#[derive(Clone, Debug)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best: Vec<f64>,
    pub best_fitness: Fitness,
    pub fitness: Fitness,
    rng: ChaCha8Rng,
}

#[derive(Clone, Debug)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    pub global: Vec<f64>,
    pub global_fitness: Fitness,
    /// Per-dimension position bounds.
    pub bounds: Vec<(f64, f64)>,
}

const WORST: Fitness = Fitness {
    feasible: false,
    value: f64::NEG_INFINITY,
    violation: f64::INFINITY,
};

fn code_bounds(n_stops: usize) -> Vec<(f64, f64)> {
    let k = code_len(n_stops);
    let mut b = vec![HEADWAY_BOUNDS];
    for i in 0..k {
        let lo = if i == 0 { 128.0 } else { 0.0 };
        b.push((lo, 255.0));
    }
    b
}

/// Rounds and clamps a position, then decodes it into a mask and integer headway.
pub fn decode_position(pos: &[f64], n_stops: usize) -> (Vec<bool>, f64) {
    let h = pos[0].round().clamp(HEADWAY_BOUNDS.0, HEADWAY_BOUNDS.1);
    let codes: Vec<u32> = pos[1..].iter().map(|v| v.round().clamp(0.0, 255.0) as u32).collect();
    let (mask, _) = decode_mask(&codes, n_stops);
    (mask, h)
}

impl Swarm {
    pub fn new(n_stops: usize, size: usize, seed: u64) -> Swarm {
        let bounds = code_bounds(n_stops);
        let particles = (0..size)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64 + 1);
                let position: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
                let velocity: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.random_range(-(hi - lo)..=(hi - lo)) * 0.1).collect();
                Particle {
                    best: position.clone(),
                    position,
                    velocity,
                    best_fitness: WORST,
                    fitness: WORST,
                    rng,
                }
            })
            .collect();
        Swarm {
            particles,
            global: Vec::new(),
            global_fitness: WORST,
            bounds,
        }
    }

    /// Records fitness values and refreshes personal and global bests.
    pub fn update_bests(&mut self, fitness: &[Fitness]) {
        for (p, f) in self.particles.iter_mut().zip(fitness) {
            p.fitness = *f;
            if f.better_than(&p.best_fitness) {
                p.best_fitness = *f;
                p.best = p.position.clone();
            }
            if f.better_than(&self.global_fitness) {
                self.global_fitness = *f;
                self.global = p.position.clone();
            }
        }
    }

    /// Velocity and position update with fresh uniform r1, r2 per particle and dimension, clamped to bounds.
    pub fn step(&mut self, omega: f64, c1: f64, c2: f64) {
        let g = self.global.clone();
        for p in &mut self.particles {
            for d in 0..p.position.len() {
                let r1: f64 = p.rng.random();
                let r2: f64 = p.rng.random();
                let gd = g.get(d).copied().unwrap_or(p.position[d]);
                p.velocity[d] = omega * p.velocity[d] + c1 * r1 * (p.best[d] - p.position[d]) + c2 * r2 * (gd - p.position[d]);
                let (lo, hi) = self.bounds[d];
                p.position[d] = (p.position[d] + p.velocity[d]).clamp(lo, hi);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub iter: usize,
    pub omega: f64,
    pub gbest: Fitness,
    pub evaluations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub best: Evaluation,
    pub stops: Vec<crate::StopId>,
    pub audit: Vec<AuditRow>,
    pub feasible: bool,
}

/// Runs the swarm; designs are cached by (mask, headway) so repeated positions cost nothing.
pub fn optimize_route(problem: &Problem, pso: &PsoParams) -> Result<Design> {
    let n = problem.n_stops();
    if n < 2 {
        return Err(Error::InvalidInput("base route needs at least two stops".into()));
    }
    if !(1..=1000).contains(&pso.swarm) {
        return Err(Error::Parameter(format!("swarm size {} out of range", pso.swarm)));
    }
    let mut swarm = Swarm::new(n, pso.swarm, pso.seed);
    let mut cache: HashMap<(Vec<bool>, u32), Evaluation> = HashMap::new();
    let mut audit = Vec::with_capacity(pso.iters + 1);
    for iter in 0..=pso.iters {
        let omega = inertia(iter, pso.iters);
        if iter > 0 {
            swarm.step(omega, pso.c1, pso.c2);
        }
        let keys: Vec<(Vec<bool>, u32)> = swarm
            .particles
            .iter()
            .map(|p| {
                let (m, h) = decode_position(&p.position, n);
                (m, h as u32)
            })
            .collect();
        let mut missing: Vec<(Vec<bool>, u32)> = keys.iter().filter(|k| !cache.contains_key(*k)).cloned().collect();
        missing.sort();
        missing.dedup();
        let fresh: Vec<Evaluation> = missing
            .par_iter()
            .map(|(m, h)| problem.evaluate(m, *h as f64))
            .collect::<Result<_>>()?;
        for (k, e) in missing.into_iter().zip(fresh) {
            cache.insert(k, e);
        }
        let fit: Vec<Fitness> = keys.iter().map(|k| cache[k].fitness).collect();
        swarm.update_bests(&fit);
        audit.push(AuditRow {
            iter,
            omega,
            gbest: swarm.global_fitness,
            evaluations: cache.len(),
        });
    }
    let (mask, h) = decode_position(&swarm.global, n);
    let best = cache[&(mask.clone(), h as u32)].clone();
    let route = problem.route_for(&mask, h)?;
    if best.fitness.feasible {
        assert!((HEADWAY_BOUNDS.0..=HEADWAY_BOUNDS.1).contains(&best.headway_min));
        assert!(best.metrics.ridership >= problem.ridership_floor);
        assert!(best.metrics.rt >= problem.min_rt);
    } else {
        log::warn!("no feasible design found: {}", best.reasons.join("; "));
    }
    Ok(Design {
        feasible: best.fitness.feasible,
        stops: route.stops,
        best,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn cost_examples() {
        assert!((route_cost(10.0, 30.0, 1.0) - 86.0).abs() < 1e-12);
        assert_eq!(route_cost(10.0, 30.0, 0.0), 0.0);
        assert!((time_efficiency(900.0, 300.0, 180.0) - 0.652).abs() < 1e-3);
    }

    #[test]
    fn mask_layout() {
        assert_eq!(code_len(18), 3);
        let mut mask = vec![false; 18];
        mask[0] = true;
        mask[17] = true;
        let c = encode_mask(&mask);
        assert_eq!(c, vec![128, 0, 64]);
        assert_eq!(decode_mask(&c, 18), (mask, false));
        let ones = vec![true; 13];
        assert_eq!(decode_mask(&encode_mask(&ones), 13).0, ones);
        let (m, repaired) = decode_mask(&[0, 0], 10);
        assert!(repaired && m[0] && m[9]);
    }

    #[test]
    fn inertia_schedule() {
        assert!((inertia(0, 100) - 0.9).abs() < 1e-12);
        assert!((inertia(40, 100) - 0.5).abs() < 1e-12);
        assert!((inertia(80, 100) - 0.1).abs() < 1e-12);
        assert_eq!(inertia(99, 100), 0.1);
    }

    #[test]
    fn degenerate_swarm_motion() {
        let mut s = Swarm::new(10, 3, 1);
        s.bounds = vec![(-1e9, 1e9); 3];
        let before: Vec<Vec<f64>> = s.particles.iter().map(|p| p.position.iter().zip(&p.velocity).map(|(x, v)| x + v).collect()).collect();
        s.global = vec![0.0; 3];
        s.step(1.0, 0.0, 0.0);
        for (p, b) in s.particles.iter().zip(before) {
            assert_eq!(p.position, b);
        }
        for p in &mut s.particles {
            p.position = vec![5.0, 200.0, 100.0];
            p.best = p.position.clone();
            p.velocity = vec![0.0; 3];
        }
        s.global = vec![5.0, 200.0, 100.0];
        s.step(0.7, 1.4961, 1.4961);
        assert!(s.particles.iter().all(|p| p.position == vec![5.0, 200.0, 100.0]));
    }

    #[test]
    fn objective_names() {
        for o in Objective::ALL {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert!("speed".parse::<Objective>().is_err());
    }

    proptest! {
        #[test]
        fn encode_roundtrip(n in 2usize..=64, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mask: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            mask[0] = true;
            mask[n - 1] = true;
            let (back, repaired) = decode_mask(&encode_mask(&mask), n);
            prop_assert_eq!(back, mask);
            prop_assert!(!repaired);
        }

        #[test]
        fn decoded_positions_keep_terminals(n in 2usize..=64, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pos: Vec<f64> = (0..=code_len(n)).map(|_| rng.random_range(-50.0..300.0)).collect();
            let (mask, h) = decode_position(&pos, n);
            prop_assert!(mask[0] && mask[n - 1]);
            prop_assert!((2.0..=20.0).contains(&h));
        }
    }
}
