//! Acceptance criteria, one pass/fail line each. Runs without the libtest harness so the lines always print.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use otdkit_core::choice::{fit_mnl, gradient, log_likelihood, probabilities, ChoiceParams, ChoiceStage, Eta, N_FACTORS};
use otdkit_core::genesis::{generate_city, generate_population, simulate_days, CityConfig};
use otdkit_core::journeys::{reconstruct, AlightMethod, JourneyParams};
use otdkit_core::optimize::{decode_mask, decode_position, encode_mask, Objective, PsoParams};
use otdkit_core::pipeline::recovery::{
    chain_robustness, compression_law, flow_agreement, monotonicity_excess, offset_recovery, repair_protocol, window_effect,
    RepairProtocol,
};
use otdkit_core::pipeline::replicate::{four_objectives, pso_gap, redistribution_benchmark};
use otdkit_core::timesync::{correlate, sync_all, PulseSignal, SyncParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_offsets() -> Outcome {
    let t = Instant::now();
    let r = offset_recovery(200, 0.6, 1, &SyncParams::default());
    let secs = t.elapsed().as_secs_f64();
    let need = (0.99 * r.cases as f64).ceil() as usize;
    outcome(
        r.cases == 200 && r.exact >= need && r.coarse_within_10s >= need && r.max_sparsity <= 0.6 && secs < 60.0,
        format!(
            "exact {}/{} and coarse within 10 s {}/{} (need {need}), max sparsity {:.2}, {secs:.1} s (< 60 s)",
            r.exact, r.cases, r.coarse_within_10s, r.cases, r.max_sparsity
        ),
    )
}

fn naive_cor(c: &[u8], v: &[u8], k: i64) -> u64 {
    let mut s = 0;
    for i in 0..v.len() as i64 {
        let j = i - k;
        if j >= 0 && (j as usize) < c.len() {
            s += (c[j as usize] & v[i as usize]) as u64;
        }
    }
    s
}

fn c2_correlation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut lags = 0;
    for _ in 0..50 {
        let len = rng.random_range(1..=2000usize);
        let density = rng.random_range(0.05..0.6);
        let mut c = PulseSignal::zeros(0, 1, 20, len);
        let mut v = PulseSignal::zeros(0, 1, 20, len);
        for i in 0..len {
            if rng.random_bool(density) {
                c.set(i);
            }
            if rng.random_bool(density) {
                v.set(i);
            }
        }
        let (cs, vs) = (c.samples(), v.samples());
        let n = len as i64;
        let cor = correlate(&c, &v, -n, n).expect("correlate");
        for k in -n..=n {
            lags += 1;
            if cor.at(k) != naive_cor(&cs, &vs, k) {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over 50 pairs and {lags} lags"))
}

fn c3_compression() -> Outcome {
    match compression_law(3, 10) {
        Ok(r) => {
            let rel = (r.ratio - 0.01).abs() / 0.01;
            outcome(rel <= 0.2, format!("ops ratio {:.5} vs 0.01 ({:.1}% off, tolerance 20%)", r.ratio, 100.0 * rel))
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn c4_repair() -> Outcome {
    let t = Instant::now();
    let rows = match repair_protocol(&RepairProtocol::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let records: usize = rows.iter().map(|r| r.records).sum();
    let ok = rows.len() == 8
        && records >= 5000
        && rows.iter().all(|r| r.theta2 >= 0.85 && r.theta2 >= r.theta0)
        && secs < 300.0;
    let t2: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.theta2)).collect();
    let t0: Vec<String> = rows.iter().map(|r| format!("{:.3}", r.theta0)).collect();
    outcome(
        ok,
        format!(
            "theta2 by gap 1..8 [{}] (>= 0.85), theta0 [{}], {records} records (>= 5000), {secs:.1} s (< 300 s)",
            t2.join(" "),
            t0.join(" ")
        ),
    )
}

/// Ledger-exact alighting on days whose every planned ride was taken by bus.
fn clean_alighting_rate() -> (usize, usize) {
    let cfg = CityConfig {
        rng_seed: 11,
        n_passengers: 150,
        n_days: 10,
        ..Default::default()
    };
    let city = generate_city(&cfg).unwrap();
    let pop = generate_population(&cfg, &city).unwrap();
    let sim = simulate_days(&city, &pop, cfg.n_days);
    let (matched, _) = sync_all(&sim.swipes, &sim.avl, &city.network, &SyncParams::default());
    let (trips, _) = reconstruct(&matched, &sim.avl, &city.network, &JourneyParams::default());
    let mut legs: HashMap<(&str, u32), usize> = HashMap::new();
    for t in &sim.truth.swipes {
        *legs.entry((t.card.as_str(), t.day)).or_default() += 1;
    }
    let mut truth: Vec<_> = sim.truth.swipes.iter().collect();
    truth.sort_by_key(|t| (t.card.clone(), t.ts));
    let (mut checked, mut exact) = (0, 0);
    for (t, tr) in trips.iter().zip(truth) {
        let p = sim.truth.passenger(&tr.card).unwrap();
        let chain = p.chains.iter().find(|c| c.id == tr.chain).unwrap();
        if legs[&(tr.card.as_str(), tr.day)] != chain.records() {
            continue;
        }
        checked += 1;
        if t.card == tr.card
            && t.alight_stop.as_ref() == Some(&tr.alight_stop)
            && matches!(t.alight_method, AlightMethod::Continuous | AlightMethod::ClosedChain)
        {
            exact += 1;
        }
    }
    (exact, checked)
}

fn c5_alighting() -> Outcome {
    let (exact, checked) = clean_alighting_rate();
    let cfg = CityConfig {
        n_passengers: 400,
        n_days: 10,
        ..Default::default()
    };
    match flow_agreement(&cfg, 0.037, 3) {
        Ok(r) => {
            let min_r2 = r.min_r2();
            outcome(
                checked > 0 && exact == checked && min_r2 >= 0.9,
                format!(
                    "clean ledger-exact alighting {exact}/{checked}; at 3.7% burst loss min per-route flow R2 {min_r2:.3} over {} routes (>= 0.9)",
                    r.rows.len()
                ),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn c6_chain_robustness() -> Outcome {
    let t = Instant::now();
    let losses = [0.0, 0.1, 0.2, 0.3, 0.4];
    let freqs = [2, 5, 10, 15];
    let cells = match chain_robustness(&CityConfig::default(), &losses, &freqs, 50, 4) {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let secs = t.elapsed().as_secs_f64();
    let at = cells.iter().find(|c| c.loss == 0.2 && c.frequency == 10).map_or(0.0, |c| c.rate);
    let excess = monotonicity_excess(&cells);
    outcome(
        at >= 0.8 && excess == 0.0 && secs < 600.0,
        format!("recovery at loss 0.2 / frequency 10 = {at:.2} over 50 trials (>= 0.8), monotonicity excess {excess:.3} (= 0), {secs:.1} s (< 600 s)"),
    )
}

fn c7_window() -> Outcome {
    let cfg = CityConfig {
        rng_seed: 4,
        n_passengers: 300,
        n_days: 90,
        ..Default::default()
    };
    match window_effect(&cfg, &[5, 10, 30, 60, 90], 0.1) {
        Ok(rows) => {
            let f: Vec<f64> = rows.iter().map(|r| r.fraction).collect();
            let monotone = f.windows(2).all(|w| w[1] >= w[0]);
            let gain = f[4] - f[1];
            let shown: Vec<String> = f.iter().map(|x| format!("{x:.3}")).collect();
            outcome(
                monotone && gain >= 0.30,
                format!("fractions over 5/10/30/60/90 days [{}], 90-day minus 10-day {:.1} pp (>= 30)", shown.join(" "), 100.0 * gain),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn random_stage(rng: &mut ChaCha8Rng, counts: Vec<f64>) -> ChoiceStage {
    let x = (0..counts.len()).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
    ChoiceStage {
        x,
        counts,
        eta: Eta([true; N_FACTORS]),
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn c8_mnl() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_grad: f64 = 0.0;
    for _ in 0..20 {
        let stages: Vec<ChoiceStage> = (0..rng.random_range(1..6))
            .map(|_| {
                let n = rng.random_range(2..6);
                let counts = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
                random_stage(&mut rng, counts)
            })
            .collect();
        let w: [f64; N_FACTORS] = std::array::from_fn(|_| rng.random_range(0.0..5.0));
        let g = gradient(&w, &stages);
        for k in 0..N_FACTORS {
            let h = 1e-5;
            let (mut up, mut dn) = (w, w);
            up[k] += h;
            dn[k] -= h;
            let fd = (log_likelihood(&up, &stages) - log_likelihood(&dn, &stages)) / (2.0 * h);
            let rel = (g[k] - fd).abs() / fd.abs().max(g[k].abs()).max(1e-3);
            worst_grad = worst_grad.max(rel);
        }
    }

    let planted = [4.0, 0.0, 2.5, 1.0, 0.0, 3.2, 0.5, 1.8];
    let eta = Eta([true; N_FACTORS]);
    let mut stages = Vec::new();
    let mut worst_sum: f64 = 0.0;
    for _ in 0..100 {
        let mut s = random_stage(&mut rng, vec![0.0; 4]);
        let p = probabilities(&planted, &eta, &s.x);
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        for _ in 0..5 {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let pick = p.iter().position(|pi| {
                acc += pi;
                u < acc
            });
            s.counts[pick.unwrap_or(p.len() - 1)] += 1.0;
        }
        stages.push(s);
    }
    let choices: f64 = stages.iter().map(|s| s.total()).sum();
    let fit = fit_mnl(&stages, &ChoiceParams::default());
    let nz: Vec<usize> = (0..N_FACTORS).filter(|&k| planted[k] > 0.0).collect();
    let rho = spearman(&nz.iter().map(|&k| planted[k]).collect::<Vec<_>>(), &nz.iter().map(|&k| fit.weights[k]).collect::<Vec<_>>());
    outcome(
        worst_grad <= 1e-4 && rho >= 0.9 && worst_sum <= 1e-9,
        format!(
            "worst gradient relative error {worst_grad:.2e} (<= 1e-4), refit Spearman {rho:.3} on {choices} choices (>= 0.9), worst probability-sum error {worst_sum:.1e} (<= 1e-9)"
        ),
    )
}

fn c9_redistribution() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [1u64, 2, 3] {
        match redistribution_benchmark(seed, 400) {
            Ok(r) => {
                ok &= r.r2_preference > r.r2_utility && r.conservation_error <= 1e-6;
                lines.push(format!(
                    "seed {seed}: R2 {:.3} vs {:.3}, conservation {:.1e}",
                    r.r2_preference, r.r2_utility, r.conservation_error
                ));
            }
            Err(e) => {
                ok = false;
                lines.push(format!("seed {seed}: error {e}"));
            }
        }
    }
    outcome(ok, format!("preference vs generalized-time R2 and ridership conservation (<= 1e-6): {}", lines.join("; ")))
}

fn c10_pso_gap() -> Outcome {
    let t = Instant::now();
    let seeds: Vec<u64> = (1..=20).collect();
    match pso_gap(Objective::Ps, &seeds, &PsoParams::default(), 0.02) {
        Ok(r) => {
            let secs = t.elapsed().as_secs_f64();
            outcome(
                r.within >= 19 && r.monotone && r.all_feasible && secs < 300.0,
                format!(
                    "{}/20 runs within 2% of the exhaustive optimum {:.4} (>= 19), gbest monotone {}, all designs feasible {}, {secs:.1} s (< 300 s)",
                    r.within, r.optimum, r.monotone, r.all_feasible
                ),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn c11_phenomenology() -> Outcome {
    match four_objectives() {
        Ok(rows) => {
            let get = |n: &str| rows.iter().find(|r| r.objective == n).cloned().unwrap();
            let (rt, mr) = (get("Rt"), get("mr"));
            let min_stops = rows.iter().map(|r| r.stops).min().unwrap();
            let max_stops = rows.iter().map(|r| r.stops).max().unwrap();
            outcome(
                rt.stops == 2 && rt.headway_min == 2.0 && mr.stops == 10 && rt.stops == min_stops && mr.stops == max_stops,
                format!(
                    "Rt optimum {} stops at {} min, mr optimum {} stops at {} min (corners: 2 stops / 2 min and 10 stops)",
                    rt.stops, rt.headway_min, mr.stops, mr.headway_min
                ),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn c12_encoding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut bad_roundtrip, mut bad_terminal) = (0, 0);
    for _ in 0..10_000 {
        let n = rng.random_range(2..=64usize);
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        mask[0] = true;
        mask[n - 1] = true;
        let (back, repaired) = decode_mask(&encode_mask(&mask), n);
        if back != mask || repaired {
            bad_roundtrip += 1;
        }
        let raw: Vec<u32> = (0..n.div_ceil(8)).map(|_| rng.random_range(0..256)).collect();
        let (m, _) = decode_mask(&raw, n);
        let pos: Vec<f64> = std::iter::once(rng.random_range(-5.0..30.0))
            .chain((0..n.div_ceil(8)).map(|_| rng.random_range(-50.0..300.0)))
            .collect();
        let (mp, h) = decode_position(&pos, n);
        if !(m[0] && m[n - 1] && mp[0] && mp[n - 1] && (2.0..=20.0).contains(&h)) {
            bad_terminal += 1;
        }
    }
    outcome(
        bad_roundtrip == 0 && bad_terminal == 0,
        format!("{bad_roundtrip} round-trip failures, {bad_terminal} terminal or headway violations over 10000 masks, n in 2..=64"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("C1 offset recovery", c1_offsets),
        ("C2 correlation oracle", c2_correlation_oracle),
        ("C3 compression law", c3_compression),
        ("C4 AVL repair", c4_repair),
        ("C5 alighting inference", c5_alighting),
        ("C6 chain robustness", c6_chain_robustness),
        ("C7 window length", c7_window),
        ("C8 MNL fit", c8_mnl),
        ("C9 redistribution benchmark", c9_redistribution),
        ("C10 PSO optimality gap", c10_pso_gap),
        ("C11 objective phenomenology", c11_phenomenology),
        ("C12 encoding", c12_encoding),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let o = f();
        failed += usize::from(!o.pass);
        println!(
            "{} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
