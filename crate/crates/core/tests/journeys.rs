use std::collections::HashMap;

use otdkit_core::genesis::{generate_city, generate_population, simulate_days, CityConfig};
use otdkit_core::journeys::{reconstruct, AlightMethod, JourneyParams};
use otdkit_core::timesync::{sync_all, SyncParams};

#[test]
fn clean_data_recovers_every_alighting_on_fully_transit_days() {
    let cfg = CityConfig {
        rng_seed: 11,
        n_passengers: 150,
        n_days: 10,
        ..Default::default()
    };
    let city = generate_city(&cfg).unwrap();
    let pop = generate_population(&cfg, &city).unwrap();
    let sim = simulate_days(&city, &pop, cfg.n_days);
    let (matched, reports) = sync_all(&sim.swipes, &sim.avl, &city.network, &SyncParams::default());
    assert!(reports.iter().all(|r| r.result.as_ref().is_none_or(|x| x.tau_star == 0)));
    let (trips, journeys) = reconstruct(&matched, &sim.avl, &city.network, &JourneyParams::default());
    assert_eq!(trips.len(), sim.swipes.len());
    assert_eq!(journeys.iter().map(|j| j.trips.len()).sum::<usize>(), trips.len());

    let mut legs: HashMap<(&str, u32), usize> = HashMap::new();
    for t in &sim.truth.swipes {
        *legs.entry((t.card.as_str(), t.day)).or_default() += 1;
    }
    let full = |card: &str, day: u32, chain: u32| {
        let p = sim.truth.passenger(&card.into()).unwrap();
        let c = p.chains.iter().find(|c| c.id == chain).unwrap();
        legs[&(card, day)] == c.records()
    };
    let mut truth: Vec<_> = sim.truth.swipes.iter().collect();
    truth.sort_by_key(|t| (t.card.clone(), t.ts));
    let (mut checked, mut exact) = (0, 0);
    for (t, tr) in trips.iter().zip(truth) {
        assert_eq!((&t.card, t.board_ts), (&tr.card, tr.ts));
        if !full(tr.card.as_str(), tr.day, tr.chain) {
            continue;
        }
        checked += 1;
        if t.alight_stop.as_ref() == Some(&tr.alight_stop)
            && matches!(t.alight_method, AlightMethod::Continuous | AlightMethod::ClosedChain)
        {
            exact += 1;
        }
    }
    assert!(checked > 500, "{checked}");
    assert_eq!(exact, checked);
}

#[test]
fn journeys_partition_trips_and_label_stages() {
    let cfg = CityConfig {
        rng_seed: 5,
        n_passengers: 80,
        n_days: 5,
        ..Default::default()
    };
    let city = generate_city(&cfg).unwrap();
    let pop = generate_population(&cfg, &city).unwrap();
    let sim = simulate_days(&city, &pop, cfg.n_days);
    let (matched, _) = sync_all(&sim.swipes, &sim.avl, &city.network, &SyncParams::default());
    let (trips, journeys) = reconstruct(&matched, &sim.avl, &city.network, &JourneyParams::default());
    let mut seen = 0;
    for j in &journeys {
        use otdkit_core::journeys::StageLabel::*;
        assert_eq!(j.stages.first().unwrap().label, O);
        assert_eq!(j.stages.last().unwrap().label, D);
        assert_eq!(j.stages.iter().filter(|s| s.label == T).count(), j.trips.len() - 1);
        seen += j.trips.len();
        for t in &j.trips {
            if let Some(a) = &t.alight_stop {
                if t.alight_method != AlightMethod::Continuous {
                    assert!(t.candidates.contains(a));
                }
                assert_ne!(Some(a), t.board_stop.as_ref());
                assert!(t.alight_ts.unwrap() >= t.board_ts);
            }
        }
    }
    assert_eq!(seen, trips.len());
    // planned transfers show up as multi-trip journeys
    assert!(journeys.iter().any(|j| j.trips.len() > 1));
}
