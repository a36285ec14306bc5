//! Shared fixtures for the benchmark harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use otdkit_core::chains::ChainTrip;
use otdkit_core::genesis::{generate_city, CityConfig, BASE_EPOCH};
use otdkit_core::model::DAY_S;
use otdkit_core::timesync::PulseSignal;
use otdkit_core::Network;

/// Two random pulse signals of `len` samples with roughly `density` ones.
pub fn signal_pair(len: usize, density: f64, seed: u64) -> (PulseSignal, PulseSignal) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
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
    (c, v)
}

/// A commuter over `days` days: home-work-home most days, with an evening errand now and then.
pub fn commuter(days: i64, seed: u64) -> (Network, Vec<ChainTrip>) {
    let city = generate_city(&CityConfig::default()).expect("default city");
    let net = city.network;
    let ids: Vec<String> = net.stops().iter().map(|s| s.id.as_str().to_owned()).collect();
    let (home, work, shop) = (&ids[3], &ids[ids.len() / 2], &ids[ids.len() - 5]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trips = Vec::new();
    for d in 0..days {
        let base = BASE_EPOCH + d * DAY_S;
        let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-900..900);
        let t0 = base + 8 * 3600 + jitter(&mut rng);
        trips.push(ChainTrip::simple(home, work, t0, t0 + 1800));
        let t1 = base + 18 * 3600 + jitter(&mut rng);
        if rng.random_bool(0.3) {
            trips.push(ChainTrip::simple(work, shop, t1, t1 + 1500));
            trips.push(ChainTrip::simple(shop, home, t1 + 5400, t1 + 7200));
        } else {
            trips.push(ChainTrip::simple(work, home, t1, t1 + 1800));
        }
    }
    (net, trips)
}
