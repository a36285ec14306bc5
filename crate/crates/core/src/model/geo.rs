use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sphere radius used for every great-circle distance (WGS84 equatorial radius).
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.abs() <= 90.0 && self.lon.abs() <= 180.0
    }

    /// Moves by a local east/north offset in meters.
    pub fn offset_m(&self, east: f64, north: f64) -> Self {
        let dlat = (north / EARTH_RADIUS_M).to_degrees();
        let dlon = (east / (EARTH_RADIUS_M * self.lat.to_radians().cos())).to_degrees();
        Self::new(self.lat + dlat, self.lon + dlon)
    }

    /// Local planar displacement (east, north) in meters from `self` to `other`.
    pub fn planar_to(&self, other: &LatLon) -> (f64, f64) {
        let mean_lat = 0.5 * (self.lat + other.lat);
        let east = (other.lon - self.lon).to_radians() * EARTH_RADIUS_M * mean_lat.to_radians().cos();
        let north = (other.lat - self.lat).to_radians() * EARTH_RADIUS_M;
        (east, north)
    }
}

/// Haversine great-circle distance in meters.
pub fn distance(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Angle in degrees between two directed origin→destination displacements.
pub fn bearing_angle(v1: (LatLon, LatLon), v2: (LatLon, LatLon)) -> Result<f64> {
    let a = v1.0.planar_to(&v1.1);
    let b = v2.0.planar_to(&v2.1);
    let na = a.0.hypot(a.1);
    let nb = b.0.hypot(b.1);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroLengthVector);
    }
    let cos = ((a.0 * b.0 + a.1 * b.1) / (na * nb)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_is_zero() {
        let p = LatLon::new(22.2, 113.5);
        assert_eq!(distance(p, p), 0.0);
    }

    #[test]
    fn equator_hundredth_degree() {
        let d = distance(LatLon::new(0.0, 0.0), LatLon::new(0.0, 0.01));
        assert!((d - 1113.2).abs() <= 0.5, "{d}");
    }

    #[test]
    fn hundredth_degree_at_22n() {
        let d = distance(LatLon::new(22.2, 113.5), LatLon::new(22.2, 113.51));
        assert!((d - 1030.6).abs() <= 1.0, "{d}");
    }

    #[test]
    fn bearing_cases() {
        let o = LatLon::new(22.2, 113.5);
        let e = o.offset_m(100.0, 0.0);
        let n = o.offset_m(0.0, 100.0);
        assert!(bearing_angle((o, e), (o, e)).unwrap().abs() < 1e-6);
        assert!((bearing_angle((o, e), (e, o)).unwrap() - 180.0).abs() < 1e-6);
        assert!((bearing_angle((o, e), (o, n)).unwrap() - 90.0).abs() < 0.1);
        assert!(matches!(
            bearing_angle((o, o), (o, n)),
            Err(Error::ZeroLengthVector)
        ));
    }

    fn coord() -> impl Strategy<Value = LatLon> {
        (-80.0f64..80.0, -179.0f64..179.0).prop_map(|(a, b)| LatLon::new(a, b))
    }

    proptest! {
        #[test]
        fn symmetric_and_triangle(a in coord(), b in coord(), c in coord()) {
            let ab = distance(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - distance(b, a)).abs() < 1e-6);
            prop_assert!(distance(a, c) <= ab + distance(b, c) + 1e-6);
        }
    }
}
