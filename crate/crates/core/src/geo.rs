//! Planar-sphere geometry shared by the radio model and location quantization.
//!
//! Everything here is generic over the floating-point scalar so the same
//! formulas can be evaluated in `f32` on constrained targets and in `f64`
//! inside the simulator.

use num_traits::{Float, FloatConst};
use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters (IUGG).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

fn lit<T: Float>(v: f64) -> T {
    T::from(v).expect("literal representable in scalar type")
}

/// A WGS84-ish coordinate pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon<T> {
    pub lat: T,
    pub lon: T,
}

impl<T: Float + FloatConst> LatLon<T> {
    pub fn new(lat: T, lon: T) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && self.lat.abs() <= lit(90.0)
            && self.lon.abs() <= lit(180.0)
    }

    /// Great-circle distance in meters (haversine).
    pub fn distance_m(&self, other: &Self) -> T {
        let to_rad = T::PI() / lit(180.0);
        let phi1 = self.lat * to_rad;
        let phi2 = other.lat * to_rad;
        let dphi = (other.lat - self.lat) * to_rad;
        let dlambda = (other.lon - self.lon) * to_rad;
        let half = lit::<T>(0.5);
        let a = (dphi * half).sin().powi(2)
            + phi1.cos() * phi2.cos() * (dlambda * half).sin().powi(2);
        let c = lit::<T>(2.0) * a.sqrt().min(T::one()).asin();
        lit::<T>(EARTH_RADIUS_M) * c
    }

    /// Point displaced by `north_m` / `east_m` meters using the local
    /// spherical approximation. Exact enough for the sub-kilometre offsets
    /// scenarios use to place actors around a place center.
    pub fn offset_m(&self, north_m: T, east_m: T) -> Self {
        let to_deg = lit::<T>(180.0) / T::PI();
        let r = lit::<T>(EARTH_RADIUS_M);
        let dlat = north_m / r * to_deg;
        let dlon = east_m / (r * (self.lat * T::PI() / lit(180.0)).cos()) * to_deg;
        Self {
            lat: self.lat + dlat,
            lon: self.lon + dlon,
        }
    }
}

/// True iff the two points are within `range_m` meters of each other.
pub fn within_range<T: Float + FloatConst>(a: &LatLon<T>, b: &LatLon<T>, range_m: T) -> bool {
    a.distance_m(b) <= range_m
}
