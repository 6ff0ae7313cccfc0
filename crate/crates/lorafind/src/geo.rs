//! Geodetic coordinates and the local east/north/up tangent plane.
//!
//! All estimation and planning runs in meters on a local tangent plane
//! anchored at a declared origin. Conversions use an equirectangular
//! approximation with the WGS-84 curvature radii evaluated at the midpoint
//! latitude, which keeps the forward/inverse pair exact to machine
//! precision and the metric error sub-centimeter at mission scales.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS-84 semi-major axis in meters.
const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// Largest offset accepted by the tangent-plane conversions, in meters.
const MAX_TANGENT_OFFSET_M: f64 = 50_000.0;

/// Errors from coordinate validation and conversion.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("{field} = {value} is not finite")]
    NonFinite { field: &'static str, value: f64 },
    #[error("{field} = {value} outside valid range [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error(
        "offset of {distance_m:.1} m exceeds the {MAX_TANGENT_OFFSET_M} m tangent-plane limit"
    )]
    OffsetTooLarge { distance_m: f64 },
}

/// A WGS-84 geodetic position: latitude/longitude in degrees, altitude in
/// meters above the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Result<Self, GeoError> {
        let p = Self { lat, lon, alt };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        for (field, value) in [("lat", self.lat), ("lon", self.lon), ("alt", self.alt)] {
            if !value.is_finite() {
                return Err(GeoError::NonFinite { field, value });
            }
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(GeoError::OutOfRange {
                field: "lat",
                value: self.lat,
                min: -90.0,
                max: 90.0,
            });
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(GeoError::OutOfRange {
                field: "lon",
                value: self.lon,
                min: -180.0,
                max: 180.0,
            });
        }
        Ok(())
    }
}

/// A point on the local tangent plane: east/north/up offsets in meters from
/// a declared [`GeoPoint`] origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalPoint {
    #[serde(rename = "east_m")]
    pub east: f64,
    #[serde(rename = "north_m")]
    pub north: f64,
    #[serde(rename = "up_m")]
    pub up: f64,
}

impl LocalPoint {
    pub const ORIGIN: LocalPoint = LocalPoint {
        east: 0.0,
        north: 0.0,
        up: 0.0,
    };

    pub fn new(east: f64, north: f64, up: f64) -> Self {
        Self { east, north, up }
    }

    pub fn is_finite(&self) -> bool {
        self.east.is_finite() && self.north.is_finite() && self.up.is_finite()
    }

    /// Full 3-D Euclidean norm.
    pub fn norm(&self) -> f64 {
        (self.east * self.east + self.north * self.north + self.up * self.up).sqrt()
    }

    /// 3-D Euclidean distance to another point.
    pub fn distance_to(&self, other: &LocalPoint) -> f64 {
        let de = self.east - other.east;
        let dn = self.north - other.north;
        let du = self.up - other.up;
        (de * de + dn * dn + du * du).sqrt()
    }

    /// Distance ignoring the vertical component.
    pub fn horizontal_distance_to(&self, other: &LocalPoint) -> f64 {
        let de = self.east - other.east;
        let dn = self.north - other.north;
        (de * de + dn * dn).sqrt()
    }

    pub fn offset(&self, east: f64, north: f64, up: f64) -> LocalPoint {
        LocalPoint::new(self.east + east, self.north + north, self.up + up)
    }
}

fn wgs84_e2() -> f64 {
    WGS84_F * (2.0 - WGS84_F)
}

/// Meridian radius of curvature at geodetic latitude `phi` (radians).
fn meridian_radius(phi: f64) -> f64 {
    let e2 = wgs84_e2();
    let s = phi.sin();
    WGS84_A * (1.0 - e2) / (1.0 - e2 * s * s).powf(1.5)
}

/// Prime-vertical radius of curvature at geodetic latitude `phi` (radians).
fn prime_vertical_radius(phi: f64) -> f64 {
    let e2 = wgs84_e2();
    let s = phi.sin();
    WGS84_A / (1.0 - e2 * s * s).sqrt()
}

/// Wrap a longitude difference into (-180, 180] degrees.
fn wrap_lon_delta(dlon: f64) -> f64 {
    let mut d = dlon % 360.0;
    if d > 180.0 {
        d -= 360.0;
    } else if d <= -180.0 {
        d += 360.0;
    }
    d
}

/// Convert a geodetic point to east/north/up offsets from `origin`.
///
/// Valid for offsets below 50 km, where the tangent-plane error is far
/// below the radio-derived position uncertainty this crate deals in.
pub fn to_local(p: &GeoPoint, origin: &GeoPoint) -> Result<LocalPoint, GeoError> {
    p.validate()?;
    origin.validate()?;
    let dlat = (p.lat - origin.lat).to_radians();
    let dlon = wrap_lon_delta(p.lon - origin.lon).to_radians();
    let phi_mid = ((p.lat + origin.lat) / 2.0).to_radians();
    let north = dlat * meridian_radius(phi_mid);
    let east = dlon * phi_mid.cos() * prime_vertical_radius(phi_mid);
    let up = p.alt - origin.alt;
    let horizontal = (east * east + north * north).sqrt();
    if horizontal >= MAX_TANGENT_OFFSET_M {
        return Err(GeoError::OffsetTooLarge {
            distance_m: horizontal,
        });
    }
    Ok(LocalPoint::new(east, north, up))
}

/// Convert east/north/up offsets from `origin` back to a geodetic point.
///
/// Exact inverse of [`to_local`] under the same approximation; the midpoint
/// latitude is recovered by a short fixed-point iteration.
pub fn from_local(p: &LocalPoint, origin: &GeoPoint) -> Result<GeoPoint, GeoError> {
    origin.validate()?;
    if !p.is_finite() {
        return Err(GeoError::NonFinite {
            field: "local point",
            value: f64::NAN,
        });
    }
    let horizontal = (p.east * p.east + p.north * p.north).sqrt();
    if horizontal >= MAX_TANGENT_OFFSET_M {
        return Err(GeoError::OffsetTooLarge {
            distance_m: horizontal,
        });
    }
    let phi0 = origin.lat.to_radians();
    // Solve north = dlat * M((phi0 + phi)/2); converges in a few rounds.
    let mut dlat = p.north / meridian_radius(phi0);
    for _ in 0..4 {
        dlat = p.north / meridian_radius(phi0 + dlat / 2.0);
    }
    let phi_mid = phi0 + dlat / 2.0;
    let dlon = p.east / (phi_mid.cos() * prime_vertical_radius(phi_mid));
    let lat = origin.lat + dlat.to_degrees();
    let mut lon = origin.lon + dlon.to_degrees();
    lon = wrap_lon_delta(lon);
    let out = GeoPoint {
        lat,
        lon,
        alt: origin.alt + p.up,
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lausanne() -> GeoPoint {
        GeoPoint::new(46.52, 6.565, 400.0).unwrap()
    }

    #[test]
    fn identity_at_origin() {
        let o = lausanne();
        let l = to_local(&o, &o).unwrap();
        assert_eq!(l, LocalPoint::ORIGIN);
        let g = from_local(&LocalPoint::ORIGIN, &o).unwrap();
        assert_eq!(g, o);
    }

    #[test]
    fn meridian_arc_0p001_deg_at_lat_46() {
        // Independent oracle: true WGS-84 meridian arc length from 46.000 to
        // 46.001 degrees, integrated numerically = 111.1513282721728 m.
        let o = GeoPoint::new(46.0, 7.0, 0.0).unwrap();
        let p = GeoPoint::new(46.001, 7.0, 0.0).unwrap();
        let l = to_local(&p, &o).unwrap();
        assert!(
            (l.north - 111.151_328_272_172_8).abs() < 1e-4,
            "north = {}",
            l.north
        );
        assert!(l.east.abs() < 1e-9);
        assert!(l.up.abs() < 1e-12);

        // And the inverse direction from the same oracle value.
        let g = from_local(&LocalPoint::new(0.0, 111.151_328_272_172_8, 0.0), &o).unwrap();
        assert!((g.lat - 46.001).abs() < 1e-9, "lat = {}", g.lat);
    }

    #[test]
    fn parallel_arc_0p001_deg_at_lat_46() {
        // Oracle: cos(46 deg) * N(46 deg) * 0.001 deg = 77.46329910198729 m.
        let o = GeoPoint::new(46.0, 7.0, 0.0).unwrap();
        let p = GeoPoint::new(46.0, 7.001, 0.0).unwrap();
        let l = to_local(&p, &o).unwrap();
        assert!(
            (l.east - 77.463_299_101_987_29).abs() < 1e-4,
            "east = {}",
            l.east
        );
        assert!(l.north.abs() < 1e-6);
    }

    #[test]
    fn altitude_passes_through() {
        let o = lausanne();
        let p = GeoPoint::new(46.52, 6.565, 455.5).unwrap();
        let l = to_local(&p, &o).unwrap();
        assert_eq!(l.up, 55.5);
    }

    #[test]
    fn rejects_out_of_range_and_non_finite() {
        assert!(GeoPoint::new(91.0, 0.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, 181.0, 0.0).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0, 0.0).is_err());
        let o = lausanne();
        assert!(from_local(&LocalPoint::new(f64::INFINITY, 0.0, 0.0), &o).is_err());
    }

    #[test]
    fn rejects_offsets_beyond_tangent_limit() {
        let o = GeoPoint::new(0.0, 0.0, 0.0).unwrap();
        let p = GeoPoint::new(1.0, 0.0, 0.0).unwrap(); // ~110 km north
        assert!(matches!(
            to_local(&p, &o),
            Err(GeoError::OffsetTooLarge { .. })
        ));
        assert!(from_local(&LocalPoint::new(60_000.0, 0.0, 0.0), &o).is_err());
    }

    #[test]
    fn norm_is_symmetric_in_endpoints() {
        // Midpoint-latitude radii make the swapped conversion produce the
        // exact mirrored offsets, so the norms agree to machine precision.
        let cases = [
            (46.0, 7.0, 46.03, 7.04, 120.0),
            (-33.5, 18.4, -33.52, 18.38, -40.0),
            (69.9, -105.0, 69.93, -104.9, 3.0),
        ];
        for (lat_o, lon_o, lat_p, lon_p, alt_p) in cases {
            let o = GeoPoint::new(lat_o, lon_o, 0.0).unwrap();
            let p = GeoPoint::new(lat_p, lon_p, alt_p).unwrap();
            let fwd = to_local(&p, &o).unwrap();
            let back = to_local(&o, &p).unwrap();
            let rel = (fwd.norm() - back.norm()).abs() / fwd.norm();
            assert!(rel < 1e-9, "relative norm asymmetry {rel}");
        }
    }

    proptest! {
        #[test]
        fn round_trip_within_1e6_deg(
            lat in -75.0f64..75.0,
            lon in -179.0f64..179.0,
            east in -5_000.0f64..5_000.0,
            north in -3_400.0f64..3_400.0,
            up in -500.0f64..500.0,
        ) {
            // Keep the total horizontal offset under 5 km.
            prop_assume!((east * east + north * north).sqrt() < 5_000.0);
            let o = GeoPoint::new(lat, lon, 123.0).unwrap();
            let p = from_local(&LocalPoint::new(east, north, up), &o).unwrap();
            let back = to_local(&p, &o).unwrap();
            prop_assert!((back.east - east).abs() < 1e-6);
            prop_assert!((back.north - north).abs() < 1e-6);
            let g = from_local(&back, &o).unwrap();
            prop_assert!((g.lat - p.lat).abs() < 1e-6);
            prop_assert!((g.lon - p.lon).abs() < 1e-6);
        }

        #[test]
        fn geodetic_round_trip(
            lat in -75.0f64..75.0,
            lon in -179.0f64..179.0,
            dlat in -0.03f64..0.03,
            dlon in -0.03f64..0.03,
        ) {
            let o = GeoPoint::new(lat, lon, 0.0).unwrap();
            let p = GeoPoint::new(lat + dlat, lon + dlon, 10.0).unwrap();
            let l = to_local(&p, &o).unwrap();
            let back = from_local(&l, &o).unwrap();
            prop_assert!((back.lat - p.lat).abs() < 1e-6);
            prop_assert!((back.lon - p.lon).abs() < 1e-6);
        }
    }
}
