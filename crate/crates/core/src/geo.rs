//! Coordinate types, great-circle distance and initial bearing.
//!
//! Angles are radians internally; degrees appear only at construction and
//! display. Distances use the haversine formula on a sphere of radius
//! [`EARTH_RADIUS_M`]; at the tens-of-meters scale of consecutive trace
//! points the spherical-vs-ellipsoidal discrepancy is well below GPS noise.

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Mean Earth radius in meters for the spherical distance model.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Latitude overshoot tolerated before construction fails, in degrees.
/// Covers accumulated rounding from local-frame round trips near the poles.
const LAT_EPS: f64 = 1e-9;

/// A WGS84-style coordinate in degrees.
///
/// Latitude is validated into `[-90, 90]`; longitude is normalized into
/// `(-180, 180]` on construction (`-180` maps to `+180`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint<F: Scalar = f64> {
    lat: F,
    lon: F,
}

impl<F: Scalar> GeoPoint<F> {
    pub fn new(lat: F, lon: F) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::InvalidCoordinate {
                lat: lat.to_f64().unwrap_or(f64::NAN),
                lon: lon.to_f64().unwrap_or(f64::NAN),
            });
        }
        let ninety = cast::<F>(90.0);
        if lat.abs() > ninety + cast(LAT_EPS) {
            return Err(Error::InvalidCoordinate {
                lat: lat.to_f64().unwrap_or(f64::NAN),
                lon: lon.to_f64().unwrap_or(f64::NAN),
            });
        }
        let lat = lat.min(ninety).max(-ninety);
        Ok(Self {
            lat,
            lon: normalize_lon(lon),
        })
    }

    #[inline]
    pub fn lat(&self) -> F {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> F {
        self.lon
    }

    #[inline]
    pub fn lat_rad(&self) -> F {
        self.lat.to_radians()
    }

    #[inline]
    pub fn lon_rad(&self) -> F {
        self.lon.to_radians()
    }

    /// Displaces this point by local east/north meter offsets.
    ///
    /// Equirectangular approximation, intended for building fixtures and
    /// nudging points at city scale.
    pub fn offset_by_meters(&self, east_m: F, north_m: F) -> Result<Self> {
        let radius = cast::<F>(EARTH_RADIUS_M);
        let dlat = (north_m / radius).to_degrees();
        let dlon = (east_m / (radius * self.lat_rad().cos())).to_degrees();
        Self::new(self.lat + dlat, self.lon + dlon)
    }
}

impl<F: Scalar> std::fmt::Display for GeoPoint<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({:?}, {:?})", self.lat, self.lon)
    }
}

fn normalize_lon<F: Scalar>(lon: F) -> F {
    let full = cast::<F>(360.0);
    let half = cast::<F>(180.0);
    let mut l = lon % full;
    if l > half {
        l = l - full;
    } else if l < -half {
        l = l + full;
    }
    // canonical antimeridian representation
    if l == -half {
        l = half;
    }
    l
}

/// Initial bearing of a great-circle segment, radians in `(-pi, pi]`.
///
/// Zero is due north, positive angles turn east.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingRad<F: Scalar = f64>(F);

impl<F: Scalar> BearingRad<F> {
    /// Wraps an arbitrary angle into `(-pi, pi]`.
    pub fn new(radians: F) -> Self {
        let pi = F::from_f64(std::f64::consts::PI).unwrap();
        let two_pi = pi + pi;
        let mut r = radians % two_pi;
        if r > pi {
            r = r - two_pi;
        } else if r <= -pi {
            r = r + two_pi;
        }
        Self(r)
    }

    #[inline]
    pub fn radians(&self) -> F {
        self.0
    }

    pub fn degrees(&self) -> F {
        self.0.to_degrees()
    }

    /// Reversed direction, wrapped back into `(-pi, pi]`.
    pub fn opposite(&self) -> Self {
        let pi = F::from_f64(std::f64::consts::PI).unwrap();
        Self::new(self.0 + pi)
    }
}

/// Non-negative, finite distance in meters.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MetersDistance<F: Scalar = f64>(F);

impl<F: Scalar> MetersDistance<F> {
    /// Clamps tiny negative rounding noise to zero; panics on NaN/inf,
    /// which no internal path produces.
    pub fn new(meters: F) -> Self {
        assert!(meters.is_finite(), "distance must be finite");
        Self(meters.max(F::zero()))
    }

    #[inline]
    pub fn meters(&self) -> F {
        self.0
    }
}

/// Initial bearing from `a` to `b` via the two-argument arctangent:
/// `atan2(sin(dlon)*cos(lat2), cos(lat1)*sin(lat2) - sin(lat1)*cos(lat2)*cos(dlon))`.
///
/// Errors with [`Error::DegenerateSegment`] when the normalized points
/// coincide, where the bearing is undefined.
pub fn initial_bearing<F: Scalar>(a: GeoPoint<F>, b: GeoPoint<F>) -> Result<BearingRad<F>> {
    if a == b {
        return Err(Error::DegenerateSegment);
    }
    let (phi1, phi2) = (a.lat_rad(), b.lat_rad());
    let dlon = b.lon_rad() - a.lon_rad();
    let y = dlon.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dlon.cos();
    Ok(BearingRad::new(y.atan2(x)))
}

/// Haversine great-circle distance on a sphere of radius [`EARTH_RADIUS_M`].
pub fn great_circle_distance<F: Scalar>(a: GeoPoint<F>, b: GeoPoint<F>) -> MetersDistance<F> {
    if a == b {
        return MetersDistance::new(F::zero());
    }
    let two = cast::<F>(2.0);
    let (phi1, phi2) = (a.lat_rad(), b.lat_rad());
    let dphi = phi2 - phi1;
    let dlam = wrap_rad(b.lon_rad() - a.lon_rad());
    let sp = (dphi / two).sin();
    let sl = (dlam / two).sin();
    let h = sp * sp + phi1.cos() * phi2.cos() * sl * sl;
    let h = h.min(F::one());
    let central = two * h.sqrt().atan2((F::one() - h).sqrt());
    MetersDistance::new(cast::<F>(EARTH_RADIUS_M) * central)
}

/// Wraps a longitude difference in radians into `[-pi, pi]`.
fn wrap_rad<F: Scalar>(dlam: F) -> F {
    let pi = F::from_f64(std::f64::consts::PI).unwrap();
    let two_pi = pi + pi;
    if dlam > pi {
        dlam - two_pi
    } else if dlam < -pi {
        dlam + two_pi
    } else {
        dlam
    }
}

/// Local equirectangular frame anchored at a reference point.
///
/// Valid for the sub-kilometer offsets used in segment projection; exact
/// distances are always recomputed with [`great_circle_distance`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalFrame<F: Scalar = f64> {
    origin: GeoPoint<F>,
    cos_lat: F,
}

impl<F: Scalar> LocalFrame<F> {
    pub(crate) fn new(origin: GeoPoint<F>) -> Self {
        Self {
            origin,
            cos_lat: origin.lat_rad().cos(),
        }
    }

    /// East/north offsets of `p` from the origin, in meters.
    pub(crate) fn to_local(&self, p: GeoPoint<F>) -> (F, F) {
        let radius = cast::<F>(EARTH_RADIUS_M);
        let x = wrap_rad(p.lon_rad() - self.origin.lon_rad()) * self.cos_lat * radius;
        let y = (p.lat_rad() - self.origin.lat_rad()) * radius;
        (x, y)
    }

    pub(crate) fn from_local(&self, x: F, y: F) -> GeoPoint<F> {
        let radius = cast::<F>(EARTH_RADIUS_M);
        let lat = self.origin.lat_rad() + y / radius;
        let lon = self.origin.lon_rad() + x / (radius * self.cos_lat);
        GeoPoint::new(lat.to_degrees(), lon.to_degrees())
            .expect("local offsets keep coordinates in range")
    }
}

/// Closest point of segment `ab` to `p`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SegmentProjection<F: Scalar = f64> {
    pub point: GeoPoint<F>,
    pub distance_m: F,
    /// Position along the segment in `[0, 1]`.
    pub t: F,
}

/// Projects `p` onto segment `ab` in a local planar frame anchored at `p`,
/// then measures the true great-circle distance to the projected point.
pub(crate) fn project_onto_segment<F: Scalar>(
    p: GeoPoint<F>,
    a: GeoPoint<F>,
    b: GeoPoint<F>,
) -> SegmentProjection<F> {
    let frame = LocalFrame::new(p);
    let (ax, ay) = frame.to_local(a);
    let (bx, by) = frame.to_local(b);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > F::zero() {
        (-(ax * dx + ay * dy) / len2).max(F::zero()).min(F::one())
    } else {
        F::zero()
    };
    let point = if t == F::zero() {
        a
    } else if t == F::one() {
        b
    } else {
        frame.from_local(ax + t * dx, ay + t * dy)
    };
    SegmentProjection {
        point,
        distance_m: great_circle_distance(p, point).meters(),
        t,
    }
}
