//! Record annotation: direction-aware speed limits, elevation smoothing
//! and gradient, and infrastructure flags from spatial joins.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::{great_circle_distance, initial_bearing, BearingRad, GeoPoint};
use crate::matching::{MatchStatus, MatchedPoint};
use crate::network::{default_speed_limit, FocusPointKind, RoadEdge, RoadNetwork, SpeedLimitClass, MPH_TO_KMH};
use crate::scalar::Scalar;

/// Travel direction relative to edge geometry order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TravelDirection {
    Forward,
    Backward,
}

/// Forward iff `cos(edge_bearing - trip_bearing) > 0`; the perpendicular
/// tie (`cos == 0`) resolves to forward.
pub fn travel_direction(edge_bearing: BearingRad, trip_bearing: BearingRad) -> TravelDirection {
    if (edge_bearing.radians() - trip_bearing.radians()).cos() >= 0.0 {
        TravelDirection::Forward
    } else {
        TravelDirection::Backward
    }
}

/// A resolved speed limit with its provenance class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedLimitRecord {
    pub value_kmh: f64,
    pub cls: SpeedLimitClass,
    /// Limit for the traveled direction; present exactly for class -1.
    pub directional_value_kmh: Option<f64>,
}

/// Parses a speed-limit tag value: either `"N mph"` or a bare numeric
/// km/h value per map convention. Returns km/h.
fn parse_speed_tag(key: &str, value: &str) -> Result<f64> {
    let v = value.trim();
    let (num, factor) = match v.strip_suffix("mph") {
        Some(rest) => (rest.trim(), MPH_TO_KMH),
        None => (v, 1.0),
    };
    let parsed: f64 = num.parse().map_err(|_| Error::TagParse {
        key: key.to_string(),
        value: value.to_string(),
    })?;
    if !parsed.is_finite() || parsed <= 0.0 {
        return Err(Error::TagParse {
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(parsed * factor)
}

/// Resolves the speed limit of an edge for a given travel direction.
///
/// Precedence: direction-specific legal limit (class -1), legal limit
/// (0), advisory (2), practical (3), then the class default (1). An
/// `other`-class edge with no tags yields [`Error::MissingLimit`].
pub fn speed_limit_for(edge: &RoadEdge, dir: TravelDirection) -> Result<SpeedLimitRecord> {
    let dir_key = match dir {
        TravelDirection::Forward => "maxspeed:forward",
        TravelDirection::Backward => "maxspeed:backward",
    };
    if let Some(v) = edge.tags.get(dir_key) {
        let kmh = parse_speed_tag(dir_key, v)?;
        return Ok(SpeedLimitRecord {
            value_kmh: kmh,
            cls: SpeedLimitClass::DirectionDependent,
            directional_value_kmh: Some(kmh),
        });
    }
    for (key, cls) in [
        ("maxspeed", SpeedLimitClass::Legal),
        ("maxspeed:advisory", SpeedLimitClass::Advisory),
        ("maxspeed:practical", SpeedLimitClass::Practical),
    ] {
        if let Some(v) = edge.tags.get(key) {
            return Ok(SpeedLimitRecord {
                value_kmh: parse_speed_tag(key, v)?,
                cls,
                directional_value_kmh: None,
            });
        }
    }
    match default_speed_limit(edge.highway_class) {
        Ok(kmh) => Ok(SpeedLimitRecord {
            value_kmh: kmh,
            cls: SpeedLimitClass::Default,
            directional_value_kmh: None,
        }),
        Err(_) => Err(Error::MissingLimit),
    }
}

/// Per-record elevation data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElevationRecord {
    pub raw_m: f64,
    pub smoothed_m: f64,
    /// Elevation change to the next record over their distance.
    pub gradient: f64,
}

/// Five-point moving average with shrinking windows at the series ends.
///
/// The half-width at index `i` of an `n`-element series is
/// `min(2, i+1, n-i)`, clipped to valid indices: boundary points average
/// two elements, their neighbors four, interior points the full five.
pub fn smooth_elevation<F: Scalar>(raw: &[F]) -> Vec<F> {
    let n = raw.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let w = 2.min(i + 1).min(n - i);
        let lo = i.saturating_sub(w);
        let hi = (i + w).min(n - 1);
        let mut sum = F::zero();
        for &v in &raw[lo..=hi] {
            sum += v;
        }
        out.push(sum / F::from_usize(hi - lo + 1).unwrap());
    }
    out
}

/// Pairwise gradients over a smoothed elevation series.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSeries<F: Scalar = f64> {
    /// One ratio per input record; the final record replicates its
    /// predecessor's value.
    pub ratios: Vec<F>,
    /// Coincident-coordinate pairs with unequal elevations, forced to 0.
    pub coincident_warnings: usize,
}

/// Gradient between consecutive records: zero when the elevations are
/// equal, otherwise elevation difference over geodesic distance.
pub fn gradient<F: Scalar>(points: &[(GeoPoint<F>, F)]) -> Result<GradientSeries<F>> {
    if points.len() < 2 {
        return Err(Error::SeriesTooShort {
            len: points.len(),
            min: 2,
        });
    }
    let mut ratios = Vec::with_capacity(points.len());
    let mut warnings = 0usize;
    for pair in points.windows(2) {
        let ((p1, h1), (p2, h2)) = (pair[0], pair[1]);
        let g = if h1 == h2 {
            F::zero()
        } else {
            let d = great_circle_distance(p1, p2).meters();
            if d == F::zero() {
                warnings += 1;
                F::zero()
            } else {
                (h2 - h1) / d
            }
        };
        ratios.push(g);
    }
    ratios.push(*ratios.last().unwrap());
    Ok(GradientSeries {
        ratios,
        coincident_warnings: warnings,
    })
}

/// Join radii for the infrastructure flags, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationRadii {
    pub intersection_m: f64,
    pub bus_stop_m: f64,
    pub focus_m: f64,
}

impl Default for AnnotationRadii {
    fn default() -> Self {
        Self {
            intersection_m: 5.0,
            bus_stop_m: 10.0,
            focus_m: 3.0,
        }
    }
}

/// Boolean infrastructure annotations of one record.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InfrastructureFlags {
    pub at_intersection: bool,
    pub at_bus_stop: bool,
    pub focus: BTreeSet<FocusPointKind>,
}

impl InfrastructureFlags {
    pub fn any(&self) -> bool {
        self.at_intersection || self.at_bus_stop || !self.focus.is_empty()
    }
}

/// A matched record joined with its annotations. Unmatched records carry
/// no annotations at all.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedRecord {
    pub matched: MatchedPoint,
    pub speed_limit: Option<SpeedLimitRecord>,
    pub elevation: Option<ElevationRecord>,
    pub flags: InfrastructureFlags,
}

/// Flags each matched/interpolated point whose snapped coordinate lies
/// within the join radius of an intersection, bus stop or focus point.
pub fn annotate_infrastructure(
    trace: &[MatchedPoint],
    network: &RoadNetwork,
    radii: &AnnotationRadii,
) -> Vec<AnnotatedRecord> {
    trace
        .iter()
        .map(|m| {
            let flags = if m.status == MatchStatus::Unmatched {
                InfrastructureFlags::default()
            } else {
                InfrastructureFlags {
                    at_intersection: network.has_intersection_near(m.snapped, radii.intersection_m),
                    at_bus_stop: network.has_bus_stop_near(m.snapped, radii.bus_stop_m),
                    focus: network
                        .focus_kinds_near(m.snapped, radii.focus_m)
                        .into_iter()
                        .collect(),
                }
            };
            AnnotatedRecord {
                matched: m.clone(),
                speed_limit: None,
                elevation: None,
                flags,
            }
        })
        .collect()
}

/// Batch elevation lookup. Implementations may be called with batches of
/// any size; service-backed providers should chunk requests at 512
/// coordinates and apply their own retry policy.
pub trait ElevationProvider: Send + Sync {
    /// One elevation in meters per input point, `None` where unresolved.
    fn elevations(&self, points: &[GeoPoint]) -> Vec<Option<f64>>;
}

/// Cache key: coordinates at 5-decimal fixed point (about 1.1 m), which
/// deduplicates the repeated coordinates of low-rate GPS polling.
pub fn elevation_cache_key(p: GeoPoint) -> (i64, i64) {
    (
        (p.lat() * 1e5).round() as i64,
        (p.lon() * 1e5).round() as i64,
    )
}

/// File-backed elevation cache, CSV with header `lat5,lon5,elevation_m`.
#[derive(Debug, Clone, Default)]
pub struct FileElevationCache {
    map: HashMap<(i64, i64), f64>,
}

impl FileElevationCache {
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut csv = csv::Reader::from_reader(reader);
        let headers = csv.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let (Some(lat_i), Some(lon_i), Some(elev_i)) =
            (find("lat5"), find("lon5"), find("elevation_m"))
        else {
            return Err(Error::Parse {
                line: 1,
                message: "elevation cache must have header lat5,lon5,elevation_m".into(),
            });
        };
        let mut map = HashMap::new();
        for (i, record) in csv.records().enumerate() {
            let record = record?;
            let get = |idx: usize, what: &str| -> Result<f64> {
                record
                    .get(idx)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse {
                        line: i + 2,
                        message: format!("invalid {what}"),
                    })
            };
            let lat = get(lat_i, "lat5")?;
            let lon = get(lon_i, "lon5")?;
            let elev = get(elev_i, "elevation_m")?;
            map.insert(
                ((lat * 1e5).round() as i64, (lon * 1e5).round() as i64),
                elev,
            );
        }
        Ok(Self { map })
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (f64, f64, f64)>) -> Self {
        let map = entries
            .into_iter()
            .map(|(lat, lon, elev)| (((lat * 1e5).round() as i64, (lon * 1e5).round() as i64), elev))
            .collect();
        Self { map }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl ElevationProvider for FileElevationCache {
    fn elevations(&self, points: &[GeoPoint]) -> Vec<Option<f64>> {
        points
            .iter()
            .map(|p| self.map.get(&elevation_cache_key(*p)).copied())
            .collect()
    }
}

/// Counters reported alongside an enriched trip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnrichReport {
    /// Matched/interpolated points submitted for elevation lookup.
    pub elevation_queried: usize,
    pub elevation_resolved: usize,
    pub gradient_warnings: usize,
    /// Speed-limit tags that failed to parse (limit left absent).
    pub tag_warnings: usize,
}

/// Full per-trip enrichment: infrastructure flags, direction-aware speed
/// limits, and elevation smoothing plus gradients over the snapped
/// coordinates.
pub fn enrich_trip(
    matched: &[MatchedPoint],
    network: &RoadNetwork,
    elevation: &dyn ElevationProvider,
    radii: &AnnotationRadii,
) -> (Vec<AnnotatedRecord>, EnrichReport) {
    let mut records = annotate_infrastructure(matched, network, radii);
    let mut report = EnrichReport::default();

    // speed limits from the containing segment's bearing and the trip's
    // direction of motion at each record
    for i in 0..records.len() {
        let m = &records[i].matched;
        let (Some(edge_id), Some(offset)) = (m.edge_id, m.offset_m) else {
            continue;
        };
        let edge = network.edge(edge_id);
        let dir = match (edge.bearing_at_offset(offset), trip_bearing_at(matched, i)) {
            (Ok(theta1), Some(theta2)) => travel_direction(theta1, theta2),
            // a trip that never moves has no bearing; forward by convention
            _ => TravelDirection::Forward,
        };
        match speed_limit_for(edge, dir) {
            Ok(rec) => records[i].speed_limit = Some(rec),
            Err(Error::TagParse { .. }) => report.tag_warnings += 1,
            Err(_) => {}
        }
    }

    // elevation over maximal runs of resolvable matched points
    let queried: Vec<usize> = (0..matched.len())
        .filter(|&i| matched[i].status != MatchStatus::Unmatched)
        .collect();
    let resolved = elevation.elevations(
        &queried
            .iter()
            .map(|&i| matched[i].snapped)
            .collect::<Vec<_>>(),
    );
    report.elevation_queried = queried.len();
    report.elevation_resolved = resolved.iter().flatten().count();

    let mut raw_by_index: HashMap<usize, f64> = HashMap::new();
    for (&i, r) in queried.iter().zip(&resolved) {
        if let Some(v) = r {
            raw_by_index.insert(i, *v);
        }
    }
    let mut run: Vec<usize> = Vec::new();
    let mut runs: Vec<Vec<usize>> = Vec::new();
    for i in 0..matched.len() {
        if raw_by_index.contains_key(&i) {
            run.push(i);
        } else if !run.is_empty() {
            runs.push(std::mem::take(&mut run));
        }
    }
    if !run.is_empty() {
        runs.push(run);
    }
    for run in runs {
        let raw: Vec<f64> = run.iter().map(|i| raw_by_index[i]).collect();
        let smoothed = smooth_elevation(&raw);
        let ratios = if run.len() >= 2 {
            let pts: Vec<(GeoPoint, f64)> = run
                .iter()
                .zip(&smoothed)
                .map(|(&i, &h)| (matched[i].snapped, h))
                .collect();
            let series = gradient(&pts).expect("run has at least two points");
            report.gradient_warnings += series.coincident_warnings;
            series.ratios
        } else {
            vec![0.0]
        };
        for ((&i, &raw_m), (&smoothed_m, &g)) in run
            .iter()
            .zip(&raw)
            .zip(smoothed.iter().zip(&ratios))
        {
            records[i].elevation = Some(ElevationRecord {
                raw_m,
                smoothed_m,
                gradient: g,
            });
        }
    }

    (records, report)
}

/// Bearing of the trip's motion at record `i`: toward the next distinct
/// snapped coordinate, falling back to the bearing from the previous one.
fn trip_bearing_at(matched: &[MatchedPoint], i: usize) -> Option<BearingRad> {
    let cur = matched[i].snapped;
    for next in matched[i + 1..]
        .iter()
        .filter(|m| m.status != MatchStatus::Unmatched)
    {
        if next.snapped != cur {
            return initial_bearing(cur, next.snapped).ok();
        }
    }
    for prev in matched[..i]
        .iter()
        .rev()
        .filter(|m| m.status != MatchStatus::Unmatched)
    {
        if prev.snapped != cur {
            return initial_bearing(prev.snapped, cur).ok();
        }
    }
    None
}
