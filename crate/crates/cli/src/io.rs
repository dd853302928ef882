//! CSV input and output for the pipeline commands.
//!
//! The match and enrich stages preserve every input column and append
//! their own; absent optional values are empty strings. Output rows are
//! ordered by `(VehId, Trip)` with the original record order inside each
//! trip.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{Context, Result};
use csv::StringRecord;
use trace_enrich::enrich::AnnotatedRecord;
use trace_enrich::matching::{MatchStatus, MatchedPoint};
use trace_enrich::network::FocusPointKind;
use trace_enrich::{EnrichedSample, EnrichedTrip, Error, GeoPoint, TracePoint};

/// Columns appended by `match`.
pub const MATCH_COLUMNS: [&str; 5] = [
    "MatchedLatitude",
    "MatchedLongitude",
    "MatchType",
    "EdgeId",
    "OffsetM",
];

/// Columns appended by `enrich`.
pub const ENRICH_COLUMNS: [&str; 9] = [
    "SpeedLimit_kmh",
    "SpeedLimitDirectional_kmh",
    "SpeedLimitClass",
    "ElevationRaw_m",
    "ElevationSmoothed_m",
    "Gradient",
    "Intersection",
    "BusStop",
    "FocusPoints",
];

/// One trip's rows in file order, with the parsed trace.
#[derive(Debug, Clone)]
pub struct TripGroup {
    pub veh_id: u64,
    pub trip: u64,
    pub rows: Vec<StringRecord>,
    pub trace: Vec<TracePoint>,
}

/// A parsed trips file: original headers plus trips sorted by key.
#[derive(Debug, Clone)]
pub struct TripsFile {
    pub headers: StringRecord,
    pub trips: Vec<TripGroup>,
}

struct BaseColumns {
    day_num: usize,
    veh_id: usize,
    trip: usize,
    timestamp_ms: usize,
    latitude: usize,
    longitude: usize,
    speed: Option<usize>,
    energy: Option<usize>,
}

impl BaseColumns {
    fn resolve(headers: &StringRecord, energy_column: &str) -> Result<Self> {
        let find = |name: &str| headers.iter().position(|h| h == name);
        let required = |name: &str| {
            find(name).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing required column `{name}`"),
            })
        };
        Ok(Self {
            day_num: required("DayNum")?,
            veh_id: required("VehId")?,
            trip: required("Trip")?,
            timestamp_ms: required("Timestamp_ms")?,
            latitude: required("Latitude")?,
            longitude: required("Longitude")?,
            speed: find("VehicleSpeed_kmh"),
            energy: find(energy_column),
        })
    }

    fn parse(&self, record: &StringRecord, line: usize) -> Result<TracePoint> {
        let field = |idx: usize, name: &str| {
            record.get(idx).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field `{name}`"),
            })
        };
        let num = |idx: usize, name: &str| -> Result<f64> {
            let raw = field(idx, name)?;
            raw.parse().map_err(|_| {
                Error::Parse {
                    line,
                    message: format!("invalid {name} `{raw}`"),
                }
                .into()
            })
        };
        let opt_num = |idx: Option<usize>| -> Result<Option<f64>> {
            match idx.and_then(|i| record.get(i)) {
                None | Some("") => Ok(None),
                Some(raw) => raw.parse().map(Some).map_err(|_| {
                    Error::Parse {
                        line,
                        message: format!("invalid numeric value `{raw}`"),
                    }
                    .into()
                }),
            }
        };
        let lat = num(self.latitude, "Latitude")?;
        let lon = num(self.longitude, "Longitude")?;
        let position = GeoPoint::new(lat, lon).map_err(|_| Error::Parse {
            line,
            message: format!("coordinate out of range: {lat},{lon}"),
        })?;
        Ok(TracePoint {
            veh_id: num(self.veh_id, "VehId")? as u64,
            trip: num(self.trip, "Trip")? as u64,
            day_num: num(self.day_num, "DayNum")?,
            timestamp_ms: num(self.timestamp_ms, "Timestamp_ms")? as i64,
            position,
            speed_kmh: opt_num(self.speed)?,
            energy: opt_num(self.energy)?,
        })
    }
}

/// Reads an input trips file, validating key uniqueness and per-trip
/// timestamp order.
pub fn read_trips_csv(path: &Path, energy_column: &str) -> Result<TripsFile> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let columns = BaseColumns::resolve(&headers, energy_column)?;

    let mut groups: HashMap<(u64, u64), TripGroup> = HashMap::new();
    let mut order: Vec<(u64, u64)> = Vec::new();
    let mut seen: std::collections::HashSet<(u64, u64, i64)> = Default::default();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        let trace = columns
            .parse(&record, line)
            .with_context(|| format!("{}:{line}", path.display()))?;
        if !seen.insert((trace.veh_id, trace.trip, trace.timestamp_ms)) {
            return Err(Error::Parse {
                line,
                message: format!(
                    "duplicate key VehId={} Trip={} Timestamp_ms={}",
                    trace.veh_id, trace.trip, trace.timestamp_ms
                ),
            }
            .into());
        }
        let key = (trace.veh_id, trace.trip);
        let group = groups.entry(key).or_insert_with(|| {
            order.push(key);
            TripGroup {
                veh_id: key.0,
                trip: key.1,
                rows: Vec::new(),
                trace: Vec::new(),
            }
        });
        if let Some(last) = group.trace.last() {
            if trace.timestamp_ms < last.timestamp_ms {
                return Err(Error::OutOfOrder {
                    veh_id: trace.veh_id,
                    trip: trace.trip,
                    index: line,
                }
                .into());
            }
        }
        group.rows.push(record);
        group.trace.push(trace);
    }
    let mut trips: Vec<TripGroup> = groups.into_values().collect();
    trips.sort_by_key(|g| (g.veh_id, g.trip));
    Ok(TripsFile { headers, trips })
}

/// One matched trip: base trace plus the parsed match columns.
#[derive(Debug, Clone)]
pub struct MatchedTrip {
    pub veh_id: u64,
    pub trip: u64,
    pub rows: Vec<StringRecord>,
    pub trace: Vec<TracePoint>,
    pub matched: Vec<MatchedPoint>,
}

/// Reads a `match` output file back, reconstructing [`MatchedPoint`]s.
pub fn read_matched_csv(path: &Path, energy_column: &str) -> Result<(StringRecord, Vec<MatchedTrip>)> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let columns = BaseColumns::resolve(&headers, energy_column)?;
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing match column `{name}` (run `match` first)"),
        })
    };
    let (lat_i, lon_i) = (find("MatchedLatitude")?, find("MatchedLongitude")?);
    let (type_i, edge_i, offset_i) = (find("MatchType")?, find("EdgeId")?, find("OffsetM")?);

    let mut groups: HashMap<(u64, u64), MatchedTrip> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        let trace = columns
            .parse(&record, line)
            .with_context(|| format!("{}:{line}", path.display()))?;
        let parse_err = |message: String| Error::Parse { line, message };
        let status = match record.get(type_i).unwrap_or("") {
            "matched" => MatchStatus::Matched,
            "interpolated" => MatchStatus::Interpolated,
            "unmatched" => MatchStatus::Unmatched,
            other => return Err(parse_err(format!("invalid MatchType `{other}`")).into()),
        };
        let matched = if status == MatchStatus::Unmatched {
            MatchedPoint {
                source_index: 0,
                snapped: trace.position,
                status,
                edge_id: None,
                offset_m: None,
            }
        } else {
            let get_f64 = |i: usize, name: &str| -> Result<f64> {
                let raw = record.get(i).unwrap_or("");
                raw.parse()
                    .map_err(|_| parse_err(format!("invalid {name} `{raw}`")).into())
            };
            let lat = get_f64(lat_i, "MatchedLatitude")?;
            let lon = get_f64(lon_i, "MatchedLongitude")?;
            let edge: u32 = record
                .get(edge_i)
                .unwrap_or("")
                .parse()
                .map_err(|_| parse_err("invalid EdgeId".into()))?;
            MatchedPoint {
                source_index: 0,
                snapped: GeoPoint::new(lat, lon)
                    .map_err(|_| parse_err(format!("matched coordinate out of range: {lat},{lon}")))?,
                status,
                edge_id: Some(trace_enrich::EdgeId(edge)),
                offset_m: Some(get_f64(offset_i, "OffsetM")?),
            }
        };
        let key = (trace.veh_id, trace.trip);
        let group = groups.entry(key).or_insert_with(|| MatchedTrip {
            veh_id: key.0,
            trip: key.1,
            rows: Vec::new(),
            trace: Vec::new(),
            matched: Vec::new(),
        });
        let mut matched = matched;
        matched.source_index = group.rows.len();
        group.rows.push(record);
        group.trace.push(trace);
        group.matched.push(matched);
    }
    let mut trips: Vec<MatchedTrip> = groups.into_values().collect();
    trips.sort_by_key(|g| (g.veh_id, g.trip));
    Ok((headers, trips))
}

/// Reads an `enrich` output file into analysis samples grouped by trip.
pub fn read_enriched_csv(path: &Path, energy_column: &str) -> Result<Vec<EnrichedTrip>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let columns = BaseColumns::resolve(&headers, energy_column)?;
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing enrich column `{name}` (run `enrich` first)"),
        })
    };
    let limit_i = find("SpeedLimit_kmh")?;
    let directional_i = find("SpeedLimitDirectional_kmh")?;
    let gradient_i = find("Gradient")?;
    let intersection_i = find("Intersection")?;
    let bus_i = find("BusStop")?;
    let focus_i = find("FocusPoints")?;

    let mut groups: HashMap<(u64, u64), EnrichedTrip> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        let trace = columns
            .parse(&record, line)
            .with_context(|| format!("{}:{line}", path.display()))?;
        let opt = |i: usize| -> Option<f64> {
            match record.get(i) {
                None | Some("") => None,
                Some(raw) => raw.parse().ok(),
            }
        };
        let flag = |i: usize| record.get(i) == Some("1");
        let sample = EnrichedSample {
            veh_id: trace.veh_id,
            trip: trace.trip,
            day_num: trace.day_num,
            timestamp_ms: trace.timestamp_ms,
            speed_kmh: trace.speed_kmh,
            energy: trace.energy,
            limit_kmh: opt(directional_i).or_else(|| opt(limit_i)),
            gradient: opt(gradient_i),
            at_intersection: flag(intersection_i),
            at_bus_stop: flag(bus_i),
            at_focus_point: !matches!(record.get(focus_i), None | Some("")),
        };
        let key = (trace.veh_id, trace.trip);
        groups
            .entry(key)
            .or_insert_with(|| EnrichedTrip::new(key.0, key.1, Vec::new()))
            .samples
            .push(sample);
    }
    let mut trips: Vec<EnrichedTrip> = groups.into_values().collect();
    trips.sort_by_key(|g| (g.veh_id, g.trip));
    Ok(trips)
}

/// Fields appended by `match` for one record.
pub fn match_fields(m: &MatchedPoint) -> [String; 5] {
    match m.status {
        MatchStatus::Unmatched => [
            String::new(),
            String::new(),
            m.status.as_str().to_string(),
            String::new(),
            String::new(),
        ],
        _ => [
            format!("{}", m.snapped.lat()),
            format!("{}", m.snapped.lon()),
            m.status.as_str().to_string(),
            format!("{}", m.edge_id.expect("matched point has edge")),
            format!("{}", m.offset_m.expect("matched point has offset")),
        ],
    }
}

/// Fields appended by `enrich` for one record.
pub fn enrich_fields(rec: &AnnotatedRecord) -> [String; 9] {
    if rec.matched.status == MatchStatus::Unmatched {
        return Default::default();
    }
    let (limit, directional, class) = match rec.speed_limit {
        Some(sl) => (
            format!("{}", sl.value_kmh),
            sl.directional_value_kmh
                .map(|v| format!("{v}"))
                .unwrap_or_default(),
            format!("{}", sl.cls.code()),
        ),
        None => Default::default(),
    };
    let (raw, smoothed, gradient) = match rec.elevation {
        Some(e) => (
            format!("{}", e.raw_m),
            format!("{}", e.smoothed_m),
            format!("{}", e.gradient),
        ),
        None => Default::default(),
    };
    let focus = rec
        .flags
        .focus
        .iter()
        .map(FocusPointKind::name)
        .collect::<Vec<_>>()
        .join(";");
    [
        limit,
        directional,
        class,
        raw,
        smoothed,
        gradient,
        if rec.flags.at_intersection { "1" } else { "0" }.to_string(),
        if rec.flags.at_bus_stop { "1" } else { "0" }.to_string(),
        focus,
    ]
}

/// Writes a CSV file with the given header and rows.
pub fn write_csv<I, R>(path: &Path, headers: I, rows: R) -> Result<()>
where
    I: IntoIterator,
    I::Item: AsRef<str>,
    R: IntoIterator<Item = Vec<String>>,
{
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(headers.into_iter().map(|h| h.as_ref().to_string()))?;
    for row in rows {
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
