//! Raw trip trace records.

use crate::geo::GeoPoint;

/// One raw trip record: trip identity, timestamp, raw GPS fix and the
/// optional per-record signals carried through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub veh_id: u64,
    pub trip: u64,
    /// Fractional day number; the fractional part encodes time of day.
    pub day_num: f64,
    /// Milliseconds since trip start.
    pub timestamp_ms: i64,
    pub position: GeoPoint,
    pub speed_kmh: Option<f64>,
    /// Energy consumed over this record's interval, in the corpus's
    /// energy unit. The pipeline never interprets the unit.
    pub energy: Option<f64>,
}

impl TracePoint {
    pub fn new(veh_id: u64, trip: u64, timestamp_ms: i64, position: GeoPoint) -> Self {
        Self {
            veh_id,
            trip,
            day_num: 0.0,
            timestamp_ms,
            position,
            speed_kmh: None,
            energy: None,
        }
    }
}
