//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bearing is undefined for a zero-length segment.
    #[error("degenerate segment: start and end coordinates are identical")]
    DegenerateSegment,

    /// Latitude outside [-90, 90] or non-finite coordinate.
    #[error("invalid coordinate: lat={lat}, lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },

    /// Malformed map extract or CSV input.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// The map extract contains no drivable ways.
    #[error("empty network: no drivable ways in extract")]
    EmptyNetwork,

    /// No default speed limit is defined for the highway class.
    #[error("no default speed limit for highway class `{class}`")]
    NoDefault { class: &'static str },

    /// A speed-limit tag value could not be parsed.
    #[error("unparsable speed-limit tag {key}=\"{value}\"")]
    TagParse { key: String, value: String },

    /// The edge carries no usable speed-limit information.
    #[error("no speed limit available for edge")]
    MissingLimit,

    /// Operation requires a non-empty trace.
    #[error("empty trace")]
    EmptyTrace,

    /// A configuration value is out of its documented range.
    #[error("invalid parameter: {name} must be positive")]
    InvalidParam { name: &'static str },

    /// Trip records are not sorted by timestamp.
    #[error("out-of-order timestamps in trip {trip} of vehicle {veh_id} at record {index}")]
    OutOfOrder {
        veh_id: u64,
        trip: u64,
        index: usize,
    },

    /// Elevation provider resolved too few points.
    #[error("elevation provider resolved {resolved} of {total} points (required fraction {required})")]
    ElevationCoverage {
        resolved: usize,
        total: usize,
        required: f64,
    },

    /// Trip has no time covered by the energy statistics.
    #[error("trip {trip} of vehicle {veh_id} has zero time covered by the statistics")]
    UncoveredTrip { veh_id: u64, trip: u64 },

    /// Paired series of mismatched length.
    #[error("shape mismatch: {left} vs {right} entries")]
    Shape { left: usize, right: usize },

    /// No samples qualified for the histogram.
    #[error("no qualifying samples for histogram")]
    EmptyHistogram,

    /// Series too short for the operation.
    #[error("series of {len} records is too short (need at least {min})")]
    SeriesTooShort { len: usize, min: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
