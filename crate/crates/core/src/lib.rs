//! Map matching and feature enrichment for vehicle GPS trip records.
//!
//! The crate snaps noisy trip traces onto a road network with an HMM
//! matcher, annotates each record with direction-aware speed limits,
//! elevation and gradient, intersections, bus stops and focus points,
//! and runs energy and speed-distribution analyses over the enriched
//! records.

pub mod analysis;
pub mod enrich;
pub mod error;
pub mod geo;
pub mod index;
pub mod matching;
pub mod network;
mod osm;
pub mod scalar;
pub mod trace;

pub use analysis::{
    build_stats, estimate_trip_energy, extract_learning_segments, free_flow_histogram, rmse,
    speed_time_heatmap, EnrichedSample, EnrichedTrip, LearningSegment, LimitKey, SpeedEnergyStats,
    SpeedHeatmap, SpeedHistogram, TripEnergyEstimate,
};
pub use enrich::{
    annotate_infrastructure, enrich_trip, gradient, smooth_elevation, speed_limit_for,
    travel_direction, AnnotatedRecord, AnnotationRadii, ElevationProvider, ElevationRecord,
    EnrichReport, FileElevationCache, InfrastructureFlags, SpeedLimitRecord, TravelDirection,
};
pub use error::{Error, Result};
pub use geo::{great_circle_distance, initial_bearing, EARTH_RADIUS_M};
pub use matching::{
    emission_log_prob, match_rate, route_distance, transition_log_prob, viterbi_match,
    viterbi_solve, HmmParams, MatchStatus, MatchedPoint,
};
pub use network::{
    default_speed_limit, load_bus_stops_csv, BoundingBox, EdgeCandidate, EdgeId, FocusPointKind,
    HighwayClass, RoadEdge, RoadNetwork, SpeedLimitClass, MPH_TO_KMH,
};
pub use scalar::Scalar;
pub use trace::TracePoint;

/// Double-precision aliases used by the pipeline.
pub type GeoPoint = geo::GeoPoint<f64>;
pub type BearingRad = geo::BearingRad<f64>;
pub type MetersDistance = geo::MetersDistance<f64>;
pub type SpatialIndex = index::SpatialIndex<f64>;

/// Single-precision variants of the geometry primitives.
pub type GeoPoint32 = geo::GeoPoint<f32>;
pub type BearingRad32 = geo::BearingRad<f32>;
pub type MetersDistance32 = geo::MetersDistance<f32>;
pub type SpatialIndex32 = index::SpatialIndex<f32>;
