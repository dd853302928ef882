//! Analyses over enriched records: statistical trip-energy estimation,
//! speed distributions with time-of-day contours, and learning-segment
//! feature extraction.
//!
//! All aggregations process trips in canonical `(veh_id, trip)` order, so
//! outputs are independent of input permutation and worker count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::enrich::AnnotatedRecord;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trace::TracePoint;

/// Canonical grouping key for a speed limit: centi-km/h. Two limits
/// closer than 0.01 km/h fall into the same group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LimitKey(i64);

impl LimitKey {
    pub fn from_kmh(kmh: f64) -> Self {
        Self((kmh * 100.0).round() as i64)
    }

    pub fn kmh(&self) -> f64 {
        self.0 as f64 / 100.0
    }

    /// Canonical two-decimal label used in exports.
    pub fn label(&self) -> String {
        format!("{:.2}", self.kmh())
    }

    pub fn parse_label(s: &str) -> Option<Self> {
        s.parse::<f64>().ok().map(Self::from_kmh)
    }
}

/// One enriched record as consumed by the analyses.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedSample {
    pub veh_id: u64,
    pub trip: u64,
    /// Trip-start day number; the fractional part is the start time of day.
    pub day_num: f64,
    /// Milliseconds since trip start.
    pub timestamp_ms: i64,
    pub speed_kmh: Option<f64>,
    /// Energy consumed over this record's interval (up to the next
    /// record); the trailing record's value has no interval and is unused.
    pub energy: Option<f64>,
    /// Resolved speed limit: the directional value when present.
    pub limit_kmh: Option<f64>,
    pub gradient: Option<f64>,
    pub at_intersection: bool,
    pub at_bus_stop: bool,
    pub at_focus_point: bool,
}

impl EnrichedSample {
    /// Builds a sample from a raw record and its annotations.
    pub fn from_annotated(raw: &TracePoint, rec: &AnnotatedRecord) -> Self {
        let limit_kmh = rec
            .speed_limit
            .map(|sl| sl.directional_value_kmh.unwrap_or(sl.value_kmh));
        Self {
            veh_id: raw.veh_id,
            trip: raw.trip,
            day_num: raw.day_num,
            timestamp_ms: raw.timestamp_ms,
            speed_kmh: raw.speed_kmh,
            energy: raw.energy,
            limit_kmh,
            gradient: rec.elevation.map(|e| e.gradient),
            at_intersection: rec.flags.at_intersection,
            at_bus_stop: rec.flags.at_bus_stop,
            at_focus_point: !rec.flags.focus.is_empty(),
        }
    }

    pub fn limit_key(&self) -> Option<LimitKey> {
        self.limit_kmh.map(LimitKey::from_kmh)
    }

    /// Any decelerating-infrastructure flag set.
    pub fn flagged(&self) -> bool {
        self.at_intersection || self.at_bus_stop || self.at_focus_point
    }

    /// Hours in `[0, 24)` derived from the day number plus the trip
    /// timestamp offset.
    pub fn time_of_day_h(&self) -> f64 {
        let day = self.day_num + self.timestamp_ms as f64 / 86_400_000.0;
        day.rem_euclid(1.0) * 24.0
    }
}

/// One trip's samples in timestamp order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedTrip {
    pub veh_id: u64,
    pub trip: u64,
    pub samples: Vec<EnrichedSample>,
}

impl EnrichedTrip {
    pub fn new(veh_id: u64, trip: u64, samples: Vec<EnrichedSample>) -> Self {
        Self {
            veh_id,
            trip,
            samples,
        }
    }

    /// Interval records: every sample except the trailing one, paired
    /// with its duration in seconds. Non-positive intervals yield `None`.
    fn intervals(&self) -> impl Iterator<Item = (&EnrichedSample, Option<f64>)> {
        self.samples.iter().enumerate().map(|(i, s)| {
            let dt = self.samples.get(i + 1).and_then(|next| {
                let dt = (next.timestamp_ms - s.timestamp_ms) as f64 / 1000.0;
                (dt > 0.0).then_some(dt)
            });
            (s, dt)
        })
    }
}

fn sorted_refs(trips: &[EnrichedTrip]) -> Vec<&EnrichedTrip> {
    let mut refs: Vec<&EnrichedTrip> = trips.iter().collect();
    refs.sort_by_key(|t| (t.veh_id, t.trip));
    refs
}

/// One speed bin of the per-limit energy statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedBin {
    /// Lower edge of the bin, km/h.
    pub bin: f64,
    pub count: u64,
    /// Mean energy per second over the bin's records.
    pub mean: f64,
}

/// Per-speed-limit histograms of per-second energy over speed bins.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedEnergyStats {
    pub bin_width_kmh: f64,
    groups: BTreeMap<LimitKey, Vec<SpeedBin>>,
}

impl SpeedEnergyStats {
    pub fn groups(&self) -> &BTreeMap<LimitKey, Vec<SpeedBin>> {
        &self.groups
    }

    /// Count-weighted mean energy rate for one limit:
    /// `sum(count * mean) / sum(count)`.
    pub fn weighted_mean(&self, limit: LimitKey) -> Option<f64> {
        let bins = self.groups.get(&limit)?;
        let total: u64 = bins.iter().map(|b| b.count).sum();
        if total == 0 {
            return None;
        }
        let sum: f64 = bins.iter().map(|b| b.count as f64 * b.mean).sum();
        Some(sum / total as f64)
    }

    /// Serializes as `{limit -> [{bin, count, mean}]}`.
    pub fn to_json(&self) -> Result<String> {
        let doc: BTreeMap<String, &Vec<SpeedBin>> = self
            .groups
            .iter()
            .map(|(k, v)| (k.label(), v))
            .collect();
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let doc: BTreeMap<String, Vec<SpeedBin>> = serde_json::from_str(json)?;
        let mut groups = BTreeMap::new();
        for (label, bins) in doc {
            let key = LimitKey::parse_label(&label).ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("invalid limit key `{label}`"),
            })?;
            groups.insert(key, bins);
        }
        // bin width is implied by the bins and unused after import
        Ok(Self {
            bin_width_kmh: 0.0,
            groups,
        })
    }
}

/// Records skipped while building statistics, by cause.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub missing_energy: usize,
    pub missing_limit: usize,
    pub missing_speed: usize,
    /// Trailing records and non-positive intervals.
    pub missing_interval: usize,
}

impl SkipReport {
    pub fn total(&self) -> usize {
        self.missing_energy + self.missing_limit + self.missing_speed + self.missing_interval
    }
}

/// Bins per-second energy rates by speed within each speed-limit group.
pub fn build_stats(
    trips: &[EnrichedTrip],
    bin_width_kmh: f64,
) -> Result<(SpeedEnergyStats, SkipReport)> {
    if !(bin_width_kmh > 0.0) {
        return Err(Error::InvalidParam {
            name: "bin_width_kmh",
        });
    }
    let mut skip = SkipReport::default();
    // (limit, bin index) -> (count, rate sum)
    let mut acc: BTreeMap<(LimitKey, i64), (u64, f64)> = BTreeMap::new();
    for trip in sorted_refs(trips) {
        for (s, dt) in trip.intervals() {
            let Some(dt) = dt else {
                skip.missing_interval += 1;
                continue;
            };
            let Some(energy) = s.energy else {
                skip.missing_energy += 1;
                continue;
            };
            let Some(limit) = s.limit_key() else {
                skip.missing_limit += 1;
                continue;
            };
            let Some(speed) = s.speed_kmh else {
                skip.missing_speed += 1;
                continue;
            };
            let bin = (speed / bin_width_kmh).floor() as i64;
            let entry = acc.entry((limit, bin)).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += energy / dt;
        }
    }
    let mut groups: BTreeMap<LimitKey, Vec<SpeedBin>> = BTreeMap::new();
    for ((limit, bin), (count, sum)) in acc {
        groups.entry(limit).or_default().push(SpeedBin {
            bin: bin as f64 * bin_width_kmh,
            count,
            mean: sum / count as f64,
        });
    }
    Ok((
        SpeedEnergyStats {
            bin_width_kmh,
            groups,
        },
        skip,
    ))
}

/// Energy estimate for one trip from the per-limit statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TripEnergyEstimate {
    pub veh_id: u64,
    pub trip: u64,
    pub estimated: f64,
    /// Sum of interval energies, when any record carried one.
    pub actual: Option<f64>,
    /// Seconds spent under each resolved speed limit.
    pub breakdown_s: BTreeMap<LimitKey, f64>,
    /// Seconds under limits absent from the statistics (reported, never
    /// silently treated as zero-energy time).
    pub uncovered_s: f64,
    /// Seconds on records without a resolved limit.
    pub unattributed_s: f64,
}

/// Estimates trip energy as the per-limit time breakdown weighted by the
/// statistics' mean rates.
pub fn estimate_trip_energy(
    trip: &EnrichedTrip,
    stats: &SpeedEnergyStats,
) -> Result<TripEnergyEstimate> {
    let mut breakdown: BTreeMap<LimitKey, f64> = BTreeMap::new();
    let mut unattributed = 0.0;
    let mut actual_sum = 0.0;
    let mut actual_seen = false;
    for (s, dt) in trip.intervals() {
        let Some(dt) = dt else { continue };
        if let Some(e) = s.energy {
            actual_sum += e;
            actual_seen = true;
        }
        match s.limit_key() {
            Some(k) => *breakdown.entry(k).or_insert(0.0) += dt,
            None => unattributed += dt,
        }
    }
    let mut estimated = 0.0;
    let mut covered_s = 0.0;
    let mut uncovered_s = 0.0;
    for (k, &secs) in &breakdown {
        match stats.weighted_mean(*k) {
            Some(rate) => {
                estimated += secs * rate;
                covered_s += secs;
            }
            None => uncovered_s += secs,
        }
    }
    if covered_s == 0.0 {
        return Err(Error::UncoveredTrip {
            veh_id: trip.veh_id,
            trip: trip.trip,
        });
    }
    Ok(TripEnergyEstimate {
        veh_id: trip.veh_id,
        trip: trip.trip,
        estimated,
        actual: actual_seen.then_some(actual_sum),
        breakdown_s: breakdown,
        uncovered_s,
        unattributed_s: unattributed,
    })
}

/// Root mean squared error of two paired series.
pub fn rmse<F: Scalar>(actual: &[F], estimated: &[F]) -> Result<F> {
    if actual.len() != estimated.len() || actual.is_empty() {
        return Err(Error::Shape {
            left: actual.len(),
            right: estimated.len(),
        });
    }
    let mut sum = F::zero();
    for (&a, &e) in actual.iter().zip(estimated) {
        let d = a - e;
        sum += d * d;
    }
    Ok((sum / F::from_usize(actual.len()).unwrap()).sqrt())
}

/// Speed histogram of free-flow records under one limit.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedHistogram {
    pub bin_width_kmh: f64,
    /// (lower edge, count), ascending; only non-empty bins are stored.
    pub bins: Vec<(f64, u64)>,
    pub total: u64,
}

impl SpeedHistogram {
    /// Fraction of samples in bins entirely below `kmh` (exact when the
    /// threshold is a bin boundary).
    pub fn fraction_below(&self, kmh: f64) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let below: u64 = self
            .bins
            .iter()
            .filter(|(lo, _)| lo + self.bin_width_kmh <= kmh)
            .map(|(_, c)| *c)
            .sum();
        below as f64 / self.total as f64
    }
}

/// Histogram of speeds under `limit_kmh`, excluding every record with an
/// intersection, bus-stop or focus-point flag.
pub fn free_flow_histogram(
    samples: &[EnrichedSample],
    limit_kmh: f64,
    bin_width_kmh: f64,
) -> Result<SpeedHistogram> {
    if !(bin_width_kmh > 0.0) {
        return Err(Error::InvalidParam {
            name: "bin_width_kmh",
        });
    }
    let key = LimitKey::from_kmh(limit_kmh);
    let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
    let mut total = 0u64;
    for s in samples {
        if s.limit_key() != Some(key) || s.flagged() {
            continue;
        }
        let Some(speed) = s.speed_kmh else { continue };
        *counts.entry((speed / bin_width_kmh).floor() as i64).or_insert(0) += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptyHistogram);
    }
    Ok(SpeedHistogram {
        bin_width_kmh,
        bins: counts
            .into_iter()
            .map(|(b, c)| (b as f64 * bin_width_kmh, c))
            .collect(),
        total,
    })
}

/// Count matrix over time-of-day and speed bins with lowest-population
/// contours.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedHeatmap {
    pub time_bin_min: f64,
    pub speed_bin_kmh: f64,
    /// `counts[time_bin][speed_bin]`.
    pub counts: Vec<Vec<u64>>,
    /// Per time bin: speeds below which the lowest 10/20/30 % of samples
    /// fall; absent for empty columns.
    pub contours: Vec<Option<[f64; 3]>>,
}

impl SpeedHeatmap {
    pub fn time_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn column_total(&self, time_bin: usize) -> u64 {
        self.counts[time_bin].iter().sum()
    }
}

/// Contour levels as fractions of a column's population.
pub const CONTOUR_LEVELS: [f64; 3] = [0.10, 0.20, 0.30];

/// Builds the speed-over-time-of-day heatmap for records under one limit.
pub fn speed_time_heatmap(
    samples: &[EnrichedSample],
    limit_kmh: f64,
    time_bin_min: f64,
    speed_bin_kmh: f64,
) -> Result<SpeedHeatmap> {
    if !(time_bin_min > 0.0) {
        return Err(Error::InvalidParam {
            name: "time_bin_min",
        });
    }
    if !(speed_bin_kmh > 0.0) {
        return Err(Error::InvalidParam {
            name: "speed_bin_kmh",
        });
    }
    let key = LimitKey::from_kmh(limit_kmh);
    let time_bins = (24.0 * 60.0 / time_bin_min).ceil() as usize;
    let mut speed_bins = 0usize;
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for s in samples {
        if s.limit_key() != Some(key) {
            continue;
        }
        let Some(speed) = s.speed_kmh else { continue };
        let tb = ((s.time_of_day_h() * 60.0 / time_bin_min) as usize).min(time_bins - 1);
        let sb = (speed / speed_bin_kmh).floor().max(0.0) as usize;
        speed_bins = speed_bins.max(sb + 1);
        cells.push((tb, sb));
    }
    let mut counts = vec![vec![0u64; speed_bins]; time_bins];
    for (tb, sb) in cells {
        counts[tb][sb] += 1;
    }
    let contours = counts
        .iter()
        .map(|col| column_contours(col, speed_bin_kmh))
        .collect();
    Ok(SpeedHeatmap {
        time_bin_min,
        speed_bin_kmh,
        counts,
        contours,
    })
}

/// Lowest-k% boundaries of one column from its empirical CDF: the
/// smallest bin edge whose cumulative count reaches each level.
fn column_contours(col: &[u64], speed_bin_kmh: f64) -> Option<[f64; 3]> {
    let total: u64 = col.iter().sum();
    if total == 0 {
        return None;
    }
    let mut out = [0.0; 3];
    for (li, level) in CONTOUR_LEVELS.iter().enumerate() {
        let target = level * total as f64;
        let mut cum = 0u64;
        for (sb, &c) in col.iter().enumerate() {
            cum += c;
            if cum as f64 >= target {
                out[li] = sb as f64 * speed_bin_kmh;
                break;
            }
        }
    }
    Some(out)
}

/// One feature row of a learning segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow {
    pub time_of_day_h: f64,
    pub speed_limit_kmh: f64,
    pub gradient: f64,
    pub at_intersection: bool,
    pub at_bus_stop: bool,
    pub at_focus_point: bool,
    pub approaching_within_horizon: bool,
    pub departing_within_horizon: bool,
}

/// A fixed-length run of consecutive enriched records with its
/// median-speed target.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningSegment {
    pub segment_id: u64,
    pub veh_id: u64,
    pub trip: u64,
    pub rows: Vec<FeatureRow>,
    pub target_median_speed_kmh: f64,
}

/// Extraction output plus the windows dropped for missing features.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentExtraction {
    pub segments: Vec<LearningSegment>,
    pub dropped_windows: usize,
}

/// Cuts each trip into non-overlapping windows of `segment_len` records
/// (tail remainder dropped) and derives the approach/departure flags over
/// a `horizon_s` time window within the trip.
///
/// Windows containing a record with no resolved speed limit, or with no
/// speed samples at all, are dropped and counted. Missing gradients are
/// written as zero.
pub fn extract_learning_segments(
    trips: &[EnrichedTrip],
    segment_len: usize,
    horizon_s: f64,
) -> Result<SegmentExtraction> {
    if segment_len == 0 {
        return Err(Error::InvalidParam { name: "segment_len" });
    }
    if !(horizon_s >= 0.0) {
        return Err(Error::InvalidParam { name: "horizon_s" });
    }
    let horizon_ms = (horizon_s * 1000.0).round() as i64;
    let mut segments = Vec::new();
    let mut dropped = 0usize;
    let mut next_id = 0u64;
    for trip in sorted_refs(trips) {
        let n = trip.samples.len();
        let flags: Vec<bool> = trip.samples.iter().map(EnrichedSample::flagged).collect();
        let mut approaching = vec![false; n];
        let mut departing = vec![false; n];
        for i in 0..n {
            let t = trip.samples[i].timestamp_ms;
            for j in i + 1..n {
                if trip.samples[j].timestamp_ms - t > horizon_ms {
                    break;
                }
                if flags[j] {
                    approaching[i] = true;
                    break;
                }
            }
            for j in (0..i).rev() {
                if t - trip.samples[j].timestamp_ms > horizon_ms {
                    break;
                }
                if flags[j] {
                    departing[i] = true;
                    break;
                }
            }
        }
        for window in 0..n / segment_len {
            let lo = window * segment_len;
            let hi = lo + segment_len;
            let samples = &trip.samples[lo..hi];
            if samples.iter().any(|s| s.limit_kmh.is_none()) {
                dropped += 1;
                continue;
            }
            let mut speeds: Vec<f64> = samples.iter().filter_map(|s| s.speed_kmh).collect();
            if speeds.is_empty() {
                dropped += 1;
                continue;
            }
            speeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mid = speeds.len() / 2;
            let target = if speeds.len() % 2 == 1 {
                speeds[mid]
            } else {
                (speeds[mid - 1] + speeds[mid]) / 2.0
            };
            let rows: Vec<FeatureRow> = (lo..hi)
                .map(|i| {
                    let s = &trip.samples[i];
                    FeatureRow {
                        time_of_day_h: s.time_of_day_h(),
                        speed_limit_kmh: s.limit_kmh.unwrap(),
                        gradient: s.gradient.unwrap_or(0.0),
                        at_intersection: s.at_intersection,
                        at_bus_stop: s.at_bus_stop,
                        at_focus_point: s.at_focus_point,
                        approaching_within_horizon: approaching[i],
                        departing_within_horizon: departing[i],
                    }
                })
                .collect();
            segments.push(LearningSegment {
                segment_id: next_id,
                veh_id: trip.veh_id,
                trip: trip.trip,
                rows,
                target_median_speed_kmh: target,
            });
            next_id += 1;
        }
    }
    Ok(SegmentExtraction {
        segments,
        dropped_windows: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(ts_s: i64, speed: f64, energy: f64, limit: f64) -> EnrichedSample {
        EnrichedSample {
            veh_id: 1,
            trip: 1,
            day_num: 10.5,
            timestamp_ms: ts_s * 1000,
            speed_kmh: Some(speed),
            energy: Some(energy),
            limit_kmh: Some(limit),
            gradient: Some(0.0),
            at_intersection: false,
            at_bus_stop: false,
            at_focus_point: false,
        }
    }

    fn trip_of(samples: Vec<EnrichedSample>) -> EnrichedTrip {
        let (veh_id, trip) = (samples[0].veh_id, samples[0].trip);
        EnrichedTrip::new(veh_id, trip, samples)
    }

    #[test]
    fn stats_single_bin_weighted_mean() {
        // 1 Hz records at 30 km/h burning 2.0 per second
        let samples: Vec<EnrichedSample> =
            (0..11).map(|i| sample(i, 30.0, 2.0, 48.0)).collect();
        let (stats, skip) = build_stats(&[trip_of(samples)], 1.0).unwrap();
        assert_eq!(skip.total(), 1); // trailing record has no interval
        let key = LimitKey::from_kmh(48.0);
        assert_eq!(stats.groups()[&key].len(), 1);
        assert_abs_diff_eq!(stats.weighted_mean(key).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn stats_weighted_mean_over_two_bins() {
        // three records at rate 1.0 in one bin, one at 5.0 in another
        let mut samples = vec![
            sample(0, 30.0, 1.0, 48.0),
            sample(1, 30.0, 1.0, 48.0),
            sample(2, 30.0, 1.0, 48.0),
            sample(3, 40.0, 5.0, 48.0),
        ];
        samples.push(sample(4, 40.0, 0.0, 48.0)); // trailing, skipped
        let (stats, _) = build_stats(&[trip_of(samples)], 1.0).unwrap();
        let key = LimitKey::from_kmh(48.0);
        assert_abs_diff_eq!(stats.weighted_mean(key).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn stats_reproduce_binned_rate_expectation() {
        // rate depends only on the integer speed: rate = speed / 10
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut samples = Vec::new();
        for i in 0..2000 {
            let speed = rng.gen_range(20..60) as f64;
            samples.push(sample(i, speed, speed / 10.0, 48.0));
        }
        let n = (samples.len() - 1) as f64; // intervals
        let mut freq: BTreeMap<i64, u64> = BTreeMap::new();
        for s in &samples[..samples.len() - 1] {
            *freq.entry(s.speed_kmh.unwrap() as i64).or_insert(0) += 1;
        }
        let expected: f64 = freq
            .iter()
            .map(|(bin, c)| (*c as f64 / n) * (*bin as f64 / 10.0))
            .sum();
        let (stats, _) = build_stats(&[trip_of(samples)], 1.0).unwrap();
        let got = stats.weighted_mean(LimitKey::from_kmh(48.0)).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-9);
    }

    #[test]
    fn stats_skip_incomplete_records() {
        let mut a = sample(0, 30.0, 1.0, 48.0);
        a.energy = None;
        let mut b = sample(1, 30.0, 1.0, 48.0);
        b.limit_kmh = None;
        let c = sample(2, 30.0, 1.0, 48.0);
        let (stats, skip) = build_stats(&[trip_of(vec![a, b, c])], 1.0).unwrap();
        assert_eq!(skip.missing_energy, 1);
        assert_eq!(skip.missing_limit, 1);
        assert_eq!(skip.missing_interval, 1);
        assert!(stats.groups().is_empty());
    }

    #[test]
    fn estimate_simple_trip() {
        let train: Vec<EnrichedSample> = (0..61).map(|i| sample(i, 30.0, 2.0, 48.0)).collect();
        let (stats, _) = build_stats(&[trip_of(train)], 1.0).unwrap();
        let test: Vec<EnrichedSample> = (0..61).map(|i| sample(i, 33.0, 0.0, 48.0)).collect();
        let est = estimate_trip_energy(&trip_of(test), &stats).unwrap();
        assert_abs_diff_eq!(est.estimated, 120.0, epsilon = 1e-9);
        assert_eq!(est.breakdown_s[&LimitKey::from_kmh(48.0)], 60.0);
        assert_eq!(est.uncovered_s, 0.0);
    }

    #[test]
    fn estimate_reproduces_training_total() {
        // mixed limits, varying speeds, uniform 1 s intervals
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut trips = Vec::new();
        for t in 0..20u64 {
            let limit = if t % 2 == 0 { 48.0 } else { 88.51 };
            let samples: Vec<EnrichedSample> = (0..200)
                .map(|i| {
                    let mut s = sample(i, rng.gen_range(10..90) as f64, rng.gen::<f64>() * 3.0, limit);
                    s.trip = t;
                    s
                })
                .collect();
            trips.push(trip_of(samples));
        }
        let (stats, _) = build_stats(&trips, 1.0).unwrap();
        let total_actual: f64 = trips
            .iter()
            .map(|t| {
                t.samples[..t.samples.len() - 1]
                    .iter()
                    .map(|s| s.energy.unwrap())
                    .sum::<f64>()
            })
            .sum();
        let total_estimated: f64 = trips
            .iter()
            .map(|t| estimate_trip_energy(t, &stats).unwrap().estimated)
            .sum();
        let rel = (total_estimated - total_actual).abs() / total_actual;
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn estimate_uncovered_trip_errors() {
        let (stats, _) = build_stats(&[], 1.0).unwrap();
        let trip = trip_of((0..5).map(|i| sample(i, 30.0, 1.0, 48.0)).collect());
        assert!(matches!(
            estimate_trip_energy(&trip, &stats),
            Err(Error::UncoveredTrip { .. })
        ));
    }

    #[test]
    fn uncovered_limits_are_reported_not_zeroed() {
        let train: Vec<EnrichedSample> = (0..10).map(|i| sample(i, 30.0, 2.0, 48.0)).collect();
        let (stats, _) = build_stats(&[trip_of(train)], 1.0).unwrap();
        let mut test: Vec<EnrichedSample> = (0..6).map(|i| sample(i, 30.0, 0.0, 48.0)).collect();
        test.extend((6..11).map(|i| sample(i, 80.0, 0.0, 105.0)));
        let est = estimate_trip_energy(&trip_of(test), &stats).unwrap();
        // four intervals lie under the unseen 105 km/h limit (the trailing
        // record has none)
        assert_abs_diff_eq!(est.uncovered_s, 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(est.breakdown_s[&LimitKey::from_kmh(48.0)], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(),
            3.5355339059327378,
            epsilon = 1e-12
        );
        // joint permutation leaves the value unchanged
        assert_eq!(
            rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(),
            rmse(&[0.0, 0.0], &[4.0, 3.0]).unwrap()
        );
        assert!(matches!(
            rmse(&[1.0], &[1.0, 2.0]),
            Err(Error::Shape { left: 1, right: 2 })
        ));
        assert!(matches!(rmse::<f64>(&[], &[]), Err(Error::Shape { .. })));
    }

    #[test]
    fn histogram_excludes_flagged_samples() {
        let mut samples: Vec<EnrichedSample> =
            (0..10).map(|i| sample(i, 50.0 + i as f64, 0.0, 89.0)).collect();
        samples[1].at_focus_point = true;
        samples[4].at_intersection = true;
        samples[7].at_bus_stop = true;
        let h = free_flow_histogram(&samples, 89.0, 1.0).unwrap();
        assert_eq!(h.total, 7);
        assert_eq!(h.bins.iter().map(|(_, c)| c).sum::<u64>(), 7);
    }

    #[test]
    fn histogram_single_speed_single_bin() {
        let samples: Vec<EnrichedSample> = (0..5).map(|i| sample(i, 42.5, 0.0, 89.0)).collect();
        let h = free_flow_histogram(&samples, 89.0, 1.0).unwrap();
        assert_eq!(h.bins, vec![(42.0, 5)]);
        assert_eq!(h.fraction_below(50.0), 1.0);
        assert_eq!(h.fraction_below(42.0), 0.0);
    }

    #[test]
    fn histogram_with_no_qualifying_samples_errors() {
        let mut s = sample(0, 50.0, 0.0, 89.0);
        s.at_focus_point = true;
        assert!(matches!(
            free_flow_histogram(&[s], 89.0, 1.0),
            Err(Error::EmptyHistogram)
        ));
        assert!(matches!(
            free_flow_histogram(&[], 89.0, 1.0),
            Err(Error::EmptyHistogram)
        ));
    }

    #[test]
    fn heatmap_single_column_contours() {
        // all samples in one time bin, speeds 10, 20, ..., 100
        let samples: Vec<EnrichedSample> = (1..=10)
            .map(|i| {
                let mut s = sample(i, i as f64 * 10.0, 0.0, 89.0);
                s.day_num = 10.0; // midnight, first column
                s
            })
            .collect();
        let hm = speed_time_heatmap(&samples, 89.0, 15.0, 1.0).unwrap();
        let c = hm.contours[0].unwrap();
        assert_eq!(c, [10.0, 20.0, 30.0]);
        assert!(hm.contours[1..].iter().all(Option::is_none));
        assert_eq!(hm.column_total(0), 10);
    }

    #[test]
    fn heatmap_uniform_matrix_has_constant_contours() {
        let mut samples = Vec::new();
        for hour in 0..24i64 {
            for i in 1..=10 {
                // 30 s into each hour keeps samples off bin boundaries
                let mut s = sample(hour * 3600 + 30, i as f64 * 10.0, 0.0, 89.0);
                s.day_num = 10.0;
                samples.push(s);
            }
        }
        let hm = speed_time_heatmap(&samples, 89.0, 60.0, 1.0).unwrap();
        let first = hm.contours[0].unwrap();
        for c in &hm.contours {
            assert_eq!(c.unwrap(), first);
        }
    }

    #[test]
    fn heatmap_contours_match_direct_cdf_and_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let n = rng.gen_range(1..200);
            let samples: Vec<EnrichedSample> = (0..n)
                .map(|i| {
                    let mut s = sample(i, rng.gen::<f64>() * 100.0, 0.0, 89.0);
                    s.day_num = 10.0 + rng.gen::<f64>();
                    s
                })
                .collect();
            let hm = speed_time_heatmap(&samples, 89.0, 30.0, 2.0).unwrap();
            for (tb, contour) in hm.contours.iter().enumerate() {
                let Some(c) = contour else { continue };
                assert!(c[0] <= c[1] && c[1] <= c[2]);
                // direct empirical CDF over the column's raw speeds
                let mut col: Vec<f64> = samples
                    .iter()
                    .filter(|s| {
                        ((s.time_of_day_h() * 60.0 / 30.0) as usize).min(47) == tb
                    })
                    .map(|s| (s.speed_kmh.unwrap() / 2.0).floor() * 2.0)
                    .collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for (li, level) in CONTOUR_LEVELS.iter().enumerate() {
                    let target = (level * col.len() as f64).ceil() as usize;
                    let expect = col[target.max(1) - 1];
                    assert_eq!(c[li], expect, "column {tb} level {level}");
                }
            }
        }
    }

    fn segment_fixture(n: i64, flagged_at: Option<i64>) -> EnrichedTrip {
        let samples: Vec<EnrichedSample> = (0..n)
            .map(|i| {
                let mut s = sample(i, (i % 240 + 1) as f64, 0.0, 48.0);
                if Some(i) == flagged_at {
                    s.at_intersection = true;
                }
                s
            })
            .collect();
        trip_of(samples)
    }

    #[test]
    fn segments_window_count_and_median() {
        let ext = extract_learning_segments(&[segment_fixture(480, None)], 240, 30.0).unwrap();
        assert_eq!(ext.segments.len(), 2);
        assert_eq!(ext.dropped_windows, 0);
        for seg in &ext.segments {
            assert_eq!(seg.rows.len(), 240);
            // speeds are 1..=240, so the even-count median is 120.5
            assert_abs_diff_eq!(seg.target_median_speed_kmh, 120.5, epsilon = 1e-12);
        }
        // short trips contribute nothing
        let ext = extract_learning_segments(&[segment_fixture(239, None)], 240, 30.0).unwrap();
        assert!(ext.segments.is_empty());
    }

    #[test]
    fn approach_and_departure_flags_bracket_the_event() {
        let trip = segment_fixture(240, Some(100));
        let ext = extract_learning_segments(&[trip], 240, 30.0).unwrap();
        let rows = &ext.segments[0].rows;
        for (i, row) in rows.iter().enumerate() {
            let i = i as i64;
            // 1 Hz records: 30 s horizon covers indices 70..=99 and 101..=130
            assert_eq!(row.approaching_within_horizon, (70..=99).contains(&i), "i={i}");
            assert_eq!(row.departing_within_horizon, (101..=130).contains(&i), "i={i}");
            assert_eq!(row.at_intersection, i == 100);
        }
    }

    #[test]
    fn windows_missing_limits_are_dropped_and_counted() {
        let mut trip = segment_fixture(480, None);
        trip.samples[10].limit_kmh = None;
        let ext = extract_learning_segments(&[trip], 240, 30.0).unwrap();
        assert_eq!(ext.segments.len(), 1);
        assert_eq!(ext.dropped_windows, 1);
    }

    #[test]
    fn analyses_are_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut trips: Vec<EnrichedTrip> = (0..8u64)
            .map(|t| {
                let samples: Vec<EnrichedSample> = (0..50)
                    .map(|i| {
                        let mut s =
                            sample(i, rng.gen_range(10..80) as f64, rng.gen::<f64>(), 48.0);
                        s.veh_id = t % 3;
                        s.trip = t;
                        s
                    })
                    .collect();
                trip_of(samples)
            })
            .collect();
        let (a, _) = build_stats(&trips, 1.0).unwrap();
        trips.reverse();
        let (b, _) = build_stats(&trips, 1.0).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn stats_json_round_trip() {
        let samples: Vec<EnrichedSample> = (0..20)
            .map(|i| sample(i, 30.0 + (i % 3) as f64, 2.0, 112.65))
            .collect();
        let (stats, _) = build_stats(&[trip_of(samples)], 1.0).unwrap();
        let json = stats.to_json().unwrap();
        let back = SpeedEnergyStats::from_json(&json).unwrap();
        assert_eq!(stats.groups(), back.groups());
        let key = LimitKey::from_kmh(112.65);
        assert_eq!(stats.weighted_mean(key), back.weighted_mean(key));
    }

    #[test]
    fn time_of_day_combines_day_fraction_and_offset() {
        let mut s = sample(0, 10.0, 0.0, 48.0);
        s.day_num = 12.75; // 18:00
        s.timestamp_ms = 30 * 60 * 1000; // +30 min
        assert_abs_diff_eq!(s.time_of_day_h(), 18.5, epsilon = 1e-9);
    }
}
