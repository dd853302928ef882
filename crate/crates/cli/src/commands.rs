//! Pipeline commands: match, enrich and the analysis exports.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use trace_enrich::enrich::{enrich_trip, AnnotatedRecord, EnrichReport, FileElevationCache};
use trace_enrich::matching::{match_rate, viterbi_match, MatchStatus, MatchedPoint};
use trace_enrich::{
    build_stats, estimate_trip_energy, extract_learning_segments, free_flow_histogram,
    load_bus_stops_csv, rmse, speed_time_heatmap, EnrichedTrip, Error, RoadNetwork,
    SpeedEnergyStats, TripEnergyEstimate,
};

use crate::config::PipelineConfig;
use crate::io::{
    enrich_fields, match_fields, read_enriched_csv, read_matched_csv, read_trips_csv, write_csv,
    ENRICH_COLUMNS, MATCH_COLUMNS,
};

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    Ok(builder.build()?)
}

fn load_network(config: &PipelineConfig) -> Result<RoadNetwork> {
    let map = config
        .paths
        .map
        .as_ref()
        .context("paths.map is required for this command")?;
    let mut network = RoadNetwork::load_osm(map, config.network.bounding_box())
        .with_context(|| format!("loading map {}", map.display()))?;
    if let Some(stops) = &config.paths.bus_stops {
        let catalog = load_bus_stops_csv(stops)
            .with_context(|| format!("loading bus stops {}", stops.display()))?;
        log::info!("replacing {} map bus stops with {} catalog stops", network.bus_stops().len(), catalog.len());
        network.replace_bus_stops(catalog);
    }
    Ok(network)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trips".to_string())
}

pub fn matched_path(config: &PipelineConfig, trips_path: &Path) -> PathBuf {
    config
        .paths
        .output_dir
        .join(format!("{}_matched.csv", stem_of(trips_path)))
}

pub fn enriched_path(config: &PipelineConfig, trips_path: &Path) -> PathBuf {
    config
        .paths
        .output_dir
        .join(format!("{}_enriched.csv", stem_of(trips_path)))
}

fn require_trips(config: &PipelineConfig) -> Result<()> {
    if config.paths.trips.is_empty() {
        bail!("paths.trips is required for this command");
    }
    std::fs::create_dir_all(&config.paths.output_dir).with_context(|| {
        format!(
            "creating output directory {}",
            config.paths.output_dir.display()
        )
    })?;
    Ok(())
}

/// Snaps every trip of every input file onto the road network and writes
/// `<stem>_matched.csv` files with the match columns appended.
pub fn cmd_match(config: &PipelineConfig) -> Result<()> {
    require_trips(config)?;
    let network = load_network(config)?;
    let params = config.hmm.params();
    params.validate()?;
    let pool = thread_pool(config.workers)?;

    let mut total_records = 0usize;
    let mut total_snapped = 0usize;
    for trips_path in &config.paths.trips {
        let file = read_trips_csv(trips_path, &config.io.energy_column)?;
        let matched: Vec<Vec<MatchedPoint>> = pool.install(|| {
            file.trips
                .par_iter()
                .map(|g| viterbi_match(&g.trace, &network, &params))
                .collect::<std::result::Result<Vec<_>, Error>>()
        })?;

        let headers = file
            .headers
            .iter()
            .map(str::to_string)
            .chain(MATCH_COLUMNS.iter().map(|s| s.to_string()));
        let rows = file.trips.iter().zip(&matched).flat_map(|(group, points)| {
            group.rows.iter().zip(points).map(|(record, point)| {
                record
                    .iter()
                    .map(str::to_string)
                    .chain(match_fields(point))
                    .collect::<Vec<String>>()
            })
        });
        let out = matched_path(config, trips_path);
        write_csv(&out, headers, rows)?;

        let records: usize = matched.iter().map(Vec::len).sum();
        let snapped: usize = matched
            .iter()
            .flatten()
            .filter(|m| m.status != MatchStatus::Unmatched)
            .count();
        let rate = if records > 0 {
            let all: Vec<MatchedPoint> = matched.into_iter().flatten().collect();
            match_rate(&all)?
        } else {
            0.0
        };
        println!(
            "{}: trips={} records={} match_rate={:.6}",
            out.display(),
            file.trips.len(),
            records,
            rate
        );
        total_records += records;
        total_snapped += snapped;
    }
    if config.paths.trips.len() > 1 && total_records > 0 {
        println!(
            "total: records={} match_rate={:.6}",
            total_records,
            total_snapped as f64 / total_records as f64
        );
    }
    Ok(())
}

/// Annotates matched files with speed limits, elevation and
/// infrastructure flags, writing `<stem>_enriched.csv`.
pub fn cmd_enrich(config: &PipelineConfig) -> Result<()> {
    require_trips(config)?;
    let network = load_network(config)?;
    let provider = match &config.paths.elevation_cache {
        Some(p) => FileElevationCache::from_csv_path(p)
            .with_context(|| format!("loading elevation cache {}", p.display()))?,
        None => FileElevationCache::default(),
    };
    let radii = config.radii.radii();
    let pool = thread_pool(config.workers)?;

    for trips_path in &config.paths.trips {
        let matched_file = matched_path(config, trips_path);
        let (headers, trips) = read_matched_csv(&matched_file, &config.io.energy_column)?;
        let enriched: Vec<(Vec<AnnotatedRecord>, EnrichReport)> = pool.install(|| {
            trips
                .par_iter()
                .map(|t| enrich_trip(&t.matched, &network, &provider, &radii))
                .collect()
        });

        let queried: usize = enriched.iter().map(|(_, r)| r.elevation_queried).sum();
        let resolved: usize = enriched.iter().map(|(_, r)| r.elevation_resolved).sum();
        if queried > 0 {
            let unresolved = (queried - resolved) as f64 / queried as f64;
            if unresolved > config.enrich.max_unresolved_elevation {
                return Err(Error::ElevationCoverage {
                    resolved,
                    total: queried,
                    required: 1.0 - config.enrich.max_unresolved_elevation,
                }
                .into());
            }
        }

        let out_headers = headers
            .iter()
            .map(str::to_string)
            .chain(ENRICH_COLUMNS.iter().map(|s| s.to_string()));
        let rows = trips.iter().zip(&enriched).flat_map(|(trip, (records, _))| {
            trip.rows.iter().zip(records).map(|(record, rec)| {
                record
                    .iter()
                    .map(str::to_string)
                    .chain(enrich_fields(rec))
                    .collect::<Vec<String>>()
            })
        });
        let out = enriched_path(config, trips_path);
        write_csv(&out, out_headers, rows)?;

        let tag_warnings: usize = enriched.iter().map(|(_, r)| r.tag_warnings).sum();
        let gradient_warnings: usize = enriched.iter().map(|(_, r)| r.gradient_warnings).sum();
        println!(
            "{}: trips={} elevation_resolved={}/{} tag_warnings={} gradient_warnings={}",
            out.display(),
            trips.len(),
            resolved,
            queried,
            tag_warnings,
            gradient_warnings
        );
    }
    Ok(())
}

/// Reads every enriched file, merging trips that span files.
fn read_all_enriched(config: &PipelineConfig) -> Result<Vec<EnrichedTrip>> {
    require_trips(config)?;
    let mut by_key: std::collections::BTreeMap<(u64, u64), EnrichedTrip> = Default::default();
    for trips_path in &config.paths.trips {
        let path = enriched_path(config, trips_path);
        for trip in read_enriched_csv(&path, &config.io.energy_column)? {
            by_key
                .entry((trip.veh_id, trip.trip))
                .and_modify(|t| t.samples.extend(trip.samples.clone()))
                .or_insert(trip);
        }
    }
    Ok(by_key.into_values().collect())
}

/// Builds the per-limit speed/energy statistics and writes `stats.json`.
pub fn cmd_stats(config: &PipelineConfig) -> Result<()> {
    let trips = read_all_enriched(config)?;
    let (stats, skip) = build_stats(&trips, config.analysis.speed_bin_kmh)?;
    let out = config.paths.output_dir.join("stats.json");
    std::fs::write(&out, stats.to_json()?)?;
    println!(
        "{}: limits={} skipped_records={} (energy={} limit={} speed={} interval={})",
        out.display(),
        stats.groups().len(),
        skip.total(),
        skip.missing_energy,
        skip.missing_limit,
        skip.missing_speed,
        skip.missing_interval
    );
    Ok(())
}

/// Estimates per-trip energy from `stats.json` and writes
/// `estimates.csv`; prints the RMSE when actual energies are present.
pub fn cmd_estimate(config: &PipelineConfig) -> Result<()> {
    let trips = read_all_enriched(config)?;
    let stats_path = config.paths.output_dir.join("stats.json");
    let json = std::fs::read_to_string(&stats_path)
        .with_context(|| format!("reading {} (run `stats` first)", stats_path.display()))?;
    let stats = SpeedEnergyStats::from_json(&json)?;

    let estimates: Vec<TripEnergyEstimate> = trips
        .iter()
        .map(|t| estimate_trip_energy(t, &stats))
        .collect::<std::result::Result<_, Error>>()?;

    let out = config.paths.output_dir.join("estimates.csv");
    write_csv(
        &out,
        [
            "VehId",
            "Trip",
            "EstimatedEnergy",
            "ActualEnergy",
            "UncoveredSeconds",
            "UnattributedSeconds",
        ],
        estimates.iter().map(|e| {
            vec![
                e.veh_id.to_string(),
                e.trip.to_string(),
                format!("{}", e.estimated),
                e.actual.map(|a| format!("{a}")).unwrap_or_default(),
                format!("{}", e.uncovered_s),
                format!("{}", e.unattributed_s),
            ]
        }),
    )?;

    let pairs: Vec<(f64, f64)> = estimates
        .iter()
        .filter_map(|e| e.actual.map(|a| (a, e.estimated)))
        .collect();
    print!("{}: trips={}", out.display(), estimates.len());
    if !pairs.is_empty() {
        let actual: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let estimated: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        print!(" rmse={:.6}", rmse(&actual, &estimated)?);
    }
    println!();
    Ok(())
}

/// Free-flow speed histogram under the configured limit.
pub fn cmd_histogram(config: &PipelineConfig) -> Result<()> {
    let trips = read_all_enriched(config)?;
    let samples: Vec<_> = trips.into_iter().flat_map(|t| t.samples).collect();
    let limit = config.analysis.limit_kmh;
    let h = free_flow_histogram(&samples, limit, config.analysis.speed_bin_kmh)
        .with_context(|| format!("free-flow filter: limit_kmh={limit}, flags excluded"))?;
    let out = config.paths.output_dir.join("histogram.csv");
    write_csv(
        &out,
        ["SpeedBin_kmh", "Count"],
        h.bins
            .iter()
            .map(|(bin, count)| vec![format!("{bin}"), count.to_string()]),
    )?;
    let threshold = config.analysis.below_threshold_kmh;
    println!(
        "{}: samples={} fraction_below_{}kmh={:.4}",
        out.display(),
        h.total,
        threshold,
        h.fraction_below(threshold)
    );
    Ok(())
}

/// Speed-over-time-of-day heatmap with lowest-population contours.
pub fn cmd_heatmap(config: &PipelineConfig) -> Result<()> {
    let trips = read_all_enriched(config)?;
    let samples: Vec<_> = trips.into_iter().flat_map(|t| t.samples).collect();
    let hm = speed_time_heatmap(
        &samples,
        config.analysis.limit_kmh,
        config.analysis.time_bin_min,
        config.analysis.speed_bin_kmh,
    )?;

    let out = config.paths.output_dir.join("heatmap.csv");
    let mut rows = Vec::new();
    for (tb, col) in hm.counts.iter().enumerate() {
        for (sb, &count) in col.iter().enumerate() {
            if count > 0 {
                rows.push(vec![
                    format!("{}", tb as f64 * hm.time_bin_min),
                    format!("{}", sb as f64 * hm.speed_bin_kmh),
                    count.to_string(),
                ]);
            }
        }
    }
    write_csv(&out, ["TimeBinStart_min", "SpeedBin_kmh", "Count"], rows)?;

    let contours_out = config.paths.output_dir.join("heatmap_contours.csv");
    write_csv(
        &contours_out,
        ["TimeBinStart_min", "Lowest10_kmh", "Lowest20_kmh", "Lowest30_kmh"],
        hm.contours.iter().enumerate().map(|(tb, c)| {
            let mut row = vec![format!("{}", tb as f64 * hm.time_bin_min)];
            match c {
                Some([p10, p20, p30]) => {
                    row.push(format!("{p10}"));
                    row.push(format!("{p20}"));
                    row.push(format!("{p30}"));
                }
                None => row.extend([String::new(), String::new(), String::new()]),
            }
            row
        }),
    )?;
    let populated = hm.contours.iter().flatten().count();
    println!(
        "{}: time_bins={} populated={}",
        out.display(),
        hm.time_bins(),
        populated
    );
    Ok(())
}

/// Extracts fixed-length learning segments and their median-speed targets.
pub fn cmd_segments(config: &PipelineConfig) -> Result<()> {
    let trips = read_all_enriched(config)?;
    let ext = extract_learning_segments(&trips, config.analysis.segment_len, config.analysis.horizon_s)?;

    let out = config.paths.output_dir.join("segments.csv");
    let bit = |b: bool| if b { "1" } else { "0" }.to_string();
    write_csv(
        &out,
        [
            "SegmentId",
            "VehId",
            "Trip",
            "RowIndex",
            "TimeOfDay_h",
            "SpeedLimit_kmh",
            "Gradient",
            "Intersection",
            "BusStop",
            "FocusPoint",
            "Approaching",
            "Departing",
        ],
        ext.segments.iter().flat_map(|seg| {
            seg.rows.iter().enumerate().map(move |(i, row)| {
                vec![
                    seg.segment_id.to_string(),
                    seg.veh_id.to_string(),
                    seg.trip.to_string(),
                    i.to_string(),
                    format!("{}", row.time_of_day_h),
                    format!("{}", row.speed_limit_kmh),
                    format!("{}", row.gradient),
                    bit(row.at_intersection),
                    bit(row.at_bus_stop),
                    bit(row.at_focus_point),
                    bit(row.approaching_within_horizon),
                    bit(row.departing_within_horizon),
                ]
            })
        }),
    )?;

    let targets_out = config.paths.output_dir.join("segment_targets.csv");
    write_csv(
        &targets_out,
        ["SegmentId", "MedianSpeed_kmh"],
        ext.segments.iter().map(|seg| {
            vec![
                seg.segment_id.to_string(),
                format!("{}", seg.target_median_speed_kmh),
            ]
        }),
    )?;
    println!(
        "{}: segments={} dropped_windows={}",
        out.display(),
        ext.segments.len(),
        ext.dropped_windows
    );
    Ok(())
}
