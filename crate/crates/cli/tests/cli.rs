//! End-to-end command tests: exit codes, appended columns and the
//! stats/estimate consistency identity, all through the binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trace_enrich::GeoPoint;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trace-enrich")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn pt(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}

fn offset(p: GeoPoint, east: f64, north: f64) -> GeoPoint {
    p.offset_by_meters(east, north).unwrap()
}

/// Straight residential road 1.3 km long with a pedestrian crossing node
/// 2 m off the road at the 300 m mark.
fn write_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let base = pt(42.28, -83.74);
    let end = offset(base, 1300.0, 0.0);
    let crossing = offset(base, 300.0, 2.0);
    let map = format!(
        r#"<?xml version="1.0" encoding="UTF-8"?>
<osm version="0.6">
  <node id="1" lat="{}" lon="{}"/>
  <node id="2" lat="{}" lon="{}"/>
  <node id="3" lat="{}" lon="{}">
    <tag k="highway" v="crossing"/>
  </node>
  <way id="10">
    <nd ref="1"/>
    <nd ref="2"/>
    <tag k="highway" v="residential"/>
  </way>
</osm>
"#,
        base.lat(),
        base.lon(),
        end.lat(),
        end.lon(),
        crossing.lat(),
        crossing.lon()
    );
    let map_path = dir.join("map.osm");
    std::fs::write(&map_path, map).unwrap();

    let mut csv = String::from(
        "DayNum,VehId,Trip,Timestamp_ms,Latitude,Longitude,VehicleSpeed_kmh,Energy\n",
    );
    // trip 1: 480 noiseless records moving 2.5 m/s east along the road
    for i in 0..480i64 {
        let p = offset(base, i as f64 * 2.5, 0.0);
        let speed = 20.0 + (i % 5) as f64;
        let energy = speed * 0.01;
        csv.push_str(&format!(
            "10.4,1,1,{},{},{},{speed},{energy}\n",
            i * 1000,
            p.lat(),
            p.lon()
        ));
    }
    // trip 2: a record far off the map between two on-road ones, no energy
    for (i, east) in [(0i64, 5.0f64), (1, -1.0), (2, 10.0)] {
        let p = if east < 0.0 {
            pt(43.5, -83.74) // tens of kilometers away
        } else {
            offset(base, east, 0.0)
        };
        csv.push_str(&format!(
            "10.6,1,2,{},{},{},25.0,\n",
            i * 1000,
            p.lat(),
            p.lon()
        ));
    }
    let trips_path = dir.join("trips.csv");
    std::fs::write(&trips_path, csv).unwrap();
    (map_path, trips_path)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (headers, rows)
}

fn col(headers: &[String], name: &str) -> usize {
    headers.iter().position(|h| h == name).unwrap()
}

#[test]
fn pipeline_columns_and_analysis_consistency() {
    let tmp = tempfile::tempdir().unwrap();
    let (map, trips) = write_fixture(tmp.path());
    let out_dir = tmp.path().join("out");
    let base_args = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = vec![
            "--paths.map".into(),
            map.display().to_string(),
            "--paths.trips".into(),
            trips.display().to_string(),
            "--paths.output_dir".into(),
            out_dir.display().to_string(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let run_stage = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd.to_string()];
        args.extend(base_args(extra));
        let out = Command::new(bin()).args(&args).output().unwrap();
        assert!(
            out.status.success(),
            "{cmd} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    };

    run_stage("match", &[]);
    let (mh, mrows) = read_csv(&out_dir.join("trips_matched.csv"));
    // unmatched record carries only the unmatched label
    let match_type = col(&mh, "MatchType");
    let edge_col = col(&mh, "EdgeId");
    let unmatched: Vec<&Vec<String>> = mrows
        .iter()
        .filter(|r| r[match_type] == "unmatched")
        .collect();
    assert_eq!(unmatched.len(), 1);
    assert_eq!(unmatched[0][edge_col], "");
    assert!(mrows.iter().filter(|r| r[match_type] == "matched").count() >= 480);

    run_stage("enrich", &[]);
    let (eh, erows) = read_csv(&out_dir.join("trips_enriched.csv"));
    let limit = col(&eh, "SpeedLimit_kmh");
    let class = col(&eh, "SpeedLimitClass");
    let focus = col(&eh, "FocusPoints");
    let elev = col(&eh, "ElevationRaw_m");
    let veh = col(&eh, "VehId");
    let trip = col(&eh, "Trip");
    let ts = col(&eh, "Timestamp_ms");

    // untagged residential road resolves to the class-1 default
    let on_road = erows
        .iter()
        .find(|r| r[trip] == "1" && r[ts] == "0")
        .unwrap();
    assert_eq!(on_road[class], "1");
    assert!(on_road[limit].starts_with("40.23"), "limit {}", on_road[limit]);
    // no elevation cache was configured
    assert_eq!(on_road[elev], "");

    // the record 2 m from the crossing carries the focus flag; its
    // neighbors 5 m away do not (3 m buffer)
    let at_300 = erows
        .iter()
        .find(|r| r[trip] == "1" && r[ts] == "120000")
        .unwrap();
    assert_eq!(at_300[focus], "crossing");
    let at_295 = erows
        .iter()
        .find(|r| r[trip] == "1" && r[ts] == "118000")
        .unwrap();
    assert_eq!(at_295[focus], "");

    // unmatched records have every appended field empty
    let far = erows
        .iter()
        .find(|r| r[trip] == "2" && r[ts] == "1000")
        .unwrap();
    for name in ["SpeedLimit_kmh", "SpeedLimitClass", "Gradient", "Intersection", "BusStop", "FocusPoints"] {
        assert_eq!(far[col(&eh, name)], "", "{name} must be empty");
    }

    // stats then estimate reproduces trip 1's actual energy
    run_stage("stats", &[]);
    run_stage("estimate", &[]);
    let (sh, srows) = read_csv(&out_dir.join("estimates.csv"));
    let est_col = col(&sh, "EstimatedEnergy");
    let act_col = col(&sh, "ActualEnergy");
    let row = srows
        .iter()
        .find(|r| r[col(&sh, "VehId")] == "1" && r[col(&sh, "Trip")] == "1")
        .unwrap();
    let estimated: f64 = row[est_col].parse().unwrap();
    let actual: f64 = row[act_col].parse().unwrap();
    assert!(
        ((estimated - actual) / actual).abs() < 1e-6,
        "estimate {estimated} vs actual {actual}"
    );
    let _ = veh;

    // histogram under the default residential limit excludes the flagged
    // records near the crossing
    run_stage("histogram", &["--analysis.limit_kmh", "40.2336"]);
    let (hh, hrows) = read_csv(&out_dir.join("histogram.csv"));
    let count_col = col(&hh, "Count");
    let total: u64 = hrows.iter().map(|r| r[count_col].parse::<u64>().unwrap()).sum();
    assert!(total > 0 && total < 482, "histogram total {total}");

    // heatmap exports the matrix and the contour boundaries
    run_stage("heatmap", &["--analysis.limit_kmh", "40.2336"]);
    let (ch, crows) = read_csv(&out_dir.join("heatmap_contours.csv"));
    let p10 = col(&ch, "Lowest10_kmh");
    let p30 = col(&ch, "Lowest30_kmh");
    let populated: Vec<&Vec<String>> = crows.iter().filter(|r| !r[p10].is_empty()).collect();
    assert!(!populated.is_empty());
    for row in populated {
        let lo: f64 = row[p10].parse().unwrap();
        let hi: f64 = row[p30].parse().unwrap();
        assert!(lo <= hi);
    }

    // a 480-record trip yields exactly two learning segments
    run_stage("segments", &[]);
    let (gh, grows) = read_csv(&out_dir.join("segments.csv"));
    let seg_col = col(&gh, "SegmentId");
    let mut ids: Vec<&str> = grows.iter().map(|r| r[seg_col].as_str()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 2);
    assert_eq!(grows.len(), 480);
    let (_, trows) = read_csv(&out_dir.join("segment_targets.csv"));
    assert_eq!(trows.len(), 2);
}

#[test]
fn shuffled_timestamps_exit_2_naming_the_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (map, _) = write_fixture(tmp.path());
    let bad = tmp.path().join("bad.csv");
    std::fs::write(
        &bad,
        "DayNum,VehId,Trip,Timestamp_ms,Latitude,Longitude\n\
         10.4,7,3,5000,42.28,-83.74\n\
         10.4,7,3,1000,42.2801,-83.74\n",
    )
    .unwrap();
    let out = run(&[
        "match",
        "--paths.map",
        &map.display().to_string(),
        "--paths.trips",
        &bad.display().to_string(),
        "--paths.output_dir",
        &tmp.path().join("out").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("trip 3"), "stderr: {stderr}");
    assert!(stderr.contains("vehicle 7"), "stderr: {stderr}");
}

#[test]
fn undrivable_map_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, trips) = write_fixture(tmp.path());
    let map = tmp.path().join("footways.osm");
    std::fs::write(
        &map,
        "<?xml version=\"1.0\"?>\n<osm>\n\
         <node id=\"1\" lat=\"42.28\" lon=\"-83.74\"/>\n\
         <node id=\"2\" lat=\"42.281\" lon=\"-83.74\"/>\n\
         <way id=\"10\"><nd ref=\"1\"/><nd ref=\"2\"/><tag k=\"highway\" v=\"footway\"/></way>\n\
         </osm>\n",
    )
    .unwrap();
    let out = run(&[
        "match",
        "--paths.map",
        &map.display().to_string(),
        "--paths.trips",
        &trips.display().to_string(),
        "--paths.output_dir",
        &tmp.path().join("out").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn malformed_map_exit_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, trips) = write_fixture(tmp.path());
    let map = tmp.path().join("broken.osm");
    std::fs::write(&map, "<osm>\n<node id=\"1\" lat=\"x\" lon=\"0\"/>\n</osm>\n").unwrap();
    let out = run(&[
        "match",
        "--paths.map",
        &map.display().to_string(),
        "--paths.trips",
        &trips.display().to_string(),
        "--paths.output_dir",
        &tmp.path().join("out").display().to_string(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn unresolvable_elevation_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let (map, trips) = write_fixture(tmp.path());
    let out_dir = tmp.path().join("out").display().to_string();
    let map = map.display().to_string();
    let trips = trips.display().to_string();
    let ok = run(&[
        "match",
        "--paths.map",
        &map,
        "--paths.trips",
        &trips,
        "--paths.output_dir",
        &out_dir,
    ]);
    assert!(ok.status.success());
    // no cache configured and a zero tolerance for unresolved points
    let out = run(&[
        "enrich",
        "--paths.map",
        &map,
        "--paths.trips",
        &trips,
        "--paths.output_dir",
        &out_dir,
        "--enrich.max_unresolved_elevation",
        "0.0",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn histogram_without_qualifying_samples_exit_5() {
    let tmp = tempfile::tempdir().unwrap();
    let (map, trips) = write_fixture(tmp.path());
    let out_dir = tmp.path().join("out").display().to_string();
    let map = map.display().to_string();
    let trips = trips.display().to_string();
    for cmd in ["match", "enrich"] {
        let out = run(&[
            cmd,
            "--paths.map",
            &map,
            "--paths.trips",
            &trips,
            "--paths.output_dir",
            &out_dir,
        ]);
        assert!(out.status.success());
    }
    let out = run(&[
        "histogram",
        "--paths.map",
        &map,
        "--paths.trips",
        &trips,
        "--paths.output_dir",
        &out_dir,
        "--analysis.limit_kmh",
        "999",
    ]);
    assert_eq!(out.status.code(), Some(5));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("limit_kmh=999"), "stderr: {stderr}");
}
