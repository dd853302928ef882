//! Routable road graph parsed from a map extract, with per-edge tags,
//! derived intersections, bus stops and focus points.
//!
//! Drivable ways are split at nodes shared by two or more drivable ways,
//! yielding one [`RoadEdge`] per segment between graph nodes. The network
//! is immutable once loaded and safe to share across workers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geo::{great_circle_distance, initial_bearing, project_onto_segment, BearingRad, GeoPoint};
use crate::index::{DegreeGrid, SpatialIndex};
use crate::osm::{parse_extract, RawExtract};

/// Statute miles per hour to kilometers per hour.
pub const MPH_TO_KMH: f64 = 1.609344;

/// Identifier of one edge of the routable graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub u32);

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Drivable highway classification carried by every edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HighwayClass {
    Motorway,
    Trunk,
    Primary,
    Secondary,
    Tertiary,
    Unclassified,
    Residential,
    Service,
    Other,
}

impl HighwayClass {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Motorway => "motorway",
            Self::Trunk => "trunk",
            Self::Primary => "primary",
            Self::Secondary => "secondary",
            Self::Tertiary => "tertiary",
            Self::Unclassified => "unclassified",
            Self::Residential => "residential",
            Self::Service => "service",
            Self::Other => "other",
        }
    }

    /// Maps a `highway` tag value to a drivable class; `_link` ramps fold
    /// into their base class. Non-drivable values yield `None`.
    fn from_tag(value: &str) -> Option<Self> {
        let base = value.strip_suffix("_link").unwrap_or(value);
        match base {
            "motorway" => Some(Self::Motorway),
            "trunk" => Some(Self::Trunk),
            "primary" => Some(Self::Primary),
            "secondary" => Some(Self::Secondary),
            "tertiary" => Some(Self::Tertiary),
            "unclassified" => Some(Self::Unclassified),
            "residential" => Some(Self::Residential),
            "service" => Some(Self::Service),
            _ => None,
        }
    }
}

/// Default legal speed limit where no sign is posted, in km/h.
///
/// The mph defaults are motorway 70, trunk/primary/unclassified 55,
/// secondary 45, tertiary 35, residential/service 25.
pub fn default_speed_limit(class: HighwayClass) -> Result<f64> {
    let mph = match class {
        HighwayClass::Motorway => 70.0,
        HighwayClass::Trunk | HighwayClass::Primary | HighwayClass::Unclassified => 55.0,
        HighwayClass::Secondary => 45.0,
        HighwayClass::Tertiary => 35.0,
        HighwayClass::Residential | HighwayClass::Service => 25.0,
        HighwayClass::Other => return Err(Error::NoDefault { class: class.name() }),
    };
    Ok(mph * MPH_TO_KMH)
}

/// The sixteen kinds of road locations liable to change vehicle speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FocusPointKind {
    Bollard,
    Bump,
    Crossing,
    Gate,
    LiftGate,
    GiveWay,
    Hump,
    LevelCrossing,
    MiniRoundabout,
    MotorwayJunction,
    Roundabout,
    StopSign,
    SwingGate,
    TrafficSignal,
    TurningCircle,
    TurningLoop,
}

impl FocusPointKind {
    pub const ALL: [FocusPointKind; 16] = [
        Self::Bollard,
        Self::Bump,
        Self::Crossing,
        Self::Gate,
        Self::LiftGate,
        Self::GiveWay,
        Self::Hump,
        Self::LevelCrossing,
        Self::MiniRoundabout,
        Self::MotorwayJunction,
        Self::Roundabout,
        Self::StopSign,
        Self::SwingGate,
        Self::TrafficSignal,
        Self::TurningCircle,
        Self::TurningLoop,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Bollard => "bollard",
            Self::Bump => "bump",
            Self::Crossing => "crossing",
            Self::Gate => "gate",
            Self::LiftGate => "lift_gate",
            Self::GiveWay => "give_way",
            Self::Hump => "hump",
            Self::LevelCrossing => "level_crossing",
            Self::MiniRoundabout => "mini_roundabout",
            Self::MotorwayJunction => "motorway_junction",
            Self::Roundabout => "roundabout",
            Self::StopSign => "stop_sign",
            Self::SwingGate => "swing_gate",
            Self::TrafficSignal => "traffic_signal",
            Self::TurningCircle => "turning_circle",
            Self::TurningLoop => "turning_loop",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }
}

impl fmt::Display for FocusPointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Kinds a tagged map node contributes to. Unknown tag values are
/// ignored, never coerced onto a listed kind.
fn classify_node(tags: &HashMap<String, String>) -> Vec<FocusPointKind> {
    let mut kinds = Vec::new();
    if let Some(v) = tags.get("highway") {
        match v.as_str() {
            "crossing" => kinds.push(FocusPointKind::Crossing),
            "traffic_signals" => kinds.push(FocusPointKind::TrafficSignal),
            "stop" => kinds.push(FocusPointKind::StopSign),
            "give_way" => kinds.push(FocusPointKind::GiveWay),
            "turning_circle" => kinds.push(FocusPointKind::TurningCircle),
            "turning_loop" => kinds.push(FocusPointKind::TurningLoop),
            "mini_roundabout" => kinds.push(FocusPointKind::MiniRoundabout),
            "motorway_junction" => kinds.push(FocusPointKind::MotorwayJunction),
            _ => {}
        }
    }
    if tags.get("railway").map(String::as_str) == Some("level_crossing") {
        kinds.push(FocusPointKind::LevelCrossing);
    }
    if let Some(v) = tags.get("traffic_calming") {
        match v.as_str() {
            "bump" => kinds.push(FocusPointKind::Bump),
            "hump" => kinds.push(FocusPointKind::Hump),
            _ => {}
        }
    }
    if let Some(v) = tags.get("barrier") {
        match v.as_str() {
            "gate" => kinds.push(FocusPointKind::Gate),
            "lift_gate" => kinds.push(FocusPointKind::LiftGate),
            "bollard" => kinds.push(FocusPointKind::Bollard),
            "swing_gate" => kinds.push(FocusPointKind::SwingGate),
            _ => {}
        }
    }
    kinds
}

/// Provenance class of a speed-limit value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(i8)]
pub enum SpeedLimitClass {
    /// Legal limit differing by direction of travel.
    DirectionDependent = -1,
    /// Posted maximum legal limit.
    Legal = 0,
    /// No explicit sign; class defaults apply.
    Default = 1,
    /// Posted advisory limit, not legally binding.
    Advisory = 2,
    /// Realistic average speed estimate where no legal limit exists.
    Practical = 3,
}

impl SpeedLimitClass {
    pub fn code(&self) -> i8 {
        *self as i8
    }

    pub fn from_code(code: i8) -> Option<Self> {
        match code {
            -1 => Some(Self::DirectionDependent),
            0 => Some(Self::Legal),
            1 => Some(Self::Default),
            2 => Some(Self::Advisory),
            3 => Some(Self::Practical),
            _ => None,
        }
    }
}

/// Inclusive lat/lon bounds used to clip an extract while loading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.min_lat && lat <= self.max_lat && lon >= self.min_lon && lon <= self.max_lon
    }
}

/// Tag keys preserved on edges; everything else is dropped at load.
const RETAINED_TAGS: [&str; 6] = [
    "maxspeed",
    "maxspeed:forward",
    "maxspeed:backward",
    "maxspeed:advisory",
    "maxspeed:practical",
    "oneway",
];

/// One drivable segment of the graph, between two graph nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadEdge {
    pub id: EdgeId,
    /// Identifier of the source map way this edge was split from.
    pub way_id: i64,
    pub geometry: Vec<GeoPoint>,
    pub highway_class: HighwayClass,
    /// Retained tags, normalized to geometry order (a reversed `oneway=-1`
    /// way stores swapped forward/backward limits and `oneway=yes`).
    pub tags: BTreeMap<String, String>,
    pub length_m: f64,
    pub oneway: bool,
    /// Cumulative meters from the edge start to each geometry vertex.
    cum_m: Vec<f64>,
    pub(crate) from_node: u32,
    pub(crate) to_node: u32,
}

impl RoadEdge {
    /// Builds a standalone edge, validating the two-point minimum and a
    /// strictly positive length. Standalone edges support the bearing and
    /// speed-limit helpers; networks construct their own.
    pub fn new(
        id: EdgeId,
        way_id: i64,
        geometry: Vec<GeoPoint>,
        highway_class: HighwayClass,
        tags: BTreeMap<String, String>,
    ) -> Result<Self> {
        if geometry.len() < 2 {
            return Err(Error::SeriesTooShort {
                len: geometry.len(),
                min: 2,
            });
        }
        let cum_m = cumulative_lengths(&geometry);
        let length_m = *cum_m.last().unwrap();
        if length_m <= 0.0 {
            return Err(Error::DegenerateSegment);
        }
        let oneway = is_oneway(&tags);
        Ok(Self {
            id,
            way_id,
            geometry,
            highway_class,
            tags,
            length_m,
            oneway,
            cum_m,
            from_node: 0,
            to_node: 0,
        })
    }

    /// Bearing of the geometry segment containing the given offset from
    /// the edge start. Offsets are clamped into `[0, length]`.
    pub fn bearing_at_offset(&self, offset_m: f64) -> Result<BearingRad> {
        let seg = self.segment_index_at(offset_m);
        initial_bearing(self.geometry[seg], self.geometry[seg + 1])
    }

    /// Index of the geometry segment containing `offset_m`.
    fn segment_index_at(&self, offset_m: f64) -> usize {
        let off = offset_m.clamp(0.0, self.length_m);
        // last segment wins at the shared vertex
        for i in 0..self.geometry.len() - 1 {
            if off < self.cum_m[i + 1] {
                return i;
            }
        }
        self.geometry.len() - 2
    }

    /// Coordinate at a given offset along the polyline.
    pub fn point_at_offset(&self, offset_m: f64) -> GeoPoint {
        let seg = self.segment_index_at(offset_m);
        let seg_len = self.cum_m[seg + 1] - self.cum_m[seg];
        let t = if seg_len > 0.0 {
            ((offset_m.clamp(0.0, self.length_m) - self.cum_m[seg]) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let frame = crate::geo::LocalFrame::new(self.geometry[seg]);
        let (bx, by) = frame.to_local(self.geometry[seg + 1]);
        frame.from_local(bx * t, by * t)
    }
}

fn cumulative_lengths(geometry: &[GeoPoint]) -> Vec<f64> {
    let mut cum = Vec::with_capacity(geometry.len());
    let mut total = 0.0;
    cum.push(0.0);
    for pair in geometry.windows(2) {
        total += great_circle_distance(pair[0], pair[1]).meters();
        cum.push(total);
    }
    cum
}

fn is_oneway(tags: &BTreeMap<String, String>) -> bool {
    matches!(
        tags.get("oneway").map(String::as_str),
        Some("yes") | Some("true") | Some("1")
    )
}

/// A candidate road position for a query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCandidate {
    pub edge: EdgeId,
    /// Closest point of the edge polyline.
    pub point: GeoPoint,
    /// Great-circle distance from the query point, meters.
    pub distance_m: f64,
    /// Cumulative distance of `point` from the edge start, meters.
    pub offset_m: f64,
}

/// Spatial index over edge geometry segments.
#[derive(Debug, Clone)]
struct EdgeSegmentIndex {
    grid: Option<DegreeGrid>,
    cells: Vec<Vec<(u32, u32)>>,
}

impl EdgeSegmentIndex {
    const CELL_M: f64 = 100.0;

    fn build(edges: &[RoadEdge]) -> Self {
        let mut min_lat = f64::INFINITY;
        let mut max_lat = f64::NEG_INFINITY;
        let mut min_lon = f64::INFINITY;
        let mut max_lon = f64::NEG_INFINITY;
        for e in edges {
            for p in &e.geometry {
                min_lat = min_lat.min(p.lat());
                max_lat = max_lat.max(p.lat());
                min_lon = min_lon.min(p.lon());
                max_lon = max_lon.max(p.lon());
            }
        }
        if edges.is_empty() {
            return Self {
                grid: None,
                cells: Vec::new(),
            };
        }
        let grid = DegreeGrid::new((min_lat, min_lon), (max_lat, max_lon), Self::CELL_M);
        let mut cells = vec![Vec::new(); grid.cell_count()];
        for (ei, e) in edges.iter().enumerate() {
            for si in 0..e.geometry.len() - 1 {
                let (a, b) = (e.geometry[si], e.geometry[si + 1]);
                let lat_lo = a.lat().min(b.lat());
                let lat_hi = a.lat().max(b.lat());
                let lon_lo = a.lon().min(b.lon());
                let lon_hi = a.lon().max(b.lon());
                if let Some(ids) = grid.cells_in_box(lat_lo, lat_hi, lon_lo, lon_hi) {
                    for cell in ids {
                        cells[cell].push((ei as u32, si as u32));
                    }
                }
            }
        }
        Self {
            grid: Some(grid),
            cells,
        }
    }

    /// Candidate (edge, segment) pairs near `p`, deduplicated.
    fn query(&self, p: GeoPoint, radius_m: f64) -> Vec<(u32, u32)> {
        let Some(grid) = &self.grid else {
            return Vec::new();
        };
        let (lat_lo, lat_hi, lon_lo, lon_hi) = grid.radius_box(p, radius_m);
        let Some(cell_ids) = grid.cells_in_box(lat_lo, lat_hi, lon_lo, lon_hi) else {
            return Vec::new();
        };
        let mut out: Vec<(u32, u32)> = cell_ids
            .flat_map(|cell| self.cells[cell].iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Immutable routable graph plus point-feature layers.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    edges: Vec<RoadEdge>,
    node_positions: Vec<GeoPoint>,
    /// Outgoing traversals per node: (edge index, forward along geometry).
    adjacency: Vec<Vec<(u32, bool)>>,
    intersections: Vec<GeoPoint>,
    pois: BTreeMap<FocusPointKind, Vec<GeoPoint>>,
    bus_stops: Vec<GeoPoint>,
    edge_index: EdgeSegmentIndex,
    intersection_index: SpatialIndex,
    bus_stop_index: SpatialIndex,
    /// Focus points of all kinds; ids encode (kind, position index).
    focus_index: SpatialIndex,
}

impl RoadNetwork {
    /// Loads a map extract file, optionally clipped to a bounding box.
    pub fn load_osm(path: impl AsRef<Path>, bbox: Option<BoundingBox>) -> Result<Self> {
        let xml = std::fs::read_to_string(path)?;
        Self::from_xml(&xml, bbox)
    }

    /// Builds the network from extract XML text.
    pub fn from_xml(xml: &str, bbox: Option<BoundingBox>) -> Result<Self> {
        let extract = parse_extract(xml)?;
        Self::from_extract(extract, bbox)
    }

    fn from_extract(extract: RawExtract, bbox: Option<BoundingBox>) -> Result<Self> {
        let in_bbox = |id: &i64| -> Option<GeoPoint> {
            let n = extract.nodes.get(id)?;
            if let Some(b) = &bbox {
                if !b.contains(n.lat, n.lon) {
                    return None;
                }
            }
            GeoPoint::new(n.lat, n.lon).ok()
        };

        // point features from node tags
        let mut pois: BTreeMap<FocusPointKind, Vec<GeoPoint>> = BTreeMap::new();
        let mut bus_stops: Vec<(i64, GeoPoint)> = Vec::new();
        let mut poi_nodes: Vec<(i64, GeoPoint, Vec<FocusPointKind>)> = Vec::new();
        for (id, n) in &extract.nodes {
            let Some(p) = in_bbox(id) else { continue };
            let kinds = classify_node(&n.tags);
            if !kinds.is_empty() {
                poi_nodes.push((*id, p, kinds));
            }
            if n.tags.get("highway").map(String::as_str) == Some("bus_stop") {
                bus_stops.push((*id, p));
            }
        }
        poi_nodes.sort_by_key(|(id, _, _)| *id);
        bus_stops.sort_by_key(|(id, _)| *id);
        for (_, p, kinds) in &poi_nodes {
            for k in kinds {
                pois.entry(*k).or_default().push(*p);
            }
        }
        let bus_stops: Vec<GeoPoint> = bus_stops.into_iter().map(|(_, p)| p).collect();

        // drivable ways, normalized to geometry order
        struct DrivableWay {
            way_id: i64,
            class: HighwayClass,
            tags: BTreeMap<String, String>,
            /// Runs of consecutively resolvable node refs.
            runs: Vec<Vec<(i64, GeoPoint)>>,
        }
        let mut drivable: Vec<DrivableWay> = Vec::new();
        for way in &extract.ways {
            // roundabout ways contribute a focus point at their centroid
            if way.tags.get("junction").map(String::as_str) == Some("roundabout") {
                let pts: Vec<GeoPoint> = dedup_closing(&way.node_refs)
                    .iter()
                    .filter_map(in_bbox)
                    .collect();
                if !pts.is_empty() {
                    let n = pts.len() as f64;
                    let lat = pts.iter().map(|p| p.lat()).sum::<f64>() / n;
                    let lon = pts.iter().map(|p| p.lon()).sum::<f64>() / n;
                    if let Ok(c) = GeoPoint::new(lat, lon) {
                        pois.entry(FocusPointKind::Roundabout).or_default().push(c);
                    }
                }
            }

            let Some(class) = way
                .tags
                .get("highway")
                .and_then(|v| HighwayClass::from_tag(v))
            else {
                continue;
            };

            let mut refs: Vec<i64> = way.node_refs.clone();
            let mut tags: BTreeMap<String, String> = way
                .tags
                .iter()
                .filter(|(k, _)| RETAINED_TAGS.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();

            // normalize reversed one-ways to geometry order
            let oneway_val = tags.get("oneway").cloned();
            let oneway_val = oneway_val.as_deref();
            if matches!(oneway_val, Some("-1") | Some("reverse")) {
                refs.reverse();
                let fw = tags.remove("maxspeed:forward");
                let bw = tags.remove("maxspeed:backward");
                if let Some(v) = fw {
                    tags.insert("maxspeed:backward".into(), v);
                }
                if let Some(v) = bw {
                    tags.insert("maxspeed:forward".into(), v);
                }
                tags.insert("oneway".into(), "yes".into());
            }
            // roundabouts are implied one-way unless tagged otherwise
            if way.tags.get("junction").map(String::as_str) == Some("roundabout")
                && !matches!(oneway_val, Some("no") | Some("false") | Some("0"))
            {
                tags.insert("oneway".into(), "yes".into());
            }

            let mut runs: Vec<Vec<(i64, GeoPoint)>> = Vec::new();
            let mut run: Vec<(i64, GeoPoint)> = Vec::new();
            for r in &refs {
                match in_bbox(r) {
                    Some(p) => {
                        // collapse immediately repeated refs
                        if run.last().map(|(id, _)| id) != Some(r) {
                            run.push((*r, p));
                        }
                    }
                    None => {
                        if run.len() >= 2 {
                            runs.push(std::mem::take(&mut run));
                        } else {
                            run.clear();
                        }
                    }
                }
            }
            if run.len() >= 2 {
                runs.push(run);
            }
            if runs.iter().any(|r| r.len() >= 2) {
                drivable.push(DrivableWay {
                    way_id: way.id,
                    class,
                    tags,
                    runs,
                });
            }
        }

        // node -> distinct drivable ways referencing it
        let mut ways_per_node: HashMap<i64, HashSet<i64>> = HashMap::new();
        for w in &drivable {
            for run in &w.runs {
                for (id, _) in run {
                    ways_per_node.entry(*id).or_default().insert(w.way_id);
                }
            }
        }
        let shared: HashSet<i64> = ways_per_node
            .iter()
            .filter(|(_, ways)| ways.len() >= 2)
            .map(|(id, _)| *id)
            .collect();

        let mut intersections: Vec<(i64, GeoPoint)> = Vec::new();
        for id in &shared {
            if let Some(p) = in_bbox(id) {
                intersections.push((*id, p));
            }
        }
        intersections.sort_by_key(|(id, _)| *id);
        let intersections: Vec<GeoPoint> = intersections.into_iter().map(|(_, p)| p).collect();

        // split runs into edges at graph nodes (shared nodes + run endpoints)
        let mut node_ids: Vec<i64> = Vec::new();
        let mut node_dense: HashMap<i64, u32> = HashMap::new();
        let mut node_positions: Vec<GeoPoint> = Vec::new();
        let dense = |id: i64, p: GeoPoint,
                         node_ids: &mut Vec<i64>,
                         node_dense: &mut HashMap<i64, u32>,
                         node_positions: &mut Vec<GeoPoint>| {
            *node_dense.entry(id).or_insert_with(|| {
                node_ids.push(id);
                node_positions.push(p);
                (node_positions.len() - 1) as u32
            })
        };

        let mut edges: Vec<RoadEdge> = Vec::new();
        for w in &drivable {
            for run in &w.runs {
                let last = run.len() - 1;
                let mut start = 0usize;
                for i in 1..=last {
                    let is_cut = i == last || shared.contains(&run[i].0);
                    if !is_cut {
                        continue;
                    }
                    let geometry: Vec<GeoPoint> = run[start..=i].iter().map(|(_, p)| *p).collect();
                    let geometry = dedup_coincident(geometry);
                    if geometry.len() >= 2 {
                        let cum_m = cumulative_lengths(&geometry);
                        let length_m = *cum_m.last().unwrap();
                        if length_m > 0.0 {
                            let from_node = dense(
                                run[start].0,
                                geometry[0],
                                &mut node_ids,
                                &mut node_dense,
                                &mut node_positions,
                            );
                            let to_node = dense(
                                run[i].0,
                                *geometry.last().unwrap(),
                                &mut node_ids,
                                &mut node_dense,
                                &mut node_positions,
                            );
                            let oneway = is_oneway(&w.tags);
                            edges.push(RoadEdge {
                                id: EdgeId(edges.len() as u32),
                                way_id: w.way_id,
                                geometry,
                                highway_class: w.class,
                                tags: w.tags.clone(),
                                length_m,
                                oneway,
                                cum_m,
                                from_node,
                                to_node,
                            });
                        }
                    }
                    start = i;
                }
            }
        }

        if edges.is_empty() {
            return Err(Error::EmptyNetwork);
        }

        let mut adjacency: Vec<Vec<(u32, bool)>> = vec![Vec::new(); node_positions.len()];
        for (i, e) in edges.iter().enumerate() {
            adjacency[e.from_node as usize].push((i as u32, true));
            if !e.oneway {
                adjacency[e.to_node as usize].push((i as u32, false));
            }
        }

        let edge_index = EdgeSegmentIndex::build(&edges);
        let intersection_index = SpatialIndex::build(
            intersections
                .iter()
                .enumerate()
                .map(|(i, p)| (i as u64, *p))
                .collect(),
        );
        let bus_stop_index = SpatialIndex::build(
            bus_stops
                .iter()
                .enumerate()
                .map(|(i, p)| (i as u64, *p))
                .collect(),
        );
        let focus_index = SpatialIndex::build(build_focus_items(&pois));

        Ok(Self {
            edges,
            node_positions,
            adjacency,
            intersections,
            pois,
            bus_stops,
            edge_index,
            intersection_index,
            bus_stop_index,
            focus_index,
        })
    }

    pub fn edges(&self) -> &[RoadEdge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &RoadEdge {
        &self.edges[id.0 as usize]
    }

    /// Graph nodes shared by at least two distinct drivable ways,
    /// ordered by source node identifier.
    pub fn intersections(&self) -> &[GeoPoint] {
        &self.intersections
    }

    pub fn bus_stops(&self) -> &[GeoPoint] {
        &self.bus_stops
    }

    /// Replaces the bus-stop layer, e.g. with an external catalog.
    pub fn replace_bus_stops(&mut self, stops: Vec<GeoPoint>) {
        self.bus_stop_index = SpatialIndex::build(
            stops
                .iter()
                .enumerate()
                .map(|(i, p)| (i as u64, *p))
                .collect(),
        );
        self.bus_stops = stops;
    }

    pub fn focus_points(&self, kind: FocusPointKind) -> &[GeoPoint] {
        self.pois.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Edges with any geometry segment within `radius_m` of `p`: the
    /// closest polyline point, its distance, and the offset from the edge
    /// start, sorted by ascending distance (edge id breaks ties).
    pub fn nearest_edges(&self, p: GeoPoint, radius_m: f64) -> Vec<EdgeCandidate> {
        let mut best: HashMap<u32, (f64, GeoPoint, f64)> = HashMap::new();
        for (ei, si) in self.edge_index.query(p, radius_m) {
            let e = &self.edges[ei as usize];
            let (a, b) = (e.geometry[si as usize], e.geometry[si as usize + 1]);
            let proj = project_onto_segment(p, a, b);
            let seg_len = e.cum_m[si as usize + 1] - e.cum_m[si as usize];
            let offset = e.cum_m[si as usize] + proj.t * seg_len;
            let entry = best.entry(ei).or_insert((f64::INFINITY, p, 0.0));
            // strict improvement keeps the lowest segment index on ties
            if proj.distance_m < entry.0 {
                *entry = (proj.distance_m, proj.point, offset);
            }
        }
        let mut out: Vec<EdgeCandidate> = best
            .into_iter()
            .filter(|(_, (d, _, _))| *d <= radius_m)
            .map(|(ei, (d, point, offset_m))| EdgeCandidate {
                edge: EdgeId(ei),
                point,
                distance_m: d,
                offset_m,
            })
            .collect();
        out.sort_by(|a, b| {
            a.distance_m
                .partial_cmp(&b.distance_m)
                .unwrap()
                .then(a.edge.cmp(&b.edge))
        });
        out
    }

    /// Intersection points within `radius_m` of `p`.
    pub fn intersections_near(&self, p: GeoPoint, radius_m: f64) -> Vec<GeoPoint> {
        self.intersection_index
            .query_radius(p, radius_m)
            .into_iter()
            .map(|i| self.intersections[i as usize])
            .collect()
    }

    pub fn has_intersection_near(&self, p: GeoPoint, radius_m: f64) -> bool {
        !self.intersection_index.query_radius(p, radius_m).is_empty()
    }

    pub fn has_bus_stop_near(&self, p: GeoPoint, radius_m: f64) -> bool {
        !self.bus_stop_index.query_radius(p, radius_m).is_empty()
    }

    /// Distinct focus-point kinds with any feature within `radius_m`.
    pub fn focus_kinds_near(&self, p: GeoPoint, radius_m: f64) -> Vec<FocusPointKind> {
        let mut kinds: Vec<FocusPointKind> = self
            .focus_index
            .query_radius(p, radius_m)
            .into_iter()
            .map(|id| FocusPointKind::ALL[(id >> 32) as usize])
            .collect();
        kinds.sort_unstable();
        kinds.dedup();
        kinds
    }

    pub(crate) fn outgoing(&self, node: u32) -> &[(u32, bool)] {
        &self.adjacency[node as usize]
    }

    pub(crate) fn node_count(&self) -> usize {
        self.node_positions.len()
    }
}

fn build_focus_items(pois: &BTreeMap<FocusPointKind, Vec<GeoPoint>>) -> Vec<(u64, GeoPoint)> {
    let mut items = Vec::new();
    for (kind, points) in pois {
        let ki = FocusPointKind::ALL.iter().position(|k| k == kind).unwrap() as u64;
        for (i, p) in points.iter().enumerate() {
            items.push(((ki << 32) | i as u64, *p));
        }
    }
    items
}

fn dedup_closing(refs: &[i64]) -> Vec<i64> {
    let mut out: Vec<i64> = refs.to_vec();
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

/// Drops geometry points that coincide with their predecessor.
fn dedup_coincident(geometry: Vec<GeoPoint>) -> Vec<GeoPoint> {
    let mut out: Vec<GeoPoint> = Vec::with_capacity(geometry.len());
    for p in geometry {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

/// Loads a bus-stop catalog CSV with header `stop_id,lat,lon`.
pub fn load_bus_stops_csv(path: impl AsRef<Path>) -> Result<Vec<GeoPoint>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let (Some(_), Some(lat_i), Some(lon_i)) = (find("stop_id"), find("lat"), find("lon")) else {
        return Err(Error::Parse {
            line: 1,
            message: "bus-stop catalog must have header stop_id,lat,lon".into(),
        });
    };
    let mut stops = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let parse = |idx: usize, what: &str| -> Result<f64> {
            record
                .get(idx)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("invalid {what}"),
                })
        };
        let lat = parse(lat_i, "lat")?;
        let lon = parse(lon_i, "lon")?;
        stops.push(GeoPoint::new(lat, lon).map_err(|_| Error::Parse {
            line,
            message: format!("coordinate out of range: {lat},{lon}"),
        })?);
    }
    Ok(stops)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Builds extract XML from (way_id, node refs, tags) over a node table.
    pub(crate) fn osm_xml(
        nodes: &[(i64, f64, f64)],
        node_tags: &[(i64, &str, &str)],
        ways: &[(i64, Vec<i64>, Vec<(&str, &str)>)],
    ) -> String {
        let mut s = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\">\n");
        for (id, lat, lon) in nodes {
            let tags: Vec<_> = node_tags.iter().filter(|(nid, _, _)| nid == id).collect();
            if tags.is_empty() {
                s.push_str(&format!("  <node id=\"{id}\" lat=\"{lat}\" lon=\"{lon}\"/>\n"));
            } else {
                s.push_str(&format!("  <node id=\"{id}\" lat=\"{lat}\" lon=\"{lon}\">\n"));
                for (_, k, v) in tags {
                    s.push_str(&format!("    <tag k=\"{k}\" v=\"{v}\"/>\n"));
                }
                s.push_str("  </node>\n");
            }
        }
        for (id, refs, tags) in ways {
            s.push_str(&format!("  <way id=\"{id}\">\n"));
            for r in refs {
                s.push_str(&format!("    <nd ref=\"{r}\"/>\n"));
            }
            for (k, v) in tags {
                s.push_str(&format!("    <tag k=\"{k}\" v=\"{v}\"/>\n"));
            }
            s.push_str("  </way>\n");
        }
        s.push_str("</osm>\n");
        s
    }

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn minimal_cross_splits_into_four_edges() {
        // two ways crossing at node 3
        let xml = osm_xml(
            &[
                (1, 42.000, -83.002),
                (2, 42.000, -82.998),
                (3, 42.000, -83.000),
                (4, 41.998, -83.000),
                (5, 42.002, -83.000),
            ],
            &[],
            &[
                (10, vec![1, 3, 2], vec![("highway", "residential")]),
                (11, vec![4, 3, 5], vec![("highway", "residential")]),
            ],
        );
        let net = RoadNetwork::from_xml(&xml, None).unwrap();
        assert_eq!(net.edges().len(), 4);
        assert_eq!(net.intersections().len(), 1);
        assert_eq!(net.intersections()[0], pt(42.0, -83.0));
    }

    #[test]
    fn footway_contributes_no_edges() {
        let xml = osm_xml(
            &[(1, 42.0, -83.0), (2, 42.001, -83.0), (3, 42.002, -83.0)],
            &[],
            &[
                (10, vec![1, 2], vec![("highway", "footway")]),
                (11, vec![2, 3], vec![("highway", "residential")]),
            ],
        );
        let net = RoadNetwork::from_xml(&xml, None).unwrap();
        assert_eq!(net.edges().len(), 1);
        assert_eq!(net.edges()[0].way_id, 11);
    }

    #[test]
    fn only_footways_is_an_empty_network() {
        let xml = osm_xml(
            &[(1, 42.0, -83.0), (2, 42.001, -83.0)],
            &[],
            &[(10, vec![1, 2], vec![("highway", "footway")])],
        );
        assert!(matches!(
            RoadNetwork::from_xml(&xml, None),
            Err(Error::EmptyNetwork)
        ));
    }

    /// 5x5 grid of ways: each row and each column is one way.
    fn grid5(spacing_deg: f64) -> (String, Vec<(i64, Vec<i64>)>) {
        let mut nodes = Vec::new();
        let mut ways = Vec::new();
        let id = |r: i64, c: i64| 100 + r * 10 + c;
        for r in 0..5 {
            for c in 0..5 {
                nodes.push((id(r, c), 42.0 + r as f64 * spacing_deg, -83.0 + c as f64 * spacing_deg));
            }
        }
        for r in 0..5i64 {
            ways.push((200 + r, (0..5).map(|c| id(r, c)).collect::<Vec<_>>()));
        }
        for c in 0..5i64 {
            ways.push((300 + c, (0..5).map(|r| id(r, c)).collect::<Vec<_>>()));
        }
        let way_specs: Vec<(i64, Vec<i64>, Vec<(&str, &str)>)> = ways
            .iter()
            .map(|(id, refs)| (*id, refs.clone(), vec![("highway", "residential")]))
            .collect();
        (osm_xml(&nodes, &[], &way_specs), ways)
    }

    #[test]
    fn grid_edge_count_and_intersections_match_brute_force() {
        let (xml, ways) = grid5(0.001);
        let net = RoadNetwork::from_xml(&xml, None).unwrap();
        assert_eq!(net.edges().len(), 40);

        // brute force from the generator's own way membership
        let mut membership: HashMap<i64, HashSet<i64>> = HashMap::new();
        for (wid, refs) in &ways {
            for r in refs {
                membership.entry(*r).or_default().insert(*wid);
            }
        }
        let expected = membership.values().filter(|w| w.len() >= 2).count();
        assert_eq!(net.intersections().len(), expected);
        assert_eq!(expected, 25);
    }

    #[test]
    fn splitting_preserves_total_length() {
        let (xml, ways) = grid5(0.0017);
        let net = RoadNetwork::from_xml(&xml, None).unwrap();
        let node_pos = |id: i64| {
            let r = (id - 100) / 10;
            let c = (id - 100) % 10;
            pt(42.0 + r as f64 * 0.0017, -83.0 + c as f64 * 0.0017)
        };
        let way_total: f64 = ways
            .iter()
            .map(|(_, refs)| {
                refs.windows(2)
                    .map(|w| great_circle_distance(node_pos(w[0]), node_pos(w[1])).meters())
                    .sum::<f64>()
            })
            .sum();
        let edge_total: f64 = net.edges().iter().map(|e| e.length_m).sum();
        assert_abs_diff_eq!(way_total, edge_total, epsilon = 1e-6);
    }

    #[test]
    fn parse_is_idempotent() {
        let (xml, _) = grid5(0.001);
        let a = RoadNetwork::from_xml(&xml, None).unwrap();
        let b = RoadNetwork::from_xml(&xml, None).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.intersections(), b.intersections());
    }

    #[test]
    fn single_way_has_no_intersections() {
        let xml = osm_xml(
            &[(1, 42.0, -83.0), (2, 42.001, -83.0), (3, 42.002, -83.0)],
            &[],
            &[(10, vec![1, 2, 3], vec![("highway", "primary")])],
        );
        let net = RoadNetwork::from_xml(&xml, None).unwrap();
        assert!(net.intersections().is_empty());
        assert_eq!(net.edges().len(), 1);
    }

    #[test]
    fn t_junction_yields_shared_node() {
        let xml = osm_xml(
            &[
                (1, 42.0, -83.001),
                (2, 42.0, -82.999),
                (3, 42.0, -83.0),
                (4, 42.001, -83.0),
            ],
            &[],
            &[
                (10, vec![1, 3, 2], vec![("highway", "residential")]),
                (11, vec![3, 4], vec![("highway", "residential")]),
            ],
        );
        let net = RoadNetwork::from_xml(&xml, None).unwrap();
        assert_eq!(net.intersections(), &[pt(42.0, -83.0)]);
    }

    #[test]
    fn default_limits_follow_the_class_table() {
        assert_abs_diff_eq!(
            default_speed_limit(HighwayClass::Motorway).unwrap(),
            112.65,
            epsilon = 0.01
        );
        assert_abs_diff_eq!(
            default_speed_limit(HighwayClass::Residential).unwrap(),
            40.23,
            epsilon = 0.01
        );
        assert!(matches!(
            default_speed_limit(HighwayClass::Other),
            Err(Error::NoDefault { class: "other" })
        ));
    }

    #[test]
    fn focus_points_and_bus_stops_from_node_tags() {
        let xml = osm_xml(
            &[(1, 42.0, -83.0), (2, 42.001, -83.0), (3, 42.002, -83.0)],
            &[
                (1, "highway", "traffic_signals"),
                (2, "highway", "bus_stop"),
                (3, "highway", "elephant_crossing"),
            ],
            &[(10, vec![1, 2, 3], vec![("highway", "residential")])],
        );
        let net = RoadNetwork::from_xml(&xml, None).unwrap();
        assert_eq!(net.focus_points(FocusPointKind::TrafficSignal).len(), 1);
        assert_eq!(net.bus_stops().len(), 1);
        // unknown kinds are ignored, never coerced
        let total: usize = FocusPointKind::ALL
            .iter()
            .map(|k| net.focus_points(*k).len())
            .count();
        assert_eq!(total, 16);
        let nonempty: usize = FocusPointKind::ALL
            .iter()
            .map(|k| net.focus_points(*k).len())
            .sum();
        assert_eq!(nonempty, 1);
    }

    #[test]
    fn nearest_edges_examples() {
        let xml = osm_xml(
            &[(1, 42.0, -83.001), (2, 42.0, -82.999)],
            &[],
            &[(10, vec![1, 2], vec![("highway", "residential")])],
        );
        let net = RoadNetwork::from_xml(&xml, None).unwrap();

        // exactly on a vertex
        let hits = net.nearest_edges(pt(42.0, -83.001), 10.0);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].edge, EdgeId(0));
        assert!(hits[0].distance_m < 1e-9);
        assert!(hits[0].offset_m.abs() < 1e-9);

        // 5 m perpendicular offset from the midpoint
        let mid = pt(42.0, -83.0).offset_by_meters(0.0, 5.0).unwrap();
        let hits = net.nearest_edges(mid, 50.0);
        assert_eq!(hits.len(), 1);
        assert_abs_diff_eq!(hits[0].distance_m, 5.0, epsilon = 0.05);
    }

    #[test]
    fn nearest_edges_orders_parallel_roads() {
        // two parallel east-west streets 20 m apart
        let base = pt(42.0, -83.0);
        let north = base.offset_by_meters(0.0, 20.0).unwrap();
        let far = base.offset_by_meters(200.0, 0.0).unwrap();
        let north_far = north.offset_by_meters(200.0, 0.0).unwrap();
        let xml = osm_xml(
            &[
                (1, base.lat(), base.lon()),
                (2, far.lat(), far.lon()),
                (3, north.lat(), north.lon()),
                (4, north_far.lat(), north_far.lon()),
            ],
            &[],
            &[
                (10, vec![1, 2], vec![("highway", "residential")]),
                (11, vec![3, 4], vec![("highway", "residential")]),
            ],
        );
        let net = RoadNetwork::from_xml(&xml, None).unwrap();
        // 5 m from the south street, 15 m from the north one
        let p = base.offset_by_meters(100.0, 5.0).unwrap();
        let hits = net.nearest_edges(p, 50.0);
        assert_eq!(hits.len(), 2);
        assert!(hits[0].distance_m < hits[1].distance_m);
        assert_eq!(net.edge(hits[0].edge).way_id, 10);
        assert!(hits.iter().all(|h| h.distance_m <= 50.0));
    }

    #[test]
    fn oneway_reverse_normalizes_geometry_and_tags() {
        let xml = osm_xml(
            &[(1, 42.0, -83.0), (2, 42.001, -83.0)],
            &[],
            &[(
                10,
                vec![1, 2],
                vec![
                    ("highway", "residential"),
                    ("oneway", "-1"),
                    ("maxspeed:forward", "50 mph"),
                    ("maxspeed:backward", "35 mph"),
                ],
            )],
        );
        let net = RoadNetwork::from_xml(&xml, None).unwrap();
        let e = &net.edges()[0];
        assert!(e.oneway);
        assert_eq!(e.geometry[0], pt(42.001, -83.0));
        assert_eq!(e.tags["maxspeed:forward"], "35 mph");
        assert_eq!(e.tags["maxspeed:backward"], "50 mph");
    }

    #[test]
    fn bbox_clips_nodes_and_ways() {
        let xml = osm_xml(
            &[(1, 42.0, -83.0), (2, 42.001, -83.0), (3, 50.0, -83.0)],
            &[],
            &[(10, vec![1, 2, 3], vec![("highway", "residential")])],
        );
        let net = RoadNetwork::from_xml(
            &xml,
            Some(BoundingBox {
                min_lat: 41.0,
                min_lon: -84.0,
                max_lat: 43.0,
                max_lon: -82.0,
            }),
        )
        .unwrap();
        assert_eq!(net.edges().len(), 1);
        assert_eq!(net.edges()[0].geometry.len(), 2);
    }

    #[test]
    fn roundabout_way_becomes_focus_centroid() {
        let xml = osm_xml(
            &[
                (1, 42.000, -83.000),
                (2, 42.000, -82.9996),
                (3, 42.0004, -82.9996),
                (4, 42.0004, -83.000),
            ],
            &[],
            &[(
                10,
                vec![1, 2, 3, 4, 1],
                vec![("highway", "residential"), ("junction", "roundabout")],
            )],
        );
        let net = RoadNetwork::from_xml(&xml, None).unwrap();
        let pts = net.focus_points(FocusPointKind::Roundabout);
        assert_eq!(pts.len(), 1);
        assert_abs_diff_eq!(pts[0].lat(), 42.0002, epsilon = 1e-9);
        assert_abs_diff_eq!(pts[0].lon(), -82.9998, epsilon = 1e-9);
        // implied one-way
        assert!(net.edges().iter().all(|e| e.oneway));
    }

    #[test]
    fn intersections_do_not_depend_on_way_order() {
        let nodes = [
            (1, 42.000, -83.002),
            (2, 42.000, -82.998),
            (3, 42.000, -83.000),
            (4, 41.998, -83.000),
            (5, 42.002, -83.000),
        ];
        let forward = osm_xml(
            &nodes,
            &[],
            &[
                (10, vec![1, 3, 2], vec![("highway", "residential")]),
                (11, vec![4, 3, 5], vec![("highway", "residential")]),
            ],
        );
        let reversed = osm_xml(
            &nodes,
            &[],
            &[
                (11, vec![4, 3, 5], vec![("highway", "residential")]),
                (10, vec![1, 3, 2], vec![("highway", "residential")]),
            ],
        );
        let a = RoadNetwork::from_xml(&forward, None).unwrap();
        let b = RoadNetwork::from_xml(&reversed, None).unwrap();
        assert_eq!(a.intersections(), b.intersections());
    }

    #[test]
    fn bus_stop_catalog_loads_and_replaces() {
        let dir = std::env::temp_dir().join("trace_enrich_bus_stops_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("stops.csv");
        std::fs::write(&path, "stop_id,lat,lon\nA1,42.28,-83.74\nA2,42.29,-83.75\n").unwrap();
        let stops = load_bus_stops_csv(&path).unwrap();
        assert_eq!(stops.len(), 2);
        assert_eq!(stops[0], pt(42.28, -83.74));

        std::fs::write(&path, "stop_id,lat,lon\nA1,not_a_number,-83.74\n").unwrap();
        assert!(matches!(
            load_bus_stops_csv(&path),
            Err(Error::Parse { line: 2, .. })
        ));
        std::fs::write(&path, "id,latitude\nx,1\n").unwrap();
        assert!(load_bus_stops_csv(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bearing_at_offset_uses_containing_segment() {
        let e = RoadEdge::new(
            EdgeId(0),
            1,
            vec![pt(42.0, -83.0), pt(42.001, -83.0), pt(42.001, -82.999)],
            HighwayClass::Residential,
            BTreeMap::new(),
        )
        .unwrap();
        // first segment points north, second east
        assert_abs_diff_eq!(e.bearing_at_offset(10.0).unwrap().radians(), 0.0, epsilon = 1e-6);
        let east = e.bearing_at_offset(e.length_m - 10.0).unwrap().radians();
        assert_abs_diff_eq!(east, std::f64::consts::FRAC_PI_2, epsilon = 1e-3);
    }
}
