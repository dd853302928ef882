//! Pipeline configuration: a TOML file where every key can be overridden
//! by a command-line flag of the same dotted name.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use trace_enrich::{AnnotationRadii, BoundingBox, HmmParams};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub hmm: HmmConfig,
    #[serde(default)]
    pub radii: RadiiConfig,
    #[serde(default)]
    pub enrich: EnrichConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub io: IoConfig,
    /// Worker threads for trip processing; 0 uses all cores. Outputs are
    /// identical for any worker count.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Map extract in the XML interchange format.
    pub map: Option<PathBuf>,
    /// Input trip CSV files; a single path or a list.
    #[serde(default, deserialize_with = "one_or_many")]
    pub trips: Vec<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Elevation cache CSV (`lat5,lon5,elevation_m`); omitted means no
    /// elevation annotations.
    pub elevation_cache: Option<PathBuf>,
    /// Optional external bus-stop catalog (`stop_id,lat,lon`) replacing
    /// the stops parsed from the map extract.
    pub bus_stops: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            map: None,
            trips: Vec::new(),
            output_dir: default_output_dir(),
            elevation_cache: None,
            bus_stops: None,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn one_or_many<'de, D>(deserializer: D) -> std::result::Result<Vec<PathBuf>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(PathBuf),
        Many(Vec<PathBuf>),
    }
    Ok(match OneOrMany::deserialize(deserializer)? {
        OneOrMany::One(p) => vec![p],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// `[min_lat, min_lon, max_lat, max_lon]`; omitted loads the whole
    /// extract.
    pub bbox: Option<[f64; 4]>,
}

impl NetworkConfig {
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        self.bbox.map(|[min_lat, min_lon, max_lat, max_lon]| BoundingBox {
            min_lat,
            min_lon,
            max_lat,
            max_lon,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmConfig {
    pub sigma_z_m: f64,
    pub beta_m: f64,
    pub candidate_radius_m: f64,
    pub route_search_limit_m: f64,
    pub break_gap_s: f64,
}

impl Default for HmmConfig {
    fn default() -> Self {
        let p = HmmParams::default();
        Self {
            sigma_z_m: p.sigma_z_m,
            beta_m: p.beta_m,
            candidate_radius_m: p.candidate_radius_m,
            route_search_limit_m: p.route_search_limit_m,
            break_gap_s: p.break_gap_s,
        }
    }
}

impl HmmConfig {
    pub fn params(&self) -> HmmParams {
        HmmParams {
            sigma_z_m: self.sigma_z_m,
            beta_m: self.beta_m,
            candidate_radius_m: self.candidate_radius_m,
            route_search_limit_m: self.route_search_limit_m,
            break_gap_s: self.break_gap_s,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiiConfig {
    pub intersection_m: f64,
    pub bus_stop_m: f64,
    pub focus_m: f64,
}

impl Default for RadiiConfig {
    fn default() -> Self {
        let r = AnnotationRadii::default();
        Self {
            intersection_m: r.intersection_m,
            bus_stop_m: r.bus_stop_m,
            focus_m: r.focus_m,
        }
    }
}

impl RadiiConfig {
    pub fn radii(&self) -> AnnotationRadii {
        AnnotationRadii {
            intersection_m: self.intersection_m,
            bus_stop_m: self.bus_stop_m,
            focus_m: self.focus_m,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrichConfig {
    /// Enrichment fails (exit 4) when the unresolved-elevation fraction
    /// exceeds this. The default never fails.
    pub max_unresolved_elevation: f64,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        Self {
            max_unresolved_elevation: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Speed limit selecting records for the histogram and heatmap, km/h.
    pub limit_kmh: f64,
    pub speed_bin_kmh: f64,
    pub time_bin_min: f64,
    pub segment_len: usize,
    pub horizon_s: f64,
    /// Threshold for the reported below-speed fraction of the histogram.
    pub below_threshold_kmh: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            // 55 mph converted
            limit_kmh: 88.51392,
            speed_bin_kmh: 1.0,
            time_bin_min: 15.0,
            segment_len: 240,
            horizon_s: 30.0,
            below_threshold_kmh: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    /// Name of the per-record energy column in the input CSV.
    pub energy_column: String,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            energy_column: "Energy".to_string(),
        }
    }
}

impl PipelineConfig {
    /// Loads the TOML file (when given) and applies `--dotted.key value`
    /// overrides on top.
    pub fn load(path: Option<&std::path::Path>, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Value::Table(Default::default()),
        };
        for (key, value) in parse_override_pairs(overrides)? {
            apply_override(&mut doc, &key, &value)?;
        }
        // merge over the defaults so partial sections inherit the rest
        let defaults =
            toml::Value::try_from(PipelineConfig::default()).expect("defaults serialize");
        let merged = deep_merge(defaults, doc);
        let config: PipelineConfig = merged.try_into().context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hmm.sigma_z_m", self.hmm.sigma_z_m),
            ("hmm.beta_m", self.hmm.beta_m),
            ("hmm.candidate_radius_m", self.hmm.candidate_radius_m),
            ("hmm.route_search_limit_m", self.hmm.route_search_limit_m),
            ("hmm.break_gap_s", self.hmm.break_gap_s),
            ("radii.intersection_m", self.radii.intersection_m),
            ("radii.bus_stop_m", self.radii.bus_stop_m),
            ("radii.focus_m", self.radii.focus_m),
            ("analysis.speed_bin_kmh", self.analysis.speed_bin_kmh),
            ("analysis.time_bin_min", self.analysis.time_bin_min),
        ] {
            if !(v > 0.0) {
                bail!("configuration: {name} must be positive, got {v}");
            }
        }
        if self.analysis.segment_len == 0 {
            bail!("configuration: analysis.segment_len must be positive");
        }
        if !(0.0..=1.0).contains(&self.enrich.max_unresolved_elevation) {
            bail!("configuration: enrich.max_unresolved_elevation must be in [0, 1]");
        }
        Ok(())
    }
}

/// Tables merge key by key; any other overlay value replaces the base.
fn deep_merge(base: toml::Value, overlay: toml::Value) -> toml::Value {
    match (base, overlay) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(bv) => deep_merge(bv, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, overlay) => overlay,
    }
}

/// Splits raw trailing arguments into `(dotted key, value)` pairs.
/// Accepts `--key value` and `--key=value`.
fn parse_override_pairs(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            bail!("expected `--section.key value`, got `{arg}`");
        };
        if let Some((k, v)) = key.split_once('=') {
            pairs.push((k.to_string(), v.to_string()));
        } else {
            let value = it
                .next()
                .with_context(|| format!("missing value for override --{key}"))?;
            pairs.push((key.to_string(), value.clone()));
        }
    }
    Ok(pairs)
}

/// Sets a dotted key inside the TOML document, creating tables on the way.
fn apply_override(doc: &mut toml::Value, dotted: &str, raw: &str) -> Result<()> {
    let mut cursor = doc;
    let parts: Vec<&str> = dotted.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .with_context(|| format!("`{dotted}` does not address a table"))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cursor
        .as_table_mut()
        .with_context(|| format!("`{dotted}` does not address a table"))?;
    table.insert(parts[parts.len() - 1].to_string(), parse_scalar(raw));
    Ok(())
}

/// Interprets an override value: bool, integer, float, comma-separated
/// array, or string.
fn parse_scalar(raw: &str) -> toml::Value {
    match raw {
        "true" => return toml::Value::Boolean(true),
        "false" => return toml::Value::Boolean(false),
        _ => {}
    }
    if raw.contains(',') {
        let parts: Vec<&str> = raw.split(',').collect();
        if let Ok(floats) = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
        {
            return toml::Value::Array(floats.into_iter().map(toml::Value::Float).collect());
        }
        return toml::Value::Array(
            parts
                .into_iter()
                .map(|p| toml::Value::String(p.trim().to_string()))
                .collect(),
        );
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}
