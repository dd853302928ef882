//! Uniform-grid spatial index with exact radius queries.
//!
//! The grid only narrows the candidate set; every query re-checks the
//! great-circle distance, so results equal a brute-force scan.

use crate::geo::{great_circle_distance, GeoPoint, EARTH_RADIUS_M};
use crate::scalar::{cast, Scalar};

/// Default grid cell edge length in meters.
pub const DEFAULT_CELL_M: f64 = 100.0;

/// Upper bound on total grid cells; cell size grows to respect it.
const MAX_CELLS: usize = 1 << 22;

/// Meters per degree of latitude on the spherical model.
fn meters_per_degree<F: Scalar>() -> F {
    cast::<F>(EARTH_RADIUS_M * std::f64::consts::PI / 180.0)
}

/// Uniform lat/lon grid over a bounding box.
///
/// Cell spans are derived from a meter cell size using the most
/// conservative meters-per-degree conversion inside the box, so radius
/// covers never miss a cell that could hold a qualifying item.
#[derive(Debug, Clone)]
pub(crate) struct DegreeGrid<F: Scalar = f64> {
    min_lat: F,
    min_lon: F,
    dlat_cell: F,
    dlon_cell: F,
    rows: usize,
    cols: usize,
    cos_min: F,
}

impl<F: Scalar> DegreeGrid<F> {
    pub(crate) fn new(
        (min_lat, min_lon): (F, F),
        (max_lat, max_lon): (F, F),
        cell_m: F,
    ) -> Self {
        let m_per_deg = meters_per_degree::<F>();
        let worst_lat = max_lat.abs().max(min_lat.abs());
        let cos_min = worst_lat.to_radians().cos().max(cast(1e-9));

        let mut cell_m = cell_m.max(cast(1.0));
        loop {
            let dlat_cell = cell_m / m_per_deg;
            let dlon_cell = cell_m / (m_per_deg * cos_min);
            let rows = Self::extent(min_lat, max_lat, dlat_cell);
            let cols = Self::extent(min_lon, max_lon, dlon_cell);
            if rows.saturating_mul(cols) <= MAX_CELLS {
                return Self {
                    min_lat,
                    min_lon,
                    dlat_cell,
                    dlon_cell,
                    rows,
                    cols,
                    cos_min,
                };
            }
            cell_m = cell_m * cast(2.0);
        }
    }

    fn extent(min: F, max: F, step: F) -> usize {
        let span = (max - min).max(F::zero());
        let n = (span / step).floor().to_usize().unwrap_or(0) + 1;
        n.max(1)
    }

    pub(crate) fn cell_count(&self) -> usize {
        self.rows * self.cols
    }

    pub(crate) fn cell_of(&self, p: GeoPoint<F>) -> usize {
        let r = self.axis_cell(p.lat(), self.min_lat, self.dlat_cell, self.rows);
        let c = self.axis_cell(p.lon(), self.min_lon, self.dlon_cell, self.cols);
        r * self.cols + c
    }

    fn axis_cell(&self, v: F, min: F, step: F, n: usize) -> usize {
        let i = ((v - min) / step).floor().to_isize().unwrap_or(0);
        i.clamp(0, n as isize - 1) as usize
    }

    /// Cell ids intersecting a degree-space box, clamped to the grid.
    /// Returns `None` when the box lies entirely outside.
    pub(crate) fn cells_in_box(
        &self,
        lat_lo: F,
        lat_hi: F,
        lon_lo: F,
        lon_hi: F,
    ) -> Option<impl Iterator<Item = usize> + '_> {
        let max_lat = self.min_lat + self.dlat_cell * cast(self.rows as f64);
        let max_lon = self.min_lon + self.dlon_cell * cast(self.cols as f64);
        if lat_hi < self.min_lat || lat_lo > max_lat || lon_hi < self.min_lon || lon_lo > max_lon {
            return None;
        }
        let r0 = self.axis_cell(lat_lo, self.min_lat, self.dlat_cell, self.rows);
        let r1 = self.axis_cell(lat_hi, self.min_lat, self.dlat_cell, self.rows);
        let c0 = self.axis_cell(lon_lo, self.min_lon, self.dlon_cell, self.cols);
        let c1 = self.axis_cell(lon_hi, self.min_lon, self.dlon_cell, self.cols);
        let cols = self.cols;
        Some((r0..=r1).flat_map(move |r| (c0..=c1).map(move |c| r * cols + c)))
    }

    /// Degree-space box guaranteed to contain every point within
    /// `radius_m` of `center`.
    pub(crate) fn radius_box(&self, center: GeoPoint<F>, radius_m: F) -> (F, F, F, F) {
        let m_per_deg = meters_per_degree::<F>();
        let eps = cast::<F>(1e-9);
        let dlat = radius_m / m_per_deg + eps;

        // bound on the longitude span from the haversine inequality
        // sin(dlon/2) <= sin(r / 2R) / min cos(lat)
        let cos_bound = self
            .cos_min
            .min(center.lat_rad().cos().abs())
            .max(cast(1e-9));
        let half = cast::<F>(std::f64::consts::FRAC_PI_2);
        let ratio = (radius_m / cast(2.0 * EARTH_RADIUS_M)).min(half).sin() / cos_bound;
        let dlon = if ratio >= F::one() {
            cast::<F>(360.0)
        } else {
            (cast::<F>(2.0) * ratio.asin()).to_degrees() + eps
        };
        (
            center.lat() - dlat,
            center.lat() + dlat,
            center.lon() - dlon,
            center.lon() + dlon,
        )
    }
}

/// Radius-query index over identified points.
#[derive(Debug, Clone)]
pub struct SpatialIndex<F: Scalar = f64> {
    grid: Option<DegreeGrid<F>>,
    items: Vec<(u64, GeoPoint<F>)>,
    cells: Vec<Vec<u32>>,
}

impl<F: Scalar> SpatialIndex<F> {
    /// Builds an index with the default 100 m cell size.
    pub fn build(items: Vec<(u64, GeoPoint<F>)>) -> Self {
        Self::with_cell_size(items, cast(DEFAULT_CELL_M))
    }

    pub fn with_cell_size(items: Vec<(u64, GeoPoint<F>)>, cell_m: F) -> Self {
        if items.is_empty() {
            return Self {
                grid: None,
                items,
                cells: Vec::new(),
            };
        }
        let mut min_lat = items[0].1.lat();
        let mut max_lat = min_lat;
        let mut min_lon = items[0].1.lon();
        let mut max_lon = min_lon;
        for (_, p) in &items {
            min_lat = min_lat.min(p.lat());
            max_lat = max_lat.max(p.lat());
            min_lon = min_lon.min(p.lon());
            max_lon = max_lon.max(p.lon());
        }
        let grid = DegreeGrid::new((min_lat, min_lon), (max_lat, max_lon), cell_m);
        let mut cells = vec![Vec::new(); grid.cell_count()];
        for (i, (_, p)) in items.iter().enumerate() {
            cells[grid.cell_of(*p)].push(i as u32);
        }
        Self {
            grid: Some(grid),
            items,
            cells,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Ids of all items within `radius_m` (inclusive) of `center`,
    /// sorted ascending. An empty index yields an empty set.
    pub fn query_radius(&self, center: GeoPoint<F>, radius_m: F) -> Vec<u64> {
        let Some(grid) = &self.grid else {
            return Vec::new();
        };
        let (lat_lo, lat_hi, lon_lo, lon_hi) = grid.radius_box(center, radius_m);
        let Some(cell_ids) = grid.cells_in_box(lat_lo, lat_hi, lon_lo, lon_hi) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for cell in cell_ids {
            for &i in &self.cells[cell] {
                let (id, p) = self.items[i as usize];
                if great_circle_distance(center, p).meters() <= radius_m {
                    out.push(id);
                }
            }
        }
        out.sort_unstable();
        out
    }
}
