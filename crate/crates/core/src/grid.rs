//! Regular latitude/longitude grids over the basin and the geometry shared by
//! every other module.
//!
//! Row 0 is the southernmost row and column 0 the westernmost column; a cell is
//! addressed by the geographic coordinate of its center.

use chrono::{DateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for all distance math.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Western and eastern basin bounds, degrees east.
pub const BASIN_LON_MIN: f64 = 30.0;
pub const BASIN_LON_MAX: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Builds a point with longitude wrapped into `[0, 360)`.
    pub fn new(lat: f64, lon: f64) -> Self {
        let mut lon = lon.rem_euclid(360.0);
        if lon >= 360.0 {
            lon = 0.0;
        }
        Self { lat, lon }
    }
}

impl std::fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({:.3}N, {:.3}E)", self.lat, self.lon)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
    pub flat: usize,
}

impl CellIndex {
    pub fn from_row_col(row: usize, col: usize, grid: &GridSpec) -> Result<Self> {
        if row >= grid.height || col >= grid.width {
            return Err(Error::InvalidArgument(format!(
                "cell ({row}, {col}) outside {}x{} grid",
                grid.height, grid.width
            )));
        }
        Ok(Self { row, col, flat: row * grid.width + col })
    }

    pub fn from_flat(flat: usize, grid: &GridSpec) -> Result<Self> {
        if flat >= grid.cells() {
            return Err(Error::InvalidArgument(format!(
                "flat index {flat} outside grid of {} cells",
                grid.cells()
            )));
        }
        Ok(Self { row: flat / grid.width, col: flat % grid.width, flat })
    }

    /// Chebyshev (king-move) distance in cells.
    pub fn chebyshev(&self, other: &CellIndex) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }
}

/// Placement and resolution of a regular lat/lon grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Center latitude of row 0.
    pub lat0: f64,
    /// Center longitude of column 0.
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for GridSpec {
    /// 32 x 56 one-degree boxes with columns spanning 44-99 E.
    fn default() -> Self {
        Self { lat0: 0.0, lon0: 44.0, dlat: 1.0, dlon: 1.0, height: 32, width: 56 }
    }
}

impl GridSpec {
    pub fn new(lat0: f64, lon0: f64, dlat: f64, dlon: f64, height: usize, width: usize) -> Result<Self> {
        let grid = Self { lat0, lon0, dlat, dlon, height, width };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::InvalidGrid(format!(
                "grid must be at least 4x4, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.dlat > 0.0 && self.dlon > 0.0) || !self.dlat.is_finite() || !self.dlon.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got dlat={} dlon={}",
                self.dlat, self.dlon
            )));
        }
        if !self.lat0.is_finite() || !self.lon0.is_finite() {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        // Row 0 may sit on the equator; nothing may reach into the southern hemisphere.
        if self.lat0 < 0.0 || self.lat_max() >= 90.0 {
            return Err(Error::InvalidGrid(format!(
                "rows must span [0, 90) degrees north, got {}..{}",
                self.lat0,
                self.lat_max()
            )));
        }
        Ok(())
    }

    /// Checks that a network with `levels` resolution levels can pool this grid.
    pub fn check_divisible(&self, levels: usize) -> Result<()> {
        let div = 1usize << levels.saturating_sub(1);
        if self.height % div != 0 || self.width % div != 0 {
            return Err(Error::Dimension(format!(
                "grid {}x{} not divisible by {div} required by {levels} levels",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn lat_max(&self) -> f64 {
        self.lat0 + (self.height - 1) as f64 * self.dlat
    }

    pub fn lon_max(&self) -> f64 {
        self.lon0 + (self.width - 1) as f64 * self.dlon
    }

    /// Great-circle length of one cell diagonal at the grid origin.
    pub fn cell_diagonal_km(&self) -> f64 {
        great_circle_km(
            GeoPoint::new(self.lat0, self.lon0),
            GeoPoint::new(self.lat0 + self.dlat, self.lon0 + self.dlon),
        )
    }
}

/// Maps a point to the grid box whose center is nearest.
///
/// Exact half-cell ties round away from zero. Points up to half a cell beyond
/// the outer cell centers are clamped onto the edge cells; anything further is
/// rejected.
pub fn cell_index(p: GeoPoint, g: &GridSpec) -> Result<CellIndex> {
    let fr = (p.lat - g.lat0) / g.dlat;
    let fc = (p.lon - g.lon0) / g.dlon;
    let max_r = (g.height - 1) as f64;
    let max_c = (g.width - 1) as f64;
    if !fr.is_finite() || !fc.is_finite() || fr < -0.5 || fr > max_r + 0.5 || fc < -0.5 || fc > max_c + 0.5 {
        return Err(Error::OutOfBasin { lat: p.lat, lon: p.lon });
    }
    let row = fr.round().clamp(0.0, max_r) as usize;
    let col = fc.round().clamp(0.0, max_c) as usize;
    Ok(CellIndex { row, col, flat: row * g.width + col })
}

pub fn cell_center(c: CellIndex, g: &GridSpec) -> GeoPoint {
    GeoPoint::new(g.lat0 + c.row as f64 * g.dlat, g.lon0 + c.col as f64 * g.dlon)
}

/// Block-mean downsampling of a row-major `height x width` field.
pub fn coarsen(values: &[f64], height: usize, width: usize, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::Dimension("coarsening factor must be >= 1".into()));
    }
    if values.len() != height * width {
        return Err(Error::Dimension(format!(
            "field has {} values, expected {height}x{width}",
            values.len()
        )));
    }
    if height % factor != 0 || width % factor != 0 {
        return Err(Error::Dimension(format!(
            "{height}x{width} field not divisible by factor {factor}"
        )));
    }
    let (ch, cw) = (height / factor, width / factor);
    let norm = (factor * factor) as f64;
    let mut out = vec![0.0; ch * cw];
    for (r, row) in values.chunks_exact(width).enumerate() {
        let dst = &mut out[(r / factor) * cw..(r / factor + 1) * cw];
        for (c, &v) in row.iter().enumerate() {
            dst[c / factor] += v;
        }
    }
    for v in &mut out {
        *v /= norm;
    }
    Ok(out)
}

/// Keeps timestamps falling exactly on a 3-hourly synoptic time.
pub fn snap_filter(timestamps: &[DateTime<Utc>]) -> Vec<DateTime<Utc>> {
    timestamps.iter().copied().filter(|t| on_synoptic_hour(t)).collect()
}

pub fn on_synoptic_hour(t: &DateTime<Utc>) -> bool {
    t.hour() % 3 == 0 && t.minute() == 0 && t.second() == 0 && t.nanosecond() == 0
}

pub fn in_basin(p: GeoPoint) -> bool {
    p.lat > 0.0 && (BASIN_LON_MIN..=BASIN_LON_MAX).contains(&p.lon)
}

/// Haversine distance in kilometres.
pub fn great_circle_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat * 0.5).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon * 0.5).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Initial bearing from `from` to `to`, radians clockwise from north.
pub fn bearing_rad(from: GeoPoint, to: GeoPoint) -> f64 {
    let (lat1, lat2) = (from.lat.to_radians(), to.lat.to_radians());
    let dlon = (to.lon - from.lon).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    y.atan2(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn at(h: u32, m: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(1990, 5, 1, h, m, 0).unwrap()
    }

    #[test]
    fn default_grid_has_1792_cells() {
        let g = GridSpec::default();
        g.validate().unwrap();
        assert_eq!(g.cells(), 1792);
        assert_eq!(g.lon_max(), 99.0);
    }

    #[test]
    fn cell_index_examples() {
        let g = GridSpec::default();
        let c = cell_index(GeoPoint::new(0.0, 44.0), &g).unwrap();
        assert_eq!((c.row, c.col, c.flat), (0, 0, 0));
        let c = cell_index(GeoPoint::new(10.4, 75.7), &g).unwrap();
        assert_eq!((c.row, c.col, c.flat), (10, 32, 592));
        let c = cell_index(GeoPoint::new(31.0, 99.0), &g).unwrap();
        assert_eq!((c.row, c.col, c.flat), (31, 55, 1791));
    }

    #[test]
    fn cell_index_edges() {
        let g = GridSpec::default();
        // Half a cell outside is still accepted and clamped.
        let c = cell_index(GeoPoint::new(31.5, 99.5), &g).unwrap();
        assert_eq!(c.flat, 1791);
        assert!(matches!(
            cell_index(GeoPoint::new(33.0, 75.0), &g),
            Err(Error::OutOfBasin { .. })
        ));
        assert!(cell_index(GeoPoint::new(10.0, 40.0), &g).is_err());
        // Ties round away from zero.
        let c = cell_index(GeoPoint::new(10.5, 50.5), &g).unwrap();
        assert_eq!((c.row, c.col), (11, 7));
    }

    #[test]
    fn cell_center_examples() {
        let g = GridSpec::default();
        let p = cell_center(CellIndex::from_flat(0, &g).unwrap(), &g);
        assert_eq!((p.lat, p.lon), (0.0, 44.0));
        let p = cell_center(CellIndex::from_flat(592, &g).unwrap(), &g);
        assert_eq!((p.lat, p.lon), (10.0, 76.0));
        let p = cell_center(CellIndex::from_flat(1791, &g).unwrap(), &g);
        assert_eq!((p.lat, p.lon), (31.0, 99.0));
    }

    #[test]
    fn round_trip_all_default_cells() {
        let g = GridSpec::default();
        for flat in 0..g.cells() {
            let c = CellIndex::from_flat(flat, &g).unwrap();
            assert_eq!(cell_index(cell_center(c, &g), &g).unwrap(), c);
        }
    }

    #[test]
    fn coarsen_examples() {
        let field: Vec<f64> = (1..=16).map(f64::from).collect();
        assert_eq!(coarsen(&field, 4, 4, 4).unwrap(), vec![8.5]);
        let constant = vec![3.25; 12 * 8];
        assert!(coarsen(&constant, 12, 8, 2).unwrap().iter().all(|&v| v == 3.25));
        let big = vec![0.0; 128 * 224];
        assert_eq!(coarsen(&big, 128, 224, 4).unwrap().len(), 32 * 56);
        assert!(matches!(coarsen(&field, 4, 4, 3), Err(Error::Dimension(_))));
        assert_eq!(coarsen(&field, 4, 4, 1).unwrap(), field);
    }

    #[test]
    fn snap_filter_examples() {
        assert_eq!(snap_filter(&[at(3, 0), at(4, 30), at(6, 0)]), vec![at(3, 0), at(6, 0)]);
        assert_eq!(snap_filter(&[at(0, 0)]), vec![at(0, 0)]);
        assert!(snap_filter(&[at(1, 0), at(2, 0), at(22, 30)]).is_empty());
    }

    #[test]
    fn basin_examples() {
        assert!(in_basin(GeoPoint::new(10.0, 75.0)));
        assert!(!in_basin(GeoPoint::new(-5.0, 75.0)));
        assert!(!in_basin(GeoPoint::new(10.0, 120.0)));
        assert!(!in_basin(GeoPoint::new(0.0, 75.0)));
    }

    #[test]
    fn haversine_examples() {
        let a = GeoPoint::new(12.0, 60.0);
        assert_eq!(great_circle_km(a, a), 0.0);
        let d = great_circle_km(GeoPoint::new(0.0, 44.0), GeoPoint::new(1.0, 44.0));
        assert!((d - 111.19).abs() < 0.1, "{d}");
        let d = great_circle_km(GeoPoint::new(10.0, 70.0), GeoPoint::new(10.0, 71.0));
        assert!((d - 109.51).abs() < 0.1, "{d}");
    }

    #[test]
    fn bearing_cardinal_directions() {
        let o = GeoPoint::new(10.0, 70.0);
        assert!(bearing_rad(o, GeoPoint::new(11.0, 70.0)).abs() < 1e-12);
        let east = bearing_rad(o, GeoPoint::new(10.0, 71.0));
        assert!((east - std::f64::consts::FRAC_PI_2).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(0.0, 44.0, 1.0, 1.0, 3, 56).is_err());
        assert!(GridSpec::new(-1.0, 44.0, 1.0, 1.0, 32, 56).is_err());
        assert!(GridSpec::new(0.0, 44.0, 0.0, 1.0, 32, 56).is_err());
        assert!(GridSpec::default().check_divisible(4).is_ok());
        assert!(GridSpec::new(0.0, 44.0, 1.0, 1.0, 30, 56).unwrap().check_divisible(4).is_err());
    }

    fn point() -> impl Strategy<Value = GeoPoint> {
        (-80.0..80.0f64, 0.0..360.0f64).prop_map(|(lat, lon)| GeoPoint::new(lat, lon))
    }

    proptest! {
        #[test]
        fn coarsen_preserves_mean(vals in prop::collection::vec(-50.0..50.0f64, 8 * 12), k in prop::sample::select(vec![1usize, 2, 4])) {
            let coarse = coarsen(&vals, 8, 12, k).unwrap();
            let fine_mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let coarse_mean = coarse.iter().sum::<f64>() / coarse.len() as f64;
            prop_assert!((fine_mean - coarse_mean).abs() <= 1e-12 * fine_mean.abs().max(1.0));
        }

        #[test]
        fn distance_symmetric_and_triangle(a in point(), b in point(), c in point()) {
            let ab = great_circle_km(a, b);
            prop_assert!((ab - great_circle_km(b, a)).abs() < 1e-9);
            prop_assert!(ab <= great_circle_km(a, c) + great_circle_km(c, b) + 1e-6);
        }

        #[test]
        fn snap_filter_idempotent(hours in prop::collection::vec((0u32..24, prop::sample::select(vec![0u32, 15, 30])), 0..20)) {
            let ts: Vec<_> = hours.iter().map(|&(h, m)| at(h, m)).collect();
            let once = snap_filter(&ts);
            prop_assert_eq!(snap_filter(&once), once.clone());
        }

        #[test]
        fn flat_round_trips(row in 0usize..32, col in 0usize..56) {
            let g = GridSpec::default();
            let c = CellIndex::from_row_col(row, col, &g).unwrap();
            prop_assert_eq!(CellIndex::from_flat(c.flat, &g).unwrap(), c);
        }
    }
}
