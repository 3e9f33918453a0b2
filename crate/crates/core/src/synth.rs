//! Synthetic cyclone scenes with known centers and controlled label noise.
//!
//! Each scene holds one labeled Rankine vortex, sometimes a weaker unlabeled
//! distractor, and Gaussian background wind. A fraction of labels is displaced
//! by several grid boxes to imitate track archives that disagree with the wind
//! field they are paired with.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{bearing_rad, cell_center, cell_index, great_circle_km, in_basin, CellIndex, GeoPoint, GridSpec};

/// Largest admissible wind component, m/s.
pub const MAX_WIND: f64 = 150.0;

/// Probability that a generated scene carries an unlabeled second vortex.
pub const DISTRACTOR_PROB: f64 = 0.2;

/// Deterministic generator for stream `stream` of a seeded run.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn synthetic_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(1980, 1, 1, 0, 0, 0).unwrap()
}

/// Two-channel wind snapshot. `u` is eastward and `v` northward, both stored
/// row-major with row 0 at the southern edge.
#[derive(Clone, Debug, PartialEq)]
pub struct WindField {
    pub grid: GridSpec,
    pub timestamp: DateTime<Utc>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl WindField {
    pub fn new(grid: GridSpec, timestamp: DateTime<Utc>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let field = Self { grid, timestamp, u, v };
        field.validate()?;
        Ok(field)
    }

    pub fn zeros(grid: GridSpec, timestamp: DateTime<Utc>) -> Self {
        let n = grid.cells();
        Self { grid, timestamp, u: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.cells();
        if self.u.len() != n || self.v.len() != n {
            return Err(Error::Dimension(format!(
                "wind planes have {}/{} values, grid needs {n}",
                self.u.len(),
                self.v.len()
            )));
        }
        for (name, plane) in [("u", &self.u), ("v", &self.v)] {
            if let Some(bad) = plane.iter().find(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("{name} component contains {bad}")));
            }
            if let Some(big) = plane.iter().find(|x| x.abs() > MAX_WIND) {
                return Err(Error::InvalidArgument(format!(
                    "{name} component {big} exceeds {MAX_WIND} m/s"
                )));
            }
        }
        Ok(())
    }

    pub fn speed(&self, flat: usize) -> f64 {
        self.u[flat].hypot(self.v[flat])
    }

    /// Rounds every component through `f32`, the on-disk precision.
    pub fn quantize_f32(&mut self) {
        for x in self.u.iter_mut().chain(self.v.iter_mut()) {
            *x = *x as f32 as f64;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spin {
    /// Counter-clockwise in the northern hemisphere.
    Cyclonic,
    Anticyclonic,
}

impl Spin {
    pub fn sign(self) -> f64 {
        match self {
            Spin::Cyclonic => 1.0,
            Spin::Anticyclonic => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VortexSpec {
    pub center: GeoPoint,
    /// Peak tangential wind, m/s.
    pub v_max: f64,
    /// Radius of peak wind, km.
    pub r_max: f64,
    pub spin: Spin,
}

impl VortexSpec {
    pub fn new(center: GeoPoint, v_max: f64, r_max: f64, spin: Spin) -> Result<Self> {
        if !(v_max > 5.0 && v_max <= 80.0) {
            return Err(Error::InvalidArgument(format!("v_max {v_max} outside (5, 80] m/s")));
        }
        if !(r_max > 20.0 && r_max <= 500.0) {
            return Err(Error::InvalidArgument(format!("r_max {r_max} outside (20, 500] km")));
        }
        Ok(Self { center, v_max, r_max, spin })
    }

    /// Tangential speed at distance `r` km from the center.
    pub fn speed_at(&self, r: f64) -> f64 {
        if r <= self.r_max {
            self.v_max * r / self.r_max
        } else {
            self.v_max * self.r_max / r
        }
    }

    /// (u, v) components of the tangential wind at `p`.
    pub fn wind_at(&self, p: GeoPoint) -> (f64, f64) {
        let r = great_circle_km(self.center, p);
        if r == 0.0 {
            return (0.0, 0.0);
        }
        let s = self.spin.sign() * self.speed_at(r);
        let theta = bearing_rad(self.center, p);
        // Outward radial unit vector is (sin θ, cos θ) in (east, north);
        // rotating it a quarter turn counter-clockwise gives (-cos θ, sin θ).
        (-s * theta.cos(), s * theta.sin())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub corrupt_prob: f64,
    pub offset_min_cells: usize,
    pub offset_max_cells: usize,
    /// Standard deviation of i.i.d. background wind, m/s.
    pub background_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { corrupt_prob: 0.25, offset_min_cells: 3, offset_max_cells: 10, background_sigma: 2.0 }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corrupt_prob) {
            return Err(Error::InvalidArgument(format!("corrupt_prob {} outside [0, 1]", self.corrupt_prob)));
        }
        if self.offset_min_cells < 1 || self.offset_max_cells <= self.offset_min_cells {
            return Err(Error::InvalidArgument(format!(
                "offset range [{}, {}] must satisfy 1 <= min < max",
                self.offset_min_cells, self.offset_max_cells
            )));
        }
        if !(self.background_sigma >= 0.0 && self.background_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("background_sigma {} must be >= 0", self.background_sigma)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub field: WindField,
    /// Training target, possibly displaced from the true center.
    pub label_cell: CellIndex,
    /// Ground truth; only known for synthetic scenes.
    pub true_cell: Option<CellIndex>,
    pub corrupted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid: GridSpec,
    pub seed: u64,
    pub samples: Vec<Sample>,
    /// Parallel to `samples`.
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample indices tagged with `split`, in dataset order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits.iter().enumerate().filter(|(_, s)| **s == split).map(|(i, _)| i).collect()
    }

    pub fn split_samples(&self, split: Split) -> Vec<&Sample> {
        self.indices(split).into_iter().map(|i| &self.samples[i]).collect()
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.splits {
            counts[s.code() as usize] += 1;
        }
        counts
    }
}

/// Analytic Rankine vortex sampled at every cell center.
pub fn rankine_wind(spec: &VortexSpec, grid: &GridSpec) -> WindField {
    let mut field = WindField::zeros(*grid, synthetic_epoch());
    add_vortex(&mut field, spec);
    field
}

fn add_vortex(field: &mut WindField, spec: &VortexSpec) {
    let grid = field.grid;
    for row in 0..grid.height {
        for col in 0..grid.width {
            let flat = row * grid.width + col;
            let p = cell_center(CellIndex { row, col, flat }, &grid);
            let (u, v) = spec.wind_at(p);
            field.u[flat] += u;
            field.v[flat] += v;
        }
    }
}

/// Superposes 1-3 vortices and Gaussian background wind.
pub fn compose_scene<R: Rng + ?Sized>(
    vortices: &[VortexSpec],
    noise: &NoiseModel,
    rng: &mut R,
    grid: &GridSpec,
) -> Result<WindField> {
    if vortices.is_empty() || vortices.len() > 3 {
        return Err(Error::InvalidArgument(format!("scene needs 1-3 vortices, got {}", vortices.len())));
    }
    if let Some(bad) = vortices.iter().find(|v| !in_basin(v.center)) {
        return Err(Error::OutOfBasin { lat: bad.center.lat, lon: bad.center.lon });
    }
    let mut field = WindField::zeros(*grid, synthetic_epoch());
    for spec in vortices {
        add_vortex(&mut field, spec);
    }
    if noise.background_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.background_sigma)
            .map_err(|e| Error::InvalidArgument(format!("background noise: {e}")))?;
        for x in field.u.iter_mut().chain(field.v.iter_mut()) {
            *x += normal.sample(rng);
        }
    }
    field.validate()?;
    Ok(field)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorruptedLabel {
    pub cell: CellIndex,
    pub corrupted: bool,
    /// Set when the drawn offset left the grid and was clamped back onto it.
    pub clamped: bool,
}

/// Displaces a label with probability `corrupt_prob` by a random offset whose
/// Chebyshev norm lies in `[offset_min_cells, offset_max_cells]`.
pub fn corrupt_label<R: Rng + ?Sized>(
    true_cell: CellIndex,
    noise: &NoiseModel,
    rng: &mut R,
    grid: &GridSpec,
) -> CorruptedLabel {
    let coin: f64 = rng.random();
    if coin >= noise.corrupt_prob {
        return CorruptedLabel { cell: true_cell, corrupted: false, clamped: false };
    }
    let max = noise.offset_max_cells as i64;
    let min = noise.offset_min_cells as i64;
    let (dr, dc) = loop {
        let dr = rng.random_range(-max..=max);
        let dc = rng.random_range(-max..=max);
        if dr.abs().max(dc.abs()) >= min {
            break (dr, dc);
        }
    };
    let r = true_cell.row as i64 + dr;
    let c = true_cell.col as i64 + dc;
    let rc = r.clamp(0, grid.height as i64 - 1);
    let cc = c.clamp(0, grid.width as i64 - 1);
    let (row, col) = (rc as usize, cc as usize);
    CorruptedLabel {
        cell: CellIndex { row, col, flat: row * grid.width + col },
        corrupted: true,
        clamped: rc != r || cc != c,
    }
}

/// Uniform center at least `margin` cells inside the grid edge.
fn random_center<R: Rng + ?Sized>(rng: &mut R, grid: &GridSpec, margin: f64) -> GeoPoint {
    let lat = grid.lat0 + rng.random_range(margin..(grid.height - 1) as f64 - margin) * grid.dlat;
    let lon = grid.lon0 + rng.random_range(margin..(grid.width - 1) as f64 - margin) * grid.dlon;
    GeoPoint::new(lat, lon)
}

fn generate_sample(index: usize, noise: &NoiseModel, seed: u64, grid: &GridSpec) -> Result<Sample> {
    let mut rng = seeded_rng(seed, index as u64 + 1);
    let primary = VortexSpec::new(
        random_center(&mut rng, grid, 2.0),
        rng.random_range(25.0..55.0),
        rng.random_range(60.0..200.0),
        Spin::Cyclonic,
    )?;
    let mut vortices = vec![primary];
    if rng.random::<f64>() < DISTRACTOR_PROB {
        // Keep the distractor clearly separated so the truth stays unambiguous.
        let min_sep = 4.0 * grid.cell_diagonal_km();
        let center = loop {
            let c = random_center(&mut rng, grid, 1.0);
            if great_circle_km(c, primary.center) >= min_sep {
                break c;
            }
        };
        let v_max = primary.v_max * rng.random_range(0.3..0.6);
        vortices.push(VortexSpec::new(center, v_max, rng.random_range(60.0..200.0), Spin::Cyclonic)?);
    }
    let mut field = compose_scene(&vortices, noise, &mut rng, grid)?;
    field.timestamp = synthetic_epoch() + Duration::hours(3 * index as i64);
    field.quantize_f32();
    let true_cell = cell_index(primary.center, grid)?;
    let label = corrupt_label(true_cell, noise, &mut rng, grid);
    Ok(Sample { field, label_cell: label.cell, true_cell: Some(true_cell), corrupted: label.corrupted })
}

/// Seeded 70/15/15 split tags for `n` samples.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let n_train = (n as f64 * 0.70).round() as usize;
    let n_val = ((n as f64 * 0.15).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed, 0));
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Generates `n` labeled scenes. Sample `i` draws only from its own stream
/// derived from `(seed, i)`, so output is independent of generation order.
pub fn build_dataset(n: usize, noise: &NoiseModel, seed: u64, grid: &GridSpec) -> Result<Dataset> {
    if n < 20 {
        return Err(Error::InvalidArgument(format!("dataset needs at least 20 samples, got {n}")));
    }
    grid.validate()?;
    noise.validate()?;
    let samples = (0..n).map(|i| generate_sample(i, noise, seed, grid)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset { grid: *grid, seed, samples, splits: assign_splits(n, seed) })
}
