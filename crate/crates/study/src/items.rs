//! Seeded study items and the rater-facing payload.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use stormloc::grid::cell_center;
use stormloc::synth::seeded_rng;
use stormloc::{CellIndex, Dataset, GeoPoint, GridSpec, ModelState, Split, WindField};

use crate::error::StudyError;

#[derive(Clone, Debug, PartialEq)]
pub struct StudyItem {
    pub item_id: String,
    pub split: Split,
    pub sample_index: usize,
    pub model_cell: CellIndex,
    pub label_cell: CellIndex,
    pub marker_first: GeoPoint,
    pub marker_second: GeoPoint,
    /// Hidden assignment: true when the first marker is the model's.
    pub model_first: bool,
}

#[derive(Clone, Debug)]
pub struct SampledItems {
    pub items: Vec<StudyItem>,
    /// Set when the split held fewer than the requested number of samples.
    pub truncated: bool,
}

/// Draws `n` samples of `split` without replacement and randomizes marker
/// order per item, all from one stream of `seed`.
pub fn sample_study_items(
    data: &Dataset,
    split: Split,
    n: usize,
    seed: u64,
    model: &ModelState,
) -> Result<SampledItems, StudyError> {
    let pool = data.indices(split);
    if pool.is_empty() {
        return Err(StudyError::EmptySplit(split.to_string()));
    }
    let take = n.min(pool.len());
    let mut rng = seeded_rng(seed, 0);
    let picks = index::sample(&mut rng, pool.len(), take);
    let grid = &data.grid;
    let mut items = Vec::with_capacity(take);
    for (k, pick) in picks.into_iter().enumerate() {
        let sample_index = pool[pick];
        let s = &data.samples[sample_index];
        let model_cell = CellIndex::from_flat(model.predict_cell(&s.field)?, grid)?;
        let model_first: bool = rng.random();
        let (m, l) = (cell_center(model_cell, grid), cell_center(s.label_cell, grid));
        let (marker_first, marker_second) = if model_first { (m, l) } else { (l, m) };
        items.push(StudyItem {
            item_id: format!("{split}-{k:03}"),
            split,
            sample_index,
            model_cell,
            label_cell: s.label_cell,
            marker_first,
            marker_second,
            model_first,
        });
    }
    Ok(SampledItems { items, truncated: take < n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPayload {
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub height: usize,
    pub width: usize,
}

impl From<&GridSpec> for GridPayload {
    fn from(g: &GridSpec) -> Self {
        Self { lat0: g.lat0, lon0: g.lon0, dlat: g.dlat, dlon: g.dlon, height: g.height, width: g.width }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerPayload {
    pub lat: f64,
    pub lon: f64,
}

/// What a rater's client receives. Rows run south to north (row 0 at
/// `lat0`), columns west to east. It carries no trace of the assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemPayload {
    pub item_id: String,
    pub grid: GridPayload,
    pub u: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub markers: [MarkerPayload; 2],
    /// Probability overlay, only when the study is configured to show it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<Vec<Vec<f32>>>,
}

fn rows(values: &[f64], width: usize) -> Vec<Vec<f32>> {
    values.chunks(width).map(|r| r.iter().map(|&x| x as f32).collect()).collect()
}

impl ItemPayload {
    pub fn new(item: &StudyItem, field: &WindField, prob: Option<&[f64]>) -> Self {
        let w = field.grid.width;
        let marker = |p: GeoPoint| MarkerPayload { lat: p.lat, lon: p.lon };
        Self {
            item_id: item.item_id.clone(),
            grid: GridPayload::from(&field.grid),
            u: rows(&field.u, w),
            v: rows(&field.v, w),
            markers: [marker(item.marker_first), marker(item.marker_second)],
            prob: prob.map(|p| rows(p, w)),
        }
    }
}
