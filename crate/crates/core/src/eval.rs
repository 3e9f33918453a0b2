//! Localization metrics, the denoising report and the simulated rater.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cell_center, great_circle_km, CellIndex, GridSpec};
use crate::stats::Preference;
use crate::synth::{Dataset, Sample, Split};
use crate::unet::{argmax, ModelState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    Label,
    Truth,
}

pub fn cell_distance_km(a: CellIndex, b: CellIndex, grid: &GridSpec) -> f64 {
    great_circle_km(cell_center(a, grid), cell_center(b, grid))
}

fn reference_cell(s: &Sample, reference: Reference) -> Result<CellIndex> {
    match reference {
        Reference::Label => Ok(s.label_cell),
        Reference::Truth => s.true_cell.ok_or_else(|| Error::Missing("sample has no ground-truth cell".into())),
    }
}

fn predicted_cell(model: &ModelState, s: &Sample) -> Result<CellIndex> {
    CellIndex::from_flat(model.predict_cell(&s.field)?, &model.config.grid)
}

/// Distance from the model's most probable box to the reference box.
pub fn localization_error(model: &ModelState, s: &Sample, reference: Reference) -> Result<f64> {
    let target = reference_cell(s, reference)?;
    Ok(cell_distance_km(predicted_cell(model, s)?, target, &model.config.grid))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub predicted: usize,
    pub label: usize,
    pub truth: Option<usize>,
    pub corrupted: bool,
    pub model_truth_km: Option<f64>,
    pub label_truth_km: Option<f64>,
    pub model_label_km: f64,
    pub prob_at_label: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub median_model_km: Option<f64>,
    pub median_label_km: Option<f64>,
    pub mean_model_km: Option<f64>,
    pub mean_label_km: Option<f64>,
}

impl ErrorSummary {
    fn over<'a>(records: impl Iterator<Item = &'a SampleRecord>) -> Self {
        let (mut model, mut label) = (Vec::new(), Vec::new());
        for r in records {
            if let (Some(m), Some(l)) = (r.model_truth_km, r.label_truth_km) {
                model.push(m);
                label.push(l);
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        Self {
            count: model.len(),
            median_model_km: median(&model),
            median_label_km: median(&label),
            mean_model_km: mean(&model),
            mean_label_km: mean(&label),
        }
    }

    /// Model closer to truth than the labels are, by median.
    pub fn model_beats_label(&self) -> bool {
        matches!((self.median_model_km, self.median_label_km), (Some(m), Some(l)) if m < l)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub records: Vec<SampleRecord>,
    /// All samples with known truth.
    pub all: ErrorSummary,
    /// Only samples whose label was corrupted.
    pub corrupted: ErrorSummary,
}

impl EvalReport {
    /// Tab-separated per-sample table.
    pub fn records_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.3}"));
        let mut s = String::from(
            "index\tpredicted\tlabel\ttruth\tcorrupted\tmodel_truth_km\tlabel_truth_km\tmodel_label_km\tprob_at_label\n",
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\t{:.6e}",
                r.index,
                r.predicted,
                r.label,
                r.truth.map_or(String::new(), |t| t.to_string()),
                u8::from(r.corrupted),
                opt(r.model_truth_km),
                opt(r.label_truth_km),
                r.model_label_km,
                r.prob_at_label
            );
        }
        s
    }

    /// One line per subset: split, subset, count, medians and means in km.
    pub fn summary_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.1}"));
        let mut s = String::new();
        for (name, sum) in [("all", &self.all), ("corrupted", &self.corrupted)] {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                self.split,
                name,
                sum.count,
                opt(sum.median_model_km),
                opt(sum.median_label_km),
                opt(sum.mean_model_km),
                opt(sum.mean_label_km)
            );
        }
        s
    }
}

pub const SUMMARY_HEADER: &str = "split\tsubset\tcount\tmedian_model_km\tmedian_label_km\tmean_model_km\tmean_label_km";

/// Per-sample model, label and truth distances over one split, summarized for
/// the whole split and for its corrupted subset.
pub fn denoising_report(model: &ModelState, data: &Dataset, split: Split) -> Result<EvalReport> {
    let indices = data.indices(split);
    if indices.is_empty() {
        return Err(Error::InvalidArgument(format!("split {split} is empty")));
    }
    let grid = &model.config.grid;
    let mut records = Vec::with_capacity(indices.len());
    for index in indices {
        let s = &data.samples[index];
        let probs = model.predict_proba(&s.field)?;
        let predicted = CellIndex::from_flat(argmax(&probs), grid)?;
        let truth_km = |c: CellIndex| s.true_cell.map(|t| cell_distance_km(c, t, grid));
        records.push(SampleRecord {
            index,
            predicted: predicted.flat,
            label: s.label_cell.flat,
            truth: s.true_cell.map(|c| c.flat),
            corrupted: s.corrupted,
            model_truth_km: truth_km(predicted),
            label_truth_km: truth_km(s.label_cell),
            model_label_km: cell_distance_km(predicted, s.label_cell, grid),
            prob_at_label: probs[s.label_cell.flat],
        });
    }
    let all = ErrorSummary::over(records.iter());
    let corrupted = ErrorSummary::over(records.iter().filter(|r| r.corrupted));
    Ok(EvalReport { split, records, all, corrupted })
}

/// Distance-only stand-in for a human rater: prefers whichever marker is
/// closer to the true center by more than one cell diagonal.
pub fn rate_markers(model_cell: CellIndex, label_cell: CellIndex, truth: CellIndex, grid: &GridSpec) -> Preference {
    let threshold = grid.cell_diagonal_km();
    let dm = cell_distance_km(model_cell, truth, grid);
    let dl = cell_distance_km(label_cell, truth, grid);
    if dl - dm > threshold {
        Preference::Model
    } else if dm - dl > threshold {
        Preference::Label
    } else {
        Preference::Neither
    }
}

pub fn simulated_rater(model: &ModelState, s: &Sample) -> Result<Preference> {
    let truth = reference_cell(s, Reference::Truth)?;
    Ok(rate_markers(predicted_cell(model, s)?, s.label_cell, truth, &model.config.grid))
}
