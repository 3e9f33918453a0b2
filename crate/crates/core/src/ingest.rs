//! Ingestion of real gridded wind fields paired with a track-label table.
//!
//! The manifest is a comma-separated table preceded by one grid line:
//!
//! ```text
//! # height=128 width=224 lat0=-0.375 lon0=43.625 dlat=0.25 dlon=0.25 factor=4
//! timestamp,lat,lon,field_file
//! 1990-05-01T03:00:00Z,10.4,75.7,fields/0001.bin
//! ```
//!
//! `dlat`/`dlon` default to 0.25 degrees and `factor` to 4. Each field file
//! holds `height*width` little-endian f32 values of u followed by the same
//! number of v values. Relative paths resolve against the manifest directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Utc};

use crate::error::{Error, Result};
use crate::grid::{cell_index, coarsen, in_basin, on_synoptic_hour, GeoPoint, GridSpec};
use crate::synth::{assign_splits, Dataset, Sample, WindField};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceGrid {
    pub fine: GridSpec,
    pub factor: usize,
}

impl SourceGrid {
    /// Grid after block-mean coarsening; each coarse center is the centroid of
    /// its block of fine centers.
    pub fn coarse(&self) -> Result<GridSpec> {
        let k = self.factor as f64;
        if self.fine.height % self.factor != 0 || self.fine.width % self.factor != 0 {
            return Err(Error::Dimension(format!(
                "{}x{} source grid not divisible by factor {}",
                self.fine.height, self.fine.width, self.factor
            )));
        }
        GridSpec::new(
            self.fine.lat0 + (k - 1.0) / 2.0 * self.fine.dlat,
            self.fine.lon0 + (k - 1.0) / 2.0 * self.fine.dlon,
            self.fine.dlat * k,
            self.fine.dlon * k,
            self.fine.height / self.factor,
            self.fine.width / self.factor,
        )
    }
}

#[derive(Debug)]
pub struct Ingested {
    pub dataset: Dataset,
    pub dropped_off_synoptic: usize,
    pub dropped_multi_storm: usize,
}

#[derive(Debug)]
struct LabelRow {
    timestamp: DateTime<Utc>,
    point: GeoPoint,
    field_file: PathBuf,
}

fn parse_header(line: &str) -> Result<SourceGrid> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Ingest("manifest must start with a '# height=.. width=..' line".into()))?;
    let mut kv = BTreeMap::new();
    for tok in body.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Ingest(format!("malformed header token {tok:?}")))?;
        kv.insert(k, v);
    }
    let num = |key: &str, default: Option<f64>| -> Result<f64> {
        match kv.get(key) {
            Some(v) => v.parse().map_err(|_| Error::Ingest(format!("header {key}={v} is not a number"))),
            None => default.ok_or_else(|| Error::Ingest(format!("header is missing {key}="))),
        }
    };
    let fine = GridSpec {
        lat0: num("lat0", None)?,
        lon0: num("lon0", None)?,
        dlat: num("dlat", Some(0.25))?,
        dlon: num("dlon", Some(0.25))?,
        height: num("height", None)? as usize,
        width: num("width", None)? as usize,
    };
    let factor = num("factor", Some(4.0))? as usize;
    if factor == 0 {
        return Err(Error::Ingest("factor must be >= 1".into()));
    }
    Ok(SourceGrid { fine, factor })
}

pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(Error::Ingest(format!("unparseable timestamp {s:?}")))
}

fn parse_rows(text: &str, base: &Path) -> Result<Vec<LabelRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Ingest(e.to_string()))?.clone();
    let expected = ["timestamp", "lat", "lon", "field_file"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Ingest(format!("table header must be {}, got {:?}", expected.join(","), headers)));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Ingest(format!("row {}: {e}", i + 1)))?;
        let num = |j: usize| {
            rec[j].parse::<f64>().map_err(|_| Error::Ingest(format!("row {}: bad number {:?}", i + 1, &rec[j])))
        };
        rows.push(LabelRow {
            timestamp: parse_timestamp(&rec[0])?,
            point: GeoPoint::new(num(1)?, num(2)?),
            field_file: base.join(&rec[3]),
        });
    }
    Ok(rows)
}

fn load_field(path: &Path, src: &SourceGrid, coarse: GridSpec, timestamp: DateTime<Utc>) -> Result<WindField> {
    let bytes = fs::read(path).map_err(|e| Error::Missing(format!("field file {}: {e}", path.display())))?;
    let n = src.fine.cells();
    if bytes.len() != 8 * n {
        return Err(Error::Dimension(format!(
            "{} has {} bytes, expected {} for two {}x{} f32 planes",
            path.display(),
            bytes.len(),
            8 * n,
            src.fine.height,
            src.fine.width
        )));
    }
    let vals: Vec<f64> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    let (u, v) = vals.split_at(n);
    let (h, w) = (src.fine.height, src.fine.width);
    let mut field = WindField::new(coarse, timestamp, coarsen(u, h, w, src.factor)?, coarsen(v, h, w, src.factor)?)?;
    field.quantize_f32();
    Ok(field)
}

/// Builds a dataset from a manifest: drops off-synoptic timestamps and
/// timestamps with more than one storm, coarsens each field and maps the track
/// position to its grid box. Split tags come from `seed`.
pub fn ingest_table(manifest_path: impl AsRef<Path>, seed: u64) -> Result<Ingested> {
    let path = manifest_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Missing(format!("manifest {}: {e}", path.display())))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let src = parse_header(first)?;
    let coarse = src.coarse()?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut by_time: BTreeMap<DateTime<Utc>, Vec<LabelRow>> = BTreeMap::new();
    for row in parse_rows(rest, base)? {
        by_time.entry(row.timestamp).or_default().push(row);
    }

    let (mut off_synoptic, mut multi) = (0, 0);
    let mut samples = Vec::new();
    for (ts, rows) in by_time {
        if !on_synoptic_hour(&ts) {
            off_synoptic += 1;
            continue;
        }
        if rows.len() != 1 {
            // Several storms share one snapshot; differing files for one
            // timestamp means the manifest itself is inconsistent.
            if rows.iter().any(|r| r.field_file != rows[0].field_file) {
                return Err(Error::Ingest(format!("duplicate timestamp {ts} maps to different field files")));
            }
            multi += 1;
            continue;
        }
        let row = &rows[0];
        if !in_basin(row.point) {
            return Err(Error::OutOfBasin { lat: row.point.lat, lon: row.point.lon });
        }
        let field = load_field(&row.field_file, &src, coarse, ts)?;
        let label_cell = cell_index(row.point, &coarse)?;
        samples.push(Sample { field, label_cell, true_cell: None, corrupted: false });
    }
    let splits = assign_splits(samples.len(), seed);
    Ok(Ingested {
        dataset: Dataset { grid: coarse, seed, samples, splits },
        dropped_off_synoptic: off_synoptic,
        dropped_multi_storm: multi,
    })
}
