//! CSV schemas written by the command line. Each row type reads back with
//! [`read_rows`]; column names are the struct field names in order.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use seminj_core::toyflow::TrainingPair;

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("csv {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("csv {path}: header {found:?} does not match {expected:?}")]
    Header { path: String, expected: Vec<String>, found: Vec<String> },
}

type Result<T> = std::result::Result<T, TableError>;

/// One time-grid sample of one memorized path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub pair_id: usize,
    pub t: f64,
    pub x0_x: f64,
    pub x0_y: f64,
    pub x1_x: f64,
    pub x1_y: f64,
}

impl DatasetRow {
    pub fn expand(pairs: &[TrainingPair]) -> Vec<Self> {
        pairs
            .iter()
            .enumerate()
            .flat_map(|(pair_id, p)| {
                p.t_grid.iter().map(move |&t| DatasetRow { pair_id, t, x0_x: p.x0[0], x0_y: p.x0[1], x1_x: p.x1[0], x1_y: p.x1[1] })
            })
            .collect()
    }
}

/// State of one point at one integrator time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub point: usize,
    pub x: f64,
    pub y: f64,
}

/// A latent or generated point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub point: usize,
    pub x: f64,
    pub y: f64,
}

impl PointRow {
    pub fn from_flat(data: &[f64]) -> Vec<Self> {
        data.chunks_exact(2).enumerate().map(|(point, p)| PointRow { point, x: p[0], y: p[1] }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub shape: String,
    pub condition: String,
    pub repeat: usize,
    pub chamfer: f64,
    pub fit: f64,
}

/// Long-format sweep output: the cell parameters, then one report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub shape: String,
    pub n_erase: usize,
    pub delta: f64,
    pub center: f64,
    pub condition: String,
    pub repeat: usize,
    pub chamfer: f64,
    pub fit: f64,
}

pub const DATASET_COLUMNS: [&str; 6] = ["pair_id", "t", "x0_x", "x0_y", "x1_x", "x1_y"];
pub const TRAJECTORY_COLUMNS: [&str; 4] = ["t", "point", "x", "y"];
pub const POINT_COLUMNS: [&str; 3] = ["point", "x", "y"];
pub const LOSS_COLUMNS: [&str; 2] = ["epoch", "loss"];
pub const REPORT_COLUMNS: [&str; 5] = ["shape", "condition", "repeat", "chamfer", "fit"];
pub const SWEEP_COLUMNS: [&str; 8] = ["shape", "n_erase", "delta", "center", "condition", "repeat", "chamfer", "fit"];

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> TableError + '_ {
    move |source| TableError::Csv { path: path.display().to_string(), source }
}

/// Writes a header even when `rows` is empty.
pub fn write_rows<T: Serialize>(path: &Path, columns: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
    w.write_record(columns).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| csv_err(path)(e.into()))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path, columns: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let found: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
    if found != columns {
        return Err(TableError::Header {
            path: path.display().to_string(),
            expected: columns.iter().map(|c| c.to_string()).collect(),
            found,
        });
    }
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(csv_err(path))
}
