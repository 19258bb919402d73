//! CSV rows and all-or-nothing writes of result files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SENSITIVITY_CSV: &str = "sensitivity.csv";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const EFFICIENCY_CSV: &str = "efficiency.csv";
pub const EVENTS_CSV: &str = "events.csv";
pub const CONFIG_TXT: &str = "config.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub t: f64,
    pub size: u64,
    pub mean: f64,
    pub var: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub algorithm: String,
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "L")]
    pub l: u64,
    pub eps: f64,
    pub lambda: f64,
    pub kernel: String,
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(rename = "L")]
    pub l: u64,
    pub c_tot: f64,
    /// Slope fitted over this and all smaller `N`; empty below three points.
    pub slope_partial: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub t: f64,
    pub algorithm: String,
    pub t_run_per_run_sec: f64,
    pub total_variance: f64,
    pub inefficiency: f64,
}

/// Per-replicate mean event counts (cumulative to `t`) and label counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub t: f64,
    pub algorithm: String,
    pub count_1a: f64,
    pub count_1b: f64,
    pub count_1c: f64,
    pub count_2a: f64,
    pub count_2b: f64,
    pub count_2c: f64,
    pub count_3a: f64,
    pub count_3b: f64,
    pub count_fictitious: f64,
    pub n_plus: f64,
    pub n_common: f64,
    pub n_minus: f64,
}

pub fn to_csv_bytes<T: Serialize>(rows: &[T], path_hint: &Path) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::csv(path_hint, e))?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path_hint, e.into_error()))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::csv(path, e))
}

/// Files staged in memory and written together.
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let bytes = to_csv_bytes(rows, Path::new(name))?;
        self.add(name, bytes);
        Ok(())
    }

    /// Writes every file to a temporary name in `dir`, then renames them
    /// into place, so a failure leaves no partial result set behind.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let tmp = dir.join(format!(".{name}.partial"));
            if let Err(e) = fs::write(&tmp, bytes) {
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                return Err(Error::io(tmp, e));
            }
            staged.push((tmp, dir.join(name)));
        }
        let mut done = Vec::with_capacity(staged.len());
        for (tmp, dest) in staged {
            fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
            done.push(dest);
        }
        Ok(done)
    }
}
