use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::engine::Ensemble;
use crate::error::{Error, Result};
use crate::model::PhysicalParams;
use crate::stats::{
    coarse_entropy, ensemble_position_mean, ensemble_position_variance, position_histogram, tv_to_uniform,
};

pub const CSV_HEADER: &str = "t,n_branches,n_effective,mean_x,var_x,coarse_entropy_nats,tv_uniform";

/// Round-trip precision: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRow {
    pub t: f64,
    pub n_branches: usize,
    pub n_effective: f64,
    pub mean_x: f64,
    pub var_x: f64,
    pub coarse_entropy_nats: f64,
    pub tv_uniform: f64,
}

impl SeriesRow {
    pub fn observe(e: &Ensemble, p: &PhysicalParams, bins: usize) -> Result<Self> {
        let h = position_histogram(e, p, bins)?;
        Ok(Self {
            t: e.time(),
            n_branches: e.len(),
            n_effective: e.effective_size(),
            mean_x: ensemble_position_mean(e)?,
            var_x: ensemble_position_variance(e)?,
            coarse_entropy_nats: coarse_entropy(&h),
            tv_uniform: tv_to_uniform(&h),
        })
    }

    fn to_csv(self) -> String {
        format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f64(self.t),
            self.n_branches,
            fmt_f64(self.n_effective),
            fmt_f64(self.mean_x),
            fmt_f64(self.var_x),
            fmt_f64(self.coarse_entropy_nats),
            fmt_f64(self.tv_uniform)
        )
    }
}

pub fn series_csv(rows: &[SeriesRow]) -> String {
    let mut out = String::with_capacity(160 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Real(f64),
    Int(i64),
    Text(String),
}

impl Metric {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Metric::Real(x) => Some(x),
            Metric::Int(i) => Some(i as f64),
            Metric::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Writes `contents` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let io = |what: &str, e: std::io::Error| Error::Io(format!("{what} {}: {e}", path.display()));
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io("cannot create directory for", e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{} has no file name", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| io("cannot create temporary file for", e))?;
    f.write_all(contents.as_bytes())
        .and_then(|_| f.sync_all())
        .map_err(|e| io("cannot write", e))?;
    fs::rename(&tmp, path).map_err(|e| io("cannot move temporary file onto", e))
}
