//! Persistence: binary snapshots, CSV plot data and the run manifest.
//!
//! Snapshot layout: one text line `evodiff v1 n=<n> m=<m> N=<N_1,…> t=<t>`
//! followed by each component's values as row-major little-endian `f64`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

use crate::config::{config_to_string, AppConfig, ConfigError};
use crate::grid::{Grid, StateField};
use crate::growth::{GrowthLaw, JacobianMode};
use crate::operator::FluxConvention;
use crate::solver::{Termination, Trajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown export selector {0:?} (expected diagnostics, slices or final)")]
    UnknownSelector(String),
    #[error("trajectory holds no {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub n: usize,
    pub m: usize,
    pub counts: Vec<usize>,
    pub t: f64,
}

pub const SNAPSHOT_MAGIC: &str = "evodiff v1";

pub fn write_snapshot(path: &Path, grid: &Grid, state: &StateField) -> Result<(), IoError> {
    state
        .check(grid)
        .map_err(|e| IoError::Snapshot(e.to_string()))?;
    let counts: Vec<String> = grid.counts().iter().map(|c| c.to_string()).collect();
    let mut w = BufWriter::new(File::create(path).map_err(file_err(path))?);
    let header = format!(
        "{SNAPSHOT_MAGIC} n={} m={} N={} t={:?}\n",
        grid.dim(),
        state.components_len(),
        counts.join(","),
        state.t
    );
    let mut body = Vec::with_capacity(header.len() + 8 * grid.len() * state.components_len());
    body.extend_from_slice(header.as_bytes());
    for comp in &state.components {
        for v in comp {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&body).map_err(file_err(path))?;
    w.flush().map_err(file_err(path))
}

fn parse_header(line: &str) -> Result<SnapshotHeader, IoError> {
    let bad = |what: &str| IoError::Snapshot(format!("{what} in header {line:?}"));
    let rest = line
        .strip_prefix(SNAPSHOT_MAGIC)
        .ok_or_else(|| bad("missing magic"))?;
    let mut n = None;
    let mut m = None;
    let mut counts = None;
    let mut t = None;
    for tok in rest.split_whitespace() {
        let (key, val) = tok.split_once('=').ok_or_else(|| bad("bad token"))?;
        match key {
            "n" => n = val.parse().ok(),
            "m" => m = val.parse().ok(),
            "N" => {
                counts = val
                    .split(',')
                    .map(usize::from_str)
                    .collect::<Result<Vec<_>, _>>()
                    .ok()
            }
            "t" => t = val.parse().ok(),
            _ => return Err(bad("unknown key")),
        }
    }
    let header = SnapshotHeader {
        n: n.ok_or_else(|| bad("missing n"))?,
        m: m.ok_or_else(|| bad("missing m"))?,
        counts: counts.ok_or_else(|| bad("missing N"))?,
        t: t.ok_or_else(|| bad("missing t"))?,
    };
    if header.counts.len() != header.n || header.m == 0 {
        return Err(bad("inconsistent n, m, N"));
    }
    Ok(header)
}

pub fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, StateField), IoError> {
    let mut r = BufReader::new(File::open(path).map_err(file_err(path))?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(file_err(path))?;
    let header = parse_header(line.trim_end_matches('\n'))?;
    let len: usize = header.counts.iter().product();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(file_err(path))?;
    if bytes.len() != 8 * len * header.m {
        return Err(IoError::Snapshot(format!(
            "expected {} data bytes, found {}",
            8 * len * header.m,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let components = values.chunks(len).map(<[f64]>::to_vec).collect();
    let t = header.t;
    Ok((header, StateField::new(t, components)))
}

/// Which plot data to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotData {
    /// `diagnostics.csv`: one row per diagnostics record.
    Diagnostics,
    /// `slices.csv`: every snapshot along axis 0 through the middle of the other axes.
    Slices,
    /// `final.csv`: the final snapshot at every node.
    Final,
}

impl FromStr for PlotData {
    type Err = IoError;
    fn from_str(s: &str) -> Result<Self, IoError> {
        match s {
            "diagnostics" => Ok(PlotData::Diagnostics),
            "slices" => Ok(PlotData::Slices),
            "final" => Ok(PlotData::Final),
            other => Err(IoError::UnknownSelector(other.to_string())),
        }
    }
}

/// Header of `diagnostics.csv` for `m` components.
pub fn diagnostics_header(m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=m).map(|i| format!("l1_bulk_{i}")));
    h.extend((1..=m).map(|i| format!("l1_boundary_{i}")));
    h.extend(
        ["sup", "min", "evolving_mass", "lyapunov_p", "conservation_residual"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

/// Full-precision text form of a float.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_diagnostics_csv(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    let first = traj.diagnostics.first().ok_or(IoError::Empty("diagnostics"))?;
    let m = first.l1_bulk.len();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(diagnostics_header(m))?;
    for r in &traj.diagnostics {
        let mut row = vec![num(r.t)];
        row.extend(r.l1_bulk.iter().map(|v| num(*v)));
        row.extend(r.l1_boundary.iter().map(|v| num(*v)));
        row.push(num(r.sup));
        row.push(num(r.min));
        row.push(num(r.evolving_mass));
        row.push(r.lyapunov_p.map(num).unwrap_or_default());
        row.push(num(r.conservation_residual));
        w.write_record(&row)?;
    }
    w.flush().map_err(file_err(path))
}

fn write_slices_csv(path: &Path, grid: &Grid, traj: &Trajectory) -> Result<(), IoError> {
    let m = traj.final_state().components_len();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "x".to_string()];
    header.extend((1..=m).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    let mid: usize = (1..grid.dim())
        .map(|k| (grid.counts()[k] / 2) * grid.strides()[k])
        .sum();
    for snap in &traj.snapshots {
        for i in 0..grid.counts()[0] {
            let lin = mid + i * grid.strides()[0];
            let mut row = vec![num(snap.t), num(i as f64 * grid.spacing()[0])];
            row.extend(snap.components.iter().map(|c| num(c[lin])));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(file_err(path))
}

fn write_final_csv(path: &Path, grid: &Grid, traj: &Trajectory) -> Result<(), IoError> {
    let snap = traj.final_state();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=grid.dim()).map(|i| format!("x{i}")).collect();
    header.extend((1..=snap.components_len()).map(|i| format!("u{i}")));
    w.write_record(&header)?;
    for lin in 0..grid.len() {
        let mut row: Vec<String> = grid.coords(lin).into_iter().map(num).collect();
        row.extend(snap.components.iter().map(|c| num(c[lin])));
        w.write_record(&row)?;
    }
    w.flush().map_err(file_err(path))
}

/// Writes the selected plot data into `dir`; returns the files written.
pub fn export_plotdata(
    traj: &Trajectory,
    grid: &Grid,
    what: PlotData,
    dir: &Path,
) -> Result<Vec<PathBuf>, IoError> {
    if traj.snapshots.is_empty() {
        return Err(IoError::Empty("snapshots"));
    }
    std::fs::create_dir_all(dir).map_err(file_err(dir))?;
    let path = dir.join(match what {
        PlotData::Diagnostics => "diagnostics.csv",
        PlotData::Slices => "slices.csv",
        PlotData::Final => "final.csv",
    });
    match what {
        PlotData::Diagnostics => write_diagnostics_csv(&path, traj)?,
        PlotData::Slices => write_slices_csv(&path, grid, traj)?,
        PlotData::Final => write_final_csv(&path, grid, traj)?,
    }
    Ok(vec![path])
}

/// A departure from the source model's hypotheses that is active in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub key: String,
    pub detail: String,
}

/// Deviations active for a run with this growth law and flux convention.
pub fn active_deviations(law: &GrowthLaw, convention: FluxConvention) -> Vec<Deviation> {
    let mut out = vec![Deviation {
        key: "box-boundary".into(),
        detail: "rectangular box with exact normals instead of a smooth boundary".into(),
    }];
    let k1 = law
        .verify_bounds(200)
        .map(|b| b.k1)
        .unwrap_or(f64::NAN);
    if !(k1 > 0.0) {
        out.push(Deviation {
            key: "k1-relaxation".into(),
            detail: format!("minimum dilution rate k1 = {k1} is not positive"),
        });
    }
    if law.jacobian() == JacobianMode::StandardDet {
        out.push(Deviation {
            key: "jacobian-mode".into(),
            detail: "volume factor det A(t) instead of its square root".into(),
        });
    }
    if convention == FluxConvention::Plain {
        out.push(Deviation {
            key: "flux-convention".into(),
            detail: "boundary flux without the diffusivity factor".into(),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub code_version: String,
    /// SHA-256 of the canonical configuration text.
    pub config_hash: String,
    /// Canonical configuration with every default spelled out.
    pub config: String,
    pub deviations: Vec<Deviation>,
    pub termination: Termination,
    pub steps: usize,
    pub dt: f64,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

pub fn config_hash(canonical: &str) -> String {
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunManifest {
    pub fn new(
        cfg: &AppConfig,
        law: &GrowthLaw,
        traj: &Trajectory,
        wall_time_s: f64,
    ) -> Result<Self, IoError> {
        let config = config_to_string(cfg)?;
        Ok(Self {
            schema: crate::config::SCHEMA_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(&config),
            config,
            deviations: active_deviations(law, cfg.diagnostics.convention),
            termination: traj.termination.clone(),
            steps: traj.steps,
            dt: traj.dt,
            warnings: traj.warnings.clone(),
            wall_time_s,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(file_err(path))
    }
}
