//! Artifact file formats: the trajectory text format and the dataset
//! manifest. Every artifact carries the hash of the config and the seed
//! that produced it.
//!
//! Trajectory files are line oriented:
//!
//! ```text
//! trajopt-trajectory 1
//! dt 3.33333333333333329e-2
//! model human20
//! model_hash <hex>
//! mesh <hex>
//! scale 1.00000000000000000e0
//! config_hash <hex>
//! seed 7
//! frames 60
//! <qw qx qy qz x y z> <joints...> <qw qx qy qz x y z> <valid 0|1>
//! ...
//! ```
//!
//! Numbers use 17 significant digits, which round-trips every `f64`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geom::RigidPose;
use crate::handmodel::{InteractionFrame, Trajectory};

pub const TRAJECTORY_MAGIC: &str = "trajopt-trajectory";
pub const TRAJECTORY_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
}

/// Provenance stamped into every artifact.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_hash: String,
    pub config_hash: String,
    pub seed: u64,
}

/// SHA-256 of `bytes`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn num(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

fn pose(out: &mut String, p: &RigidPose) {
    for (k, v) in p.wxyz().iter().chain(p.translation().iter()).enumerate() {
        if k > 0 {
            out.push(' ');
        }
        num(out, *v);
    }
}

pub fn write_trajectory(traj: &Trajectory, prov: &Provenance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TRAJECTORY_MAGIC} {TRAJECTORY_FORMAT}");
    let _ = writeln!(out, "dt {:.16e}", traj.dt);
    let _ = writeln!(out, "model {}", traj.model_id);
    let _ = writeln!(out, "model_hash {}", prov.model_hash);
    let _ = writeln!(out, "mesh {}", traj.mesh_hash);
    let _ = writeln!(out, "scale {:.16e}", traj.scale);
    let _ = writeln!(out, "config_hash {}", prov.config_hash);
    let _ = writeln!(out, "seed {}", prov.seed);
    let _ = writeln!(out, "frames {}", traj.len());
    for f in &traj.frames {
        pose(&mut out, &f.wrist);
        for j in &f.joints {
            out.push(' ');
            num(&mut out, *j);
        }
        out.push(' ');
        pose(&mut out, &f.object);
        out.push_str(if f.valid { " 1\n" } else { " 0\n" });
    }
    out
}

fn header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, &'a str), IoError> {
    let (n, line) = lines.next().ok_or(IoError::Parse { line: 0, msg: format!("missing '{key}' header") })?;
    match line.split_once(' ') {
        Some((k, v)) if k == key => Ok((n + 1, v.trim())),
        _ => Err(IoError::Parse { line: n + 1, msg: format!("expected '{key} <value>'") }),
    }
}

fn parse<T: std::str::FromStr>(line: usize, v: &str, what: &str) -> Result<T, IoError> {
    v.parse().map_err(|_| IoError::Parse { line, msg: format!("bad {what} '{v}'") })
}

fn read_pose(line: usize, v: &[f64]) -> Result<RigidPose, IoError> {
    RigidPose::from_unit_wxyz([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6]])
        .ok_or(IoError::Parse { line, msg: "invalid pose".into() })
}

pub fn read_trajectory(text: &str) -> Result<(Trajectory, Provenance), IoError> {
    let mut lines = text.lines().enumerate();
    let (n, first) = lines.next().ok_or(IoError::Parse { line: 1, msg: "empty file".into() })?;
    match first.split_once(' ') {
        Some((TRAJECTORY_MAGIC, v)) => {
            let version: u32 = parse(n + 1, v.trim(), "format version")?;
            if version != TRAJECTORY_FORMAT {
                return Err(IoError::Format(format!("trajectory format {version}")));
            }
        }
        _ => return Err(IoError::Format("not a trajectory file".into())),
    }
    let (l, v) = header(&mut lines, "dt")?;
    let dt: f64 = parse(l, v, "dt")?;
    let model = header(&mut lines, "model")?.1.to_string();
    let model_hash = header(&mut lines, "model_hash")?.1.to_string();
    let mesh = header(&mut lines, "mesh")?.1.to_string();
    let (l, v) = header(&mut lines, "scale")?;
    let scale: f64 = parse(l, v, "scale")?;
    let config_hash = header(&mut lines, "config_hash")?.1.to_string();
    let (l, v) = header(&mut lines, "seed")?;
    let seed: u64 = parse(l, v, "seed")?;
    let (l, v) = header(&mut lines, "frames")?;
    let count: usize = parse(l, v, "frame count")?;
    let mut frames = Vec::with_capacity(count);
    let mut dof = None;
    for (n, line) in lines {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 15 {
            return Err(IoError::Parse { line: line_no, msg: "frame record too short".into() });
        }
        let j = tokens.len() - 15;
        if *dof.get_or_insert(j) != j {
            return Err(IoError::Parse { line: line_no, msg: "joint count changes between frames".into() });
        }
        let valid = match *tokens.last().expect("non-empty") {
            "1" => true,
            "0" => false,
            other => return Err(IoError::Parse { line: line_no, msg: format!("bad valid flag '{other}'") }),
        };
        let values = tokens[..tokens.len() - 1].iter().map(|t| parse::<f64>(line_no, t, "number")).collect::<Result<Vec<_>, _>>()?;
        frames.push(InteractionFrame {
            wrist: read_pose(line_no, &values[..7])?,
            joints: values[7..7 + j].to_vec(),
            object: read_pose(line_no, &values[7 + j..])?,
            valid,
        });
    }
    if frames.len() != count {
        return Err(IoError::Parse { line: 0, msg: format!("header says {count} frames, found {}", frames.len()) });
    }
    let mut traj = Trajectory::new(dt, model, mesh, frames);
    traj.scale = scale;
    Ok((traj, Provenance { model_hash, config_hash, seed }))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let file_err = |source| IoError::File { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(file_err)?;
    }
    std::fs::write(path, text).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

pub fn load_trajectory(path: &Path) -> Result<(Trajectory, Provenance), IoError> {
    read_trajectory(&read_text(path)?).map_err(|e| match e {
        IoError::Parse { line, msg } => IoError::Parse { line, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

/// One dataset item. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    /// The trajectory this entry is about (GT for a synthesized set,
    /// perturbed or optimized clips downstream).
    pub trajectory: String,
    /// Ground-truth trajectory, when known.
    pub gt: String,
    pub mesh: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_csv(&self) -> Result<String, IoError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e).map_err(|e| IoError::Manifest(e.to_string()))?;
        }
        if self.entries.is_empty() {
            w.write_record(["index", "trajectory", "gt", "mesh", "seed", "config_hash"]).map_err(|e| IoError::Manifest(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| IoError::Manifest(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| IoError::Manifest(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self, IoError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let entries = r.deserialize().collect::<Result<Vec<ManifestEntry>, _>>().map_err(|e| IoError::Manifest(e.to_string()))?;
        for (k, e) in entries.iter().enumerate() {
            if e.index != k {
                return Err(IoError::Manifest(format!("row {k} has index {}", e.index)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::from_csv(&read_text(path)?)
    }
}
