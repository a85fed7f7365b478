use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{add_s, frechet, jerk, mpjpe, MetricError};
use crate::handmodel::{HandModel, Trajectory};

/// Column names of the metric report, in file order.
pub const METRIC_COLUMNS: [&str; 6] = ["MPJPE", "ADD-S", "FD (hand)", "FD (obj)", "JK (hand)", "JK (obj)"];

/// Metrics of one predicted clip against its ground truth, millimeters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    #[serde(rename = "MPJPE")]
    pub mpjpe: f64,
    #[serde(rename = "ADD-S")]
    pub add_s: f64,
    #[serde(rename = "FD (hand)")]
    pub fd_hand: f64,
    #[serde(rename = "FD (obj)")]
    pub fd_obj: f64,
    #[serde(rename = "JK (hand)")]
    pub jk_hand: f64,
    #[serde(rename = "JK (obj)")]
    pub jk_obj: f64,
}

impl MetricRecord {
    pub fn values(&self) -> [f64; 6] {
        [self.mpjpe, self.add_s, self.fd_hand, self.fd_obj, self.jk_hand, self.jk_obj]
    }
}

/// Per-clip records plus their mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub records: Vec<MetricRecord>,
    pub mean: MetricRecord,
}

impl MetricReport {
    pub fn new(records: Vec<MetricRecord>) -> Self {
        let n = records.len().max(1) as f64;
        let mut mean = MetricRecord { name: "mean".into(), ..Default::default() };
        for r in &records {
            mean.mpjpe += r.mpjpe / n;
            mean.add_s += r.add_s / n;
            mean.fd_hand += r.fd_hand / n;
            mean.fd_obj += r.fd_obj / n;
            mean.jk_hand += r.jk_hand / n;
            mean.jk_obj += r.jk_obj / n;
        }
        Self { records, mean }
    }

    /// CSV with one row per clip and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["name"];
        header.extend(METRIC_COLUMNS);
        w.write_record(&header).expect("in-memory write");
        for r in self.records.iter().chain(std::iter::once(&self.mean)) {
            let mut row = vec![r.name.clone()];
            row.extend(r.values().iter().map(|v| format!("{v:.17e}")));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

/// All report metrics for one clip. Only frames valid in both clips are used;
/// hand tracks use wrist translations.
pub fn evaluate(
    name: &str,
    pred: &Trajectory,
    gt: &Trajectory,
    model: &HandModel,
    object_points: &[Vector3<f64>],
) -> Result<MetricRecord, MetricError> {
    if pred.model_id != gt.model_id {
        return Err(MetricError::ModelMismatch(format!("{} vs {}", pred.model_id, gt.model_id)));
    }
    if pred.mesh_hash != gt.mesh_hash {
        return Err(MetricError::ModelMismatch(format!("mesh {} vs {}", pred.mesh_hash, gt.mesh_hash)));
    }
    let mpjpe = mpjpe(pred, gt, model)?;
    let mask: Vec<bool> = pred.frames.iter().zip(&gt.frames).map(|(a, b)| a.valid && b.valid).collect();
    let pick = |t: &Trajectory, wrist: bool| -> Vec<Vector3<f64>> {
        t.frames
            .iter()
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|(f, _)| if wrist { *f.wrist.translation() } else { *f.object.translation() })
            .collect()
    };
    let po: Vec<_> = pred.frames.iter().map(|f| f.object).collect();
    let go: Vec<_> = gt.frames.iter().map(|f| f.object).collect();
    Ok(MetricRecord {
        name: name.to_string(),
        mpjpe,
        add_s: add_s(&po, &go, object_points, Some(&mask))?,
        fd_hand: frechet(&pick(pred, true), &pick(gt, true)),
        fd_obj: frechet(&pick(pred, false), &pick(gt, false)),
        jk_hand: jerk(&pick(pred, true), pred.dt).mm,
        jk_obj: jerk(&pick(pred, false), pred.dt).mm,
    })
}
