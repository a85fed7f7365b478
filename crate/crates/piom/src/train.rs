use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trajopt_core::geom::TriangleMesh;
use trajopt_core::handmodel::{HandModel, Trajectory};
use trajopt_core::losses::{LossConfig, LossReport, Scene};

use crate::model::{Piom, PreparedInput};
use crate::params::TensorRecord;
use crate::tape::Mat;
use crate::{PiomConfig, PiomError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            _ => Err(format!("unknown stage '{s}' (pretrain | finetune)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_len: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 16,
            epochs: 20,
            max_len: 120,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PiomError> {
        let bad = |m: &str| Err(PiomError::Config(m.to_string()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and ≥ 0");
        }
        if self.batch_size == 0 || self.max_len == 0 {
            return bad("batch_size and max_len must be ≥ 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("Adam moments must lie in [0, 1) and eps > 0");
        }
        self.loss.weights.validate().map_err(|e| PiomError::Config(e.to_string()))
    }
}

/// One (input, ground truth) pair with its network input and loss scene
/// prepared once up front.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub input: Trajectory,
    pub gt: Trajectory,
    pub prepared: PreparedInput,
    pub loss_scene: Scene,
}

impl TrainItem {
    pub fn new(piom: &Piom, input: Trajectory, gt: Trajectory, model: &HandModel, mesh: &TriangleMesh, loss: &LossConfig) -> Result<Self, PiomError> {
        if input.len() != gt.len() {
            return Err(PiomError::Dimension { what: "ground-truth frames", expected: input.len(), got: gt.len() });
        }
        let scene_in = piom.input_scene(model, mesh, input.scale)?;
        let prepared = piom.prepare(&input, &scene_in)?;
        let loss_scene = Scene::new(model, mesh, input.scale, loss.hand_points, loss.object_points)?;
        Ok(Self { input, gt, prepared, loss_scene })
    }

    /// Frames that count toward the loss.
    pub fn loss_frames(&self) -> usize {
        self.input.frames.iter().zip(&self.gt.frames).filter(|(a, b)| a.valid && b.valid).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(piom: &Piom) -> Self {
        let z: Vec<Vec<f64>> = piom.params.params.iter().map(|p| vec![0.0; p.value.data.len()]).collect();
        Self { step: 0, m: z.clone(), v: z }
    }

    fn update(&mut self, piom: &mut Piom, grads: &[Mat], cfg: &TrainConfig) {
        self.step += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.step as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.step as i32);
        for (k, p) in piom.params.params.iter_mut().enumerate() {
            for (i, w) in p.value.data.iter_mut().enumerate() {
                let g = grads[k].data[i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *w -= cfg.lr * (*m / b1t) / ((*v / b2t).sqrt() + cfg.eps);
            }
        }
    }
}

/// Mean batch loss of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: LossReport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub curve: Vec<EpochRecord>,
}

impl TrainReport {
    /// CSV with columns `epoch, stage, L_total` followed by the other terms.
    pub fn write_curve<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_curve(&self.curve, w)
    }
}

pub fn write_curve<W: Write>(curve: &[EpochRecord], mut w: W) -> std::io::Result<()> {
    let terms: Vec<&str> = LossReport::default().fields().iter().map(|f| f.0).filter(|n| *n != "L_total").collect();
    writeln!(w, "epoch,stage,L_total,{}", terms.join(","))?;
    for r in curve {
        let vals: Vec<String> = r.loss.fields().iter().filter(|f| f.0 != "L_total").map(|f| format!("{:.10e}", f.1)).collect();
        writeln!(w, "{},{},{:.10e},{}", r.epoch, r.stage, r.loss.total, vals.join(","))?;
    }
    Ok(())
}

/// Everything needed to resume or reuse a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: PiomConfig,
    pub train: TrainConfig,
    pub stage: Stage,
    /// Completed epochs in this stage.
    pub epoch: usize,
    pub tensors: Vec<TensorRecord>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn capture(piom: &Piom, train: &TrainConfig, stage: Stage, epoch: usize, adam: &AdamState) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            config: piom.config.clone(),
            train: train.clone(),
            stage,
            epoch,
            tensors: piom.params.to_records(),
            adam: adam.clone(),
        }
    }

    /// Network with this checkpoint's weights.
    pub fn restore(&self) -> Result<Piom, PiomError> {
        let mut piom = Piom::new(self.config.clone())?;
        piom.params.load_records(&self.tensors)?;
        if !piom.params.all_finite() {
            return Err(PiomError::Checkpoint("non-finite weights".into()));
        }
        Ok(piom)
    }

    pub fn to_json(&self) -> Result<String, PiomError> {
        serde_json::to_string(self).map_err(|e| PiomError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, PiomError> {
        let c: Checkpoint = serde_json::from_str(s).map_err(|e| PiomError::Checkpoint(e.to_string()))?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(PiomError::Checkpoint(format!("format version {} (expected {CHECKPOINT_VERSION})", c.format_version)));
        }
        Ok(c)
    }
}

/// Loss and summed parameter gradients of one batch; the loss of every item
/// is normalized by the batch's total frame count.
pub fn batch_step(piom: &Piom, items: &[&TrainItem], loss: &LossConfig, with_grad: bool) -> Result<(LossReport, Option<Vec<Mat>>), PiomError> {
    let frames: usize = items.iter().map(|i| i.loss_frames()).sum();
    let mut report = LossReport::default();
    let mut acc: Option<Vec<Mat>> = None;
    if frames == 0 {
        return Ok((report, with_grad.then(|| zero_grads(piom))));
    }
    for item in items {
        if item.loss_frames() == 0 {
            continue;
        }
        let (r, g) = piom.loss_and_grad(&item.input, &item.prepared, &item.gt, &item.loss_scene, loss, Some(frames), with_grad)?;
        report.add(&r);
        if let Some(g) = g {
            match acc.as_mut() {
                None => acc = Some(g),
                Some(a) => {
                    for (x, y) in a.iter_mut().zip(&g) {
                        x.data.iter_mut().zip(&y.data).for_each(|(p, q)| *p += q);
                    }
                }
            }
        }
    }
    Ok((report, if with_grad { Some(acc.unwrap_or_else(|| zero_grads(piom))) } else { None }))
}

fn zero_grads(piom: &Piom) -> Vec<Mat> {
    piom.params.params.iter().map(|p| Mat::zeros(p.value.rows, p.value.cols)).collect()
}

/// Mean loss over `items` without updating anything.
pub fn evaluate(piom: &Piom, items: &[TrainItem], cfg: &TrainConfig) -> Result<LossReport, PiomError> {
    let refs: Vec<&TrainItem> = items.iter().collect();
    let mut total = LossReport::default();
    let mut batches = 0;
    for chunk in refs.chunks(cfg.batch_size) {
        total.add(&batch_step(piom, chunk, &cfg.loss, false)?.0);
        batches += 1;
    }
    Ok(scale_report(&total, 1.0 / batches.max(1) as f64))
}

fn scale_report(r: &LossReport, s: f64) -> LossReport {
    LossReport {
        pc_object: r.pc_object * s,
        pc_hand: r.pc_hand * s,
        joint_angle: r.joint_angle * s,
        rec: r.rec * s,
        smooth: r.smooth * s,
        pene: r.pene * s,
        total: r.total * s,
    }
}

/// Adam over seeded shuffles of `items`.
///
/// Pretraining starts from `piom` as given, or resumes `start` (weights,
/// optimizer moments and epoch count). Fine-tuning requires `start` and takes
/// only its weights. `on_epoch` receives a checkpoint after every epoch.
pub fn train<F>(
    piom: &mut Piom,
    items: &[TrainItem],
    cfg: &TrainConfig,
    stage: Stage,
    start: Option<&Checkpoint>,
    mut on_epoch: F,
) -> Result<TrainReport, PiomError>
where
    F: FnMut(&Checkpoint, &EpochRecord) -> Result<(), PiomError>,
{
    cfg.validate()?;
    if items.is_empty() {
        return Err(PiomError::EmptyDataset);
    }
    if let Some(long) = items.iter().find(|i| i.input.len() > cfg.max_len) {
        return Err(PiomError::TooLong { frames: long.input.len(), max: cfg.max_len });
    }
    let (mut adam, first_epoch) = match (stage, start) {
        (Stage::Finetune, None) => return Err(PiomError::MissingCheckpoint),
        (Stage::Finetune, Some(c)) => {
            *piom = c.restore()?;
            (AdamState::new(piom), 0)
        }
        (Stage::Pretrain, Some(c)) => {
            *piom = c.restore()?;
            (c.adam.clone(), c.epoch)
        }
        (Stage::Pretrain, None) => (AdamState::new(piom), 0),
    };
    if adam.m.len() != piom.params.len() {
        return Err(PiomError::Checkpoint("optimizer state does not match the network".into()));
    }
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in first_epoch..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sum = LossReport::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainItem> = chunk.iter().map(|&i| &items[i]).collect();
            let (r, g) = batch_step(piom, &batch, &cfg.loss, true)?;
            if !r.total.is_finite() {
                return Err(PiomError::NonFinite("loss"));
            }
            let g = g.expect("gradients requested");
            if g.iter().any(|m| !m.is_finite()) {
                return Err(PiomError::NonFinite("gradient"));
            }
            adam.update(piom, &g, cfg);
            sum.add(&r);
            batches += 1;
        }
        let rec = EpochRecord { epoch: epoch + 1, stage, loss: scale_report(&sum, 1.0 / batches as f64) };
        report.curve.push(rec);
        on_epoch(&Checkpoint::capture(piom, cfg, stage, epoch + 1, &adam), &rec)?;
    }
    Ok(report)
}
