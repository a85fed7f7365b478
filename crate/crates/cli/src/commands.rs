use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use trajopt_core::geom::TriangleMesh;
use trajopt_core::handmodel::{canonical_object_points, HandModel, Trajectory};
use trajopt_core::io::{load_trajectory, read_text, write_text, write_trajectory, Manifest, ManifestEntry, Provenance};
use trajopt_core::metrics::{evaluate, MetricReport};
use trajopt_core::policy::{rollout, Residual};
use trajopt_core::retarget::{solve_trajectory, RetargetModels};
use trajopt_core::synth::{augment, item_seed, perturb, AugmentConfig};
use trajopt_piom::train::write_curve;
use trajopt_piom::{train, Checkpoint, Piom, Stage, TrainItem};

use crate::config::PipelineConfig;
use crate::CliError;

/// Salt separating perturbation seeds from synthesis seeds.
const PERTURB_STREAM: u64 = 0x7065_7274;

pub fn item_name(index: usize, ext: &str) -> String {
    format!("item_{index:05}.{ext}")
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

/// `target` relative to `dir`, with forward slashes.
fn relative(dir: &Path, target: &Path) -> Result<String, CliError> {
    let (d, t) = (absolute(dir)?, absolute(target)?);
    let rel = pathdiff::diff_paths(&t, &d).unwrap_or(t);
    Ok(rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/"))
}

/// A manifest with the directory its paths are relative to.
pub struct LoadedManifest {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let manifest = Manifest::load(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { dir, manifest })
    }

    pub fn path(&self, entry: &str) -> PathBuf {
        self.dir.join(entry)
    }

    fn mesh(&self, e: &ManifestEntry) -> Result<TriangleMesh, CliError> {
        let p = self.path(&e.mesh);
        TriangleMesh::from_obj_str(&read_text(&p)?).map_err(|err| CliError::Format(format!("{}: {err}", p.display())))
    }

    fn trajectory(&self, rel: &str) -> Result<(Trajectory, Provenance), CliError> {
        Ok(load_trajectory(&self.path(rel))?)
    }

    fn gt(&self, e: &ManifestEntry) -> Result<(Trajectory, Provenance), CliError> {
        if e.gt.is_empty() {
            return Err(CliError::Format(format!("manifest entry {} has no ground truth", e.index)));
        }
        self.trajectory(&e.gt)
    }
}

fn write_manifest(out: &Path, entries: Vec<ManifestEntry>) -> Result<(), CliError> {
    write_text(&out.join("manifest.csv"), &Manifest { entries }.to_csv()?)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(write_text(path, &(text + "\n"))?)
}

/// Config echo and run record written next to every command's outputs.
fn write_run_record(out: &Path, command: &str, cfg: &PipelineConfig, extra: Value) -> Result<Value, CliError> {
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    let record = json!({ "command": command, "config_hash": cfg.hash(), "seed": cfg.seed, "outputs": extra });
    write_json(&out.join("run.json"), &record)?;
    Ok(record)
}

fn require_model(prov: &Provenance, model: &HandModel, what: &str) -> Result<(), CliError> {
    if prov.model_hash != model.hash() {
        return Err(CliError::ModelMismatch(format!("{what} was produced with model {}, expected {} ({})", prov.model_hash, model.hash(), model.id)));
    }
    Ok(())
}

fn write_clip(out: &Path, rel: &str, traj: &Trajectory, prov: &Provenance) -> Result<(), CliError> {
    Ok(write_text(&out.join(rel), &write_trajectory(traj, prov))?)
}

/// Ground-truth grasps, their meshes and a manifest.
pub fn synth(cfg: &PipelineConfig, out: &Path) -> Result<Value, CliError> {
    let human = cfg.human()?;
    let sampler = cfg.sampler();
    let hash = cfg.hash();
    let mut entries = Vec::with_capacity(cfg.dataset.count);
    for i in 0..cfg.dataset.count {
        let seed = item_seed(cfg.seed, i as u64);
        let item = sampler.sample(&human, cfg.dt, seed).map_err(CliError::compute)?;
        let gt = if cfg.dataset.augment {
            augment(&item.gt, &AugmentConfig { seed, ..cfg.augment.clone() }).map_err(CliError::compute)?
        } else {
            item.gt
        };
        let (traj_rel, mesh_rel) = (format!("gt/{}", item_name(i, "traj")), format!("meshes/{}", item_name(i, "obj")));
        write_text(&out.join(&mesh_rel), &item.mesh.to_obj_string())?;
        write_clip(out, &traj_rel, &gt, &Provenance { model_hash: human.hash().to_string(), config_hash: hash.clone(), seed })?;
        entries.push(ManifestEntry { index: i, trajectory: traj_rel.clone(), gt: traj_rel, mesh: mesh_rel, seed, config_hash: hash.clone() });
    }
    let n = entries.len();
    write_manifest(out, entries)?;
    write_run_record(out, "synth", cfg, json!({ "items": n, "manifest": "manifest.csv" }))
}

/// Noisy copies of a manifest's ground truth.
pub fn perturb_cmd(cfg: &PipelineConfig, manifest: &Path, out: &Path, stage: Stage) -> Result<Value, CliError> {
    let src = LoadedManifest::load(manifest)?;
    let human = cfg.human()?;
    let profile = match stage {
        Stage::Pretrain => &cfg.perturb,
        Stage::Finetune => &cfg.perturb_finetune,
    };
    let hash = cfg.hash();
    let mut entries = Vec::new();
    for e in &src.manifest.entries {
        let (gt, prov) = src.gt(e)?;
        require_model(&prov, &human, &e.gt)?;
        let seed = item_seed(cfg.seed ^ PERTURB_STREAM, e.index as u64);
        let noisy = perturb(&gt, &profile.clone().with_seed(seed));
        let rel = format!("input/{}", item_name(e.index, "traj"));
        write_clip(out, &rel, &noisy, &Provenance { model_hash: prov.model_hash.clone(), config_hash: hash.clone(), seed })?;
        entries.push(ManifestEntry {
            index: e.index,
            trajectory: rel,
            gt: relative(out, &src.path(&e.gt))?,
            mesh: relative(out, &src.path(&e.mesh))?,
            seed,
            config_hash: hash.clone(),
        });
    }
    let n = entries.len();
    write_manifest(out, entries)?;
    write_run_record(out, "perturb", cfg, json!({ "items": n, "profile": stage.to_string(), "manifest": "manifest.csv" }))
}

/// Checkpoint file: the network state plus the provenance of the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub config_hash: String,
    pub seed: u64,
    pub model_hash: String,
    pub checkpoint: Checkpoint,
}

impl CheckpointFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        let _ = Checkpoint::from_json(&serde_json::to_string(&file.checkpoint).map_err(|e| CliError::Format(e.to_string()))?)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        Ok(file)
    }
}

pub fn load_items(cfg: &PipelineConfig, piom: &Piom, src: &LoadedManifest, human: &HandModel) -> Result<Vec<TrainItem>, CliError> {
    src.manifest
        .entries
        .iter()
        .map(|e| {
            let (input, p_in) = src.trajectory(&e.trajectory)?;
            let (gt, p_gt) = src.gt(e)?;
            require_model(&p_in, human, &e.trajectory)?;
            require_model(&p_gt, human, &e.gt)?;
            TrainItem::new(piom, input, gt, human, &src.mesh(e)?, &cfg.train.loss).map_err(CliError::compute)
        })
        .collect()
}

pub fn train_cmd(cfg: &PipelineConfig, manifest: &Path, out: &Path, stage: Stage, init: Option<&Path>) -> Result<Value, CliError> {
    let src = LoadedManifest::load(manifest)?;
    let human = cfg.human()?;
    let start = match init {
        Some(p) => {
            let f = CheckpointFile::load(p)?;
            if f.model_hash != human.hash() {
                return Err(CliError::ModelMismatch(format!("checkpoint was trained for model {}, expected {}", f.model_hash, human.hash())));
            }
            Some(f.checkpoint)
        }
        None => None,
    };
    let mut piom = match &start {
        Some(c) => c.restore().map_err(|e| CliError::Format(e.to_string()))?,
        None => Piom::new(cfg.piom.clone()).map_err(|e| CliError::Config(e.to_string()))?,
    };
    let items = load_items(cfg, &piom, &src, &human)?;
    let hash = cfg.hash();
    let wrap = |c: &Checkpoint| CheckpointFile { config_hash: hash.clone(), seed: cfg.seed, model_hash: human.hash().to_string(), checkpoint: c.clone() };
    let mut last: Option<CheckpointFile> = None;
    let report = train(&mut piom, &items, &cfg.train, stage, start.as_ref(), |c, r| {
        let f = wrap(c);
        write_text(&out.join(format!("checkpoints/epoch_{:03}.json", r.epoch)), &serde_json::to_string(&f).map_err(|e| trajopt_piom::PiomError::Checkpoint(e.to_string()))?)
            .map_err(|e| trajopt_piom::PiomError::Checkpoint(e.to_string()))?;
        last = Some(f);
        Ok(())
    })
    .map_err(|e| match e {
        trajopt_piom::PiomError::EmptyDataset | trajopt_piom::PiomError::MissingCheckpoint | trajopt_piom::PiomError::Config(_) => CliError::Config(e.to_string()),
        other => CliError::compute(other),
    })?;
    let final_ck = last.unwrap_or_else(|| wrap(&Checkpoint::capture(&piom, &cfg.train, stage, start.as_ref().map_or(0, |c| c.epoch), &trajopt_piom::AdamState::new(&piom))));
    write_text(&out.join("checkpoint.json"), &serde_json::to_string(&final_ck).map_err(|e| CliError::Io(e.to_string()))?)?;
    let mut curve = Vec::new();
    write_curve(&report.curve, &mut curve).map_err(|e| CliError::Io(e.to_string()))?;
    write_text(&out.join("loss_curve.csv"), &String::from_utf8_lossy(&curve))?;
    let first = report.curve.first().map(|r| r.loss.total);
    let final_loss = report.curve.last().map(|r| r.loss.total);
    write_run_record(
        out,
        "train",
        cfg,
        json!({ "stage": stage.to_string(), "epochs": report.curve.len(), "first_loss": first, "final_loss": final_loss, "checkpoint": "checkpoint.json", "loss_curve": "loss_curve.csv" }),
    )
}

/// Applies a trained network to every trajectory of a manifest.
pub fn optimize(cfg: &PipelineConfig, checkpoint: &Path, manifest: &Path, out: &Path) -> Result<Value, CliError> {
    let src = LoadedManifest::load(manifest)?;
    let human = cfg.human()?;
    let ck = CheckpointFile::load(checkpoint)?;
    if ck.model_hash != human.hash() {
        return Err(CliError::ModelMismatch(format!("checkpoint was trained for model {}, expected {}", ck.model_hash, human.hash())));
    }
    let piom = ck.checkpoint.restore().map_err(|e| CliError::Format(e.to_string()))?;
    let hash = cfg.hash();
    let mut entries = Vec::new();
    for e in &src.manifest.entries {
        let (input, prov) = src.trajectory(&e.trajectory)?;
        require_model(&prov, &human, &e.trajectory)?;
        let scene = piom.input_scene(&human, &src.mesh(e)?, input.scale).map_err(CliError::compute)?;
        let refined = piom.forward(&input, &scene).map_err(CliError::compute)?;
        let rel = format!("optimized/{}", item_name(e.index, "traj"));
        write_clip(out, &rel, &refined, &Provenance { model_hash: prov.model_hash, config_hash: hash.clone(), seed: e.seed })?;
        let gt = if e.gt.is_empty() { String::new() } else { relative(out, &src.path(&e.gt))? };
        entries.push(ManifestEntry { index: e.index, trajectory: rel, gt, mesh: relative(out, &src.path(&e.mesh))?, seed: e.seed, config_hash: hash.clone() });
    }
    let n = entries.len();
    write_manifest(out, entries)?;
    write_run_record(out, "optimize", cfg, json!({ "items": n, "checkpoint_config_hash": ck.config_hash, "manifest": "manifest.csv" }))
}

/// Human clips to robot-hand clips.
pub fn retarget_cmd(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> Result<Value, CliError> {
    let src = LoadedManifest::load(manifest)?;
    let (human, robot) = (cfg.human()?, cfg.robot()?);
    let models = RetargetModels::new(human.clone(), robot.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let hash = cfg.hash();
    let mut entries = Vec::new();
    let mut report = String::from("index,frames,converged_frames,mean_objective,max_objective\n");
    for e in &src.manifest.entries {
        let (traj, prov) = src.trajectory(&e.trajectory)?;
        require_model(&prov, &human, &e.trajectory)?;
        let sol = solve_trajectory(&traj, &cfg.retarget, &models, &cfg.solver).map_err(CliError::compute)?;
        let objectives: Vec<f64> = sol.frames.iter().map(|f| f.objective).collect();
        let converged = sol.frames.iter().filter(|f| f.converged).count();
        let mean = objectives.iter().sum::<f64>() / objectives.len().max(1) as f64;
        let max = objectives.iter().fold(0.0f64, |a, b| a.max(*b));
        report.push_str(&format!("{},{},{},{:.10e},{:.10e}\n", e.index, objectives.len(), converged, mean, max));
        let rel = format!("robot/{}", item_name(e.index, "traj"));
        write_clip(out, &rel, &sol.trajectory, &Provenance { model_hash: robot.hash().to_string(), config_hash: hash.clone(), seed: e.seed })?;
        entries.push(ManifestEntry { index: e.index, trajectory: rel, gt: String::new(), mesh: relative(out, &src.path(&e.mesh))?, seed: e.seed, config_hash: hash.clone() });
    }
    let n = entries.len();
    write_text(&out.join("retarget_report.csv"), &report)?;
    write_manifest(out, entries)?;
    write_run_record(out, "retarget", cfg, json!({ "items": n, "manifest": "manifest.csv", "report": "retarget_report.csv" }))
}

/// Zero-residual rollouts of robot anchor clips.
pub fn rollout_cmd(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> Result<Value, CliError> {
    let src = LoadedManifest::load(manifest)?;
    let robot = cfg.robot()?;
    let hash = cfg.hash();
    let mut summary = String::from("index,success,cumulative_reward,rot_err_deg,trans_err_m,joint_err_m,fingertip_err_m\n");
    let mut successes = 0;
    for e in &src.manifest.entries {
        let (anchor, prov) = src.trajectory(&e.trajectory)?;
        require_model(&prov, &robot, &e.trajectory)?;
        let residuals = vec![Residual::zero(robot.dof()); anchor.len()];
        let r = rollout(&anchor, &residuals, &src.mesh(e)?, &robot, &cfg.policy, &cfg.success).map_err(CliError::compute)?;
        let mut log = Vec::new();
        r.write_log(&mut log).map_err(CliError::compute)?;
        write_text(&out.join(format!("rollouts/{}", item_name(e.index, "csv"))), &String::from_utf8_lossy(&log))?;
        write_clip(out, &format!("rollouts/{}", item_name(e.index, "traj")), &r.trajectory, &Provenance { model_hash: prov.model_hash, config_hash: hash.clone(), seed: e.seed })?;
        let s = &r.success;
        successes += usize::from(s.success);
        summary.push_str(&format!(
            "{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}\n",
            e.index,
            u8::from(s.success),
            r.cumulative_reward,
            s.rot_err_deg,
            s.trans_err_m,
            s.joint_err_m,
            s.fingertip_err_m
        ));
    }
    let n = src.manifest.entries.len();
    write_text(&out.join("rollout_summary.csv"), &summary)?;
    write_run_record(out, "rollout", cfg, json!({ "items": n, "successes": successes, "summary": "rollout_summary.csv" }))
}

/// Metrics of every manifest trajectory against its ground truth.
pub fn eval_cmd(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> Result<Value, CliError> {
    let src = LoadedManifest::load(manifest)?;
    let models = [cfg.human()?, cfg.robot()?];
    let mut records = Vec::new();
    for e in &src.manifest.entries {
        let (pred, p_pred) = src.trajectory(&e.trajectory)?;
        let (gt, p_gt) = src.gt(e)?;
        if p_pred.model_hash != p_gt.model_hash {
            return Err(CliError::ModelMismatch(format!(
                "entry {}: prediction model {} differs from ground-truth model {}",
                e.index, p_pred.model_hash, p_gt.model_hash
            )));
        }
        let model = models
            .iter()
            .find(|m| m.hash() == p_gt.model_hash)
            .ok_or_else(|| CliError::ModelMismatch(format!("entry {}: no configured model has hash {}", e.index, p_gt.model_hash)))?;
        let mesh = src.mesh(e)?;
        let scaled = if gt.scale == 1.0 { mesh } else { mesh.scaled(gt.scale).map_err(CliError::compute)? };
        let model_s = if gt.scale == 1.0 { model.clone() } else { model.scaled(gt.scale) };
        let points = canonical_object_points(&scaled, cfg.eval.object_points).map_err(CliError::compute)?.points;
        let rec = evaluate(&item_name(e.index, "traj"), &pred, &gt, &model_s, &points).map_err(|err| match err {
            trajopt_core::metrics::MetricError::ModelMismatch(m) => CliError::ModelMismatch(m),
            other => CliError::compute(other),
        })?;
        records.push(rec);
    }
    let report = MetricReport::new(records);
    write_text(&out.join("metrics.csv"), &report.to_csv())?;
    write_json(&out.join("metrics.json"), &report)?;
    write_run_record(out, "eval", cfg, json!({ "items": report.records.len(), "mean": report.mean, "report": "metrics.csv" }))
}
