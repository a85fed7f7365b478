//! Quick self-test suite behind `trajopt check`: finite-difference gradient
//! checks and small closed-form oracles, each reported as pass/fail.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use trajopt_core::geom::TriangleMesh;
use trajopt_core::handmodel::{HandModel, Trajectory};
use trajopt_core::losses::{trajectory_loss, LossConfig, Scene};
use trajopt_core::metrics::frechet_m;
use trajopt_core::synth::{perturb, PerturbConfig, ScriptSampler};
use trajopt_piom::{Piom, PiomConfig};

use crate::config::PipelineConfig;

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-7;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn short_clip(cfg: &PipelineConfig) -> Result<(Trajectory, Trajectory, TriangleMesh, HandModel), String> {
    let model = HandModel::human20();
    let item = ScriptSampler::default().sample(&model, cfg.dt, cfg.seed).map_err(|e| e.to_string())?;
    let mut gt = item.gt;
    gt.frames = gt.frames[36..46].to_vec();
    let input = perturb(&gt, &PerturbConfig::default().with_seed(cfg.seed + 1));
    Ok((input, gt, item.mesh, model))
}

fn loss_gradients(cfg: &PipelineConfig) -> Result<String, String> {
    let (pred, gt, mesh, model) = short_clip(cfg)?;
    let lc = LossConfig { hand_points: 64, object_points: 64, ..Default::default() };
    let scene = Scene::new(&model, &mesh, 1.0, lc.hand_points, lc.object_points).map_err(|e| e.to_string())?;
    let eval = |t: &Trajectory| trajectory_loss(t, &gt, &scene, &lc, None, false).map(|l| l.report.total).map_err(|e| e.to_string());
    let grad = trajectory_loss(&pred, &gt, &scene, &lc, None, true).map_err(|e| e.to_string())?.grad.expect("requested");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let t = rng.random_range(0..pred.len());
        let kind = rng.random_range(0..5);
        let axis = rng.random_range(0..3);
        let shifted = |s: f64| {
            let mut p = pred.clone();
            let f = &mut p.frames[t];
            let mut e = Vector3::zeros();
            e[axis] = s;
            match kind {
                0 => f.wrist = f.wrist.perturbed_left(&e, &Vector3::zeros()),
                1 => f.wrist = f.wrist.perturbed_left(&Vector3::zeros(), &e),
                2 => f.object = f.object.perturbed_left(&e, &Vector3::zeros()),
                3 => f.object = f.object.perturbed_left(&Vector3::zeros(), &e),
                _ => f.joints[axis * 5] += s,
            }
            p
        };
        let numeric = (eval(&shifted(H))? - eval(&shifted(-H))?) / (2.0 * H);
        let g = &grad[t];
        let analytic = match kind {
            0 => g.wrist.rot[axis],
            1 => g.wrist.trans[axis],
            2 => g.object.rot[axis],
            3 => g.object.trans[axis],
            _ => g.joints[axis * 5],
        };
        worst = worst.max(rel_err(analytic, numeric));
    }
    if worst < 1e-4 {
        Ok(format!("30 coordinates, worst relative error {worst:.2e}"))
    } else {
        Err(format!("worst relative error {worst:.2e} ≥ 1e-4"))
    }
}

fn network_gradients(cfg: &PipelineConfig) -> Result<String, String> {
    let (input, gt, mesh, model) = short_clip(cfg)?;
    let mut piom = Piom::new(PiomConfig { seed: cfg.seed, ..Default::default() }).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 1);
    for k in piom.output_layer() {
        piom.params.params[k].value.data.iter_mut().for_each(|v| *v = rng.random_range(-0.05..0.05));
    }
    let lc = LossConfig { hand_points: 64, object_points: 64, ..Default::default() };
    let scene_in = piom.input_scene(&model, &mesh, 1.0).map_err(|e| e.to_string())?;
    let prepared = piom.prepare(&input, &scene_in).map_err(|e| e.to_string())?;
    let scene = Scene::new(&model, &mesh, 1.0, lc.hand_points, lc.object_points).map_err(|e| e.to_string())?;
    let total = |p: &Piom| p.loss_and_grad(&input, &prepared, &gt, &scene, &lc, None, false).map(|r| r.0.total).map_err(|e| e.to_string());
    let grads = piom.loss_and_grad(&input, &prepared, &gt, &scene, &lc, None, true).map_err(|e| e.to_string())?.1.expect("requested");
    let n = piom.params.scalar_count();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (p, e) = piom.params.locate(rng.random_range(0..n)).expect("in range");
        let mut a = piom.clone();
        a.params.params[p].value.data[e] += H;
        let mut b = piom.clone();
        b.params.params[p].value.data[e] -= H;
        let numeric = (total(&a)? - total(&b)?) / (2.0 * H);
        worst = worst.max(rel_err(grads[p].data[e], numeric));
    }
    if worst < 1e-4 {
        Ok(format!("20 parameters, worst relative error {worst:.2e}"))
    } else {
        Err(format!("worst relative error {worst:.2e} ≥ 1e-4"))
    }
}

/// Minimum over all monotone couplings of the largest matched distance.
fn frechet_by_enumeration(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    fn walk(a: &[Vector3<f64>], b: &[Vector3<f64>], i: usize, j: usize, worst: f64, best: &mut f64) {
        let worst = worst.max((a[i] - b[j]).norm());
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(worst);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, worst, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, worst, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, worst, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

fn frechet_oracle(cfg: &PipelineConfig) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 2);
    let seq = |rng: &mut ChaCha8Rng| -> Vec<Vector3<f64>> {
        let n = rng.random_range(1..=5);
        (0..n).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    };
    for k in 0..100 {
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let (dp, brute) = (frechet_m(&a, &b), frechet_by_enumeration(&a, &b));
        if dp != brute {
            return Err(format!("case {k}: dynamic program {dp} vs enumeration {brute}"));
        }
    }
    Ok("100 random pairs agree exactly".into())
}

fn box_distance(cfg: &PipelineConfig) -> Result<String, String> {
    let h = Vector3::new(0.03, 0.02, 0.05);
    let mesh = TriangleMesh::cuboid(h).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let p = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        let q = p.abs() - h;
        let exact = q.sup(&Vector3::zeros()).norm() + q.max().min(0.0);
        worst = worst.max((mesh.signed_distance(&p) - exact).abs());
    }
    if worst < 1e-7 {
        Ok(format!("200 points, worst error {worst:.2e} m"))
    } else {
        Err(format!("worst error {worst:.2e} m ≥ 1e-7"))
    }
}

fn identity_at_init(cfg: &PipelineConfig) -> Result<String, String> {
    let (input, _, mesh, model) = short_clip(cfg)?;
    let piom = Piom::new(PiomConfig { seed: cfg.seed, ..Default::default() }).map_err(|e| e.to_string())?;
    let scene = piom.input_scene(&model, &mesh, 1.0).map_err(|e| e.to_string())?;
    let out = piom.forward(&input, &scene).map_err(|e| e.to_string())?;
    if out == input {
        Ok("fresh network reproduces its input".into())
    } else {
        Err("fresh network changed its input".into())
    }
}

pub fn run_all(cfg: &PipelineConfig) -> Vec<CheckOutcome> {
    let checks: [(&'static str, fn(&PipelineConfig) -> Result<String, String>); 5] = [
        ("loss_gradients", loss_gradients),
        ("network_gradients", network_gradients),
        ("frechet_oracle", frechet_oracle),
        ("box_signed_distance", box_distance),
        ("identity_at_init", identity_at_init),
    ];
    checks
        .iter()
        .map(|(name, f)| match f(cfg) {
            Ok(detail) => CheckOutcome { name, passed: true, detail },
            Err(detail) => CheckOutcome { name, passed: false, detail },
        })
        .collect()
}
