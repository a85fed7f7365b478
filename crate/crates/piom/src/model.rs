use std::sync::Arc;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use trajopt_core::geom::{ball_query, fps, so3, PointCloud, RigidPose, TriangleMesh};
use trajopt_core::handmodel::{HandModel, InteractionFrame, Trajectory};
use trajopt_core::losses::{trajectory_loss, FrameGrad, LossConfig, LossReport, Scene};

use crate::config::PiomConfig;
use crate::params::{Init, ParamBuilder, PiomParams};
use crate::tape::{AttnGroup, Mat, Tape, Var};
use crate::PiomError;

#[derive(Clone, Debug, PartialEq)]
struct AttnIds {
    ln_g: usize,
    ln_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct BlockIds {
    attn: AttnIds,
    ln_g: usize,
    ln_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct ParamIds {
    enc_w1: usize,
    enc_b1: usize,
    enc_w2: usize,
    enc_b2: usize,
    enc_pos: usize,
    token_type: usize,
    cross_ho: AttnIds,
    cross_oh: AttnIds,
    pose_w: usize,
    pose_b: usize,
    pgca: Vec<BlockIds>,
    temporal: Vec<BlockIds>,
    out_g: usize,
    out_b: usize,
    head_w1: usize,
    head_b1: usize,
    head_w2: usize,
    head_b2: usize,
}

fn attn_ids(b: &mut ParamBuilder, prefix: &str, d: usize) -> AttnIds {
    AttnIds {
        ln_g: b.add(format!("{prefix}.ln.gain"), 1, d, Init::Ones),
        ln_b: b.add(format!("{prefix}.ln.bias"), 1, d, Init::Zeros),
        wq: b.add(format!("{prefix}.wq"), d, d, Init::FanIn),
        wk: b.add(format!("{prefix}.wk"), d, d, Init::FanIn),
        wv: b.add(format!("{prefix}.wv"), d, d, Init::FanIn),
        wo: b.add(format!("{prefix}.wo"), d, d, Init::FanIn),
    }
}

fn block_ids(b: &mut ParamBuilder, prefix: &str, d: usize, ffn: usize) -> BlockIds {
    BlockIds {
        attn: attn_ids(b, &format!("{prefix}.attn"), d),
        ln_g: b.add(format!("{prefix}.ffn.ln.gain"), 1, d, Init::Ones),
        ln_b: b.add(format!("{prefix}.ffn.ln.bias"), 1, d, Init::Zeros),
        w1: b.add(format!("{prefix}.ffn.w1"), d, ffn, Init::FanIn),
        b1: b.add(format!("{prefix}.ffn.b1"), 1, ffn, Init::Zeros),
        w2: b.add(format!("{prefix}.ffn.w2"), ffn, d, Init::FanIn),
        b2: b.add(format!("{prefix}.ffn.b2"), 1, d, Init::Zeros),
    }
}

/// Network inputs derived from one clip: neighborhoods, pose features and
/// attention groupings, all in the clip's canonical frame.
#[derive(Clone, Debug)]
pub struct PreparedInput {
    pub frames: usize,
    pub valid: Vec<bool>,
    /// Canonical frame: yaw and position of the first valid object pose.
    pub reference: RigidPose,
    rel: Mat,
    centers: Mat,
    pool: Vec<Vec<usize>>,
    token_type: Mat,
    pose: Mat,
    cross_ho: Arc<Vec<AttnGroup>>,
    cross_oh: Arc<Vec<AttnGroup>>,
    frame_groups: Arc<Vec<AttnGroup>>,
    frame_rows: Arc<Vec<Vec<usize>>>,
    temporal: Arc<Vec<AttnGroup>>,
    positional: Mat,
}

/// A recorded forward pass; `backward` maps an output gradient to one
/// gradient per parameter tensor.
pub struct Recording {
    tape: Tape,
    out: Var,
    param_vars: Vec<Var>,
    attention: Vec<Var>,
}

impl Recording {
    /// Per-frame raw corrections, frames × (12 + J).
    pub fn output(&self) -> &Mat {
        self.tape.value(self.out)
    }

    /// Attention nodes in evaluation order (cross, PGCA, temporal).
    pub fn attention_probs(&self) -> Vec<&[Vec<f64>]> {
        self.attention.iter().filter_map(|v| self.tape.attention_probs(*v)).collect()
    }

    pub fn backward(&self, seed: Mat) -> Vec<Mat> {
        let grads = self.tape.backward(self.out, seed);
        self.param_vars
            .iter()
            .map(|v| {
                let m = self.tape.value(*v);
                grads[v.0].clone().unwrap_or_else(|| Mat::zeros(m.rows, m.cols))
            })
            .collect()
    }
}

/// Sinusoidal positional encoding, `rows × d`.
pub fn positional_encoding(rows: usize, d: usize) -> Mat {
    let mut m = Mat::zeros(rows, d);
    for t in 0..rows {
        for i in 0..d {
            let e = (i - i % 2) as f64 / d as f64;
            let a = t as f64 / 10000f64.powf(e);
            m.data[t * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    m
}

/// Yaw-and-position frame of a pose, keeping the world z axis.
pub fn canonical_reference(pose: &RigidPose) -> RigidPose {
    let r = pose.rotation_matrix();
    let (x, y) = (r.column(0), r.column(1));
    let yaw = if x[0].hypot(x[1]) > 1e-6 { x[1].atan2(x[0]) } else { (-y[0]).atan2(y[1]) };
    RigidPose::from_axis_angle(Vector3::new(0.0, 0.0, yaw), *pose.translation())
}

/// `k` farthest-point centers and their `s`-point neighborhoods; neighbor
/// lists shorter than `s` repeat their nearest point. Rows of `rel` are
/// neighbor offsets divided by `radius`.
fn neighborhoods(points: &[Vector3<f64>], k: usize, s: usize, radius: f64) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>), PiomError> {
    let cloud = PointCloud::new(points.to_vec());
    let centers = fps(&cloud, k, 0).map_err(|e| PiomError::Input(e.to_string()))?;
    let mut rel = Vec::with_capacity(k * s);
    let mut out_c = Vec::with_capacity(k);
    for &c in &centers {
        let cp = points[c];
        let mut nb = ball_query(&cp, &cloud, radius, s);
        if nb.is_empty() {
            nb.push(c);
        }
        for j in 0..s {
            let p = points[nb[j.min(nb.len() - 1)]];
            let d = (p - cp) / radius;
            rel.push([d.x, d.y, d.z]);
        }
        out_c.push([cp.x, cp.y, cp.z]);
    }
    Ok((rel, out_c))
}

fn rows_mat(rows: &[[f64; 3]]) -> Mat {
    Mat::from_vec(rows.len(), 3, rows.iter().flat_map(|r| r.iter().copied()).collect())
}

fn pose_features(out: &mut Vec<f64>, pose: &RigidPose, reference: &RigidPose, scale: f64) {
    let r: Matrix3<f64> = reference.rotation_matrix().transpose() * pose.rotation_matrix();
    out.extend([r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]]);
    let t = reference.inverse().transform_point(pose.translation()) * scale;
    out.extend(t.iter());
}

/// The interaction optimization network.
#[derive(Clone, Debug, PartialEq)]
pub struct Piom {
    pub config: PiomConfig,
    pub params: PiomParams,
    ids: ParamIds,
}

impl Piom {
    /// Fresh network: random weights from `config.seed`, zero output layer.
    pub fn new(config: PiomConfig) -> Result<Self, PiomError> {
        config.validate()?;
        let d = config.d;
        let ffn = d * config.ffn_mult;
        let mut b = ParamBuilder::new(config.seed);
        let ids = ParamIds {
            enc_w1: b.add("encoder.w1", 3, config.point_hidden, Init::FanIn),
            enc_b1: b.add("encoder.b1", 1, config.point_hidden, Init::Zeros),
            enc_w2: b.add("encoder.w2", config.point_hidden, d, Init::FanIn),
            enc_b2: b.add("encoder.b2", 1, d, Init::Zeros),
            enc_pos: b.add("encoder.center", 3, d, Init::FanIn),
            token_type: b.add("token_type", 2, d, Init::Normal(0.1)),
            cross_ho: attn_ids(&mut b, "cross.hand_to_object", d),
            cross_oh: attn_ids(&mut b, "cross.object_to_hand", d),
            pose_w: b.add("pose.w", config.pose_width, d, Init::FanIn),
            pose_b: b.add("pose.b", 1, d, Init::Zeros),
            pgca: (0..config.pgca_layers).map(|l| block_ids(&mut b, &format!("pgca.{l}"), d, ffn)).collect(),
            temporal: (0..config.temporal_layers).map(|l| block_ids(&mut b, &format!("temporal.{l}"), d, ffn)).collect(),
            out_g: b.add("temporal.ln.gain", 1, d, Init::Ones),
            out_b: b.add("temporal.ln.bias", 1, d, Init::Zeros),
            head_w1: b.add("head.w1", d, d, Init::FanIn),
            head_b1: b.add("head.b1", 1, d, Init::Zeros),
            head_w2: b.add("head.w2", d, config.out_width(), Init::Zeros),
            head_b2: b.add("head.b2", 1, config.out_width(), Init::Zeros),
        };
        Ok(Self { config, params: b.params, ids })
    }

    /// Names of the output layer's tensors (zero at initialization).
    pub fn output_layer(&self) -> [usize; 2] {
        [self.ids.head_w2, self.ids.head_b2]
    }

    /// Tensors of one PGCA attention block's value and output projections
    /// and its feed-forward output, for identity tests.
    pub fn pgca_residual_branches(&self) -> Vec<usize> {
        self.ids.pgca.iter().flat_map(|b| [b.attn.wo, b.w2, b.b2]).collect()
    }

    pub fn cross_value_projections(&self) -> [usize; 2] {
        [self.ids.cross_ho.wv, self.ids.cross_oh.wv]
    }

    /// Scene sampling the encoder's input clouds.
    pub fn input_scene(&self, model: &HandModel, mesh: &TriangleMesh, scale: f64) -> Result<Scene, PiomError> {
        Ok(Scene::new(model, mesh, scale, self.config.hand_points, self.config.object_points)?)
    }

    pub fn prepare(&self, traj: &Trajectory, scene: &Scene) -> Result<PreparedInput, PiomError> {
        let c = &self.config;
        let t = traj.len();
        if t > c.t_max {
            return Err(PiomError::TooLong { frames: t, max: c.t_max });
        }
        if t == 0 {
            return Err(PiomError::Input("empty trajectory".into()));
        }
        if scene.model.dof() != c.dof() {
            return Err(PiomError::Dimension { what: "joint count", expected: c.dof(), got: scene.model.dof() });
        }
        traj.validate(c.dof()).map_err(|e| PiomError::Input(e.to_string()))?;
        let valid = traj.mask();
        let first = traj.frames.iter().find(|f| f.valid).unwrap_or(&traj.frames[0]);
        let reference = canonical_reference(&first.object);
        let to_local = |p: &Vector3<f64>| reference.inverse().transform_point(p) * c.coord_scale;
        let (kh, ko, s) = (c.hand_tokens, c.object_tokens, c.neighbors);
        let radius = c.ball_radius * c.coord_scale;

        let (mut hand_rel, mut hand_c, mut obj_rel, mut obj_c) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut pose = Vec::with_capacity(t * c.pose_width);
        for f in &traj.frames {
            let clouds = scene.clouds(f)?;
            let hand: Vec<Vector3<f64>> = clouds.hand.iter().map(to_local).collect();
            let object: Vec<Vector3<f64>> = clouds.object.iter().map(to_local).collect();
            let (r, cc) = neighborhoods(&hand, kh, s, radius)?;
            hand_rel.extend(r);
            hand_c.extend(cc);
            let (r, cc) = neighborhoods(&object, ko, s, radius)?;
            obj_rel.extend(r);
            obj_c.extend(cc);
            pose_features(&mut pose, &f.wrist, &reference, c.coord_scale);
            pose.extend_from_slice(&f.joints);
            pose_features(&mut pose, &f.object, &reference, c.coord_scale);
        }
        let nh = t * kh;
        let no = t * ko;
        hand_rel.extend(obj_rel);
        hand_c.extend(obj_c);
        let pool: Vec<Vec<usize>> = (0..nh + no).map(|g| (g * s..(g + 1) * s).collect()).collect();
        let mut token_type = Mat::zeros(nh + no, 2);
        for r in 0..nh + no {
            token_type.data[r * 2 + usize::from(r >= nh)] = 1.0;
        }
        let hand_rows = |f: usize| (f * kh..(f + 1) * kh).collect::<Vec<_>>();
        let obj_rows = |f: usize| (nh + f * ko..nh + (f + 1) * ko).collect::<Vec<_>>();
        let cross_ho = (0..t).map(|f| AttnGroup { q: hand_rows(f), k: obj_rows(f) }).collect();
        let cross_oh = (0..t).map(|f| AttnGroup { q: obj_rows(f), k: hand_rows(f) }).collect();
        let frame_rows: Vec<Vec<usize>> = (0..t)
            .map(|f| {
                let mut r = hand_rows(f);
                r.extend(obj_rows(f));
                r.push(nh + no + f);
                r
            })
            .collect();
        let frame_groups = frame_rows.iter().map(|r| AttnGroup { q: r.clone(), k: r.clone() }).collect();
        let keys: Vec<usize> = (0..t).filter(|&f| valid[f]).collect();
        let temporal = if keys.is_empty() { Vec::new() } else { vec![AttnGroup { q: (0..t).collect(), k: keys }] };
        Ok(PreparedInput {
            frames: t,
            valid,
            reference,
            rel: rows_mat(&hand_rel),
            centers: rows_mat(&hand_c),
            pool,
            token_type,
            pose: Mat::from_vec(t, c.pose_width, pose),
            cross_ho: Arc::new(cross_ho),
            cross_oh: Arc::new(cross_oh),
            frame_groups: Arc::new(frame_groups),
            frame_rows: Arc::new(frame_rows),
            temporal: Arc::new(temporal),
            positional: positional_encoding(t, c.d),
        })
    }

    fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Attention output projected by `wo` (no residual).
    fn attend(&self, tape: &mut Tape, p: &[Var], x: Var, ids: &AttnIds, groups: Arc<Vec<AttnGroup>>, log: &mut Vec<Var>) -> Var {
        let a = tape.layer_norm(x, p[ids.ln_g], p[ids.ln_b]);
        let q = tape.matmul(a, p[ids.wq]);
        let k = tape.matmul(a, p[ids.wk]);
        let v = tape.matmul(a, p[ids.wv]);
        let o = tape.attention(q, k, v, self.config.heads, groups);
        log.push(o);
        tape.matmul(o, p[ids.wo])
    }

    fn block(&self, tape: &mut Tape, p: &[Var], x: Var, ids: &BlockIds, groups: Arc<Vec<AttnGroup>>, log: &mut Vec<Var>) -> Var {
        let o = self.attend(tape, p, x, &ids.attn, groups, log);
        let x = tape.add(x, o);
        let a = tape.layer_norm(x, p[ids.ln_g], p[ids.ln_b]);
        let h = tape.matmul(a, p[ids.w1]);
        let h = tape.add_bias(h, p[ids.b1]);
        let h = tape.gelu(h);
        let h = tape.matmul(h, p[ids.w2]);
        let h = tape.add_bias(h, p[ids.b2]);
        tape.add(x, h)
    }

    fn encode(&self, tape: &mut Tape, p: &[Var], rel: Mat, centers: Mat, pool: &[Vec<usize>]) -> Var {
        let x = tape.leaf(rel);
        let h = tape.matmul(x, p[self.ids.enc_w1]);
        let h = tape.add_bias(h, p[self.ids.enc_b1]);
        let h = tape.gelu(h);
        let h = tape.matmul(h, p[self.ids.enc_w2]);
        let h = tape.add_bias(h, p[self.ids.enc_b2]);
        let tokens = tape.group_max(h, pool);
        let c = tape.leaf(centers);
        let c = tape.matmul(c, p[self.ids.enc_pos]);
        tape.add(tokens, c)
    }

    /// Full forward pass on a tape.
    pub fn record(&self, input: &PreparedInput) -> Recording {
        let mut tape = Tape::new();
        let p = self.leaves(&mut tape);
        let mut log = Vec::new();
        let tokens = self.encode(&mut tape, &p, input.rel.clone(), input.centers.clone(), &input.pool);
        let tt = tape.leaf(input.token_type.clone());
        let tt = tape.matmul(tt, p[self.ids.token_type]);
        let tokens = tape.add(tokens, tt);
        let a = self.attend(&mut tape, &p, tokens, &self.ids.cross_ho, input.cross_ho.clone(), &mut log);
        let b = self.attend(&mut tape, &p, tokens, &self.ids.cross_oh, input.cross_oh.clone(), &mut log);
        let tokens = tape.add(tokens, a);
        let tokens = tape.add(tokens, b);
        let pose = tape.leaf(input.pose.clone());
        let pose = tape.matmul(pose, p[self.ids.pose_w]);
        let pose = tape.add_bias(pose, p[self.ids.pose_b]);
        let mut z = tape.concat_rows(&[tokens, pose]);
        for ids in &self.ids.pgca {
            z = self.block(&mut tape, &p, z, ids, input.frame_groups.clone(), &mut log);
        }
        let pooled = tape.group_mean(z, input.frame_rows.clone());
        let pe = tape.leaf(input.positional.clone());
        let mut x = tape.add(pooled, pe);
        if !input.temporal.is_empty() {
            for ids in &self.ids.temporal {
                x = self.block(&mut tape, &p, x, ids, input.temporal.clone(), &mut log);
            }
        }
        let x = tape.layer_norm(x, p[self.ids.out_g], p[self.ids.out_b]);
        let h = tape.matmul(x, p[self.ids.head_w1]);
        let h = tape.add_bias(h, p[self.ids.head_b1]);
        let h = tape.gelu(h);
        let h = tape.matmul(h, p[self.ids.head_w2]);
        let out = tape.add_bias(h, p[self.ids.head_b2]);
        Recording { tape, out, param_vars: p, attention: log }
    }

    /// Adds the network's corrections to the valid frames of `traj`.
    /// Invalid frames are copied unchanged.
    pub fn apply(&self, traj: &Trajectory, input: &PreparedInput, out: &Mat) -> Trajectory {
        let c = &self.config;
        let j = c.dof();
        let r_ref = input.reference.rotation();
        let pose = |p: &RigidPose, row: &[f64]| -> RigidPose {
            let rot = Vector3::new(row[0], row[1], row[2]) * c.rot_scale;
            let tr = r_ref * (Vector3::new(row[3], row[4], row[5]) * c.trans_scale);
            let t = p.translation() + tr;
            if rot == Vector3::zeros() {
                p.with_translation(t)
            } else {
                RigidPose::new(so3::exp(&(r_ref * rot)) * p.rotation(), t)
            }
        };
        let frames = traj
            .frames
            .iter()
            .enumerate()
            .map(|(t, f)| {
                if !f.valid {
                    return f.clone();
                }
                let row = out.row(t);
                InteractionFrame {
                    wrist: pose(&f.wrist, &row[0..6]),
                    joints: f.joints.iter().zip(&row[6..6 + j]).map(|(q, d)| q + d * c.joint_scale).collect(),
                    object: pose(&f.object, &row[6 + j..12 + j]),
                    valid: true,
                }
            })
            .collect();
        Trajectory { frames, ..traj.clone() }
    }

    /// Gradient w.r.t. the raw corrections given pose gradients of the
    /// corrected clip (left perturbations, as produced by the losses).
    pub fn output_gradient(&self, input: &PreparedInput, out: &Mat, grads: &[FrameGrad]) -> Mat {
        let c = &self.config;
        let j = c.dof();
        let r_ref: UnitQuaternion<f64> = *input.reference.rotation();
        let mut g = Mat::zeros(out.rows, out.cols);
        let pose = |dst: &mut [f64], row: &[f64], rot_g: &Vector3<f64>, tr_g: &Vector3<f64>| {
            let omega = r_ref * (Vector3::new(row[0], row[1], row[2]) * c.rot_scale);
            let gr = r_ref.inverse() * (so3::left_jacobian(&omega).transpose() * rot_g) * c.rot_scale;
            let gt = r_ref.inverse() * tr_g * c.trans_scale;
            dst[..3].copy_from_slice(gr.as_slice());
            dst[3..6].copy_from_slice(gt.as_slice());
        };
        for t in 0..out.rows {
            if !input.valid[t] {
                continue;
            }
            let fg = &grads[t];
            let row = out.row(t).to_vec();
            let dst = g.row_mut(t);
            pose(&mut dst[0..6], &row[0..6], &fg.wrist.rot, &fg.wrist.trans);
            for k in 0..j {
                dst[6 + k] = fg.joints[k] * c.joint_scale;
            }
            pose(&mut dst[6 + j..12 + j], &row[6 + j..12 + j], &fg.object.rot, &fg.object.trans);
        }
        g
    }

    /// Optimized clip: the identity at initialization.
    pub fn forward(&self, traj: &Trajectory, scene: &Scene) -> Result<Trajectory, PiomError> {
        let input = self.prepare(traj, scene)?;
        if input.temporal.is_empty() {
            return Ok(traj.clone());
        }
        let rec = self.record(&input);
        Ok(self.apply(traj, &input, rec.output()))
    }

    /// Loss of the optimized clip against `gt` and, when `with_grad`, the
    /// gradient of that loss w.r.t. every parameter tensor.
    pub fn loss_and_grad(
        &self,
        input_traj: &Trajectory,
        input: &PreparedInput,
        gt: &Trajectory,
        loss_scene: &Scene,
        loss: &LossConfig,
        frames_norm: Option<usize>,
        with_grad: bool,
    ) -> Result<(LossReport, Option<Vec<Mat>>), PiomError> {
        let rec = self.record(input);
        let pred = self.apply(input_traj, input, rec.output());
        let l = trajectory_loss(&pred, gt, loss_scene, loss, frames_norm, with_grad)?;
        let grads = match l.grad {
            Some(fg) if with_grad => Some(rec.backward(self.output_gradient(input, rec.output(), &fg))),
            _ => None,
        };
        Ok((l.report, grads))
    }

    /// Tokens of one frame's clouds (canonical coordinates, meters), sharing
    /// the encoder between hand and object.
    pub fn encode_clouds(&self, hand: &[Vector3<f64>], object: &[Vector3<f64>]) -> Result<(Mat, Mat), PiomError> {
        let c = &self.config;
        if hand.len() < c.hand_tokens || object.len() < c.object_tokens {
            return Err(PiomError::Input(format!(
                "clouds of {} and {} points are smaller than {} and {} tokens",
                hand.len(),
                object.len(),
                c.hand_tokens,
                c.object_tokens
            )));
        }
        let scale = |v: &[Vector3<f64>]| v.iter().map(|p| p * c.coord_scale).collect::<Vec<_>>();
        let radius = c.ball_radius * c.coord_scale;
        let (hr, hc) = neighborhoods(&scale(hand), c.hand_tokens, c.neighbors, radius)?;
        let (or, oc) = neighborhoods(&scale(object), c.object_tokens, c.neighbors, radius)?;
        Ok((self.encode_neighborhoods(&rows_mat(&hr), &rows_mat(&hc)), self.encode_neighborhoods(&rows_mat(&or), &rows_mat(&oc))))
    }

    /// Encoder on explicit neighborhoods: `rel` holds `centers.rows` groups of
    /// `neighbors` consecutive rows.
    pub fn encode_neighborhoods(&self, rel: &Mat, centers: &Mat) -> Mat {
        let s = self.config.neighbors;
        let pool: Vec<Vec<usize>> = (0..centers.rows).map(|g| (g * s..(g + 1) * s).collect()).collect();
        let mut tape = Tape::new();
        let p = self.leaves(&mut tape);
        let out = self.encode(&mut tape, &p, rel.clone(), centers.clone(), &pool);
        tape.value(out).clone()
    }

    /// Bidirectional cross-attention of one frame's token sets; object
    /// tokens listed in `masked_objects` are hidden from the hand queries.
    /// Returns the updated tokens and the hand→object attention rows.
    pub fn cross_attend(&self, hand: &Mat, object: &Mat, masked_objects: &[usize]) -> (Mat, Mat, Vec<Vec<f64>>) {
        let (kh, ko) = (hand.rows, object.rows);
        let mut tape = Tape::new();
        let p = self.leaves(&mut tape);
        let h = tape.leaf(hand.clone());
        let o = tape.leaf(object.clone());
        let x = tape.concat_rows(&[h, o]);
        let ho = Arc::new(vec![AttnGroup { q: (0..kh).collect(), k: (kh..kh + ko).filter(|r| !masked_objects.contains(&(r - kh))).collect() }]);
        let oh = Arc::new(vec![AttnGroup { q: (kh..kh + ko).collect(), k: (0..kh).collect() }]);
        let mut log = Vec::new();
        let a = self.attend(&mut tape, &p, x, &self.ids.cross_ho, ho, &mut log);
        let b = self.attend(&mut tape, &p, x, &self.ids.cross_oh, oh, &mut log);
        let y = tape.add(x, a);
        let y = tape.add(y, b);
        let yv = tape.value(y);
        let split = |r0: usize, n: usize| Mat::from_vec(n, yv.cols, yv.data[r0 * yv.cols..(r0 + n) * yv.cols].to_vec());
        let probs = tape.attention_probs(log[0]).map(|p| p.to_vec()).unwrap_or_default();
        (split(0, kh), split(kh, ko), probs)
    }

    /// Stacked intra-frame self-attention over one frame's token set `z`.
    pub fn pgca_frame(&self, z: &Mat) -> Mat {
        let mut tape = Tape::new();
        let p = self.leaves(&mut tape);
        let mut x = tape.leaf(z.clone());
        let all: Vec<usize> = (0..z.rows).collect();
        let groups = Arc::new(vec![AttnGroup { q: all.clone(), k: all }]);
        let mut log = Vec::new();
        for ids in &self.ids.pgca {
            x = self.block(&mut tape, &p, x, ids, groups.clone(), &mut log);
        }
        tape.value(x).clone()
    }
}
