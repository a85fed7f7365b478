#![allow(dead_code)]

use trajopt_core::geom::TriangleMesh;
use trajopt_core::handmodel::{HandModel, Trajectory};
use trajopt_core::synth::{perturb, PerturbConfig, ScriptSampler};

pub const DT: f64 = 1.0 / 30.0;

/// Ground-truth clip, its perturbed copy and the object mesh, cropped to
/// `frames` frames starting at `start`.
pub fn clip(seed: u64, start: usize, frames: usize) -> (Trajectory, Trajectory, TriangleMesh) {
    let model = HandModel::human20();
    let item = ScriptSampler::default().sample(&model, DT, seed).expect("sampler");
    let mut gt = item.gt;
    gt.frames = gt.frames[start..start + frames].to_vec();
    let input = perturb(&gt, &PerturbConfig::default().with_seed(seed + 1000));
    (input, gt, item.mesh)
}

pub fn assert_bits_eq(a: &Trajectory, b: &Trajectory) {
    assert_eq!(a.len(), b.len());
    for (fa, fb) in a.frames.iter().zip(&b.frames) {
        assert_eq!(fa.valid, fb.valid);
        let bits = |f: &trajopt_core::handmodel::InteractionFrame| -> Vec<u64> {
            let mut v: Vec<u64> = f.wrist.wxyz().iter().map(|x| x.to_bits()).collect();
            v.extend(f.wrist.translation().iter().map(|x| x.to_bits()));
            v.extend(f.joints.iter().map(|x| x.to_bits()));
            v.extend(f.object.wxyz().iter().map(|x| x.to_bits()));
            v.extend(f.object.translation().iter().map(|x| x.to_bits()));
            v
        };
        assert_eq!(bits(fa), bits(fb));
    }
}
