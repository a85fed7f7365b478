mod common;

use common::{assert_bits_eq, clip, DT};
use trajopt_core::handmodel::HandModel;
use trajopt_core::losses::{trajectory_loss, LossConfig, Scene};
use trajopt_core::synth::{perturb, PerturbConfig, ScriptSampler};
use trajopt_piom::{Piom, PiomConfig, PiomError};

#[test]
fn fresh_network_returns_its_input_bit_for_bit() {
    let model = HandModel::human20();
    for seed in 0..3 {
        let (input, _, mesh) = clip(seed, 0, 60);
        let piom = Piom::new(PiomConfig { seed, ..Default::default() }).unwrap();
        let scene = piom.input_scene(&model, &mesh, input.scale).unwrap();
        let out = piom.forward(&input, &scene).unwrap();
        assert_bits_eq(&out, &input);
        let loss_scene = Scene::new(&model, &mesh, 1.0, 256, 512).unwrap();
        let l = trajectory_loss(&out, &input, &loss_scene, &LossConfig::default(), None, false).unwrap();
        assert_eq!(l.report.rec, 0.0);
    }
}

#[test]
fn longest_clip_keeps_its_length() {
    let model = HandModel::human20();
    let sampler = ScriptSampler { approach_frames: 60, close_frames: 24, lift_frames: 36, ..Default::default() };
    let item = sampler.sample(&model, DT, 5).unwrap();
    assert_eq!(item.gt.len(), 120);
    let input = perturb(&item.gt, &PerturbConfig::default().with_seed(5));
    let mut piom = Piom::new(PiomConfig::default()).unwrap();
    let [w, b] = piom.output_layer();
    piom.params.params[w].value.data.iter_mut().enumerate().for_each(|(i, v)| *v = 0.01 * ((i % 7) as f64 - 3.0));
    piom.params.params[b].value.data.iter_mut().for_each(|v| *v = 0.05);
    let scene = piom.input_scene(&model, &item.mesh, 1.0).unwrap();
    let out = piom.forward(&input, &scene).unwrap();
    assert_eq!(out.len(), 120);
    assert!(out.frames.iter().zip(&input.frames).any(|(a, b)| a.wrist != b.wrist));

    let mut longer = input.clone();
    longer.frames.push(input.frames[0].clone());
    assert!(matches!(piom.forward(&longer, &scene), Err(PiomError::TooLong { frames: 121, max: 120 })));
}

#[test]
fn invalid_frames_pass_through_unchanged() {
    let model = HandModel::human20();
    let item = ScriptSampler::default().sample(&model, DT, 9).unwrap();
    let input = perturb(&item.gt, &PerturbConfig::parsing_surrogate().with_seed(4));
    assert!(input.valid_count() < input.len(), "profile drops frames");
    let mut piom = Piom::new(PiomConfig::default()).unwrap();
    let [w, b] = piom.output_layer();
    piom.params.params[w].value.data.iter_mut().enumerate().for_each(|(i, v)| *v = 0.02 * ((i % 5) as f64 - 2.0));
    piom.params.params[b].value.data.iter_mut().for_each(|v| *v = 0.1);
    let scene = piom.input_scene(&model, &item.mesh, 1.0).unwrap();
    let out = piom.forward(&input, &scene).unwrap();
    for (a, b) in out.frames.iter().zip(&input.frames) {
        if b.valid {
            assert_ne!(a, b);
        } else {
            assert_bits_eq(
                &trajopt_core::handmodel::Trajectory::new(DT, "", "", vec![a.clone()]),
                &trajopt_core::handmodel::Trajectory::new(DT, "", "", vec![b.clone()]),
            );
        }
    }
}

#[test]
fn clips_without_valid_frames_are_returned_as_is() {
    let model = HandModel::human20();
    let (mut input, _, mesh) = clip(2, 0, 12);
    input.frames.iter_mut().for_each(|f| f.valid = false);
    let mut piom = Piom::new(PiomConfig::default()).unwrap();
    let [_, b] = piom.output_layer();
    piom.params.params[b].value.data.iter_mut().for_each(|v| *v = 0.1);
    let scene = piom.input_scene(&model, &mesh, 1.0).unwrap();
    assert_bits_eq(&piom.forward(&input, &scene).unwrap(), &input);
}

#[test]
fn joint_count_must_match_the_configuration() {
    let (_, _, mesh) = clip(3, 0, 10);
    let robot = HandModel::robot12();
    let piom = Piom::new(PiomConfig::default()).unwrap();
    let scene = piom.input_scene(&robot, &mesh, 1.0).unwrap();
    let frames = (0..4)
        .map(|_| trajopt_core::handmodel::InteractionFrame {
            wrist: trajopt_core::geom::RigidPose::identity(),
            joints: robot.clamp(&vec![0.0; robot.dof()]),
            object: trajopt_core::geom::RigidPose::identity(),
            valid: true,
        })
        .collect();
    let traj = trajopt_core::handmodel::Trajectory::new(DT, "robot12", "", frames);
    assert!(matches!(piom.forward(&traj, &scene), Err(PiomError::Dimension { .. })));
    // a configuration sized for the robot accepts it
    let piom = Piom::new(PiomConfig { pose_width: 18 + robot.dof(), ..Default::default() }).unwrap();
    assert_eq!(piom.forward(&traj, &scene).unwrap(), traj);
}

#[test]
fn invalid_configurations_are_rejected() {
    assert!(Piom::new(PiomConfig { heads: 5, ..Default::default() }).is_err());
    assert!(Piom::new(PiomConfig { hand_tokens: 0, ..Default::default() }).is_err());
    assert!(Piom::new(PiomConfig { hand_points: 8, ..Default::default() }).is_err());
}
