mod common;

use common::shipped;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use template_fit::dataset::Dataset;
use template_fit::fitter::{fit_deform, fit_frame, fit_pose, fit_sequence, FitConfig, FrameView};
use template_fit::graphdeform::GraphParams;
use template_fit::kinematics::PoseParams;
use template_fit::metrics::iou_family;
use template_fit::synthgen::{synthesize, DeformSignal, SynthConfig, SynthData};

fn one_frame(deformations: Vec<DeformSignal>) -> SynthData {
    synthesize(
        shipped(),
        &SynthConfig {
            frames: 1,
            deformations,
            ..SynthConfig::default()
        },
    )
    .unwrap()
}

fn bump(node: usize, dy: f64) -> DeformSignal {
    DeformSignal {
        nodes: vec![node],
        angles: [0.0; 3],
        translation: [0.0, dy, 0.0],
        frequency: 0.0,
        phase: 0.0,
    }
}

fn max_theta_error(a: &PoseParams, b: &PoseParams) -> f64 {
    a.theta
        .iter()
        .zip(&b.theta)
        .map(|(x, y)| (x - y).abs())
        .chain((a.alpha - b.alpha).iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
}

#[test]
fn pose_fit_from_truth_stays_put() {
    let data = one_frame(Vec::new());
    let config = FitConfig::default();
    let view = FrameView::new(&data.cameras, &data.frames[0], &config).unwrap();
    let gt = &data.gt[0].pose;
    let fit = fit_pose(shipped(), &view, &config, gt).unwrap();
    let err = max_theta_error(&fit.pose, gt);
    eprintln!("loss {:.3e}, max angle error {err:.3e}, t error {:.3e}", fit.loss, (fit.pose.t - gt.t).norm());
    assert!(fit.loss <= fit.trace[0].total + 1e-15);
    assert!(fit.loss < 1e-8);
    assert!(err < 1e-4);
    assert!((fit.pose.t - gt.t).norm() < 1e-6);
}

#[test]
fn pose_fit_recovers_from_perturbed_start() {
    let data = one_frame(Vec::new());
    let skeleton = &shipped().rig.skeleton;
    let gt = &data.gt[0].pose;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut init = gt.clone();
    for (v, &[lo, hi]) in init.theta.iter_mut().zip(&skeleton.limits) {
        *v = (*v + rng.gen_range(-0.2..=0.2)).clamp(lo, hi);
    }
    init.alpha += Vector3::from_fn(|_, _| rng.gen_range(-0.2..=0.2));
    let config = FitConfig {
        pose_iterations: 3000,
        ..FitConfig::default()
    };
    let view = FrameView::new(&data.cameras, &data.frames[0], &config).unwrap();
    let fit = fit_pose(shipped(), &view, &config, &init).unwrap();
    let err = max_theta_error(&fit.pose, gt);
    eprintln!("start error {:.3}, final {err:.4} rad", max_theta_error(&init, gt));
    assert!(err < 0.01);
}

#[test]
fn deformation_fit_at_the_true_pose_of_an_undeformed_body() {
    let data = one_frame(Vec::new());
    let config = FitConfig {
        deform_iterations: 150,
        ..FitConfig::default()
    };
    let view = FrameView::new(&data.cameras, &data.frames[0], &config).unwrap();
    let k = shipped().node_count();
    let fit = fit_deform(shipped(), &view, &config, &data.gt[0].pose, &GraphParams::zeros(k)).unwrap();
    let t_max = fit.graph.translations.iter().flat_map(|t| t.iter().map(|v| v.abs())).fold(0.0, f64::max);
    eprintln!("deform loss {:.4e} -> {:.4e}, |T|max {t_max:.4} m", fit.trace[0].total, fit.loss);
    assert!(fit.loss <= fit.trace[0].total);
    // The masks are quantized to ~8 mm pixels at this distance; the node
    // translations stay within a few pixels of zero.
    assert!(t_max < 0.025);
}

#[test]
fn silhouette_bump_is_partly_recovered() {
    let data = one_frame(vec![bump(13, 0.05)]);
    let config = FitConfig::default();
    let view = FrameView::new(&data.cameras, &data.frames[0], &config).unwrap();
    let character = shipped();
    let k = character.node_count();
    let gt = &data.gt[0].pose;
    let fit = fit_deform(character, &view, &config, gt, &GraphParams::zeros(k)).unwrap();
    let along = fit.graph.translations[13].y;
    let score = |g: &GraphParams| {
        let transforms = template_fit::kinematics::node_transforms(character, &gt.theta, &gt.alpha).unwrap();
        let mesh = template_fit::graphdeform::mesh_state(character, g, &transforms, &data.cameras[0], &gt.t).unwrap();
        iou_family(&[mesh.world], &character.rig.mesh.faces, &data.masks(), &data.cameras, 0).unwrap().amviou
    };
    let (before, after) = (score(&GraphParams::zeros(k)), score(&fit.graph));
    eprintln!("node 13 moved {along:.4} m of 0.05; AMVIoU {before:.4} -> {after:.4}");
    assert!(along > 0.02);
    assert!(after > before + 0.005);
}

#[test]
fn arap_alone_only_relaxes() {
    let data = one_frame(Vec::new());
    let mut config = FitConfig {
        deform_iterations: 60,
        ..FitConfig::default()
    };
    config.weights.w_sil = 0.0;
    config.weights.w_kpg = 0.0;
    let view = FrameView::new(&data.cameras, &data.frames[0], &config).unwrap();
    let k = shipped().node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let init = GraphParams {
        angles: (0..k).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-0.1..0.1))).collect(),
        translations: (0..k).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-0.02..0.02))).collect(),
    };
    let fit = fit_deform(shipped(), &view, &config, &data.gt[0].pose, &init).unwrap();
    let first = fit.trace[0];
    assert!(fit.loss < first.arap * config.weights.w_arap, "{} vs {}", fit.loss, first.arap);
}

#[test]
fn one_frame_sequence_is_the_two_stages_composed() {
    let data = one_frame(vec![bump(13, 0.03)]);
    let config = FitConfig {
        pose_iterations: 100,
        deform_iterations: 20,
        ..FitConfig::default()
    };
    let seq = fit_sequence(shipped(), &data.dataset(), &config).unwrap();
    let view = FrameView::new(&data.cameras, &data.frames[0], &config).unwrap();
    let pose = fit_pose(shipped(), &view, &config, &PoseParams::rest(&shipped().rig.skeleton)).unwrap();
    let deform = fit_deform(shipped(), &view, &config, &pose.pose, &GraphParams::zeros(shipped().node_count())).unwrap();
    assert_eq!(seq.frames[0].pose, pose.pose);
    assert_eq!(seq.frames[0].graph, deform.graph);
    // The smoothing window of a single frame is that frame.
    assert_eq!(seq.smoothed[0], seq.frames[0].mesh);
}

#[test]
fn deformation_stage_leaves_the_pose_alone() {
    let data = one_frame(vec![bump(13, 0.05)]);
    let config = FitConfig {
        pose_iterations: 100,
        deform_iterations: 20,
        ..FitConfig::default()
    };
    let full = fit_frame(shipped(), &data.cameras, &data.frames[0], &config, 0, None).unwrap();
    let pose_only = FitConfig {
        pose_only: true,
        ..config
    };
    let rigid = fit_frame(shipped(), &data.cameras, &data.frames[0], &pose_only, 0, None).unwrap();
    assert_eq!(full.pose, rigid.pose);
    assert_ne!(full.graph, rigid.graph);
    assert_eq!(rigid.graph, GraphParams::zeros(shipped().node_count()));
}

#[test]
fn repeated_frames_settle() {
    let data = one_frame(Vec::new());
    let base = data.dataset();
    let dataset = Dataset {
        frames: vec![base.frames[0].clone(); 3],
        ..base
    };
    // Converged from the rest pose, so later frames start at the optimum.
    let config = FitConfig {
        pose_only: true,
        pose_iterations: 3000,
        ..FitConfig::default()
    };
    let seq = fit_sequence(shipped(), &dataset, &config).unwrap();
    let d01 = max_theta_error(&seq.frames[0].pose, &seq.frames[1].pose);
    let d12 = max_theta_error(&seq.frames[1].pose, &seq.frames[2].pose);
    eprintln!("frame 0->1 {d01:.2e}, 1->2 {d12:.2e} rad");
    assert!(d01 < 1e-3 && d12 < 1e-3);
}

#[test]
fn warm_start_does_not_hurt() {
    let data = synthesize(
        shipped(),
        &SynthConfig {
            frames: 20,
            keypoint_noise: 1.0,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let config = FitConfig::default();
    let rest = PoseParams::rest(&shipped().rig.skeleton);
    let (mut warm, mut cold) = (Vec::new(), Vec::new());
    let mut prev = rest.clone();
    for obs in &data.frames {
        let view = FrameView::new(&data.cameras, obs, &config).unwrap();
        let w = fit_pose(shipped(), &view, &config, &prev).unwrap();
        let c = fit_pose(shipped(), &view, &config, &rest).unwrap();
        warm.push(w.loss);
        cold.push(c.loss);
        prev = w.pose;
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (w, c) = (median(&mut warm), median(&mut cold));
    eprintln!("median final loss: warm {w:.4e}, cold {c:.4e}");
    assert!(w <= c);
}
