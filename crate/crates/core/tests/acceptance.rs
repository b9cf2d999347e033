//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any of them fails.

mod common;

use std::fs;
use std::time::Instant;

use common::{cli, path, shipped};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use template_fit::align::{alignment_residual, solve_translation, Ray, RayBundle};
use template_fit::camproj::{contour, squared_edt, Mask};
use template_fit::cli::EXIT_OK;
use template_fit::fitter::{fit_frame, fit_sequence, FitConfig};
use template_fit::gradcheck::{gradcheck_suite, GradcheckConfig};
use template_fit::graphdeform::{mesh_state, GraphParams};
use template_fit::kinematics::{blend_transforms, node_transforms, RigidTransform};
use template_fit::losses::{arap_loss, LossWeights};
use template_fit::math::euler_xyz;
use template_fit::metrics::{iou_family, iou_summary, mpjpe_procrustes, pose_scores, JointSequence, PoseScores};
use template_fit::synthgen::{synthesize, DeformSignal, SynthConfig, SynthData};
use template_fit::Error;

type Check = Result<(bool, String), Box<dyn std::error::Error>>;

fn gradients() -> Check {
    let start = Instant::now();
    let config = GradcheckConfig::default();
    let report = gradcheck_suite(shipped(), &config, LossWeights::default(), 0)?;
    let secs = start.elapsed().as_secs_f64();
    let worst = report.worst().map_or(f64::NAN, |r| r.block.max_error);
    Ok((
        report.passed() && config.configurations >= 20 && secs < 120.0,
        format!("{} configurations, worst relative error {worst:.2e}, {secs:.1} s", config.configurations),
    ))
}

/// Fletcher-Reeves conjugate gradients on `f` with central-difference
/// gradients and three-point line searches (both exact for a quadratic).
fn numeric_minimum(f: impl Fn(&Vector3<f64>) -> f64) -> Vector3<f64> {
    let h = 1e-4;
    let grad = |t: &Vector3<f64>| {
        Vector3::from_fn(|i, _| {
            let e = Vector3::ith(i, h);
            (f(&(t + e)) - f(&(t - e))) / (2.0 * h)
        })
    };
    let mut t = Vector3::zeros();
    let mut g = grad(&t);
    let mut d = -g;
    for k in 0..60 {
        if g.norm() < 1e-13 {
            break;
        }
        let u = d.normalize();
        let (fm, f0, fp) = (f(&(t - u)), f(&t), f(&(t + u)));
        let (a, b) = ((fp + fm - 2.0 * f0) / 2.0, (fp - fm) / 2.0);
        t += u * (-b / (2.0 * a));
        let g_next = grad(&t);
        d = if (k + 1) % 3 == 0 {
            -g_next
        } else {
            -g_next + d * (g_next.norm_squared() / g.norm_squared())
        };
        g = g_next;
    }
    t
}

fn alignment() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    let mut exact: f64 = 0.0;
    for _ in 0..100 {
        let cams = rng.gen_range(2..=7);
        let landmarks = rng.gen_range(3..=21);
        let origins: Vec<Vector3<f64>> = (0..cams)
            .map(|_| {
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                Vector3::new(4.0 * a.cos(), rng.gen_range(-1.0..1.0), 4.0 * a.sin())
            })
            .collect();
        let q: Vec<Vector3<f64>> = (0..landmarks).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-0.8..0.8))).collect();
        let t_true = Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        let bundle = |noise: f64, rng: &mut ChaCha8Rng| RayBundle {
            rays: origins
                .iter()
                .map(|o| {
                    q.iter()
                        .map(|p| {
                            let target = p + t_true + Vector3::from_fn(|_, _| rng.gen_range(-noise..=noise));
                            Ray {
                                origin: *o,
                                direction: (target - o).normalize(),
                                sigma: if noise > 0.0 { rng.gen_range(0.2..1.0) } else { 1.0 },
                            }
                        })
                        .collect()
                })
                .collect(),
        };
        let noisy = bundle(0.05, &mut rng);
        let closed = solve_translation(&q, &noisy)?;
        let numeric = numeric_minimum(|t| alignment_residual(&q, t, &noisy));
        worst = worst.max((closed - numeric).norm());
        exact = exact.max((solve_translation(&q, &bundle(0.0, &mut rng))? - t_true).norm());
    }
    let d = Vector3::new(0.0, 0.0, 1.0);
    let parallel = RayBundle {
        rays: (0..3)
            .map(|c| {
                (0..4)
                    .map(|m| Ray {
                        origin: Vector3::new(c as f64, m as f64 * 0.1, -4.0),
                        direction: d,
                        sigma: 1.0,
                    })
                    .collect()
            })
            .collect(),
    };
    let degenerate = matches!(solve_translation(&vec![Vector3::zeros(); 4], &parallel), Err(Error::DegenerateRays { .. }));
    Ok((
        worst < 1e-6 && exact < 1e-9 && degenerate,
        format!("closed form vs numeric {worst:.1e} m, exact rays {exact:.1e} m, parallel rays rejected: {degenerate}"),
    ))
}

fn rigidity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let graph = &shipped().graph;
    let k = shipped().node_count();
    let mut arap: f64 = 0.0;
    for _ in 0..20 {
        let shift = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let moved = GraphParams {
            angles: vec![Vector3::zeros(); k],
            translations: vec![shift; k],
        };
        let e = Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
        let r = euler_xyz(&e);
        let turned = GraphParams {
            angles: vec![e; k],
            translations: graph.nodes.iter().map(|g| r * g - g + shift).collect(),
        };
        arap = arap.max(arap_loss(graph, &moved).0).max(arap_loss(graph, &turned).0);
    }
    let mut dqs: f64 = 0.0;
    for _ in 0..100 {
        let bones: Vec<RigidTransform> = (0..4)
            .map(|_| RigidTransform {
                rotation: Rotation3::new(Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0))).into_inner(),
                translation: Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
            })
            .collect();
        let b = rng.gen_range(0..4);
        let out = blend_transforms(&bones, &[vec![(b, 1.0)]])?.transforms[0];
        dqs = dqs
            .max((out.rotation - bones[b].rotation).abs().max())
            .max((out.translation - bones[b].translation).abs().max());
    }
    Ok((arap <= 1e-9 && dqs <= 1e-9, format!("max ARAP under global motion {arap:.1e}, single-bone DQS error {dqs:.1e}")))
}

fn distance_transform() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..100 {
        let density = rng.gen_range(0.05..0.95);
        let bits: Vec<bool> = (0..32 * 32).map(|_| rng.gen_bool(density)).collect();
        let mask = Mask::from_fn(32, 32, |x, y| bits[y * 32 + x]);
        let seeds = contour(&mask);
        let fast = squared_edt(&seeds, 32, 32);
        let points: Vec<(i64, i64)> = (0..32 * 32).filter(|&i| seeds[i]).map(|i| ((i % 32) as i64, (i / 32) as i64)).collect();
        let brute: Vec<i64> = (0..32 * 32)
            .map(|i| {
                let (x, y) = ((i % 32) as i64, (i / 32) as i64);
                points.iter().map(|&(sx, sy)| (sx - x).pow(2) + (sy - y).pow(2)).min().unwrap_or(i64::MAX)
            })
            .collect();
        if points.is_empty() {
            continue;
        }
        mismatches += usize::from(fast != brute);
    }
    Ok((mismatches == 0, format!("{mismatches} of 100 masks differ from brute force")))
}

fn walk(noise: f64) -> SynthData {
    synthesize(
        shipped(),
        &SynthConfig {
            keypoint_noise: noise,
            ..SynthConfig::default()
        },
    )
    .expect("synthetic walk")
}

fn pose_only_scores(data: &SynthData, cameras: Option<Vec<usize>>) -> Result<PoseScores, Box<dyn std::error::Error>> {
    let config = FitConfig {
        pose_only: true,
        cameras,
        ..FitConfig::default()
    };
    let result = fit_sequence(shipped(), &data.dataset(), &config)?;
    let pred = JointSequence::new(result.joints(&shipped().rig.skeleton, &data.cameras[0])?, data.eval_parents());
    Ok(pose_scores(&pred, &data.gt_joints())?)
}

fn pose_recovery(noisy: &SynthData) -> Check {
    let start = Instant::now();
    let clean = pose_only_scores(&walk(0.0), None)?;
    let with_noise = pose_only_scores(noisy, None)?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        clean.pck3d == 100.0 && clean.mpjpe_pa_mm < 10.0 && with_noise.pck3d >= 95.0 && secs < 600.0,
        format!(
            "noiseless 3DPCK {:.1}, MPJPE-PA {:.2} mm; 1 px noise 3DPCK {:.1}, MPJPE-PA {:.2} mm; {secs:.1} s",
            clean.pck3d, clean.mpjpe_pa_mm, with_noise.pck3d, with_noise.mpjpe_pa_mm
        ),
    ))
}

fn deformation_recovery() -> Check {
    let character = shipped();
    let bump = DeformSignal {
        nodes: vec![13],
        angles: [0.0; 3],
        translation: [0.0, 0.05, 0.0],
        frequency: 0.0,
        phase: 0.0,
    };
    let data = synthesize(
        character,
        &SynthConfig {
            frames: 6,
            deformations: vec![bump],
            ..SynthConfig::default()
        },
    )?;
    let faces = &character.rig.mesh.faces;
    let masks = data.masks();
    let config = FitConfig::default();
    let result = fit_sequence(character, &data.dataset(), &config)?;
    // Stage A does not depend on the graph, so the pose-only meshes are the
    // fitted poses with an undeformed graph.
    let rigid = GraphParams::zeros(character.node_count());
    let pose_only = result
        .frames
        .iter()
        .map(|f| {
            let tr = node_transforms(character, &f.pose.theta, &f.pose.alpha)?;
            Ok(mesh_state(character, &rigid, &tr, &data.cameras[0], &f.pose.t)?.world)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let before = iou_family(&pose_only, faces, &masks, &data.cameras, 0)?.amviou;
    let after = iou_family(&result.world_meshes(), faces, &masks, &data.cameras, 0)?.amviou;

    // The same bump fitted from the true pose isolates the deformation stage.
    let gt = &data.gt[0];
    let one = |cfg: &FitConfig| fit_frame(character, &data.cameras, &data.frames[0], cfg, 0, Some((&gt.pose, &rigid)));
    let iso_rigid = one(&FitConfig {
        pose_only: true,
        ..config.clone()
    })?;
    let iso_full = one(&config)?;
    let first = &masks[..1];
    let iso_before = iou_family(&[iso_rigid.mesh.world], faces, first, &data.cameras, 0)?.amviou;
    let iso_after = iou_family(&[iso_full.mesh.world], faces, first, &data.cameras, 0)?.amviou;

    let gain = 100.0 * (after - before);
    Ok((
        gain >= 2.0 && after >= 0.95,
        format!(
            "6 frames AMVIoU {before:.4} -> {after:.4} ({gain:+.2} points); from the true pose {iso_before:.4} -> {iso_after:.4} ({:+.2} points)",
            100.0 * (iso_after - iso_before)
        ),
    ))
}

fn camera_ablation(noisy: &SynthData) -> Check {
    let one = pose_only_scores(noisy, Some(vec![0]))?.pck3d;
    let two = pose_only_scores(noisy, Some(vec![0, 1]))?.pck3d;
    let seven = pose_only_scores(noisy, None)?.pck3d;
    Ok((
        one < two && two <= seven && two - one > seven - two,
        format!("3DPCK 1 cam {one:.1}, 2 cams {two:.1}, 7 cams {seven:.1}"),
    ))
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path();
    let config = root.join("c.toml");
    fs::write(&config, "[fit]\ndeform_iterations = 40\n[synth]\nframes = 3\nkeypoint_noise = 1.0\n")?;
    let data = root.join("data");
    let mut ok = cli(&["synth", "--config", path(&config), "--out", path(&data)]) == EXIT_OK;
    for (out, jobs) in [("a", "1"), ("b", "1"), ("c", "0")] {
        ok &= cli(&["fit", "--dataset", path(&data), "--config", path(&config), "--out", path(&root.join(out)), "--jobs", jobs]) == EXIT_OK;
    }
    if !ok {
        return Ok((false, "a command failed".into()));
    }
    let files = |run: &str| -> Vec<(String, Vec<u8>)> {
        common::tree(&root.join(run))
            .into_iter()
            .filter(|(n, _)| n.starts_with("params") || n.starts_with("meshes") || n.starts_with("smoothed"))
            .collect()
    };
    let a = files("a");
    let same = a == files("b") && a == files("c");
    Ok((same && a.len() == 9, format!("{} parameter and mesh files identical across 3 runs: {same}", a.len())))
}

fn metric_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut decomposition: f64 = 0.0;
    for _ in 0..100 {
        let cams = rng.gen_range(2..=8);
        let table: Vec<Vec<f64>> = (0..rng.gen_range(1..30)).map(|_| (0..cams).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let s = iou_summary(&table, rng.gen_range(0..cams))?;
        let c = cams as f64;
        decomposition = decomposition.max((s.amviou - (s.rviou * (c - 1.0) + s.sviou) / c).abs());
    }
    let parents: Vec<Option<usize>> = (0..15).map(|j| if j == 0 { None } else { Some((j - 1) / 2) }).collect();
    let cloud = |rng: &mut ChaCha8Rng| (0..15).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect::<Vec<_>>();
    let pred: Vec<Vec<Vector3<f64>>> = (0..10).map(|_| cloud(&mut rng)).collect();
    let gt = JointSequence::new((0..10).map(|_| cloud(&mut rng)).collect(), parents.clone());
    let base = mpjpe_procrustes(&JointSequence::new(pred.clone(), parents.clone()), &gt)?;
    let mut invariance: f64 = 0.0;
    for _ in 0..20 {
        let r: Matrix3<f64> = Rotation3::new(Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0))).into_inner();
        let s = rng.gen_range(0.2..5.0);
        let t = Vector3::from_fn(|_, _| rng.gen_range(-10.0..10.0));
        let moved = pred.iter().map(|f| f.iter().map(|p| r * p * s + t).collect()).collect();
        invariance = invariance.max((mpjpe_procrustes(&JointSequence::new(moved, parents.clone()), &gt)? - base).abs());
    }
    Ok((
        decomposition <= 4.0 * f64::EPSILON && invariance < 1e-6,
        format!("AMVIoU decomposition deviation {decomposition:.1e} (rounding only), MPJPE-PA similarity drift {invariance:.1e} mm"),
    ))
}

fn main() {
    let noisy = walk(1.0);
    let checks: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("gradient fidelity", Box::new(gradients)),
        ("alignment oracle", Box::new(alignment)),
        ("rigidity invariants", Box::new(rigidity)),
        ("distance transform oracle", Box::new(distance_transform)),
        ("pose recovery", Box::new(|| pose_recovery(&noisy))),
        ("deformation recovery", Box::new(deformation_recovery)),
        ("camera ablation", Box::new(|| camera_ablation(&noisy))),
        ("determinism", Box::new(determinism)),
        ("metric identities", Box::new(metric_identities)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += usize::from(!pass);
        println!("criterion {} {} {name}: {detail}", i + 1, if pass { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria pass", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
