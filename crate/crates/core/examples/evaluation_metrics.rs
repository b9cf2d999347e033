//! Pose and silhouette metrics on a hand-made prediction: the ground truth
//! scaled, rotated and shifted, plus a jittered copy.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use template_fit::assets::{shipped_rig_dir, Character};
use template_fit::metrics::{iou, iou_summary, mpjpe_procrustes, pose_scores, JointSequence};
use template_fit::synthgen::{synthesize, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let character = Character::load_dir(&shipped_rig_dir(), None)?;
    let data = synthesize(&character, &SynthConfig { frames: 6, ..SynthConfig::default() })?;
    let gt = data.gt_joints();

    let r = Rotation3::from_euler_angles(0.3, -0.2, 0.9);
    let similar = JointSequence::new(
        gt.frames.iter().map(|f| f.iter().map(|p| r * p * 1.7 + Vector3::new(1.0, 2.0, 3.0)).collect()).collect(),
        gt.parents.clone(),
    );
    println!("similarity-transformed prediction: MPJPE-PA {:.2e} mm", mpjpe_procrustes(&similar, &gt)?);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let jittered = JointSequence::new(
        gt.frames
            .iter()
            .map(|f| f.iter().map(|p| p + Vector3::new(rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03))).collect())
            .collect(),
        gt.parents.clone(),
    );
    let s = pose_scores(&jittered, &gt)?;
    println!("3 cm jitter: GLE {:.1} mm, 3DPCK {:.1}%, AUC {:.1}, MPJPE-PA {:.1} mm", s.gle_mm, s.pck3d, s.auc, s.mpjpe_pa_mm);

    // IoU of each frame's masks against the first frame's
    let masks = data.masks();
    let table: Vec<Vec<f64>> = masks.iter().map(|f| f.iter().zip(&masks[0]).map(|(a, b)| iou(a, b)).collect()).collect();
    let fam = iou_summary(&table, 0)?;
    let c = data.cameras.len() as f64;
    println!("mask drift vs frame 0: AMVIoU {:.4} RVIoU {:.4} SVIoU {:.4}", fam.amviou, fam.rviou, fam.sviou);
    println!("(RVIoU*(C-1) + SVIoU)/C = {:.4}", (fam.rviou * (c - 1.0) + fam.sviou) / c);
    Ok(())
}
