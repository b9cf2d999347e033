//! Generates a small synthetic dataset on disk and prints what was written.
//!
//! cargo run --release --example synth_dataset -- [OUT_DIR] [FRAMES]

use std::path::PathBuf;

use template_fit::assets::{shipped_rig_dir, Character};
use template_fit::synthgen::{generate, DeformSignal, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("template-fit-synth"));
    let frames: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);

    let character = Character::load_dir(&shipped_rig_dir(), None)?;
    let config = SynthConfig {
        frames,
        keypoint_noise: 1.0,
        // a slow 3 cm wobble of the left forearm node
        deformations: vec![DeformSignal {
            nodes: vec![13],
            angles: [0.0; 3],
            translation: [0.0, 0.03, 0.0],
            frequency: 0.05,
            phase: 0.0,
        }],
        ..SynthConfig::default()
    };
    let data = generate(&character, &config, &out)?;

    println!("wrote {} frames x {} cameras to {}", data.frames.len(), data.cameras.len(), out.display());
    for (c, cam) in data.cameras.iter().enumerate() {
        let area = data.frames[0].silhouettes[c].mask.count();
        println!("  camera {c}: origin {:>6.2?}  silhouette {area} px", cam.origin.as_slice());
    }
    println!("evaluation joints: {}", data.meta.eval_joints.join(", "));
    Ok(())
}
