//! Writes the capsule-person rig directory.
//!
//! cargo run --example build_rig -- [OUT_DIR] [CELL] [NODES]

use std::path::PathBuf;

use template_fit::assets::{capsule_person, shipped_rig_dir, Character, GraphSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(shipped_rig_dir);
    let cell: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.04);
    let nodes: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);

    let person = capsule_person(cell)?;
    let settings = GraphSettings {
        nodes,
        ..GraphSettings::default()
    };
    person.write_dir(&out, settings)?;

    let character = Character::load_dir(&out, None)?;
    println!(
        "{}: {} vertices, {} faces, {} joints, {} graph nodes, {} graph edges",
        out.display(),
        character.vertex_count(),
        character.rig.mesh.faces.len(),
        character.rig.skeleton.joint_count(),
        character.node_count(),
        character.graph.edge_count(),
    );
    Ok(())
}
