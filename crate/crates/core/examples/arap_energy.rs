//! The graph's as-rigid-as-possible energy: zero for any global rigid
//! motion of the node frames, positive once a single node moves.

use nalgebra::Vector3;
use template_fit::assets::{shipped_rig_dir, Character};
use template_fit::losses::arap_loss;
use template_fit::graphdeform::GraphParams;
use template_fit::math::euler_xyz;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let character = Character::load_dir(&shipped_rig_dir(), None)?;
    let graph = &character.graph;
    let k = graph.node_count();

    let shift = GraphParams {
        angles: vec![Vector3::zeros(); k],
        translations: vec![Vector3::new(0.3, -0.1, 0.2); k],
    };
    // rotating every node frame by R about the origin: node k moves by (R - I) G_k
    let angles = Vector3::new(0.4, -0.7, 1.1);
    let r = euler_xyz(&angles);
    let spin = GraphParams {
        angles: vec![angles; k],
        translations: graph.nodes.iter().map(|g| r * g - g).collect(),
    };
    let mut bump = GraphParams::zeros(k);
    bump.translations[13] = Vector3::new(0.0, 0.05, 0.0);

    for (name, params) in [("identity", GraphParams::zeros(k)), ("translation", shift), ("rotation", spin), ("5 cm bump", bump)] {
        let (energy, grad) = arap_loss(graph, &params);
        let g = grad.translations.iter().map(|v| v.norm()).fold(0.0, f64::max);
        println!("{name:<12} E = {energy:.3e}   max |dE/dT_k| = {g:.3e}");
    }
    Ok(())
}
