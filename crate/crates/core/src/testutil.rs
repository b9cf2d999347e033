use std::sync::OnceLock;

use nalgebra::Vector3;

use crate::assets::{capsule_person, Character, GraphSettings};
use crate::camproj::{Camera, Intrinsics};

/// Coarse capsule person shared by unit tests.
pub(crate) fn test_character() -> &'static Character {
    static CELL: OnceLock<Character> = OnceLock::new();
    CELL.get_or_init(|| {
        let rig = capsule_person(0.05).unwrap().into_rig().unwrap();
        Character::new(
            rig,
            GraphSettings {
                nodes: 30,
                ..GraphSettings::default()
            },
        )
        .unwrap()
    })
}

/// Off-axis camera looking at the origin from the front.
pub(crate) fn test_camera() -> Camera {
    let k = Intrinsics {
        fx: 480.0,
        fy: 480.0,
        cx: 200.0,
        cy: 200.0,
    };
    Camera::look_at(
        Vector3::new(-1.5, -0.6, -3.6),
        Vector3::zeros(),
        Vector3::y(),
        k,
        400,
        400,
    )
    .unwrap()
}

/// Subdivided icosahedron with outward winding.
pub(crate) fn icosphere(radius: f64, center: Vector3<f64>, levels: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vector3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vector3::from(*p).normalize())
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(f.len() * 4);
        for tri in &f {
            let mut m = [0; 3];
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                m[e] = *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    v.push(((v[a] + v[b]) / 2.0).normalize());
                    v.len() - 1
                });
            }
            next.push([tri[0], m[0], m[2]]);
            next.push([tri[1], m[1], m[0]]);
            next.push([tri[2], m[2], m[1]]);
            next.push([m[0], m[1], m[2]]);
        }
        f = next;
    }
    (v.into_iter().map(|p| center + p * radius).collect(), f)
}

#[test]
fn icosphere_is_outward() {
    let (v, f) = icosphere(1.0, Vector3::zeros(), 2);
    for tri in &f {
        let n = (v[tri[1]] - v[tri[0]]).cross(&(v[tri[2]] - v[tri[0]]));
        assert!(n.dot(&v[tri[0]]) > 0.0);
    }
}
