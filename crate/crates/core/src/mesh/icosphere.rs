use std::collections::HashMap;

use super::TriangleMesh;
use crate::error::{BemError, Result};
use crate::vec3::{self, Vec3};

/// Finest supported subdivision level (20·4⁸ ≈ 1.3M elements).
pub const MAX_SPHERE_LEVEL: u32 = 8;

/// Unit icosphere: an icosahedron subdivided `level` times with every vertex
/// projected onto the unit sphere. Normals point outward.
pub fn refine_unit_sphere(level: u32) -> Result<TriangleMesh> {
    if level > MAX_SPHERE_LEVEL {
        return Err(BemError::Capacity(format!(
            "sphere level {level} exceeds the maximum of {MAX_SPHERE_LEVEL}"
        )));
    }
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .into_iter()
    .map(vec3::normalize)
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for f in faces.iter_mut() {
        orient_outward(&vertices, f);
    }

    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = vec3::normalize(vec3::scale(vec3::add(vertices[a], vertices[b]), 0.5));
                vertices.push(m);
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriangleMesh::new(vertices, faces)
}

fn orient_outward(vertices: &[Vec3], f: &mut [usize; 3]) {
    let [a, b, c] = [vertices[f[0]], vertices[f[1]], vertices[f[2]]];
    let n = vec3::cross(vec3::sub(b, a), vec3::sub(c, a));
    let centroid = vec3::add(vec3::add(a, b), c);
    if vec3::dot(n, centroid) < 0.0 {
        f.swap(1, 2);
    }
}
