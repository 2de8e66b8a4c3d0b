//! Procedural quad meshes used by tests, fixtures and the toy corpus.

use super::mesh::{norm, scale, QuadMesh, Vec3};
use super::subdiv::catmull_clark;

/// Axis-aligned cube `[-0.5, 0.5]^3` with outward-facing quads.
pub fn unit_cube() -> QuadMesh {
    let vertices: Vec<Vec3> = (0..8)
        .map(|i| {
            [
                (i & 1) as f64 - 0.5,
                ((i >> 1) & 1) as f64 - 0.5,
                ((i >> 2) & 1) as f64 - 0.5,
            ]
        })
        .collect();
    let faces = vec![
        [4, 5, 7, 6], // +z
        [0, 2, 3, 1], // -z
        [1, 3, 7, 5], // +x
        [0, 4, 6, 2], // -x
        [2, 6, 7, 3], // +y
        [0, 1, 5, 4], // -y
    ];
    QuadMesh::new(vertices, faces).expect("cube is valid")
}

/// `nx` x `ny` grid of unit quads in the z = 0 plane, normals +z.
pub fn plane_grid(nx: usize, ny: usize) -> QuadMesh {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for y in 0..=ny {
        for x in 0..=nx {
            vertices.push([x as f64, y as f64, 0.0]);
        }
    }
    let id = |x: usize, y: usize| (y * (nx + 1) + x) as u32;
    let mut faces = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        for x in 0..nx {
            faces.push([id(x, y), id(x + 1, y), id(x + 1, y + 1), id(x, y + 1)]);
        }
    }
    QuadMesh::new(vertices, faces).expect("grid is valid")
}

pub fn single_quad() -> QuadMesh {
    plane_grid(1, 1)
}

/// Cube subdivided `levels` times with every vertex pushed onto the sphere
/// of the given radius.
pub fn quad_sphere(levels: usize, radius: f64) -> QuadMesh {
    let mut m = unit_cube();
    for _ in 0..levels {
        m = catmull_clark(&m).expect("closed mesh subdivides").0;
    }
    m.map_vertices(|v| scale(v, radius / norm(v)))
}
