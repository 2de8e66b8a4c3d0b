//! Quad meshes, subdivision hierarchies, per-face geometry and NOCs.

pub mod features;
pub mod mesh;
pub mod noc;
pub mod obj;
pub mod qmh;
pub mod shapes;
pub mod subdiv;

pub use features::{encoder_inputs, face_geometry, FaceGeometryFeature};
pub use mesh::{Aabb, QuadMesh, Vec3, BOUNDARY};
pub use noc::{noc_frame, noc_of_point, Noc};
pub use obj::load_obj;
pub use subdiv::{catmull_clark, subdivide, QuadMeshHierarchy};

/// A point on a quad face: which triangle half and its barycentric weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub face: u32,
    pub half: u8,
    pub bary: [f32; 3],
}

impl SurfacePoint {
    pub fn new(face: u32, half: u8, bary: [f32; 3]) -> Self {
        Self { face, half, bary }
    }

    /// Per-corner weights `[c0, c1, c2, c3]` of the quad this point lies on.
    pub fn corner_weights(&self) -> [f32; 4] {
        let [b1, b2, b3] = self.bary;
        if self.half == 0 {
            [b1, b2, 0.0, b3]
        } else {
            [0.0, b1, b2, b3]
        }
    }
}

/// `b1 P1 + b2 P2 + b3 P3` over the selected triangle half.
pub fn barycentric_point(sp: &SurfacePoint, mesh: &QuadMesh) -> Vec3 {
    let tri = mesh.triangle(sp.face as usize, sp.half);
    let mut p = [0.0; 3];
    for (k, &v) in tri.iter().enumerate() {
        let q = mesh.vertices()[v as usize];
        for c in 0..3 {
            p[c] += sp.bary[k] as f64 * q[c];
        }
    }
    p
}
