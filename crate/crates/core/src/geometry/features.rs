//! Per-face geometric descriptors fed to the generator encoder.

use std::f64::consts::PI;

use super::mesh::{cross, dot, norm, scale, sub, QuadMesh, Vec3};

const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceGeometryFeature {
    pub normal: Vec3,
    /// `(E, F, G)` of the bilinear patch at `(u, v) = (0.5, 0.5)`.
    pub fundamental_form: [f64; 3],
    pub curvature: f64,
    pub area: f64,
    pub degenerate: bool,
}

impl FaceGeometryFeature {
    pub const INPUT_DIM: usize = 8;
}

fn face_area(c: &[Vec3; 4]) -> f64 {
    let t0 = norm(cross(sub(c[1], c[0]), sub(c[3], c[0])));
    let t1 = norm(cross(sub(c[2], c[1]), sub(c[3], c[1])));
    0.5 * (t0 + t1)
}

fn angle(a: Vec3, b: Vec3) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos()
}

pub fn face_geometry(mesh: &QuadMesh) -> Vec<FaceGeometryFeature> {
    let nf = mesh.n_faces();
    let nv = mesh.n_vertices();
    let corners: Vec<[Vec3; 4]> = (0..nf).map(|f| mesh.corner_positions(f)).collect();
    let areas: Vec<f64> = corners.iter().map(face_area).collect();

    // Is the vertex on a boundary edge?
    let mut on_boundary = vec![false; nv];
    for (f, adj) in mesh.adjacency().iter().enumerate() {
        let c = mesh.faces()[f];
        for k in 0..4 {
            if adj[k] == super::mesh::BOUNDARY {
                on_boundary[c[k] as usize] = true;
                on_boundary[c[(k + 1) % 4] as usize] = true;
            }
        }
    }

    let mut angle_sum = vec![0.0; nv];
    let mut vertex_area = vec![0.0; nv];
    for (f, c) in corners.iter().enumerate() {
        let idx = mesh.faces()[f];
        for k in 0..4 {
            let prev = c[(k + 3) % 4];
            let next = c[(k + 1) % 4];
            angle_sum[idx[k] as usize] += angle(sub(next, c[k]), sub(prev, c[k]));
            vertex_area[idx[k] as usize] += 0.25 * areas[f];
        }
    }
    let gauss: Vec<f64> = (0..nv)
        .map(|v| {
            let full = if on_boundary[v] { PI } else { 2.0 * PI };
            if vertex_area[v] > DEGENERATE_AREA {
                (full - angle_sum[v]) / vertex_area[v]
            } else {
                0.0
            }
        })
        .collect();

    (0..nf)
        .map(|f| {
            let c = &corners[f];
            let area = areas[f];
            let n = cross(sub(c[2], c[0]), sub(c[3], c[1]));
            let nn = norm(n);
            let degenerate = area <= DEGENERATE_AREA || nn == 0.0;
            let normal = if degenerate { [0.0; 3] } else { scale(n, 1.0 / nn) };
            // P(u,v) = (1-u)(1-v) c0 + u(1-v) c1 + uv c2 + (1-u)v c3
            let pu = scale(super::mesh::add(sub(c[1], c[0]), sub(c[2], c[3])), 0.5);
            let pv = scale(super::mesh::add(sub(c[3], c[0]), sub(c[2], c[1])), 0.5);
            let fundamental_form = [dot(pu, pu), dot(pu, pv), dot(pv, pv)];
            let curvature = mesh.faces()[f].iter().map(|&v| gauss[v as usize]).sum::<f64>() / 4.0;
            FaceGeometryFeature {
                normal,
                fundamental_form,
                curvature,
                area,
                degenerate,
            }
        })
        .collect()
}

/// Generator input rows `[n (3), E, F, G, curvature, area]`, with areas and
/// fundamental forms divided by the mean face area and curvature multiplied
/// by it, so the rows are invariant to uniform scaling of the mesh.
pub fn encoder_inputs(features: &[FaceGeometryFeature]) -> Vec<f32> {
    let mean_area = (features.iter().map(|f| f.area).sum::<f64>() / features.len().max(1) as f64)
        .max(DEGENERATE_AREA);
    let mut out = Vec::with_capacity(features.len() * FaceGeometryFeature::INPUT_DIM);
    for f in features {
        out.extend([
            f.normal[0] as f32,
            f.normal[1] as f32,
            f.normal[2] as f32,
            (f.fundamental_form[0] / mean_area) as f32,
            (f.fundamental_form[1] / mean_area) as f32,
            (f.fundamental_form[2] / mean_area) as f32,
            (f.curvature * mean_area) as f32,
            (f.area / mean_area) as f32,
        ]);
    }
    out
}
