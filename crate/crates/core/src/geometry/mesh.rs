use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Adjacency sentinel for a boundary edge.
pub const BOUNDARY: u32 = u32::MAX;

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn of_points(points: &[Vec3]) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Self { min, max }
    }

    pub fn center(&self) -> Vec3 {
        scale(add(self.min, self.max), 0.5)
    }

    pub fn extent(&self) -> Vec3 {
        sub(self.max, self.min)
    }

    pub fn max_extent(&self) -> f64 {
        let e = self.extent();
        e[0].max(e[1]).max(e[2])
    }
}

/// Quad mesh with per-face edge adjacency.
///
/// Faces store corners in cyclic order `[v1, v2, v4, v3]`; edge `k` runs from
/// corner `k` to corner `k + 1`, and `adjacency[f][k]` is the face across it.
/// Triangle half 0 is `(v1, v2, v3)`, half 1 is `(v2, v4, v3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 4]>,
    adjacency: Vec<[u32; 4]>,
    bbox: Aabb,
}

impl QuadMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 4]>) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no vertices or faces".into()));
        }
        for (fi, f) in faces.iter().enumerate() {
            for (i, &v) in f.iter().enumerate() {
                if v as usize >= vertices.len() {
                    return Err(Error::InvalidMesh(format!("face {} references vertex {}", fi, v)));
                }
                if f[..i].contains(&v) {
                    return Err(Error::InvalidMesh(format!("face {} repeats vertex {}", fi, v)));
                }
            }
        }
        let adjacency = build_adjacency(&faces)?;
        let bbox = Aabb::of_points(&vertices);
        Ok(Self {
            vertices,
            faces,
            adjacency,
            bbox,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 4]] {
        &self.faces
    }

    pub fn adjacency(&self) -> &[[u32; 4]] {
        &self.adjacency
    }

    pub fn bbox(&self) -> Aabb {
        self.bbox
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn neighbors(&self, f: usize) -> [Option<usize>; 4] {
        self.adjacency[f].map(|n| (n != BOUNDARY).then_some(n as usize))
    }

    /// Vertex indices of one triangle half.
    pub fn triangle(&self, f: usize, half: u8) -> [u32; 3] {
        let c = self.faces[f];
        if half == 0 {
            [c[0], c[1], c[3]]
        } else {
            [c[1], c[2], c[3]]
        }
    }

    pub fn corner_positions(&self, f: usize) -> [Vec3; 4] {
        self.faces[f].map(|v| self.vertices[v as usize])
    }

    /// Faces incident to each vertex, in face order.
    pub fn vertex_faces(&self) -> Vec<Vec<u32>> {
        let mut inc = vec![Vec::new(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                inc[v as usize].push(fi as u32);
            }
        }
        inc
    }

    pub fn n_edges(&self) -> usize {
        let boundary: usize = self
            .adjacency
            .iter()
            .map(|a| a.iter().filter(|&&n| n == BOUNDARY).count())
            .sum();
        (4 * self.faces.len() + boundary) / 2
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.n_edges() as i64 + self.faces.len() as i64
    }

    pub fn is_closed(&self) -> bool {
        self.adjacency.iter().all(|a| a.iter().all(|&n| n != BOUNDARY))
    }

    /// Copy with every vertex mapped through `f`.
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        let vertices: Vec<Vec3> = self.vertices.iter().map(|&v| f(v)).collect();
        let bbox = Aabb::of_points(&vertices);
        Self {
            vertices,
            faces: self.faces.clone(),
            adjacency: self.adjacency.clone(),
            bbox,
        }
    }

    /// Signed volume (positive for outward-facing closed meshes).
    pub fn signed_volume(&self) -> f64 {
        let mut vol = 0.0;
        for f in 0..self.faces.len() {
            for half in 0..2 {
                let [a, b, c] = self.triangle(f, half).map(|v| self.vertices[v as usize]);
                vol += dot(a, cross(b, c)) / 6.0;
            }
        }
        vol
    }

    /// Make face orientations agree across shared edges; closed components
    /// end up with outward normals.
    pub fn orient_consistently(&mut self) -> Result<()> {
        let n = self.faces.len();
        let mut flipped = vec![false; n];
        let mut seen = vec![false; n];
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut component = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(f) = queue.pop_front() {
                let cf = oriented(self.faces[f], flipped[f]);
                for k in 0..4 {
                    let (a, b) = (cf[k], cf[(k + 1) % 4]);
                    let g = self.adjacency[f].iter().copied().find(|&g| {
                        g != BOUNDARY && {
                            let cg = self.faces[g as usize];
                            (0..4).any(|j| edge_key(cg[j], cg[(j + 1) % 4]) == edge_key(a, b))
                        }
                    });
                    let Some(g) = g else { continue };
                    let g = g as usize;
                    let cg = self.faces[g];
                    let same_dir = |flip: bool| {
                        let c = oriented(cg, flip);
                        (0..4).any(|j| c[j] == a && c[(j + 1) % 4] == b)
                    };
                    if seen[g] {
                        if same_dir(flipped[g]) {
                            return Err(Error::InvalidMesh("mesh is not orientable".into()));
                        }
                    } else {
                        seen[g] = true;
                        flipped[g] = same_dir(false);
                        component.push(g);
                        queue.push_back(g);
                    }
                }
            }
            let closed = component
                .iter()
                .all(|&f| self.adjacency[f].iter().all(|&x| x != BOUNDARY));
            if closed {
                let mut vol = 0.0;
                for &f in &component {
                    let c = oriented(self.faces[f], flipped[f]).map(|v| self.vertices[v as usize]);
                    vol += dot(c[0], cross(c[1], c[3])) + dot(c[1], cross(c[2], c[3]));
                }
                if vol < 0.0 {
                    for &f in &component {
                        flipped[f] = !flipped[f];
                    }
                }
            }
        }
        for (f, &fl) in flipped.iter().enumerate() {
            self.faces[f] = oriented(self.faces[f], fl);
        }
        self.adjacency = build_adjacency(&self.faces)?;
        Ok(())
    }
}

fn oriented(c: [u32; 4], flip: bool) -> [u32; 4] {
    if flip {
        [c[0], c[3], c[2], c[1]]
    } else {
        c
    }
}

fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn build_adjacency(faces: &[[u32; 4]]) -> Result<Vec<[u32; 4]>> {
    let mut edges: HashMap<(u32, u32), Vec<(u32, u8)>> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..4 {
            let key = edge_key(f[k], f[(k + 1) % 4]);
            let list = edges.entry(key).or_default();
            list.push((fi as u32, k as u8));
            if list.len() > 2 {
                return Err(Error::NonManifold(key.0, key.1));
            }
        }
    }
    let mut adj = vec![[BOUNDARY; 4]; faces.len()];
    for list in edges.values() {
        if let [(fa, ka), (fb, kb)] = list[..] {
            adj[fa as usize][ka as usize] = fb;
            adj[fb as usize][kb as usize] = fa;
        }
    }
    Ok(adj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shapes;

    #[test]
    fn cube_topology() {
        let m = shapes::unit_cube();
        assert_eq!(m.n_faces(), 6);
        assert!(m.is_closed());
        assert_eq!(m.euler_characteristic(), 2);
        for f in 0..6 {
            assert!(m.neighbors(f).iter().all(|n| n.is_some()));
        }
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn rejects_repeated_vertex() {
        let v = vec![[0.0; 3], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]];
        assert!(QuadMesh::new(v, vec![[0, 1, 2, 2]]).is_err());
    }

    #[test]
    fn non_manifold_edge() {
        let v = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, -1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
        ];
        let faces = vec![[0, 1, 2, 3], [1, 0, 5, 4], [0, 1, 7, 6]];
        assert!(matches!(QuadMesh::new(v, faces), Err(Error::NonManifold(0, 1))));
    }

    #[test]
    fn orientation_repair_flips_inconsistent_face() {
        let good = shapes::unit_cube();
        let mut faces = good.faces().to_vec();
        let c = faces[2];
        faces[2] = [c[0], c[3], c[2], c[1]];
        let mut m = QuadMesh::new(good.vertices().to_vec(), faces).unwrap();
        m.orient_consistently().unwrap();
        assert!(m.signed_volume() > 0.0);
        assert!((m.signed_volume() - 1.0).abs() < 1e-12);
    }
}
